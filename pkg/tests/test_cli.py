import json

import pytest

from maxplus import lattice as lt
from maxplus.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, SCHEMA, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_price_json(capsys):
    code, out, _ = run(capsys, "price", "--seed", "1", "--paths", "5000", "--steps", "100", "--deterministic")
    doc = json.loads(out)
    assert code == EXIT_OK
    assert doc["schema"] == SCHEMA and "timestamp" not in doc
    assert doc["closed_form"] == 0.25 and doc["boundary"] == 2.0
    assert doc["gamma_or_delta"]["value"] == 2.0


def test_price_is_reproducible(capsys):
    argv = ("price", "--seed", "9", "--paths", "2000", "--steps", "50", "--deterministic")
    _, a, _ = run(capsys, *argv)
    _, b, _ = run(capsys, *argv)
    assert a == b


def test_timestamp_present_by_default(capsys):
    _, out, _ = run(capsys, "boundary")
    assert "timestamp" in json.loads(out)


def test_missing_seed_is_config_error(capsys):
    code, _, err = run(capsys, "price", "--paths", "100")
    assert code == EXIT_CONFIG and "seed" in err


def test_bad_seed_and_unknown_command(capsys):
    assert run(capsys, "price", "--seed", "-3")[0] == EXIT_CONFIG
    assert run(capsys, "frobnicate")[0] == EXIT_CONFIG


def test_boundary_additive_and_killed(capsys):
    _, out, _ = run(capsys, "boundary", "--set", "model.kind=additive", "--set", "model.mu=0.5", "--deterministic")
    doc = json.loads(out)
    assert doc["kind"] == "additive" and doc["boundary"] == 2.0
    _, out, _ = run(capsys, "boundary", "--set", "horizon.kind=exponential", "--set", "horizon.beta=1.5", "--deterministic")
    doc = json.loads(out)
    assert doc["gamma_or_delta"] == {"name": "delta", "value": 3.0}
    assert doc["boundary"] == pytest.approx(1.5)


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[model]\nkind = "gbm"\nr = 0.5\nsigma = 1.0\n[price]\nm = 2.0\n[mc]\nseed = 5\npaths = 2000\nsteps = 50\n')
    code, out, _ = run(capsys, "price", "--config", str(cfg), "--deterministic")
    doc = json.loads(out)
    assert code == EXIT_OK and doc["m"] == 2.0 and doc["boundary"] == 4.0


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[model\n")
    assert run(capsys, "boundary", "--config", str(cfg))[0] == EXIT_CONFIG
    assert run(capsys, "boundary", "--config", str(tmp_path / "missing.toml"))[0] == EXIT_CONFIG
    assert run(capsys, "boundary", "--set", "model.sigma=0")[0] == EXIT_CONFIG


def test_simulate_csv(tmp_path, capsys):
    out = tmp_path / "paths.csv"
    code, _, _ = run(capsys, "simulate", "--seed", "1", "--paths", "2", "--steps", "5", "--format", "csv", "--out", str(out))
    lines = out.read_text().strip().splitlines()
    assert code == EXIT_OK
    assert lines[0] == "path,time,value,running_sup"
    assert len(lines) > 1


def test_tree_verify_builtin(capsys):
    code, out, _ = run(capsys, "tree-verify", "--deterministic")
    doc = json.loads(out)
    assert code == EXIT_OK and doc["passed"]


def test_tree_verify_file(tmp_path, capsys):
    lat = lt.Lattice(
        [[1.0], [0.5, 2.0]], [[0, 2]], [[0, 1]], [[2 / 3, 1 / 3]], "tree"
    )
    f = tmp_path / "tree.json"
    f.write_text(json.dumps(lat.to_json()))
    code, out, _ = run(capsys, "tree-verify", "--set", f"lattice.file={f}", "--deterministic")
    assert code == EXIT_OK
    assert "0.5" in out
    doc = lat.to_json()
    doc["nodes"][0]["transitions"][0]["p"] = 0.9
    f.write_text(json.dumps(doc))
    assert run(capsys, "tree-verify", "--set", f"lattice.file={f}")[0] == EXIT_CONFIG


def test_convex_order_both_directions(capsys):
    argv = ("convex-order", "--seed", "2", "--paths", "5000", "--steps", "100", "--deterministic")
    code, out, _ = run(capsys, *argv)
    assert code == EXIT_OK and json.loads(out)["verdict"] == "dominated"
    code, out, _ = run(capsys, *argv, "--swap")
    assert code == EXIT_FAIL and json.loads(out)["verdict"] == "violated"


def test_azema_yor(capsys):
    code, out, _ = run(capsys, "azema-yor", "--family", "power:0.5", "--seed", "3", "--paths", "4000", "--steps", "100", "--deterministic")
    doc = json.loads(out)
    assert code == EXIT_OK and doc["passed"] and doc["family_consistency"] <= 1e-12
    assert run(capsys, "azema-yor", "--family", "power:1.5", "--seed", "3")[0] == EXIT_CONFIG
    assert run(capsys, "azema-yor", "--seed", "3")[0] == EXIT_CONFIG
