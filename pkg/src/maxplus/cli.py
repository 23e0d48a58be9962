"""Command-line front door: ``maxplus <subcommand> [flags]``.

Exit codes: 0 success, 1 a check or agreement failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from datetime import datetime, timezone

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import azema_yor as ay
from . import closedform as cf
from . import convexorder as cx
from . import lattice as lt
from .model import (
    DriftedBmSpec,
    ExponentialJump,
    ExponentialKill,
    FixedSteps,
    GbmSpec,
    Infinite,
    LevySpec,
    ModelError,
    PointMassJump,
    delta_of,
    gamma_bm,
    gamma_levy_root,
    gamma_of,
)
from .rng import RngPolicy
from .simulate import (
    augment_tail,
    bridge_sup_correct,
    simulate_drifted_bm,
    simulate_gbm,
    simulate_killed_gbm,
    simulate_levy,
)
from .stopping import boundary_spec, price_report

SCHEMA = "maxplus/1"

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


# configuration


def _parse_scalar(text: str):
    low = text.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text.strip().strip('"')


def load_config(args) -> dict:
    cfg: dict = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                cfg = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        node = cfg
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_scalar(val)
    mc = cfg.setdefault("mc", {})
    if args.seed is not None:
        mc["seed"] = args.seed
    if args.paths is not None:
        mc["paths"] = args.paths
    if args.steps is not None:
        mc["steps"] = args.steps
    return cfg


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _num(sec: dict, key: str, default=None, name: str = "") -> float:
    if key not in sec:
        if default is None:
            raise ConfigError(f"missing {name + '.' if name else ''}{key}")
        return default
    try:
        return float(sec[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a number, got {sec[key]!r}") from None


def _seed(cfg: dict) -> RngPolicy:
    mc = _section(cfg, "mc")
    if "seed" not in mc:
        raise ConfigError("a seed is required for stochastic subcommands (--seed or mc.seed)")
    try:
        return RngPolicy(int(mc["seed"]))
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {mc['seed']!r}") from None


def _mc(cfg: dict, paths: int, steps: int) -> tuple[int, int]:
    mc = _section(cfg, "mc")
    p, s = int(mc.get("paths", paths)), int(mc.get("steps", steps))
    if p < 2 or s < 1:
        raise ConfigError("mc.paths must be >= 2 and mc.steps >= 1")
    return p, s


def _jump(rec: dict):
    kind = str(rec.get("kind", "exponential")).lower()
    if kind == "exponential":
        return ExponentialJump(_num(rec, "rate", name="jump"), _num(rec, "theta", name="jump"))
    if kind == "point":
        return PointMassJump(_num(rec, "rate", name="jump"), _num(rec, "y", name="jump"))
    raise ConfigError(f"unknown jump kind {kind!r}")


def build_model(cfg: dict):
    sec = _section(cfg, "model")
    kind = str(sec.get("kind", "gbm")).lower()
    if kind == "gbm":
        return GbmSpec(_num(sec, "r", 0.5), _num(sec, "sigma", 1.0), _num(sec, "x0", 1.0))
    if kind in ("additive", "bm", "drifted_bm"):
        return DriftedBmSpec(_num(sec, "mu", 0.5), _num(sec, "sigma", 1.0), _num(sec, "z0", 0.0))
    if kind == "levy":
        jumps = tuple(_jump(j) for j in sec.get("jumps", []))
        r, sigma, x0 = _num(sec, "r", 0.5), _num(sec, "sigma", 1.0), _num(sec, "x0", 1.0)
        if "a" in sec:
            return LevySpec(_num(sec, "a"), sigma, jumps, r, x0)
        return LevySpec.martingale(sigma, jumps, r, x0)
    raise ConfigError(f"unknown model kind {kind!r}; expected gbm, additive or levy")


def build_horizon(cfg: dict):
    sec = _section(cfg, "horizon")
    kind = str(sec.get("kind", "infinite")).lower()
    if kind == "infinite":
        return Infinite()
    if kind in ("killed", "exponential"):
        return ExponentialKill(_num(sec, "beta", name="horizon"))
    if kind == "fixed":
        return FixedSteps(_num(sec, "T", name="horizon"), int(_num(sec, "n", 400)))
    raise ConfigError(f"unknown horizon kind {kind!r}")


def _exponent(spec, horizon) -> tuple[str, float]:
    if isinstance(spec, GbmSpec):
        if isinstance(horizon, ExponentialKill):
            return "delta", delta_of(spec, horizon.beta)
        return "gamma", gamma_of(spec)
    if isinstance(spec, DriftedBmSpec):
        return "gamma", gamma_bm(spec)
    return "gamma_levy", gamma_levy_root(spec)


# output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _flat_rows(report: dict, prefix: str = "") -> list[tuple[str, object]]:
    rows = []
    for k, v in report.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            rows.extend(_flat_rows(v, key + "."))
        elif isinstance(v, list):
            rows.append((key, json.dumps(v)))
        else:
            rows.append((key, v))
    return rows


def emit(args, command: str, report: dict, csv_table: tuple[list[str], list] | None = None) -> None:
    doc = {"schema": SCHEMA, "command": command}
    if not args.deterministic:
        doc["timestamp"] = datetime.now(timezone.utc).isoformat()
    doc.update(report)
    doc = _jsonable(doc)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if csv_table is not None:
            header, rows = csv_table
            w.writerow(header)
            w.writerows(rows)
        else:
            w.writerow(["key", "value"])
            w.writerows(_flat_rows(doc))
        text = buf.getvalue()
    else:
        text = json.dumps(doc, indent=2, sort_keys=False) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# subcommands


def cmd_price(args, cfg) -> int:
    spec = build_model(cfg)
    horizon = build_horizon(cfg)
    rng = _seed(cfg)
    n_paths, n_steps = _mc(cfg, 20000, 400)
    m = _num(_section(cfg, "price"), "m", 1.0)
    rep = price_report(spec, m, n_paths, rng, horizon, n_steps)
    bs = boundary_spec(spec, horizon)
    name, e = _exponent(spec, horizon)
    rep["boundary"] = cf.exercise_boundary(m, bs)
    rep["gamma_or_delta"] = {"name": name, "value": e}
    emit(args, "price", rep)
    return EXIT_OK if rep["agree"] else EXIT_FAIL


def cmd_boundary(args, cfg) -> int:
    spec = build_model(cfg)
    horizon = build_horizon(cfg)
    m = _num(_section(cfg, "price"), "m", 1.0)
    bs = boundary_spec(spec, horizon)
    name, e = _exponent(spec, horizon)
    emit(
        args,
        "boundary",
        {
            "m": m,
            "kind": bs.kind,
            "mean_sup_constant": bs.constant,
            "index_constant": bs.index_constant,
            "boundary": cf.exercise_boundary(m, bs),
            "gamma_or_delta": {"name": name, "value": e},
        },
    )
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    spec = build_model(cfg)
    horizon = build_horizon(cfg)
    rng = _seed(cfg)
    n_paths, n_steps = _mc(cfg, 10, 400)
    mc = _section(cfg, "mc")
    T = float(mc.get("T", horizon.T if isinstance(horizon, FixedSteps) else 10.0))
    paths = []
    for i in range(n_paths):
        if isinstance(horizon, ExponentialKill):
            if not isinstance(spec, GbmSpec):
                raise ConfigError("killed simulation is implemented for GBM only")
            p = simulate_killed_gbm(spec, horizon.beta, n_steps, rng, i)
        elif isinstance(spec, GbmSpec):
            p = simulate_gbm(spec, T, n_steps, rng, i)
        elif isinstance(spec, DriftedBmSpec):
            p = simulate_drifted_bm(spec, T, n_steps, rng, i)
        else:
            p = simulate_levy(spec, T, n_steps, rng, i)
        p = bridge_sup_correct(p, spec, rng)
        if isinstance(horizon, Infinite):
            p = augment_tail(p, spec, rng)
        paths.append(p)
    rows = [(p.path_index, t, v, s) for p in paths for t, v, s in p.to_csv_rows()]
    summary = {
        "model": type(spec).__name__,
        "paths": n_paths,
        "steps": n_steps,
        "sup_mode": paths[0].sup_mode,
        "total_sup": [p.total_sup for p in paths],
        "terminal": [float(p.values[-1]) for p in paths],
    }
    emit(args, "simulate", summary, (["path", "time", "value", "running_sup"], rows))
    return EXIT_OK


def _load_lattice(cfg: dict) -> lt.Lattice:
    sec = _section(cfg, "lattice")
    if "file" in sec:
        try:
            with open(sec["file"], encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read lattice {sec['file']}: {exc}") from None
        return lt.from_json(doc)
    model = _section(cfg, "model")
    spec = GbmSpec(
        _num(model, "r", lt.BUILTIN_SPEC.r), _num(model, "sigma", lt.BUILTIN_SPEC.sigma), _num(model, "x0", lt.BUILTIN_SPEC.x0)
    )
    return lt.build_binomial(spec, _num(sec, "T", lt.BUILTIN_T), int(_num(sec, "N", lt.BUILTIN_N)), str(sec.get("mode", "recombining")))


def cmd_tree_verify(args, cfg) -> int:
    lat = _load_lattice(cfg)
    sec = _section(cfg, "lattice")
    dec = lt.decompose(lat)
    ver = lt.verify_decomposition(lat, dec)
    der = lt.derivative_check(lat, dec)
    z0 = float(lat.z[0][0])
    strikes = sec.get("m", [z0])
    strikes = [float(s) for s in (strikes if isinstance(strikes, list) else [strikes])]
    failures = [c.name for c in ver.checks if not c.passed]
    if not der.passed:
        failures.append("derivative")
    times = []
    for m in strikes:
        ot = lt.optimal_times(lat, dec, m)
        times.append({"m": m, "value_T": ot.value_T, "value_That": ot.value_That, "absorption": ot.absorption, "root_value": ot.root_value, "passed": ot.passed})
        if not ot.passed:
            failures.append(f"optimal_times(m={m})")
    report = {
        "N": lat.N,
        "mode": lat.mode,
        "L0": float(dec.L[0][0]),
        "Mplus0": float(dec.Mplus[0][0]),
        "verification": ver.to_json(),
        "derivative": {"residual": der.residual, "tol": der.tol, "probes": int(der.probes.size), "passed": der.passed},
        "optimal_times": times,
    }
    try:
        co = lt.convex_order_exact(lat, dec)
        report["convex_order"] = {
            "dominated": co.dominated,
            "strict_somewhere": co.strict_somewhere,
            "var_mplus": co.var_mplus,
            "var_ma": co.var_ma,
        }
        if not (co.dominated and co.variance_ordered):
            failures.append("convex_order")
    except lt.LatticeError as exc:
        report["convex_order"] = {"error": str(exc)}
        failures.append("convex_order")
    if lat.rate is not None and lat.dt is not None and all(np.all(v > 0) for v in lat.z):
        dual = [lt.duality_tree(lat, m, dec.f) for m in strikes if m > 0]
        report["duality"] = [{"m": d.m, "call": d.call, "scaled_put": d.scaled_put, "gap": d.gap, "passed": d.passed} for d in dual]
        failures += [f"duality(m={d.m})" for d in dual if not d.passed]
    if lat.y is not None:
        sy = lt.snell_Y(lat)
        report["snell_Y"] = {"price_residual": sy.price_residual, "sup_residual": sy.sup_residual, "passed": sy.passed}
        if not sy.passed:
            failures.append("snell_Y")
    report["failures"] = failures
    report["passed"] = not failures
    emit(args, "tree-verify", report)
    if failures:
        print(f"failed: {', '.join(failures)}", file=sys.stderr)
    return EXIT_OK if not failures else EXIT_FAIL


def cmd_convex_order(args, cfg) -> int:
    spec = build_model(cfg)
    if not isinstance(spec, GbmSpec):
        raise ConfigError("convex-order compares GBM martingales")
    rng = _seed(cfg)
    n_paths, n_steps = _mc(cfg, 20000, 400)
    sec = _section(cfg, "convex_order")
    T = _num(sec, "T", 5.0)
    mplus, ma = cx.terminal_samples(spec, T, n_steps, n_paths, rng)
    swap = bool(args.swap or sec.get("swap", False))
    x, y = (ma, mplus) if swap else (mplus, ma)
    rep = cx.cx_compare(x, y, int(sec.get("grid", 50)), paired=True)
    out = rep.to_json()
    out["swapped"] = swap
    emit(args, "convex-order", out, (["m", "gap", "se"], rep.csv_rows()))
    return EXIT_OK if rep.verdict == cx.DOMINATED else EXIT_FAIL


def _family_consistency(u: ay.ConcaveFn) -> float:
    """Grid residual against the closed form the family reproduces."""
    zs = np.linspace(0.2, 3.0, 100)
    grid = [(z, s) for s in zs for z in zs if z <= s]
    kind = u.name.split(":")[0]
    if kind == "power" and u.params[0] < 1:
        g = 1.0 / u.params[0]
        return max(abs(ay.ay_martingale(u, z**g, s**g) - cf.phi_gbm(z, s, g)) for z, s in grid)
    if kind == "log":
        g = 1.0 / u.params[0]
        return max(abs(ay.ay_martingale(u, math.exp(g * z), math.exp(g * s)) - cf.phi_bm(z, s, g)) for z, s in grid)
    # affine and power:1 give M = u(N)
    return max(abs(ay.ay_martingale(u, z, s) - u(z)) for z, s in grid)


def cmd_azema_yor(args, cfg) -> int:
    sec = _section(cfg, "azema_yor")
    family = args.family or sec.get("family")
    if not family:
        raise ConfigError("azema-yor needs a family (--family or azema_yor.family)")
    try:
        u = ay.parse_family(str(family))
    except ay.FamilyError as exc:
        raise ConfigError(str(exc)) from None
    rng = _seed(cfg)
    n_paths, n_steps = _mc(cfg, 20000, 400)
    sigma = _num(sec, "sigma", 1.0)
    T = _num(sec, "T", 1.0)
    x0 = _num(sec, "x0", 1.0)
    spec = GbmSpec(0.0, sigma, x0)
    path_reports = [ay.ay_path_check(u, simulate_gbm(spec, T, n_steps, rng, i)) for i in range(min(20, n_paths))]
    est, m0 = ay.ay_ensemble(u, sigma, T, n_steps, n_paths, rng, x0)
    consistency = _family_consistency(u)
    ok = all(r.passed for r in path_reports) and ay.ay_ensemble_agrees(est, m0) and consistency <= 1e-12
    emit(
        args,
        "azema-yor",
        {
            "family": u.name,
            "pathwise_passed": all(r.passed for r in path_reports),
            "min_dominance": min(r.dominance for r in path_reports),
            "max_sup_identity": max(r.sup_identity for r in path_reports),
            "min_drawdown": min(r.drawdown for r in path_reports),
            "mean_MT": est.estimate,
            "se_MT": est.se,
            "M0": m0,
            "family_consistency": consistency,
            "passed": ok,
        },
    )
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "price": cmd_price,
    "boundary": cmd_boundary,
    "simulate": cmd_simulate,
    "tree-verify": cmd_tree_verify,
    "convex-order": cmd_convex_order,
    "azema-yor": cmd_azema_yor,
}


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=_u64)
    common.add_argument("--paths", type=int)
    common.add_argument("--steps", type=int)
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--deterministic", action="store_true", help="omit the timestamp field")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. model.r=0.5")
    parser = argparse.ArgumentParser(prog="maxplus", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "convex-order":
            p.add_argument("--swap", action="store_true", help="test the reverse direction")
        if name == "azema-yor":
            p.add_argument("--family", help="power:p, log:c or affine:a,b")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ModelError, lt.LatticeError, ay.FamilyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
