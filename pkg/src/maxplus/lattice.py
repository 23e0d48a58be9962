"""Exact Max-Plus decomposition on finite trees.

Every node carries the Snell envelope of ``Z v m`` as a piecewise-linear
convex function of the strike. The index ``L`` is read off where that
function leaves its flat level, and the path-dependent quantities
(running index, Max-Plus martingale, Doob-Meyer and multiplicative pairs) are
computed on the tree of path prefixes. Every identity is then re-checked by a
route that does not reuse the quantity it checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .model import GbmSpec, ModelError
from .pl import PLConvex, clamp_left, combine, floor_at, max_abs_diff, vee

PROB_TOL = 1e-12
SNAP_RTOL = 1e-12
CHECK_RTOL = 1e-10
MAX_PREFIXES = 4_000_000
MAX_TREE_STEPS = 20


class LatticeError(ValueError):
    pass


@dataclass
class Lattice:
    """Finite filtration as a layered graph.

    Step ``k`` has ``len(z[k])`` nodes; the children of node ``j`` are
    ``child[k][ptr[k][j]:ptr[k][j+1]]`` with probabilities taken from ``prob[k]``
    at the same positions.
    """

    z: list
    ptr: list
    child: list
    prob: list
    mode: str = "general"
    rate: float | None = None
    dt: float | None = None
    y: list | None = None

    def __post_init__(self):
        self.z = [np.asarray(v, dtype=float) for v in self.z]
        self.ptr = [np.asarray(v, dtype=np.int64) for v in self.ptr]
        self.child = [np.asarray(v, dtype=np.int64) for v in self.child]
        self.prob = [np.asarray(v, dtype=float) for v in self.prob]
        if self.y is not None:
            self.y = [np.asarray(v, dtype=float) for v in self.y]
        self.validate()

    @property
    def N(self) -> int:
        return len(self.z) - 1

    def validate(self) -> None:
        N = self.N
        if N < 1:
            raise LatticeError("a lattice needs at least one step")
        if self.z[0].size != 1:
            raise LatticeError("step 0 must hold a single root node")
        if not (len(self.ptr) == len(self.child) == len(self.prob) == N):
            raise LatticeError("transition arrays must have one entry per step")
        for k in range(N + 1):
            if not np.all(np.isfinite(self.z[k])):
                raise LatticeError(f"non-finite Z at step {k}")
            if self.y is not None and not np.all(np.isfinite(self.y[k])):
                raise LatticeError(f"non-finite Y at step {k}")
        for k in range(N):
            ptr, ch, p = self.ptr[k], self.child[k], self.prob[k]
            if ptr.size != self.z[k].size + 1 or ptr[0] != 0 or ptr[-1] != ch.size or p.size != ch.size:
                raise LatticeError(f"malformed transition table at step {k}")
            if np.any(np.diff(ptr) < 1):
                raise LatticeError(f"every node at step {k} needs at least one successor")
            if np.any((ch < 0) | (ch >= self.z[k + 1].size)):
                raise LatticeError(f"successor id out of range at step {k}")
            if np.any((p <= 0) | (p > 1)):
                raise LatticeError(f"transition probabilities must lie in (0, 1] at step {k}")
            sums = np.add.reduceat(p, ptr[:-1])
            bad = np.abs(sums - 1.0) > PROB_TOL
            if np.any(bad):
                j = int(np.nonzero(bad)[0][0])
                raise LatticeError(f"probabilities at step {k}, node {j} sum to {float(sums[j])!r}")

    def children(self, k: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.ptr[k][j], self.ptr[k][j + 1]
        return self.child[k][a:b], self.prob[k][a:b]

    def expectation(self, k: int, next_values: np.ndarray) -> np.ndarray:
        """``E[V_{k+1} | node]`` for every node at step ``k``."""
        return np.add.reduceat(self.prob[k] * next_values[self.child[k]], self.ptr[k][:-1])

    def scale(self) -> float:
        return max(1.0, max(float(np.max(np.abs(v))) for v in self.z))

    def with_values(self, z) -> "Lattice":
        return replace(self, z=[np.asarray(v, dtype=float) for v in z])

    def to_json(self) -> dict:
        nodes = []
        for k in range(self.N + 1):
            for j, v in enumerate(self.z[k]):
                rec = {"t": k, "id": j, "z": float(v)}
                if self.y is not None:
                    rec["y"] = float(self.y[k][j])
                if k < self.N:
                    ids, ps = self.children(k, j)
                    rec["transitions"] = [{"to": int(c), "p": float(q)} for c, q in zip(ids, ps)]
                nodes.append(rec)
        doc = {"steps": self.N, "nodes": nodes}
        if self.rate is not None:
            doc["rate"] = self.rate
        if self.dt is not None:
            doc["dt"] = self.dt
        return doc


def from_json(doc: dict | str) -> Lattice:
    """Parse ``{steps, nodes: [{t, id, z, transitions: [{to, p}]}]}``.

    Node ids are local to their step. Optional: per-node ``y``, top-level
    ``rate`` and ``dt``.
    """
    if isinstance(doc, str):
        doc = json.loads(doc)
    try:
        N = int(doc["steps"])
        raw = doc["nodes"]
    except (KeyError, TypeError, ValueError) as exc:
        raise LatticeError(f"lattice document needs 'steps' and 'nodes': {exc}") from None
    per_step: list[list[dict]] = [[] for _ in range(N + 1)]
    for rec in raw:
        t = int(rec["t"])
        if not 0 <= t <= N:
            raise LatticeError(f"node time {t} outside [0, {N}]")
        per_step[t].append(rec)
    index = [{rec["id"]: j for j, rec in enumerate(step)} for step in per_step]
    for k, step in enumerate(per_step):
        if len(index[k]) != len(step):
            raise LatticeError(f"duplicate node id at step {k}")
    z = [np.array([float(rec["z"]) for rec in step]) for step in per_step]
    has_y = all("y" in rec for rec in raw) and raw
    y = [np.array([float(rec["y"]) for rec in step]) for step in per_step] if has_y else None
    ptr, child, prob = [], [], []
    parents = [np.zeros(len(s), dtype=int) for s in per_step]
    for k in range(N):
        p_k, c_k, q_k = [0], [], []
        for rec in per_step[k]:
            trans = rec.get("transitions") or []
            for tr in trans:
                try:
                    c = index[k + 1][tr["to"]]
                except KeyError:
                    raise LatticeError(f"transition to unknown node {tr['to']!r} at step {k + 1}") from None
                c_k.append(c)
                q_k.append(float(tr["p"]))
                parents[k + 1][c] += 1
            p_k.append(len(c_k))
        ptr.append(np.array(p_k))
        child.append(np.array(c_k, dtype=int))
        prob.append(np.array(q_k))
    mode = "tree" if all(np.all(p == 1) for p in parents[1:]) else "recombining"
    return Lattice(z, ptr, child, prob, mode, doc.get("rate"), doc.get("dt"), y)


# builders


def build_binomial(spec: GbmSpec, T: float, N: int, mode: str = "recombining") -> Lattice:
    """Discounted CRR tree: ``E[Z_{k+1} | F_k] = e^{-r dt} Z_k``."""
    if N < 1:
        raise LatticeError(f"N must be >= 1, got {N}")
    dt = T / N
    a = spec.sigma * math.sqrt(dt)
    u, d = math.exp(a), math.exp(-a)
    p = (math.exp(-spec.r * dt) - d) / (u - d)
    if not 0 < p < 1:
        raise LatticeError(f"up probability {p} outside (0, 1); use more steps")
    probs = np.array([1.0 - p, p])

    def level(ups, k):
        return spec.x0 * np.exp(a * (2.0 * ups - k))

    if mode == "recombining":
        z = [level(np.arange(k + 1), k) for k in range(N + 1)]
        ptr = [np.arange(0, 2 * (k + 1) + 1, 2) for k in range(N)]
        child = [np.stack([np.arange(k + 1), np.arange(k + 1) + 1], axis=1).ravel() for k in range(N)]
    elif mode == "tree":
        if N > MAX_TREE_STEPS:
            raise LatticeError(f"full tree mode supports N <= {MAX_TREE_STEPS}")
        z = [level(popcount(np.arange(2**k)), k) for k in range(N + 1)]
        ptr = [np.arange(0, 2 * 2**k + 1, 2) for k in range(N)]
        child = [np.arange(2 ** (k + 1)) for k in range(N)]
    else:
        raise LatticeError(f"unknown mode {mode!r}")
    prob = [np.tile(probs, z[k].size) for k in range(N)]
    return Lattice(z, ptr, child, prob, mode, spec.r, dt)


def popcount(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    out = np.zeros_like(a)
    while np.any(a):
        out += a & 1
        a = a >> 1
    return out


BUILTIN_SPEC = GbmSpec(r=0.5, sigma=1.0, x0=1.0)
BUILTIN_T = 3.0
BUILTIN_N = 12


def builtin_tree(mode: str = "recombining", N: int = BUILTIN_N, T: float = BUILTIN_T) -> Lattice:
    return build_binomial(BUILTIN_SPEC, T, N, mode)


def deterministic(values) -> Lattice:
    """Single-path lattice carrying a deterministic sequence."""
    v = [np.array([float(x)]) for x in values]
    N = len(v) - 1
    return Lattice(v, [np.array([0, 1])] * N, [np.array([0])] * N, [np.array([1.0])] * N, "tree")


# Snell envelopes in the strike


def snell_pl(lat: Lattice, values=None) -> list[list[PLConvex]]:
    """``f_k(m) = max(Z_k v m, E[f_{k+1}(m) | F_k])`` with ``f_N = Z_N v m``."""
    z = lat.z if values is None else [np.asarray(v, dtype=float) for v in values]
    atol = SNAP_RTOL * max(1.0, max(float(np.max(np.abs(v))) for v in z))
    N = lat.N
    f = [None] * (N + 1)
    f[N] = [vee(v) for v in z[N]]
    for k in range(N - 1, -1, -1):
        row = []
        for j in range(z[k].size):
            ids, ps = lat.children(k, j)
            cont = combine([f[k + 1][c] for c in ids], ps)
            # cont(m) >= m, so max(z v m, cont) = max(z, cont)
            row.append(floor_at(cont, float(z[k][j]), atol))
        f[k] = row
    return f


def index_from_pl(f: PLConvex, z: float, atol: float = 0.0) -> float:
    """Largest strike at which the envelope still equals ``z``."""
    if f.anchor > z + atol:
        return -math.inf
    if f.anchor < z - atol:
        raise LatticeError(f"envelope anchor {f.anchor!r} below the node value {z!r}")
    return f.first_breakpoint


def node_index(lat: Lattice, f, values=None) -> list[np.ndarray]:
    z = lat.z if values is None else values
    return [np.array([index_from_pl(fj, float(zj)) for fj, zj in zip(f[k], z[k])]) for k in range(lat.N + 1)]


# path prefixes


@dataclass
class PrefixTree:
    """One entry per path prefix; children of prefix ``i`` at step ``k`` are
    the contiguous block ``ptr[k][i]:ptr[k][i+1]`` at step ``k+1``."""

    node: list
    parent: list
    tprob: list
    pathprob: list
    ptr: list

    @property
    def N(self) -> int:
        return len(self.node) - 1

    def expectation(self, k: int, next_values: np.ndarray) -> np.ndarray:
        return np.add.reduceat(self.tprob[k + 1] * next_values, self.ptr[k][:-1])

    def paths(self) -> np.ndarray:
        """Node ids along every full path, shape ``(leaves, N+1)``."""
        N = self.N
        out = np.empty((self.node[N].size, N + 1), dtype=np.int64)
        cur = np.arange(self.node[N].size)
        for k in range(N, -1, -1):
            out[:, k] = self.node[k][cur]
            if k:
                cur = self.parent[k][cur]
        return out


def expand_prefixes(lat: Lattice, limit: int = MAX_PREFIXES) -> PrefixTree:
    node = [np.array([0])]
    parent = [np.array([-1])]
    tprob = [np.array([1.0])]
    pathprob = [np.array([1.0])]
    ptrs = []
    for k in range(lat.N):
        cur = node[k]
        starts = lat.ptr[k][cur]
        cnt = lat.ptr[k][cur + 1] - starts
        total = int(cnt.sum())
        if total > limit:
            raise LatticeError(f"{total} prefixes at step {k + 1} exceed the limit {limit}")
        par = np.repeat(np.arange(cur.size), cnt)
        offs = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        edge = np.repeat(starts, cnt) + offs
        node.append(lat.child[k][edge])
        parent.append(par)
        tprob.append(lat.prob[k][edge])
        pathprob.append(pathprob[k][par] * lat.prob[k][edge])
        ptrs.append(np.concatenate([[0], np.cumsum(cnt)]))
    return PrefixTree(node, parent, tprob, pathprob, ptrs)


# decomposition


@dataclass
class NodeDecomposition:
    f: list
    L: list
    prefix: PrefixTree
    Lstar: list
    Mplus: list
    A: list
    MA: list
    B: list | None
    MP: list | None
    Mplus_state: list = field(default_factory=list)


def running_index(prefix: PrefixTree, L: list) -> list[np.ndarray]:
    Lstar = [L[0][prefix.node[0]]]
    for k in range(1, prefix.N + 1):
        Lstar.append(np.maximum(Lstar[k - 1][prefix.parent[k]], L[k][prefix.node[k]]))
    return Lstar


def mplus_from_index(lat: Lattice, prefix: PrefixTree, L: list) -> list[np.ndarray]:
    """``E[L*_{0,N} v Z_N | prefix]`` by backward summation over prefixes."""
    Lstar = running_index(prefix, L)
    N = lat.N
    M = [None] * (N + 1)
    M[N] = np.maximum(Lstar[N], lat.z[N][prefix.node[N]])
    for k in range(N - 1, -1, -1):
        M[k] = prefix.expectation(k, M[k + 1])
    return M


def mplus_augmented(lat: Lattice, prefix: PrefixTree, L: list) -> list[np.ndarray]:
    """Same martingale through the Markov chain on ``(node, running index)``.

    The running index only takes values in the finite set of node indices, so
    the augmented chain is exact and needs no rounding of keys.
    """
    N = lat.N

    @lru_cache(maxsize=None)
    def value(k: int, j: int, lstar: float) -> float:
        if k == N:
            return max(lstar, float(lat.z[N][j]))
        ids, ps = lat.children(k, j)
        return float(sum(p * value(k + 1, int(c), max(lstar, float(L[k + 1][c]))) for c, p in zip(ids, ps)))

    Lstar = running_index(prefix, L)
    out = []
    for k in range(N + 1):
        out.append(np.array([value(k, int(j), float(s)) for j, s in zip(prefix.node[k], Lstar[k])]))
    return out


def decompose(lat: Lattice, f=None, augmented: bool = True) -> NodeDecomposition:
    if f is None:
        f = snell_pl(lat)
    L = node_index(lat, f)
    prefix = expand_prefixes(lat)
    Lstar = running_index(prefix, L)
    Mplus = mplus_from_index(lat, prefix, L)
    N = lat.N
    zp = [lat.z[k][prefix.node[k]] for k in range(N + 1)]
    ez = [lat.expectation(k, lat.z[k + 1]) for k in range(N)]
    A = [np.zeros(1)]
    for k in range(N):
        drop = (lat.z[k] - ez[k])[prefix.node[k]]
        A.append((A[k] + drop)[prefix.parent[k + 1]])
    MA = [zp[k] + A[k] for k in range(N + 1)]
    B = MP = None
    if all(np.all(v > 0) for v in lat.z):
        B = [np.ones(1)]
        for k in range(N):
            ratio = (lat.z[k] / ez[k])[prefix.node[k]]
            B.append((B[k] * ratio)[prefix.parent[k + 1]])
        MP = [zp[k] * B[k] for k in range(N + 1)]
    Ms = mplus_augmented(lat, prefix, L) if augmented else []
    return NodeDecomposition(f, L, prefix, Lstar, Mplus, A, MA, B, MP, Ms)


# verification


@dataclass
class Check:
    name: str
    residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tol)


@dataclass
class VerificationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "residual": c.residual, "tol": c.tol, "passed": c.passed} for c in self.checks
            ],
        }


PRIMARY_CHECKS = ("identity", "dominance", "flat_off", "martingale", "terminal", "index_below_terminal")


def _max0(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.max(a)) if a.size else 0.0


def future_index_envelopes(lat: Lattice, L: list) -> list[list[PLConvex]]:
    """``h_k(l) = E[l v L*_{k,N} v Z_N | node]`` built from ``L`` alone."""
    N = lat.N
    h = [None] * (N + 1)
    h[N] = [vee(max(float(l), float(z))) for l, z in zip(L[N], lat.z[N])]
    for k in range(N - 1, -1, -1):
        row = []
        for j in range(lat.z[k].size):
            ids, ps = lat.children(k, j)
            row.append(clamp_left(combine([h[k + 1][c] for c in ids], ps), float(L[k][j])))
        h[k] = row
    return h


def verify_decomposition(lat: Lattice, dec: NodeDecomposition, rtol: float = CHECK_RTOL) -> VerificationReport:
    N = lat.N
    tol = rtol * lat.scale()
    P = dec.prefix
    zp = [lat.z[k][P.node[k]] for k in range(N + 1)]

    h = future_index_envelopes(lat, dec.L)
    ident = max(abs(h[k][j].anchor - lat.z[k][j]) for k in range(N + 1) for j in range(lat.z[k].size))
    same_fn = max(max_abs_diff(h[k][j], dec.f[k][j]) for k in range(N + 1) for j in range(lat.z[k].size))

    dom = max(_max0(np.maximum(zp[k], dec.Lstar[k]) - dec.Mplus[k]) for k in range(N + 1))
    dom = max(dom, 0.0)

    flat = 0.0
    for k in range(N + 1):
        Lk = dec.L[k][P.node[k]]
        at_max = np.isfinite(Lk) & (Lk == dec.Lstar[k])
        if np.any(at_max):
            flat = max(flat, float(np.max(np.abs(dec.Mplus[k][at_max] - zp[k][at_max]))))

    mart = max(_max0(np.abs(dec.Mplus[k] - P.expectation(k, dec.Mplus[k + 1]))) for k in range(N))
    term = _max0(np.abs(dec.Mplus[N] - np.maximum(dec.Lstar[N], zp[N])))
    below = max(0.0, _max0(dec.L[N] - lat.z[N]))

    checks = [
        Check("identity", ident, tol),
        Check("dominance", dom, tol),
        Check("flat_off", flat, tol),
        Check("martingale", mart, tol),
        Check("terminal", term, tol),
        Check("index_below_terminal", below, tol),
        Check("strike_function_identity", same_fn, tol),
        Check("compensator_monotone", max(0.0, max(_max0(dec.A[k][P.parent[k + 1]] - dec.A[k + 1]) for k in range(N))), tol),
        Check("doob_meyer_martingale", max(_max0(np.abs(dec.MA[k] - P.expectation(k, dec.MA[k + 1]))) for k in range(N)), tol),
    ]
    if dec.B is not None:
        b_mono = max(0.0, max(_max0(dec.B[k][P.parent[k + 1]] - dec.B[k + 1]) for k in range(N)))
        b_mono = max(b_mono, max(0.0, 1.0 - min(float(np.min(b)) for b in dec.B)))
        checks.append(Check("multiplicative_monotone", b_mono, tol))
        checks.append(
            Check(
                "multiplicative_martingale",
                max(_max0(np.abs(dec.MP[k] - P.expectation(k, dec.MP[k + 1]))) for k in range(N)),
                tol,
            )
        )
    if dec.Mplus_state:
        agree = max(_max0(np.abs(a - b)) for a, b in zip(dec.Mplus, dec.Mplus_state))
        checks.append(Check("augmented_state_agreement", agree, tol))
    return VerificationReport(checks)


# strike derivative


def _left_slopes(f: PLConvex, m: np.ndarray) -> np.ndarray:
    cum = np.concatenate([[0.0], np.cumsum(f.inc)])
    return cum[np.searchsorted(f.bps, m, side="left")]


def contact_probabilities(lat: Lattice, L: list, m: np.ndarray) -> list[np.ndarray]:
    """``P[L*_{k,N} v Z_N < m | node]`` for each node and each probe ``m``."""
    N = lat.N
    m = np.asarray(m, dtype=float)
    q = [None] * (N + 1)
    q[N] = (np.maximum(L[N], lat.z[N])[:, None] < m[None, :]).astype(float)
    for k in range(N - 1, -1, -1):
        w = lat.prob[k][:, None] * q[k + 1][lat.child[k]]
        cont = np.add.reduceat(w, lat.ptr[k][:-1], axis=0)
        q[k] = (L[k][:, None] < m[None, :]) * cont
    return q


def default_probes(f) -> np.ndarray:
    """Midpoints between all breakpoints in the tree plus one point beyond each end."""
    bps = np.unique(np.concatenate([g.bps for row in f for g in row]))
    mids = 0.5 * (bps[:-1] + bps[1:])
    return np.concatenate([[bps[0] - 1.0], mids, [bps[-1] + 1.0]])


@dataclass
class DerivativeReport:
    probes: np.ndarray
    residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tol


def derivative_check(lat: Lattice, dec: NodeDecomposition, m_probes=None, tol: float = 1e-12) -> DerivativeReport:
    """Left slope of every node's envelope against the contact probability."""
    m = default_probes(dec.f) if m_probes is None else np.asarray(m_probes, dtype=float)
    q = contact_probabilities(lat, dec.L, m)
    res = 0.0
    for k in range(lat.N + 1):
        for j, fj in enumerate(dec.f[k]):
            res = max(res, float(np.max(np.abs(_left_slopes(fj, m) - q[k][j]))))
    return DerivativeReport(m, res, tol)


# optimal stopping times


@dataclass
class OptimalTimesReport:
    m: float
    contact: list
    theta: list
    value_T: float
    value_That: float
    absorption: float
    root_value: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.value_T, self.value_That, self.absorption) <= self.tol


def optimal_times(lat: Lattice, dec: NodeDecomposition, m: float, rtol: float = CHECK_RTOL) -> OptimalTimesReport:
    """Values of the rules 'stop at contact' and 'stop at contact or at the
    absorbing strike', compared with the envelope at every node.

    Without contact before the last step the rule stops at ``N``.
    """
    N = lat.N
    tol = rtol * max(lat.scale(), abs(m))
    fm = [np.array([g(m) for g in dec.f[k]]) for k in range(N + 1)]
    contact = [dec.L[k] >= m for k in range(N + 1)]
    theta = [np.abs(fm[k] - m) <= tol for k in range(N + 1)]
    payoff = [np.maximum(lat.z[k], m) for k in range(N + 1)]
    V = [None] * (N + 1)
    W = [None] * (N + 1)
    V[N] = payoff[N]
    W[N] = payoff[N]
    for k in range(N - 1, -1, -1):
        V[k] = np.where(contact[k], payoff[k], lat.expectation(k, V[k + 1]))
        W[k] = np.where(contact[k] | theta[k], np.where(contact[k], payoff[k], m), lat.expectation(k, W[k + 1]))
    vT = max(_max0(np.abs(V[k] - fm[k])) for k in range(N + 1))
    vH = max(_max0(np.abs(W[k] - fm[k])) for k in range(N + 1))
    absorb = 0.0
    for k in range(N):
        for j in np.nonzero(theta[k])[0]:
            ids, _ = lat.children(k, j)
            absorb = max(absorb, float(np.max(np.abs(fm[k + 1][ids] - m))))
    return OptimalTimesReport(m, contact, theta, vT, vH, absorb, float(fm[0][0]), tol)


def stopping_step(L_path: np.ndarray, m: float) -> int:
    """First step at which the index along a path reaches ``m``; ``N`` if never."""
    hits = np.nonzero(np.asarray(L_path) >= m)[0]
    return int(hits[0]) if hits.size else len(L_path) - 1


# calls on arbitrary adapted processes


@dataclass
class SnellYReport:
    zY: list
    fY: list
    fZ: list
    LY: list
    LZ: list
    price_residual: float
    sup_residual: float
    interior_differs: bool
    tol: float

    @property
    def passed(self) -> bool:
        return self.price_residual <= self.tol and self.sup_residual == 0.0


def snell_scalar(lat: Lattice, values) -> list[np.ndarray]:
    N = lat.N
    out = [None] * (N + 1)
    out[N] = np.asarray(values[N], dtype=float)
    for k in range(N - 1, -1, -1):
        out[k] = np.maximum(values[k], lat.expectation(k, out[k + 1]))
    return out


def _suffix_max(a: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(a[:, ::-1], axis=1)[:, ::-1]


def snell_Y(lat: Lattice, y=None, tol: float = 1e-12) -> SnellYReport:
    """Calls on ``Y`` and on its Snell envelope ``Z^Y`` have the same price
    function, and their running indices agree from every node onwards."""
    y = lat.y if y is None else [np.asarray(v, dtype=float) for v in y]
    if y is None:
        raise LatticeError("lattice carries no Y values")
    zY = snell_scalar(lat, y)
    fY = snell_pl(lat, y)
    fZ = snell_pl(lat, zY)
    atol = SNAP_RTOL * max(1.0, max(float(np.max(np.abs(v))) for v in y))
    LY = [np.array([index_from_pl(g, float(v), atol) for g, v in zip(fY[k], y[k])]) for k in range(lat.N + 1)]
    LZ = node_index(lat, fZ, zY)
    price = max(max_abs_diff(a, b) for k in range(lat.N + 1) for a, b in zip(fY[k], fZ[k]))
    paths = expand_prefixes(lat).paths()
    cols = np.arange(lat.N + 1)
    sY = _suffix_max(np.stack([LY[k][paths[:, k]] for k in cols], axis=1))
    sZ = _suffix_max(np.stack([LZ[k][paths[:, k]] for k in cols], axis=1))
    both_inf = np.isneginf(sY) & np.isneginf(sZ)
    diff = np.where(both_inf, 0.0, np.abs(sY - sZ))
    sup_res = float(np.nan_to_num(diff, nan=np.inf).max())
    differs = any(np.any(a != b) for a, b in zip(LY, LZ))
    return SnellYReport(zY, fY, fZ, LY, LZ, price, sup_res, differs, tol)


def random_tree(rng: np.random.Generator, steps: int = 2, branching: int = 2) -> Lattice:
    """Full tree with random transition probabilities and random Z and Y."""
    sizes = [branching**k for k in range(steps + 1)]
    ptr, child, prob = [], [], []
    for k in range(steps):
        n = sizes[k]
        ptr.append(np.arange(0, branching * n + 1, branching))
        child.append(np.arange(branching * n))
        w = rng.uniform(0.1, 1.0, (n, branching))
        prob.append((w / w.sum(axis=1, keepdims=True)).ravel())
    z = [rng.normal(size=s) for s in sizes]
    y = [rng.normal(size=s) for s in sizes]
    return Lattice(z, ptr, child, prob, "tree", y=y)


# convex order


@dataclass
class ConvexOrderReport:
    grid: np.ndarray
    e_mplus: np.ndarray
    e_ma: np.ndarray
    e_mp: np.ndarray | None
    var_mplus: float
    var_ma: float
    var_mp: float | None
    tol: float

    @property
    def dominated(self) -> bool:
        ok = bool(np.all(self.e_mplus <= self.e_ma + self.tol))
        if self.e_mp is not None:
            ok = ok and bool(np.all(self.e_mplus <= self.e_mp + self.tol))
        return ok

    @property
    def strict_somewhere(self) -> bool:
        return bool(np.any(self.e_ma - self.e_mplus > self.tol))

    @property
    def variance_ordered(self) -> bool:
        return self.var_mplus <= self.var_ma + self.tol


def _call_curve(x: np.ndarray, p: np.ndarray, grid: np.ndarray) -> np.ndarray:
    return (p[None, :] * np.maximum(x[None, :], grid[:, None])).sum(axis=1)


def _variance(x: np.ndarray, p: np.ndarray) -> float:
    mean = float(p @ x)
    return float(p @ (x - mean) ** 2)


def convex_order_exact(lat: Lattice, dec: NodeDecomposition, n_grid: int = 50, rtol: float = CHECK_RTOL) -> ConvexOrderReport:
    N = lat.N
    tol = rtol * lat.scale()
    if abs(dec.MA[0][0] - dec.Mplus[0][0]) > tol:
        raise LatticeError(f"M^A_0 = {dec.MA[0][0]!r} differs from Mplus_0 = {dec.Mplus[0][0]!r}")
    p = dec.prefix.pathprob[N]
    xs = [dec.Mplus[N], dec.MA[N]] + ([dec.MP[N]] if dec.MP is not None else [])
    lo = min(float(x.min()) for x in xs)
    hi = max(float(x.max()) for x in xs)
    grid = np.linspace(lo, hi, n_grid)
    e_mp = var_mp = None
    if dec.MP is not None:
        e_mp = _call_curve(dec.MP[N], p, grid)
        var_mp = _variance(dec.MP[N], p)
    return ConvexOrderReport(
        grid,
        _call_curve(dec.Mplus[N], p, grid),
        _call_curve(dec.MA[N], p, grid),
        e_mp,
        _variance(dec.Mplus[N], p),
        _variance(dec.MA[N], p),
        var_mp,
        tol,
    )


# duality


@dataclass
class DualityReport:
    m: float
    call: float
    call_pl: float
    put: float
    scaled_put: float
    gap: float
    nodewise_gap: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.gap <= self.tol and self.nodewise_gap <= self.tol


def duality_tree(lat: Lattice, m: float, f=None, tol: float = 1e-10) -> DualityReport:
    """Undiscounted call on ``Z`` against the discounted put on ``1/Z`` under
    the measure with density ``e^{r k dt} Z_k / x``."""
    if lat.rate is None or lat.dt is None:
        raise LatticeError("duality needs the lattice's rate and step length")
    if any(np.any(v <= 0) for v in lat.z):
        raise LatticeError("duality needs a positive Z")
    if not m > 0:
        raise ModelError("duality needs m > 0")
    disc = math.exp(-lat.rate * lat.dt)
    N = lat.N
    scale = lat.scale()
    qs = []
    for k in range(N):
        ez = lat.expectation(k, lat.z[k + 1])
        if np.max(np.abs(ez - disc * lat.z[k])) > 1e-12 * scale:
            raise LatticeError(f"discounted Z is not a martingale at step {k}")
        parent_z = np.repeat(lat.z[k], np.diff(lat.ptr[k]))
        q = lat.prob[k] * lat.z[k + 1][lat.child[k]] / (disc * parent_z)
        if np.any((q <= 0) | (q > 1 + PROB_TOL)):
            raise LatticeError(f"reweighted probabilities leave (0, 1] at step {k}")
        qs.append(q)
    call = [None] * (N + 1)
    put = [None] * (N + 1)
    call[N] = np.maximum(lat.z[N] - m, 0.0)
    put[N] = np.maximum(1.0 / m - 1.0 / lat.z[N], 0.0)
    for k in range(N - 1, -1, -1):
        call[k] = np.maximum(lat.z[k] - m, lat.expectation(k, call[k + 1]))
        cont = np.add.reduceat(qs[k] * put[k + 1][lat.child[k]], lat.ptr[k][:-1])
        put[k] = np.maximum(1.0 / m - 1.0 / lat.z[k], disc * cont)
    if f is None:
        f = snell_pl(lat)
    x = float(lat.z[0][0])
    c0 = float(call[0][0])
    scaled = m * x * float(put[0][0])
    nodewise = max(_max0(np.abs(call[k] - m * lat.z[k] * put[k])) for k in range(N + 1))
    return DualityReport(m, c0, f[0][0](m) - m, float(put[0][0]), scaled, abs(c0 - scaled), nodewise, tol)


# Markov property of the index on a recombining lattice


def recombining_consistency(spec: GbmSpec, T: float, N: int) -> float:
    """Largest gap between ``L`` on the full tree and on the recombining
    lattice at the node with the same number of up moves."""
    tree = build_binomial(spec, T, N, "tree")
    rec = build_binomial(spec, T, N, "recombining")
    Lt = node_index(tree, snell_pl(tree))
    Lr = node_index(rec, snell_pl(rec))
    gap = 0.0
    for k in range(N + 1):
        ups = popcount(np.arange(2**k))
        a, b = Lt[k], Lr[k][ups]
        both = np.isneginf(a) & np.isneginf(b)
        gap = max(gap, float(np.max(np.where(both, 0.0, np.abs(a - b)))))
    return gap
