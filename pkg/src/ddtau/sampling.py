"""Perfect matchings: exact sampling, enumeration and double-dimer loops.

A matching is stored as an integer array ``match`` with ``match[w]`` the
black index paired with white index ``w``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from .kasteleyn import KasteleynFactor, jump_map
from .lattice import LatticeDomain, Representation, Vertex

ENUMERATION_LIMIT = 36


@dataclass(frozen=True, eq=False)
class Matching:
    domain: LatticeDomain
    match: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.match, dtype=np.int64)
        d = self.domain
        if arr.shape != (d.n_white,) or sorted(arr.tolist()) != list(range(d.n_black)):
            raise ValueError("not a perfect matching")
        for w, b in enumerate(arr):
            if not d.has_edge((d.white_vertex(w), d.black_vertex(b))):
                raise ValueError(f"white {w} and black {b} are not adjacent")
        arr.setflags(write=False)
        object.__setattr__(self, "match", arr)

    def __eq__(self, other):
        return isinstance(other, Matching) and np.array_equal(self.match, other.match)

    def __hash__(self):
        return hash(self.match.tobytes())

    def edges(self) -> list[tuple[Vertex, Vertex]]:
        d = self.domain
        return [(d.white_vertex(w), d.black_vertex(b)) for w, b in enumerate(self.match)]

    def contains(self, e) -> bool:
        d = self.domain
        w, b = d.orient(e)
        return int(self.match[d.white_index(w)]) == d.black_index(b)


# -- enumeration oracle ----------------------------------------------------------

def enumerate_matchings(domain: LatticeDomain) -> list[Matching]:
    """All perfect matchings by recursion on the lowest uncovered vertex."""
    if domain.n_vertices > ENUMERATION_LIMIT:
        raise ValueError(
            f"enumeration limited to {ENUMERATION_LIMIT} vertices, got {domain.n_vertices}"
        )
    cols, rows = domain.cols, domain.rows
    covered = np.zeros((cols, rows), dtype=bool)
    match = np.full(domain.n_white, -1, dtype=np.int64)
    found: list[np.ndarray] = []

    def pair(a, b):
        w, bl = domain.orient((a, b))
        match[domain.white_index(w)] = domain.black_index(bl)

    def rec(k):
        while k < cols * rows and covered[k % cols, k // cols]:
            k += 1
        if k == cols * rows:
            found.append(match.copy())
            return
        x, y = k % cols, k // cols
        covered[x, y] = True
        for u in ((x + 1, y), (x, y + 1)):
            if domain.contains(u) and not covered[u]:
                covered[u] = True
                pair((x, y), u)
                rec(k + 1)
                covered[u] = False
        covered[x, y] = False

    rec(0)
    return [Matching(domain, m) for m in found]


# -- loops and holonomy ------------------------------------------------------------

@dataclass(frozen=True)
class LoopEnsemble:
    """Cycles (alternating white/black vertex lists) and doubled edges."""

    loops: tuple[tuple[Vertex, ...], ...]
    doubled: tuple[tuple[Vertex, Vertex], ...]
    traces: tuple[float, ...] = ()

    def covered_vertices(self) -> list[Vertex]:
        out = [v for loop in self.loops for v in loop]
        out += [v for e in self.doubled for v in e]
        return out


def _cycles(domain: LatticeDomain, m1: np.ndarray, m2: np.ndarray):
    inv2 = np.empty_like(m2)
    inv2[m2] = np.arange(len(m2))
    seen = np.zeros(len(m1), dtype=bool)
    loops, doubled = [], []
    for w0 in range(len(m1)):
        if seen[w0]:
            continue
        if m1[w0] == m2[w0]:
            seen[w0] = True
            doubled.append((domain.white_vertex(w0), domain.black_vertex(m1[w0])))
            continue
        cyc = []
        w = w0
        while not seen[w]:
            seen[w] = True
            b = m1[w]
            cyc.append(domain.white_vertex(w))
            cyc.append(domain.black_vertex(b))
            w = inv2[b]
        loops.append(tuple(cyc))
    return loops, doubled


def superpose(m1: Matching, m2: Matching, rep: Representation | None = None) -> LoopEnsemble:
    if m1.domain is not m2.domain and (m1.domain.m, m1.domain.n) != (m2.domain.m, m2.domain.n):
        raise ValueError("matchings live on different domains")
    loops, doubled = _cycles(m1.domain, m1.match, m2.match)
    traces = ()
    if rep is not None:
        jumps = jump_map(m1.domain, rep)
        traces = tuple(_trace(m1.domain, jumps, loop) for loop in loops)
    return LoopEnsemble(tuple(loops), tuple(doubled), traces)


def _canonical(loop):
    """Rotate to start at the smallest vertex, heading to its smaller neighbour."""
    k = min(range(len(loop)), key=loop.__getitem__)
    loop = loop[k:] + loop[:k]
    if len(loop) > 2 and loop[-1] < loop[1]:
        loop = loop[:1] + loop[:0:-1]
    return loop


def _trace(domain: LatticeDomain, jumps, loop) -> float:
    # canonical traversal makes the result bit-identical under rotation/reversal
    loop = _canonical(tuple(loop))
    H = None
    L = len(loop)
    for k in range(L):
        u, v = loop[k], loop[(k + 1) % L]
        if domain.is_black(u):
            J = jumps.get((v, u))
            if J is None:
                continue
        else:
            J = jumps.get((u, v))
            if J is None:
                continue
            J = np.array([[J[1, 1], -J[0, 1]], [-J[1, 0], J[0, 0]]])  # SL2 inverse
        H = J if H is None else J @ H
    return 2.0 if H is None else float(H[0, 0] + H[1, 1])


def holonomy_trace(domain: LatticeDomain, rep: Representation, loop) -> float:
    """Trace of the product of jumps met along a closed vertex cycle.

    Stepping black -> white across a twisted edge applies ``J_e``, stepping
    white -> black applies ``J_e^{-1}``.
    """
    return _trace(domain, jump_map(domain, rep), tuple(loop))


def _pair_value(domain, jumps, m1, m2) -> float:
    loops, _ = _cycles(domain, m1, m2)
    val = 1.0
    for loop in loops:
        val *= 0.5 * _trace(domain, jumps, loop)
    return val


def oracle_correlator(domain: LatticeDomain, rep: Representation) -> float:
    """``E[prod_loops Tr(rho(loop))/2]`` over all pairs of matchings."""
    ms = [m.match for m in enumerate_matchings(domain)]
    jumps = jump_map(domain, rep)
    total = 0.0
    Z = len(ms)
    for i in range(Z):
        total += _pair_value(domain, jumps, ms[i], ms[i])
        for j in range(i + 1, Z):
            total += 2.0 * _pair_value(domain, jumps, ms[i], ms[j])
    return total / (Z * Z)


# -- exact sampler -------------------------------------------------------------------
#
# Whites are matched row by row from the bottom.  While row y is processed only
# the inverse of the remaining Kasteleyn matrix restricted to rows y and y+1 is
# needed; it is the inverse of a 2m x 2m matrix whose lower-right block is the
# Schur complement of all rows above y+1.  Matching a pair is a rank-1 downdate.


class RowTransfer:
    """Per-row blocks of ``K`` and inverses of the upper Schur complements."""

    def __init__(self, domain: LatticeDomain):
        self.domain = domain
        m, rows = domain.m, domain.rows
        self.m = m
        hs = domain.hsign.astype(float)
        vs = domain.vsign.astype(float)
        self.K00 = np.zeros((rows, m, m))
        # vertical signs from row y to row y+1: white j up (v01) and black j up (v10)
        self.v01 = np.zeros((max(rows - 1, 0), m))
        self.v10 = np.zeros((max(rows - 1, 0), m))
        for y in range(rows):
            for j in range(m):
                xw = 2 * j + (y + 1) % 2
                for xb in (xw - 1, xw + 1):
                    if 0 <= xb < domain.cols:
                        self.K00[y, j, xb // 2] = hs[min(xw, xb), y]
        for y in range(rows - 1):
            for j in range(m):
                self.v01[y, j] = vs[2 * j + (y + 1) % 2, y]
                self.v10[y, j] = vs[2 * j + y % 2, y]
        # H[y]: inverse of the full system on rows >= y, restricted to row y
        self.H = np.zeros((rows, m, m))
        self.H[rows - 1] = np.linalg.inv(self.K00[rows - 1])
        for y in range(rows - 2, -1, -1):
            S = self.K00[y] - self.v01[y][:, None] * self.H[y + 1] * self.v10[y][None, :]
            self.H[y] = np.linalg.inv(S)


@njit(cache=True, nogil=True)
def _row_kernel(K00, v01, v10, H, cols, uniforms, forced, use_forced, tol, match):
    """Match one configuration row by row; returns (status, log-probability).

    status 0 ok, 1 conditional probabilities off, 2 forced matching invalid.
    """
    rows, m = K00.shape[0], K00.shape[1]
    logp = 0.0
    G = H[0].copy()
    gone_b = np.zeros(m, dtype=np.bool_)
    gone_w = np.zeros(m, dtype=np.bool_)
    cand = np.empty(3, dtype=np.int64)
    kval = np.empty(3)
    prob = np.empty(3)
    for y in range(rows):
        top = y == rows - 1
        size = m if top else 2 * m
        E = np.zeros((size, size))
        E[:m, :m] = G
        if not top:
            Hn = H[y + 1]
            a = G.copy()
            for j in range(m):
                a[:, j] *= v01[y, j]
            E[:m, m:] = -np.dot(a, Hn)
            bmat = G.copy()
            for j in range(m):
                bmat[j, :] *= v10[y, j]
            bl = -np.dot(Hn, bmat)
            E[m:, :m] = bl
            c = Hn.copy()
            for j in range(m):
                c[j, :] *= v01[y, j]
            E[m:, m:] = Hn - np.dot(bl, c)
        up_b = np.zeros(m, dtype=np.bool_)
        up_w = np.zeros(m, dtype=np.bool_)
        for j in range(m):
            if gone_w[j]:
                continue
            xw = 2 * j + (y + 1) % 2
            nc = 0
            for xb in (xw - 1, xw + 1):
                if 0 <= xb < cols and not gone_b[xb // 2]:
                    cand[nc] = xb // 2
                    kval[nc] = K00[y, j, xb // 2]
                    nc += 1
            if not top:
                cand[nc] = m + j
                kval[nc] = v01[y, j]
                nc += 1
            total = 0.0
            for c_ in range(nc):
                prob[c_] = abs(kval[c_] * E[cand[c_], j])
                total += prob[c_]
            if abs(total - 1.0) > tol:
                return 1, logp
            pick = -1
            if use_forced:
                target = forced[y * m + j]
                for c_ in range(nc):
                    bi = cand[c_]
                    glob = y * m + bi if bi < m else (y + 1) * m + bi - m
                    if glob == target:
                        pick = c_
                if pick < 0:
                    return 2, logp
            else:
                u = uniforms[y * m + j] * total
                acc = 0.0
                pick = nc - 1
                for c_ in range(nc):
                    acc += prob[c_]
                    if u < acc:
                        pick = c_
                        break
                while prob[pick] == 0.0 and pick > 0:
                    pick -= 1
            b = cand[pick]
            logp += np.log(prob[pick])
            _downdate(E, b, j)
            if b < m:
                gone_b[b] = True
                match[y * m + j] = y * m + b
            else:
                up_b[b - m] = True
                match[y * m + j] = (y + 1) * m + b - m
            gone_w[j] = True
        for j in range(m):
            if gone_b[j]:
                continue
            if top or abs(abs(v10[y, j] * E[j, m + j]) - 1.0) > tol:
                return 1, logp
            if use_forced and forced[(y + 1) * m + j] != y * m + j:
                return 2, logp
            _downdate(E, j, m + j)
            match[(y + 1) * m + j] = y * m + j
            up_w[j] = True
            gone_b[j] = True
        if not top:
            G = E[m:, m:].copy()
            gone_b = up_b
            gone_w = up_w
    return 0, logp


@njit(cache=True, nogil=True)
def _downdate(E, b, w):
    """Delete black ``b`` and white ``w``: rank-1 Schur update of the inverse."""
    n = E.shape[0]
    piv = E[b, w]
    col = E[:, w] / piv
    row = E[b, :].copy()
    for i in range(n):
        ci = col[i]
        if ci != 0.0:
            for k in range(n):
                E[i, k] -= ci * row[k]


def _run_rows(transfer: RowTransfer, count: int, rng=None, forced=None, tol: float = 1e-6):
    """Sample ``count`` matchings, or score ``forced`` ones; returns (matches, logp)."""
    d = transfer.domain
    match = np.full((count, d.n_white), -1, dtype=np.int64)
    logp = np.zeros(count)
    if forced is None:
        uniforms = rng.random((count, d.n_white))
        fz = np.zeros(d.n_white, dtype=np.int64)
    else:
        forced = np.asarray(forced, dtype=np.int64).reshape(count, d.n_white)
        uniforms = np.zeros((count, d.n_white))
    for s in range(count):
        status, logp[s] = _row_kernel(
            transfer.K00, transfer.v01, transfer.v10, transfer.H, d.cols,
            uniforms[s], fz if forced is None else forced[s], forced is not None, tol, match[s],
        )
        if status == 1:
            raise RuntimeError("conditional probabilities do not sum to one")
        if status == 2:
            raise ValueError("forced configuration is not a matching of this domain")
    return match, logp


@lru_cache(maxsize=8)
def row_transfer(domain: LatticeDomain) -> RowTransfer:
    return RowTransfer(domain)


def _task_rngs(seed: int, count: int, chunk: int):
    sizes = [min(chunk, count - start) for start in range(0, count, chunk)]
    return [
        (np.random.default_rng(np.random.SeedSequence([int(seed), i])), size)
        for i, size in enumerate(sizes)
    ]


def sample_matchings(
    domain: LatticeDomain, count: int, seed: int, threads: int = 1, chunk: int = 64
) -> np.ndarray:
    """``count`` exact uniform matchings as an array of shape ``(count, n_white)``.

    Task ``i`` covers samples ``[i*chunk, (i+1)*chunk)`` with its own generator
    seeded from ``(seed, i)``, so the output does not depend on ``threads``.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    transfer = row_transfer(domain)
    tasks = _task_rngs(seed, count, chunk)
    if not tasks:
        return np.zeros((0, domain.n_white), dtype=np.int64)

    def run(task):
        rng, size = task
        return _run_rows(transfer, size, rng)[0]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, tasks))
    else:
        parts = [run(t) for t in tasks]
    return np.concatenate(parts)


def sample_matching(domain: LatticeDomain, seed: int) -> Matching:
    return Matching(domain, sample_matchings(domain, 1, seed)[0])


def matching_probability(domain: LatticeDomain, matching: Matching | np.ndarray) -> float:
    """Probability the sampler assigns to ``matching`` (product of its conditionals)."""
    arr = matching.match if isinstance(matching, Matching) else np.asarray(matching)
    _, logp = _run_rows(row_transfer(domain), 1, forced=arr[None, :])
    return float(np.exp(logp[0]))


def edge_probability(domain: LatticeDomain, edge, factor: KasteleynFactor | None = None) -> float:
    """Probability that ``edge`` is a dimer, ``|K(w, b) K^{-1}(b, w)|``."""
    if not domain.has_edge(edge):
        raise ValueError(f"{edge} is not an edge of the domain")
    factor = factor or KasteleynFactor(domain)
    w, b = domain.orient(edge)
    wi, bi = domain.white_index(w), domain.black_index(b)
    return abs(factor.entry(wi, bi) * factor.inverse_column(wi)[bi])


def edge_probabilities(domain: LatticeDomain) -> dict:
    """Dimer probability of every edge, keyed by ``(white, black)``."""
    factor = KasteleynFactor(domain)
    inv = factor.inverse_columns(range(domain.n_white))
    out = {}
    for e in domain.edges():
        w, b = domain.orient(e)
        wi, bi = domain.white_index(w), domain.black_index(b)
        out[(w, b)] = abs(factor.entry(wi, bi) * inv[bi, wi])
    return out


# -- Monte Carlo ----------------------------------------------------------------------

def pair_products(domain: LatticeDomain, rep: Representation, matchings: np.ndarray) -> np.ndarray:
    """``prod_loops Tr/2`` for consecutive pairs of sampled matchings."""
    jumps = jump_map(domain, rep)
    if not jumps:
        return np.ones(len(matchings) // 2)
    return np.array(
        [_pair_value(domain, jumps, matchings[2 * k], matchings[2 * k + 1]) for k in range(len(matchings) // 2)]
    )


def mc_correlator(
    domain: LatticeDomain,
    rep: Representation,
    samples: int,
    seed: int,
    threads: int = 1,
    return_values: bool = False,
):
    """Mean and standard error of the loop-holonomy product over ``samples`` pairs."""
    if samples < 2:
        raise ValueError("need at least two samples")
    ms = sample_matchings(domain, 2 * samples, seed, threads=threads)
    vals = pair_products(domain, rep, ms)
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(len(vals)))
    if return_values:
        return mean, stderr, vals
    return mean, stderr


# -- loop diameters ---------------------------------------------------------------------

def loop_through(domain: LatticeDomain, m1: np.ndarray, m2: np.ndarray, edge) -> list[Vertex] | None:
    """Vertices of the double-dimer loop through ``edge`` (None when not on a loop)."""
    w, b = domain.orient(edge)
    wi, bi = domain.white_index(w), domain.black_index(b)
    in1, in2 = m1[wi] == bi, m2[wi] == bi
    if in1 == in2:
        return None
    if in2:
        m1, m2 = m2, m1
    inv2 = np.empty_like(m2)
    inv2[m2] = np.arange(len(m2))
    out, cur = [], wi
    while True:
        out.append(domain.white_vertex(cur))
        out.append(domain.black_vertex(m1[cur]))
        cur = inv2[m1[cur]]
        if cur == wi:
            return out


def euclidean_diameter(points: np.ndarray) -> float:
    from scipy.spatial import ConvexHull, QhullError
    from scipy.spatial.distance import pdist

    pts = np.asarray(points, dtype=float)
    if len(pts) > 16:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass
    return float(pdist(pts).max()) if len(pts) > 1 else 0.0


def default_marked_edge(domain: LatticeDomain):
    """Bottom-row edge at the middle of the box."""
    return ((domain.m - 1, 0), (domain.m, 0))


def loop_diameters(domain: LatticeDomain, samples: int, seed: int, edge=None, threads: int = 1) -> np.ndarray:
    """Lattice-unit diameters of the loop through ``edge`` (NaN when it is not on one)."""
    edge = edge or default_marked_edge(domain)
    ms = sample_matchings(domain, 2 * samples, seed, threads=threads)
    out = np.full(samples, np.nan)
    for k in range(samples):
        loop = loop_through(domain, ms[2 * k], ms[2 * k + 1], edge)
        if loop is not None:
            out[k] = euclidean_diameter(np.array(loop))
    return out


def loop_diameter_tail(
    domain: LatticeDomain, radii, samples: int, seed: int, edge=None, threads: int = 1
) -> list[tuple[float, float, float, int]]:
    """Rows ``(R, p_hat, stderr, n_pos)`` estimating P(diam >= R | edge on a loop)."""
    diam = loop_diameters(domain, samples, seed, edge=edge, threads=threads)
    pos = diam[~np.isnan(diam)]
    n_pos = len(pos)
    if n_pos == 0:
        raise ValueError("no sample had the marked edge on a loop")
    rows = []
    for R in radii:
        p = float(np.mean(pos >= R))
        rows.append((float(R), p, math.sqrt(p * (1 - p) / n_pos), n_pos))
    return rows


def tail_slope(rows) -> float:
    """Least-squares slope of log p_hat against log R over rows with p_hat > 0."""
    R = np.array([r[0] for r in rows if r[1] > 0])
    p = np.array([r[1] for r in rows if r[1] > 0])
    if len(R) < 2:
        return float("nan")
    return float(np.polyfit(np.log(R), np.log(p), 1)[0])
