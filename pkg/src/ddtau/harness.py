"""Experiment drivers comparing lattice determinants with the continuum tau function.

Every ``run_*`` function takes an :class:`ExperimentConfig` and returns an
:class:`ExperimentResult` holding a table, a JSON-ready summary and a dict of
named boolean checks.  Results are deterministic for a fixed config.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import isomonodromy as iso
from .conformal import RectangleMap
from .kasteleyn import KasteleynFactor, assemble, det_ratio
from .lattice import (
    LatticeDomain,
    Representation,
    build_cut,
    build_domain,
    cut_from_faces,
    is_nilpotent,
    representation,
    to_json,
)
from .report import ExperimentResult, PlotSpec
from .sampling import loop_diameter_tail, mc_correlator, oracle_correlator, tail_slope
from .sle import martingale_statistic

EXPERIMENTS = ("oracle", "converge", "variation", "boundary", "pinch", "tau", "mc", "tail", "sle-drift")

TOLERANCES = {
    "oracle": 1e-9,
    "invariance": 1e-12,
    "unit": 1e-12,
    "final_gap": 1e-2,
    "doubling_fraction": 0.1,
    "fit_factor": 2.0,
    "conservation": 1e-8,
    "det_y0": 1e-9,
    "monodromy": 1e-6,
    "trace": 1e-5,
    "closed": 1e-7,
    "mobius": 1e-6,
    "z": 3.0,
    "discard": 0.01,
    "trace_sq": 1e-8,
    "det_m": 1e-6,
    "slope_lo": -1.6,
    "slope_hi": -0.4,
}


class ConfigError(ValueError):
    pass


class BoxPolicyError(ValueError):
    """A puncture sits too close to the edge of the computational box."""


def _E(i: int, j: int, s: float = 1.0) -> list:
    N = [[0.0, 0.0], [0.0, 0.0]]
    N[i][j] = s
    return N


@dataclass
class ExperimentConfig:
    """Parameters of one experiment; JSON stores punctures as ``[re, im]`` pairs."""

    experiment: str
    punctures: list = field(default_factory=list)
    nilpotents: list = field(default_factory=list)
    deltas: list = field(default_factory=list)
    box_scale: float = 8.0
    doubling: bool = True
    doubling_max_vertices: int = 600_000
    samples: int = 0
    seed: int = 0
    eps_list: list = field(default_factory=list)
    separations: list = field(default_factory=list)
    split: int = 0
    moved: int = 0
    grid: list | None = None
    faces: list | None = None
    radii: list = field(default_factory=list)
    h: float = 1e-4
    horizon: float = 0.02
    tolerances: dict = field(default_factory=dict)
    out_dir: str = "results"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        self.punctures = [complex(*p) if isinstance(p, (list, tuple)) else complex(p) for p in self.punctures]
        if any(z.imag <= 0 for z in self.punctures):
            raise ConfigError("punctures must lie in the upper half-plane")
        self.nilpotents = [np.asarray(N, dtype=float).tolist() for N in self.nilpotents]
        if self.punctures and len(self.nilpotents) != len(self.punctures):
            raise ConfigError("one nilpotent per puncture")
        for N in self.nilpotents:
            if not is_nilpotent(np.asarray(N)):
                raise ConfigError(f"{N} is not nilpotent")
        self.deltas = [float(d) for d in self.deltas]
        if any(d <= 0 for d in self.deltas):
            raise ConfigError("mesh sizes must be positive")
        if any(b >= a for a, b in zip(self.deltas, self.deltas[1:])):
            raise ConfigError("mesh list must be strictly decreasing")
        unknown = set(self.tolerances) - set(TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown tolerances {sorted(unknown)}")

    @property
    def Ns(self) -> np.ndarray:
        return np.asarray(self.nilpotents, dtype=float).reshape(-1, 2, 2)

    @property
    def lambdas(self) -> np.ndarray:
        return np.asarray(self.punctures, dtype=complex)

    def tol(self, key: str) -> float:
        return float(self.tolerances.get(key, TOLERANCES[key]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["punctures"] = [[z.real, z.imag] for z in self.punctures]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


_DEFAULTS = {
    "converge": dict(
        punctures=[[-1, 1], [1, 1]],
        nilpotents=[_E(0, 1, 0.2), _E(1, 0, 0.2)],
        deltas=[1 / 8, 1 / 16, 1 / 32, 1 / 64],
    ),
    "variation": dict(
        punctures=[[-1, 1], [1, 1]],
        nilpotents=[_E(0, 1, 0.2), _E(1, 0, 0.2)],
        deltas=[1 / 8, 1 / 16, 1 / 32],
    ),
    "boundary": dict(
        punctures=[[-1, 1], [1, 1]],
        nilpotents=[_E(0, 1, 0.2), _E(1, 0, 0.2)],
        deltas=[1 / 32],
        eps_list=[0.8, 0.4, 0.2, 0.1],
    ),
    "oracle": dict(samples=20, seed=0),
    "pinch": dict(
        punctures=[[0, 1], [1, 1.5], [0, 1.2], [1.3, 1]],
        nilpotents=[_E(0, 1, 0.3), _E(1, 0, 0.3), [[0.3, -0.3], [0.3, -0.3]], _E(0, 1, 0.3)],
        split=2,
        separations=[10, 20, 40],
    ),
    "tau": dict(
        punctures=[[-1, 1], [1, 1]],
        nilpotents=[_E(0, 1, 0.2), _E(1, 0, 0.2)],
    ),
    "mc": dict(
        grid=[8, 8],
        faces=[[4, 7], [10, 7]],
        nilpotents=[_E(0, 1, 0.5), _E(1, 0, 0.5)],
        samples=10_000,
        seed=1,
    ),
    "tail": dict(grid=[32, 32], samples=1000, seed=1, radii=[4, 8, 16]),
    "sle-drift": dict(
        punctures=[[-1, 1], [1, 1]],
        nilpotents=[_E(0, 1, 0.3), _E(1, 0, 0.3)],
        samples=2000,
        seed=7,
        h=1e-4,
        horizon=0.02,
    ),
}


def default_config(experiment: str, **overrides) -> ExperimentConfig:
    if experiment not in _DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    data = {"experiment": experiment, **json.loads(json.dumps(_DEFAULTS[experiment])), **overrides}
    return ExperimentConfig.from_dict(data)


# -- boxes -----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Box:
    """Finite lattice box whose bottom side lies on the real axis.

    Continuum point ``z`` sits at lattice position ``z + shift``; the box
    ``[0, W] x [0, H]`` is sent to the upper half-plane by ``conformal``.
    """

    domain: LatticeDomain
    shift: float
    conformal: RectangleMap

    def snap(self, z: complex):
        f = self.domain.nearest_face(z + self.shift)
        c = self.domain.face_center(f)
        return f, c - self.shift, abs(c - self.shift - z)

    def target(self, face) -> complex:
        """Image of a face centre in the upper half-plane."""
        return complex(self.conformal(self.domain.face_center(face)))

    def derivative(self, face, h: float = 1e-6) -> complex:
        z = self.domain.face_center(face)
        return complex((self.conformal(z + h) - self.conformal(z - h)) / (2 * h))


def box_side(lambdas, scale: float) -> float:
    lam = np.asarray(lambdas, dtype=complex)
    extent = float(np.abs(lam).max())
    if len(lam) > 1:
        extent = max(extent, float(np.abs(lam[:, None] - lam[None, :]).max()))
    return scale * extent


def make_box(lambdas, delta: float, scale: float = 8.0, factor: float = 1.0, margin: int = 4) -> Box:
    """Box of width ``factor * scale * max(|lambda|, gaps)`` and half that height."""
    W = factor * box_side(lambdas, scale)
    m = max(1, round((W / delta - 1) / 2))
    n = max(1, round((W / 2 / delta - 1) / 2))
    d = build_domain(m, n, delta)
    Wp, Hp = (2 * m + 1) * delta, (2 * n + 1) * delta
    shift = Wp / 2
    for z in np.atleast_1d(lambdas):
        x = z.real + shift
        if min(x, Wp - x, Hp - z.imag) < margin * delta:
            raise BoxPolicyError(f"puncture {z} within {margin} faces of the box edge")
    return Box(d, shift, RectangleMap(Wp, Hp))


def _log_det(domain, rep, factor) -> float:
    value = det_ratio(assemble(domain, rep, factor))
    if value <= 0:
        raise ArithmeticError(f"determinant ratio {value} is not positive")
    return math.log(value)


def _threads_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _strictly_decreasing(xs, floor: float = 1e-10) -> bool:
    if max(xs, default=0.0) <= floor:
        return True
    return all(b < a for a, b in zip(xs, xs[1:]))


# -- mesh convergence -----------------------------------------------------------------

def _convergence_row(config: ExperimentConfig, delta: float) -> dict:
    lam, Ns = config.lambdas, config.Ns
    box = make_box(lam, delta, config.box_scale)
    snaps = [box.snap(z) for z in lam]
    faces = [s[0] for s in snaps]
    factor = KasteleynFactor(box.domain)
    ld = _log_det(box.domain, representation(box.domain, faces, Ns), factor)
    targets = np.array([box.target(f) for f in faces])
    lt = iso.log_tau(iso.solve_to(targets, Ns))
    lt_half = iso.log_tau(iso.solve_to(np.array([s[1] for s in snaps]), Ns))
    row = {
        "delta": delta,
        "m": box.domain.m,
        "n": box.domain.n,
        "snap": max(s[2] for s in snaps),
        "log_det": ld,
        "log_tau": lt,
        "log_tau_halfplane": lt_half,
        "abs_log_error": abs(ld - lt),
        "doubling_change": float("nan"),
        "doubling_gap_change": float("nan"),
        "doubling_flag": False,
    }
    if config.doubling and 4 * box.domain.n_vertices <= config.doubling_max_vertices:
        big = make_box(lam, delta, config.box_scale, factor=2.0)
        bfaces = [big.snap(z)[0] for z in lam]
        ld2 = _log_det(big.domain, representation(big.domain, bfaces, Ns), KasteleynFactor(big.domain))
        lt2 = iso.log_tau(iso.solve_to(np.array([big.target(f) for f in bfaces]), Ns))
        row["doubling_change"] = abs(ld2 - ld)
        row["doubling_gap_change"] = abs((ld2 - lt2) - (ld - lt))
        # the raw change mostly tracks the finite-box effect that the conformal
        # target already accounts for; flag on the change of the gap itself
        row["doubling_flag"] = bool(row["doubling_gap_change"] > config.tol("doubling_fraction") * row["abs_log_error"])
    return row


def run_convergence(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Exact ``log det`` per mesh against ``log tau`` of the conformally mapped punctures."""
    if not config.deltas:
        raise ConfigError("convergence needs a mesh list")
    t0 = time.perf_counter()
    rows = _threads_map(lambda d: _convergence_row(config, d), config.deltas, threads)
    cols = list(rows[0])
    gaps = [r["abs_log_error"] for r in rows]
    checks = {
        "gap_strictly_decreasing": _strictly_decreasing(gaps),
        "final_gap_within_target": gaps[-1] <= config.tol("final_gap"),
        "snap_within_half_diagonal": all(r["snap"] <= r["delta"] / math.sqrt(2) + 1e-12 for r in rows),
    }
    summary = {
        "gaps": gaps,
        "final_gap": gaps[-1],
        "doubling_flags": [r["doubling_flag"] for r in rows],
        "seconds": time.perf_counter() - t0,
    }
    pts = [(r["delta"], r["abs_log_error"]) for r in rows if r["abs_log_error"] > 0]
    plot = PlotSpec("mesh convergence", "delta", "|log det - log tau|", {"gap": pts}, logx=True, logy=True)
    return ExperimentResult("converge", cols, [[r[c] for c in cols] for r in rows], summary, checks, plot)


# -- one-face variation ---------------------------------------------------------------

def run_variation_check(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Central one-face difference of ``log det`` against the continuum derivative.

    A single one-face step carries an O(1) lattice-parity term; the average of
    the forward and backward steps cancels it.
    """
    lam, Ns, k = config.lambdas, config.Ns, config.moved
    if not 0 <= k < len(lam):
        raise ConfigError("moved puncture index out of range")

    def one(delta):
        box = make_box(lam, delta, config.box_scale)
        d = box.domain
        faces = [box.snap(z)[0] for z in lam]
        factor = KasteleynFactor(d)
        base = _log_det(d, representation(d, faces, Ns), factor)
        state = iso.solve_to(np.array([box.target(f) for f in faces]), Ns)
        slope = box.derivative(faces[k]) * iso.variation_prediction(state, k)
        out = []
        for name, (dx, dy) in (("horizontal", (1, 0)), ("vertical", (0, 1))):
            vals, preds = [], []
            for s in (1, -1):
                f = (faces[k][0] + s * dx, faces[k][1] + s * dy)
                if not d.has_face(f):
                    raise BoxPolicyError(f"displaced face {f} leaves the box")
                if any(f[0] == g[0] for j, g in enumerate(faces) if j != k):
                    raise ValueError("displacement crosses another cut")
                moved = faces[:k] + [f] + faces[k + 1 :]
                vals.append(_log_det(d, representation(d, moved, Ns), factor) - base)
                preds.append(2.0 * (slope * delta * complex(s * dx, s * dy)).real)
            discrete = 0.5 * (vals[0] - vals[1])
            continuum = 0.5 * (preds[0] - preds[1])
            ratio = discrete / continuum if abs(continuum) > 1e-14 else float("nan")
            fwd = vals[0] / preds[0] if abs(preds[0]) > 1e-14 else float("nan")
            out.append([delta, name, discrete, continuum, ratio, abs(ratio - 1), fwd])
        return out

    rows = [r for block in _threads_map(one, config.deltas, threads) for r in block]
    cols = ["delta", "direction", "discrete", "continuum", "ratio", "deviation", "forward_ratio"]
    degenerate = all(abs(r[3]) <= 1e-10 for r in rows)
    checks = {}
    if degenerate:
        checks["both_sides_vanish"] = all(abs(r[2]) <= 1e-10 for r in rows)
    else:
        for name in ("horizontal", "vertical"):
            devs = [r[5] for r in rows if r[1] == name]
            checks[f"{name}_deviation_decreasing"] = _strictly_decreasing(devs)
    series = {
        name: [(r[0], r[5]) for r in rows if r[1] == name and r[5] > 0 and math.isfinite(r[5])]
        for name in ("horizontal", "vertical")
    }
    plot = PlotSpec("one-face variation", "delta", "|ratio - 1|", series, logx=True, logy=True)
    summary = {"ratios": {n: [r[4] for r in rows if r[1] == n] for n in ("horizontal", "vertical")}}
    return ExperimentResult("variation", cols, rows, summary, checks, plot)


# -- near-boundary sweep -------------------------------------------------------------------

def run_boundary_sweep(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """``|log det|`` at fixed mesh as all punctures are lowered towards the real axis."""
    if len(config.deltas) != 1:
        raise ConfigError("the boundary sweep uses exactly one mesh size")
    delta = config.deltas[0]
    eps_list = sorted((float(e) for e in config.eps_list), reverse=True)
    if not eps_list:
        raise ConfigError("eps list is empty")
    if eps_list[-1] < 2 * delta:
        raise ConfigError(f"eps {eps_list[-1]} below 2 delta would leave the first face row")
    xs = config.lambdas.real
    Ns = config.Ns
    box = make_box(xs + 1j * eps_list[0], delta, config.box_scale)
    d = box.domain
    factor = KasteleynFactor(d)
    rows = []
    for eps in eps_list:
        faces = [box.snap(complex(x, eps))[0] for x in xs]
        ld = _log_det(d, representation(d, faces, Ns), factor)
        height = d.face_center(faces[0]).imag
        lt = iso.log_tau(iso.solve_to(np.array([box.target(f) for f in faces]), Ns))
        rows.append([eps, height, ld, abs(ld), lt])
    mags = [r[3] for r in rows]
    checks = {"decreasing_towards_boundary": _strictly_decreasing(mags, floor=1e-12)}
    plot = PlotSpec("near-boundary sweep", "eps", "|log det|", {"|log det|": [(r[0], r[3]) for r in rows if r[3] > 0]}, logx=True, logy=True)
    cols = ["eps", "snapped_height", "log_det", "abs_log_det", "log_tau"]
    return ExperimentResult("boundary", cols, rows, {"delta": delta, "abs_log_det": mags}, checks, plot)


# -- oracle suite --------------------------------------------------------------------------

_ORACLE_SHAPES = [(1, 1), (1, 2), (2, 1), (2, 2), (1, 3), (3, 1), (2, 3), (3, 2)]


def random_nilpotent(rng: np.random.Generator, max_norm: float = 0.5) -> np.ndarray:
    """``r v w^T`` with orthogonal unit ``v, w``; its 2-norm is ``r``."""
    a = rng.uniform(0, 2 * math.pi)
    v = np.array([math.cos(a), math.sin(a)])
    w = np.array([-v[1], v[0]])
    return rng.uniform(0.05, max_norm) * np.outer(v, w)


def random_sl2(rng: np.random.Generator, max_cond: float = 20.0) -> np.ndarray:
    while True:
        G = np.eye(2) + rng.normal(scale=0.7, size=(2, 2))
        det = np.linalg.det(G)
        if det > 0.1 and np.linalg.cond(G) <= max_cond:
            return G / math.sqrt(det)


def random_cut(domain: LatticeDomain, face, lo: int, hi: int, rng: np.random.Generator, taken=(), tries: int = 20):
    """Random simple down/sideways dual path confined to columns ``lo < x < hi``.

    No other puncture lies in that strip, so the path is homotopic to the
    straight cut below ``face``.  Faces in ``taken`` are avoided; after
    ``tries`` failures the straight cut is returned.
    """
    taken = set(taken)
    for _ in range(tries):
        path = [tuple(face)]
        seen = {tuple(face)}
        while True:
            x, y = path[-1]
            if y == 0 and rng.random() < 0.5:
                break
            side = [(x + s, y) for s in (-1, 1) if lo < x + s < hi and (x + s, y) not in seen]
            side = [f for f in side if domain.has_face(f) and f not in taken]
            down = (x, y - 1) if y > 0 and (x, y - 1) not in taken else None
            if down and (not side or rng.random() < 0.5):
                nxt = down
            elif side:
                nxt = side[rng.integers(len(side))]
            else:
                break
            path.append(nxt)
            seen.add(nxt)
        if path[-1][1] == 0:
            return cut_from_faces(domain, path)
    return build_cut(domain, face)


def random_oracle_case(rng: np.random.Generator, kind: str = "random"):
    """Domain, straight-cut representation and a homotopic variant of it."""
    m, n = _ORACLE_SHAPES[rng.integers(len(_ORACLE_SHAPES))]
    d = build_domain(m, n, 1.0)
    ncols = 2 * m - 1
    count = 1 if kind == "single" else int(rng.integers(1, min(3, ncols) + 1))
    cols = sorted(rng.choice(ncols, size=count, replace=False).tolist())
    faces = [(c, int(rng.integers(0, 2 * n - 1))) for c in cols]
    if kind == "trivial":
        Ns = np.zeros((count, 2, 2))
    else:
        Ns = np.array([random_nilpotent(rng) for _ in range(count)])
    rep = representation(d, faces, Ns)
    return d, rep, rep.with_cuts(random_cuts(d, faces, ncols, rng))


def random_cuts(domain: LatticeDomain, faces, ncols: int, rng: np.random.Generator) -> list:
    """Pairwise disjoint random cuts, each homotopic to the straight one."""
    cols = [f[0] for f in faces]
    bounds = [-1] + cols + [ncols]
    cuts, taken = [], set()
    for i, f in enumerate(faces):
        cut = random_cut(domain, f, bounds[i], bounds[i + 2], rng, taken)
        taken.update(cut.faces)
        cuts.append(cut)
    return cuts


def run_oracle_suite(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Twisted determinants against brute-force loop enumeration on small grids."""
    count = config.samples
    if count < 1:
        raise ConfigError("oracle suite needs at least one case")
    ss = np.random.SeedSequence(config.seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(count)]
    kinds = ["trivial", "single"] + ["random"] * max(0, count - 2)
    tol, inv_tol, unit_tol = config.tol("oracle"), config.tol("invariance"), config.tol("unit")

    def one(i):
        rng = rngs[i]
        d, rep, variant = random_oracle_case(rng, kinds[i])
        factor = KasteleynFactor(d)
        value = det_ratio(assemble(d, rep, factor))
        value_v = det_ratio(assemble(d, variant, factor))
        value_c = det_ratio(assemble(d, rep.conjugated(random_sl2(rng)), factor))
        oracle = oracle_correlator(d, rep)
        oracle_v = oracle_correlator(d, variant)
        err = max(abs(value - oracle), abs(value_v - oracle_v))
        gauge = abs(value_v - value) / abs(value)
        conj = abs(value_c - value) / abs(value)
        ok = err <= tol and gauge <= inv_tol and conj <= inv_tol
        if kinds[i] == "trivial":
            ok = ok and value == 1.0
        elif len(rep.cuts) == 1:
            ok = ok and abs(value - 1.0) <= unit_tol
        row = [i, kinds[i], d.m, d.n, len(rep.cuts), value, oracle, err, gauge, conj, ok]
        dump = None if ok else to_json(d, variant)
        return row, dump

    t0 = time.perf_counter()
    results = _threads_map(one, range(count), threads)
    seconds = time.perf_counter() - t0
    rows = [r for r, _ in results]
    failures = {f"oracle_case_{r[0]}.json": dump for r, dump in results if dump is not None}
    cols = ["case", "kind", "m", "n", "punctures", "det_ratio", "oracle", "abs_error", "gauge_change", "conjugation_change", "pass"]
    checks = {
        "oracle_agreement": all(r[7] <= tol for r in rows),
        "cut_invariance": all(r[8] <= inv_tol for r in rows),
        "conjugation_invariance": all(r[9] <= inv_tol for r in rows),
        "unit_cases": all(r[-1] for r in rows if r[1] != "random" or r[4] == 1),
    }
    summary = {"cases": count, "max_abs_error": max(r[7] for r in rows), "seconds": seconds, "failures": sorted(failures)}
    return ExperimentResult("oracle", cols, rows, summary, checks, artifacts=failures)


# -- pinching --------------------------------------------------------------------------------

def run_pinch(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Factorization error of ``log tau`` for two clusters separated by ``M``."""
    lam, Ns, s = config.lambdas, config.Ns, config.split
    if not 0 < s < len(lam):
        raise ConfigError("split must leave both clusters non-empty")
    A, B = lam[:s], lam[s:]
    la = iso.log_tau(iso.solve_to(A, Ns[:s]))
    lb = iso.log_tau(iso.solve_to(B, Ns[s:]))
    seps = [float(M) for M in config.separations]
    if len(seps) < 2:
        raise ConfigError("need at least two separations")

    def one(M):
        shifted = B + M
        if shifted.real.min() <= A.real.max():
            raise ValueError(f"clusters overlap at separation {M}")
        joint = iso.log_tau(iso.solve_to(np.concatenate([A, shifted]), Ns))
        return joint

    joints = _threads_map(one, seps, threads)
    errs = [abs(j - la - lb) for j in joints]
    C = math.exp(float(np.mean([math.log(e * M) for e, M in zip(errs, seps)])))
    ratios = [e / (C / M) for e, M in zip(errs, seps)]
    slope = float(np.polyfit(np.log(seps), np.log(errs), 1)[0])
    k = config.tol("fit_factor")
    rows = [[M, j, la + lb, e, e * M, r] for M, j, e, r in zip(seps, joints, errs, ratios)]
    checks = {
        "error_decreasing": _strictly_decreasing(errs, floor=0.0),
        "fits_C_over_M": all(1 / k <= r <= k for r in ratios),
    }
    summary = {"cluster_log_tau": [la, lb], "C": C, "free_slope": slope}
    plot = PlotSpec("pinching", "M", "factorization error", {"error": [(M, e) for M, e in zip(seps, errs)], "C/M": [(M, C / M) for M in seps]}, logx=True, logy=True)
    return ExperimentResult("pinch", ["M", "log_tau_joint", "log_tau_sum", "error", "error_times_M", "fit_ratio"], rows, summary, checks, plot)


# -- continuum tau diagnostics ---------------------------------------------------------------

def run_tau(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """``log tau`` with conservation, monodromy, closed-loop and homography checks."""
    lam, Ns = config.lambdas, config.Ns
    if len(lam) == 0:
        raise ConfigError("no punctures")
    state = iso.solve_to(lam, Ns)
    lt = iso.log_tau(state)
    rows = []

    def add(name, value, tol):
        rows.append([name, float(value), tol, bool(value <= tol)])

    cons = max(iso.conservation(state).values())
    add("conservation", cons, config.tol("conservation"))
    xs = [float(lam.real.min()) - 1.0, float(lam.real.mean()) + 0.01, float(lam.real.max()) + 1.0]
    dets = [abs(np.linalg.det(iso.fundamental_solution(state, iso.real_axis_contour(state, x))) - 1) for x in xs]
    add("det_Y0_minus_one", max(dets), config.tol("det_y0"))

    fresh = iso.init_boundary(lam.real, Ns, state.eps0)
    traces = [abs(np.trace(iso.monodromy(fresh, k)) - 2) for k in range(len(lam))]
    add("fresh_trace_minus_two", max(traces), config.tol("trace"))
    # macroscopic deformation: raise the first puncture, then compare monodromy
    k0 = int(np.argmin(lam.real))
    before = [iso.monodromy(state, k) for k in range(len(lam))]
    moved = iso.deform(state, k0, [lam[k0], lam[k0] + 0.5j, lam[k0] + 0.5j - 0.25])
    after = [iso.monodromy(moved, k) for k in range(len(lam))]
    add("monodromy_change", max(np.abs(a - b).max() for a, b in zip(after, before)), config.tol("monodromy"))
    add("conservation_after_deformation", max(iso.conservation(moved).values()), config.tol("conservation"))

    z = lam[k0]
    r = 0.2 * min(z.imag, min((abs(z - w) for j, w in enumerate(lam) if j != k0), default=1.0))
    square = [z, z + r, z + r + 1j * r, z + 1j * r, z]
    back = iso.deform(state, k0, square)
    add("closed_loop_log_tau", abs(back.log_tau_acc - state.log_tau_acc), config.tol("closed"))
    add("closed_loop_residues", float(np.abs(back.residues - state.residues).max()), config.tol("closed"))

    scaled = iso.mobius_image(state, math.sqrt(2.0), 0.0, 0.0, 1 / math.sqrt(2.0))
    add("mobius_scaling", abs(iso.log_tau(scaled) - lt), config.tol("mobius"))
    shifted = iso.mobius_image(state, 1.0, 0.7, 0.0, 1.0)
    add("mobius_translation", abs(iso.log_tau(shifted) - lt), config.tol("mobius"))

    checks = {r[0]: r[3] for r in rows}
    summary = {"log_tau": lt, "state": json.loads(iso.state_to_json(state))}
    sweep = io.StringIO()
    w = csv.writer(sweep, lineterminator="\n")
    w.writerow(["config_id", "log_tau", *checks])
    w.writerow([0, repr(lt), *checks.values()])
    artifacts = {"tau_sweep.csv": sweep.getvalue(), "tau_state.json": iso.state_to_json(state)}
    return ExperimentResult("tau", ["quantity", "value", "tolerance", "pass"], rows, summary, checks, artifacts=artifacts)


# -- Monte Carlo ------------------------------------------------------------------------------

def _lattice_setup(config: ExperimentConfig):
    if config.grid is None:
        raise ConfigError("grid [m, n] is required")
    m, n = config.grid
    d = build_domain(int(m), int(n), 1.0)
    faces = [tuple(int(v) for v in f) for f in (config.faces or [])]
    return d, faces


def run_mc(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Sampled loop-holonomy average against the exact determinant ratio."""
    d, faces = _lattice_setup(config)
    rep = representation(d, faces, config.Ns)
    exact = det_ratio(assemble(d, rep))
    t0 = time.perf_counter()
    mean, se, vals = mc_correlator(d, rep, config.samples, config.seed, threads=threads, return_values=True)
    z = (mean - exact) / se if se > 0 else 0.0
    checks = {"within_k_stderr": abs(mean - exact) <= config.tol("z") * se or mean == exact}
    summary = {"det_ratio": exact, "mean": mean, "stderr": se, "z": z, "pairs": config.samples, "seconds": time.perf_counter() - t0}
    rows = [[i, float(v)] for i, v in enumerate(vals)]
    return ExperimentResult("mc", ["sample_index", "product_value"], rows, summary, checks)


def run_tail(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Tail of the diameter of the double-dimer loop through a marked bottom edge.

    The fitted slope is reported, not enforced; only monotonicity of the
    empirical tail is checked.
    """
    d, _ = _lattice_setup(config)
    radii = sorted(float(r) for r in config.radii)
    rows = loop_diameter_tail(d, radii, config.samples, config.seed, threads=threads)
    slope = tail_slope(rows)
    ps = [r[1] for r in rows]
    checks = {"tail_decreasing": all(b <= a for a, b in zip(ps, ps[1:]))}
    summary = {
        "slope": slope,
        "slope_in_range": bool(config.tol("slope_lo") <= slope <= config.tol("slope_hi")),
        "n_pos": rows[0][3] if rows else 0,
    }
    plot = PlotSpec("loop diameter tail", "R", "P(diam >= R)", {"tail": [(r[0], r[1]) for r in rows if r[1] > 0]}, logx=True, logy=True)
    return ExperimentResult("tail", ["R", "p_hat", "stderr", "n_pos"], [list(r) for r in rows], summary, checks, plot)


# -- SLE drift -------------------------------------------------------------------------------

def run_sle_drift(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Mean increment of ``tau * Y_0(Z_t)`` along short SLE_4 paths."""
    res = martingale_statistic(config.lambdas, config.Ns, config.samples, config.seed, config.h, config.horizon)
    entries = ["M00", "M01", "M10", "M11"]
    cols = ["path_id", "stop_time"]
    cols += [f"{e}_{p}_{t}" for t in ("0", "T") for e in entries for p in ("re", "im")]
    M0 = res.M0.reshape(-1)
    rows = []
    for i in range(res.paths):
        Mt = res.M_end[i].reshape(-1)
        row = [i, float(res.stop_time[i])]
        row += [v for c in M0 for v in (c.real, c.imag)]
        row += [v for c in Mt for v in (c.real, c.imag)]
        rows.append(row)
    checks = {
        "zero_drift": res.passes(config.tol("z")),
        "discard_fraction": res.discard_fraction < config.tol("discard"),
        "trace_sq_vanishes": res.max_trace_sq <= config.tol("trace_sq"),
        "det_M_equals_tau_sq": res.max_det_error <= config.tol("det_m"),
    }
    return ExperimentResult("sle-drift", cols, rows, res.summary(), checks)


RUNNERS = {
    "oracle": run_oracle_suite,
    "converge": run_convergence,
    "variation": run_variation_check,
    "boundary": run_boundary_sweep,
    "pinch": run_pinch,
    "tau": run_tau,
    "mc": run_mc,
    "tail": run_tail,
    "sle-drift": run_sle_drift,
}


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    return RUNNERS[config.experiment](config, threads=threads)


def load_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.from_json(Path(path).read_text())
