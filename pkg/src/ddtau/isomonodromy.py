"""Schlesinger flow for mirror-symmetric Fuchsian systems and their tau-functions.

A state holds ``n`` punctures ``lambda_k`` in the upper half-plane together with
traceless residues ``A_k``.  The Fuchsian system lives on all ``2n`` points:
the mirror ``conj(lambda_k)`` carries the residue ``conj(A_k)``.  Only the upper
half is stored; mirror quantities are rebuilt by conjugation so the real
structure holds exactly.

``log tau`` integrates the one-form
``1/2 sum_{i != j} Tr(A_i A_j) d(lambda_i - lambda_j) / (lambda_i - lambda_j)``
over all ``2n`` points and vanishes for punctures on the real axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .lattice import is_nilpotent

RTOL = 1e-10
ATOL = 1e-12
CONSERVATION_TOL = 1e-8


class ImaginaryLogTauError(ArithmeticError):
    """log tau acquired an imaginary part above tolerance."""

    def __init__(self, residue: float):
        super().__init__(f"imaginary part of log tau is {residue:.3e}")
        self.residue = residue


class CollisionError(ValueError):
    """A path or contour comes too close to a puncture."""


@dataclass(frozen=True, eq=False)
class SchlesingerState:
    lambdas: np.ndarray
    residues: np.ndarray
    log_tau_acc: complex = 0j
    nilpotents: np.ndarray = field(default=None, repr=False)
    eps0: float = 0.0

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=complex).reshape(-1)
        A = np.asarray(self.residues, dtype=complex).reshape(-1, 2, 2)
        if len(lam) != len(A):
            raise ValueError("one residue per puncture")
        if np.any(lam.imag <= 0):
            raise ValueError("punctures must lie in the upper half-plane")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "residues", A)
        object.__setattr__(self, "log_tau_acc", complex(self.log_tau_acc))
        if self.nilpotents is not None:
            object.__setattr__(self, "nilpotents", np.asarray(self.nilpotents, float).reshape(-1, 2, 2))

    @property
    def n(self) -> int:
        return len(self.lambdas)

    def all_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Punctures and residues of all ``2n`` points (upper half first)."""
        return (
            np.concatenate([self.lambdas, self.lambdas.conj()]),
            np.concatenate([self.residues, self.residues.conj()]),
        )

    def diameter(self) -> float:
        pts, _ = self.all_points()
        if len(pts) < 2:
            return 0.0
        return float(np.max(np.abs(pts[:, None] - pts[None, :])))


# -- initial data ----------------------------------------------------------------

def init_boundary(xs: Sequence[float], Ns, eps: float = 1e-3) -> SchlesingerState:
    """Punctures at ``x_k + i eps`` with the boundary residues ``A_k = i N_k / (2 pi)``."""
    xs = np.asarray(xs, dtype=float).reshape(-1)
    Ns = np.asarray(Ns, dtype=float).reshape(-1, 2, 2)
    if len(xs) != len(Ns):
        raise ValueError("one nilpotent per puncture")
    if len(np.unique(xs)) != len(xs):
        raise ValueError("boundary positions must be distinct")
    if not eps > 0:
        raise ValueError("eps must be positive")
    for N in Ns:
        if not is_nilpotent(N):
            raise ValueError(f"{N.tolist()} is not nilpotent")
    A = 1j * Ns / (2 * math.pi)
    return SchlesingerState(xs + 1j * eps, A, 0j, Ns, float(eps))


# -- the flow ----------------------------------------------------------------------

def _commutator(X, Y):
    return X @ Y - Y @ X


def schlesinger_rhs(lam, lamdot, A):
    """Derivatives of ``A`` (upper half) and of ``log tau`` along a motion.

    ``lam``, ``lamdot``: (..., n) complex; ``A``: (..., n, 2, 2).  Leading
    dimensions are batch dimensions.
    """
    n = lam.shape[-1]
    L = np.concatenate([lam, lam.conj()], axis=-1)
    Ld = np.concatenate([lamdot, lamdot.conj()], axis=-1)
    AA = np.concatenate([A, A.conj()], axis=-3)
    diff = L[..., :, None] - L[..., None, :]
    ddot = Ld[..., :, None] - Ld[..., None, :]
    eye = np.eye(2 * n, dtype=bool)
    coef = np.where(eye, 0.0, ddot / np.where(eye, 1.0, diff))
    Au = AA[..., :n, None, :, :]
    Aj = AA[..., None, :, :, :]
    comm = Au @ Aj - Aj @ Au  # (..., n, 2n, 2, 2)
    dA = -np.einsum("...ij,...ijab->...iab", coef[..., :n, :], comm)
    trAA = np.einsum("...iab,...jba->...ij", AA, AA)
    dlog = 0.5 * np.sum(trAA * coef, axis=(-2, -1))
    return dA, dlog


def _segment_motion(a: complex, b: complex):
    """Parametrization ``t in [0, 1] -> (lambda, dlambda/dt)`` of a segment.

    Vertical segments use ``log Im`` as parameter so steps shrink near the
    real axis, where the mirror term behaves like ``1 / Im lambda``.
    """
    if a == b:
        return None
    if abs(a.real - b.real) <= 1e-15 * max(1.0, abs(a)) and a.imag > 0 and b.imag > 0:
        s0, s1 = math.log(a.imag), math.log(b.imag)
        x = a.real

        def motion(t):
            y = math.exp(s0 + (s1 - s0) * t)
            return complex(x, y), 1j * y * (s1 - s0)

        return motion

    def motion(t):
        return a + (b - a) * t, b - a

    return motion


def _pack(A, logtau):
    return np.concatenate([A.reshape(-1), [logtau]])


def _unpack(y, n):
    return y[:-1].reshape(n, 2, 2), y[-1]


def _check_clearance(state: SchlesingerState, k: int, points, d_min: float):
    lam = state.lambdas
    # the puncture's own mirror is handled by the flow itself
    others = [lam[j] for j in range(state.n) if j != k]
    others += [lam[j].conjugate() for j in range(state.n) if j != k]
    for p in points:
        if p.imag <= 0:
            raise CollisionError(f"path leaves the upper half-plane at {p}")
        for q in others:
            if abs(p - q) < d_min:
                raise CollisionError(f"path passes within {abs(p - q):.2e} of puncture {q}")


def _segment_samples(a: complex, b: complex, count: int = 64):
    motion = _segment_motion(a, b)
    if motion is None:
        return [a]
    return [motion(t)[0] for t in np.linspace(0.0, 1.0, count)]


def deform(
    state: SchlesingerState,
    k: int,
    path: Sequence[complex],
    rtol: float = RTOL,
    atol: float = ATOL,
    d_min: float | None = None,
) -> SchlesingerState:
    """Move puncture ``k`` along a polyline, keeping the others fixed."""
    path = [complex(p) for p in path]
    if not path:
        return state
    if abs(path[0] - state.lambdas[k]) > 1e-12 * max(1.0, abs(path[0])):
        path = [complex(state.lambdas[k])] + path
    if d_min is None:
        d_min = 1e-3 * max(state.diameter(), 1e-3)
    samples = [p for a, b in zip(path, path[1:]) for p in _segment_samples(a, b)]
    _check_clearance(state, k, samples, d_min)
    lam = state.lambdas.copy()
    A = state.residues.copy()
    logtau = state.log_tau_acc
    n = state.n
    for a, b in zip(path, path[1:]):
        motion = _segment_motion(a, b)
        if motion is None:
            continue

        def rhs(t, y, motion=motion):
            Ak, _ = _unpack(y, n)
            pos, vel = motion(t)
            lam_t = lam.copy()
            lam_t[k] = pos
            v = np.zeros(n, dtype=complex)
            v[k] = vel
            dA, dlog = schlesinger_rhs(lam_t, v, Ak)
            return _pack(dA, dlog)

        sol = solve_ivp(rhs, (0.0, 1.0), _pack(A, logtau), method="RK45", rtol=rtol, atol=atol)
        if not sol.success:
            raise ArithmeticError(f"Schlesinger integration failed: {sol.message}")
        A, logtau = _unpack(sol.y[:, -1], n)
        lam[k] = b
    return replace(state, lambdas=lam, residues=A, log_tau_acc=logtau)


def solve_to(
    targets: Sequence[complex],
    Ns,
    eps: float = 1e-3,
    base: Sequence[float] | None = None,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> SchlesingerState:
    """Integrate from the real axis to the puncture configuration ``targets``.

    Puncture ``k`` starts at ``base[k] + i eps`` (default ``Re targets[k]``),
    rises vertically to its target height and then moves horizontally.  The
    punctures are processed from left to right.
    """
    targets = np.asarray(targets, dtype=complex).reshape(-1)
    if np.any(targets.imag <= 0):
        raise ValueError("targets must lie in the upper half-plane")
    if len(np.unique(targets)) != len(targets):
        raise ValueError("targets must be distinct")
    xs = targets.real if base is None else np.asarray(base, float)
    if len(np.unique(xs)) != len(xs):
        raise ValueError("punctures share a real part; pass distinct base positions")
    state = init_boundary(xs, Ns, eps)
    for k in np.argsort(xs):
        t = targets[k]
        if t.imag < eps:
            raise ValueError("target lies below the initial lift height")
        path = [complex(xs[k], eps), complex(xs[k], t.imag), t]
        state = deform(state, int(k), path, rtol=rtol, atol=atol)
    return state


def log_tau(state: SchlesingerState, tol: float = 1e-7) -> float:
    """Real part of the accumulated log tau; raises if the imaginary part exceeds ``tol``."""
    im = abs(state.log_tau_acc.imag)
    if im > tol:
        raise ImaginaryLogTauError(im)
    return float(state.log_tau_acc.real)


def conservation(state: SchlesingerState) -> dict:
    """Magnitudes that the flow must keep at zero."""
    A = state.residues
    tr = np.abs(np.trace(A, axis1=1, axis2=2))
    tr2 = np.abs(np.einsum("kab,kba->k", A, A))
    total = np.abs((A + A.conj()).sum(axis=0)).max() if len(A) else 0.0
    return {
        "trace": float(tr.max(initial=0.0)),
        "trace_sq": float(tr2.max(initial=0.0)),
        "total_residue": float(total),
    }


def check_conservation(state: SchlesingerState, tol: float = CONSERVATION_TOL) -> float:
    worst = max(conservation(state).values())
    if worst > tol:
        raise ArithmeticError(f"conserved quantities drifted by {worst:.3e}")
    return worst


# -- fundamental solutions ------------------------------------------------------------

def connection(state: SchlesingerState, z):
    """``A(z) = sum A_i / (z - lambda_i)`` over all ``2n`` points."""
    L, AA = state.all_points()
    z = np.asarray(z, dtype=complex)
    w = 1.0 / (z[..., None] - L)
    return np.einsum("...i,iab->...ab", w, AA)


def infinity_expansion(state: SchlesingerState, R0: complex) -> np.ndarray:
    """``Y(R0) = Id - B/R0 + (B^2 - C)/(2 R0^2)`` with ``B, C`` the first moments."""
    L, AA = state.all_points()
    B = np.einsum("i,iab->ab", L, AA)
    C = np.einsum("i,iab->ab", L**2, AA)
    return np.eye(2) - B / R0 + (B @ B - C) / (2 * R0**2)


def default_base_point(state: SchlesingerState) -> float:
    pts, _ = state.all_points()
    extent = float(np.max(np.abs(pts))) if len(pts) else 0.0
    return 1000.0 * (state.diameter() + extent + 1.0)


@dataclass(frozen=True)
class Contour:
    """Polyline starting on the positive real axis at the base point ``R0``."""

    points: tuple[complex, ...]

    @property
    def start(self) -> complex:
        return self.points[0]

    def check(self, state: SchlesingerState, d_min: float | None = None) -> None:
        if d_min is None:
            d_min = 1e-3 * max(state.diameter(), 1e-3)
        L, _ = state.all_points()
        for a, b in zip(self.points, self.points[1:]):
            # distance from each puncture to the segment
            d = b - a
            t = np.clip(((L - a) * np.conj(d)).real / max(abs(d) ** 2, 1e-300), 0.0, 1.0)
            dist = np.abs(a + t * d - L)
            if np.any(dist < d_min):
                raise CollisionError(f"contour segment {a}->{b} passes within {dist.min():.2e} of a puncture")


def real_axis_contour(state: SchlesingerState, x: float, R0: float | None = None) -> Contour:
    """From ``R0`` along the real axis to the real point ``x``."""
    R0 = default_base_point(state) if R0 is None else R0
    return Contour((complex(R0), complex(x)))


def transport(state: SchlesingerState, points: Sequence[complex], Y0: np.ndarray, rtol=RTOL, atol=ATOL):
    """Solve ``dY = A(z) Y dz`` along a polyline from ``Y0``."""
    Y = np.asarray(Y0, dtype=complex).copy()
    L, AA = state.all_points()
    for a, b in zip(points, points[1:]):
        a, b = complex(a), complex(b)
        if a == b:
            continue
        d = b - a
        # parametrize by log-distance when heading far out, linearly otherwise

        def rhs(t, y, a=a, d=d):
            z = a + d * t
            Az = np.einsum("i,iab->ab", 1.0 / (z - L), AA)
            return ((Az @ y.reshape(2, 2)) * d).reshape(-1)

        sol = solve_ivp(rhs, (0.0, 1.0), Y.reshape(-1), method="RK45", rtol=rtol, atol=atol)
        if not sol.success:
            raise ArithmeticError(f"Fuchsian transport failed: {sol.message}")
        Y = sol.y[:, -1].reshape(2, 2)
    return Y


def _refine(points: Sequence[complex], R0: float) -> list[complex]:
    """Insert geometric waypoints on the long leg from ``R0`` so steps stay relative."""
    out = [complex(points[0])]
    for b in points[1:]:
        a = out[-1]
        if abs(b - a) > 10 and abs(a.imag) < 1e-12 and abs(b.imag) < 1e-12 and a.real > 0 and b.real < a.real:
            x = a.real
            stop = max(b.real, 1.0)
            while x / 4 > stop:
                x /= 4
                out.append(complex(x))
        out.append(complex(b))
    return out


def fundamental_solution(state: SchlesingerState, contour: Contour, d_min: float | None = None) -> np.ndarray:
    """``Y_0`` (normalized to ``Id`` at infinity) continued along ``contour``."""
    contour.check(state, d_min)
    R0 = contour.start
    Y = infinity_expansion(state, R0)
    return transport(state, _refine(contour.points, abs(R0)), Y)


def standard_loop(state: SchlesingerState, k: int, R0: float | None = None) -> tuple[list[complex], list[complex]]:
    """Access path and counterclockwise square around puncture ``k``.

    The access path runs along the real axis from ``R0`` to ``Re lambda_k`` and
    then vertically up to the square, whose half-side stays below half the
    distance from ``lambda_k`` to every other point.
    """
    R0 = default_base_point(state) if R0 is None else R0
    L, _ = state.all_points()
    lam = state.lambdas[k]
    others = np.delete(L, k)
    r = 0.4 * float(np.min(np.abs(others - lam)))
    r = min(r, 0.5 * lam.imag)
    access = [complex(R0), complex(lam.real), complex(lam.real, lam.imag - r)]
    # collision of the vertical access leg with another puncture
    for j, q in enumerate(state.lambdas):
        if j != k and abs(q.real - lam.real) < r and q.imag < lam.imag:
            raise CollisionError("another puncture sits below the loop access path")
    c = lam
    square = [
        complex(c.real, c.imag - r),
        complex(c.real + r, c.imag - r),
        complex(c.real + r, c.imag + r),
        complex(c.real - r, c.imag + r),
        complex(c.real - r, c.imag - r),
        complex(c.real, c.imag - r),
    ]
    return access, square


def monodromy(state: SchlesingerState, k: int, R0: float | None = None) -> np.ndarray:
    """Monodromy of ``Y_0`` around puncture ``k`` along the standard loop.

    Continuing ``Y_0`` around a counterclockwise loop returns ``Y_0 rho^{-1}``;
    the right factor is the same at every point, so it is read off where the
    access path meets the loop.
    """
    access, square = standard_loop(state, k, R0)
    d_min = 1e-6
    Contour(tuple(access + square[1:])).check(state, d_min)
    Ystart = infinity_expansion(state, access[0])
    Yp = transport(state, _refine(access, abs(access[0])), Ystart)
    Yq = transport(state, square, Yp)
    return np.linalg.solve(Yq, Yp)


# -- derivatives of log tau ------------------------------------------------------------

def regular_part(state: SchlesingerState, k: int) -> np.ndarray:
    """``R_k = sum_{j != k} A_j / (lambda_k - lambda_j)`` over all ``2n`` points."""
    L, AA = state.all_points()
    mask = np.arange(len(L)) != k
    return np.einsum("i,iab->ab", 1.0 / (L[k] - L[mask]), AA[mask])


def variation_prediction(state: SchlesingerState, k: int) -> complex:
    """``d log tau / d lambda_k = Tr(A_k R_k)``."""
    return complex(np.trace(state.residues[k] @ regular_part(state, k)))


def robin_check(state: SchlesingerState, k: int, h: float = 1e-4) -> tuple[complex, complex]:
    """Finite-difference Wirtinger derivative of log tau against ``Tr(A_k R_k)``."""
    lam = state.lambdas[k]
    vals = {}
    for step in (h, -h, 1j * h, -1j * h):
        moved = deform(state, k, [lam, lam + step], d_min=0.5 * h)
        vals[step] = moved.log_tau_acc
    dx = (vals[h] - vals[-h]) / (2 * h)
    dy = (vals[1j * h] - vals[-1j * h]) / (2 * h)
    lhs = 0.5 * (dx - 1j * dy)
    return complex(lhs), variation_prediction(state, k)


# -- homographies --------------------------------------------------------------------------

def mobius_image(state: SchlesingerState, a: float, b: float, c: float, d: float, eps: float | None = None) -> SchlesingerState:
    """Recompute the state at the image punctures ``(a z + b)/(c z + d)``."""
    if a * d - b * c <= 0:
        raise ValueError("homography must preserve the upper half-plane")
    if state.nilpotents is None:
        raise ValueError("state does not record its nilpotents")
    lam = state.lambdas
    den = c * lam + d
    if np.any(np.abs(den) < 1e-8):
        raise ValueError("a puncture is sent to infinity")
    images = (a * lam + b) / den
    return solve_to(images, state.nilpotents, state.eps0 if eps is None else eps)


# -- serialization ------------------------------------------------------------------------

def state_to_json(state: SchlesingerState) -> str:
    data = {
        "lambdas": [[z.real, z.imag] for z in state.lambdas],
        "A_real": state.residues.real.tolist(),
        "A_imag": state.residues.imag.tolist(),
        "log_tau": [state.log_tau_acc.real, state.log_tau_acc.imag],
        "Ns": None if state.nilpotents is None else state.nilpotents.tolist(),
        "eps": state.eps0,
    }
    return json.dumps(data)


def state_from_json(text: str) -> SchlesingerState:
    data = json.loads(text)
    lam = np.array([complex(x, y) for x, y in data["lambdas"]])
    A = np.asarray(data["A_real"]) + 1j * np.asarray(data["A_imag"])
    lt = complex(*data["log_tau"])
    return SchlesingerState(lam, A, lt, data.get("Ns"), data.get("eps", 0.0))
