"""Chordal SLE driving of punctures and the martingale ``tau * Y_0(Z_t)``.

Punctures follow the Loewner flow ``d Lambda = 2 / (Lambda - Z) dt`` with driver
``Z = sqrt(kappa) B``.  Residues and ``log tau`` are carried along the same
trajectories by the Schlesinger flow, and ``Y_0(Z_t)`` is evaluated by
transport along the real axis from a far base point.  Since the residues stay
nilpotent the ``g'`` prefactor of the martingale is identically one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .isomonodromy import SchlesingerState, default_base_point, schlesinger_rhs, solve_to

ROUNDOFF = 1e-12


@dataclass(frozen=True, eq=False)
class SlePath:
    """Batch of driven trajectories; arrays have a leading path axis."""

    h: float
    T: float
    kappa: float
    times: np.ndarray  # (steps + 1,)
    driver: np.ndarray  # (paths, steps + 1)
    lambdas: np.ndarray  # (paths, steps + 1, n)
    stop_index: np.ndarray  # (paths,) last valid step
    aborted: np.ndarray  # (paths,) left the upper half-plane

    @property
    def stop_time(self) -> np.ndarray:
        return self.times[self.stop_index]


def _driver(rng: np.random.Generator, paths: int, steps: int, h: float, kappa: float) -> np.ndarray:
    inc = math.sqrt(kappa * h) * rng.standard_normal((paths, steps))
    return np.concatenate([np.zeros((paths, 1)), np.cumsum(inc, axis=1)], axis=1)


def _loewner_step(lam, Z, dt):
    """Classical RK4 step of ``dLambda = 2/(Lambda - Z) dt`` with ``Z`` frozen.

    Uses the same stage arithmetic as the co-integrated flow below, so both
    produce identical trajectories.
    """
    k1 = 2.0 / (lam - Z)
    k2 = 2.0 / ((lam + 0.5 * dt * k1) - Z)
    k3 = 2.0 / ((lam + 0.5 * dt * k2) - Z)
    k4 = 2.0 / ((lam + dt * k3) - Z)
    return lam + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def evolve(
    lambdas,
    seed: int,
    h: float,
    T: float,
    r_min: float,
    paths: int = 1,
    kappa: float = 4.0,
) -> SlePath:
    """Drive punctures by chordal SLE_kappa started at 0, stopping near the tip."""
    lam0 = np.asarray(lambdas, dtype=complex).reshape(-1)
    if np.any(lam0.imag <= 0):
        raise ValueError("punctures must lie in the upper half-plane")
    if len(lam0) > 1:
        gaps = np.abs(lam0[:, None] - lam0[None, :])[~np.eye(len(lam0), dtype=bool)]
        if h > 1e-3 * float(gaps.min()) ** 2:
            raise ValueError("time step too large for the puncture separation")
    steps = int(round(T / h))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    Z = _driver(rng, paths, steps, h, kappa)
    lam = np.empty((paths, steps + 1, len(lam0)), dtype=complex)
    lam[:, 0] = lam0
    alive = np.ones(paths, dtype=bool)
    stop = np.full(paths, steps)
    aborted = np.zeros(paths, dtype=bool)
    close = np.min(np.abs(lam0[None, :] - Z[:, :1]), axis=1) < r_min
    stop[close] = 0
    alive &= ~close
    for s in range(steps):
        nxt = _loewner_step(lam[:, s], Z[:, s : s + 1], h)
        lam[:, s + 1] = np.where(alive[:, None], nxt, lam[:, s])
        bad = alive & (np.any(nxt.imag <= 0, axis=1) | ~np.all(np.isfinite(nxt), axis=1))
        aborted |= bad
        stop[bad] = s
        alive &= ~bad
        near = alive & (np.min(np.abs(nxt - Z[:, s + 1 : s + 2]), axis=1) < r_min)
        stop[near] = s + 1
        alive &= ~near
    return SlePath(h, T, kappa, np.arange(steps + 1) * h, Z, lam, stop, aborted)


# -- co-integrated Schlesinger flow -------------------------------------------------------

def _flow_rhs(lam, A, Z):
    v = 2.0 / (lam - Z)
    dA, dlog = schlesinger_rhs(lam, v, A)
    return v, dA, dlog



def _flow_step(lam, A, logtau, Z, dt):
    """Classical RK4 step of (Lambda, A, log tau) with the driver frozen."""
    k1 = _flow_rhs(lam, A, Z)
    k2 = _flow_rhs(lam + 0.5 * dt * k1[0], A + 0.5 * dt * k1[1], Z)
    k3 = _flow_rhs(lam + 0.5 * dt * k2[0], A + 0.5 * dt * k2[1], Z)
    k4 = _flow_rhs(lam + dt * k3[0], A + dt * k3[1], Z)
    w = dt / 6.0
    return (
        lam + w * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        A + w * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        logtau + w * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
    )


def _fuchs_rhs(L, AA, x, Y):
    w = 1.0 / (x[:, None] - L)
    Az = np.einsum("pi,piab->pab", w, AA)
    return Az @ Y


def real_axis_solution(lam, A, Z, R0: float, scale: float, n_far: int = 200, n_near: int = 400) -> np.ndarray:
    """Batched ``Y_0(Z)`` continued along the real axis from ``R0`` (RK4).

    The leg from ``R0`` to ``Z + scale`` is parametrized geometrically, the
    final leg of length ``scale`` linearly.
    """
    P = len(Z)
    L = np.concatenate([lam, lam.conj()], axis=1)
    AA = np.concatenate([A, A.conj()], axis=1)
    B = np.einsum("pi,piab->pab", L, AA)
    C = np.einsum("pi,piab->pab", L**2, AA)
    Y = np.broadcast_to(np.eye(2), (P, 2, 2)) - B / R0 + (B @ B - C) / (2 * R0**2)
    # geometric leg: x = Z + scale * exp(s)
    s0 = np.log((R0 - Z) / scale)
    ds = -s0 / n_far

    def f_geo(s, Y):
        x = Z + scale * np.exp(s)
        return _fuchs_rhs(L, AA, x, Y) * (scale * np.exp(s))[:, None, None]

    s = s0.copy()
    for _ in range(n_far):
        k1 = f_geo(s, Y)
        k2 = f_geo(s + 0.5 * ds, Y + 0.5 * ds[:, None, None] * k1)
        k3 = f_geo(s + 0.5 * ds, Y + 0.5 * ds[:, None, None] * k2)
        k4 = f_geo(s + ds, Y + ds[:, None, None] * k3)
        Y = Y + ds[:, None, None] / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        s = s + ds
    # linear leg from Z + scale down to Z
    dx = -scale / n_near
    x = Z + scale
    for _ in range(n_near):
        k1 = _fuchs_rhs(L, AA, x, Y)
        k2 = _fuchs_rhs(L, AA, x + 0.5 * dx, Y + 0.5 * dx * k1)
        k3 = _fuchs_rhs(L, AA, x + 0.5 * dx, Y + 0.5 * dx * k2)
        k4 = _fuchs_rhs(L, AA, x + dx, Y + dx * k3)
        Y = Y + dx / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        x = x + dx
    return Y


@dataclass(frozen=True)
class MartingaleResult:
    mean: np.ndarray  # (2, 2) complex mean of M_stop - M_0
    stderr: np.ndarray  # (2, 2) complex: real / imaginary standard errors
    M0: np.ndarray  # (2, 2)
    M_end: np.ndarray  # (paths, 2, 2), NaN for discarded paths
    stop_time: np.ndarray
    discarded: int
    paths: int
    max_trace_sq: float
    max_det_error: float

    @property
    def discard_fraction(self) -> float:
        return self.discarded / self.paths

    def z_scores(self) -> np.ndarray:
        """Entrywise ``mean / stderr`` for real and imaginary parts, shape (2, 2, 2)."""
        # stderr below round-off of M itself carries no statistical meaning
        floor = ROUNDOFF * max(1.0, float(np.abs(self.M0).max()))
        re = self.mean.real / np.maximum(self.stderr.real, floor)
        im = self.mean.imag / np.maximum(self.stderr.imag, floor)
        return np.stack([re, im])

    def passes(self, k: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.z_scores()) <= k))

    def summary(self) -> dict:
        return {
            "mean_real": self.mean.real.tolist(),
            "mean_imag": self.mean.imag.tolist(),
            "stderr_real": self.stderr.real.tolist(),
            "stderr_imag": self.stderr.imag.tolist(),
            "discard_fraction": self.discard_fraction,
            "paths": self.paths,
            "max_trace_sq": self.max_trace_sq,
            "max_det_error": self.max_det_error,
        }


def martingale_statistic(
    lambdas,
    Ns,
    paths: int,
    seed: int,
    h: float,
    T: float,
    r_min: float | None = None,
    eps: float = 1e-3,
    kappa: float = 4.0,
    reference: SchlesingerState | None = None,
) -> MartingaleResult:
    """Mean increment of ``M_t = tau(Lambda_t) Y_0(Z_t; Lambda_t)`` over SLE paths."""
    lam0 = np.asarray(lambdas, dtype=complex).reshape(-1)
    Ns = np.asarray(Ns, dtype=float).reshape(-1, 2, 2)
    if r_min is None:
        r_min = 0.05 * float(lam0.imag.min())
    state = reference if reference is not None else solve_to(lam0, Ns, eps)
    sle = evolve(lam0, seed, h, T, r_min, paths=paths, kappa=kappa)
    R0 = default_base_point(state)
    scale = 1.0 + float(np.max(np.abs(lam0)))

    A0 = state.residues
    lt0 = state.log_tau_acc
    Y0 = real_axis_solution(lam0[None], A0[None], np.zeros(1), R0, scale)[0]
    M0 = math.exp(lt0.real) * np.exp(1j * lt0.imag) * Y0

    lam = np.broadcast_to(lam0, (paths, len(lam0))).copy()
    A = np.broadcast_to(A0, (paths,) + A0.shape).copy()
    logtau = np.full(paths, lt0, dtype=complex)
    steps = len(sle.times) - 1
    for s in range(steps):
        active = s < sle.stop_index
        if not active.any():
            break
        Zs = sle.driver[:, s : s + 1]
        nl, nA, nt = _flow_step(lam, A, logtau, Zs, sle.h)
        lam = np.where(active[:, None], nl, lam)
        A = np.where(active[:, None, None, None], nA, A)
        logtau = np.where(active, nt, logtau)
    Zend = sle.driver[np.arange(paths), sle.stop_index]
    drift = np.max(np.abs(lam - sle.lambdas[np.arange(paths), sle.stop_index]))
    if drift > 1e-6:
        raise ArithmeticError(f"co-integrated punctures drifted from the Loewner paths by {drift:.2e}")
    Yend = real_axis_solution(lam, A, Zend, R0, scale)
    M_end = np.exp(logtau)[:, None, None] * Yend

    tr2 = float(np.abs(np.einsum("pkab,pkba->pk", A, A)).max(initial=0.0))
    det_err = float(np.abs(np.linalg.det(M_end) - np.exp(2 * logtau)).max(initial=0.0))
    discard = sle.aborted | ~np.all(np.isfinite(M_end), axis=(1, 2))
    keep = ~discard
    dM = M_end[keep] - M0
    k = int(keep.sum())
    mean = dM.mean(axis=0) if k else np.zeros((2, 2), complex)
    if k > 1:
        se = dM.real.std(axis=0, ddof=1) / math.sqrt(k) + 1j * dM.imag.std(axis=0, ddof=1) / math.sqrt(k)
    else:
        se = np.zeros((2, 2), complex)
    M_end = np.where(keep[:, None, None], M_end, np.nan)
    return MartingaleResult(mean, se, M0, M_end, sle.stop_time, int(discard.sum()), paths, tr2, det_err)
