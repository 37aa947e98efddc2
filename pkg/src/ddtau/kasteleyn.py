"""Kasteleyn matrices, twisted SL2 operators and their determinant ratios.

The scalar matrix ``K`` is indexed ``(white, black)``.  The twisted operator
replaces the scalar entry of every cut-crossing edge by the 2x2 block
``K(w, b) J_e``.  Its determinant relative to ``K (x) Id`` is obtained from a
``2c x 2c`` reduced matrix built out of ``c`` sparse solves against ``K``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import Edge, LatticeDomain, Representation, Vertex

COND_LIMIT = 1e12


class SingularKasteleynError(ValueError):
    """Raised when the Kasteleyn matrix has no matchings (singular)."""


def kasteleyn_matrix(domain: LatticeDomain) -> sp.csc_matrix:
    """Sparse real Kasteleyn matrix, rows white and columns black."""
    rows, cols, vals = [], [], []
    for a, b in domain.edges():
        w, bl = domain.orient((a, b))
        rows.append(domain.white_index(w))
        cols.append(domain.black_index(bl))
        vals.append(float(domain.edge_sign((a, b))))
    n = domain.n_white
    return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))


def _perm_sign(perm: np.ndarray) -> int:
    perm = np.asarray(perm)
    seen = np.zeros(len(perm), dtype=bool)
    sign = 1
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


class KasteleynFactor:
    """Sparse LU of ``K`` with cached columns of ``K^{-1}``.

    Shared by every twisted operator built on the same domain.  Column solves
    are cached, so repeated determinant ratios with overlapping cuts are cheap.
    """

    def __init__(self, domain: LatticeDomain):
        self.domain = domain
        self.K = kasteleyn_matrix(domain)
        try:
            self.lu = spla.splu(self.K, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularKasteleynError(str(exc)) from exc
        diag = self.lu.U.diagonal()
        if np.any(diag == 0):
            raise SingularKasteleynError("Kasteleyn matrix is singular")
        self.log_abs_det = float(np.sum(np.log(np.abs(diag))))
        self.det_sign = int(
            np.prod(np.sign(diag)) * _perm_sign(self.lu.perm_r) * _perm_sign(self.lu.perm_c)
        )
        self._cols: dict[int, np.ndarray] = {}

    def inverse_column(self, w: int) -> np.ndarray:
        """``K^{-1}[:, w]``, indexed by black vertices."""
        col = self._cols.get(w)
        if col is None:
            rhs = np.zeros(self.K.shape[0])
            rhs[w] = 1.0
            col = self.lu.solve(rhs)
            col.setflags(write=False)
            self._cols[w] = col
        return col

    def inverse_columns(self, ws) -> np.ndarray:
        ws = list(ws)
        missing = [w for w in dict.fromkeys(ws) if w not in self._cols]
        if missing:
            rhs = np.zeros((self.K.shape[0], len(missing)))
            rhs[missing, np.arange(len(missing))] = 1.0
            sol = self.lu.solve(rhs)
            for j, w in enumerate(missing):
                col = np.ascontiguousarray(sol[:, j])
                col.setflags(write=False)
                self._cols[w] = col
        if not ws:
            return np.zeros((self.K.shape[0], 0))
        return np.column_stack([self._cols[w] for w in ws])

    def entry(self, w: int, b: int) -> float:
        return float(self.K[w, b])


def edge_key(domain: LatticeDomain, e: Edge) -> tuple[Vertex, Vertex]:
    """Canonical ``(white, black)`` form of an edge."""
    return domain.orient(e)


def jump_map(domain: LatticeDomain, rep: Representation) -> dict[tuple[Vertex, Vertex], np.ndarray]:
    """Jump matrix ``J_e`` for every cut-crossing edge keyed by ``(white, black)``.

    ``J_e = Id + N_i`` when the black endpoint lies on the left of cut ``i``
    (oriented from the puncture to the boundary) and ``Id - N_i`` otherwise.
    """
    out: dict[tuple[Vertex, Vertex], np.ndarray] = {}
    eye = np.eye(2)
    for cut, N in zip(rep.cuts, rep.nilpotents):
        for e, left in zip(cut.crossings, cut.black_left):
            if not domain.has_edge(e):
                raise ValueError(f"cut edge {e} lies outside the domain")
            key = edge_key(domain, e)
            if key in out:
                raise ValueError(f"edge {e} is crossed twice")
            out[key] = eye + N if left else eye - N
    return out


@dataclass
class TwistedOperator:
    """Scalar Kasteleyn matrix plus 2x2 jump factors on cut-crossing edges."""

    domain: LatticeDomain
    rep: Representation
    factor: KasteleynFactor
    twists: list[tuple[tuple[Vertex, Vertex], np.ndarray]] = field(default_factory=list)

    @property
    def base(self) -> sp.csc_matrix:
        return self.factor.K

    def dense(self) -> np.ndarray:
        """Full ``2N x 2N`` twisted matrix (small domains only)."""
        K = self.base.toarray()
        n = K.shape[0]
        big = np.kron(K, np.eye(2))
        for (w, b), J in self.twists:
            i, j = self.domain.white_index(w), self.domain.black_index(b)
            big[2 * i : 2 * i + 2, 2 * j : 2 * j + 2] = K[i, j] * J
        assert big.shape == (2 * n, 2 * n)
        return big


def assemble(
    domain: LatticeDomain, rep: Representation, factor: KasteleynFactor | None = None
) -> TwistedOperator:
    if factor is None:
        factor = KasteleynFactor(domain)
    elif factor.domain is not domain:
        raise ValueError("factor belongs to a different domain")
    twists = list(jump_map(domain, rep).items())
    return TwistedOperator(domain, rep, factor, twists)


def log_det_K(domain: LatticeDomain) -> tuple[int, float]:
    """Sign and log-magnitude of ``det K``."""
    f = KasteleynFactor(domain)
    return f.det_sign, f.log_abs_det


def count_matchings(domain: LatticeDomain) -> int:
    try:
        f = KasteleynFactor(domain)
    except SingularKasteleynError:
        return 0
    if f.log_abs_det > 700:
        raise OverflowError(
            f"matching count exp({f.log_abs_det:.1f}) overflows double precision"
        )
    value = math.exp(f.log_abs_det)
    count = round(value)
    if abs(value - count) > 1e-6 * max(1.0, value):
        raise ArithmeticError(f"|det K| = {value!r} is not close to an integer")
    return int(count)


def inverse_entries(op: TwistedOperator, pairs) -> list[float]:
    """Entries ``K^{-1}(b, w)`` for ``(black, white)`` vertex pairs."""
    d = op.domain
    out = []
    for b, w in pairs:
        col = op.factor.inverse_column(d.white_index(w))
        out.append(float(col[d.black_index(b)]))
    return out


def reduced_matrix(op: TwistedOperator) -> np.ndarray:
    """The ``2c x 2c`` matrix ``I + K^{-1}(b_e', w_e) K(w_e, b_e)(J_e - I)``."""
    d = op.domain
    c = len(op.twists)
    if c == 0:
        return np.eye(0)
    ws = [d.white_index(w) for (w, _), _ in op.twists]
    bs = [d.black_index(b) for (_, b), _ in op.twists]
    cols = op.factor.inverse_columns(ws)
    G = cols[bs, :]  # G[e', e] = K^{-1}(b_e', w_e)
    kvals = np.array([op.factor.entry(w, b) for w, b in zip(ws, bs)])
    X = np.stack([k * (J - np.eye(2)) for k, ((_, _), J) in zip(kvals, op.twists)])
    D = np.einsum("pe,eij->piej", G, X).reshape(2 * c, 2 * c)
    return np.eye(2 * c) + D


def det_ratio(op: TwistedOperator, *, return_info: bool = False):
    """``det K_rho / det(K (x) Id)`` by block reduction.

    With ``return_info`` a dict with the 2-norm condition number of the reduced
    matrix and a ``flagged`` entry (condition above ``COND_LIMIT``) is returned
    alongside.
    """
    if not op.twists:
        value, cond = 1.0, 1.0
    else:
        D = reduced_matrix(op)
        sign, logabs = np.linalg.slogdet(D)
        value = float(sign * math.exp(logabs)) if sign != 0 else 0.0
        cond = float(np.linalg.cond(D))
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite determinant ratio, cond={cond:.3g}")
    if return_info:
        return value, {"cond": cond, "flagged": bool(cond > COND_LIMIT)}
    return value


def det_ratio_rank1(domain: LatticeDomain, cuts, chis, factor: KasteleynFactor | None = None) -> complex:
    """``det K_chi / det K`` for unit-modulus characters on the cuts.

    Crossing edges get ``chi`` when the black endpoint is on the left of the
    cut and ``conj(chi)`` otherwise.
    """
    chis = [complex(c) for c in chis]
    if len(chis) != len(cuts):
        raise ValueError("one character per cut")
    for c in chis:
        if abs(abs(c) - 1.0) > 1e-12:
            raise ValueError("characters must have unit modulus")
    if factor is None:
        factor = KasteleynFactor(domain)
    ws, bs, xs = [], [], []
    for cut, chi in zip(cuts, chis):
        for e, left in zip(cut.crossings, cut.black_left):
            w, b = domain.orient(e)
            wi, bi = domain.white_index(w), domain.black_index(b)
            ws.append(wi)
            bs.append(bi)
            xs.append(factor.entry(wi, bi) * ((chi if left else chi.conjugate()) - 1.0))
    if not ws:
        return 1.0 + 0j
    cols = factor.inverse_columns(ws)
    D = np.eye(len(ws)) + cols[bs, :] * np.asarray(xs)[None, :]
    return complex(np.linalg.det(D))


def det_ratio_record(op: TwistedOperator) -> dict:
    """JSON-ready summary of one twisted determinant evaluation."""
    value, info = det_ratio(op, return_info=True)
    d = op.domain
    return {
        "m": d.m,
        "n": d.n,
        "delta": d.delta,
        "punctures": [{"x": f[0], "y": f[1]} for f in op.rep.punctures],
        "N": op.rep.nilpotents.tolist(),
        "det_ratio": value,
        "cond": info["cond"],
        "log_det_K": op.factor.log_abs_det,
    }
