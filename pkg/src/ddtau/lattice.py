"""Square-lattice box domains, Kasteleyn signs and dual-path branch cuts.

Vertices of a ``2m x 2n`` box are integer pairs ``(x, y)``; ``(x, y)`` is black
when ``x + y`` is even.  Vertex ``(x, y)`` sits at ``delta * (x + 1 + i (y + 1))``
so the bottom row is one mesh step above the real axis.  Bounded faces are
labelled by their lower-left corner and centred at
``delta * (x + 3/2 + i (y + 3/2))``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Vertex = tuple[int, int]
Edge = tuple[Vertex, Vertex]
Face = tuple[int, int]


@dataclass(frozen=True, eq=False)
class LatticeDomain:
    """A ``2m x 2n`` grid box with a real Kasteleyn signing.

    ``hsign[x, y]`` is the sign of the edge ``(x, y)-(x+1, y)`` and
    ``vsign[x, y]`` the sign of ``(x, y)-(x, y+1)``.
    """

    m: int
    n: int
    delta: float
    hsign: np.ndarray = field(repr=False)
    vsign: np.ndarray = field(repr=False)

    @property
    def cols(self) -> int:
        return 2 * self.m

    @property
    def rows(self) -> int:
        return 2 * self.n

    @property
    def n_black(self) -> int:
        return 2 * self.m * self.n

    @property
    def n_white(self) -> int:
        return 2 * self.m * self.n

    @property
    def n_vertices(self) -> int:
        return 4 * self.m * self.n

    @property
    def n_faces(self) -> int:
        return (self.cols - 1) * (self.rows - 1)

    # -- indexing -----------------------------------------------------------
    @staticmethod
    def is_black(v: Vertex) -> bool:
        return (v[0] + v[1]) % 2 == 0

    def contains(self, v: Vertex) -> bool:
        return 0 <= v[0] < self.cols and 0 <= v[1] < self.rows

    def black_index(self, v: Vertex) -> int:
        x, y = v
        if not self.contains(v) or (x + y) % 2:
            raise ValueError(f"{v} is not a black vertex of the domain")
        return y * self.m + x // 2

    def white_index(self, v: Vertex) -> int:
        x, y = v
        if not self.contains(v) or (x + y) % 2 == 0:
            raise ValueError(f"{v} is not a white vertex of the domain")
        return y * self.m + x // 2

    def black_vertex(self, i: int) -> Vertex:
        y, j = divmod(int(i), self.m)
        return (2 * j + y % 2, y)

    def white_vertex(self, i: int) -> Vertex:
        y, j = divmod(int(i), self.m)
        return (2 * j + (y + 1) % 2, y)

    def position(self, v: Vertex) -> complex:
        return self.delta * complex(v[0] + 1, v[1] + 1)

    def face_center(self, f: Face) -> complex:
        return self.delta * complex(f[0] + 1.5, f[1] + 1.5)

    def face_index(self, f: Face) -> int:
        if not self.has_face(f):
            raise ValueError(f"face {f} out of range")
        return f[1] * (self.cols - 1) + f[0]

    def face_from_index(self, i: int) -> Face:
        y, x = divmod(int(i), self.cols - 1)
        return (x, y)

    def has_face(self, f: Face) -> bool:
        return 0 <= f[0] < self.cols - 1 and 0 <= f[1] < self.rows - 1

    def nearest_face(self, z: complex) -> Face:
        """Face whose centre is closest to the point ``z``."""
        fx = int(np.clip(round(z.real / self.delta - 1.5), 0, self.cols - 2))
        fy = int(np.clip(round(z.imag / self.delta - 1.5), 0, self.rows - 2))
        return (fx, fy)

    # -- edges ----------------------------------------------------------------
    def edge_sign(self, e: Edge) -> int:
        (x1, y1), (x2, y2) = sorted(e)
        if y1 == y2 and x2 == x1 + 1:
            return int(self.hsign[x1, y1])
        if x1 == x2 and y2 == y1 + 1:
            return int(self.vsign[x1, y1])
        raise ValueError(f"{e} is not an edge of the grid")

    def has_edge(self, e: Edge) -> bool:
        a, b = e
        if not (self.contains(a) and self.contains(b)):
            return False
        return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1

    def orient(self, e: Edge) -> tuple[Vertex, Vertex]:
        """Return the edge as ``(white, black)``."""
        a, b = e
        return (b, a) if self.is_black(a) else (a, b)

    def neighbors(self, v: Vertex) -> list[Vertex]:
        x, y = v
        out = []
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            u = (x + dx, y + dy)
            if self.contains(u):
                out.append(u)
        return out

    def edges(self) -> Iterable[Edge]:
        for y in range(self.rows):
            for x in range(self.cols):
                if x + 1 < self.cols:
                    yield ((x, y), (x + 1, y))
                if y + 1 < self.rows:
                    yield ((x, y), (x, y + 1))

    def face_edges(self, f: Face) -> tuple[Edge, Edge, Edge, Edge]:
        """Bottom, right, top, left edges of a bounded face."""
        x, y = f
        return (
            ((x, y), (x + 1, y)),
            ((x + 1, y), (x + 1, y + 1)),
            ((x, y + 1), (x + 1, y + 1)),
            ((x, y), (x, y + 1)),
        )

    def with_flipped_sign(self, e: Edge) -> "LatticeDomain":
        """Copy of the domain with the sign of one edge reversed."""
        hs, vs = self.hsign.copy(), self.vsign.copy()
        (x1, y1), (x2, y2) = sorted(e)
        if y1 == y2:
            hs[x1, y1] *= -1
        else:
            vs[x1, y1] *= -1
        return _freeze(LatticeDomain(self.m, self.n, self.delta, hs, vs))


def _freeze(domain: LatticeDomain) -> LatticeDomain:
    domain.hsign.setflags(write=False)
    domain.vsign.setflags(write=False)
    return domain


def build_domain(m: int, n: int, delta: float = 1.0) -> LatticeDomain:
    """Box with ``2m`` vertex columns and ``2n`` rows at mesh ``delta``.

    Horizontal edges get sign +1 and the vertical edge above ``(x, y)`` gets
    ``(-1)**x``, which puts exactly one negative sign on every square face.
    """
    if int(m) != m or int(n) != n or m < 1 or n < 1:
        raise ValueError("m and n must be positive integers")
    if not delta > 0:
        raise ValueError("delta must be positive")
    m, n = int(m), int(n)
    hsign = np.ones((2 * m - 1, 2 * n), dtype=np.int8)
    vsign = np.empty((2 * m, 2 * n - 1), dtype=np.int8)
    vsign[:] = np.where(np.arange(2 * m) % 2 == 0, 1, -1)[:, None]
    return _freeze(LatticeDomain(m, n, float(delta), hsign, vsign))


def validate_kasteleyn(domain: LatticeDomain) -> bool:
    """True iff every bounded face carries an odd number of negative signs."""
    hs = domain.hsign.astype(int)
    vs = domain.vsign.astype(int)
    prod = hs[:, :-1] * hs[:, 1:] * vs[:-1, :] * vs[1:, :]
    return bool(np.all(prod == -1))


# -- branch cuts ----------------------------------------------------------------

_STEP_DIRECTION = {(0, -1): -1j, (0, 1): 1j, (1, 0): 1.0, (-1, 0): -1.0}


def _crossed_edge(f: Face, g: Face | None) -> tuple[Edge, complex]:
    """Primal edge shared by face ``f`` and the next dual vertex ``g``.

    ``g is None`` means leaving ``f`` downward through the bottom boundary.
    """
    x, y = f
    if g is None:
        if y != 0:
            raise ValueError("a cut can only exit through the bottom boundary")
        return ((x, 0), (x + 1, 0)), -1j
    step = (g[0] - x, g[1] - y)
    if step == (0, -1):
        return ((x, y), (x + 1, y)), -1j
    if step == (0, 1):
        return ((x, y + 1), (x + 1, y + 1)), 1j
    if step == (1, 0):
        return ((x + 1, y), (x + 1, y + 1)), 1.0
    if step == (-1, 0):
        return ((x, y), (x, y + 1)), -1.0
    raise ValueError(f"faces {f} and {g} are not adjacent")


@dataclass(frozen=True)
class CutPath:
    """Simple dual path from a puncture face down to the bottom boundary.

    ``faces`` runs puncture -> boundary; ``crossings[k]`` is the primal edge
    crossed on leaving ``faces[k]`` and ``black_left[k]`` tells whether its
    black endpoint lies on the left of the path at that crossing.
    """

    faces: tuple[Face, ...]
    crossings: tuple[Edge, ...]
    black_left: tuple[bool, ...]

    @property
    def puncture(self) -> Face:
        return self.faces[0]

    def reversed_flags(self) -> tuple[bool, ...]:
        """Side flags seen from the boundary -> puncture orientation."""
        return tuple(not s for s in self.black_left)


def cut_from_faces(domain: LatticeDomain, faces: Sequence[Face]) -> CutPath:
    faces = tuple((int(f[0]), int(f[1])) for f in faces)
    if not faces:
        raise ValueError("empty cut")
    for f in faces:
        if not domain.has_face(f):
            raise ValueError(f"face {f} outside the domain")
    if len(set(faces)) != len(faces):
        raise ValueError("cut path is not simple")
    if faces[-1][1] != 0:
        raise ValueError("cut must end on the bottom boundary row")
    crossings, flags = [], []
    for f, g in zip(faces, faces[1:] + (None,)):
        e, d = _crossed_edge(f, g)
        mid = 0.5 * complex(e[0][0] + e[1][0], e[0][1] + e[1][1])
        black = e[0] if LatticeDomain.is_black(e[0]) else e[1]
        side = (np.conj(d) * (complex(*black) - mid)).imag
        crossings.append(e)
        flags.append(bool(side > 0))
    return CutPath(faces, tuple(crossings), tuple(flags))


def build_cut(domain: LatticeDomain, face: Face | int) -> CutPath:
    """Straight vertical cut from ``face`` down through the bottom boundary."""
    if isinstance(face, (int, np.integer)):
        face = domain.face_from_index(int(face))
    if not domain.has_face(face):
        raise ValueError(f"face {face} out of range")
    fx, fy = face
    return cut_from_faces(domain, [(fx, y) for y in range(fy, -1, -1)])


def deform_cut(
    domain: LatticeDomain,
    cut: CutPath,
    faces: Sequence[Face],
    others: Sequence[CutPath] = (),
) -> CutPath:
    """Replace the dual path of ``cut`` keeping its puncture.

    The new path must be simple, end on the bottom row and avoid the faces
    of every cut in ``others``.
    """
    new = cut_from_faces(domain, faces)
    if new.puncture != cut.puncture:
        raise ValueError("deformed cut must start at the same puncture")
    taken = {f for c in others for f in c.faces}
    if taken.intersection(new.faces):
        raise ValueError("deformed cut meets another cut")
    return new


def cuts_disjoint(cuts: Sequence[CutPath]) -> bool:
    seen: set[Face] = set()
    for c in cuts:
        if seen.intersection(c.faces):
            return False
        seen.update(c.faces)
    return True


def is_nilpotent(N: np.ndarray, tol: float = 1e-12) -> bool:
    N = np.asarray(N)
    scale = max(1.0, float(np.abs(N).max()))
    return abs(np.trace(N)) <= tol * scale and abs(np.linalg.det(N)) <= tol * scale**2


@dataclass(frozen=True, eq=False)
class Representation:
    """Branch cuts with one real nilpotent ``N_i`` per puncture.

    Crossing cut ``i`` with the black vertex on its left multiplies by
    ``Id + N_i``; the other direction by ``Id - N_i``.
    """

    cuts: tuple[CutPath, ...]
    nilpotents: np.ndarray

    def __post_init__(self):
        nil = np.asarray(self.nilpotents, dtype=float).reshape(-1, 2, 2)
        if len(nil) != len(self.cuts):
            raise ValueError("one nilpotent per cut is required")
        for N in nil:
            if not is_nilpotent(N):
                raise ValueError(f"matrix {N.tolist()} is not nilpotent")
        if not cuts_disjoint(self.cuts):
            raise ValueError("branch cuts must be pairwise disjoint")
        nil.setflags(write=False)
        object.__setattr__(self, "cuts", tuple(self.cuts))
        object.__setattr__(self, "nilpotents", nil)

    @property
    def punctures(self) -> list[Face]:
        return [c.puncture for c in self.cuts]

    def jumps(self) -> np.ndarray:
        """``Id + N_i`` for every puncture."""
        return np.eye(2) + self.nilpotents

    def conjugated(self, G: np.ndarray) -> "Representation":
        G = np.asarray(G, dtype=float)
        Gi = np.linalg.inv(G)
        return Representation(self.cuts, np.einsum("ij,kjl,lm->kim", G, self.nilpotents, Gi))

    def with_cuts(self, cuts: Sequence[CutPath]) -> "Representation":
        return Representation(tuple(cuts), self.nilpotents)


def representation(
    domain: LatticeDomain, faces: Sequence[Face], nilpotents: Sequence[np.ndarray]
) -> Representation:
    """Straight cuts below each puncture face, in distinct columns."""
    cols = [f[0] for f in faces]
    if len(set(cols)) != len(cols):
        raise ValueError("punctures must sit in distinct columns for straight cuts")
    return Representation(tuple(build_cut(domain, f) for f in faces), np.asarray(nilpotents, float))


# -- serialization ---------------------------------------------------------------

def to_json(domain: LatticeDomain, rep: Representation | None = None) -> str:
    data: dict = {"m": domain.m, "n": domain.n, "delta": domain.delta, "punctures": [], "cuts": []}
    if rep is not None:
        data["punctures"] = [{"x": f[0], "y": f[1]} for f in rep.punctures]
        data["cuts"] = [[[list(a), list(b)] for a, b in c.crossings] for c in rep.cuts]
        data["faces"] = [[list(f) for f in c.faces] for c in rep.cuts]
        data["N"] = rep.nilpotents.tolist()
    return json.dumps(data, sort_keys=True)


def _faces_from_crossings(start: Face, edges) -> list[Face]:
    faces = [tuple(start)]
    for e in edges[:-1]:
        (x1, y1), (x2, y2) = sorted(tuple(v) for v in e)
        if y1 == y2:
            pair = [(x1, y1 - 1), (x1, y1)]
        else:
            pair = [(x1 - 1, y1), (x1, y1)]
        nxt = pair[1] if pair[0] == faces[-1] else pair[0]
        faces.append(nxt)
    return faces


def from_json(text: str) -> tuple[LatticeDomain, Representation | None]:
    data = json.loads(text)
    domain = build_domain(data["m"], data["n"], data["delta"])
    if not data.get("punctures"):
        return domain, None
    if "faces" in data:
        cuts = [cut_from_faces(domain, [tuple(f) for f in fs]) for fs in data["faces"]]
    elif data.get("cuts"):
        cuts = [
            cut_from_faces(domain, _faces_from_crossings((p["x"], p["y"]), edges))
            for p, edges in zip(data["punctures"], data["cuts"])
        ]
    else:
        cuts = [build_cut(domain, (p["x"], p["y"])) for p in data["punctures"]]
    N = data.get("N", np.zeros((len(cuts), 2, 2)).tolist())
    return domain, Representation(tuple(cuts), np.asarray(N, float))
