"""Rectangular lattices with an inside mask and analytic boundary normals."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    """Analytic description of Omega: ``interval``, ``rectangle`` or ``disk``."""

    kind: str
    lower: tuple[float, ...] = ()
    upper: tuple[float, ...] = ()
    center: tuple[float, ...] = ()
    radius: float = 0.0

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.kind == "disk":
            r = np.linalg.norm(pts - np.asarray(self.center), axis=-1)
            return r < self.radius
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return np.all((pts > lo) & (pts < hi), axis=-1)

    def as_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "disk":
            out.update(center=list(self.center), radius=self.radius)
        else:
            out.update(lower=list(self.lower), upper=list(self.upper))
        return out


@dataclass(frozen=True)
class Grid:
    """Lattice nodes over the bounding box of a domain.

    ``inside`` marks nodes of the open domain; these are the unknowns of every
    discrete operator. Boundary entries are lattice nodes outside the domain
    that touch an inside node; each carries the analytic boundary point it
    stands for and the outward unit normal there.
    """

    domain: Domain
    axes: tuple[np.ndarray, ...]
    inside: np.ndarray
    boundary_index: np.ndarray
    boundary_points: np.ndarray
    normals: np.ndarray
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if any(np.any(np.diff(a) <= 0) for a in self.axes):
            raise GridError("axis spacings must be positive")
        lengths = np.linalg.norm(self.normals, axis=-1)
        if np.any(np.abs(lengths - 1.0) > 1e-12):
            raise GridError("boundary normals must have unit length")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([a[1] - a[0] for a in self.axes])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, dim)``."""
        if "nodes" not in self._cache:
            mesh = np.meshgrid(*self.axes, indexing="ij")
            self._cache["nodes"] = np.stack(mesh, axis=-1)
        return self._cache["nodes"]

    @property
    def inside_points(self) -> np.ndarray:
        return self.nodes[self.inside]

    @property
    def n_inside(self) -> int:
        return int(self.inside.sum())

    def closure_points(self) -> np.ndarray:
        """Inside nodes followed by the analytic boundary points."""
        return np.concatenate([self.inside_points, self.boundary_points])

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.as_dict(),
            "shape": list(self.shape),
            "spacing": [float(h) for h in self.spacing],
            "n_inside": self.n_inside,
            "n_boundary": int(len(self.boundary_points)),
        }


def _axis(lo: float, hi: float, n: int) -> np.ndarray:
    if n < 2:
        raise GridError("need at least two cells per axis")
    return np.linspace(lo, hi, n + 1)


def interval_grid(lower: float, upper: float, n: int) -> Grid:
    """Interval (lower, upper) split into ``n`` cells (``n + 1`` nodes)."""
    if not upper > lower:
        raise GridError("empty interval")
    x = _axis(lower, upper, n)
    inside = np.zeros(n + 1, dtype=bool)
    inside[1:-1] = True
    bidx = np.array([[0], [n]])
    bpts = np.array([[lower], [upper]], dtype=float)
    normals = np.array([[-1.0], [1.0]])
    return Grid(Domain("interval", (lower,), (upper,)), (x,), inside, bidx, bpts, normals)


def rectangle_grid(lower, upper, n) -> Grid:
    lower = tuple(float(v) for v in lower)
    upper = tuple(float(v) for v in upper)
    n = (n, n) if np.isscalar(n) else tuple(n)
    axes = tuple(_axis(lo, hi, k) for lo, hi, k in zip(lower, upper, n))
    shape = tuple(len(a) for a in axes)
    inside = np.zeros(shape, dtype=bool)
    inside[1:-1, 1:-1] = True
    idx, pts, nrm = [], [], []
    for i in range(shape[0]):
        for j in range(shape[1]):
            sx = -1 if i == 0 else (1 if i == shape[0] - 1 else 0)
            sy = -1 if j == 0 else (1 if j == shape[1] - 1 else 0)
            if sx == 0 and sy == 0:
                continue
            if sx != 0 and sy != 0:
                # corners touch no inside node; the normal is undefined there
                continue
            v = np.array([sx, sy], dtype=float)
            idx.append((i, j))
            pts.append((axes[0][i], axes[1][j]))
            nrm.append(v / np.linalg.norm(v))
    return Grid(
        Domain("rectangle", lower, upper),
        axes,
        inside,
        np.array(idx),
        np.array(pts, dtype=float),
        np.array(nrm),
    )


def disk_grid(center, radius: float, n: int) -> Grid:
    """Disk lattice; boundary entries are projected onto the circle."""
    c = np.asarray(center, dtype=float)
    axes = tuple(_axis(ci - radius, ci + radius, n) for ci in c)
    dom = Domain("disk", center=tuple(c), radius=float(radius))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    inside = dom.contains(mesh)
    touch = np.zeros_like(inside)
    touch[1:, :] |= inside[:-1, :]
    touch[:-1, :] |= inside[1:, :]
    touch[:, 1:] |= inside[:, :-1]
    touch[:, :-1] |= inside[:, 1:]
    bmask = touch & ~inside
    bidx = np.argwhere(bmask)
    rel = mesh[bmask] - c
    nrm = rel / np.linalg.norm(rel, axis=-1, keepdims=True)
    return Grid(dom, axes, inside, bidx, c + radius * nrm, nrm)
