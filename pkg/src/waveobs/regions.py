"""Indicator sets over (t, x) and (t, s, x) lattices, plus their file exports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Grid

CSV_SCHEMA = "waveobs-nodes/1"


class RegionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TimeAxis:
    """Time nodes with quadrature weights."""

    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def midpoint(cls, T: float, n: int) -> "TimeAxis":
        """``n`` cell centres of (0, T); every node lies in the open interval."""
        dt = T / n
        return cls((np.arange(n) + 0.5) * dt, np.full(n, dt))

    @classmethod
    def trapezoid(cls, T: float, nsteps: int) -> "TimeAxis":
        """Levels ``k T / nsteps`` for k = 0..nsteps with trapezoid weights."""
        dt = T / nsteps
        w = np.full(nsteps + 1, dt)
        w[0] = w[-1] = dt / 2
        return cls(np.arange(nsteps + 1) * dt, w)

    def __len__(self):
        return len(self.nodes)

    def same_as(self, other: "TimeAxis") -> bool:
        return len(self) == len(other) and np.array_equal(self.nodes, other.nodes)


@dataclass(frozen=True, eq=False)
class SpaceTimeRegion:
    """Boolean indicator on ``times x [times x] grid``.

    ``mask`` has shape ``(nt, *grid.shape)`` for (t, x) regions and
    ``(nt, ns, *grid.shape)`` for (t, s, x) regions. Nodes outside Omega are
    never set.
    """

    mask: np.ndarray
    grid: Grid
    times: tuple[TimeAxis, ...]
    name: str = ""

    @property
    def axes(self) -> tuple[str, ...]:
        return ("t", "x") if len(self.times) == 1 else ("t", "s", "x")

    def _check(self, other: "SpaceTimeRegion"):
        if other.grid is not self.grid and other.grid.shape != self.grid.shape:
            raise RegionMismatch("regions live on different spatial grids")
        if len(other.times) != len(self.times) or not all(
            a.same_as(b) for a, b in zip(self.times, other.times)
        ):
            raise RegionMismatch("regions live on different time grids")

    def _new(self, mask, name=""):
        return SpaceTimeRegion(mask, self.grid, self.times, name)

    def __or__(self, other):
        self._check(other)
        return self._new(self.mask | other.mask)

    def __and__(self, other):
        self._check(other)
        return self._new(self.mask & other.mask)

    def __sub__(self, other):
        self._check(other)
        return self._new(self.mask & ~other.mask)

    def renamed(self, name: str) -> "SpaceTimeRegion":
        return self._new(self.mask, name)

    def issubset(self, other: "SpaceTimeRegion") -> bool:
        self._check(other)
        return not np.any(self.mask & ~other.mask)

    def violations(self, other: "SpaceTimeRegion") -> int:
        """Number of nodes of self that are missing from other."""
        self._check(other)
        return int(np.count_nonzero(self.mask & ~other.mask))

    def equals(self, other: "SpaceTimeRegion") -> bool:
        self._check(other)
        return bool(np.array_equal(self.mask, other.mask))

    @property
    def empty(self) -> bool:
        return not self.mask.any()

    def weights(self) -> np.ndarray:
        """Quadrature weight of every lattice node (broadcastable to mask)."""
        w = self.times[0].weights
        if len(self.times) == 2:
            w = w[:, None] * self.times[1].weights[None, :]
        w = w.reshape(w.shape + (1,) * self.grid.dim)
        return w * self.grid.cell_volume

    def measure(self) -> float:
        return float(np.sum(self.weights() * self.mask))

    def slice_at(self, i: int) -> np.ndarray:
        """Spatial mask at time index ``i``."""
        return self.mask[i]

    def closure(self) -> "SpaceTimeRegion":
        """Grid closure: the region dilated by one node along every axis."""
        from scipy.ndimage import binary_dilation

        m = binary_dilation(self.mask, structure=np.ones((3,) * self.mask.ndim, dtype=bool))
        lead = (1,) * len(self.times)
        m &= self.grid.inside.reshape(lead + self.grid.shape)
        return self._new(m, f"closure({self.name})")

    @classmethod
    def cylinder(cls, times: TimeAxis, spatial: np.ndarray, grid: Grid, name="") -> "SpaceTimeRegion":
        mask = np.broadcast_to(spatial & grid.inside, (len(times),) + grid.shape).copy()
        return cls(mask, grid, (times,), name)

    # exports ----------------------------------------------------------------
    def header_lines(self) -> list[str]:
        lines = [f"region {self.name or 'unnamed'}", f"axes {','.join(self.axes)}"]
        for label, ax in zip(("t", "s"), self.times):
            lines.append(f"{label} {ax.nodes[0]!r} {ax.nodes[-1]!r} n={len(ax)}")
        for i, a in enumerate(self.grid.axes):
            lines.append(f"x{i + 1} {a[0]!r} {a[-1]!r} n={len(a)}")
        lines.append(f"measure {self.measure()!r}")
        return lines

    def to_pgm(self) -> bytes:
        """Binary graymap, one byte per node, row-major.

        Rows run over the time index (t, or t then s); each row holds the
        flattened spatial lattice.
        """
        nrow = int(np.prod(self.mask.shape[: len(self.times)]))
        img = self.mask.reshape(nrow, -1).astype(np.uint8) * 255
        head = "P5\n" + "".join(f"# {ln}\n" for ln in self.header_lines())
        head += f"{img.shape[1]} {img.shape[0]}\n255\n"
        return head.encode("ascii") + img.tobytes()

    def write_pgm(self, path) -> None:
        Path(path).write_bytes(self.to_pgm())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema {CSV_SCHEMA}\n")
        cols = ["t"] + (["s"] if len(self.times) == 2 else []) + [f"x{i + 1}" for i in range(self.grid.dim)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        idx = np.argwhere(self.mask)
        nt = len(self.times)
        coords = [ax.nodes[idx[:, k]] for k, ax in enumerate(self.times)]
        coords += [self.grid.axes[d][idx[:, nt + d]] for d in range(self.grid.dim)]
        for row in zip(*coords):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def read_pgm(data: bytes) -> tuple[np.ndarray, list[str]]:
    """Parse a graymap written by :meth:`SpaceTimeRegion.to_pgm`."""
    comments, fields, pos = [], [], 0
    lines = data.split(b"\n")
    for raw in lines:
        pos += len(raw) + 1
        text = raw.decode("ascii")
        if text.startswith("#"):
            comments.append(text[1:].strip())
            continue
        fields.extend(text.split())
        if len(fields) >= 4:
            break
    if fields[0] != "P5":
        raise ValueError("not a binary graymap")
    width, height = int(fields[1]), int(fields[2])
    img = np.frombuffer(data[pos : pos + width * height], dtype=np.uint8).reshape(height, width)
    return img, comments
