"""Elliptic operator, H^-1 norm, leapfrog wave solver and energy diagnostics."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
import scipy.sparse as sps
import sympy as sp
from scipy.sparse.linalg import splu

from .fields import CoefficientField, _symbols
from .grid import Grid

CSV_SCHEMA_ENERGY = "waveobs-energy/1"
BLOWUP = 1e12
# shift of the H^-1 realisation; 0 makes the free-wave energy an exact invariant
DEFAULT_LAMBDA0 = 0.0
RECORD_MAGIC = b"WAVEOBS-TRAJ/1\n"


class IndefiniteOperator(RuntimeError):
    pass


class CFLViolation(ValueError):
    pass


class WaveBlowUp(RuntimeError):
    pass


class EnergyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# elliptic operator


def _stencil(g: Grid, h: CoefficientField):
    """COO triplets of -div(h grad) over the full lattice (Dirichlet outside)."""
    shape, sp_ = g.shape, g.spacing
    lin = np.full(shape, -1, dtype=np.int64)
    lin[g.inside] = np.arange(g.n_inside)
    rows, cols, vals = [], [], []
    nodes = g.nodes

    def add(coef, offset):
        # coef: lattice array; entry (i, i + offset) for inside i and inside neighbour
        src = [slice(None)] * g.dim
        dst = [slice(None)] * g.dim
        for a, o in enumerate(offset):
            if o > 0:
                src[a], dst[a] = slice(0, -o), slice(o, None)
            elif o < 0:
                src[a], dst[a] = slice(-o, None), slice(0, o)
        s, t = tuple(src), tuple(dst)
        ok = g.inside[s] & g.inside[t]
        rows.append(lin[s][ok])
        cols.append(lin[t][ok])
        vals.append(np.broadcast_to(coef, shape)[s][ok])

    diag = np.zeros(shape)
    for a in range(g.dim):
        e = np.zeros(g.dim)
        e[a] = 0.5 * sp_[a]
        hp = h(nodes + e)[..., a, a] / sp_[a] ** 2
        hm = h(nodes - e)[..., a, a] / sp_[a] ** 2
        diag += hp + hm
        off = [0] * g.dim
        off[a] = 1
        add(-hp, tuple(off))
        off[a] = -1
        add(-hm, tuple(off))
    add(diag, (0,) * g.dim)
    if g.dim == 2:
        H = h(nodes)[..., 0, 1]
        f = 1.0 / (4 * sp_[0] * sp_[1])

        def sh(arr, di, dj):
            out = np.zeros(shape)
            si = slice(max(di, 0), shape[0] + min(di, 0))
            sj = slice(max(dj, 0), shape[1] + min(dj, 0))
            ti = slice(max(-di, 0), shape[0] + min(-di, 0))
            tj = slice(max(-dj, 0), shape[1] + min(-dj, 0))
            out[ti, tj] = arr[si, sj]
            return out

        add(-(sh(H, 1, 0) + sh(H, 0, 1)) * f, (1, 1))
        add(-(sh(H, -1, 0) + sh(H, 0, -1)) * f, (-1, -1))
        add((sh(H, 1, 0) + sh(H, 0, -1)) * f, (1, -1))
        add((sh(H, -1, 0) + sh(H, 0, 1)) * f, (-1, 1))
    n = g.n_inside
    K = sps.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsc()
    K.sum_duplicates()
    return K


@dataclass(eq=False)
class EllipticOperator:
    """(-L + lambda0) on inside nodes with a cached sparse factorisation.

    The factor is only read after construction, so one instance can serve
    several threads at once.
    """

    grid: Grid
    stiffness: sps.csc_matrix
    lambda0: float
    matrix: sps.csc_matrix = field(repr=False)
    _lu: object = field(repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def solve(self, f: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(f, dtype=float))

    def inner(self, f, g) -> np.ndarray:
        """Grid L2 inner product, column-wise for 2-D inputs."""
        return self.grid.cell_volume * np.sum(f * g, axis=0)

    def embed(self, f: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.shape + f.shape[1:])
        out[self.grid.inside] = f
        return out


def assemble_elliptic(h: CoefficientField, g: Grid, lambda0: float = DEFAULT_LAMBDA0) -> EllipticOperator:
    if lambda0 < 0:
        raise ValueError("lambda0 must be nonnegative")
    K = _stencil(g, h)
    A = (K + lambda0 * sps.identity(K.shape[0], format="csc")).tocsc()
    lu = splu(
        A,
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options=dict(SymmetricMode=True),
    )
    piv = lu.U.diagonal()
    if np.any(piv <= 0) or not np.all(np.isfinite(piv)):
        raise IndefiniteOperator(f"-L + {lambda0} is not positive definite (min pivot {piv.min():.3e})")
    return EllipticOperator(g, K, float(lambda0), A, lu)


def hminus1_norm(f, op: EllipticOperator):
    """sqrt(<f, (-L + lambda0)^{-1} f>) in the grid inner product.

    ``f`` may be an inside-node vector, a matrix of such columns, or a full
    lattice array.
    """
    f = np.asarray(f, dtype=float)
    if f.shape[: op.grid.dim] == op.grid.shape:
        f = f[op.grid.inside]
    q = op.inner(f, op.solve(f))
    return np.sqrt(np.maximum(q, 0.0))


def gradient_matrices(g: Grid) -> list:
    """Central first differences on inside nodes, zero Dirichlet extension."""
    lin = np.full(g.shape, -1, dtype=np.int64)
    lin[g.inside] = np.arange(g.n_inside)
    out = []
    for a in range(g.dim):
        rows, cols, vals = [], [], []
        for sgn in (1, -1):
            src = [slice(None)] * g.dim
            dst = [slice(None)] * g.dim
            if sgn > 0:
                src[a], dst[a] = slice(0, -1), slice(1, None)
            else:
                src[a], dst[a] = slice(1, None), slice(0, -1)
            ok = g.inside[tuple(src)] & g.inside[tuple(dst)]
            rows.append(lin[tuple(src)][ok])
            cols.append(lin[tuple(dst)][ok])
            vals.append(np.full(ok.sum(), sgn / (2 * g.spacing[a])))
        n = g.n_inside
        out.append(
            sps.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
        )
    return out


# ---------------------------------------------------------------------------
# lower-order terms


class ScalarField:
    """f(t, x) with its (t, x)-gradient; points are ``(..., n)`` arrays."""

    def value(self, t, x):
        raise NotImplementedError

    def grad(self, t, x):
        raise NotImplementedError

    def scaled(self, c: float) -> "ScalarField":
        return _Scaled(self, c)


class _Scaled(ScalarField):
    def __init__(self, f, c):
        self.f, self.c = f, float(c)

    def value(self, t, x):
        return self.c * self.f.value(t, x)

    def grad(self, t, x):
        return self.c * self.f.grad(t, x)


class ConstantField(ScalarField):
    def __init__(self, c: float):
        self.c = float(c)

    def value(self, t, x):
        return np.full(np.shape(x)[:-1], self.c)

    def grad(self, t, x):
        return np.zeros(np.shape(x)[:-1] + (np.shape(x)[-1] + 1,))


class ExprField(ScalarField):
    """Field from a sympy string in ``t, x1..xn``."""

    def __init__(self, expr: str, dim: int):
        xs = _symbols(dim)
        t = sp.Symbol("t", real=True)
        loc = {str(s): s for s in xs}
        loc["t"] = t
        e = sp.sympify(expr, locals=loc)
        self.expr = str(expr)
        syms = (t,) + tuple(xs)
        self._f = sp.lambdify(syms, e, "numpy")
        self._g = [sp.lambdify(syms, sp.diff(e, s), "numpy") for s in syms]

    def _args(self, t, x):
        x = np.asarray(x, dtype=float)
        return [np.broadcast_to(t, x.shape[:-1])] + [x[..., i] for i in range(x.shape[-1])]

    def value(self, t, x):
        a = self._args(t, x)
        return np.broadcast_to(self._f(*a), a[0].shape).astype(float)

    def grad(self, t, x):
        a = self._args(t, x)
        return np.stack([np.broadcast_to(g(*a), a[0].shape) for g in self._g], axis=-1).astype(float)


class ModeField(ScalarField):
    """sum_i a_i cos(w_i t + k_i . x + phi_i)."""

    def __init__(self, amp, freq_t, freq_x, phase):
        self.amp = np.asarray(amp, float)
        self.wt = np.asarray(freq_t, float)
        self.kx = np.asarray(freq_x, float)
        self.phase = np.asarray(phase, float)

    @classmethod
    def random(cls, dim: int, rng, modes: int = 3, max_freq: float = 3.0) -> "ModeField":
        return cls(
            rng.uniform(-1, 1, modes),
            rng.uniform(-max_freq, max_freq, modes),
            rng.uniform(-max_freq, max_freq, (modes, dim)),
            rng.uniform(0, 2 * np.pi, modes),
        )

    def _arg(self, t, x):
        x = np.asarray(x, float)
        return t * self.wt + np.einsum("...d,md->...m", x, self.kx) + self.phase

    def value(self, t, x):
        return np.cos(self._arg(t, x)) @ self.amp

    def grad(self, t, x):
        s = -np.sin(self._arg(t, x)) * self.amp
        gt = s @ self.wt
        gx = s @ self.kx
        return np.concatenate([gt[..., None], gx], axis=-1)


@dataclass
class LowerOrderTerms:
    """q, q1^k and q2 of the perturbed wave equation."""

    dim: int
    q: ScalarField
    q1: Sequence[ScalarField]
    q2: ScalarField
    _r: dict = field(default_factory=dict, repr=False)

    @classmethod
    def zero(cls, dim: int) -> "LowerOrderTerms":
        return cls(dim, ConstantField(0), [ConstantField(0)] * dim, ConstantField(0))

    @classmethod
    def constant(cls, dim: int, q=0.0, q1=None, q2=0.0) -> "LowerOrderTerms":
        q1 = [0.0] * dim if q1 is None else list(q1)
        return cls(dim, ConstantField(q), [ConstantField(c) for c in q1], ConstantField(q2))

    @classmethod
    def from_spec(cls, dim: int, q=0.0, q1=None, q2=0.0) -> "LowerOrderTerms":
        """Numbers become constants, strings become expressions in t, x1.."""

        def mk(v):
            return ConstantField(v) if isinstance(v, (int, float)) else ExprField(v, dim)

        q1 = [0.0] * dim if q1 is None else list(q1)
        return cls(dim, mk(q), [mk(v) for v in q1], mk(q2))

    @classmethod
    def random(cls, dim: int, rng, target_r: Optional[float] = None, grid: Optional[Grid] = None, T: float = 1.0):
        """Smooth random draw, optionally rescaled so that r equals ``target_r``."""
        lot = cls(dim, ModeField.random(dim, rng), [ModeField.random(dim, rng) for _ in range(dim)],
                  ModeField.random(dim, rng))
        if target_r is None:
            return lot
        r = lot.r(grid, T)
        return lot.scaled(target_r / r) if r > 0 else lot

    def scaled(self, c: float) -> "LowerOrderTerms":
        return LowerOrderTerms(self.dim, self.q.scaled(c), [f.scaled(c) for f in self.q1], self.q2.scaled(c))

    def is_zero(self, g: Grid, T: float) -> bool:
        return self.r(g, T) == 0.0

    def r(self, g: Grid, T: float, nt: int = 65) -> float:
        """max of |q|_inf and the W^{1,inf} norms of q1^k, q2 sampled on the grid."""
        key = (id(g), T, nt)
        if key in self._r:
            return self._r[key]
        x = g.closure_points()
        out = 0.0
        for t in np.linspace(0, T, nt):
            out = max(out, float(np.abs(self.q.value(t, x)).max()))
            for f in list(self.q1) + [self.q2]:
                out = max(out, float(np.abs(f.value(t, x)).max()), float(np.abs(f.grad(t, x)).max()))
        self._r[key] = out
        return out


# ---------------------------------------------------------------------------
# time stepping


def stable_dt(h: CoefficientField, g: Grid) -> float:
    """0.5 * h_min / sqrt(largest eigenvalue of h over the closure)."""
    lam = float(np.linalg.eigvalsh(h(g.closure_points()))[:, -1].max())
    return 0.5 * float(g.spacing.min()) / math.sqrt(lam)


def time_levels(T: float, dt_max: float) -> tuple[int, float]:
    nsteps = max(1, int(math.ceil(T / dt_max - 1e-12)))
    return nsteps, T / nsteps


@dataclass
class WaveSystem:
    """Everything the stepper needs, shareable across trajectories."""

    op: EllipticOperator
    lot: LowerOrderTerms
    D: list
    x: np.ndarray
    dt_max: float

    @classmethod
    def build(cls, h: CoefficientField, g: Grid, lot: Optional[LowerOrderTerms] = None, lambda0: float = DEFAULT_LAMBDA0):
        op = assemble_elliptic(h, g, lambda0)
        return cls(op, lot or LowerOrderTerms.zero(g.dim), gradient_matrices(g), g.inside_points, stable_dt(h, g))


def _march(sys: WaveSystem, w0, w1, T: float, dt: float) -> Iterator[tuple]:
    """Yield (n, t_n, w^n, velocity^n) for n = 0..nsteps; columns evolve together."""
    nsteps = int(round(T / dt))
    K, lot, x = sys.op.stiffness, sys.lot, sys.x
    zero = lot.r(sys.op.grid, T) == 0.0
    col = w0.ndim == 2

    def coef(t):
        q = lot.q.value(t, x)
        q1 = [f.value(t, x) for f in lot.q1]
        q2 = lot.q2.value(t, x)
        if col:
            q, q2 = q[:, None], q2[:, None]
            q1 = [c[:, None] for c in q1]
        return q, q1, q2

    def force(w, t):
        F = -(K @ w)
        if zero:
            return F, 0.0
        q, q1, q2 = coef(t)
        F = F + q * w
        for c, Dc in zip(q1, sys.D):
            F = F + c * (Dc @ w)
        return F, q2

    F0, q2 = force(w0, 0.0)
    prev, cur = w0, w0 + dt * w1 + 0.5 * dt * dt * (F0 + q2 * w1)
    yield 0, 0.0, w0, w1
    if nsteps == 1:
        yield 1, dt, cur, (cur - prev) / dt
        return
    hist = None
    for k in range(1, nsteps):
        t = k * dt
        F, q2 = force(cur, t)
        a = 0.5 * dt * q2
        nxt = (2 * cur - (1 + a) * prev + dt * dt * F) / (1 - a)
        if not np.all(np.isfinite(nxt)) or np.abs(nxt).max() > BLOWUP:
            raise WaveBlowUp(f"solution exceeded {BLOWUP:g} at t={t + dt:.6g}")
        yield k, t, cur, (nxt - prev) / (2 * dt)
        hist, prev, cur = prev, cur, nxt
    # second-order one-sided velocity at the final level
    yield nsteps, nsteps * dt, cur, (3 * cur - 4 * prev + hist) / (2 * dt)


@dataclass
class WaveTrajectory:
    grid: Grid
    dt: float
    times: np.ndarray
    w: np.ndarray
    wt: np.ndarray
    E: np.ndarray
    l2: np.ndarray
    hm1: np.ndarray
    r: float = 0.0

    def index(self, t: float) -> int:
        k = int(round(t / self.dt))
        if k < 0 or k >= len(self.times) or abs(self.times[k] - t) > 1e-9 * max(self.dt, abs(t)):
            raise EnergyError(f"t={t} is not a level of this trajectory")
        return k

    def energy_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema {CSV_SCHEMA_ENERGY}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "E", "w_L2", "wt_Hminus1"])
        for row in zip(self.times, self.E, self.l2, self.hm1):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def write_record(self, path) -> None:
        """Binary record: magic, one JSON header line, then float64 lattice
        snapshots of w, row-major, one per step."""
        g = self.grid
        head = {
            "dims": list(g.shape),
            "spacing": [float(s) for s in g.spacing],
            "origin": [float(a[0]) for a in g.axes],
            "dt": self.dt,
            "nsteps": len(self.times) - 1,
            "dtype": "float64-le",
        }
        with open(path, "wb") as fh:
            fh.write(RECORD_MAGIC)
            fh.write((json.dumps(head, sort_keys=True) + "\n").encode())
            for snap in self.w:
                full = np.zeros(g.shape)
                full[g.inside] = snap
                fh.write(full.astype("<f8").tobytes())


def read_record(path):
    data = Path(path).read_bytes()
    if not data.startswith(RECORD_MAGIC):
        raise ValueError("not a trajectory record")
    rest = data[len(RECORD_MAGIC):]
    line, payload = rest.split(b"\n", 1)
    head = json.loads(line)
    arr = np.frombuffer(payload, dtype="<f8").reshape((head["nsteps"] + 1, *head["dims"]))
    return head, arr


def simulate_wave(
    w0,
    w1,
    sys: WaveSystem,
    T: float,
    dt: Optional[float] = None,
) -> WaveTrajectory:
    """Leapfrog trajectory for one initial datum given on inside nodes."""
    g = sys.op.grid
    w0 = np.asarray(w0, float)
    w1 = np.asarray(w1, float)
    if w0.shape[: g.dim] == g.shape and g.dim > 0 and w0.ndim == g.dim:
        w0, w1 = w0[g.inside], w1[g.inside]
    if dt is None:
        nsteps, dt = time_levels(T, sys.dt_max)
    elif dt > sys.dt_max * (1 + 1e-12):
        raise CFLViolation(f"dt={dt:.4g} exceeds the stable bound {sys.dt_max:.4g}")
    else:
        nsteps = int(round(T / dt))
        if abs(nsteps * dt - T) > 1e-9 * T:
            raise CFLViolation("T must be an integer multiple of dt")
    if not (np.all(np.isfinite(w0)) and np.all(np.isfinite(w1))):
        raise ValueError("initial data must be finite")
    W, WT = [], []
    for _, _, w, v in _march(sys, w0, w1, T, dt):
        W.append(w)
        WT.append(v)
    W, WT = np.array(W), np.array(WT)
    op = sys.op
    l2 = np.sqrt(op.inner(W.T, W.T))
    hm1 = hminus1_norm(WT.T, op)
    E = 0.5 * (hm1**2 + l2**2)
    return WaveTrajectory(g, dt, np.arange(len(W)) * dt, W, WT, E, l2, hm1, sys.lot.r(g, T))


def energy(traj: WaveTrajectory, t: float) -> float:
    return float(traj.E[traj.index(t)])


@dataclass(frozen=True)
class EnergyFit:
    fitted_C: float
    worst_pair: tuple
    r: float


def check_energy_bound(traj: WaveTrajectory, r: Optional[float] = None) -> EnergyFit:
    """Max over level pairs of log(E(t)/E(s)) / (1 + r)."""
    r = traj.r if r is None else float(r)
    if np.any(traj.E <= 0):
        raise EnergyError("energy vanishes on the trajectory")
    i, j = int(np.argmax(traj.E)), int(np.argmin(traj.E))
    C = (math.log(traj.E[i]) - math.log(traj.E[j])) / (1 + r)
    return EnergyFit(C, (float(traj.times[i]), float(traj.times[j])), r)


def _integrate(t, f, a, b):
    inner = (t > a) & (t < b)
    ts = np.concatenate([[a], t[inner], [b]])
    fs = np.concatenate([[np.interp(a, t, f)], f[inner], [np.interp(b, t, f)]])
    return float(np.trapezoid(fs, ts))


def check_integral_bound(traj: WaveTrajectory, windows, r: Optional[float] = None) -> float:
    """int_{S2}^{T2} E / ((1 + r^2) int_{S1}^{T1} |w|^2)."""
    S1, S2, T2, T1 = map(float, windows)
    if not (0 <= S1 < S2 < T2 < T1 <= traj.times[-1] + 1e-12):
        raise EnergyError(f"need 0 <= S1 < S2 < T2 < T1 <= T, got {windows}")
    r = traj.r if r is None else float(r)
    num = _integrate(traj.times, traj.E, S2, T2)
    den = (1 + r * r) * _integrate(traj.times, traj.l2**2, S1, T1)
    if den <= 0:
        raise EnergyError("zero data: the integral bound is 0/0")
    return num / den
