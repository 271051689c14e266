"""Discrete observability Gramians over space-time regions."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Mapping, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .fields import CoefficientField, WeightField
from .geometry import Neighborhood, complement_points
from .grid import Grid
from .regions import SpaceTimeRegion, TimeAxis
from .waveop import WaveSystem, _march, time_levels

CSV_SCHEMA_COMPARE = "waveobs-compare/1"


class BasisError(ValueError):
    pass


class GramianError(RuntimeError):
    def __init__(self, msg, index=None):
        super().__init__(msg)
        self.index = index


@dataclass(frozen=True)
class InitialDataBasis:
    mu: np.ndarray  # eigenvalues of -L, ascending
    modes: np.ndarray  # (n_inside, m), L2-orthonormal on the grid
    vol: float

    @property
    def m(self) -> int:
        return self.modes.shape[1]

    def data(self):
        """(w0, w1) columns: first m are (e_i, 0), next m are (0, e_i)."""
        z = np.zeros_like(self.modes)
        return np.hstack([self.modes, z]), np.hstack([z, self.modes])


def build_basis(sys: WaveSystem, m: int) -> InitialDataBasis:
    K = sys.op.stiffness
    n = K.shape[0]
    if not 1 <= m <= n:
        raise BasisError(f"need 1 <= m <= {n} interior nodes, got m={m}")
    if n <= 2500:
        mu, vec = sla.eigh(K.toarray(), subset_by_index=[0, m - 1])
    else:
        try:
            mu, vec = spla.eigsh(K, k=m, sigma=0.0, which="LM")
        except Exception as exc:  # noqa: BLE001 - ARPACK raises several types
            raise BasisError(f"eigensolver failed: {exc}") from exc
        order = np.argsort(mu)
        mu, vec = mu[order], vec[:, order]
    vol = sys.op.grid.cell_volume
    vec = vec / np.sqrt(vol * np.sum(vec**2, axis=0))
    big = np.argmax(np.abs(vec), axis=0)
    vec = vec * np.sign(vec[big, np.arange(m)])
    return InitialDataBasis(mu, vec, vol)


def data_gram(basis: InitialDataBasis, sys: WaveSystem) -> np.ndarray:
    """Block-diagonal Gram of the data in L2 x H^-1."""
    E = basis.modes
    L2 = basis.vol * E.T @ E
    Hm = basis.vol * E.T @ sys.op.solve(E)
    m = basis.m
    M = np.zeros((2 * m, 2 * m))
    M[:m, :m] = 0.5 * (L2 + L2.T)
    M[m:, m:] = 0.5 * (Hm + Hm.T)
    return M


def solver_axis(sys: WaveSystem, T: float) -> TimeAxis:
    """The trapezoid time axis on which the wave solver lives."""
    nsteps, _ = time_levels(T, sys.dt_max)
    return TimeAxis.trapezoid(T, nsteps)


@dataclass
class GramianSet:
    """Gramians per region, their square-root factors and the data Gram M.

    ``R[name]`` is upper triangular with ``G[name] = R^T R``; the smallest
    pencil eigenvalue is read off R so it resolves values far below the
    rounding floor of G itself.
    """

    G: dict
    R: dict
    M: np.ndarray

    def __iter__(self):
        # allows ``G, M = assemble_gramian(...)``
        return iter((self.G, self.M))


class _SqrtAccumulator:
    """Incremental QR of stacked observation rows."""

    def __init__(self, ncol: int):
        self.ncol = ncol
        self.R = np.zeros((0, ncol))
        self.buf: list = []
        self.rows = 0

    def add(self, rows: np.ndarray):
        self.buf.append(rows)
        self.rows += len(rows)
        if self.rows >= 8 * self.ncol:
            self.flush()

    def flush(self):
        if not self.buf:
            return
        stack = np.vstack([self.R] + self.buf)
        self.R = sla.qr(stack, mode="r", overwrite_a=True, check_finite=False)[0][: self.ncol]
        self.buf, self.rows = [], 0

    def result(self) -> np.ndarray:
        self.flush()
        R = np.zeros((self.ncol, self.ncol))
        R[: len(self.R)] = self.R
        return R


def assemble_gramian(
    basis: InitialDataBasis,
    sys: WaveSystem,
    regions: Mapping[str, SpaceTimeRegion],
    T: float,
) -> GramianSet:
    """Observation Gramians for several regions from one batched simulation.

    All 2m basis data evolve together; every region must sit on
    :func:`solver_axis`.
    """
    axis = solver_axis(sys, T)
    g = sys.op.grid
    masks = {}
    for name, R in regions.items():
        if len(R.times) != 1 or not R.times[0].same_as(axis):
            raise GramianError(f"region {name!r} is not on the solver time axis")
        if R.grid.shape != g.shape:
            raise GramianError(f"region {name!r} lives on another spatial grid")
        masks[name] = R.mask[:, g.inside]
    w0, w1 = basis.data()
    ncol = w0.shape[1]
    acc = {name: _SqrtAccumulator(ncol) for name in regions}
    vol = g.cell_volume
    dt = axis.weights[1] if len(axis) > 1 else T
    try:
        for k, _, w, _ in _march(sys, w0, w1, T, dt):
            wk = math.sqrt(axis.weights[k] * vol)
            for name, mk in masks.items():
                sel = mk[k]
                if sel.any():
                    acc[name].add(wk * w[sel])
    except Exception as exc:
        raise GramianError(f"wave solve failed for the batch of {ncol} basis data: {exc}") from exc
    Rs = {name: a.result() for name, a in acc.items()}
    Gs = {name: R.T @ R for name, R in Rs.items()}
    return GramianSet(Gs, Rs, data_gram(basis, sys))


@dataclass(frozen=True)
class PencilResult:
    mu_min: float
    C_obs: float
    non_observable: bool
    spectrum: tuple


def estimate_constant(G, M, R=None, floor: float = 1e-12) -> PencilResult:
    """Smallest eigenvalue of the pencil (G, M) through Cholesky whitening.

    With the factor ``R`` (G = R^T R) the eigenvalues are squared singular
    values of R L^{-T}, which keeps tiny ones accurate.
    """
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise GramianError("data Gram matrix is not positive definite") from exc
    Li = sla.solve_triangular(L, np.eye(len(M)), lower=True)
    if R is not None:
        ev = np.sort(sla.svdvals(R @ Li.T)) ** 2
    else:
        Gh = Li @ G @ Li.T
        ev = np.linalg.eigvalsh(0.5 * (Gh + Gh.T))
    mu = max(float(ev[0]), 0.0)
    flag = mu <= floor * float(np.sum(ev))
    C = math.inf if flag else 1.0 / mu
    summary = tuple(float(v) for v in ev[: min(5, len(ev))]) + (float(ev[-1]),)
    return PencilResult(mu, C, bool(flag), summary)


def log_theoretical_constant(r: float, fitC: float) -> float:
    if r < 0 or fitC <= 0:
        raise ValueError("need r >= 0 and fitC > 0")
    return math.log(fitC) + math.exp(fitC * r) if fitC * r < 700 else math.inf


def theoretical_constant(r: float, fitC: float) -> float:
    """fitC * exp(exp(fitC * r)); inf once the value leaves double range."""
    lg = log_theoretical_constant(r, fitC)
    return math.exp(lg) if lg < 709 else math.inf


def fit_theoretical_constant(r: float, C_obs: float, hi: float = 1e3) -> float:
    """Least fitC with fitC * exp(exp(fitC * r)) >= C_obs (bisection)."""
    if not math.isfinite(C_obs):
        return math.inf
    target = math.log(C_obs)
    lo, up = 1e-300, 1.0
    while log_theoretical_constant(r, up) < target:
        up *= 2
        if up > hi:
            return math.inf
    for _ in range(200):
        mid = 0.5 * (lo + up)
        if log_theoretical_constant(r, mid) < target:
            lo = mid
        else:
            up = mid
    return up


@dataclass
class ObservabilityReport:
    region: str
    T: float
    m: int
    measure: float
    mu_min: float
    C_obs: float
    non_observable: bool
    spectrum: tuple
    r: float = 0.0
    fitC: Optional[float] = None
    theoretical: Optional[float] = None
    refinement_stable: Optional[bool] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["spectrum"] = list(self.spectrum)
        for k in ("C_obs", "theoretical", "fitC"):
            if isinstance(out[k], float) and not math.isfinite(out[k]):
                out[k] = "inf"
        return out


def observe(
    basis: InitialDataBasis,
    sys: WaveSystem,
    regions: Mapping[str, SpaceTimeRegion],
    T: float,
) -> dict:
    """One report per region."""
    gs = assemble_gramian(basis, sys, regions, T)
    r = sys.lot.r(sys.op.grid, T)
    out = {}
    for name, R in regions.items():
        p = estimate_constant(gs.G[name], gs.M, gs.R[name])
        fit = fit_theoretical_constant(r, p.C_obs) if r > 0 else None
        out[name] = ObservabilityReport(
            name, T, basis.m, R.measure(), p.mu_min, p.C_obs, p.non_observable, p.spectrum, r,
            fit, None if fit is None or not math.isfinite(fit) else theoretical_constant(r, fit),
        )
    return out


def monotone_violations(reports: Mapping[str, ObservabilityReport], regions: Mapping[str, SpaceTimeRegion], rtol=1e-9):
    """Nested pairs (A subset B) where mu_min(A) exceeds mu_min(B)."""
    bad = []
    names = list(regions)
    for a in names:
        for b in names:
            if a != b and regions[a].issubset(regions[b]):
                ma, mb = reports[a].mu_min, reports[b].mu_min
                if ma > mb * (1 + rtol) + 1e-300:
                    bad.append((a, b, ma, mb))
    return bad


def compare_regions(
    basis: InitialDataBasis,
    sys: WaveSystem,
    regions: Mapping[str, SpaceTimeRegion],
    T: float,
    candidate: str = "K",
    prior: str = "K1",
) -> dict:
    """Region table plus the inclusion, measure and Loewner-order checks."""
    reports = observe(basis, sys, regions, T)
    Kp, K1 = regions[candidate], regions[prior]
    return {
        "reports": reports,
        "candidate_in_prior": Kp.issubset(K1),
        "measure_ratio": Kp.measure() / K1.measure() if K1.measure() > 0 else math.nan,
        "monotone_violations": monotone_violations(reports, regions),
    }


def comparison_csv(reports: Mapping[str, ObservabilityReport]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema {CSV_SCHEMA_COMPARE}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region", "T", "m", "measure", "mu_min", "C_obs", "non_observable"])
    for r in reports.values():
        w.writerow([r.region, repr(r.T), r.m, repr(r.measure), repr(r.mu_min), repr(r.C_obs), int(r.non_observable)])
    return buf.getvalue()


def waiting_time_comparison(x0, omega: Neighborhood, g: Grid) -> dict:
    """T_new = 2 max over closure(Omega) minus omega of |x - x0|; T_old over all of it."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    rest = complement_points(omega, g)
    if rest.size == 0:
        raise ValueError("closure(Omega) minus omega is empty")
    T_new = 2 * float(np.linalg.norm(rest - x0, axis=-1).max())
    T_old = 2 * float(np.linalg.norm(g.closure_points() - x0, axis=-1).max())
    return {"T_new": T_new, "T_old": T_old}


def run_parallel(fn, items, threads: int = 1):
    """Map ``fn`` over independent work items, results in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
