"""Weights, boundary sets, neighbourhoods, waiting times and observation regions.

All node-wise checks run over the closure of Omega: inside lattice nodes plus
the analytic boundary points carried by the grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .fields import CoefficientField, WeightField
from .grid import Grid
from .regions import SpaceTimeRegion, TimeAxis

# membership in an open ball is decided with this slack (in units of the
# smallest spacing) so nodes on the sphere are excluded robustly
_BALL_SLACK = 1e-9


class GeometryError(ValueError):
    pass


class CoefficientError(GeometryError):
    def __init__(self, msg: str, node=None):
        super().__init__(msg)
        self.node = node


class NormalizationError(GeometryError):
    pass


class Condition2Error(GeometryError):
    def __init__(self, msg: str, nodes=()):
        super().__init__(msg)
        self.nodes = [tuple(map(float, p)) for p in nodes]


class ParameterSelectionError(GeometryError):
    def __init__(self, msg: str, broken=()):
        super().__init__(msg)
        self.broken = list(broken)


# ---------------------------------------------------------------------------
# coefficients and Condition 1


@dataclass(frozen=True)
class CoefficientReport:
    h0: float
    symmetric: bool
    lambda_max: float


def verify_coefficients(h: CoefficientField, g: Grid, tol: float = 1e-12) -> CoefficientReport:
    """Symmetry and ellipticity of h over the closure of the domain.

    Returns the largest h0 with h(x) >= h0 I node-wise. Raises
    :class:`CoefficientError` naming the first offending node.
    """
    pts = g.closure_points()
    H = h(pts)
    asym = np.max(np.abs(H - np.swapaxes(H, -1, -2)), axis=(-1, -2))
    scale = np.maximum(1.0, np.max(np.abs(H), axis=(-1, -2)))
    bad = np.flatnonzero(asym > tol * scale)
    if bad.size:
        node = tuple(pts[bad[0]])
        raise CoefficientError(f"h is not symmetric at node {node} (|h-h^T|={asym[bad[0]]:.3e})", node)
    eig = np.linalg.eigvalsh(H)
    lo = eig[:, 0]
    if np.any(lo <= 0):
        i = int(np.argmin(lo))
        node = tuple(pts[i])
        raise CoefficientError(f"h is not positive definite at node {node} (min eig {lo[i]:.3e})", node)
    return CoefficientReport(float(lo.min()), True, float(eig[:, -1].max()))


def condition1_matrix(h: CoefficientField, d: WeightField, pts: np.ndarray) -> np.ndarray:
    """Bracketed matrix of the pseudoconvexity condition at each point.

    S^{jk} = sum_{j',k'} [2 h^{jk'} (h^{j'k} d_{j'})_{k'} - h^{jk}_{k'} h^{j'k'} d_{j'}]
    """
    H = h(pts)
    dH = h.grad(pts)
    dd = d.grad(pts)
    D2 = d.hess(pts)
    # (h^{j'k} d_{j'})_{k'} = dh[j',k,k'] d[j'] + h[j',k] D2[j',k']
    flux = np.einsum("...akc,...a->...kc", dH, dd) + np.einsum("...ak,...ac->...kc", H, D2)
    t1 = 2.0 * np.einsum("...jc,...kc->...jk", H, flux)
    hd = np.einsum("...ac,...a->...c", H, dd)
    t2 = np.einsum("...jkc,...c->...jk", dH, hd)
    return t1 - t2


@dataclass(frozen=True)
class Condition1Report:
    mu0: float
    min_grad: float
    argmin_mu0: tuple
    argmin_grad: tuple

    @property
    def holds(self) -> bool:
        return self.mu0 > 0 and self.min_grad > 0


def _generalized_min_eig(S: np.ndarray, H: np.ndarray) -> np.ndarray:
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    L = np.linalg.cholesky(H)
    Linv = np.linalg.inv(L)
    M = Linv @ S @ np.swapaxes(Linv, -1, -2)
    return np.linalg.eigvalsh(M)[..., 0]


def check_condition1(h: CoefficientField, d: WeightField, g: Grid) -> Condition1Report:
    """Pseudoconvexity constant mu0 and min |grad d| over the closure."""
    pts = g.closure_points()
    mu = _generalized_min_eig(condition1_matrix(h, d, pts), h(pts))
    gn = np.linalg.norm(d.grad(pts), axis=-1)
    i, j = int(np.argmin(mu)), int(np.argmin(gn))
    return Condition1Report(float(mu[i]), float(gn[j]), tuple(pts[i]), tuple(pts[j]))


def normalize_weight(
    d: WeightField,
    mu0: float,
    h: CoefficientField,
    g: Grid,
    margin: float = 0.05,
    a_cap: float = 1e6,
    rtol: float = 1e-12,
) -> WeightField:
    """Affine rescaling a*d + b with mu0 >= 4 and |grad d|_h^2 / 4 >= d > 0.

    ``a`` stays 1 when mu0 already reaches 4, otherwise 4/mu0 inflated by
    ``margin``. ``b`` is 0 whenever that already works, else the midpoint of
    the feasible window; ``a`` doubles until the window opens.
    """
    if mu0 <= 0:
        raise NormalizationError("Condition 1 fails (mu0 <= 0); nothing to normalise")
    pts = g.closure_points()
    dv = d(pts)
    G = np.einsum("...jk,...j,...k->...", h(pts), d.grad(pts), d.grad(pts))
    a = 1.0 if mu0 >= 4.0 else (4.0 / mu0) * (1.0 + margin)
    while a <= a_cap:
        lower = -a * dv.min()
        gap = 0.25 * a * a * G - a * dv
        upper = gap.min()
        if lower < 0 and upper >= -rtol * max(1.0, np.abs(a * dv).max()):
            b = 0.0
        elif upper > lower:
            b = 0.5 * (lower + upper)
        else:
            a *= 2.0
            continue
        out = d.affine(a, b) if (a, b) != (1.0, 0.0) else d
        return replace(out, mu0=a * mu0)
    raise NormalizationError(f"no offset b makes the weight admissible for a <= {a_cap:g}")


def compute_gamma0(h: CoefficientField, d: WeightField, g: Grid) -> np.ndarray:
    """Boolean mask over boundary entries where sum h^{jk} d_j nu_k > 0."""
    p = g.boundary_points
    conormal = np.einsum("...jk,...j,...k->...", h(p), d.grad(p), g.normals)
    return conormal > 0


# ---------------------------------------------------------------------------
# neighbourhoods and waiting times


@dataclass(frozen=True, eq=False)
class Neighborhood:
    """O_r(Gamma0): inside lattice nodes plus boundary entries within ``radius``."""

    mask: np.ndarray
    boundary: np.ndarray
    radius: float
    name: str = ""

    def __sub__(self, other: "Neighborhood") -> np.ndarray:
        return self.mask & ~other.mask

    def issubset(self, other: "Neighborhood") -> bool:
        return not np.any(self.mask & ~other.mask)


def _distance_to(points: np.ndarray, g: Grid, targets: np.ndarray) -> np.ndarray:
    tree = cKDTree(targets)
    dist, _ = tree.query(points)
    return dist


def neighborhood(gamma0: np.ndarray, radius: float, g: Grid, name: str = "") -> Neighborhood:
    if not np.any(gamma0):
        raise GeometryError("Gamma0 is empty; no neighbourhood to build")
    targets = g.boundary_points[gamma0]
    slack = _BALL_SLACK * float(g.spacing.min())
    mask = np.zeros(g.shape, dtype=bool)
    mask[g.inside] = _distance_to(g.inside_points, g, targets) < radius - slack
    bnd = _distance_to(g.boundary_points, g, targets) < radius - slack
    return Neighborhood(mask, bnd, float(radius), name)


def build_neighborhoods(gamma0: np.ndarray, delta: float, delta0: float, g: Grid):
    """(omega, omega0) as distance neighbourhoods of Gamma0 intersected with Omega."""
    if not 0 < delta0 < delta:
        raise GeometryError(f"need 0 < delta0 < delta, got delta0={delta0}, delta={delta}")
    return neighborhood(gamma0, delta, g, "omega"), neighborhood(gamma0, delta0, g, "omega0")


def complement_points(omega: Neighborhood, g: Grid) -> np.ndarray:
    """Points of closure(Omega) outside the neighbourhood."""
    inner = g.nodes[g.inside & ~omega.mask]
    outer = g.boundary_points[~omega.boundary]
    return np.concatenate([inner, outer])


@dataclass(frozen=True)
class WaitingTimes:
    R0: float
    R1: float
    Tstar: float


def compute_times(d: WeightField, omega: Neighborhood, g: Grid) -> WaitingTimes:
    """R0 = min sqrt(d) over the closure, R1 = max sqrt(d) off omega, T* = 2 R1."""
    rest = complement_points(omega, g)
    if rest.size == 0:
        raise GeometryError("closure(Omega) minus omega is empty; shrink omega")
    R0 = math.sqrt(max(float(d(g.closure_points()).min()), 0.0))
    R1 = float(np.sqrt(np.maximum(d(rest), 0.0)).max())
    return WaitingTimes(R0, R1, 2.0 * R1)


# ---------------------------------------------------------------------------
# parameters and observation regions


@dataclass(frozen=True)
class CarlemanParameters:
    """Horizon, region radii and the proof-layer constants.

    The constants ``alpha``, ``c``, ``eps`` (the ladder eps0..eps3) and
    ``eps_inner`` stay ``None`` until :func:`select_carleman_parameters` fills
    them in.
    """

    T: float
    delta: float
    delta0: float
    delta1: float
    alpha: Optional[float] = None
    c: Optional[float] = None
    eps: Optional[tuple[float, float, float, float]] = None
    eps_inner: Optional[float] = None
    zeta: Optional[tuple[float, ...]] = None
    omega1_radius: Optional[float] = None
    omega2_radius: Optional[float] = None

    def __post_init__(self):
        if self.T <= 0:
            raise GeometryError("T must be positive")
        if not 0 < self.delta0 < self.delta:
            raise GeometryError("need 0 < delta0 < delta")
        if not 0 < self.delta1 < 0.5:
            raise GeometryError("delta1 must lie in (0, 1/2)")

    def window(self, eps: float) -> tuple[float, float]:
        return self.T / 2 - eps * self.T, self.T / 2 + eps * self.T

    def violations(self, min_d: float) -> list[str]:
        """Names of the parameter constraints that fail."""
        out = []
        if self.c is not None and not min_d > self.c**2:
            out.append("min d > c^2")
        if self.alpha is not None and self.c is not None:
            if not (1 - 2 * self.c**2 / self.T**2 < self.alpha < 1):
                out.append("1 - 2c^2/T^2 < alpha < 1")
        if self.eps is not None:
            e = self.eps
            if not (0 < e[0] < e[1] < e[2] < e[3] < 0.5):
                out.append("0 < eps0 < eps1 < eps2 < eps3 < 1/2")
            if not e[0] < self.delta1:
                out.append("eps0 < delta1")
        return out

    def to_dict(self) -> dict:
        return {
            k: (list(v) if isinstance(v, tuple) else v)
            for k, v in self.__dict__.items()
        }


@dataclass(frozen=True)
class ObservationRegions:
    D: SpaceTimeRegion
    K: SpaceTimeRegion


def _as_axis(times, T: float) -> TimeAxis:
    return TimeAxis.midpoint(T, int(times)) if isinstance(times, (int, np.integer)) else times


def build_observation_region(
    d: WeightField,
    p: CarlemanParameters,
    omega: Neighborhood,
    omega0: Neighborhood,
    g: Grid,
    times=200,
) -> ObservationRegions:
    """D = {d(x) > (t - T/2)^2} and K = slab over omega0 plus D over omega minus omega0."""
    ax = _as_axis(times, p.T)
    T = p.T
    tau2 = (ax.nodes - T / 2) ** 2
    dv = np.where(g.inside, d(g.nodes), -np.inf)
    D = (dv[None] - tau2.reshape((-1,) + (1,) * g.dim)) > 0
    lo, hi = p.window(p.delta1)
    slab = (ax.nodes > lo) & (ax.nodes < hi)
    ring = (omega.mask & ~omega0.mask)[None]
    K = (slab.reshape((-1,) + (1,) * g.dim) & omega0.mask[None]) | (ring & D)
    return ObservationRegions(
        SpaceTimeRegion(D, g, (ax,), "D"),
        SpaceTimeRegion(K, g, (ax,), "K"),
    )


def prior_regions(x0, omega: Neighborhood, g: Grid, T: float, times=200) -> dict:
    """Earlier observation regions: the full cylinder K1 = (0,T) x omega and
    K2 = K1 restricted to |x - x0|^2 > t^2."""
    ax = _as_axis(times, T)
    K1 = SpaceTimeRegion.cylinder(ax, omega.mask, g, "K1")
    r2 = np.sum((g.nodes - np.asarray(x0, dtype=float)) ** 2, axis=-1)
    cone = r2[None] > (ax.nodes**2).reshape((-1,) + (1,) * g.dim)
    K2 = SpaceTimeRegion(K1.mask & cone, g, (ax,), "K2")
    return {"K1": K1, "K2": K2}


# ---------------------------------------------------------------------------
# Condition 2 and shifted constructions


@dataclass(frozen=True)
class Condition2Report:
    mu0: float
    s: float
    order: float
    degenerate: bool
    min_grad_away: float
    quotients: tuple[float, float, float]


def _quotient(h: CoefficientField, d: WeightField, pts):
    gr = d.grad(pts)
    return np.einsum("...jk,...j,...k->...", h(pts), gr, gr) / d(pts)


def check_condition2(h: CoefficientField, d: WeightField, x0, g: Grid, zero_tol: float = 1e-10) -> Condition2Report:
    """Single interior critical point x0 with d(x0) = 0 = min d, and the limit s.

    s is the limit of |grad d|_h^2 / d at x0, estimated on punctured spheres
    of radius hmin, hmin/2, hmin/4 and Richardson-extrapolated.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    pts = g.closure_points()
    dv = d(pts)
    scale = max(1.0, float(np.abs(dv).max()))
    d0 = float(d(x0[None])[0])
    if abs(d0) > zero_tol * scale:
        raise Condition2Error(f"d(x0) = {d0:.3e} is not zero", [x0])
    if dv.min() < -zero_tol * scale:
        i = int(np.argmin(dv))
        raise Condition2Error(f"min d = {dv[i]:.3e} < d(x0) = 0 at {tuple(pts[i])}", [pts[i]])
    hmin = float(g.spacing.min())
    far = np.linalg.norm(pts - x0, axis=-1) > 1.5 * hmin
    zeros = far & (dv <= zero_tol * scale)
    if zeros.any():
        nodes = [x0] + list(pts[zeros])
        raise Condition2Error(
            "d vanishes away from x0: " + ", ".join(str(tuple(map(float, p))) for p in nodes), nodes
        )
    gn = np.linalg.norm(d.grad(pts), axis=-1)
    crit = _critical_nodes(d, g, x0)
    if crit:
        raise Condition2Error(
            "second critical point near " + ", ".join(str(c) for c in crit),
            [x0] + [np.array(c) for c in crit],
        )
    away = gn[far]
    mu = _generalized_min_eig(condition1_matrix(h, d, pts), h(pts))

    q = []
    for r in (hmin, hmin / 2, hmin / 4):
        dirs = _directions(g.dim)
        q.append(float(np.mean(_quotient(h, d, x0 + r * dirs))))
    q1, q2, q4 = q
    num, den = q1 - q2, q2 - q4
    tiny = 1e-12 * max(1.0, abs(q4))
    if abs(num) <= tiny or abs(den) <= tiny:
        s, order = q4, math.inf
    else:
        rho = num / den
        order = math.log2(rho) if rho > 0 else float("nan")
        s = q4 - den / (rho - 1) if rho != 1 else q4
    degenerate = not (s > 1e-6 * max(1.0, abs(q1)))
    return Condition2Report(float(mu.min()), float(s), float(order), degenerate,
                            float(away.min()) if away.size else math.inf, (q1, q2, q4))


def _directions(dim: int) -> np.ndarray:
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    ang = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def _critical_nodes(d: WeightField, g: Grid, x0) -> list[tuple]:
    """Inside nodes (away from x0) next to which grad d changes sign in every
    component; i.e. a critical point lies within one cell."""
    hmin = float(g.spacing.min())
    gr = np.zeros(g.shape + (g.dim,))
    gr[g.inside] = d.grad(g.inside_points)
    found = []
    for idx in np.argwhere(g.inside):
        node = g.nodes[tuple(idx)]
        if np.linalg.norm(node - x0) <= 1.5 * hmin:
            continue
        ok = True
        for a in range(g.dim):
            hi = idx.copy()
            hi[a] += 1
            if hi[a] >= g.shape[a] or not g.inside[tuple(hi)]:
                ok = False
                break
            if gr[tuple(idx)][a] * gr[tuple(hi)][a] > 0 or gr[tuple(idx)][a] == gr[tuple(hi)][a] != 0:
                ok = False
                break
        if ok and np.all(np.abs(gr[tuple(idx)]) <= 2 * hmin * _hess_bound(d, node)):
            found.append(tuple(map(float, node)))
    return found


def _hess_bound(d: WeightField, node) -> float:
    return float(np.abs(d.hess(node[None])[0]).sum()) + 1e-300


@dataclass(frozen=True)
class ShiftedRegions:
    gamma0: np.ndarray
    D: SpaceTimeRegion
    K: SpaceTimeRegion
    R1: float
    Tstar: float
    delta2: float


def build_shifted_regions(
    d: WeightField,
    p: CarlemanParameters,
    h: CoefficientField,
    g: Grid,
    omega: Neighborhood,
    omega0: Neighborhood,
    times=200,
) -> ShiftedRegions:
    """Regions built from the translated weight x -> d(x + zeta)."""
    zeta = np.zeros(g.dim) if p.zeta is None else np.asarray(p.zeta, dtype=float)
    if d.critical_point is not None:
        moved = np.asarray(d.critical_point, dtype=float) - zeta
        if not _in_closure(g, moved):
            raise GeometryError(f"x0 - zeta = {tuple(moved)} leaves the closed domain")
    dz = d.shifted(zeta)
    gz = compute_gamma0(h, dz, g)
    delta2 = _delta2(gz, omega0, p.delta0, g)
    regions = build_observation_region(dz, p, omega, omega0, g, times)
    rest = complement_points(omega, g)
    if rest.size == 0:
        raise GeometryError("closure(Omega) minus omega is empty; shrink omega")
    r = np.maximum(np.sqrt(np.maximum(d(rest), 0)), np.sqrt(np.maximum(dz(rest), 0)))
    R1 = float(r.max())
    return ShiftedRegions(gz, regions.D.renamed("D_zeta"), regions.K.renamed("K_zeta"), R1, 2 * R1, delta2)


def _in_closure(g: Grid, x, tol=1e-12) -> bool:
    dom = g.domain
    if dom.kind == "disk":
        return float(np.linalg.norm(x - np.asarray(dom.center))) <= dom.radius + tol
    return bool(np.all(x >= np.asarray(dom.lower) - tol) and np.all(x <= np.asarray(dom.upper) + tol))


def _delta2(gz: np.ndarray, omega0: Neighborhood, delta0: float, g: Grid) -> float:
    """Largest delta2 = delta0 (1 - k/8) with O_delta2(Gamma0_zeta) inside omega0."""
    if not gz.any():
        raise GeometryError("shifted Gamma0 is empty")
    for k in range(1, 8):
        r = delta0 * (1 - k / 8)
        if neighborhood(gz, r, g).issubset(omega0):
            return r
    raise GeometryError("no delta2 < delta0 puts O_delta2(Gamma0_zeta) inside omega0")


def cover_violations(W: SpaceTimeRegion, *regions: SpaceTimeRegion) -> int:
    """Nodes of the union of grid closures that W misses."""
    union = regions[0].closure()
    for r in regions[1:]:
        union = union | r.closure()
    return union.violations(W)


# ---------------------------------------------------------------------------
# proof-layer sets


def choose_proof_neighborhoods(
    d: WeightField, T: float, gamma0, delta: float, delta0: float, g: Grid, slack: float = 0.05
):
    """omega0 < omega1 < omega2 < omega with sqrt(d) <= (1 - slack) T/2 off omega1.

    Radii default to delta0 + k (delta - delta0)/3. When that omega1 is too
    small its radius climbs a 64-step ladder towards delta and omega2 takes
    the midpoint between it and delta. ``slack`` keeps eps1 clear of 1/2.
    """
    cap = ((1 - slack) * T / 2) ** 2
    step = (delta - delta0) / 3
    r1, r2 = delta0 + step, delta0 + 2 * step
    if _max_d_off(d, neighborhood(gamma0, r1, g), g) > cap:
        for r in np.linspace(r1, delta, 66)[1:-1]:
            if _max_d_off(d, neighborhood(gamma0, r, g), g) <= cap:
                r1, r2 = float(r), 0.5 * (float(r) + delta)
                break
        else:
            raise ParameterSelectionError(
                "d >= T^2/4 off every omega1 inside omega", ["d < T^2/4 on Omega\\omega1"]
            )
    return neighborhood(gamma0, r1, g, "omega1"), neighborhood(gamma0, r2, g, "omega2")


def _max_d_off(d: WeightField, om: Neighborhood, g: Grid) -> float:
    rest = complement_points(om, g)
    return float(d(rest).max()) if rest.size else -math.inf


@dataclass
class ProofSets:
    """Indicator sets over (t, s, x) for the level-set inclusion chain."""

    d: WeightField
    p: CarlemanParameters
    omega1: Neighborhood
    grid: Grid
    times: tuple[TimeAxis, TimeAxis]
    _phi: np.ndarray = field(init=False, repr=False)
    _bracket: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g, T = self.grid, self.p.T
        dv = np.where(g.inside, self.d(g.nodes), -np.inf)
        tt = (self.times[0].nodes - T / 2) ** 2
        ss = (self.times[1].nodes - T / 2) ** 2
        sh = (1,) * g.dim
        quad = tt[:, None] + ss[None, :]
        self._quad = quad.reshape(quad.shape + sh)
        self._dv = dv[None, None]
        self._outside = (g.inside & ~self.omega1.mask)[None, None]

    def _region(self, mask, name):
        return SpaceTimeRegion(mask, self.grid, self.times, name)

    def _window(self, eps):
        lo, hi = self.p.window(eps)
        t = (self.times[0].nodes > lo) & (self.times[0].nodes < hi)
        s = (self.times[1].nodes > lo) & (self.times[1].nodes < hi)
        return (t[:, None] & s[None, :]).reshape(t.shape + s.shape + (1,) * self.grid.dim)

    def Q(self, b: float) -> SpaceTimeRegion:
        """Level set phi > b^2 over (Omega minus omega1)."""
        phi = self._dv - self.p.alpha * self._quad
        return self._region(self._outside & (phi > b * b), f"Q({b:g})")

    def Dprime(self) -> SpaceTimeRegion:
        return self._region(self._outside & (self._dv - self._quad > 0), "D'")

    def Dsecond(self) -> SpaceTimeRegion:
        inside = self.grid.inside[None, None]
        return self._region(inside & (self._dv - self._quad > 0), "D''")

    def annulus(self, i: int) -> SpaceTimeRegion:
        """Q_i minus Q_i' = window_i^2 x (Omega minus omega1)."""
        return self._region(self._window(self.p.eps[i]) & self._outside, f"Q{i}\\Q{i}'")

    def box(self, i: int) -> SpaceTimeRegion:
        return self._region(self._window(self.p.eps[i]) & self.grid.inside[None, None], f"Q{i}")

    def chain(self) -> list[tuple[str, str, int]]:
        """Violation counts for each link of the nested inclusion chain."""
        c, e = self.p.c, self.p.eps_inner
        seq = [
            self.annulus(0),
            self.Q(c + 2 * e),
            self.Q(c + e),
            self.Q(c),
            self.Dprime(),
            self.annulus(1),
        ]
        return [(a.name, b.name, a.violations(b)) for a, b in zip(seq, seq[1:])]

    def chain_short(self) -> list[tuple[str, str, int]]:
        seq = [self.annulus(0), self.Q(self.p.c), self.Dprime(), self.annulus(1)]
        return [(a.name, b.name, a.violations(b)) for a, b in zip(seq, seq[1:])]

    def box_in_Dsecond(self) -> int:
        return self.box(0).violations(self.Dsecond())


def build_proof_sets(d, p: CarlemanParameters, omega1: Neighborhood, g: Grid, times=200) -> ProofSets:
    if isinstance(times, (int, np.integer)):
        ax = TimeAxis.midpoint(p.T, int(times))
        times = (ax, ax)
    return ProofSets(d, p, omega1, g, tuple(times))


def select_carleman_parameters(
    d: WeightField,
    T: float,
    omega1: Neighborhood,
    g: Grid,
    *,
    delta: float,
    delta0: float,
    delta1: float,
    omega2: Optional[Neighborhood] = None,
    n_time: int = 200,
    c_margin: float = 0.05,
    c: Optional[float] = None,
    max_halvings: int = 30,
) -> CarlemanParameters:
    """Pick c, alpha and the eps-ladder so the inclusion chain holds node-wise.

    c sits ``c_margin`` below R0 and alpha at the middle of its window;
    eps and eps0 start from the analytic bounds and are halved until every
    link of the chain has zero violating nodes.
    """
    R0 = math.sqrt(max(float(d(g.closure_points()).min()), 0.0))
    if R0 <= 0:
        raise ParameterSelectionError("min d must be positive", ["min d > c^2"])
    if c is None:
        c = (1 - c_margin) * R0
    if not 0 < c < R0:
        raise ParameterSelectionError(f"c = {c} must lie in (0, R0 = {R0})", ["min d > c^2"])
    top = _max_d_off(d, omega1, g)
    if top >= T * T / 4:
        raise ParameterSelectionError(
            f"d reaches {top:.6g} >= T^2/4 = {T * T / 4:.6g} off omega1",
            ["d < T^2/4 on Omega\\omega1", "D' in Q1\\Q1'"],
        )
    lo_alpha = max(0.0, 1 - 2 * c * c / (T * T))
    alpha = 0.5 * (lo_alpha + 1.0)
    eps1 = 0.5 * (math.sqrt(max(top, 0.0)) / T + 0.5)
    eps2 = 0.5 * (eps1 + 0.5)
    eps3 = 0.5 * (eps2 + 0.5)
    eps = (R0 - c) / 4
    head = R0 * R0 - (c + 2 * eps) ** 2
    eps0 = min(0.5 * math.sqrt(head / (2 * alpha * T * T)), 0.5 * delta1, 0.5 * eps1)
    base = dict(
        T=T, delta=delta, delta0=delta0, delta1=delta1,
        omega1_radius=omega1.radius, omega2_radius=None if omega2 is None else omega2.radius,
    )
    ax = TimeAxis.midpoint(T, n_time)
    broken: list[str] = []
    for _ in range(max_halvings):
        p = CarlemanParameters(alpha=alpha, c=c, eps=(eps0, eps1, eps2, eps3), eps_inner=eps, **base)
        bad = p.violations(R0 * R0)
        if bad:
            raise ParameterSelectionError("parameter constraints fail: " + "; ".join(bad), bad)
        links = build_proof_sets(d, p, omega1, g, (ax, ax)).chain()
        broken = [f"{a} in {b}" for a, b, n in links if n]
        if not broken:
            return p
        eps *= 0.5
        eps0 *= 0.5
    raise ParameterSelectionError("inclusion chain still broken: " + "; ".join(broken), broken)


def containment_violations(
    D: SpaceTimeRegion,
    K: SpaceTimeRegion,
    omega: Neighborhood,
    omega0: Neighborhood,
    omega2: Neighborhood,
    p: CarlemanParameters,
) -> int:
    """Nodes of (D over omega minus omega0) union (T0,T0') x omega2 missing from K."""
    ax = D.times[0]
    lo, hi = p.window(p.eps[0])
    slab = ((ax.nodes > lo) & (ax.nodes < hi)).reshape((-1,) + (1,) * D.grid.dim)
    lhs = (D.mask & (omega.mask & ~omega0.mask)[None]) | (slab & omega2.mask[None])
    return int(np.count_nonzero(lhs & ~K.mask))
