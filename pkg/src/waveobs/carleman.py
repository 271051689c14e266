"""Carleman weight, the full pointwise frame, and numerical checks of the
weighted identity and its lower bound.

Points are batches ``z`` of shape ``(N, 2 + n)`` ordered ``(t, s, x1..xn)``.
Every quantity that is quadratic in v = theta * u is stored divided by
theta^2 (linear ones by theta), so no exponential ever has to be formed.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .fields import CoefficientField, WeightField
from .geometry import CarlemanParameters
from .testfunctions import TestFunction

CSV_SCHEMA_IDENTITY = "waveobs-identity/1"
CSV_SCHEMA_SWEEP = "waveobs-sweep/1"
LOG_CUTOFF = 300.0


class FrameInconsistency(RuntimeError):
    """The two algebraic forms of A disagree: an implementation bug."""


class PreconditionError(ValueError):
    pass


class NoThreshold(RuntimeError):
    def __init__(self, msg, worst=None):
        super().__init__(msg)
        self.worst = worst


# ---------------------------------------------------------------------------
# first-order jets


class Jet:
    """Value and gradient over (t, s, x), batched over points."""

    __slots__ = ("v", "g")

    def __init__(self, v, g):
        self.v = v
        self.g = g

    def __add__(self, o):
        if isinstance(o, Jet):
            return Jet(self.v + o.v, self.g + o.g)
        return Jet(self.v + o, self.g)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.v, -self.g)

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if isinstance(o, Jet):
            return Jet(self.v * o.v, self.v[:, None] * o.g + o.v[:, None] * self.g)
        o = np.asarray(o, dtype=float)
        return Jet(self.v * o, self.g * (o[:, None] if o.ndim else o))

    __rmul__ = __mul__

    def d(self, a: int) -> np.ndarray:
        return self.g[:, a]


def _jsum(items) -> Jet:
    items = list(items)
    out = items[0]
    for it in items[1:]:
        out = out + it
    return out


# ---------------------------------------------------------------------------
# weight


@dataclass(frozen=True)
class WeightBundle:
    """phi, ell = lambda * phi and the derivatives of ell up to third order."""

    phi: np.ndarray
    ell: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    third: np.ndarray

    @property
    def log_theta(self) -> np.ndarray:
        return self.ell

    @property
    def log_domain(self) -> np.ndarray:
        return self.ell > LOG_CUTOFF

    @property
    def theta(self) -> np.ndarray:
        """exp(ell); NaN where ell exceeds the log-domain cutoff."""
        out = np.full(self.ell.shape, np.nan)
        ok = ~self.log_domain
        out[ok] = np.exp(self.ell[ok])
        return out


def eval_weight(z, lam: float, p: CarlemanParameters, d: WeightField) -> WeightBundle:
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if lam < 0:
        raise PreconditionError("lambda must be nonnegative")
    if p.alpha is None or not 0 < p.alpha < 1:
        raise PreconditionError("alpha must lie in (0, 1)")
    if d.third is None:
        raise PreconditionError("weight lacks third derivatives")
    N, m = z.shape
    n = m - 2
    a, T = p.alpha, p.T
    x = z[:, 2:]
    tau, sig = z[:, 0] - T / 2, z[:, 1] - T / 2
    phi = d(x) - a * tau**2 - a * sig**2
    grad = np.empty((N, m))
    grad[:, 0] = -2 * lam * a * tau
    grad[:, 1] = -2 * lam * a * sig
    grad[:, 2:] = lam * d.grad(x)
    hess = np.zeros((N, m, m))
    hess[:, 0, 0] = hess[:, 1, 1] = -2 * lam * a
    hess[:, 2:, 2:] = lam * d.hess(x)
    third = np.zeros((N, m, m, m))
    third[:, 2:, 2:, 2:] = lam * d.third(x)
    assert n == d.dim
    return WeightBundle(phi, lam * phi, grad, hess, third)


# ---------------------------------------------------------------------------
# Psi


PsiFn = Callable[[np.ndarray], tuple]


def zero_psi(x):
    x = np.atleast_2d(x)
    return np.zeros(len(x)), np.zeros(x.shape)


def lower_bound_psi(h: CoefficientField, d: WeightField, lam: float, alpha: float) -> PsiFn:
    """Psi = -lam sum_jk (h^{jk} d_j)_k + 2 lam (1 - alpha), with its x-gradient."""
    if not h.differentiable or d.third is None:
        raise PreconditionError("this Psi needs second derivatives of h and third of d")

    def psi(x):
        x = np.atleast_2d(x)
        H, dH, ddH = h(x), h.grad(x), h.hess(x)
        g, D2, D3 = d.grad(x), d.hess(x), d.third(x)
        div = np.einsum("...jkk,...j->...", dH, g) + np.einsum("...jk,...jk->...", H, D2)
        ddiv = (
            np.einsum("...jkkm,...j->...m", ddH, g)
            + np.einsum("...jkk,...jm->...m", dH, D2)
            + np.einsum("...jkm,...jk->...m", dH, D2)
            + np.einsum("...jk,...jkm->...m", H, D3)
        )
        return -lam * div + 2 * lam * (1 - alpha), -lam * ddiv

    return psi


# ---------------------------------------------------------------------------
# frame


@dataclass
class CarlemanFrame:
    """All frame quantities at a batch of points.

    Arrays ``v``, ``dv``, ``I1``, ``I2`` are divided by theta; ``V``, ``M``,
    ``N`` and the identity terms by theta^2. Weight-only quantities (``A``,
    ``B``, ``c``, ``psi``) carry no theta factor.
    """

    z: np.ndarray
    weight: WeightBundle
    psi: np.ndarray
    psi_x: np.ndarray
    A: np.ndarray
    A_alt: np.ndarray
    B: np.ndarray
    c: np.ndarray
    v: np.ndarray
    dv: np.ndarray
    V: np.ndarray
    M: np.ndarray
    N: np.ndarray
    I1: np.ndarray
    I2: np.ndarray
    Pu: np.ndarray
    lhs_terms: dict = field(repr=False, default_factory=dict)
    rhs_terms: dict = field(repr=False, default_factory=dict)

    @property
    def log_theta(self):
        return self.weight.ell

    def rescaled(self) -> dict:
        """Unnormalised v, dv, I1, I2, V, M, N (only valid off the log domain)."""
        th = self.weight.theta
        t2 = th**2
        return {
            "v": self.v * th,
            "dv": self.dv * th[:, None],
            "I1": self.I1 * th,
            "I2": self.I2 * th,
            "V": self.V * t2[:, None],
            "M": self.M * t2,
            "N": self.N * t2,
        }


def _pad(g_x, N, m):
    out = np.zeros((N, m))
    out[:, 2:] = g_x
    return out


def eval_frame(
    u: TestFunction,
    z,
    lam: float,
    p: CarlemanParameters,
    d: WeightField,
    h: CoefficientField,
    psi: Optional[PsiFn] = None,
    a_tol: float = 1e-10,
) -> CarlemanFrame:
    z = np.atleast_2d(np.asarray(z, dtype=float))
    N, m = z.shape
    n = m - 2
    if not h.differentiable:
        raise PreconditionError("coefficient field has no analytic derivatives")
    psi = psi or zero_psi
    x = z[:, 2:]
    w = eval_weight(z, lam, p, d)

    # weight and coefficient jets
    L = [Jet(w.grad[:, a], w.hess[:, a, :]) for a in range(m)]
    LL = [[Jet(w.hess[:, a, b], w.third[:, a, b, :]) for b in range(m)] for a in range(m)]
    H, dH, ddH = h(x), h.grad(x), h.hess(x)
    Hj = [[Jet(H[:, j, k], _pad(dH[:, j, k, :], N, m)) for k in range(n)] for j in range(n)]
    dHj = [
        [[Jet(dH[:, j, k, c], _pad(ddH[:, j, k, c, :], N, m)) for c in range(n)] for k in range(n)]
        for j in range(n)
    ]
    ps, ps_x = psi(x)
    P = Jet(ps, _pad(ps_x, N, m))
    Lt, Ls, Lx = L[0], L[1], L[2:]
    Ltt, Lss = LL[0][0], LL[1][1]
    X = lambda k: 2 + k  # noqa: E731

    pairs = [(j, k) for j in range(n) for k in range(n)]
    A_terms = (
        [Hj[j][k] * Lx[j] * Lx[k] for j, k in pairs]
        + [-(dHj[j][k][j] * Lx[k]) for j, k in pairs]
        + [-(Hj[j][k] * LL[X(j)][X(k)]) for j, k in pairs]
        + [-(Lt * Lt), -(Ls * Ls), Ltt, Lss, -P]
    )
    A = _jsum(A_terms)
    # same quantity grouped as a divergence; symmetry of h makes them agree
    div_hl = sum((Hj[j][k] * Lx[j]).d(X(k)) for j, k in pairs)
    A_alt = (
        -(Lt.v**2) - Ls.v**2 + sum(H[:, j, k] * Lx[j].v * Lx[k].v for j, k in pairs)
        + Ltt.v + Lss.v - div_hl - ps
    )
    scale_A = np.max(np.abs([t.v for t in A_terms]), axis=0)
    gap = np.abs(A.v - A_alt)
    if np.any(gap > a_tol * np.maximum(scale_A, 1e-300)):
        i = int(np.argmax(gap / np.maximum(scale_A, 1e-300)))
        raise FrameInconsistency(f"A forms disagree at {z[i]}: {A.v[i]!r} vs {A_alt[i]!r}")

    c = np.empty((N, n, n))
    for j, k in pairs:
        acc = sum(
            2 * H[:, j, kp] * (Hj[jp][k] * Lx[jp]).d(X(kp)) - (Hj[j][k] * Hj[jp][kp] * Lx[jp]).d(X(kp))
            for jp in range(n)
            for kp in range(n)
        )
        c[:, j, k] = acc + H[:, j, k] * (Ltt.v + Lss.v - ps)
    B = 2 * (
        A.v * ps
        - (A * Lt).d(0)
        - (A * Ls).d(1)
        + sum((A * Hj[j][k] * Lx[j]).d(X(k)) for j, k in pairs)
    )

    # v / theta and its derivatives
    uv, ug, uH = u.evaluate(z)
    lg, lH = w.grad, w.hess
    vg = ug + lg * uv[:, None]
    vH = (
        uH
        + lg[:, :, None] * ug[:, None, :]
        + ug[:, :, None] * lg[:, None, :]
        + (lH + lg[:, :, None] * lg[:, None, :]) * uv[:, None, None]
    )
    v = Jet(uv, vg)
    Dv = [Jet(vg[:, a], vH[:, a, :]) for a in range(m)]
    vt, vs, vx = Dv[0], Dv[1], Dv[2:]

    # flux V^k as grouped summands
    V_terms = []
    for k in range(n):
        hvx = _jsum(Hj[j][k] * vx[j] for j in range(n))
        hlx = _jsum(Hj[j][k] * Lx[j] for j in range(n))
        V_terms.append({
            "hhl_vv": 2 * _jsum(Hj[j][k] * Hj[jp][kp] * Lx[jp] * vx[j] * vx[kp]
                                for j in range(n) for jp in range(n) for kp in range(n)),
            "hAl_v2": hlx * A * v * v,
            "psi_v_hv": -(P * v * hvx),
            "hhl_vv2": -_jsum(Hj[j][k] * Hj[jp][kp] * Lx[j] * vx[jp] * vx[kp]
                              for j in range(n) for jp in range(n) for kp in range(n)),
            "lv_hv": -2 * ((Lt * vt + Ls * vs) * hvx),
            "hl_vtvs": hlx * (vt * vt + vs * vs),
        })
    hvv = _jsum(Hj[j][k] * vx[j] * vx[k] for j, k in pairs)
    hlv = _jsum(Hj[j][k] * Lx[j] * vx[k] for j, k in pairs)
    M_terms = {
        "lt_q": Lt * (vt * vt - vs * vs + hvv),
        "hlv_vt": -2 * (hlv * vt),
        "ls_vs_vt": 2 * (Ls * vs * vt),
        "psi_v_vt": P * v * vt,
        "A_lt_v2": -(A * Lt * v * v),
    }
    N_terms = {
        "ls_q": Ls * (vs * vs - vt * vt + hvv),
        "hlv_vs": -2 * (hlv * vs),
        "lt_vs_vt": 2 * (Lt * vs * vt),
        "psi_v_vs": P * v * vs,
        "A_ls_v2": -(A * Ls * v * v),
    }

    Pu = uH[:, 0, 0] + uH[:, 1, 1] - sum(
        dH[:, j, k, k] * ug[:, X(j)] + H[:, j, k] * uH[:, X(j), X(k)] for j, k in pairs
    )
    I1 = vH[:, 0, 0] + vH[:, 1, 1] - sum((Hj[j][k] * vx[j]).d(X(k)) for j, k in pairs) - A.v * uv
    I2 = -2 * Lt.v * vt.v - 2 * Ls.v * vs.v + 2 * sum(H[:, j, k] * Lx[j].v * vx[k].v for j, k in pairs) - ps * uv

    lhs = {"Pu2": Pu**2}
    for k in range(n):
        for name, t in V_terms[k].items():
            lhs[f"divV{k + 1}:{name}"] = 2 * t.d(X(k))
    for name, t in M_terms.items():
        lhs[f"Mt:{name}"] = 2 * t.d(0)
    for name, t in N_terms.items():
        lhs[f"Ns:{name}"] = 2 * t.d(1)

    lt_x = [LL[0][X(j)].v for j in range(n)]
    ls_x = [LL[1][X(j)].v for j in range(n)]
    dvx = np.stack([vx[k].v for k in range(n)], axis=-1)
    rhs = {
        "vt2": 2 * (Ltt.v - Lss.v + div_hl + ps) * vt.v**2,
        "ltx": -8 * sum(H[:, j, k] * lt_x[j] * vx[k].v for j, k in pairs) * vt.v,
        "lst": 8 * LL[0][1].v * vs.v * vt.v,
        "lsx": -8 * sum(H[:, j, k] * ls_x[j] * vx[k].v for j, k in pairs) * vs.v,
        "vs2": 2 * (Lss.v - Ltt.v + div_hl + ps) * vs.v**2,
        "cjk": 2 * np.einsum("...jk,...j,...k->...", c, dvx, dvx),
        "psi_x": -2 * np.einsum("...jk,...j,...k->...", H, ps_x, dvx) * uv,
        "B": B * uv**2,
    }

    return CarlemanFrame(
        z=z, weight=w, psi=ps, psi_x=ps_x, A=A.v, A_alt=A_alt, B=B, c=c,
        v=uv, dv=vg,
        V=np.stack([_jsum(V_terms[k].values()).v for k in range(n)], axis=-1),
        M=_jsum(M_terms.values()).v, N=_jsum(N_terms.values()).v,
        I1=I1, I2=I2, Pu=Pu, lhs_terms=lhs, rhs_terms=rhs,
    )


# ---------------------------------------------------------------------------
# identity


@dataclass(frozen=True)
class IdentityReport:
    points: np.ndarray
    residual: np.ndarray
    scale: np.ndarray
    label: str = ""

    @property
    def relative(self) -> np.ndarray:
        return np.abs(self.residual) / np.where(self.scale > 0, self.scale, 1.0)

    @property
    def max_relative(self) -> float:
        return float(self.relative.max()) if self.relative.size else 0.0

    def rows(self):
        for z, r, s in zip(self.points, self.residual, self.scale):
            yield [*map(float, z), float(r), float(s)]


def check_identity(u: TestFunction, z, lam, p, d, h, psi=None, label="") -> IdentityReport:
    """Residual of the weighted identity, summand by summand, divided by theta^2.

    residual = LHS - RHS - I1^2 - I2^2 and ``scale`` is the largest absolute
    summand at each point.
    """
    f = eval_frame(u, z, lam, p, d, h, psi)
    terms = list(f.lhs_terms.values())
    negs = list(f.rhs_terms.values()) + [f.I1**2, f.I2**2]
    residual = sum(terms) - sum(negs)
    scale = np.max(np.abs(np.stack(terms + negs)), axis=0)
    return IdentityReport(f.z, residual, scale, label)


def identity_csv(reports) -> str:
    buf = io.StringIO()
    buf.write(f"# schema {CSV_SCHEMA_IDENTITY}\n")
    w = csv.writer(buf, lineterminator="\n")
    m = reports[0].points.shape[1]
    w.writerow(["family", "t", "s"] + [f"x{i + 1}" for i in range(m - 2)] + ["residual", "largest_summand"])
    for rep in reports:
        for row in rep.rows():
            w.writerow([rep.label] + [repr(v) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# pointwise lower bound


def bracket(z, p: CarlemanParameters, d: WeightField) -> np.ndarray:
    """d(x) - alpha^2 (t - T/2)^2 - alpha^2 (s - T/2)^2."""
    z = np.atleast_2d(z)
    a2 = p.alpha**2
    return d(z[:, 2:]) - a2 * (z[:, 0] - p.T / 2) ** 2 - a2 * (z[:, 1] - p.T / 2) ** 2


def lower_bound_margin(u, z, lam, p, d, h, h0: float):
    """(margin, scale) per point for the lower bound, divided by theta^2."""
    psi = lower_bound_psi(h, d, lam, p.alpha)
    f = eval_frame(u, z, lam, p, d, h, psi)
    lhs = sum(f.lhs_terms.values())
    grad2 = np.sum(f.dv[:, 2:] ** 2, axis=1)
    low = 2 * lam * (1 - p.alpha) * (f.dv[:, 0] ** 2 + f.dv[:, 1] ** 2 + h0 * grad2)
    low = low + 8 * (3 + p.alpha) * lam**3 * bracket(f.z, p, d) * f.v**2
    scale = np.max(np.abs(np.stack(list(f.lhs_terms.values()) + [low])), axis=0)
    return lhs - low, scale


@dataclass(frozen=True)
class SweepResult:
    lambdas: tuple
    min_margin: tuple
    argmin: tuple
    certified: tuple
    lambda0: Optional[float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema {CSV_SCHEMA_SWEEP}\n")
        w = csv.writer(buf, lineterminator="\n")
        m = len(self.argmin[0]) if self.argmin else 0
        w.writerow(["lambda", "min_margin", "certified", "t", "s"] + [f"x{i + 1}" for i in range(m - 2)])
        for lam, mm, ok, pt in zip(self.lambdas, self.min_margin, self.certified, self.argmin):
            w.writerow([repr(float(lam)), repr(float(mm)), int(ok)] + [repr(float(v)) for v in pt])
        return buf.getvalue()

    def write_csv(self, path):
        Path(path).write_text(self.to_csv())


def check_pointwise_inequality(
    u: TestFunction,
    lambda_grid,
    z,
    p: CarlemanParameters,
    d: WeightField,
    h: CoefficientField,
    h0: float,
    rtol: float = 1e-10,
    require: bool = True,
) -> SweepResult:
    """Sweep lambda; lambda0 is the least grid value from which the margin
    stays nonnegative (up to ``rtol`` times the largest summand).
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if d.mu0 is not None and d.mu0 < 4 - 1e-9:
        raise PreconditionError(f"weight is not normalised (mu0 = {d.mu0})")
    br = bracket(z, p, d)
    if np.any(br <= 0):
        i = int(np.argmin(br))
        raise PreconditionError(f"sample point {tuple(z[i])} has bracket {br[i]:.3e} <= 0")
    lams = sorted(float(x) for x in lambda_grid)
    mins, args, oks = [], [], []
    for lam in lams:
        margin, scale = lower_bound_margin(u, z, lam, p, d, h, h0)
        i = int(np.argmin(margin))
        mins.append(float(margin[i]))
        args.append(tuple(map(float, z[i])))
        oks.append(bool(np.all(margin >= -rtol * scale)))
    lam0 = None
    for i in range(len(lams)):
        if all(oks[i:]):
            lam0 = lams[i]
            break
    if lam0 is None and require:
        k = int(np.argmin(mins))
        raise NoThreshold(f"margin negative at lambda={lams[-1]}; worst point {args[k]}", args[k])
    return SweepResult(tuple(lams), tuple(mins), tuple(args), tuple(oks), lam0)


def sample_points(region, k: int, rng) -> np.ndarray:
    """Up to ``k`` random lattice nodes of a (t, s, x) region as points."""
    idx = np.argwhere(region.mask)
    if len(idx) == 0:
        raise PreconditionError(f"region {region.name} is empty")
    pick = idx[rng.choice(len(idx), size=min(k, len(idx)), replace=False)]
    pick = pick[np.lexsort(pick.T[::-1])]
    t = region.times[0].nodes[pick[:, 0]]
    s = region.times[1].nodes[pick[:, 1]]
    x = region.grid.nodes[tuple(pick[:, 2:].T)]
    return np.column_stack([t, s, x])


def cjk_lower_gap(frame: CarlemanFrame, lam: float, alpha: float, h0: float) -> np.ndarray:
    """Smallest eigenvalue of 2 c - 4 lam (1 - alpha) h0 I at each point."""
    n = frame.c.shape[-1]
    S = 2 * 0.5 * (frame.c + np.swapaxes(frame.c, -1, -2)) - 4 * lam * (1 - alpha) * h0 * np.eye(n)
    return np.linalg.eigvalsh(S)[:, 0]
