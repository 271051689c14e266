"""Coefficient matrices h(x) and weights d(x) as analytic evaluators.

Every evaluator takes points of shape ``(..., n)`` and broadcasts over the
leading axes. Derivative tensors index the differentiated variable last,
e.g. ``grad(x)[..., j, k, m]`` is the x_m-derivative of h^{jk}.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import sympy as sp

ArrayFn = Callable[[np.ndarray], np.ndarray]


def _symbols(n: int):
    return sp.symbols(" ".join(f"x{i + 1}" for i in range(n)), real=True, seq=True)


def _lambdify_tensor(exprs, syms) -> ArrayFn:
    """Vectorised evaluator for a nested list of sympy expressions."""
    arr = np.array(exprs, dtype=object)
    shape = arr.shape
    flat = [sp.sympify(e) for e in arr.ravel()]
    fns = [sp.lambdify(syms, e, "numpy") for e in flat]

    def fn(pts):
        pts = np.asarray(pts, dtype=float)
        lead = pts.shape[:-1]
        cols = [pts[..., i] for i in range(pts.shape[-1])]
        out = np.empty(lead + (len(fns),))
        for i, f in enumerate(fns):
            out[..., i] = np.broadcast_to(f(*cols), lead)
        return out.reshape(lead + shape)

    return fn


def _zeros(n: int, rank: int) -> ArrayFn:
    return lambda pts: np.zeros(np.shape(pts)[:-1] + (n,) * rank)


@dataclass(frozen=True)
class CoefficientField:
    """Matrix field h^{jk}(x) with optional first and second derivatives."""

    dim: int
    matrix: ArrayFn
    grad: Optional[ArrayFn] = None
    hess: Optional[ArrayFn] = None
    label: str = "custom"

    @property
    def differentiable(self) -> bool:
        return self.grad is not None and self.hess is not None

    def __call__(self, pts) -> np.ndarray:
        return self.matrix(pts)

    @classmethod
    def constant(cls, mat, label: str = "constant") -> "CoefficientField":
        mat = np.array(mat, dtype=float)
        n = mat.shape[0]
        return cls(
            n,
            lambda pts: np.broadcast_to(mat, np.shape(pts)[:-1] + (n, n)).copy(),
            _zeros(n, 3),
            _zeros(n, 4),
            label,
        )

    @classmethod
    def identity(cls, n: int) -> "CoefficientField":
        return cls.constant(np.eye(n), label="identity")

    @classmethod
    def diagonal(cls, values) -> "CoefficientField":
        return cls.constant(np.diag(np.asarray(values, dtype=float)), label="diagonal")

    @classmethod
    def from_expressions(cls, exprs, label: str = "expression") -> "CoefficientField":
        """Build from an n x n nested list of strings in ``x1, ..., xn``."""
        n = len(exprs)
        syms = _symbols(n)
        loc = {str(s): s for s in syms}
        h = [[sp.sympify(e, locals=loc) for e in row] for row in exprs]
        dh = [[[sp.diff(h[j][k], syms[m]) for m in range(n)] for k in range(n)] for j in range(n)]
        ddh = [
            [[[sp.diff(dh[j][k][m], syms[p]) for p in range(n)] for m in range(n)] for k in range(n)]
            for j in range(n)
        ]
        return cls(
            n,
            _lambdify_tensor(h, syms),
            _lambdify_tensor(dh, syms),
            _lambdify_tensor(ddh, syms),
            label,
        )

    @classmethod
    def tabulated(cls, axes, values) -> "CoefficientField":
        """Piecewise-linear interpolation of node values ``(*shape, n, n)``.

        No derivatives are available, so the field can drive the wave solver
        but not the Carleman frame.
        """
        from scipy.interpolate import RegularGridInterpolator

        values = np.asarray(values, dtype=float)
        n = values.shape[-1]
        interp = RegularGridInterpolator(tuple(axes), values, bounds_error=False, fill_value=None)

        def mat(pts):
            pts = np.asarray(pts, dtype=float)
            return interp(pts.reshape(-1, n)).reshape(pts.shape[:-1] + (n, n))

        return cls(n, mat, None, None, "tabulated")


@dataclass(frozen=True)
class WeightField:
    """Escape function d(x) with derivatives up to third order.

    ``scale`` and ``offset`` record an affine normalisation a*d + b applied
    to a base weight; ``shift`` records evaluation at x + zeta.
    """

    dim: int
    value: ArrayFn
    grad: ArrayFn
    hess: ArrayFn
    third: Optional[ArrayFn] = None
    label: str = "custom"
    scale: float = 1.0
    offset: float = 0.0
    shift: Optional[tuple[float, ...]] = None
    critical_point: Optional[tuple[float, ...]] = None
    center: Optional[tuple[float, ...]] = None
    mu0: Optional[float] = None

    def __call__(self, pts) -> np.ndarray:
        return self.value(pts)

    def affine(self, a: float, b: float) -> "WeightField":
        """The weight a*d + b (derivatives scale by a)."""
        f, g, H, D3 = self.value, self.grad, self.hess, self.third
        return replace(
            self,
            value=lambda x: a * f(x) + b,
            grad=lambda x: a * g(x),
            hess=lambda x: a * H(x),
            third=None if D3 is None else (lambda x: a * D3(x)),
            scale=self.scale * a,
            offset=a * self.offset + b,
        )

    def shifted(self, zeta) -> "WeightField":
        """The weight x -> d(x + zeta)."""
        z = np.asarray(zeta, dtype=float)
        f, g, H, D3 = self.value, self.grad, self.hess, self.third
        cp = None
        if self.critical_point is not None:
            cp = tuple(float(v) for v in np.asarray(self.critical_point) - z)
        return replace(
            self,
            value=lambda x: f(np.asarray(x) + z),
            grad=lambda x: g(np.asarray(x) + z),
            hess=lambda x: H(np.asarray(x) + z),
            third=None if D3 is None else (lambda x: D3(np.asarray(x) + z)),
            shift=tuple(float(v) for v in z),
            critical_point=cp,
        )

    @classmethod
    def paraboloid(cls, center, scale: float = 1.0) -> "WeightField":
        """d(x) = scale * |x - center|^2."""
        c = np.atleast_1d(np.asarray(center, dtype=float))
        n = c.size
        eye = np.eye(n)

        def value(x):
            r = np.asarray(x) - c
            return scale * np.sum(r * r, axis=-1)

        def grad(x):
            return scale * 2.0 * (np.asarray(x) - c)

        def hess(x):
            return np.broadcast_to(2.0 * scale * eye, np.shape(x)[:-1] + (n, n)).copy()

        return cls(
            n,
            value,
            grad,
            hess,
            _zeros(n, 3),
            label="paraboloid",
            critical_point=tuple(c),
            center=tuple(c),
            scale=1.0,
        )

    @classmethod
    def constant(cls, value: float, dim: int) -> "WeightField":
        return cls(
            dim,
            lambda x: np.full(np.shape(x)[:-1], float(value)),
            _zeros(dim, 1),
            _zeros(dim, 2),
            _zeros(dim, 3),
            label="constant",
        )

    @classmethod
    def from_expression(cls, expr: str, dim: int, critical_point=None) -> "WeightField":
        """Weight given as a sympy-parsable string in ``x1, ..., xn``."""
        syms = _symbols(dim)
        e = sp.sympify(expr, locals={str(s): s for s in syms})
        g = [sp.diff(e, s) for s in syms]
        H = [[sp.diff(gi, s) for s in syms] for gi in g]
        D3 = [[[sp.diff(Hij, s) for s in syms] for Hij in row] for row in H]
        scalar = _lambdify_tensor([e], syms)
        return cls(
            dim,
            lambda x: scalar(x)[..., 0],
            _lambdify_tensor(g, syms),
            _lambdify_tensor(H, syms),
            _lambdify_tensor(D3, syms),
            label=f"expr:{expr}",
            critical_point=None if critical_point is None else tuple(np.atleast_1d(critical_point)),
        )
