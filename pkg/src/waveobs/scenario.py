"""Scenario files: validated configuration and the objects built from it."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

from . import geometry as geo
from .fields import CoefficientField, WeightField
from .grid import Grid, disk_grid, interval_grid, rectangle_grid

Num = Union[float, str]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainSpec(_Model):
    kind: Literal["interval", "rectangle", "disk"] = "interval"
    lower: list[float] = [0.0]
    upper: list[float] = [1.0]
    center: list[float] = [0.0, 0.0]
    radius: float = 1.0
    resolution: int = Field(200, description="cells per axis")

    @field_validator("resolution")
    @classmethod
    def _res(cls, v):
        if v < 8:
            raise ValueError("need at least 8 nodes per axis")
        return v

    @property
    def dim(self) -> int:
        return {"interval": 1, "rectangle": 2, "disk": 2}[self.kind]

    def build(self, scale: int = 1) -> Grid:
        n = self.resolution * scale
        if self.kind == "interval":
            return interval_grid(self.lower[0], self.upper[0], n)
        if self.kind == "rectangle":
            return rectangle_grid(self.lower, self.upper, n)
        return disk_grid(self.center, self.radius, n)


class CoefficientSpec(_Model):
    kind: Literal["identity", "diagonal", "expression", "tabulated"] = "identity"
    values: Optional[list[float]] = None
    expressions: Optional[list[list[str]]] = None
    file: Optional[str] = None

    def build(self, dim: int, grid: Optional[Grid] = None, base: Path = Path(".")) -> CoefficientField:
        if self.kind == "identity":
            return CoefficientField.identity(dim)
        if self.kind == "diagonal":
            if not self.values or len(self.values) != dim:
                raise ValueError(f"diagonal coefficients need {dim} values")
            return CoefficientField.diagonal(self.values)
        if self.kind == "expression":
            if not self.expressions:
                raise ValueError("expression coefficients need 'expressions'")
            return CoefficientField.from_expressions(self.expressions)
        if self.file is None or grid is None:
            raise ValueError("tabulated coefficients need 'file'")
        values = np.load(base / self.file)
        return CoefficientField.tabulated(grid.axes, values)


class WeightSpec(_Model):
    kind: Literal["paraboloid", "expression"] = "paraboloid"
    center: list[float] = [-0.1]
    expr: Optional[str] = None
    critical_point: Optional[list[float]] = None

    def build(self, dim: int) -> WeightField:
        if self.kind == "paraboloid":
            if len(self.center) != dim:
                raise ValueError(f"paraboloid centre needs {dim} coordinates")
            return WeightField.paraboloid(self.center)
        if not self.expr:
            raise ValueError("expression weight needs 'expr'")
        return WeightField.from_expression(self.expr, dim, self.critical_point)


class LowerOrderSpec(_Model):
    q: Num = 0.0
    q1: Optional[list[Num]] = None
    q2: Num = 0.0


class GeometrySpec(_Model):
    delta: float = 0.3
    delta0: float = 0.1
    delta1: float = 0.25
    zeta: Optional[list[float]] = None

    @field_validator("delta")
    @classmethod
    def _delta(cls, v):
        if v <= 0:
            raise ValueError("delta must be positive")
        return v

    @field_validator("delta0")
    @classmethod
    def _delta0(cls, v, info: ValidationInfo):
        if v <= 0:
            raise ValueError("delta0 must be positive")
        d = info.data.get("delta")
        if d is not None and v >= d:
            raise ValueError(f"delta0 = {v} must be smaller than delta = {d}")
        return v

    @field_validator("delta1")
    @classmethod
    def _delta1(cls, v):
        if not 0 < v < 0.5:
            raise ValueError("delta1 must lie in (0, 1/2)")
        return v


class TimeSpec(_Model):
    T: Optional[float] = None
    T_factor: float = 1.1
    nt: int = 200
    proof_nt: int = 200

    @field_validator("nt", "proof_nt")
    @classmethod
    def _nt(cls, v):
        if v < 8:
            raise ValueError("need at least 8 time nodes")
        return v


class CarlemanSpec(_Model):
    identity_points: int = 1000
    families: list[Literal["zero", "polynomial", "trig", "gaussian"]] = ["zero", "polynomial", "trig", "gaussian"]
    lambdas: list[float] = [1, 2, 5, 10, 20, 50, 100]
    identity_lambda: float = 2.0
    sweep_nt: int = 60
    sweep_points: int = 0  # 0 = every node of Q(c)


class ObserveSpec(_Model):
    m: int = 20
    lambda0: float = 0.0
    refine: bool = True
    stability: float = 0.2


class EnergySpec(_Model):
    draws: int = 10
    r_target: float = 2.0
    windows: list[float] = [0.1, 0.4, 1.2, 1.5]
    stability: float = 0.3


class Scenario(_Model):
    name: str = "scenario"
    domain: DomainSpec = DomainSpec()
    coefficients: CoefficientSpec = CoefficientSpec()
    weight: WeightSpec = WeightSpec()
    lower_order: LowerOrderSpec = LowerOrderSpec()
    geometry: GeometrySpec = GeometrySpec()
    time: TimeSpec = TimeSpec()
    carleman: CarlemanSpec = CarlemanSpec()
    observe: ObserveSpec = ObserveSpec()
    energy: EnergySpec = EnergySpec()
    seed: int = 0

    @model_validator(mode="after")
    def _dims(self):
        dim = self.domain.dim
        if self.weight.kind == "paraboloid" and len(self.weight.center) != dim:
            raise ValueError(f"weight.center needs {dim} coordinates")
        if self.geometry.zeta is not None and len(self.geometry.zeta) != dim:
            raise ValueError(f"geometry.zeta needs {dim} coordinates")
        return self

    @classmethod
    def load(cls, path) -> "Scenario":
        text = Path(path).read_text()
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        return cls.model_validate(data or {})

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


# ---------------------------------------------------------------------------
# objects built from a scenario


@dataclass
class Setup:
    scenario: Scenario
    grid: Grid
    h: CoefficientField
    d: WeightField
    coeff: geo.CoefficientReport
    condition: str  # "condition1" or "condition2"
    cond1: Optional[geo.Condition1Report]
    cond2: Optional[geo.Condition2Report]
    gamma0: np.ndarray
    omega: geo.Neighborhood
    omega0: geo.Neighborhood
    times: geo.WaitingTimes
    T: float

    @property
    def x0(self):
        return self.d.critical_point

    def params(self, **kw) -> geo.CarlemanParameters:
        g = self.scenario.geometry
        zeta = None if g.zeta is None else tuple(g.zeta)
        return geo.CarlemanParameters(T=self.T, delta=g.delta, delta0=g.delta0, delta1=g.delta1, zeta=zeta, **kw)


def build_setup(sc: Scenario, scale: int = 1, base: Path = Path("."), T: Optional[float] = None) -> Setup:
    """Grid, fields, boundary set, neighbourhoods and horizon for a scenario."""
    g = sc.domain.build(scale)
    dim = sc.domain.dim
    h = sc.coefficients.build(dim, g, base)
    coeff = geo.verify_coefficients(h, g)
    d = sc.weight.build(dim)
    if not h.differentiable:
        raise ValueError("the weight checks need analytic coefficient derivatives")
    cp = d.critical_point
    interior = cp is not None and geo._in_closure(g, np.asarray(cp, dtype=float))
    cond1 = cond2 = None
    if interior:
        cond2 = geo.check_condition2(h, d, cp, g)
        condition = "condition2"
    else:
        cond1 = geo.check_condition1(h, d, g)
        if not cond1.holds:
            raise geo.GeometryError(f"Condition 1 fails: mu0={cond1.mu0:.4g}, min|grad d|={cond1.min_grad:.4g}")
        d = geo.normalize_weight(d, cond1.mu0, h, g)
        condition = "condition1"
    gamma0 = geo.compute_gamma0(h, d, g)
    omega, omega0 = geo.build_neighborhoods(gamma0, sc.geometry.delta, sc.geometry.delta0, g)
    times = geo.compute_times(d, omega, g)
    if T is None:
        T = sc.time.T if sc.time.T is not None else sc.time.T_factor * times.Tstar
    return Setup(sc, g, h, d, coeff, condition, cond1, cond2, gamma0, omega, omega0, times, float(T))
