import math

import numpy as np
import pytest

from waveobs import geometry as geo
from waveobs import observability as obs
from waveobs import waveop as wv
from waveobs.fields import CoefficientField
from waveobs.grid import interval_grid
from waveobs.regions import SpaceTimeRegion


@pytest.fixture(scope="module")
def small():
    g = interval_grid(0, 1, 60)
    sys = wv.WaveSystem.build(CoefficientField.identity(1), g)
    return g, sys, obs.build_basis(sys, 6)


def test_basis_is_orthonormal(small):
    g, sys, b = small
    gram = b.vol * b.modes.T @ b.modes
    np.testing.assert_allclose(gram, np.eye(6), atol=1e-12)
    k = np.arange(1, 7)
    hx = 1 / 60
    np.testing.assert_allclose(b.mu, 4 / hx**2 * np.sin(k * math.pi * hx / 2) ** 2, rtol=1e-10)
    with pytest.raises(obs.BasisError):
        obs.build_basis(sys, 0)


def test_pencil_on_known_matrices():
    G = np.diag([4.0, 1e-3, 2.0])
    R = np.sqrt(G)
    p = obs.estimate_constant(G, np.eye(3), R)
    assert p.mu_min == pytest.approx(1e-3)
    assert p.C_obs == pytest.approx(1e3)
    # generalized: M = 2 I halves the spectrum
    assert obs.estimate_constant(G, 2 * np.eye(3)).mu_min == pytest.approx(5e-4)
    with pytest.raises(obs.GramianError):
        obs.estimate_constant(G, -np.eye(3))


def test_square_root_form_resolves_tiny_values():
    R = np.diag([1.0, 1e-12])
    p = obs.estimate_constant(R.T @ R, np.eye(2), R)
    assert p.mu_min == pytest.approx(1e-24, rel=1e-6)
    assert p.non_observable


def test_theoretical_constant_fit():
    for r in (0.5, 2.0):
        C = obs.fit_theoretical_constant(r, 50.0)
        assert obs.theoretical_constant(r, C) == pytest.approx(50.0, rel=1e-9)
    assert obs.fit_theoretical_constant(1.0, math.inf) == math.inf
    assert obs.theoretical_constant(100.0, 100.0) == math.inf


def _regions(g, sys, T):
    ax = obs.solver_axis(sys, T)
    x = g.nodes[..., 0]
    big = SpaceTimeRegion.cylinder(ax, x > 0.6, g, "big")
    sub = SpaceTimeRegion.cylinder(ax, x > 0.8, g, "sub")
    none = SpaceTimeRegion.cylinder(ax, x > 2.0, g, "none")
    return {"big": big, "sub": sub, "none": none}


def test_region_ordering_and_empty_region(small):
    g, sys, b = small
    regs = _regions(g, sys, 2.2)
    cmp = obs.compare_regions(b, sys, regs, 2.2, candidate="sub", prior="big")
    rep = cmp["reports"]
    assert cmp["candidate_in_prior"]
    assert cmp["monotone_violations"] == []
    assert rep["sub"].mu_min <= rep["big"].mu_min
    assert rep["big"].mu_min > 1e-3
    assert rep["none"].non_observable and rep["none"].C_obs == math.inf
    assert rep["none"].to_dict()["C_obs"] == "inf"
    assert obs.comparison_csv(rep).splitlines()[1].startswith("region,T,m")


def test_region_off_axis_rejected(small):
    g, sys, b = small
    ax = geo.TimeAxis.midpoint(2.2, 10)
    bad = SpaceTimeRegion.cylinder(ax, g.inside, g, "bad")
    with pytest.raises(obs.GramianError):
        obs.assemble_gramian(b, sys, {"bad": bad}, 2.2)


def test_gramian_matches_direct_integral(small):
    g, sys, b = small
    T = 1.0
    regs = _regions(g, sys, T)
    gs = obs.assemble_gramian(b, sys, {"big": regs["big"]}, T)
    # first column: w0 = e1, w1 = 0; diagonal entry is int int w^2
    tr = wv.simulate_wave(b.modes[:, 0], 0 * b.modes[:, 0], sys, T)
    ax = obs.solver_axis(sys, T)
    m = regs["big"].mask[:, g.inside]
    direct = float(np.sum(ax.weights[:, None] * m * tr.w**2) * g.cell_volume)
    assert gs.G["big"][0, 0] == pytest.approx(direct, rel=1e-10)


def test_waiting_times(reference):
    wt = obs.waiting_time_comparison(reference.d.center, reference.omega, reference.grid)
    assert wt["T_new"] == pytest.approx(1.6, abs=1e-12)
    assert wt["T_old"] == pytest.approx(2.2, abs=1e-12)


def test_parallel_map_keeps_order():
    assert obs.run_parallel(lambda v: v * v, range(6), threads=3) == [0, 1, 4, 9, 16, 25]
