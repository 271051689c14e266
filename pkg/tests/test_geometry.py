import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from waveobs import geometry as geo
from waveobs.fields import CoefficientField, WeightField
from waveobs.grid import interval_grid, rectangle_grid
from waveobs.regions import TimeAxis


@pytest.fixture(scope="module")
def line():
    return interval_grid(0.0, 1.0, 200)


@pytest.fixture(scope="module")
def square():
    return rectangle_grid((0, 0), (1, 1), 30)


def test_coefficients_report():
    g = rectangle_grid((0, 0), (1, 1), 10)
    rep = geo.verify_coefficients(CoefficientField.diagonal([2.0, 3.0]), g)
    assert rep.h0 == pytest.approx(2.0)
    assert rep.lambda_max == pytest.approx(3.0)
    assert rep.symmetric


def test_indefinite_coefficients_rejected(line):
    h = CoefficientField.from_expressions([["x1 - 0.5"]])
    with pytest.raises(geo.CoefficientError):
        geo.verify_coefficients(h, line)


def test_condition1_paraboloid_2d(square):
    h = CoefficientField.identity(2)
    d = WeightField.paraboloid([-0.2, 0.3])
    rep = geo.check_condition1(h, d, square)
    assert rep.mu0 == pytest.approx(4.0, abs=1e-9)
    assert rep.holds


def test_condition1_anisotropic():
    # d = x1^2 + x2^2 shifted, h = diag(2, 3): the form is 2 h D2d h + ... ; mu0 stays positive
    g = rectangle_grid((0, 0), (1, 1), 20)
    rep = geo.check_condition1(CoefficientField.diagonal([2.0, 3.0]), WeightField.paraboloid([-0.3, -0.3]), g)
    assert rep.holds and rep.mu0 > 0


def test_normalisation_reaches_four(line):
    h = CoefficientField.identity(1)
    d = WeightField.paraboloid([-0.1], scale=0.25)
    rep = geo.check_condition1(h, d, line)
    assert rep.mu0 == pytest.approx(1.0)
    dn = geo.normalize_weight(d, rep.mu0, h, line)
    assert dn.mu0 >= 4 - 1e-9
    assert dn.scale >= 4 - 1e-9
    assert float(dn(line.closure_points()).min()) > 0


def test_gamma0_matches_conormal_sign(square):
    h = CoefficientField.identity(2)
    x0 = np.array([-0.2, 0.3])
    d = WeightField.paraboloid(x0)
    mask = geo.compute_gamma0(h, d, square)
    direct = np.einsum("ij,ij->i", 2 * (square.boundary_points - x0), square.normals) > 0
    np.testing.assert_array_equal(mask, direct)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.1, 50.0), b=st.floats(-5.0, 5.0), cx=st.floats(-1.0, -0.05), cy=st.floats(-0.5, 1.5))
def test_gamma0_invariant_under_affine_rescaling(a, b, cx, cy):
    g = rectangle_grid((0, 0), (1, 1), 12)
    h = CoefficientField.diagonal([1.0, 2.0])
    d = WeightField.paraboloid([cx, cy])
    np.testing.assert_array_equal(geo.compute_gamma0(h, d, g), geo.compute_gamma0(h, d.affine(a, b), g))


def test_reference_geometry(reference):
    st_ = reference
    assert st_.cond1.mu0 == pytest.approx(4.0, abs=1e-6)
    assert st_.cond1.min_grad == pytest.approx(0.2)
    np.testing.assert_allclose(st_.grid.boundary_points[st_.gamma0], [[1.0]])
    assert st_.times.R0 == pytest.approx(0.1)
    assert st_.times.R1 == pytest.approx(0.8)
    assert st_.times.Tstar == pytest.approx(1.6)
    assert st_.T == pytest.approx(1.76)
    assert st_.omega0.issubset(st_.omega)


def test_neighbourhood_radius_is_inclusive(line):
    gam = np.array([False, True])
    om = geo.neighborhood(gam, 0.3, line)
    x = line.nodes[om.mask, 0]
    assert x.min() == pytest.approx(0.705)
    with pytest.raises(geo.GeometryError):
        geo.build_neighborhoods(gam, 0.1, 0.3, line)
    with pytest.raises(geo.GeometryError):
        geo.neighborhood(np.array([False, False]), 0.3, line)


def test_region_structure(reference):
    st_ = reference
    p = st_.params()
    R = geo.build_observation_region(st_.d, p, st_.omega, st_.omega0, st_.grid, 200)
    prior = geo.prior_regions(st_.d.center, st_.omega, st_.grid, st_.T, 200)
    assert R.K.issubset(prior["K1"])
    assert prior["K2"].issubset(prior["K1"])
    # the slab over omega0 is a full time window
    lo, hi = p.window(p.delta1)
    ax = R.K.times[0]
    inslab = (ax.nodes > lo) & (ax.nodes < hi)
    assert np.all(R.K.mask[inslab][:, st_.omega0.mask])
    assert not R.K.mask[~inslab][:, st_.omega0.mask].any()


@pytest.fixture(scope="module")
def proof(reference):
    st_ = reference
    sc = st_.scenario.geometry
    om1, om2 = geo.choose_proof_neighborhoods(st_.d, st_.T, st_.gamma0, sc.delta, sc.delta0, st_.grid)
    p = geo.select_carleman_parameters(
        st_.d, st_.T, om1, st_.grid, delta=sc.delta, delta0=sc.delta0, delta1=sc.delta1, omega2=om2, n_time=60
    )
    return p, om1, om2, geo.build_proof_sets(st_.d, p, om1, st_.grid, 60)


def test_parameters_are_admissible(proof, reference):
    p, om1, om2, _ = proof
    assert p.violations(reference.times.R0**2) == []
    assert 0 < p.c < reference.times.R0
    assert 1 - 2 * p.c**2 / p.T**2 < p.alpha < 1
    assert reference.omega0.issubset(om1) and om1.issubset(om2) and om2.issubset(reference.omega)


@settings(max_examples=20, deadline=None)
@given(b1=st.floats(0.0, 0.3), b2=st.floats(0.0, 0.3))
def test_level_sets_shrink_with_level(proof, b1, b2):
    sets = proof[3]
    lo, hi = sorted((b1, b2))
    assert sets.Q(hi).issubset(sets.Q(lo))


def test_explicit_c_out_of_range(reference, proof):
    st_, om1 = reference, proof[1]
    with pytest.raises(geo.ParameterSelectionError) as err:
        geo.select_carleman_parameters(st_.d, st_.T, om1, st_.grid, delta=0.3, delta0=0.1, delta1=0.25, c=0.2)
    assert "min d > c^2" in err.value.broken


def test_short_horizon_breaks_selection(reference, proof):
    st_, om1 = reference, proof[1]
    with pytest.raises(geo.ParameterSelectionError) as err:
        geo.select_carleman_parameters(st_.d, 1.0, om1, st_.grid, delta=0.3, delta0=0.1, delta1=0.25)
    assert any("T^2/4" in b for b in err.value.broken)


def test_condition2_quotient(line):
    h = CoefficientField.identity(1)
    rep = geo.check_condition2(h, WeightField.paraboloid([0.5]), [0.5], line)
    assert rep.s == pytest.approx(4.0, abs=1e-3)
    assert not rep.degenerate


def test_condition2_degenerate_weight(line):
    d = WeightField.from_expression("(x1 - 0.5)**4", 1, (0.5,))
    rep = geo.check_condition2(CoefficientField.identity(1), d, [0.5], line)
    assert rep.degenerate
    assert rep.s == pytest.approx(0.0, abs=1e-6)


def test_condition2_rejects_second_zero(line):
    d = WeightField.from_expression("(x1 - 0.5)**2 * (x1 - 0.8)**2", 1, (0.5,))
    with pytest.raises(geo.Condition2Error) as err:
        geo.check_condition2(CoefficientField.identity(1), d, [0.5], line)
    assert any(abs(n[0] - 0.8) < 1e-9 for n in err.value.nodes)


def test_shifted_regions(interior):
    st_ = interior
    assert st_.times.R1 == pytest.approx(0.2)
    assert st_.times.Tstar == pytest.approx(0.4)
    p = st_.params()
    sr = geo.build_shifted_regions(st_.d, p, st_.h, st_.grid, st_.omega, st_.omega0, 100)
    assert sr.R1 == pytest.approx(0.25)
    assert sr.Tstar == pytest.approx(0.5)
    assert 0 < sr.delta2 < p.delta0


def test_shift_leaving_domain(interior):
    st_ = interior
    from dataclasses import replace

    p = replace(st_.params(), zeta=(0.9,))
    with pytest.raises(geo.GeometryError):
        geo.build_shifted_regions(st_.d, p, st_.h, st_.grid, st_.omega, st_.omega0, 50)


def test_parameters_validate():
    with pytest.raises(geo.GeometryError):
        geo.CarlemanParameters(T=1.0, delta=0.1, delta0=0.2, delta1=0.25)
    with pytest.raises(geo.GeometryError):
        geo.CarlemanParameters(T=1.0, delta=0.3, delta0=0.1, delta1=0.6)
    ax = TimeAxis.midpoint(1.0, 4)
    assert len(ax) == 4
