import math

import numpy as np
import pytest

from waveobs import waveop as wv
from waveobs.fields import CoefficientField
from waveobs.grid import interval_grid, rectangle_grid

H1 = CoefficientField.identity(1)


def test_small_stencil():
    op = wv.assemble_elliptic(H1, interval_grid(0, 1, 4), lambda0=1.0)
    np.testing.assert_allclose(op.matrix.toarray(), [[33, -16, 0], [-16, 33, -16], [0, -16, 33]])


def test_variable_coefficients_give_symmetric_operator():
    h = CoefficientField.from_expressions([["1 + 0.3*x1", "0.2*x2"], ["0.2*x2", "1.5"]])
    op = wv.assemble_elliptic(h, rectangle_grid((0, 0), (1, 1), 20))
    assert abs(op.matrix - op.matrix.T).max() < 1e-12


def test_negative_operator_rejected():
    with pytest.raises(wv.IndefiniteOperator):
        wv.assemble_elliptic(CoefficientField.constant([[-1.0]]), interval_grid(0, 1, 20))
    with pytest.raises(ValueError):
        wv.assemble_elliptic(H1, interval_grid(0, 1, 20), lambda0=-1.0)


def test_hminus1_of_a_sine():
    g = interval_grid(0, 1, 400)
    op = wv.assemble_elliptic(H1, g)
    x = g.inside_points[:, 0]
    got = wv.hminus1_norm(np.sin(3 * math.pi * x), op) ** 2
    assert got == pytest.approx(1 / (2 * 9 * math.pi**2), rel=1e-4)


def _mode_error(n):
    g = interval_grid(0, 1, n)
    sys = wv.WaveSystem.build(H1, g)
    x = g.inside_points[:, 0]
    tr = wv.simulate_wave(np.sin(math.pi * x), 0 * x, sys, 1.76)
    ex = np.cos(math.pi * tr.times)[:, None] * np.sin(math.pi * x)[None]
    return math.sqrt(np.sum((tr.w - ex) ** 2) / np.sum(ex**2)), tr


def test_free_mode_converges_at_second_order():
    e1, tr = _mode_error(100)
    e2, _ = _mode_error(200)
    assert e1 < 1e-3
    assert e1 / e2 == pytest.approx(4.0, rel=0.1)
    assert wv.check_energy_bound(tr).fitted_C < 1e-3


def test_constant_potential_shifts_frequency():
    g = interval_grid(0, 1, 200)
    sys = wv.WaveSystem.build(H1, g, wv.LowerOrderTerms.constant(1, q=3.0))
    x = g.inside_points[:, 0]
    tr = wv.simulate_wave(np.sin(math.pi * x), 0 * x, sys, 1.76)
    ex = np.cos(math.sqrt(math.pi**2 - 3.0) * tr.times)[:, None] * np.sin(math.pi * x)[None]
    assert math.sqrt(np.sum((tr.w - ex) ** 2) / np.sum(ex**2)) < 1e-3


def test_damping_dissipates():
    g = interval_grid(0, 1, 100)
    sys = wv.WaveSystem.build(H1, g, wv.LowerOrderTerms.constant(1, q2=-0.5))
    x = g.inside_points[:, 0]
    tr = wv.simulate_wave(np.sin(math.pi * x), 0 * x, sys, 1.0)
    assert tr.E[-1] < tr.E[0]
    assert tr.r == pytest.approx(0.5)


def test_expression_terms_and_r():
    lot = wv.LowerOrderTerms.from_spec(1, q="sin(t)*x1", q1=[0.5], q2=0.0)
    g = interval_grid(0, 1, 50)
    assert lot.r(g, 2.0) == pytest.approx(1.0, rel=1e-3)


def test_random_draw_hits_target_r():
    g = interval_grid(0, 1, 50)
    lot = wv.LowerOrderTerms.random(1, np.random.default_rng(4), 2.0, g, 1.0)
    assert lot.r(g, 1.0) == pytest.approx(2.0)


def test_cfl_guard():
    g = interval_grid(0, 1, 50)
    sys = wv.WaveSystem.build(H1, g)
    x = g.inside_points[:, 0]
    with pytest.raises(wv.CFLViolation):
        wv.simulate_wave(np.sin(math.pi * x), 0 * x, sys, 1.0, dt=2 * sys.dt_max)


def test_record_round_trip(tmp_path):
    _, tr = _mode_error(40)
    tr.write_record(tmp_path / "w.bin")
    head, arr = wv.read_record(tmp_path / "w.bin")
    assert head["nsteps"] == len(tr.times) - 1
    np.testing.assert_array_equal(arr[:, 1:-1], tr.w)
    assert tr.energy_csv().splitlines()[1] == "t,E,w_L2,wt_Hminus1"


def test_integral_bound_windows():
    _, tr = _mode_error(60)
    ratio = wv.check_integral_bound(tr, [0.1, 0.4, 1.2, 1.5])
    assert 0 < ratio < math.inf
    with pytest.raises(wv.EnergyError):
        wv.check_integral_bound(tr, [0.4, 0.1, 1.2, 1.5])
    with pytest.raises(wv.EnergyError):
        wv.energy(tr, 0.123456)
