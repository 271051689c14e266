"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from waveobs import carleman as car
from waveobs import geometry as geo
from waveobs import observability as obs
from waveobs import testfunctions as tf
from waveobs import waveop as wv
from waveobs.cli import energy_draw, proof_setup
from waveobs.fields import CoefficientField, WeightField
from waveobs.grid import interval_grid, rectangle_grid
from waveobs.regions import TimeAxis
from waveobs.scenario import build_setup

from .conftest import load, record


def test_c01_identity():
    rng = np.random.default_rng(2024)
    T, lam, k = 1.76, 2.0, 1000
    p = geo.CarlemanParameters(T=T, delta=0.3, delta0=0.1, delta1=0.25, alpha=0.9)
    cases = [
        (1, CoefficientField.identity(1)),
        (2, CoefficientField.identity(2)),
        (2, CoefficientField.diagonal([2.0, 3.0])),
    ]
    worst, t0 = 0.0, time.perf_counter()
    for n, h in cases:
        d = WeightField.paraboloid([-0.1] * n)
        psi = car.lower_bound_psi(h, d, lam, p.alpha)
        for fam in tf.FAMILIES:
            z = np.column_stack([rng.uniform(0, T, (k, 2)), rng.uniform(0, 1, (k, n))])
            rep = car.check_identity(tf.random_family(fam, 2 + n, rng), z, lam, p, d, h, psi)
            worst = max(worst, rep.max_relative)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed <= 60
    record(1, ok, f"identity max relative residual {worst:.2e} (<= 1e-6), {elapsed:.1f}s (<= 60s)")
    assert ok


def test_c02_condition1_and_gamma0():
    h1, g1 = CoefficientField.identity(1), interval_grid(0, 1, 200)
    h2, g2 = CoefficientField.identity(2), rectangle_grid((0, 0), (1, 1), 40)
    x0 = np.array([-0.2, 0.4])
    d1, d2 = WeightField.paraboloid([-0.1]), WeightField.paraboloid(x0)
    mu1 = geo.check_condition1(h1, d1, g1).mu0
    mu2 = geo.check_condition1(h2, d2, g2).mu0
    # conormal derivative of |x - x0|^2 against the outward normal
    gam = geo.compute_gamma0(h2, d2, g2)
    expect = np.einsum("ij,ij->i", 2 * (g2.boundary_points - x0), g2.normals) > 0
    gam1 = geo.compute_gamma0(h1, d1, g1)
    ok = abs(mu1 - 4) <= 1e-6 and abs(mu2 - 4) <= 1e-6 and np.array_equal(gam, expect)
    ok = ok and np.array_equal(gam1, [False, True])
    record(2, ok, f"mu0 = {mu1:.9f} (1D), {mu2:.9f} (2D); Gamma0 node mismatches {int(np.sum(gam != expect))}")
    assert ok


def test_c03_parameter_selection(reference):
    pp, om1 = proof_setup(reference)
    sets = geo.build_proof_sets(reference.d, pp, om1, reference.grid, 200)
    chain = sets.chain()
    bad = sum(n for _, _, n in chain)
    ok = bad == 0 and reference.grid.shape == (201,)
    record(3, ok, f"parameters c={pp.c:.4g} alpha={pp.alpha:.5f}; chain violations {bad} at 200x200x200")
    assert ok


def test_c04_lower_bound_threshold(reference):
    sc = reference.scenario.carleman
    pp, om1 = proof_setup(reference)
    Q = geo.build_proof_sets(reference.d, pp, om1, reference.grid, sc.sweep_nt).Q(pp.c)
    z = car.sample_points(Q, int(Q.mask.sum()), np.random.default_rng(0))
    suite = {"zero": tf.Zero(), "sin*bump": tf.sine_bump(reference.T)}
    lam0 = {}
    for name, u in suite.items():
        r = car.check_pointwise_inequality(u, sc.lambdas, z, pp, reference.d, reference.h, 1.0, require=False)
        lam0[name] = r.lambda0
    ok = all(v is not None and v <= 100 for v in lam0.values())
    record(4, ok, f"lambda0 per function {lam0} on {len(z)} Q(c) nodes (<= 100)")
    assert ok


def test_c05_waiting_times(reference):
    wt = obs.waiting_time_comparison(reference.d.center, reference.omega, reference.grid)
    ok = abs(wt["T_new"] - 1.6) <= 1e-12 and abs(wt["T_old"] - 2.2) <= 1e-12 and wt["T_new"] < wt["T_old"]
    record(5, ok, f"T_new = {wt['T_new']!r}, T_old = {wt['T_old']!r}")
    assert ok


def test_c06_region_improvement(reference):
    st_ = reference
    ax = TimeAxis.midpoint(st_.T, 200)
    R = geo.build_observation_region(st_.d, st_.params(), st_.omega, st_.omega0, st_.grid, ax)
    K1 = geo.prior_regions(st_.d.center, st_.omega, st_.grid, st_.T, ax)["K1"]
    ratio = R.K.measure() / K1.measure()
    ok = ratio < 0.9 and R.K.issubset(K1)
    record(6, ok, f"measure(K)/measure(K1) = {ratio:.4f} (< 0.9), K in K1: {R.K.issubset(K1)}")
    assert ok


def _mu(sc, scale, m, T):
    st_ = build_setup(sc, scale, T=T)
    system = wv.WaveSystem.build(st_.h, st_.grid)
    ax = obs.solver_axis(system, T)
    R = geo.build_observation_region(st_.d, replace(st_.params(), T=T), st_.omega, st_.omega0, st_.grid, ax)
    K1 = geo.prior_regions(st_.d.center, st_.omega, st_.grid, T, ax)["K1"]
    rep = obs.observe(obs.build_basis(system, m), system, {"K": R.K, "K1": K1}, T)
    return rep["K"].mu_min, rep["K1"].mu_min


def test_c07_observability_positive():
    sc = load("reference_1d")
    t0 = time.perf_counter()
    T = 1.1 * build_setup(sc).times.Tstar
    a, a1 = _mu(sc, 1, 20, T)
    b, b1 = _mu(sc, 2, 40, T)
    elapsed = time.perf_counter() - t0
    stable = abs(b - a) <= 0.2 * a
    ok = a > 0 and stable and a <= a1 and b <= b1 and elapsed <= 300
    record(7, ok, f"mu_min(K) {a:.4e} -> {b:.4e} under doubling, mu_min(K1) {a1:.4e}, {elapsed:.0f}s")
    assert ok


def test_c08_non_observability_trend():
    sc = load("reference_1d")
    T = 0.5 * build_setup(sc).times.Tstar
    mus = [_mu(sc, k, 20 * k, T)[0] for k in (1, 2, 4)]
    drops = [mus[i] / mus[i + 1] if mus[i + 1] > 0 else math.inf for i in range(2)]
    ok = all(r >= 10 for r in drops)
    record(8, ok, f"mu_min(K) at T=0.5 Tstar: {', '.join(f'{m:.3e}' for m in mus)}; drops "
                  f"{', '.join(f'{r:.3g}x' for r in drops)} (each >= 10x)")
    assert ok


def _mode_error(n):
    g = interval_grid(0, 1, n)
    system = wv.WaveSystem.build(CoefficientField.identity(1), g)
    x = g.inside_points[:, 0]
    tr = wv.simulate_wave(np.sin(math.pi * x), 0 * x, system, 1.76)
    ex = np.cos(math.pi * tr.times)[:, None] * np.sin(math.pi * x)[None]
    return math.sqrt(np.sum((tr.w - ex) ** 2) / np.sum(ex**2))


def test_c09_wave_accuracy():
    e1, e2 = _mode_error(200), _mode_error(400)
    ok = e1 <= 0.01 and e1 / e2 >= 3
    record(9, ok, f"free mode error {e1:.2e} at h=1/200, {e2:.2e} at h=1/400, ratio {e1 / e2:.2f} (>= 3)")
    assert ok


def test_c10_energy_bounds(reference):
    st_ = reference
    es, T = st_.scenario.energy, st_.T
    _, free, _ = energy_draw(st_, T, wv.LowerOrderTerms.zero(1), 0.0, es.windows)
    Cs, Rs, rs = [], [], []
    for i in range(10):
        rng = np.random.default_rng([st_.scenario.seed, i])
        lot = wv.LowerOrderTerms.random(1, rng, 2.0, st_.grid, T)
        _, fit, ratio = energy_draw(st_, T, lot, 0.0, es.windows)
        Cs.append(fit.fitted_C)
        Rs.append(ratio)
        rs.append(fit.r)

    def spread(v):
        med = float(np.median(v))
        return float(np.max(np.abs(np.asarray(v) - med)) / abs(med))

    finite = all(math.isfinite(v) for v in Cs + Rs)
    sC, sR = spread(Cs), spread(Rs)
    ok = free.fitted_C <= 0.05 and finite and max(rs) <= 2 + 1e-12 and sC <= 0.3 and sR <= 0.3
    record(10, ok, f"free fitted_C {free.fitted_C:.2e} (<= 0.05); draws finite: {finite}; "
                   f"fitted_C spread {sC:.0%}, integral ratio spread {sR:.0%} (each <= 30% of the median)")
    assert ok


def test_c11_shifted_pipeline(interior):
    st_ = interior
    rep = st_.cond2
    ax = TimeAxis.midpoint(st_.T, 200)
    p = st_.params()
    R = geo.build_observation_region(st_.d, p, st_.omega, st_.omega0, st_.grid, ax)
    sr = geo.build_shifted_regions(st_.d, p, st_.h, st_.grid, st_.omega, st_.omega0, ax)
    from waveobs.cli import cover_region

    miss = geo.cover_violations(cover_region(st_, ax), R.K, sr.K)
    p0 = replace(p, zeta=(0.0,))
    s0 = geo.build_shifted_regions(st_.d, p0, st_.h, st_.grid, st_.omega, st_.omega0, ax)
    same = (
        s0.K.renamed("K").to_pgm() == R.K.to_pgm()
        and s0.D.renamed("D").to_pgm() == R.D.to_pgm()
        and np.array_equal(s0.gamma0, st_.gamma0)
        and s0.R1 == st_.times.R1
        and s0.Tstar == st_.times.Tstar
    )
    ok = abs(rep.s - 4) <= 1e-3 and not sr.K.empty and miss == 0 and same
    record(11, ok, f"s = {rep.s:.6f}; K_zeta nodes {int(sr.K.mask.sum())}; W misses {miss}; "
                   f"zeta=0 identical to unshifted: {same}")
    assert ok
