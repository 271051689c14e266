"""Command-line front end.

    waveobs {regions,identity,sweep,observe,energy} --scenario FILE [--out DIR]
            [--threads N] [--seed S]

Exit status: 0 success, 2 a verification failed, 1 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import carleman as car
from . import geometry as geo
from . import observability as obs
from . import testfunctions as tf
from . import waveop as wv
from .regions import SpaceTimeRegion, TimeAxis
from .scenario import Scenario, Setup, build_setup

log = logging.getLogger("waveobs")

EXIT_OK, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2
COMMANDS = ("regions", "identity", "sweep", "observe", "energy")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_summary(out: Path, payload: dict) -> None:
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2)
    (out / "summary.json").write_text(text + "\n")


# ---------------------------------------------------------------------------
# regions


def _shift_horizon(st: Setup) -> float:
    sc = st.scenario
    if sc.geometry.zeta is None or sc.time.T is not None:
        return st.T
    p = st.params()
    sr = geo.build_shifted_regions(st.d, p, st.h, st.grid, st.omega, st.omega0, 8)
    return sc.time.T_factor * sr.Tstar


def cover_region(st: Setup, axis: TimeAxis) -> SpaceTimeRegion:
    """W = (0, T) x O_{delta + 2h}(Gamma0): omega widened by the grid closure."""
    g = st.grid
    r = st.scenario.geometry.delta + 2 * float(g.spacing.max())
    wide = geo.neighborhood(st.gamma0, r, g)
    return SpaceTimeRegion.cylinder(axis, wide.mask, g, "W")


def run_regions(st: Setup, out: Path, seed: int, threads: int):
    sc, g = st.scenario, st.grid
    T = _shift_horizon(st)
    axis = TimeAxis.midpoint(T, sc.time.nt)
    p = st.params()
    p = replace(p, T=T)
    R = geo.build_observation_region(st.d, p, st.omega, st.omega0, g, axis)
    regions = {"D": R.D, "K": R.K}
    x0 = st.d.critical_point if st.d.critical_point is not None else st.d.center
    if x0 is not None:
        regions.update(geo.prior_regions(x0, st.omega, g, T, axis))
    else:
        regions["K1"] = SpaceTimeRegion.cylinder(axis, st.omega.mask, g, "K1")
    ok = True
    res = {
        "condition": st.condition,
        "h0": st.coeff.h0,
        "T": T,
        "R0": st.times.R0,
        "R1": st.times.R1,
        "Tstar": st.times.Tstar,
        "gamma0": g.boundary_points[st.gamma0],
        "weight_scale": st.d.scale,
        "weight_offset": st.d.offset,
    }
    if st.cond1 is not None:
        res["mu0"] = st.cond1.mu0
        res["min_grad"] = st.cond1.min_grad
    if st.cond2 is not None:
        res["s"] = st.cond2.s
        res["s_degenerate"] = st.cond2.degenerate
    K_in_K1 = R.K.issubset(regions["K1"])
    res["K_subset_K1"] = K_in_K1
    ok &= K_in_K1
    res["measures"] = {k: v.measure() for k, v in regions.items()}
    if x0 is not None and st.h.label == "identity" and st.d.label == "paraboloid":
        res["waiting_times"] = obs.waiting_time_comparison(x0, st.omega, g)

    if st.condition == "condition1":
        try:
            om1, om2 = geo.choose_proof_neighborhoods(
                st.d, T, st.gamma0, sc.geometry.delta, sc.geometry.delta0, g
            )
            pp = geo.select_carleman_parameters(
                st.d, T, om1, g, delta=sc.geometry.delta, delta0=sc.geometry.delta0,
                delta1=sc.geometry.delta1, omega2=om2, n_time=sc.time.proof_nt,
            )
            sets = geo.build_proof_sets(st.d, pp, om1, g, sc.time.proof_nt)
            chain = sets.chain()
            res["parameters"] = pp.to_dict()
            res["chain"] = [{"subset": a, "superset": b, "violations": n} for a, b, n in chain]
            res["box_in_Dsecond_violations"] = sets.box_in_Dsecond()
            res["K_containment_violations"] = geo.containment_violations(
                R.D, R.K, st.omega, st.omega0, om2, pp
            )
            ok &= all(n == 0 for _, _, n in chain) and res["box_in_Dsecond_violations"] == 0
            ok &= res["K_containment_violations"] == 0
        except geo.ParameterSelectionError as exc:
            res["parameters"] = None
            res["chain_error"] = {"message": str(exc), "broken": exc.broken}
            ok = False

    if sc.geometry.zeta is not None:
        sr = geo.build_shifted_regions(st.d, p, st.h, g, st.omega, st.omega0, axis)
        regions["D_zeta"], regions["K_zeta"] = sr.D, sr.K
        W = cover_region(st, axis)
        miss = geo.cover_violations(W, R.K, sr.K)
        res["shifted"] = {
            "gamma0": g.boundary_points[sr.gamma0],
            "R1": sr.R1,
            "Tstar": sr.Tstar,
            "delta2": sr.delta2,
            "W_measure": W.measure(),
            "W_cover_violations": miss,
        }
        ok &= miss == 0

    for name, reg in regions.items():
        reg.write_pgm(out / f"{name}.pgm")
        reg.write_csv(out / f"{name}.csv")
    return res, ok


# ---------------------------------------------------------------------------
# identity and sweep


def _random_points(st: Setup, T: float, k: int, rng) -> np.ndarray:
    g = st.grid
    lo = np.array([a[0] for a in g.axes])
    hi = np.array([a[-1] for a in g.axes])
    pts = []
    while sum(len(p) for p in pts) < k:
        x = rng.uniform(lo, hi, (2 * k, g.dim))
        x = x[g.domain.contains(x)]
        ts = rng.uniform(0, T, (len(x), 2))
        pts.append(np.column_stack([ts, x]))
    return np.vstack(pts)[:k]


def run_identity(st: Setup, out: Path, seed: int, threads: int):
    cs = st.scenario.carleman
    rng = np.random.default_rng(seed)
    m = 2 + st.grid.dim
    p = st.params(alpha=0.9)
    lam = cs.identity_lambda
    psi = car.lower_bound_psi(st.h, st.d, lam, p.alpha) if st.d.third is not None else None
    reports = []
    for fam in cs.families:
        u = tf.random_family(fam, m, rng)
        z = _random_points(st, st.T, cs.identity_points, rng)
        reports.append(car.check_identity(u, z, lam, p, st.d, st.h, psi, label=fam))
    (out / "identity.csv").write_text(car.identity_csv(reports))
    worst = {r.label: r.max_relative for r in reports}
    ok = all(v <= 1e-6 for v in worst.values())
    zero_exact = all(np.all(r.residual == 0) for r in reports if r.label == "zero")
    return {"lambda": lam, "max_relative": worst, "zero_exact": zero_exact, "tolerance": 1e-6}, ok and zero_exact


def proof_setup(st: Setup):
    sc = st.scenario
    if st.condition != "condition1":
        raise UsageError("the lower-bound sweep needs a weight satisfying Condition 1")
    om1, om2 = geo.choose_proof_neighborhoods(st.d, st.T, st.gamma0, sc.geometry.delta, sc.geometry.delta0, st.grid)
    pp = geo.select_carleman_parameters(
        st.d, st.T, om1, st.grid, delta=sc.geometry.delta, delta0=sc.geometry.delta0,
        delta1=sc.geometry.delta1, omega2=om2, n_time=sc.time.proof_nt,
    )
    return pp, om1


def run_sweep(st: Setup, out: Path, seed: int, threads: int):
    cs = st.scenario.carleman
    pp, om1 = proof_setup(st)
    Q = geo.build_proof_sets(st.d, pp, om1, st.grid, cs.sweep_nt).Q(pp.c)
    rng = np.random.default_rng(seed)
    k = cs.sweep_points or int(Q.mask.sum())
    z = car.sample_points(Q, k, rng)
    suite = {"zero": tf.Zero(), "sin_bump": tf.sine_bump(st.T, st.grid.dim)}

    def one(item):
        name, u = item
        r = car.check_pointwise_inequality(u, cs.lambdas, z, pp, st.d, st.h, st.coeff.h0, require=False)
        (out / f"sweep_{name}.csv").write_text(r.to_csv())
        return name, r

    results = dict(obs.run_parallel(one, suite.items(), threads))
    res = {
        "points": len(z),
        "c": pp.c,
        "alpha": pp.alpha,
        "lambda0": {k: v.lambda0 for k, v in results.items()},
        "min_margin": {k: list(v.min_margin) for k, v in results.items()},
    }
    return res, all(v.lambda0 is not None for v in results.values())


# ---------------------------------------------------------------------------
# observe and energy


def _observe_level(st: Setup, scale: int, T: float):
    sc = st.scenario
    s2 = st if scale == 1 else build_setup(sc, scale, T=T)
    lot = wv.LowerOrderTerms.from_spec(s2.grid.dim, sc.lower_order.q, sc.lower_order.q1, sc.lower_order.q2)
    system = wv.WaveSystem.build(s2.h, s2.grid, lot, sc.observe.lambda0)
    axis = obs.solver_axis(system, T)
    p = replace(s2.params(), T=T)
    R = geo.build_observation_region(s2.d, p, s2.omega, s2.omega0, s2.grid, axis)
    regions = {"K": R.K}
    x0 = s2.d.critical_point if s2.d.critical_point is not None else s2.d.center
    if x0 is not None:
        regions.update(geo.prior_regions(x0, s2.omega, s2.grid, T, axis))
    else:
        regions["K1"] = SpaceTimeRegion.cylinder(axis, s2.omega.mask, s2.grid, "K1")
    if sc.geometry.zeta is not None:
        sr = geo.build_shifted_regions(s2.d, p, s2.h, s2.grid, s2.omega, s2.omega0, axis)
        regions["K_zeta"] = sr.K
    basis = obs.build_basis(system, sc.observe.m * scale)
    return obs.compare_regions(basis, system, regions, T), regions


def run_observe(st: Setup, out: Path, seed: int, threads: int):
    sc = st.scenario
    T = _shift_horizon(st)
    scales = [1, 2] if sc.observe.refine else [1]
    levels = obs.run_parallel(lambda k: _observe_level(st, k, T), scales, threads)
    cmp0, regions = levels[0]
    reps = cmp0["reports"]
    if len(levels) > 1:
        fine = levels[1][0]["reports"]
        for name, rep in reps.items():
            a, b = rep.mu_min, fine[name].mu_min
            rep.refinement_stable = bool(a > 0 and not rep.non_observable and abs(b - a) <= sc.observe.stability * a)
    (out / "comparison.csv").write_text(obs.comparison_csv(reps))
    res = {
        "T": T,
        "reports": {k: v.to_dict() for k, v in reps.items()},
        "K_subset_K1": cmp0["candidate_in_prior"],
        "measure_ratio": cmp0["measure_ratio"],
        "monotone_violations": cmp0["monotone_violations"],
    }
    if len(levels) > 1:
        res["refined"] = {k: v.to_dict() for k, v in levels[1][0]["reports"].items()}
    ok = cmp0["candidate_in_prior"] and not cmp0["monotone_violations"]
    return res, ok


def energy_draw(st: Setup, T: float, lot, lambda0: float, windows):
    system = wv.WaveSystem.build(st.h, st.grid, lot, lambda0)
    basis = obs.build_basis(system, 3)
    e = basis.modes
    traj = wv.simulate_wave(e[:, 0] + 0.5 * e[:, 1], 0.3 * e[:, 2], system, T)
    fit = wv.check_energy_bound(traj)
    ratio = wv.check_integral_bound(traj, list(windows))
    return traj, fit, ratio


def _within(vals, tol):
    med = float(np.median(vals))
    return bool(np.all(np.isfinite(vals)) and np.all(np.abs(np.asarray(vals) - med) <= tol * abs(med)))


def run_energy(st: Setup, out: Path, seed: int, threads: int):
    es, dim = st.scenario.energy, st.grid.dim
    lam0 = st.scenario.observe.lambda0
    T = st.T
    traj, fit, ratio = energy_draw(st, T, wv.LowerOrderTerms.zero(dim), lam0, es.windows)
    (out / "energy_free.csv").write_text(traj.energy_csv())

    def draw(i):
        rng = np.random.default_rng([seed, i])
        lot = wv.LowerOrderTerms.random(dim, rng, es.r_target, st.grid, T)
        _, f, rt = energy_draw(st, T, lot, lam0, es.windows)
        return {"draw": i, "r": f.r, "fitted_C": f.fitted_C, "integral_ratio": rt}

    draws = obs.run_parallel(draw, range(es.draws), threads)
    lines = ["# schema waveobs-draws/1", "draw,r,fitted_C,integral_ratio"]
    lines += [f"{d['draw']},{d['r']!r},{d['fitted_C']!r},{d['integral_ratio']!r}" for d in draws]
    (out / "energy_draws.csv").write_text("\n".join(lines) + "\n")
    Cs = [d["fitted_C"] for d in draws]
    Rs = [d["integral_ratio"] for d in draws]
    res = {
        "free": {"fitted_C": fit.fitted_C, "worst_pair": fit.worst_pair, "integral_ratio": ratio},
        "draws": draws,
        "fitted_C_stable": _within(Cs, es.stability) if draws else None,
        "integral_ratio_stable": _within(Rs, es.stability) if draws else None,
    }
    ok = fit.fitted_C <= 0.05 and (not draws or (res["fitted_C_stable"] and res["integral_ratio_stable"]))
    return res, ok


RUNNERS = {
    "regions": run_regions,
    "identity": run_identity,
    "sweep": run_sweep,
    "observe": run_observe,
    "energy": run_energy,
}


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="waveobs", description="Observation regions and observability constants for wave equations.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--scenario", required=True, help="scenario file (JSON or YAML)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _loc(err: ValidationError) -> str:
    e = err.errors()[0]
    return ".".join(str(p) for p in e["loc"]) + f": {e['msg']}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        print("waveobs: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("waveobs: error: --seed must fit in an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    path = Path(args.scenario)
    try:
        sc = Scenario.load(path)
    except FileNotFoundError:
        print(f"waveobs: error: scenario file {path} not found", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"waveobs: config error at {_loc(exc)}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"waveobs: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    seed = sc.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        st = build_setup(sc, base=path.parent)
    except geo.GeometryError as exc:
        write_summary(out, {"command": args.command, "scenario": sc.resolved(), "seed": seed,
                            "ok": False, "error": str(exc)})
        print(f"waveobs: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ValueError, OSError) as exc:
        print(f"waveobs: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    log.info("%s: %s grid %s, T = %.6g", args.command, st.condition, st.grid.shape, st.T)
    try:
        res, ok = RUNNERS[args.command](st, out, seed, args.threads)
    except UsageError as exc:
        print(f"waveobs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (geo.GeometryError, car.NoThreshold, car.PreconditionError) as exc:
        res, ok = {"error": str(exc)}, False
    write_summary(out, {"command": args.command, "scenario": sc.resolved(), "seed": seed, "ok": ok, "results": res})
    if not ok:
        print(f"waveobs: {args.command}: verification failed (see {out / 'summary.json'})", file=sys.stderr)
    return EXIT_OK if ok else EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
