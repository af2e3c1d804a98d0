"""Batch command line: run, sweep, verify and inspect."""

import argparse
import csv
import json
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bobylev import bobylev_consistency, collision_operator, lipschitz_estimate, plan_for, sample_xis
from .config import ScenarioError, load_scenario
from .measures import (CharFunGrid, ConfigurationError, ValidationError, bochner_check, hermitian_mirror,
                       read_snapshot, reconstruct_density, write_snapshot)
from .metrics import momentum, second_moment
from .povzner import angular_window, kn_split
from .smoothing import fourier_tail, support_probe, weighted_l2_norm
from .solver import PositivityAlarm, State, StepFailure, _step_count, noncutoff_sweep, picard_step, solve

WORKERS_ENV = "CHARBOLTZ_WORKERS"
CONSISTENCY_TOL = 1e-3


def set_workers(requested=0):
    """Thread count for numba: env var, then config, then all cores."""
    import numba

    # numba probes TBB when threads are configured; an old TBB only means that layer is skipped
    warnings.filterwarnings("ignore", message=".*TBB.*", category=numba.NumbaWarning)
    env = os.environ.get(WORKERS_ENV)
    n = int(env) if env else requested
    n = n if n > 0 else numba.config.NUMBA_NUM_THREADS
    n = min(n, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "" if x is None else repr(float(x))


BASE_COLUMNS = ("step", "dt", "energy", "energy_drift", "momentum", "max_abs", "bochner_min_eig", "bochner_ok",
                "picard_iters", "contraction", "c_est")


def diagnostic_table(traj, scn):
    """(header, rows) with time first and a column order fixed by the scenario."""
    d = scn.diagnostics
    cols = ["time", *BASE_COLUMNS, *(f"moment_{a:g}" for a in d.moment_alphas)]
    extra = {}
    for R in d.tail_radii:
        extra[f"tail_R{R:g}"] = [fourier_tail(s, R) for s in traj.snapshots]
    for i, b in enumerate(d.support_balls):
        extra[f"support_{i}"] = list(support_probe(traj, b.center, b.radius).masses)
    if d.mollifier is not None:
        extra["mollified_l2"] = [weighted_l2_norm(s, d.mollifier).value for s in traj.snapshots]
    cols += list(extra)
    rows = []
    for j, row in enumerate(traj.diagnostics):
        vals = [row.get(c) for c in cols if c not in extra] + [extra[c][j] for c in extra]
        rows.append(vals)
    return cols, rows


def write_table(path, cols, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def write_snapshots(traj, folder):
    folder.mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(traj.snapshots):
        write_snapshot(s, folder / f"phi_{k:05d}.chf")


def _manifest(scn, extra):
    return {"code_version": __version__, "config": scn.to_dict(), **extra}


def _support_constants(traj, scn):
    out = []
    for b in scn.diagnostics.support_balls:
        r = support_probe(traj, b.center, b.radius)
        out.append({"center": list(b.center), "radius": b.radius, "noise_floor": r.noise_floor,
                    "first_time": r.first_time if np.isfinite(r.first_time) else None})
    return out


def _measured(traj, plan):
    c = [row.get("c_est", 0.0) for row in traj.diagnostics]
    return {"A": plan.A, "C_est": float(max(c)), "contraction_max": float(max(r["contraction"] for r in traj.diagnostics)),
            "energy_drift_max": float(max(r["energy_drift"] for r in traj.diagnostics))}


def _emit_run(traj, scn, out, t0, status):
    cols, rows = diagnostic_table(traj, scn)
    write_table(out / "diagnostics.tsv", cols, rows)
    write_snapshots(traj, out / "snapshots")
    plan = plan_for(traj.snapshots[0], scn.kernel, scn.solver.quadrature)
    man = _manifest(scn, {"status": status, "measured": {**_measured(traj, plan),
                                                          "c0": angular_window(scn.kernel).c0,
                                                          "support": _support_constants(traj, scn)},
                          "timings": {"wall_seconds": time.perf_counter() - t0},
                          "snapshots": len(traj.snapshots)})
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


def _out_dir(scn, override):
    out = Path(override or scn.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args):
    scn = load_scenario(args.config)
    if scn.sweep is not None and not args.no_sweep:
        return cmd_sweep(args, scn)
    set_workers(scn.workers)
    out = _out_dir(scn, args.output)
    t0 = time.perf_counter()
    phi0 = scn.initial.charfun(scn.grid)
    try:
        traj = solve(None, scn.solver, phi0=phi0)
    except StepFailure as exc:
        if exc.trajectory is not None and exc.trajectory.snapshots:
            _emit_run(exc.trajectory, scn, out, t0, f"step failure: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return 3
    _emit_run(traj, scn, out, t0, "ok")
    print(f"wrote {len(traj.snapshots)} snapshots to {out}")
    return 0


def cmd_sweep(args, scn=None):
    scn = scn or load_scenario(args.config)
    if scn.sweep is None:
        raise ScenarioError("sweep", "section required for the sweep verb")
    if scn.initial.kind == "bkw":
        raise ScenarioError("initial.kind", "the sweep needs a measure initial datum")
    set_workers(scn.workers)
    out = _out_dir(scn, args.output)
    t0 = time.perf_counter()
    sw = scn.sweep
    rep = noncutoff_sweep(scn.initial.measure(), scn.solver, sw.n_list, sw.times, sw.box_radius)
    with open(out / "gaps.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["n_from", "n_to", "sup_gap"])
        for a, b, g in zip(rep.n_list, rep.n_list[1:], rep.gaps):
            w.writerow([a, b, _fmt(g)])
    for n, traj in rep.trajectories.items():
        cols, rows = diagnostic_table(traj, scn)
        write_table(out / f"diagnostics_n{n}.tsv", cols, rows)
    man = _manifest(scn, {"status": "aborted: " + rep.aborted if rep.aborted else "ok",
                          "measured": {"gaps": rep.gaps, "monotone": rep.monotone,
                                       "kernels": {str(n): {"n": k.n, "b_cut": k.b_cut, "b_scale": k.b_scale}
                                                   for n, k in rep.kernels.items()}},
                          "timings": {"wall_seconds": time.perf_counter() - t0}})
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    for a, b, g in zip(rep.n_list, rep.n_list[1:], rep.gaps):
        print(f"n {a:>3} -> {b:>3}  sup gap {g:.3e}")
    print("monotone" if rep.monotone else "NOT monotone")
    return 0 if rep.monotone and not rep.aborted else 4


# -- verify -----------------------------------------------------------------

def suite_bochner(phi, scn):
    rep = bochner_check(phi, tol_pd=scn.solver.tol_pd)
    bad = phi.violations(scn.solver.tol_pd)
    ok = rep.passed and not bad
    return ok, f"min eig {rep.min_eig:.2e}" + ("; " + "; ".join(bad) if bad else "")


def suite_invariants(phi, scn):
    plan = plan_for(phi, scn.kernel, scn.solver.quadrature)
    Q = hermitian_mirror(collision_operator(phi, scn.kernel, plan=plan))
    lat = phi.lattice
    rate = CharFunGrid(lat, 1.0 + Q)
    dm = abs(Q[lat.center])
    dp = float(np.linalg.norm(momentum(rate)))
    de = abs(second_moment(rate))
    scale = plan.A * max(second_moment(phi), 1.0)
    ok = dm <= 1e-12 and dp <= 1e-6 and de <= 1e-3 * scale
    return ok, f"dmass {dm:.1e}, dmomentum {dp:.1e}, denergy {de:.1e} (tol {1e-3 * scale:.1e})"


def suite_consistency(phi, scn):
    spec = scn.initial.measure()
    if spec is None or spec.kind != "DiracMixture" or scn.kernel.cutoff == "AngularOnly":
        return None, "needs a Dirac initial datum and a kinetic cutoff"
    rep = bobylev_consistency(spec, scn.kernel, scn.solver.quadrature, sample_xis(10, seed=scn.seed))
    return rep.max_discrepancy <= CONSISTENCY_TOL, f"max discrepancy {rep.max_discrepancy:.2e} (tol {CONSISTENCY_TOL:g})"


def suite_povzner(phi, scn, samples=50):
    rng = np.random.default_rng(scn.seed)
    worst = np.inf
    for _ in range(samples):
        v, w = rng.normal(size=3) * 3, rng.normal(size=3)
        worst = min(worst, kn_split(v, w, scn.kernel, rng.uniform(0, 4) or 1.0)[1])
    return worst >= -1e-10, f"min H_n {worst:.3e}"


def suite_contraction(phi, scn):
    cfg = scn.solver
    plan = plan_for(phi, scn.kernel, cfg.quadrature)
    L = lipschitz_estimate(phi, scn.kernel, cfg.alpha, plan=plan)
    dt = cfg.t_final / _step_count(cfg.t_final, cfg.eta / (plan.A + max(L - plan.A, 0.0)), cfg.time_grid)
    w = phi.atoms.weights.copy() if phi.atoms is not None else np.zeros(0)
    try:
        _, info = picard_step(State(np.array(phi.remainder()), w, 0.0), dt, plan, cfg)
    except StepFailure as exc:
        return False, str(exc)
    ok = info.ratio <= cfg.eta and info.iterations <= cfg.iteration_bound()
    return ok, f"ratio {info.ratio:.3f} (eta {cfg.eta:g}), iterations {info.iterations} <= {cfg.iteration_bound()}"


SUITES = (("bochner", suite_bochner), ("collision_invariants", suite_invariants),
          ("bobylev_consistency", suite_consistency), ("povzner_signs", suite_povzner),
          ("contraction", suite_contraction))


def verify_scenario(scn, phi=None):
    """[(suite, status, detail)] with status in PASS / FAIL / SKIP."""
    phi = phi if phi is not None else scn.initial.charfun(scn.grid)
    out = []
    for name, fn in SUITES:
        if name != "bochner" and phi.violations(scn.solver.tol_pd):
            out.append((name, "SKIP", "input is not a characteristic function"))
            continue
        try:
            ok, detail = fn(phi, scn)
        except (ConfigurationError, ValidationError, PositivityAlarm) as exc:
            ok, detail = False, str(exc)
        out.append((name, "SKIP" if ok is None else ("PASS" if ok else "FAIL"), detail))
    return out


def cmd_verify(args):
    scn = load_scenario(args.config)
    set_workers(scn.workers)
    phi = None
    if args.phi:
        snap = read_snapshot(args.phi)
        phi = snap if snap.lattice == scn.grid else None
        if phi is None:
            raise ScenarioError("grid", "snapshot lattice differs from the scenario grid")
    rows = verify_scenario(scn, phi)
    w = max(len(r[0]) for r in rows)
    for name, status, detail in rows:
        print(f"{name:<{w}}  {status}  {detail}")
    return 1 if any(r[1] == "FAIL" for r in rows) else 0


# -- inspect ----------------------------------------------------------------

def cmd_inspect(args):
    phi = read_snapshot(args.snapshot)
    lat = phi.lattice
    d = reconstruct_density(phi)
    bc = bochner_check(phi)
    print(f"file      {args.snapshot}")
    print(f"lattice   extent {lat.extent:g}, n {lat.n}, h {lat.h:g}")
    print(f"time      {phi.time:g}")
    print(f"phi(0)    {phi.at_origin().real:.15g}")
    print(f"max|phi|  {np.abs(phi.values).max():.6g}")
    print(f"energy    {second_moment(phi):.6g}")
    print(f"momentum  {np.array2string(momentum(phi), precision=3)}")
    print(f"bochner   min eig {bc.min_eig:.3e} ({'ok' if bc.passed else 'violated'})")
    print(f"density   mass {d.mass():.6g}, negative mass {d.negative_mass:.3e}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="charboltz", description=__doc__)
    p.add_argument("--version", action="version", version=f"charboltz {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="integrate the scenario (or its sweep) and write outputs")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (overrides output_dir)")
    r.add_argument("--no-sweep", action="store_true", help="ignore a [sweep] section")
    s = sub.add_parser("sweep", help="run the cutoff-index sweep")
    s.add_argument("config")
    s.add_argument("-o", "--output")
    v = sub.add_parser("verify", help="property suites on the initial datum, no time stepping")
    v.add_argument("config")
    v.add_argument("--phi", help="snapshot to check instead of the configured initial datum")
    i = sub.add_parser("inspect", help="header and summary statistics of a snapshot")
    i.add_argument("snapshot")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    fn = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "inspect": cmd_inspect}[args.verb]
    try:
        return fn(args)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PositivityAlarm as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
