"""Command-line entry point: ``obstaclelab <command> CONFIG --out RUNDIR``.

Every command writes its outputs plus ``manifest.json`` into the run
directory. ``classify``, ``monneau`` and ``growth`` accept ``--field`` to reuse
a saved ``u.txt`` snapshot instead of re-solving.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .blowup import classify_points
from .config import RunConfig, load_config
from .elliptic import ConvergenceError, assemble_lcp, complementarity_residual, solve_psor
from .expr import Expression
from .experiments import schaeffer_sweep, singular_times, subsample
from .freeboundary import contact_set, growth_ratio, write_fb_points, write_mask
from .grid import ScalarField, read_snapshot, write_snapshot
from .monotonicity import check_monotone, default_slack, fitted_matrix, monneau, write_curve
from .parabolic import save_trajectory, solve_parabolic, time_monotonicity, contact_sets_nested

log = logging.getLogger("obstaclelab")


def _solve(cfg: RunConfig):
    grid = cfg.grid()
    problem = assemble_lcp(grid, cfg.boundary_expr.spatial(0.0), cfg.g)
    u, stats = solve_psor(problem, cfg.omega_for(grid), cfg.tol, cfg.maxit)
    return problem, u, stats


def _field(cfg: RunConfig, args) -> ScalarField:
    if args.field:
        return read_snapshot(args.field)
    return _solve(cfg)[1]


def _points(cfg: RunConfig, u: ScalarField) -> np.ndarray:
    if cfg.points is not None:
        return np.array(cfg.points, dtype=float).reshape(-1, u.grid.dim)
    geom = contact_set(u, cfg.threshold_obj().zero_threshold(u.grid.h))
    return subsample(geom.fb_points, cfg.max_points)


def cmd_solve_elliptic(cfg, args, out: Path) -> dict:
    problem, u, stats = _solve(cfg)
    geom = contact_set(u, cfg.threshold_obj().zero_threshold(u.grid.h))
    write_snapshot(u, out / "u.txt")
    write_fb_points(geom, out / "fb_points.csv")
    write_mask(u, geom, out / "mask.txt")
    summary = stats.to_dict() | {"complementarity_residual": complementarity_residual(problem, u),
                                 "fb_count": geom.count}
    (out / "stats.json").write_text(json.dumps(summary, indent=1))
    return {"outputs": ["u.txt", "fb_points.csv", "mask.txt", "stats.json"], "stats": summary}


def cmd_solve_parabolic(cfg, args, out: Path) -> dict:
    traj = _trajectory(cfg)
    save_trajectory(traj, out / "trajectory")
    summary = {"steps": len(traj) - 1,
               "total_iterations": sum(s.iterations for s in traj.stats),
               "max_residual": max(s.final_residual for s in traj.stats),
               "min_increment": time_monotonicity(traj),
               "nested_contact_sets": contact_sets_nested(traj)}
    (out / "stats.json").write_text(json.dumps(summary, indent=1))
    return {"outputs": ["trajectory/", "stats.json"], "stats": summary}


def _trajectory(cfg: RunConfig):
    if cfg.tau is None or cfg.T is None:
        raise SystemExit("config needs tau and T for time-dependent commands")
    grid = cfg.grid()
    initial = Expression(cfg.initial).spatial(0.0)
    return solve_parabolic(grid, initial, cfg.boundary_expr.schedule(),
                           cfg.tau, cfg.T, cfg.omega_for(grid, 1.0 / cfg.tau), cfg.tol, cfg.maxit)


def cmd_classify(cfg, args, out: Path) -> dict:
    u = _field(cfg, args)
    pts = _points(cfg, u)
    reps = classify_points(u, pts, cfg.radii_list(), cfg.threshold_obj(), errors="skip")
    rows = [r.to_dict() if r is not None else {"point": p.tolist(), "verdict": None}
            for p, r in zip(pts, reps)]
    (out / "classification.json").write_text(json.dumps(rows, indent=1))
    counts = {}
    for row in rows:
        counts[str(row["verdict"])] = counts.get(str(row["verdict"]), 0) + 1
    return {"outputs": ["classification.json"], "stats": counts}


def cmd_monneau(cfg, args, out: Path) -> dict:
    u = _field(cfg, args)
    pts = _points(cfg, u)
    radii = sorted(cfg.radii_list())
    slack = default_slack(u.grid.h)
    results, outputs = [], []
    for i, x0 in enumerate(pts):
        if cfg.p_matrix is not None:
            A = np.array(cfg.p_matrix, dtype=float)
        else:
            A = fitted_matrix(u, x0, cfg.radii_list(), cfg.threshold_obj())
        curve = monneau(u, x0, A, radii, cfg.m)
        name = f"monneau_{i:03d}.csv"
        write_curve(curve, out / name)
        ok, worst = check_monotone(curve, slack) if len(curve.radii) >= 2 else (None, 0.0)
        results.append({"point": x0.tolist(), "monotone": ok, "worst_decrease": worst,
                        "form_discrepancy": curve.form_discrepancy})
        outputs.append(name)
    (out / "monneau.json").write_text(json.dumps(results, indent=1))
    return {"outputs": outputs + ["monneau.json"], "stats": {"slack": slack}}


def cmd_growth(cfg, args, out: Path) -> dict:
    u = _field(cfg, args)
    pts = _points(cfg, u)
    rows = []
    for x0 in pts:
        rep = growth_ratio(u, x0, cfg.radii_list())
        rows.append({"center": list(rep.center), "ratios": rep.ratios, "skipped": rep.skipped})
    (out / "growth.json").write_text(json.dumps(rows, indent=1))
    vals = [v for row in rows for _, v in row["ratios"]]
    stats = {"min": min(vals), "max": max(vals)} if vals else {}
    return {"outputs": ["growth.json"], "stats": stats}


def cmd_schaeffer_sweep(cfg, args, out: Path) -> dict:
    grid = cfg.grid()
    res = schaeffer_sweep(grid, cfg.boundary_expr.spatial(0.0), cfg.t_list(), cfg.threshold_obj(),
                          cfg.radii_list(), cfg.omega_for(grid), cfg.tol, cfg.maxit,
                          warm_start=not args.no_warm_start, workers=cfg.workers,
                          max_points=cfg.max_points)
    (out / "sweep.json").write_text(res.to_json())
    return {"outputs": ["sweep.json"],
            "stats": {"flagged": res.flagged(), "failed": res.failed(), "monotone": res.monotone,
                      "nested": res.nested}}


def cmd_stefan(cfg, args, out: Path) -> dict:
    traj = _trajectory(cfg)
    rep = singular_times(traj, cfg.threshold_obj(), cfg.radii_list(), cfg.stride, cfg.max_points)
    (out / "stefan.json").write_text(rep.to_json())
    return {"outputs": ["stefan.json"],
            "stats": {"fraction": rep.fraction, "intervals": rep.intervals}}


COMMANDS = {
    "solve-elliptic": (cmd_solve_elliptic, "solve the elliptic obstacle problem"),
    "solve-parabolic": (cmd_solve_parabolic, "march the parabolic obstacle problem in time"),
    "classify": (cmd_classify, "classify free-boundary points"),
    "monneau": (cmd_monneau, "evaluate Monneau curves at points"),
    "growth": (cmd_growth, "quadratic growth ratios at points"),
    "schaeffer-sweep": (cmd_schaeffer_sweep, "sweep the family (f + t)_+"),
    "stefan": (cmd_stefan, "detect singular times along a trajectory"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="obstaclelab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="JSON run configuration")
        p.add_argument("--out", required=True, help="run directory (created if missing)")
        if name in ("classify", "monneau", "growth"):
            p.add_argument("--field", help="saved u.txt snapshot to use instead of solving")
        if name == "schaeffer-sweep":
            p.add_argument("--no-warm-start", action="store_true",
                           help="solve every t from zero (for determinism checks)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fn = COMMANDS[args.command][0]
    start = time.perf_counter()
    try:
        info = fn(cfg, args, out)
    except ConvergenceError as err:
        log.error("%s", err)
        info = {"outputs": [], "error": str(err), "stats": err.stats.to_dict()}
        status = 2
    else:
        status = 0
    manifest = {"command": args.command, "version": __version__, "config": cfg.to_dict(),
                "grid": cfg.grid().describe(), "elapsed_s": time.perf_counter() - start} | info
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str))
    log.info("wrote %s", out / "manifest.json")
    return status


if __name__ == "__main__":
    sys.exit(main())
