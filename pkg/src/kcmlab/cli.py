"""Command-line interface: env, geom, bp, kcm, exact, sweep.

Failures exit nonzero with a machine-readable JSON error on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import bootstrap, exact, harness, kcm, percolation
from .environment import (
    EnvParams,
    ModelKind,
    load_environment,
    min_good_L,
    sample_environment,
    save_environment,
)


def _fail(kind: str, message: str, code: int = 1):
    json.dump({"error": kind, "message": message}, sys.stderr)
    sys.stderr.write("\n")
    raise SystemExit(code)


def _cmd_env(args):
    params = EnvParams(pi=args.pi, width=args.width, height=args.height,
                       kind=ModelKind(args.kind), seed=args.seed)
    env = sample_environment(params)
    save_environment(env, args.out)
    print(json.dumps({"written": args.out, "easy_fraction": float(env.easy_mask().mean()),
                      "origin": list(env.origin)}))


def _cmd_geom(args):
    env = load_environment(args.env_file)
    if env.params.kind is ModelKind.MIXED_NE_FA1F:
        geom = percolation.easy_site_geometry(env)
        labeling = percolation.label_clusters(env.easy_mask())
        path = [list(p) for p in geom.path]
    else:
        L = args.box_side or min_good_L(env.params.pi, seed=env.params.seed)
        grid = percolation.coarse_grain(env, L)
        labeling = percolation.label_clusters(grid.good)
        geom = percolation.origin_cluster_geometry(grid, labeling)
        try:
            path = [list(b) for b in
                    percolation.good_box_path(grid, labeling, args.path_length)]
        except percolation.GeometryUnavailable:
            path = []
    print(json.dumps({
        "cell_side": geom.cell_side,
        "cluster_sizes": labeling.sizes.tolist(),
        "spanning_label": labeling.spanning_label(),
        "c0": sorted(list(c) for c in geom.c0),
        "boundary": sorted(list(c) for c in geom.boundary),
        "t0": geom.t0,
        "diameter": geom.diameter,
        "path": path,
    }))


def _cmd_bp(args):
    env = load_environment(args.env_file)
    config = kcm.sample_equilibrium(args.q, env.width, env.height, args.seed)
    result = bootstrap.bp_run(env, config, t_max=args.t_max,
                              boundary=args.boundary, stop=args.stop)
    if args.grid_out:
        with open(args.grid_out, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "y", "emptied_at"])
            for x in range(env.width):
                for y in range(env.height):
                    wr.writerow([x, y, int(result.emptied_at[x, y])])
    print(json.dumps({"tau0": result.tau0, "censored": result.censored,
                      "steps_run": result.steps_run,
                      "fixed_point": result.fixed_point,
                      "grid_csv": args.grid_out}))


def _cmd_kcm(args):
    env = load_environment(args.env_file)
    params = kcm.SimParams(q=args.q, t_max=args.t_max, boundary=args.boundary,
                           seed=args.seed)
    if args.target == "origin":
        taus, censored, summary = kcm.estimate_tau0(env, params, args.trials)
        rows = [(i, float(t), int(c), -1) for i, (t, c) in enumerate(zip(taus, censored))]
    elif args.target == "g-event":
        samples, info = kcm.g_hitting_experiment(env, params, args.trials)
        rows = [(i, s.tau, int(s.censored), s.rings) for i, s in enumerate(samples)]
        summary = kcm.summarize_taus(np.array([s.tau for s in samples]),
                                     np.array([s.censored for s in samples]),
                                     params.t_max)
        summary["acceptance_rate"] = info["acceptance_rate"]
    else:  # bad-event
        L = args.box_side or min_good_L(env.params.pi, seed=env.params.seed)
        grid = percolation.coarse_grain(env, L)
        labeling = percolation.label_clusters(grid.good)
        l, capped = kcm.path_length_budget(args.q, L, args.path_length)
        path = percolation.good_box_path(grid, labeling, l)
        samples = []
        for trial in range(args.trials):
            config = kcm.sample_equilibrium(args.q, env.width, env.height,
                                            kcm.derive_seed(args.seed, 5, trial))
            target = lambda cfg: kcm.bad_event_B(env, cfg, grid, path)
            samples.append(kcm.kcm_run(env, config, target, params, event="bad-event"))
        rows = [(i, s.tau, int(s.censored), s.rings) for i, s in enumerate(samples)]
        summary = kcm.summarize_taus(np.array([s.tau for s in samples]),
                                     np.array([s.censored for s in samples]),
                                     params.t_max)
        summary["l"] = l
        summary["l_capped"] = capped
    if args.csv_out:
        with open(args.csv_out, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["trial", "tau", "censored", "rings"])
            wr.writerows(rows)
    print(json.dumps({"target": args.target, "summary": summary,
                      "csv": args.csv_out}, default=float))


def _cmd_exact(args):
    env = load_environment(args.env_file)
    region = tuple(int(v) for v in args.region.split(","))
    if len(region) != 4:
        _fail("parameter", "--region must be x0,y0,w,h")
    gen = exact.build_generator(env, region, args.q, args.boundary)
    if args.target == "origin":
        if env.origin not in gen.space.sites:
            _fail("parameter", "origin not inside the region")
        A = exact.origin_empty_mask(gen, env)
    else:
        _fail("parameter", f"unknown target {args.target}")
    sol = exact.solve_poisson(gen, A)
    spec_res = exact.spectral_gap(gen)
    tb = exact.taubar(gen, A)
    print(json.dumps({
        "sites": [list(s) for s in gen.space.sites],
        "mean_hitting_time": sol.mean,
        "dirichlet_of_tau": sol.dirichlet,
        "finite": sol.finite,
        "unreachable_states": int(len(sol.unreachable)),
        "residual": sol.residual,
        "taubar": tb,
        "gap": spec_res.gap,
        "ergodic": spec_res.ergodic,
    }, default=float))


def _cmd_sweep(args):
    bundle = harness.run_config(args.config)
    print(json.dumps({"output_dir": bundle["config"]["output_dir"],
                      "results": {k: v["fit"] for k, v in bundle["results"].items()}},
                     default=float))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kcmlab",
                                description="Kinetically constrained models in random environments")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("env", help="sample and store a quenched environment")
    e.add_argument("--pi", type=float, required=True)
    e.add_argument("--width", type=int, required=True)
    e.add_argument("--height", type=int, required=True)
    e.add_argument("--kind", choices=[k.value for k in ModelKind], default="fa12")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=_cmd_env)

    g = sub.add_parser("geom", help="cluster geometry of a stored environment")
    g.add_argument("--env-file", required=True)
    g.add_argument("--box-side", type=int, default=None)
    g.add_argument("--path-length", type=int, default=10)
    g.set_defaults(func=_cmd_geom)

    b = sub.add_parser("bp", help="bootstrap percolation run")
    b.add_argument("--env-file", required=True)
    b.add_argument("--q", type=float, required=True)
    b.add_argument("--t-max", type=int, default=None)
    b.add_argument("--boundary", choices=["occupied", "empty", "free"], default="occupied")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--stop", choices=["origin", "fixpoint"], default="origin")
    b.add_argument("--grid-out", default=None)
    b.set_defaults(func=_cmd_bp)

    k = sub.add_parser("kcm", help="continuous-time hitting-time trials")
    k.add_argument("--env-file", required=True)
    k.add_argument("--q", type=float, required=True)
    k.add_argument("--t-max", type=float, default=1e3)
    k.add_argument("--trials", type=int, default=100)
    k.add_argument("--boundary", choices=["occupied", "empty", "free"], default="occupied")
    k.add_argument("--target", choices=["origin", "bad-event", "g-event"], default="origin")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--box-side", type=int, default=None)
    k.add_argument("--path-length", type=int, default=10)
    k.add_argument("--csv-out", default=None)
    k.set_defaults(func=_cmd_kcm)

    x = sub.add_parser("exact", help="exact generator analysis on a small region")
    x.add_argument("--env-file", required=True)
    x.add_argument("--region", required=True, help="x0,y0,w,h")
    x.add_argument("--q", type=float, required=True)
    x.add_argument("--boundary", choices=["occupied", "empty", "free"], default="occupied")
    x.add_argument("--target", default="origin")
    x.set_defaults(func=_cmd_exact)

    s = sub.add_parser("sweep", help="run a JSON sweep config")
    s.add_argument("config")
    s.set_defaults(func=_cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # surface every failure as machine-readable JSON
        _fail(type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
