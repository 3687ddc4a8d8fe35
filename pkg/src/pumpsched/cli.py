"""Command-line interface: ``pumpsched {identify,run,bench,plot}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 solver failure,
4 file-system error. Failures also print one JSON object to stderr with the
keys ``error``, ``code`` and ``message`` (plus ``file``/``line`` when known).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import model as mdl
from .config import ConfigError, ExperimentConfig
from .formulation import build_dense, build_sparse, build_stacked, condensed_cost
from .sim import STEPS_PER_DAY, read_trace, run_experiment_matrix, scenario_disturbance_set, summary_table
from .solver import SolverError, convexify, solve_dense_reference, solve_sparse_ipm

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("pumpsched")


class SolveFailed(SolverError):
    pass


# ---------------------------------------------------------------------------
# identify


def cmd_identify(dataset, out, dt=1.0):
    """Fit a model from a trajectory table, or emit the built-in one."""
    if dataset == "randers-paper":
        model = mdl.randers_paper_model()
        E_m = np.array(mdl.RANDERS_E_M)
        doc = mdl.model_to_document(model, E_m)
    else:
        data = mdl.read_dataset(dataset)
        model, E_m, w_m = mdl.identify(data, dt)
        doc = mdl.model_to_document(model, E_m)
        doc["samples"] = int(w_m.shape[0])
    _write_text(out, json.dumps(doc, indent=2) + "\n")
    log.info("wrote %s", out)
    return doc


# ---------------------------------------------------------------------------
# run


def cmd_run(cfg, out=None):
    """Run the experiment matrix; write summary, traces and timing tables."""
    out = Path(out) if out is not None else cfg.resolve(cfg.output_dir)
    args = cfg.experiment()
    t0 = time.perf_counter()
    results = run_experiment_matrix(**args)
    wall = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    summary = summary_table(results)
    _write_text(out / "summary.csv", summary)
    _write_text(out / "config.json", cfg.dumps())
    tdir = out / "traces"
    tdir.mkdir(exist_ok=True)
    rows = []
    for r in results:
        for b, tr in enumerate(r.traces):
            tr.write_csv(tdir / f"{r.scenario}_{r.controller}_block{b}.csv")
        st = np.concatenate([tr.solve_time for tr in r.traces]) if r.traces else np.zeros(0)
        it = np.concatenate([tr.iterations for tr in r.traces]) if r.traces else np.zeros(0)
        rows.append([r.scenario, r.controller, st.size, f"{st.sum():.3f}",
                     f"{st.mean() if st.size else 0.0:.4f}", f"{it.mean() if it.size else 0.0:.2f}"])
    _write_rows(out / "timing.csv", ["scenario", "controller", "steps", "solve_seconds",
                                     "seconds_per_step", "mean_iterations"], rows)
    log.info("matrix finished in %.1f s", wall)
    return summary


# ---------------------------------------------------------------------------
# bench


def loglog_slope(N, t):
    """Least-squares slope of ``log t`` against ``log N``; None with < 2 distinct N."""
    N = np.asarray(N, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.unique(N).size < 2:
        return None
    return float(np.polyfit(np.log(N), np.log(t), 1)[0])


def bench_instance(cfg, N):
    """DFMPC problem at the midpoint level with the configured forecast."""
    model, model_set, pressure = cfg.build_model()
    spec = cfg.spec()
    demand, prices = cfg.series(hours=N)
    dset = scenario_disturbance_set(model, model_set, cfg.scenarios[0], demand,
                                    cfg.uncertainty.demand_fraction)
    stacked = build_stacked(model, spec, dset, N)
    h = spec.midpoint() if cfg.h0 is None else np.array(cfg.h0)
    Hv, _ = condensed_cost(stacked, pressure, h, demand, prices)
    _, lam = convexify(Hv, eps=cfg.solver_options().eps)
    return stacked, spec, h, demand, prices, pressure, lam


def cmd_bench(cfg, horizons=None):
    """Per-iteration times of both solver paths over a horizon sweep.

    Returns ``(rows, report)``; rows hold ``N, path, variables, iterations,
    seconds_per_iteration, objective, status``.
    """
    opts = cfg.solver_options()
    horizons = list(cfg.bench.horizons if horizons is None else horizons)
    rows = []
    for N in horizons:
        stacked, spec, h, d, e, pressure, lam = bench_instance(cfg, N)
        qs = build_sparse(stacked, spec, h, d, e, pressure, shift=lam).qp
        rows.append(_bench_one(N, "sparse", qs, solve_sparse_ipm, opts, cfg.bench.repeats))
        dense = build_dense(stacked, spec, h, d, e, pressure)
        nvar = dense.qp_size()
        if nvar > opts.dense_max_vars:
            rows.append([N, "dense", nvar, 0, None, None, "skipped (size guard)"])
        else:
            rows.append(_bench_one(N, "dense", dense.to_qp(lam), solve_dense_reference, opts,
                                   cfg.bench.repeats))
    report = {"sparse_slope": None, "dense_slope": None, "cross_check": None}
    for path in ("sparse", "dense"):
        ok = [r for r in rows if r[1] == path and r[4] is not None]
        report[f"{path}_slope"] = loglog_slope([r[0] for r in ok], [r[4] for r in ok])
    both = [N for N in horizons if all(r[4] is not None for r in rows if r[0] == N)]
    if both:
        N = min(both)
        js, jd = (next(r[5] for r in rows if r[0] == N and r[1] == p) for p in ("sparse", "dense"))
        rel = abs(js - jd) / (1 + abs(jd))
        report["cross_check"] = {"N": N, "sparse_objective": js, "dense_objective": jd,
                                 "relative_difference": rel, "agree": bool(rel <= 1e-6)}
    return rows, report


def _bench_one(N, path, qp, solve, opts, repeats):
    best = None
    for _ in range(repeats):
        x, rep = solve(qp, opts)
        if not rep.optimal:
            raise SolveFailed(f"{path} solve at N={N} ended with status {rep.status!r}")
        per_it = float(np.mean(rep.iter_times)) if rep.iter_times else 0.0
        if best is None or per_it < best[0]:
            best = (per_it, rep)
    per_it, rep = best
    return [N, path, qp.n, rep.iterations, per_it, rep.objective, rep.status]


def format_bench(rows, report):
    lines = [f"{'N':>4}  {'path':<6}  {'vars':>7}  {'iters':>5}  {'s/iter':>10}  status"]
    for N, path, nv, it, sec, obj, status in rows:
        sec_s = "-" if sec is None else f"{sec:.5f}"
        lines.append(f"{N:>4}  {path:<6}  {nv if nv is not None else '-':>7}  {it:>5}  {sec_s:>10}  {status}")
    for path in ("sparse", "dense"):
        s = report[f"{path}_slope"]
        lines.append(f"{path} log-log slope: " + ("undefined (fewer than two horizons)" if s is None else f"{s:.3f}"))
    cc = report["cross_check"]
    if cc:
        lines.append(f"cross-check at N={cc['N']}: relative objective difference {cc['relative_difference']:.2e}"
                     f" ({'agree' if cc['agree'] else 'DISAGREE'})")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# plot


def cmd_plot(trace_path, out, h_min, h_max):
    """Tank levels with bound lines; steps outside the bounds are marked.

    Artists carry SVG ids ``bounds-h<i>`` and ``violations-h<i>``.
    """
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    t, h = read_trace(trace_path)
    n = h.shape[1]
    if len(h_min) != n or len(h_max) != n:
        raise ValueError(f"trace has {n} tanks, bounds have {len(h_min)}")
    time_axis = np.concatenate([t, [t[-1] + 1]])
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.4 * n), sharex=True, squeeze=False)
    for i, ax in enumerate(axes[:, 0]):
        ax.plot(time_axis, h[:, i], color="C0", lw=1.2, label=f"tank {i + 1}")
        lines = [ax.axhline(h_max[i], color="k", ls="--", lw=0.8),
                 ax.axhline(h_min[i], color="k", ls="--", lw=0.8)]
        for k, ln in enumerate(lines):
            ln.set_gid(f"bounds-h{i + 1}-{'max' if k == 0 else 'min'}")
        bad = (h[1:, i] > h_max[i] + 1e-6) | (h[1:, i] < h_min[i] - 1e-6)
        if np.any(bad):
            mk = ax.plot(time_axis[1:][bad], h[1:, i][bad], ls="none", marker="x", color="C3",
                         ms=4, label="violation")[0]
            mk.set_gid(f"violations-h{i + 1}")
        ax.set_ylabel("level [m]")
        ax.legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel(f"time [h] ({STEPS_PER_DAY} steps per day)")
    fig.tight_layout()
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


# ---------------------------------------------------------------------------
# plumbing


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def _load_config(path, seed=None, workers=None):
    cfg = ExperimentConfig.load(path)
    if seed is not None or workers is not None:
        d = cfg.to_dict()
        if seed is not None:
            d["master_seed"] = seed
        if workers is not None:
            d["workers"] = workers
        cfg = ExperimentConfig.from_dict(d, base_dir=cfg.base_dir)
    return cfg


def build_parser():
    p = argparse.ArgumentParser(prog="pumpsched", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("identify", parents=[common], help="fit a surrogate model from a trajectory table")
    s.add_argument("dataset", help="CSV trajectory table, or 'randers-paper' for the built-in model")
    s.add_argument("--out", required=True, help="model document to write (JSON)")
    s.add_argument("--dt", type=float, default=1.0, help="sampling time in hours (default 1)")

    s = sub.add_parser("run", parents=[common], help="run the controller/scenario matrix")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="output directory (default: the config's output_dir)")
    s.add_argument("--seed", type=int, help="override the master seed")
    s.add_argument("--workers", type=int, help="override the process count")

    s = sub.add_parser("bench", parents=[common], help="time both solver paths over a horizon sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="directory for bench.csv and bench.json")
    s.add_argument("--horizons", type=lambda x: [int(v) for v in x.split(",")],
                   help="comma-separated horizons overriding the config")

    s = sub.add_parser("plot", parents=[common], help="plot tank levels of a trace file")
    s.add_argument("trace")
    s.add_argument("--out", required=True, help="SVG file to write")
    s.add_argument("--config", help="take level bounds from this config (default: built-in bounds)")
    return p


def _error(code, exc, **extra):
    rec = {"error": type(exc).__name__, "code": code, "message": str(exc)}
    rec.update({k: v for k, v in extra.items() if v is not None})
    print(json.dumps(rec), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "identify":
            cmd_identify(args.dataset, args.out, args.dt)
        elif args.command == "run":
            cfg = _load_config(args.config, args.seed, args.workers)
            sys.stdout.write(cmd_run(cfg, args.out))
        elif args.command == "bench":
            cfg = _load_config(args.config)
            rows, report = cmd_bench(cfg, args.horizons)
            text = format_bench(rows, report)
            sys.stdout.write(text)
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                _write_rows(out / "bench.csv", ["N", "path", "variables", "iterations",
                                                "seconds_per_iteration", "objective", "status"], rows)
                _write_text(out / "bench.json", json.dumps(report, indent=2) + "\n")
        elif args.command == "plot":
            # class attributes hold the field defaults
            src = _load_config(args.config) if args.config else ExperimentConfig
            cmd_plot(args.trace, args.out, src.h_min, src.h_max)
    except mdl.DatasetParseError as exc:
        return _error(EXIT_INVALID, exc, file=getattr(args, "dataset", None), line=exc.row)
    except (ConfigError, mdl.IdentificationError, ValueError) as exc:
        return _error(EXIT_INVALID, exc)
    except SolverError as exc:
        return _error(EXIT_SOLVER, exc)
    except OSError as exc:
        return _error(EXIT_IO, exc, file=getattr(exc, "filename", None))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
