"""Command-line front end.

Four subcommands cover the whole workflow:

  simulate  stochastic shots over the companion-number grid -> traces JSONL
  analyze   traces JSONL -> per-bin summary CSV and count-rate histograms
  fit       traces or bin summary -> loss-coefficient report and model curve
  oracle    self-checks of the simulator against closed-form results

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import functools
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .gillespie import (
    PHOTON_STREAM,
    TRAJECTORY_STREAM,
    derive_seed,
    simulate_trajectory,
)
from .inference import (
    DEFAULT_STEADY_TOL,
    InferenceError,
    bin_by_nrb,
    bootstrap_stat_error,
    classify_steady_state,
    fit_beta,
    fit_loading_rate,
    group_by_bin,
    propagate_systematics,
)
from .photon import build_histogram, synthesize_counts
from .physics import steady_state_mean
from .oracles import overlap_checks, poisson_end_state_check, transient_checks
from .traceio import (
    TraceFileError,
    bin_to_row,
    BIN_CSV_COLUMNS,
    read_bins_csv,
    read_traces_jsonl,
    trace_to_dict,
    trajectory_to_dict,
    write_bins_csv,
    write_curve_csv,
    write_histogram_csv,
    write_report_json,
)

__all__ = ["main"]


def _simulate_job(job, params, cal, schedule, master_seed, dump):
    """One shot: trajectory plus photon counts, as JSON-ready dicts.

    Top-level so process pools can pickle it; all randomness flows from seeds
    derived from (master_seed, stream, bin_index, trace_index), making the
    output identical for any worker count or evaluation order.
    """
    bi, ti, n_rb = job
    traj = simulate_trajectory(
        n_rb, params, schedule, derive_seed(master_seed, TRAJECTORY_STREAM, bi, ti)
    )
    trace_id = f"b{bi:02d}t{ti:04d}"
    trace = synthesize_counts(
        traj, cal, schedule,
        derive_seed(master_seed, PHOTON_STREAM, bi, ti),
        trace_id=trace_id,
    )
    traj_obj = trajectory_to_dict(trace_id, traj) if dump else None
    return trace_to_dict(trace), traj_obj


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = int(args.seed)
    if args.traces is not None:
        if args.traces < 1:
            print("error: --traces must be >= 1", file=sys.stderr)
            return 2
        cfg.traces_per_bin = int(args.traces)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2

    params = cfg.physical_params()
    cal = cfg.detection_calibration()
    schedule = cfg.experiment_schedule()
    values = cfg.grid.values()
    jobs = [
        (bi, ti, float(n_rb))
        for bi, n_rb in enumerate(values)
        for ti in range(cfg.traces_per_bin)
    ]

    out_path = Path(args.out) if args.out else Path(cfg.out_dir) / "traces.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    traj_path = out_path.with_name("trajectories.jsonl") if args.dump_trajectories else None

    worker = functools.partial(
        _simulate_job,
        params=params,
        cal=cal,
        schedule=schedule,
        master_seed=cfg.master_seed,
        dump=args.dump_trajectories,
    )
    t0 = time.perf_counter()
    traj_fh = open(traj_path, "w") if traj_path else None
    n = 0
    try:
        with open(out_path, "w") as fh:
            if args.workers > 1:
                chunk = max(1, len(jobs) // (args.workers * 8))
                with ProcessPoolExecutor(max_workers=args.workers) as pool:
                    results = pool.map(worker, jobs, chunksize=chunk)
                    for trace_obj, traj_obj in results:
                        fh.write(json.dumps(trace_obj))
                        fh.write("\n")
                        if traj_fh:
                            traj_fh.write(json.dumps(traj_obj))
                            traj_fh.write("\n")
                        n += 1
            else:
                for job in jobs:
                    trace_obj, traj_obj = worker(job)
                    fh.write(json.dumps(trace_obj))
                    fh.write("\n")
                    if traj_fh:
                        traj_fh.write(json.dumps(traj_obj))
                        traj_fh.write("\n")
                    n += 1
    finally:
        if traj_fh:
            traj_fh.close()
    elapsed = time.perf_counter() - t0

    if not args.quiet:
        print(
            f"wrote {n} traces across {len(values)} companion-number bins "
            f"to {out_path} in {elapsed:.1f} s"
        )
        if traj_path:
            print(f"wrote event dumps to {traj_path}")
    return 0


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    cal = cfg.detection_calibration()
    traces = read_traces_jsonl(args.traces)
    width = float(cfg.grid.step)
    binned = bin_by_nrb(traces, cal, width=width)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_bins_csv(out_dir / "bins.csv", binned)
    for center, members in group_by_bin(traces, width).items():
        hist = build_histogram(members, cal)
        write_histogram_csv(out_dir / f"hist_nrb{int(round(center)):05d}.csv", hist)

    header = (
        f"{'n_rb':>6} {'traces':>6} {'mean':>8} {'se':>8} "
        f"{'load/s':>8} {'loss/s':>8} {'ratio':>7} {'lambda':>8}"
    )
    print(header)
    for b in binned.bins:
        ratio = b.load_loss_ratio
        print(
            f"{b.center:>6.0f} {b.n_traces:>6d} {b.mean_n_cs:>8.4f} "
            f"{b.se_mean_n_cs:>8.4f} {b.loading_rate:>8.4f} "
            f"{b.loss_counts_per_time:>8.4f} "
            f"{ratio:>7.3f} {b.poisson_lambda:>8.4f}"
        )
    print(f"wrote {out_dir / 'bins.csv'} and {len(binned.bins)} histograms")
    return 0


def _load_binned(input_path: str, cfg: RunConfig):
    path = Path(input_path)
    if path.suffix == ".jsonl":
        traces = read_traces_jsonl(path)
        return bin_by_nrb(traces, cfg.detection_calibration(), width=float(cfg.grid.step))
    if path.suffix == ".csv":
        return read_bins_csv(path)
    return None


def _curve_rows(cfg: RunConfig, params_fit, fitted_bins, width):
    lo, hi = float(cfg.grid.min), float(cfg.grid.max)
    points = np.unique(np.linspace(lo, hi, 201))
    fitted_from = min(fitted_bins) - width / 2.0
    rows = []
    for n_rb in points:
        try:
            mean = steady_state_mean(float(n_rb), params_fit)
        except ZeroDivisionError as exc:
            raise ZeroDivisionError(
                f"division by zero while tabulating the model curve at "
                f"n_rb = {n_rb:g}: {exc}"
            ) from exc
        branch = "fitted" if n_rb >= fitted_from else "extrapolated"
        rows.append((float(n_rb), mean, branch))
    return rows


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    binned = _load_binned(args.input, cfg)
    if binned is None:
        print(
            "error: input must be a .jsonl trace file or a .csv bin summary",
            file=sys.stderr,
        )
        return 2
    params = cfg.physical_params()

    loading = fit_loading_rate(binned)
    labels = classify_steady_state(binned, args.tol)
    beta_fit = fit_beta(binned, params, loading, tol=args.tol, labels=labels)
    syst = propagate_systematics(binned, params, loading, beta_fit)
    boot = None
    if args.bootstrap > 0:
        boot = bootstrap_stat_error(
            binned, params, loading, beta_fit,
            resamples=args.bootstrap, seed=args.seed,
        )

    report = {
        "r0_per_s": loading.r0,
        "r0_err_per_s": loading.r0_err,
        "alpha_per_s_per_rb": loading.alpha,
        "alpha_err_per_s_per_rb": loading.alpha_err,
        "beta_rbcs_cm3_per_s": beta_fit.beta,
        "stat_err_cm3_per_s": beta_fit.stat_err,
        "syst_err_cm3_per_s": syst,
        "steady_bins": beta_fit.fitted_bins,
        "goodness": {
            "beta_chi2": beta_fit.goodness,
            "beta_points": beta_fit.n_points,
            "loading_chi2": loading.chi2,
            "loading_dof": loading.dof,
        },
        "n_bins": len(binned.bins),
        "tol": args.tol,
    }
    if boot is not None:
        report["stat_err_bootstrap_cm3_per_s"] = boot

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_json(out_dir / "report.json", report)

    # The curve uses the fitted loading line and loss coefficient; clamping
    # guards against a noise-driven negative estimate, which the constructor
    # would reject.
    params_fit = replace(
        params,
        r0=max(loading.r0, 0.0),
        alpha=max(loading.alpha, 0.0),
        beta_rbcs=max(beta_fit.beta, 0.0),
    )
    rows = _curve_rows(cfg, params_fit, beta_fit.fitted_bins, binned.width)
    write_curve_csv(out_dir / "steady_state_curve.csv", rows)

    with open(out_dir / "fit_bins.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BIN_CSV_COLUMNS + ["state"])
        for b, lab in zip(binned.bins, labels):
            writer.writerow(bin_to_row(b) + [lab])

    print(
        f"loading line: r0 = {loading.r0:.4g} +- {loading.r0_err:.2g} /s, "
        f"alpha = {loading.alpha:.4g} +- {loading.alpha_err:.2g} /s per atom"
    )
    steady = beta_fit.fitted_bins
    print(
        f"steady bins: {min(steady):g}..{max(steady):g} "
        f"({beta_fit.n_points} of {len(binned.bins)})"
    )
    err_bits = [f"{beta_fit.stat_err:.2g} (stat)"]
    if boot is not None:
        err_bits.append(f"{boot:.2g} (bootstrap)")
    err_bits.append(f"{syst:.2g} (syst)")
    print(
        f"beta_rbcs = {beta_fit.beta:.4g} cm^3/s +- " + " +- ".join(err_bits)
    )
    print(f"wrote {out_dir / 'report.json'}")
    return 0


def cmd_oracle(args) -> int:
    checks = []
    if args.which in ("overlap", "all"):
        checks.extend(overlap_checks())
    if args.which in ("transient", "all"):
        params = RunConfig.default().physical_params()
        sets = [
            ("default-1100", 1100.0, params),
            ("default-2200", 2200.0, params),
            ("no-companion", 0.0, params),
        ]
        kwargs = {"master_seed": args.seed}
        if args.runs is not None:
            kwargs["runs"] = args.runs
        checks.extend(transient_checks(sets, **kwargs))
    if args.which in ("poisson", "all"):
        kwargs = {"master_seed": args.seed}
        if args.runs is not None:
            kwargs["runs"] = args.runs
        checks.append(poisson_end_state_check(**kwargs))

    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    return 0 if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motprobe",
        description="Single-atom collisional probe: simulation and inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate fluorescence traces")
    p_sim.add_argument("--config", help="JSON config file (defaults built in)")
    p_sim.add_argument("--out", help="output traces path (JSONL)")
    p_sim.add_argument("--seed", type=int, help="override the master seed")
    p_sim.add_argument("--traces", type=int, help="override traces per bin")
    p_sim.add_argument("--workers", type=int, default=1, help="worker processes")
    p_sim.add_argument(
        "--dump-trajectories", action="store_true",
        help="also write the underlying event lists",
    )
    p_sim.add_argument("--quiet", action="store_true", help="suppress the summary line")
    p_sim.set_defaults(func=cmd_simulate)

    p_ana = sub.add_parser("analyze", help="bin traces and build histograms")
    p_ana.add_argument("traces", help="traces JSONL from simulate")
    p_ana.add_argument("--config", help="JSON config file")
    p_ana.add_argument("--out", default="analysis", help="output directory")
    p_ana.set_defaults(func=cmd_analyze)

    p_fit = sub.add_parser("fit", help="fit the inter-species loss coefficient")
    p_fit.add_argument("input", help="traces .jsonl or bins .csv")
    p_fit.add_argument("--config", help="JSON config file")
    p_fit.add_argument("--out", default="fit", help="output directory")
    p_fit.add_argument(
        "--tol", type=float, default=DEFAULT_STEADY_TOL,
        help="steady-state tolerance on |load/loss - 1|",
    )
    p_fit.add_argument(
        "--bootstrap", type=int, default=0,
        help="bootstrap resamples for the statistical error (0 = skip)",
    )
    p_fit.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    p_fit.set_defaults(func=cmd_fit)

    p_orc = sub.add_parser("oracle", help="run simulator self-checks")
    p_orc.add_argument(
        "which", nargs="?", default="all",
        choices=["overlap", "transient", "poisson", "all"],
    )
    p_orc.add_argument("--runs", type=int, help="trajectories per check")
    p_orc.add_argument("--seed", type=int, default=777, help="master seed for the checks")
    p_orc.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (ConfigError, TraceFileError, InferenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ZeroDivisionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
