"""File formats: JSON-lines traces and trajectory dumps, CSV summaries.

One JSON object per line keeps multi-thousand-trace campaigns streamable and
diffable. Readers validate eagerly and report the offending line number.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .gillespie import Trajectory
from .inference import BinnedDataset, NrbBin
from .photon import AtomNumberEstimate, FluorescenceTrace, SegmentMap, TraceHistogram

__all__ = [
    "TraceFileError",
    "trace_to_dict",
    "trace_from_dict",
    "write_traces_jsonl",
    "read_traces_jsonl",
    "trajectory_to_dict",
    "write_trajectories_jsonl",
    "write_histogram_csv",
    "write_staircase_csv",
    "BIN_CSV_COLUMNS",
    "bin_to_row",
    "write_bins_csv",
    "read_bins_csv",
    "write_curve_csv",
    "write_report_json",
]


class TraceFileError(ValueError):
    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


def trace_to_dict(trace: FluorescenceTrace) -> dict:
    seg = trace.segments
    return {
        "trace_id": trace.trace_id,
        "n_rb": trace.n_rb,
        "bin_s": trace.bin_s,
        "segments": {
            "detect": list(seg.detect),
            "off": list(seg.off),
            "background": list(seg.background),
        },
        "counts": [int(c) for c in trace.counts],
    }


def trace_from_dict(obj: dict, line_number: int | None = None) -> FluorescenceTrace:
    required = {"trace_id", "n_rb", "bin_s", "segments", "counts"}
    missing = required - set(obj)
    if missing:
        raise TraceFileError(f"missing key(s): {', '.join(sorted(missing))}", line_number)
    seg_raw = obj["segments"]
    for key in ("detect", "off", "background"):
        if key not in seg_raw or len(seg_raw[key]) != 2:
            raise TraceFileError(f"segments.{key} must be a [start, stop] pair", line_number)
    try:
        segments = SegmentMap(
            detect=tuple(int(v) for v in seg_raw["detect"]),
            off=tuple(int(v) for v in seg_raw["off"]),
            background=tuple(int(v) for v in seg_raw["background"]),
        )
        return FluorescenceTrace(
            trace_id=str(obj["trace_id"]),
            n_rb=float(obj["n_rb"]),
            bin_s=float(obj["bin_s"]),
            segments=segments,
            counts=np.asarray(obj["counts"], dtype=int),
        )
    except (TypeError, ValueError) as exc:
        raise TraceFileError(str(exc), line_number) from exc


def write_traces_jsonl(path: "str | Path", traces: Iterable[FluorescenceTrace]) -> int:
    n = 0
    with open(path, "w") as fh:
        for trace in traces:
            fh.write(json.dumps(trace_to_dict(trace)))
            fh.write("\n")
            n += 1
    return n


def read_traces_jsonl(path: "str | Path") -> list[FluorescenceTrace]:
    traces = []
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFileError(f"not valid JSON ({exc.msg})", i) from exc
            traces.append(trace_from_dict(obj, i))
    if not traces:
        raise TraceFileError(f"{path}: no traces found")
    return traces


def trajectory_to_dict(trace_id: str, traj: Trajectory) -> dict:
    return {
        "trace_id": trace_id,
        "n_rb": traj.n_rb,
        "seed": traj.seed,
        "t_end_s": traj.t_end,
        "events": [[t, kind.value, n_after] for t, kind, n_after in traj.events],
    }


def write_trajectories_jsonl(path: "str | Path", trajectories: Iterable[tuple[str, Trajectory]]) -> int:
    """Dump (trace_id, trajectory) pairs for debugging and reanalysis."""
    n = 0
    with open(path, "w") as fh:
        for trace_id, traj in trajectories:
            fh.write(json.dumps(trajectory_to_dict(trace_id, traj)))
            fh.write("\n")
            n += 1
    return n


def write_histogram_csv(path: "str | Path", hist: TraceHistogram) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "occurrences"])
        for center, occ in zip(hist.bin_centers, hist.occurrences):
            writer.writerow([repr(float(center)), int(occ)])


def write_staircase_csv(path: "str | Path", estimate: AtomNumberEstimate) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_index", "n_cs"])
        for i, n in enumerate(estimate.staircase):
            writer.writerow([i, int(n)])


BIN_CSV_COLUMNS = [
    "n_rb_center",
    "n_traces",
    "mean_n_cs",
    "se_mean_n_cs",
    "loading_rate_per_s",
    "load_count",
    "loss_counts_per_time_per_s",
    "loss_atom_count",
    "detect_time_s",
    "poisson_lambda",
    "ratio_load_loss",
]


def bin_to_row(b: NrbBin) -> list:
    ratio = b.load_loss_ratio
    return [
        repr(float(b.center)),
        b.n_traces,
        repr(float(b.mean_n_cs)),
        repr(float(b.se_mean_n_cs)),
        repr(float(b.loading_rate)),
        b.load_count,
        repr(float(b.loss_counts_per_time)),
        b.loss_atoms,
        repr(float(b.detect_time_s)),
        repr(float(b.poisson_lambda)),
        repr(float(ratio)) if math.isfinite(ratio) else "inf",
    ]


def write_bins_csv(path: "str | Path", binned: BinnedDataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BIN_CSV_COLUMNS)
        for b in binned.bins:
            writer.writerow(bin_to_row(b))


def read_bins_csv(path: "str | Path", width: float | None = None) -> BinnedDataset:
    """Rebuild a binned dataset from its CSV export.

    Trace-level means are not stored in the CSV, so a dataset read this way
    supports every fit except the bootstrap.
    """
    bins: list[NrbBin] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(BIN_CSV_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise TraceFileError(
                f"{path}: missing column(s): {', '.join(sorted(missing))}"
            )
        for i, row in enumerate(reader, start=2):
            try:
                bins.append(
                    NrbBin(
                        center=float(row["n_rb_center"]),
                        n_traces=int(row["n_traces"]),
                        mean_n_cs=float(row["mean_n_cs"]),
                        se_mean_n_cs=float(row["se_mean_n_cs"]),
                        loading_rate=float(row["loading_rate_per_s"]),
                        load_count=int(row["load_count"]),
                        loss_counts_per_time=float(row["loss_counts_per_time_per_s"]),
                        loss_atoms=int(row["loss_atom_count"]),
                        detect_time_s=float(row["detect_time_s"]),
                        poisson_lambda=float(row["poisson_lambda"]),
                        trace_means=None,
                    )
                )
            except (TypeError, ValueError) as exc:
                raise TraceFileError(str(exc), i) from exc
    if not bins:
        raise TraceFileError(f"{path}: no bins found")
    bins.sort(key=lambda b: b.center)
    if width is None:
        centers = [b.center for b in bins]
        diffs = [b - a for a, b in zip(centers, centers[1:])]
        width = min(diffs) if diffs else 220.0
    return BinnedDataset(width=float(width), bins=bins)


def write_curve_csv(path: "str | Path", rows: Iterable[tuple[float, float, str]]) -> None:
    """Model curve for plotting: (n_rb, mean_n_cs, branch)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_rb", "mean_n_cs", "branch"])
        for n_rb, mean, branch in rows:
            writer.writerow([repr(float(n_rb)), repr(float(mean)), branch])


def write_report_json(path: "str | Path", report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
