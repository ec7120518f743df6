"""Photon-count synthesis and atom-number recovery.

Forward direction: turn a simulated trajectory into Poisson photon counts in
fixed time bins, including the light-off and background segments of the shot.
Inverse direction: background subtraction, integer staircase estimation with
a short median filter, pooled count-rate histograms with per-peak Gaussian
fits, and a Poisson fit to the peak weights.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.ndimage import median_filter

from .gillespie import ExperimentSchedule, Trajectory

__all__ = [
    "DetectionCalibration",
    "SegmentMap",
    "FluorescenceTrace",
    "AtomNumberEstimate",
    "GaussianPeak",
    "TraceHistogram",
    "PoissonFit",
    "segment_map_for",
    "occupancy_profile",
    "synthesize_counts",
    "subtract_background",
    "estimate_staircase",
    "build_histogram",
    "fit_poisson",
]


@dataclass(frozen=True)
class DetectionCalibration:
    """Detector model: counts arrive Poisson-distributed in fixed bins.

    rate_per_atom is the detected fluorescence rate per trapped atom,
    background_rate the stray-light rate present while the trap light is on,
    dark_rate the residual rate with the light off (zero by default, the
    background segment subsumes dark counts), bin_s the bin width.
    """

    rate_per_atom: float = 1.0e4
    background_rate: float = 5.0e3
    dark_rate: float = 0.0
    bin_s: float = 0.02

    def __post_init__(self) -> None:
        if self.rate_per_atom < 0 or self.background_rate < 0 or self.dark_rate < 0:
            raise ValueError("count rates must be non-negative")
        if not self.bin_s > 0:
            raise ValueError(f"bin_s must be positive, got {self.bin_s!r}")


@dataclass(frozen=True)
class SegmentMap:
    """Half-open bin-index ranges of the three shot segments."""

    detect: tuple[int, int]
    off: tuple[int, int]
    background: tuple[int, int]

    def __post_init__(self) -> None:
        d, o, b = self.detect, self.off, self.background
        ok = (
            d[0] == 0
            and d[0] <= d[1] == o[0] <= o[1] == b[0] <= b[1]
        )
        if not ok:
            raise ValueError(f"segments must tile the trace in order, got {self!r}")

    @property
    def n_bins(self) -> int:
        return self.background[1]


def _segment_bins(duration_s: float, bin_s: float, name: str) -> int:
    n = round(duration_s / bin_s)
    if n < 1 or abs(n * bin_s - duration_s) > 1e-9:
        raise ValueError(
            f"{name} = {duration_s!r} s is not a positive whole number of "
            f"{bin_s!r} s bins"
        )
    return n


def segment_map_for(schedule: ExperimentSchedule, bin_s: float) -> SegmentMap:
    nd = _segment_bins(schedule.detect_s, bin_s, "detect_s")
    no = _segment_bins(schedule.off_s, bin_s, "off_s")
    nb = _segment_bins(schedule.background_s, bin_s, "background_s")
    return SegmentMap(
        detect=(0, nd),
        off=(nd, nd + no),
        background=(nd + no, nd + no + nb),
    )


@dataclass
class FluorescenceTrace:
    """Photon counts of one shot plus the segment layout that produced them."""

    trace_id: str
    n_rb: float
    bin_s: float
    segments: SegmentMap
    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 1 or len(self.counts) != self.segments.n_bins:
            raise ValueError(
                f"counts length {len(self.counts)} does not match segment map "
                f"({self.segments.n_bins} bins)"
            )
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def detect_counts(self) -> np.ndarray:
        i0, i1 = self.segments.detect
        return self.counts[i0:i1]

    @property
    def background_counts(self) -> np.ndarray:
        i0, i1 = self.segments.background
        return self.counts[i0:i1]


@dataclass
class AtomNumberEstimate:
    """Recovered integer occupancy per detect bin plus the step events.

    load_events lists the bin index of every up-step (repeated for multi-atom
    steps). loss_events lists (bin index, atoms lost) with multiplicity 2
    flagging a pair-loss candidate.
    """

    staircase: np.ndarray
    load_events: list[int]
    loss_events: list[tuple[int, int]]


@dataclass(frozen=True)
class GaussianPeak:
    n_atoms: int
    center: float
    width: float
    weight: float
    sample_count: int


@dataclass
class TraceHistogram:
    """Histogram of background-subtracted count rates pooled over traces."""

    bin_edges: np.ndarray
    occurrences: np.ndarray
    peaks: list[GaussianPeak]
    poisson_lambda: float | None = None

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


@dataclass(frozen=True)
class PoissonFit:
    lam: float
    chi2: float
    dof: int
    p_value: float


def occupancy_profile(traj: Trajectory, n_bins: int, bin_s: float) -> np.ndarray:
    """Time-averaged atom number in each detection bin.

    The trajectory is piecewise constant; the last level persists to the end
    of the detection window.
    """
    occ = np.zeros(n_bins)
    horizon = n_bins * bin_s
    t_prev = 0.0
    level = 0
    for t, _, n_after in traj.events:
        _accumulate(occ, t_prev, min(t, horizon), level, bin_s)
        t_prev, level = t, n_after
    _accumulate(occ, t_prev, horizon, level, bin_s)
    return occ / bin_s


def _accumulate(occ: np.ndarray, a: float, b: float, level: int, bin_s: float) -> None:
    if level == 0 or b <= a:
        return
    first = int(a / bin_s)
    last = min(int(math.ceil(b / bin_s)) - 1, len(occ) - 1)
    for i in range(first, last + 1):
        lo = max(a, i * bin_s)
        hi = min(b, (i + 1) * bin_s)
        if hi > lo:
            occ[i] += level * (hi - lo)


def synthesize_counts(
    traj: Trajectory,
    cal: DetectionCalibration,
    schedule: ExperimentSchedule,
    seed: int,
    trace_id: str | None = None,
) -> FluorescenceTrace:
    """Draw Poisson photon counts for one shot.

    Detect bins see the occupancy-weighted atom signal plus background, the
    off segment only the dark rate, the background segment only background.
    """
    seg = segment_map_for(schedule, cal.bin_s)
    nd = seg.detect[1] - seg.detect[0]
    no = seg.off[1] - seg.off[0]
    nb = seg.background[1] - seg.background[0]
    occ = occupancy_profile(traj, nd, cal.bin_s)
    rng = np.random.default_rng(int(seed))
    lam_detect = (occ * cal.rate_per_atom + cal.background_rate) * cal.bin_s
    counts = np.concatenate(
        [
            rng.poisson(lam_detect),
            rng.poisson(cal.dark_rate * cal.bin_s, size=no),
            rng.poisson(cal.background_rate * cal.bin_s, size=nb),
        ]
    )
    if trace_id is None:
        trace_id = f"seed{traj.seed:020d}"
    return FluorescenceTrace(
        trace_id=trace_id,
        n_rb=traj.n_rb,
        bin_s=cal.bin_s,
        segments=seg,
        counts=counts,
    )


def subtract_background(trace: FluorescenceTrace) -> np.ndarray:
    """Count rates of the detect bins minus the mean background-segment rate.

    Returns real-valued rates in 1/s; values can be slightly negative through
    shot noise. Any constant stray-light offset present in both segments
    cancels exactly at the expectation level.
    """
    bg = trace.background_counts
    if len(bg) == 0:
        raise ValueError(f"trace {trace.trace_id!r} has an empty background segment")
    bg_rate = bg.mean() / trace.bin_s
    return trace.detect_counts / trace.bin_s - bg_rate


def estimate_staircase(
    trace: FluorescenceTrace, cal: DetectionCalibration
) -> AtomNumberEstimate:
    """Quantize background-subtracted rates to whole atoms and extract events.

    Rounding to the nearest non-negative integer is reliable because one atom
    is worth many shot-noise sigma per bin at the default calibration. The
    3-bin median filter (edges replicated) removes single-bin excursions;
    events are the level changes of the filtered staircase, with the level
    before the first bin defined as zero.
    """
    if cal.rate_per_atom <= 0:
        raise ValueError("rate_per_atom must be positive to quantize occupancy")
    rates_corr = subtract_background(trace)
    raw = np.rint(rates_corr / cal.rate_per_atom).astype(int)
    np.clip(raw, 0, None, out=raw)
    stair = median_filter(raw, size=3, mode="nearest")
    steps = np.diff(np.concatenate(([0], stair)))
    load_events: list[int] = []
    loss_events: list[tuple[int, int]] = []
    for i in np.nonzero(steps)[0]:
        d = int(steps[i])
        if d > 0:
            load_events.extend([int(i)] * d)
        else:
            k = -d
            # A 2-atom drop is one pair-loss candidate; deeper drops (rare)
            # decompose into pairs plus at most one single.
            while k >= 2:
                loss_events.append((int(i), 2))
                k -= 2
            if k == 1:
                loss_events.append((int(i), 1))
    return AtomNumberEstimate(staircase=stair, load_events=load_events, loss_events=loss_events)


def _gaussian(x, amp, mu, sigma):
    return amp * np.exp(-((x - mu) ** 2) / (2.0 * sigma ** 2))


# Half-width of the rate window claimed by each integer-atom peak, as a
# fraction of the per-atom rate. Windows of adjacent peaks stay disjoint.
_PEAK_WINDOW_FRAC = 0.35
# Minimum pooled samples inside a window before a peak is fitted.
_MIN_PEAK_SAMPLES = 5


def build_histogram(
    traces: "list[FluorescenceTrace]", cal: DetectionCalibration
) -> TraceHistogram:
    """Pool background-subtracted detect rates and fit the integer-atom peaks.

    The histogram uses a fixed bin width of rate_per_atom / 20. For every
    candidate atom number k, histogram bars within k*rate_per_atom times
    (1 +- 0.35) are fitted with a local Gaussian; the peak weight is the
    fitted area in units of samples, capped at the window occupancy so the
    summed weights can never exceed the pooled bin count.
    """
    if not traces:
        raise ValueError("need at least one trace")
    if cal.rate_per_atom <= 0:
        raise ValueError("rate_per_atom must be positive")
    pooled = np.concatenate([subtract_background(t) for t in traces])
    width = cal.rate_per_atom / 20.0
    lo = math.floor(pooled.min() / width) * width
    hi = math.ceil(pooled.max() / width) * width
    if hi <= lo:
        hi = lo + width
    edges = np.arange(lo, hi + 0.5 * width, width)
    occurrences, _ = np.histogram(pooled, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])

    peaks: list[GaussianPeak] = []
    half = _PEAK_WINDOW_FRAC * cal.rate_per_atom
    k_max = int(math.ceil(max(pooled.max(), 0.0) / cal.rate_per_atom))
    for k in range(k_max + 1):
        c0 = k * cal.rate_per_atom
        samples = pooled[np.abs(pooled - c0) <= half]
        n_k = len(samples)
        if n_k < _MIN_PEAK_SAMPLES:
            continue
        sel = (centers >= c0 - half) & (centers <= c0 + half)
        xs, ys = centers[sel], occurrences[sel].astype(float)
        sigma0 = math.sqrt((c0 + cal.background_rate) * cal.bin_s) / cal.bin_s
        sigma0 = min(max(sigma0, width), half)
        try:
            with warnings.catch_warnings():
                # Only the optimum is used, so an inestimable covariance on a
                # degenerate window is not worth a warning.
                warnings.simplefilter("ignore", optimize.OptimizeWarning)
                popt, _ = optimize.curve_fit(
                    _gaussian,
                    xs,
                    ys,
                    p0=(max(ys.max(), 1.0), float(np.mean(samples)), sigma0),
                    bounds=(
                        [0.0, c0 - half, width / 4.0],
                        [np.inf, c0 + half, 2.0 * half],
                    ),
                    maxfev=10000,
                )
            amp, mu, sigma = popt
            area = amp * abs(sigma) * math.sqrt(2.0 * math.pi) / width
        except (RuntimeError, ValueError):
            # Degenerate window (for example a single occupied bar); fall back
            # to sample moments.
            mu = float(np.mean(samples))
            sigma = float(np.std(samples))
            area = float(n_k)
        peaks.append(
            GaussianPeak(
                n_atoms=k,
                center=float(mu),
                width=float(abs(sigma)),
                weight=float(min(area, n_k)),
                sample_count=n_k,
            )
        )

    hist = TraceHistogram(bin_edges=edges, occurrences=occurrences, peaks=peaks)
    if len(peaks) >= 2:
        try:
            hist.poisson_lambda = fit_poisson(hist).lam
        except ValueError:
            pass
    return hist


def fit_poisson(hist: TraceHistogram) -> PoissonFit:
    """Poisson law for the atom-number weights of the histogram peaks.

    The rate estimate is the weight-weighted mean atom number. The chi-square
    statistic compares the peak weights against the fitted law, with all
    probability at and above the highest peak lumped into a tail cell; the
    degrees of freedom account for the fitted total and rate.
    """
    if len(hist.peaks) < 2:
        raise ValueError("need at least two peaks to fit an atom-number law")
    w = {p.n_atoms: p.weight for p in hist.peaks}
    total = sum(w.values())
    if total <= 0 or any(v < 0 for v in w.values()):
        raise ValueError("degenerate peak weights")
    lam = sum(k * v for k, v in w.items()) / total

    k_top = max(w)
    obs, exp = [], []
    for k in range(k_top):
        obs.append(w.get(k, 0.0))
        exp.append(total * stats.poisson.pmf(k, lam))
    obs.append(w[k_top])
    exp.append(total * stats.poisson.sf(k_top - 1, lam))

    chi2 = 0.0
    cells = 0
    for o, e in zip(obs, exp):
        if e < 1e-12:
            if o > 1e-12:
                chi2 = math.inf
                cells += 1
            continue
        chi2 += (o - e) ** 2 / e
        cells += 1
    dof = cells - 2
    if dof < 1:
        return PoissonFit(lam=lam, chi2=0.0, dof=0, p_value=1.0)
    p = float(stats.chi2.sf(chi2, dof)) if math.isfinite(chi2) else 0.0
    return PoissonFit(lam=lam, chi2=float(chi2), dof=dof, p_value=p)
