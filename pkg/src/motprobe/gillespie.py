"""Exact event-driven simulation of the trapped-atom birth-death process.

The trap state is the integer probe-atom number. Waiting times between events
are exponential in the total rate and the event type is drawn in proportion
to its component rate, so trajectories sample the master equation exactly,
with no time discretization. Detection binning happens later, in the photon
layer.
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field

import numpy as np

from .physics import PhysicalParams, rates

__all__ = [
    "EventKind",
    "ExperimentSchedule",
    "Trajectory",
    "derive_seed",
    "next_event",
    "simulate_trajectory",
    "simulate_ensemble",
    "TRAJECTORY_STREAM",
    "PHOTON_STREAM",
]

# Stream tags for the per-trace seed derivation, see derive_seed().
TRAJECTORY_STREAM = 0
PHOTON_STREAM = 1


class EventKind(enum.Enum):
    LOAD = "load"
    LOSS_BG = "loss_bg"
    LOSS_RBCS = "loss_rbcs"
    LOSS_CSCS_PAIR = "loss_cscs_pair"

    @property
    def delta(self) -> int:
        """Change of the trapped-atom number caused by this event."""
        return _DELTA[self]


_DELTA = {
    EventKind.LOAD: +1,
    EventKind.LOSS_BG: -1,
    EventKind.LOSS_RBCS: -1,
    EventKind.LOSS_CSCS_PAIR: -2,
}

# Fixed draw order for the categorical event choice; reordering would change
# seeded streams.
_EVENT_ORDER = (
    EventKind.LOAD,
    EventKind.LOSS_BG,
    EventKind.LOSS_RBCS,
    EventKind.LOSS_CSCS_PAIR,
)


@dataclass(frozen=True)
class ExperimentSchedule:
    """Timing of one experimental shot, in seconds.

    detect_s is the fluorescence recording window with the trap running,
    off_s the dead window with the probe light off, background_s the final
    stretch used for background estimation. Atom dynamics are only simulated
    during detect_s; the other segments carry no atom signal.
    """

    detect_s: float = 3.0
    off_s: float = 0.5
    background_s: float = 0.2

    def __post_init__(self) -> None:
        for name in ("detect_s", "off_s", "background_s"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ValueError(f"{name} must be positive, got {value!r}")

    @property
    def total_s(self) -> float:
        return self.detect_s + self.off_s + self.background_s


@dataclass
class Trajectory:
    """One stochastic history of the trapped-atom number.

    events holds (time, kind, atom number after the event) with strictly
    increasing times inside [0, t_end]. The trap starts empty at t = 0.
    """

    events: list[tuple[float, EventKind, int]]
    t_end: float
    n_rb: float
    seed: int

    _times: list[float] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._times = [t for t, _, _ in self.events]

    def n_at(self, t: float) -> int:
        """Atom number at time t (events take effect at their timestamp)."""
        idx = bisect.bisect_right(self._times, t)
        return 0 if idx == 0 else self.events[idx - 1][2]

    @property
    def n_final(self) -> int:
        return self.events[-1][2] if self.events else 0

    def event_counts(self) -> dict[EventKind, int]:
        out = {kind: 0 for kind in EventKind}
        for _, kind, _ in self.events:
            out[kind] += 1
        return out

    def validate(self) -> None:
        t_prev = 0.0
        n_prev = 0
        for t, kind, n_after in self.events:
            if not (t_prev < t <= self.t_end):
                raise ValueError(f"event time {t!r} outside ({t_prev!r}, {self.t_end!r}]")
            if n_after != n_prev + kind.delta:
                raise ValueError(
                    f"step mismatch at t={t!r}: {n_prev} + {kind.delta} != {n_after}"
                )
            if n_after < 0:
                raise ValueError(f"negative atom number {n_after} at t={t!r}")
            t_prev, n_prev = t, n_after


def derive_seed(master_seed: int, *path: int) -> int:
    """Derive a child seed from a master seed and an integer path.

    Uses numpy's SeedSequence over the tuple (master_seed, *path), so any
    (stream, bin, trace) coordinate maps to a stable 64-bit seed no matter
    how many worker processes are used or in which order traces are drawn.
    """
    ss = np.random.SeedSequence([int(master_seed), *map(int, path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def next_event(
    n_cs: int,
    n_rb: float,
    params: PhysicalParams,
    rng: np.random.Generator,
) -> tuple[float, EventKind] | None:
    """Draw the waiting time and type of the next event.

    Returns None when every rate vanishes (absorbing state); the caller then
    treats the remaining observation window as event-free.
    """
    rs = rates(n_cs, n_rb, params)
    total = rs.total
    if total <= 0.0:
        return None
    dt = rng.exponential(1.0 / total)
    u = rng.random() * total
    acc = 0.0
    for kind in _EVENT_ORDER[:-1]:
        acc += getattr(rs, _FIELD_OF[kind])
        if u < acc:
            return dt, kind
    return dt, _EVENT_ORDER[-1]


_FIELD_OF = {
    EventKind.LOAD: "load",
    EventKind.LOSS_BG: "loss_bg",
    EventKind.LOSS_RBCS: "loss_rbcs",
    EventKind.LOSS_CSCS_PAIR: "loss_cscs",
}


def simulate_trajectory(
    n_rb: float,
    params: PhysicalParams,
    schedule: ExperimentSchedule,
    seed: int,
) -> Trajectory:
    """Simulate one shot from an empty trap over the detection window."""
    rng = np.random.default_rng(int(seed))
    t_end = schedule.detect_s
    t = 0.0
    n = 0
    events: list[tuple[float, EventKind, int]] = []
    while True:
        step = next_event(n, n_rb, params, rng)
        if step is None:
            break
        dt, kind = step
        t = t + dt
        if t > t_end:
            break
        n += kind.delta
        # A pair loss can only be drawn from n >= 2 because its rate carries
        # the discrete n(n-1) factor, so n stays non-negative by construction.
        events.append((t, kind, n))
    return Trajectory(events=events, t_end=t_end, n_rb=n_rb, seed=int(seed))


def simulate_ensemble(
    grid: "np.ndarray | list[float]",
    traces_per_bin: int,
    params: PhysicalParams,
    schedule: ExperimentSchedule,
    master_seed: int,
) -> list[Trajectory]:
    """Simulate traces_per_bin trajectories at every companion-number grid point.

    Per-trace seeds come from derive_seed(master_seed, TRAJECTORY_STREAM,
    bin_index, trace_index), so the ensemble is reproducible trace by trace
    and the result is independent of evaluation order. Output is ordered by
    (grid point, trace index).
    """
    if traces_per_bin < 1:
        raise ValueError(f"traces_per_bin must be >= 1, got {traces_per_bin!r}")
    out: list[Trajectory] = []
    for bi, n_rb in enumerate(grid):
        for ti in range(traces_per_bin):
            seed = derive_seed(master_seed, TRAJECTORY_STREAM, bi, ti)
            out.append(simulate_trajectory(float(n_rb), params, schedule, seed))
    return out
