"""Crossing-time extraction and statistical verification on simulated data.

A loop is one excursion of the Lyapunov value from level v0 up past v1 and
back to v0.  This module extracts loops from a sampled trajectory, builds
empirical survival / time-average distributions, and checks them against the
closed-form bounds with one-sided confidence intervals.  The theoretical
bounds hold almost surely, so a confident violation indicates an
implementation or discretization error, not a falsification of the theory.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import stats as sps

from .bounds import (
    LevelPair,
    down_cross_survival_bound,
    expected_down_cross,
    expected_up_cross,
    up_cross_survival_bound,
)
from .model import SystemSpec
from .sim import Trajectory

__all__ = [
    "TailState",
    "LoopRecord",
    "EmpiricalDistribution",
    "CheckRow",
    "CrossTimeReport",
    "MomentReport",
    "ProbabilityReport",
    "MIN_LOOPS",
    "extract_loops",
    "empirical_survival",
    "empirical_time_average",
    "wilson_lower",
    "wilson_upper",
    "verify_cross_time_bounds",
    "verify_moment_bound",
    "verify_probability_bound",
]

MIN_LOOPS = 30


class TailState(enum.Enum):
    """Phase of the unfinished loop segment at the end of the horizon."""

    IN_UP_PHASE = "in_up_phase"
    IN_DOWN_PHASE = "in_down_phase"


@dataclass(frozen=True)
class LoopRecord:
    """Alternating crossing times extracted from one trajectory.

    ``taus[0] = 0``; odd entries are up-crossings of v1, even entries (from
    index 2) are returns to v0.  ``up_times`` and ``down_times`` are the
    successive differences and reconstruct ``taus`` exactly.
    """

    taus: np.ndarray
    up_times: np.ndarray
    down_times: np.ndarray
    complete_loops: int
    tail_state: TailState
    horizon: float

    def up_phase_total(self) -> float:
        """Total time spent in up phases, including the unfinished tail."""
        total = float(np.sum(self.up_times))
        if self.tail_state is TailState.IN_UP_PHASE:
            total += self.horizon - float(self.taus[-1])
        return total


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Step-function estimate of a distribution or survival function."""

    thresholds: np.ndarray
    values: np.ndarray
    n_samples: int

    def __post_init__(self) -> None:
        if len(self.thresholds) != len(self.values):
            raise ValueError("thresholds and values must share one length")


def extract_loops(traj: Trajectory, v0: float, v1: float) -> LoopRecord:
    """Scan a trajectory's Lyapunov series for alternating level crossings.

    Crossings are detected at grid points: an up-crossing is the first index
    after the previous crossing with ``lyap >= v1``, a down-crossing the
    first with ``lyap <= v0`` (an exact hit has probability zero, so grid
    semantics use inequalities).  If the path starts at or above v1 the
    first up-crossing is recorded at time 0.
    """
    if not (0.0 < v0 < v1):
        raise ValueError(f"need 0 < v0 < v1, got v0={v0!r}, v1={v1!r}")
    lyap = traj.lyap
    up_idx = np.flatnonzero(lyap >= v1)
    down_idx = np.flatnonzero(lyap <= v0)

    tau_indices = [0]
    seeking_up = True
    cursor = 0
    if lyap[0] >= v1:
        tau_indices.append(0)
        seeking_up = False
    while True:
        pool = up_idx if seeking_up else down_idx
        pos = int(np.searchsorted(pool, cursor, side="right"))
        if pos >= len(pool):
            break
        cursor = int(pool[pos])
        tau_indices.append(cursor)
        seeking_up = not seeking_up

    # a path starting at or above v1 contributes a zero-length first up
    # segment via the duplicated index 0, so the alternation below is uniform
    taus = traj.times[tau_indices] - traj.times[0]
    diffs = np.diff(taus)
    up_times = diffs[0::2]
    down_times = diffs[1::2]
    return LoopRecord(
        taus=taus,
        up_times=up_times,
        down_times=down_times,
        complete_loops=len(down_times),
        tail_state=TailState.IN_UP_PHASE if seeking_up else TailState.IN_DOWN_PHASE,
        horizon=traj.horizon,
    )


def empirical_survival(samples: Sequence[float]) -> EmpiricalDistribution:
    """Right-continuous empirical survival evaluated at the sample points."""
    s = np.sort(np.asarray(samples, dtype=float))
    n = len(s)
    if n == 0:
        raise ValueError("empty sample")
    counts_gt = n - np.searchsorted(s, s, side="right")
    return EmpiricalDistribution(thresholds=s, values=counts_gt / n, n_samples=n)


def empirical_time_average(
    traj: Trajectory, thresholds: Sequence[float], mode: str = "norm"
) -> EmpiricalDistribution:
    """Finite-horizon fraction of time the state value stays below each threshold.

    Uses left-endpoint weighting: each grid interval contributes its full
    step with the value at its left endpoint, which keeps the occupancy
    accounting consistent with grid-detected crossings.
    """
    if mode == "norm":
        vals = traj.norms
    elif mode == "lyapunov":
        vals = traj.lyap
    else:
        raise ValueError(f"mode must be 'norm' or 'lyapunov', got {mode!r}")
    thresholds = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be sorted ascending")
    left = np.sort(vals[:-1])
    n_intervals = len(left)
    counts = np.searchsorted(left, thresholds, side="left")
    return EmpiricalDistribution(
        thresholds=thresholds, values=counts / n_intervals, n_samples=n_intervals
    )


def wilson_upper(successes: int, n: int, confidence: float) -> float:
    """One-sided Wilson score upper limit for a binomial proportion."""
    z = float(sps.norm.ppf(confidence))
    p = successes / n
    denom = 1.0 + z * z / n
    center = p + z * z / (2.0 * n)
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n))
    return min(1.0, (center + half) / denom)


def wilson_lower(successes: int, n: int, confidence: float) -> float:
    """One-sided Wilson score lower limit for a binomial proportion."""
    z = float(sps.norm.ppf(confidence))
    p = successes / n
    denom = 1.0 + z * z / n
    center = p + z * z / (2.0 * n)
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n))
    return max(0.0, (center - half) / denom)


@dataclass(frozen=True)
class CheckRow:
    """One pointwise comparison: empirical estimate vs theoretical bound."""

    threshold: float
    empirical: float
    bound: float
    ci_low: float
    ci_high: float
    flag: bool

    def csv_cols(self) -> list:
        return [
            self.threshold,
            self.empirical,
            self.bound,
            self.ci_low,
            self.ci_high,
            int(self.flag),
        ]


@dataclass(frozen=True)
class CrossTimeReport:
    """Survival-curve and mean comparisons for one loop record."""

    n_up: int
    n_down: int
    confidence: float
    underpowered: bool
    up_rows: List[CheckRow]
    down_rows: List[CheckRow]
    t_uc: float
    t_dc: float
    mean_up: float
    mean_down: float
    mean_up_halfwidth: float
    mean_down_halfwidth: float
    mean_up_flag: bool
    mean_down_flag: bool

    @property
    def n_flags(self) -> int:
        return (
            sum(r.flag for r in self.up_rows)
            + sum(r.flag for r in self.down_rows)
            + int(self.mean_up_flag)
            + int(self.mean_down_flag)
        )

    @property
    def passed(self) -> bool:
        return self.underpowered or self.n_flags == 0


def verify_cross_time_bounds(
    record: LoopRecord,
    levels: LevelPair,
    confidence: float = 0.99,
    n_grid: int = 25,
    min_loops: int = MIN_LOOPS,
) -> CrossTimeReport:
    """Check empirical crossing-time statistics against the survival bounds.

    Up-cross survival must not fall below its theoretical lower bound and
    down-cross survival must not exceed its upper bound, pointwise at the
    given one-sided Wilson confidence.  Sample means are compared one-sided
    against t_uc (>=) and t_dc (<=) with t-intervals.  The first up-cross is
    dropped: its distribution is not controlled by the dominating law.
    """
    t_uc = expected_up_cross(levels)
    t_dc = expected_down_cross(levels)
    up = np.asarray(record.up_times[1:], dtype=float)
    down = np.asarray(record.down_times, dtype=float)

    if record.complete_loops < min_loops:
        return CrossTimeReport(
            n_up=len(up), n_down=len(down), confidence=confidence,
            underpowered=True, up_rows=[], down_rows=[],
            t_uc=t_uc, t_dc=t_dc,
            mean_up=float(np.mean(up)) if len(up) else math.nan,
            mean_down=float(np.mean(down)) if len(down) else math.nan,
            mean_up_halfwidth=math.nan, mean_down_halfwidth=math.nan,
            mean_up_flag=False, mean_down_flag=False,
        )

    def survival_rows(samples, bound_fn, lower_is_bound):
        n = len(samples)
        grid = np.quantile(samples, np.linspace(0.0, 0.95, n_grid))
        rows = []
        for s in grid:
            s = float(s)
            if lower_is_bound:
                k = int(np.sum(samples > s))
                bound = bound_fn(s)
                lo = wilson_lower(k, n, confidence)
                hi = wilson_upper(k, n, confidence)
                flag = hi < bound
            else:
                k = int(np.sum(samples >= s))
                bound = bound_fn(s)
                lo = wilson_lower(k, n, confidence)
                hi = wilson_upper(k, n, confidence)
                flag = lo > bound
            rows.append(CheckRow(s, k / n, bound, lo, hi, flag))
        return rows

    up_rows = survival_rows(up, lambda s: up_cross_survival_bound(s, levels), True)
    down_rows = survival_rows(
        down, lambda s: down_cross_survival_bound(s, levels), False
    )

    def one_sided_halfwidth(samples):
        n = len(samples)
        tq = float(sps.t.ppf(confidence, n - 1))
        return tq * float(np.std(samples, ddof=1)) / math.sqrt(n)

    mean_up = float(np.mean(up))
    mean_down = float(np.mean(down))
    up_hw = one_sided_halfwidth(up)
    down_hw = one_sided_halfwidth(down)
    return CrossTimeReport(
        n_up=len(up), n_down=len(down), confidence=confidence,
        underpowered=False, up_rows=up_rows, down_rows=down_rows,
        t_uc=t_uc, t_dc=t_dc,
        mean_up=mean_up, mean_down=mean_down,
        mean_up_halfwidth=up_hw, mean_down_halfwidth=down_hw,
        mean_up_flag=mean_up + up_hw < t_uc,
        mean_down_flag=mean_down - down_hw > t_dc,
    )


@dataclass(frozen=True)
class MomentReport:
    """Ensemble-mean Lyapunov values against the exponential decay envelope."""

    rows: List[CheckRow]
    n_paths: int

    @property
    def passed(self) -> bool:
        return not any(r.flag for r in self.rows)


def _grid_index(traj: Trajectory, t: float) -> int:
    dt = traj.grid_dt
    idx = int(round((t - float(traj.times[0])) / dt))
    if not (0 <= idx < len(traj.times)) or abs(traj.times[idx] - t) > 1e-9 + 1e-9 * abs(t):
        raise ValueError(f"time {t!r} is not on the saved trajectory grid")
    return idx


def verify_moment_bound(
    paths: Sequence[Trajectory], spec: SystemSpec, times: Sequence[float]
) -> MomentReport:
    """Check E[V(x(t))] <= e^{-ct}(V(x0) - floor) + floor at each sampled time.

    The empirical mean may exceed the bound by at most three standard errors
    before the point is flagged.
    """
    if len(paths) < 1000:
        raise ValueError(f"need >= 1000 paths, got {len(paths)}")
    g = spec.noise_floor
    v0 = float(paths[0].lyap[0])
    rows = []
    for t in times:
        t = float(t)
        idx = _grid_index(paths[0], t)
        vals = np.array([p.lyap[idx] for p in paths])
        mean = float(np.mean(vals))
        se = float(np.std(vals, ddof=1)) / math.sqrt(len(vals))
        bound = math.exp(-spec.c * t) * (v0 - g) + g
        rows.append(
            CheckRow(t, mean, bound, mean - 3.0 * se, mean + 3.0 * se,
                     flag=mean - 3.0 * se > bound)
        )
    return MomentReport(rows=rows, n_paths=len(paths))


@dataclass(frozen=True)
class ProbabilityReport:
    """Empirical frequency of {|x(t)| < r} against its theoretical floor."""

    radius: float
    time: float
    n_paths: int
    frequency: float
    floor: float
    ci_low: float
    ci_high: float
    vacuous: bool
    flag: bool

    @property
    def passed(self) -> bool:
        return not self.flag


def verify_probability_bound(
    paths: Sequence[Trajectory],
    spec: SystemSpec,
    r: float,
    t: float,
    confidence: float = 0.99,
) -> ProbabilityReport:
    """Check P{|x(t)| < r} against 1 - (e^{-ct}(V(x0)-floor)+floor)/alpha1(r)."""
    if len(paths) < 1000:
        raise ValueError(f"need >= 1000 paths, got {len(paths)}")
    if r <= 0.0:
        raise ValueError(f"radius must be positive, got {r!r}")
    g = spec.noise_floor
    v0 = float(paths[0].lyap[0])
    idx = _grid_index(paths[0], float(t))
    hits = int(np.sum(np.array([p.norms[idx] for p in paths]) < r))
    n = len(paths)
    floor = 1.0 - (math.exp(-spec.c * t) * (v0 - g) + g) / spec.lyapunov.alpha1(r)
    lo = wilson_lower(hits, n, confidence)
    hi = wilson_upper(hits, n, confidence)
    vacuous = floor <= 0.0
    return ProbabilityReport(
        radius=float(r), time=float(t), n_paths=n, frequency=hits / n,
        floor=floor, ci_low=lo, ci_high=hi, vacuous=vacuous,
        flag=(not vacuous) and hi < floor,
    )
