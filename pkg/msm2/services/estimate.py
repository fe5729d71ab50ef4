"""
Counting processes and estimators of the second-order tensor.

For a trajectory starting on day d0, the state at index t sits on day
d0 + t and the triple ending at index t is counted at s = d0 + t:

    N~_hjl(s)   subjects in h, j, l on days s-2, s-1, s
    Y~_hj(s-1)  subjects in h, j on days s-2, s-1 with a day-s observation

A subject's last observed day has no successor and is therefore never at
risk, so sum_l N~_hjl(s) == Y~_hj(s-1) for every day.
"""

import time
from collections import Counter
from fractions import Fraction
from typing import Dict, FrozenSet, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict

from ..constants import DEFAULT_MIN_AT_RISK, PERCENT_DECIMALS
from ..errors import DatasetValidationError, NoSupportError
from ..models import (
    ChainInitialization,
    FirstOrderMatrix,
    StateSpace,
    Trajectory,
    TransitionTensor,
    ValidationReport,
)

logger = structlog.get_logger()

Method = Literal["ratio", "conditional"]

# previous distinct state used for subjects who started in the current state
ADMISSION = 0


class PathCounts(BaseModel):
    """
    Aggregated counting and at-risk processes.

    events[h-1, j-1, l-1, s] is N~_hjl(s); at_risk[h-1, j-1, s] is
    Y~_hj(s-1). window_start/window_end hold R_hj and T_hj (0 when the pair
    was never at risk). jump_paths counts subjects per (previous distinct
    state, j, l) over their sequence of distinct states, ADMISSION standing
    for "started in j".
    """
    space: StateSpace
    events: np.ndarray
    at_risk: np.ndarray
    window_start: np.ndarray
    window_end: np.ndarray
    jump_paths: Dict[Tuple[int, int, int], int]
    n_subjects: int
    excluded: FrozenSet[str] = frozenset()

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @property
    def m(self) -> int:
        return self.space.m

    @property
    def event_totals(self) -> np.ndarray:
        """sum_s N~_hjl(s), shape (m, m, m)"""
        return self.events.sum(axis=3)

    @property
    def at_risk_totals(self) -> np.ndarray:
        """sum_s Y~_hj(s-1), shape (m, m)"""
        return self.at_risk.sum(axis=2)

    def window(self, h: int, j: int) -> Optional[Tuple[int, int]]:
        start = int(self.window_start[h - 1, j - 1])
        if start == 0:
            return None
        return start, int(self.window_end[h - 1, j - 1])


class TensorEstimate(BaseModel):
    """Estimated tensor with the counts and diagnostics behind every row"""
    tensor: TransitionTensor
    method: Method
    at_risk_totals: np.ndarray
    event_totals: np.ndarray
    estimated: np.ndarray
    thin: np.ndarray
    row_sum_deviation: np.ndarray
    min_at_risk: int

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    def thin_pairs(self) -> List[Tuple[int, int]]:
        return [(int(h) + 1, int(j) + 1) for h, j in np.argwhere(self.thin)]


class TwoStepRow(BaseModel):
    """One line of the two-step path summary"""
    source: int
    target: int
    direct_total: int
    previous: int
    count: int
    percent: str

    model_config = ConfigDict(frozen=True)


def _usable(dataset: Sequence[Trajectory], report: Optional[ValidationReport]) -> List[Trajectory]:
    flagged = report.flagged if report is not None else frozenset()
    return [t for t in dataset if t.subject_id not in flagged and len(t.states) > 0]


def _jump_paths(states: Sequence[int]) -> List[Tuple[int, int, int]]:
    runs = [states[0]]
    for state in states[1:]:
        if state != runs[-1]:
            runs.append(state)
    return [
        (runs[i - 2] if i >= 2 else ADMISSION, runs[i - 1], runs[i])
        for i in range(1, len(runs))
    ]


def _tally(chunk: Sequence[Trajectory], m: int, n_days: int) -> Tuple[np.ndarray, Counter]:
    """Triple counts by day plus jump paths for one chunk of subjects."""
    columns = [[], [], [], []]
    jumps: Counter = Counter()
    for trajectory in chunk:
        states = np.asarray(trajectory.states, dtype=np.int64) - 1
        if len(states) >= 3:
            columns[0].append(states[:-2])
            columns[1].append(states[1:-1])
            columns[2].append(states[2:])
            columns[3].append(trajectory.start_day + np.arange(2, len(states)))
        jumps.update(_jump_paths(trajectory.states))

    shape = (m, m, m, n_days)
    if not columns[0]:
        return np.zeros(shape, dtype=np.int64), jumps
    flat = np.ravel_multi_index(tuple(np.concatenate(c) for c in columns), shape)
    events = np.bincount(flat, minlength=int(np.prod(shape))).astype(np.int64).reshape(shape)
    return events, jumps


def count_paths(
    dataset: Sequence[Trajectory],
    space: StateSpace,
    report: Optional[ValidationReport] = None,
    n_jobs: int = 1,
) -> PathCounts:
    """
    Build N~_hjl(s), Y~_hj(s-1) and the windows [R_hj, T_hj].

    Subjects flagged in `report` are left out. With n_jobs > 1 the
    subjects are split into contiguous chunks whose integer counts are
    added, which gives the same result as a single pass.
    """
    if len(dataset) == 0:
        raise DatasetValidationError("dataset is empty")

    start_time = time.time()
    usable = _usable(dataset, report)
    excluded = frozenset(t.subject_id for t in dataset) - frozenset(t.subject_id for t in usable)
    m = space.m
    n_days = max((t.end_day for t in usable), default=0) + 1

    if n_jobs == 1 or len(usable) < 2:
        parts = [_tally(usable, m, n_days)]
    else:
        n_chunks = max(1, min(len(usable), 4 * (n_jobs if n_jobs > 0 else 8)))
        bounds = np.linspace(0, len(usable), n_chunks + 1).astype(int)
        parts = Parallel(n_jobs=n_jobs)(
            delayed(_tally)(usable[a:b], m, n_days) for a, b in zip(bounds[:-1], bounds[1:])
        )

    events = np.zeros((m, m, m, n_days), dtype=np.int64)
    jumps: Counter = Counter()
    for part_events, part_jumps in parts:
        events += part_events
        jumps.update(part_jumps)

    at_risk = events.sum(axis=2)
    positive = at_risk > 0
    any_day = positive.any(axis=2)
    window_start = np.where(any_day, positive.argmax(axis=2), 0)
    window_end = np.where(any_day, n_days - 1 - positive[:, :, ::-1].argmax(axis=2), 0)

    for arr in (events, at_risk, window_start, window_end):
        arr.setflags(write=False)

    logger.info(
        "Counted paths",
        subjects=len(usable),
        excluded=len(excluded),
        triples=int(events.sum()),
        days=n_days - 1,
        elapsed_seconds=round(time.time() - start_time, 3),
    )
    return PathCounts(
        space=space,
        events=events,
        at_risk=at_risk,
        window_start=window_start,
        window_end=window_end,
        jump_paths=dict(sorted(jumps.items())),
        n_subjects=len(usable),
        excluded=excluded,
    )


def _require_pair(counts: PathCounts, h: int, j: int) -> int:
    total = int(counts.at_risk_totals[h - 1, j - 1])
    if total == 0:
        raise NoSupportError(
            f"pair ({counts.space.label(h)}, {counts.space.label(j)}) never observed at risk", h=h, j=j
        )
    return total


def estimate_ratio(counts: PathCounts, h: int, j: int, l: int, exact: bool = False) -> Union[float, Fraction]:
    """
    P~_hjl = sum_s N~_hjl(s) / sum_s Y~_hj(s-1).

    exact=True returns the ratio as a Fraction.
    """
    at_risk = _require_pair(counts, h, j)
    events = int(counts.event_totals[h - 1, j - 1, l - 1])
    if exact:
        return Fraction(events, at_risk)
    return events / at_risk


def _daily_ratios(counts: PathCounts, h: int, j: int) -> np.ndarray:
    """Per-day ratio vectors N~_hj.(s) / Y~_hj(s-1) on days with someone at risk."""
    at_risk = counts.at_risk[h - 1, j - 1]
    days = np.flatnonzero(at_risk)
    return counts.events[h - 1, j - 1][:, days] / at_risk[days]


def estimate_conditional(counts: PathCounts, h: int, j: int, l: int) -> float:
    """
    P^_hjl: average over days s in [R_hj, T_hj] of N~_hjl(s) / Y~_hj(s-1).

    Days inside the window with nobody at risk are skipped and do not
    count in the denominator.
    """
    _require_pair(counts, h, j)
    return float(_daily_ratios(counts, h, j)[l - 1].mean())


def estimate_tensor(
    counts: PathCounts,
    method: Method = "ratio",
    min_at_risk: int = DEFAULT_MIN_AT_RISK,
) -> TensorEstimate:
    """
    Fill every observed pair's row with the chosen estimator.

    Absorbing conventions: the matrix of an absorbing state a keeps only
    P_aaa = 1, and a pair (h, a) allowed by the adjacency moves to a with
    probability 1. Pairs never at risk stay unsupported with a zero row.
    Conditional rows are not renormalized; their deviation from 1 is kept
    as a diagnostic.
    """
    if method not in ("ratio", "conditional"):
        raise ValueError(f"unknown method {method!r}")
    if counts.n_subjects == 0:
        raise DatasetValidationError("no usable trajectories to estimate from")

    space = counts.space
    m = space.m
    values = np.zeros((m, m, m))
    support = np.zeros((m, m), dtype=bool)
    estimated = np.zeros((m, m), dtype=bool)
    at_risk_totals = counts.at_risk_totals
    event_totals = counts.event_totals

    for h in range(1, m + 1):
        for j in range(1, m + 1):
            if space.is_absorbing(h):
                if j == h:
                    support[h - 1, j - 1] = True
                    values[h - 1, j - 1, j - 1] = 1.0
                continue
            if space.is_absorbing(j):
                if space.allows(h, j) or at_risk_totals[h - 1, j - 1] > 0:
                    support[h - 1, j - 1] = True
                    values[h - 1, j - 1, j - 1] = 1.0
                continue
            total = at_risk_totals[h - 1, j - 1]
            if total == 0:
                continue
            support[h - 1, j - 1] = True
            estimated[h - 1, j - 1] = True
            if method == "ratio":
                values[h - 1, j - 1] = event_totals[h - 1, j - 1] / total
            else:
                values[h - 1, j - 1] = _daily_ratios(counts, h, j).mean(axis=1)

    row_sum_deviation = np.where(estimated, np.abs(values.sum(axis=2) - 1.0), 0.0)
    thin = estimated & (at_risk_totals < min_at_risk)

    tensor = TransitionTensor(values=values, support=support, labels=space.labels)
    result = TensorEstimate(
        tensor=tensor,
        method=method,
        at_risk_totals=at_risk_totals,
        event_totals=event_totals,
        estimated=estimated,
        thin=thin,
        row_sum_deviation=row_sum_deviation,
        min_at_risk=min_at_risk,
    )
    if thin.any():
        logger.warning(
            "Thin cells in tensor estimate",
            method=method,
            min_at_risk=min_at_risk,
            pairs=[f"{space.label(h)}->{space.label(j)}" for h, j in result.thin_pairs()],
        )
    logger.info(
        "Estimated transition tensor",
        method=method,
        supported_pairs=int(support.sum()),
        estimated_pairs=int(estimated.sum()),
        max_row_sum_deviation=float(row_sum_deviation.max()),
    )
    return result


def estimate_first_order(
    dataset: Sequence[Trajectory],
    space: StateSpace,
    report: Optional[ValidationReport] = None,
) -> FirstOrderMatrix:
    """
    P^_hj = (# one-day moves h -> j) / (# days in h followed by an observed day).

    Absorbing rows are unit self-loops; states never left from stay zero.
    """
    if len(dataset) == 0:
        raise DatasetValidationError("dataset is empty")
    m = space.m
    sources, targets = [], []
    for trajectory in _usable(dataset, report):
        states = np.asarray(trajectory.states, dtype=np.int64) - 1
        sources.append(states[:-1])
        targets.append(states[1:])
    moves = np.zeros((m, m), dtype=np.int64)
    if sources:
        flat = np.ravel_multi_index((np.concatenate(sources), np.concatenate(targets)), (m, m))
        moves = np.bincount(flat, minlength=m * m).reshape(m, m)

    at_risk = moves.sum(axis=1)
    values = np.divide(moves, at_risk[:, None], out=np.zeros((m, m)), where=at_risk[:, None] > 0)
    for a in space.absorbing:
        values[a - 1] = 0.0
        values[a - 1, a - 1] = 1.0
    return FirstOrderMatrix(values=values)


def estimate_initialization(
    dataset: Sequence[Trajectory],
    space: StateSpace,
    report: Optional[ValidationReport] = None,
) -> Optional[ChainInitialization]:
    """
    Empirical law of the first observed state and of the first move.

    Returns None when some starting state is never followed by a second
    observed day, since its first-step row is then undefined.
    """
    m = space.m
    usable = _usable(dataset, report)
    if not usable:
        raise DatasetValidationError("no usable trajectories")
    first = np.bincount([t.states[0] - 1 for t in usable], minlength=m)
    moves = np.zeros((m, m), dtype=np.int64)
    for t in usable:
        if len(t.states) > 1:
            moves[t.states[0] - 1, t.states[1] - 1] += 1

    leaving = moves.sum(axis=1)
    first_step = np.divide(moves, leaving[:, None], out=np.zeros((m, m)), where=leaving[:, None] > 0)
    for a in space.absorbing:
        first_step[a - 1] = 0.0
        first_step[a - 1, a - 1] = 1.0
    undefined = [h + 1 for h in np.flatnonzero((first > 0) & (first_step.sum(axis=1) == 0))]
    if undefined:
        logger.warning("First-step law undefined for starting states", states=undefined)
        return None
    return ChainInitialization(initial_dist=first / first.sum(), first_step=FirstOrderMatrix(values=first_step))


def _percent(count: int, total: int) -> str:
    return f"{float(round(Fraction(100 * count, total), PERCENT_DECIMALS)):.{PERCENT_DECIMALS}f}"


def two_step_summary(counts: PathCounts) -> List[TwoStepRow]:
    """
    Split every direct transition j -> l by the previous distinct state.

    Subjects are counted per path over their sequence of distinct states,
    whatever the days spent in each state, so these totals differ from
    sum_s N~_hjl(s).
    """
    totals: Counter = Counter()
    for (_, j, l), count in counts.jump_paths.items():
        totals[(j, l)] += count

    rows = []
    for (j, l), total in sorted(totals.items()):
        previous = sorted(
            ((h, c) for (h, jj, ll), c in counts.jump_paths.items() if (jj, ll) == (j, l)),
            key=lambda item: (item[0] == ADMISSION, item[0]),
        )
        for h, count in previous:
            rows.append(TwoStepRow(
                source=j,
                target=l,
                direct_total=total,
                previous=h,
                count=count,
                percent=_percent(count, total),
            ))
    return rows
