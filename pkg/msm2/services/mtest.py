"""
Log-rank test of the first-order Markov assumption.

For a transition l -> m and a conditioning state j, subjects are split at
each grid time s by whether they occupy j at s. The log-rank statistic
compares the l -> m event rates of the two groups over event days t > s:

    U_s = sum over events (delta_i(s) - e_s(t))
    e_s(t) = at-risk-in-l with delta = 1 / at-risk-in-l
    V_s = sum_t d_t e_s(t) (1 - e_s(t)) (Y_l(t) - d_t) / (Y_l(t) - 1)

Daily data conventions: the state at a real time s is the state of day
floor(s); an absorbing final state persists; a subject is at risk in l for
day t when observed in l on day t-1 and observed again on day t.

p-values come from the wild bootstrap: each subject's contribution vector
is multiplied by one standard normal draw per resample, shared across all
grid points and conditioning states.
"""

import math
import time
from typing import Dict, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..constants import DEFAULT_BOOTSTRAP_RESAMPLES, DEFAULT_GRID_STEP, DEFAULT_GRID_T0, DEFAULT_GRID_T_MAX
from ..errors import ConfigurationError, DatasetValidationError, DegenerateProcessError, VacuousConditioningError
from ..models import StateSpace, Trajectory, ValidationReport
from . import rng

logger = structlog.get_logger()

Weighting = Literal["at_risk", "uniform"]
SUMMARY_KINDS = ("UM", "WM", "S")

# resamples per work unit; fixed so results never depend on the worker count
_RESAMPLE_CHUNK = 64


class TestGrid(BaseModel):
    """Equally spaced grid t0, t0 + step, ... <= t_max"""
    __test__ = False

    t0: float = DEFAULT_GRID_T0
    t_max: float = DEFAULT_GRID_T_MAX
    step: float = DEFAULT_GRID_STEP

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_bounds(self):
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        if not self.t0 < self.t_max:
            raise ValueError(f"grid needs t0 < t_max, got [{self.t0}, {self.t_max}]")
        if self.t0 < 0:
            raise ValueError("grid cannot start before day 0")
        return self

    @property
    def points(self) -> np.ndarray:
        count = int(math.floor((self.t_max - self.t0) / self.step + 1e-9)) + 1
        return self.t0 + self.step * np.arange(count)


class LogrankProcess(BaseModel):
    """
    Observed log-rank process on the grid for one (l -> m, j).

    contributions[i, g] is subject i's share of raw[g]; weights are the
    un-normalized WM weights.
    """
    transition: Tuple[int, int]
    conditioning: int
    grid: TestGrid
    raw: np.ndarray
    variance: np.ndarray
    standardized: np.ndarray
    degenerate: np.ndarray
    weights: np.ndarray
    contributions: np.ndarray
    subject_ids: Tuple[str, ...] = ()

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def check_shapes(self):
        g = self.raw.shape[0]
        for name in ("variance", "standardized", "degenerate", "weights"):
            if getattr(self, name).shape != (g,):
                raise ValueError(f"{name} must have one entry per grid point")
        if self.contributions.ndim != 2 or self.contributions.shape[1] != g:
            raise ValueError("contributions must be (subjects, grid points)")
        return self

    @property
    def usable(self) -> np.ndarray:
        return ~self.degenerate


class SummaryTriple(BaseModel):
    """UM, WM and S of one standardized process"""
    um: float
    wm: float
    s: float

    model_config = ConfigDict(frozen=True)

    def as_tuple(self) -> Tuple[float, float, float]:
        return self.um, self.wm, self.s


class ConditioningResult(BaseModel):
    """Global test of one conditioning state"""
    conditioning: int
    statistics: Optional[SummaryTriple] = None
    p_values: Optional[SummaryTriple] = None
    grid_points: int = 0
    degenerate_points: int = 0
    dropped: bool = False
    reason: Optional[str] = None

    model_config = ConfigDict(frozen=True)


class OverallResult(BaseModel):
    """Aggregation over conditioning states by mean and by max"""
    mean_statistics: SummaryTriple
    mean_p_values: SummaryTriple
    max_statistics: SummaryTriple
    max_p_values: SummaryTriple

    model_config = ConfigDict(frozen=True)


class MarkovTestReport(BaseModel):
    """Per-j and overall bootstrap p-values for one transition"""
    transition: Tuple[int, int]
    grid: TestGrid
    resamples: int = Field(..., ge=1)
    seed: int
    weighting: Weighting
    conditioning: Tuple[ConditioningResult, ...]
    overall: OverallResult

    model_config = ConfigDict(frozen=True)


class _Cohort(NamedTuple):
    """Dense day-indexed views of a dataset (0 = not observed)"""
    observed: np.ndarray
    held: np.ndarray
    subject_ids: Tuple[str, ...]


def _cohort(dataset: Sequence[Trajectory], space: StateSpace, last_day: int) -> _Cohort:
    n_days = max([last_day] + [t.end_day for t in dataset]) + 2
    observed = np.zeros((len(dataset), n_days), dtype=np.int64)
    held = np.zeros_like(observed)
    for i, trajectory in enumerate(dataset):
        if not trajectory.states:
            continue
        a, b = trajectory.start_day, trajectory.end_day + 1
        observed[i, a:b] = trajectory.states
        held[i, a:b] = trajectory.states
        if space.is_absorbing(trajectory.states[-1]):
            held[i, b:] = trajectory.states[-1]
    return _Cohort(observed=observed, held=held, subject_ids=tuple(t.subject_id for t in dataset))


def _usable(dataset: Sequence[Trajectory], report: Optional[ValidationReport]) -> List[Trajectory]:
    if len(dataset) == 0:
        raise DatasetValidationError("dataset is empty")
    flagged = report.flagged if report is not None else frozenset()
    return [t for t in dataset if t.subject_id not in flagged]


def _check_transition(space: StateSpace, l: int, m: int) -> None:
    for state in (l, m):
        if not 1 <= state <= space.m:
            raise ConfigurationError(f"state {state} outside 1..{space.m}")
    if l == m or not space.allows(l, m):
        raise ConfigurationError(f"transition {l}->{m} is not a move of the state space")


def _process(
    cohort: _Cohort,
    l: int,
    m: int,
    j: int,
    grid: TestGrid,
    complement: bool = False,
) -> LogrankProcess:
    points = grid.points
    observed, held = cohort.observed, cohort.held
    n_days = observed.shape[1]

    # at risk in l for day t, and l -> m events on day t (column t)
    at_risk = np.zeros(observed.shape, dtype=bool)
    at_risk[:, 1:] = (observed[:, :-1] == l) & (observed[:, 1:] > 0)
    events = at_risk & (observed == m)

    days = np.minimum(np.floor(points).astype(np.int64), n_days - 1)
    groups = held[:, days] == j  # (n, G)
    if not groups.any():
        raise VacuousConditioningError(f"no subject occupies state {j} at any grid point", conditioning=j)
    if complement:
        groups = ~groups

    # event days t > s for each grid point
    window = np.arange(n_days)[None, :] > points[:, None]  # (G, T)
    risk_total = at_risk.sum(axis=0).astype(float)  # (T,)
    risk_group = groups.T.astype(float) @ at_risk.astype(float)  # (G, T)
    share = np.divide(risk_group, risk_total[None, :], out=np.zeros_like(risk_group), where=risk_total[None, :] > 0)

    event_mask = events.astype(float)
    n_events = event_mask.sum(axis=0)  # (T,)
    contributions = groups * (event_mask @ window.T.astype(float)) - event_mask @ (window * share).T

    ties = np.ones_like(risk_total)
    multi = risk_total > 1
    ties[multi] = (risk_total[multi] - n_events[multi]) / (risk_total[multi] - 1)
    variance = (window * n_events[None, :] * share * (1.0 - share) * ties[None, :]).sum(axis=1)

    raw = contributions.sum(axis=0)
    degenerate = ~(variance > 0.0)
    standardized = np.full(points.shape, np.nan)
    standardized[~degenerate] = raw[~degenerate] / np.sqrt(variance[~degenerate])

    present = held[:, days] > 0
    informative = (groups & present).any(axis=0) & (~groups & present).any(axis=0)
    weights = np.where(informative, (held[:, days] == l).sum(axis=0), 0).astype(float)

    return LogrankProcess(
        transition=(l, m),
        conditioning=j,
        grid=grid,
        raw=raw,
        variance=variance,
        standardized=standardized,
        degenerate=degenerate,
        weights=weights,
        contributions=contributions,
        subject_ids=cohort.subject_ids,
    )


def logrank_process(
    dataset: Sequence[Trajectory],
    space: StateSpace,
    l: int,
    m: int,
    j: int,
    grid: TestGrid,
    report: Optional[ValidationReport] = None,
    complement: bool = False,
) -> LogrankProcess:
    """
    Standardized log-rank process of l -> m for conditioning state j.

    complement=True swaps the group indicator for its complement, every
    subject not in j at s (late entrants included), which negates the raw
    statistics exactly.
    """
    _check_transition(space, l, m)
    if not 1 <= j <= space.m:
        raise ConfigurationError(f"conditioning state {j} outside 1..{space.m}")
    usable = _usable(dataset, report)
    process = _process(_cohort(usable, space, int(grid.t_max)), l, m, j, grid, complement)
    if process.degenerate.all():
        logger.warning("Log-rank process has no usable grid point", transition=f"{l}->{m}", conditioning=j)
    return process


def _normalized_weights(process: LogrankProcess, weighting: Union[Weighting, np.ndarray]) -> np.ndarray:
    usable = process.usable
    if isinstance(weighting, str):
        if weighting == "uniform":
            raw = np.ones(usable.sum())
        elif weighting == "at_risk":
            raw = process.weights[usable]
        else:
            raise ConfigurationError(f"unknown weighting {weighting!r}")
    else:
        raw = np.asarray(weighting, dtype=float)[usable]
    total = raw.sum()
    if not total > 0:
        logger.debug("WM weights vanish on usable grid points, using uniform weights", conditioning=process.conditioning)
        raw = np.ones(usable.sum())
        total = raw.sum()
    return raw / total


def _summaries(absolute: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """(..., G) absolute standardized values -> (..., 3) UM, WM, S"""
    return np.stack([absolute.mean(axis=-1), absolute @ weights, absolute.max(axis=-1)], axis=-1)


def summarize_process(process: LogrankProcess, weight: Union[Weighting, np.ndarray] = "at_risk") -> SummaryTriple:
    """
    UM = mean |U_s|, WM = weighted mean |U_s|, S = max |U_s| over the
    non-degenerate grid points.
    """
    if not process.usable.any():
        raise DegenerateProcessError(
            f"all grid points degenerate for {process.transition[0]}->{process.transition[1]}, j={process.conditioning}"
        )
    absolute = np.abs(process.standardized[process.usable])
    um, wm, s = _summaries(absolute, _normalized_weights(process, weight))
    return SummaryTriple(um=float(um), wm=float(wm), s=float(s))


def bootstrap_p_value(observed: float, resampled: np.ndarray) -> float:
    """(1 + #{resampled >= observed}) / (B + 1)"""
    resampled = np.asarray(resampled)
    return (1 + int(np.count_nonzero(resampled >= observed))) / (resampled.size + 1)


class _Prepared(NamedTuple):
    conditioning: int
    contributions: np.ndarray
    scale: np.ndarray
    weights: np.ndarray


def _exceedances(
    prepared: List[_Prepared],
    observed: np.ndarray,
    overall_observed: np.ndarray,
    seed: int,
    n_subjects: int,
    resamples: range,
) -> Tuple[np.ndarray, np.ndarray]:
    """Count resamples at least as extreme as observed for one block of streams."""
    multipliers = np.stack([rng.stream(seed, b).standard_normal(n_subjects) for b in resamples])
    per_j = np.empty((len(resamples), len(prepared), 3))
    for k, item in enumerate(prepared):
        resampled = np.einsum("bi,ig->bg", multipliers, item.contributions) / item.scale
        per_j[:, k, :] = _summaries(np.abs(resampled), item.weights)
    hits = (per_j >= observed[None, :, :]).sum(axis=0)
    aggregated = np.stack([per_j.mean(axis=1), per_j.max(axis=1)], axis=1)  # (b, 2, 3)
    overall_hits = (aggregated >= overall_observed[None, :, :]).sum(axis=0)
    return hits, overall_hits


def _triple(values) -> SummaryTriple:
    return SummaryTriple(um=float(values[0]), wm=float(values[1]), s=float(values[2]))


def wild_bootstrap_test(
    dataset: Sequence[Trajectory],
    space: StateSpace,
    l: int,
    m: int,
    grid: Optional[TestGrid] = None,
    conditioning_states: Optional[Sequence[int]] = None,
    B: int = DEFAULT_BOOTSTRAP_RESAMPLES,
    seed: int = 0,
    weighting: Weighting = "at_risk",
    report: Optional[ValidationReport] = None,
    n_jobs: int = 1,
) -> MarkovTestReport:
    """
    Global (per j) and overall Markov tests of l -> m with wild-bootstrap
    p-values. Resample b always uses stream (seed, b), so the report is the
    same for any n_jobs.
    """
    if B < 1:
        raise ConfigurationError(f"B must be at least 1, got {B}")
    if seed < 0:
        raise ConfigurationError("seed must be non-negative")
    _check_transition(space, l, m)
    grid = grid or TestGrid()
    if conditioning_states is None:
        conditioning_states = [j for j in space.ancestors(l) if not space.is_absorbing(j)]

    start_time = time.time()
    usable = _usable(dataset, report)
    cohort = _cohort(usable, space, int(grid.t_max))
    n_points = grid.points.size

    results: Dict[int, ConditioningResult] = {}
    prepared: List[_Prepared] = []
    observed_rows = []
    for j in conditioning_states:
        try:
            process = _process(cohort, l, m, j, grid)
        except VacuousConditioningError as e:
            logger.warning("Dropping vacuous conditioning state", transition=f"{l}->{m}", conditioning=j, error=e.message)
            results[j] = ConditioningResult(conditioning=j, grid_points=n_points, dropped=True, reason="vacuous")
            continue
        if not process.usable.any():
            logger.warning("Dropping degenerate conditioning state", transition=f"{l}->{m}", conditioning=j)
            results[j] = ConditioningResult(
                conditioning=j, grid_points=n_points, degenerate_points=n_points, dropped=True, reason="degenerate"
            )
            continue
        usable_points = process.usable
        weights = _normalized_weights(process, weighting)
        observed = _summaries(np.abs(process.standardized[usable_points]), weights)
        prepared.append(_Prepared(
            conditioning=j,
            contributions=np.ascontiguousarray(process.contributions[:, usable_points]),
            scale=np.sqrt(process.variance[usable_points]),
            weights=weights,
        ))
        observed_rows.append(observed)
        results[j] = ConditioningResult(
            conditioning=j,
            statistics=_triple(observed),
            grid_points=n_points,
            degenerate_points=int(process.degenerate.sum()),
        )
        if process.degenerate.any():
            logger.info(
                "Excluded degenerate grid points",
                transition=f"{l}->{m}",
                conditioning=j,
                excluded=int(process.degenerate.sum()),
            )

    if not prepared:
        raise DegenerateProcessError(f"no conditioning state yields a testable process for {l}->{m}")

    observed = np.array(observed_rows)  # (J, 3)
    overall_observed = np.stack([observed.mean(axis=0), observed.max(axis=0)])  # (2, 3)

    blocks = [range(a, min(a + _RESAMPLE_CHUNK, B)) for a in range(0, B, _RESAMPLE_CHUNK)]
    if n_jobs == 1:
        parts = [_exceedances(prepared, observed, overall_observed, seed, len(usable), block) for block in blocks]
    else:
        parts = Parallel(n_jobs=n_jobs)(
            delayed(_exceedances)(prepared, observed, overall_observed, seed, len(usable), block) for block in blocks
        )
    hits = sum(p[0] for p in parts)
    overall_hits = sum(p[1] for p in parts)

    p_values = (1 + hits) / (B + 1)
    overall_p = (1 + overall_hits) / (B + 1)
    for k, item in enumerate(prepared):
        results[item.conditioning] = results[item.conditioning].model_copy(update={"p_values": _triple(p_values[k])})

    report_ = MarkovTestReport(
        transition=(l, m),
        grid=grid,
        resamples=B,
        seed=seed,
        weighting=weighting,
        conditioning=tuple(results[j] for j in conditioning_states),
        overall=OverallResult(
            mean_statistics=_triple(overall_observed[0]),
            mean_p_values=_triple(overall_p[0]),
            max_statistics=_triple(overall_observed[1]),
            max_p_values=_triple(overall_p[1]),
        ),
    )
    logger.info(
        "Markov test finished",
        transition=f"{space.label(l)}->{space.label(m)}",
        conditioning=[item.conditioning for item in prepared],
        resamples=B,
        overall_p_um=float(overall_p[0][0]),
        elapsed_seconds=round(time.time() - start_time, 2),
    )
    return report_
