"""
Cohort simulation from a homogeneous second-order chain, or from the
first-order chain of the initialization for null calibration.
"""

import time
from typing import Any, Dict, List, Literal, Optional

import numpy as np
import structlog
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .. import __version__
from ..constants import MAX_DAY
from ..errors import ConfigurationError, NoSupportError
from ..models import ChainInitialization, StateSpace, TransitionTensor, Trajectory
from . import rng

logger = structlog.get_logger()


class SimulationConfig(BaseModel):
    space: StateSpace
    tensor: Optional[TransitionTensor] = None
    init: ChainInitialization
    n_subjects: int = Field(..., ge=1)
    t_max: int = Field(..., ge=2, le=MAX_DAY)
    seed: int = Field(0, ge=0, lt=2**64)
    order: Literal["first", "second"] = "second"

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def check_chain(self):
        if self.init.m != self.space.m:
            raise ValueError(f"initialization has {self.init.m} states, space has {self.space.m}")
        if self.order == "first":
            return self
        if self.tensor is None:
            raise ValueError("second-order simulation needs a tensor")
        if self.tensor.m != self.space.m:
            raise ValueError(f"tensor has {self.tensor.m} states, space has {self.space.m}")
        missing = unsupported_reachable_pairs(self.tensor, self.init, self.space)
        if missing:
            h, j = missing[0]
            raise ValueError(f"pair ({h}, {j}) is reachable from the initialization but not supported")
        return self


def unsupported_reachable_pairs(tensor: TransitionTensor, init: ChainInitialization, space: StateSpace):
    """Pairs (h, j), j transient, reachable from init that the tensor leaves undefined."""
    start = init.initial_dist[:, None] * init.first_step.values
    frontier = [(h + 1, j + 1) for h, j in zip(*np.nonzero(start > 0))]
    seen = set(frontier)
    missing = []
    while frontier:
        h, j = frontier.pop()
        if space.is_absorbing(j):
            continue
        if not tensor.is_supported(h, j):
            missing.append((h, j))
            continue
        for k in np.flatnonzero(tensor.row(h, j) > 0):
            pair = (j, int(k) + 1)
            if pair not in seen:
                seen.add(pair)
                frontier.append(pair)
    return sorted(missing)


def _draw(row: np.ndarray, generator: np.random.Generator) -> int:
    """Inverse-CDF draw of a 1-indexed state from a probability row."""
    cdf = np.cumsum(row)
    index = int(np.searchsorted(cdf, generator.random() * cdf[-1], side="right"))
    # u * total can land on the final cumulative value; fall back to the last positive cell
    return min(index, int(np.flatnonzero(row > 0)[-1])) + 1


def sample_trajectory(config: SimulationConfig, rng_stream: np.random.Generator, subject_id: str = "1") -> Trajectory:
    """Run the chain from day 1 until absorption or t_max days."""
    space, init = config.space, config.init
    states = [_draw(init.initial_dist, rng_stream)]
    while len(states) < config.t_max and not space.is_absorbing(states[-1]):
        if len(states) == 1 or config.order == "first":
            row = init.first_step.values[states[-1] - 1]
            if row.sum() <= 0:
                raise NoSupportError(f"first-step row {states[-1]} is empty", state=states[-1])
        else:
            h, j = states[-2], states[-1]
            if not config.tensor.is_supported(h, j):
                raise NoSupportError(f"simulation reached unsupported pair ({h}, {j})", h=h, j=j, subject_id=subject_id)
            row = config.tensor.row(h, j)
        states.append(_draw(row, rng_stream))
    return Trajectory(subject_id=subject_id, start_day=1, states=tuple(states))


def subject_id(index: int, n_subjects: int) -> str:
    """Zero-padded ids so lexicographic order is subject order."""
    return str(index + 1).zfill(len(str(n_subjects)))


def _simulate_chunk(config: SimulationConfig, first: int, last: int) -> List[Trajectory]:
    return [
        sample_trajectory(config, rng.stream(config.seed, k), subject_id(k, config.n_subjects))
        for k in range(first, last)
    ]


def simulate_cohort(config: SimulationConfig, n_jobs: int = 1) -> List[Trajectory]:
    """
    n_subjects trajectories; subject k uses stream (seed, k) only, so the
    cohort is the same for any n_jobs.
    """
    if n_jobs == 0:
        raise ConfigurationError("n_jobs cannot be 0")
    start_time = time.time()
    n = config.n_subjects
    if n_jobs == 1:
        cohort = _simulate_chunk(config, 0, n)
    else:
        size = max(1, -(-n // (abs(n_jobs) * 4)))
        chunks = Parallel(n_jobs=n_jobs)(
            delayed(_simulate_chunk)(config, a, min(a + size, n)) for a in range(0, n, size)
        )
        cohort = [t for chunk in chunks for t in chunk]

    logger.info(
        "Simulated cohort",
        n_subjects=n,
        order=config.order,
        seed=config.seed,
        t_max=config.t_max,
        absorbed=sum(config.space.is_absorbing(t.states[-1]) for t in cohort),
        elapsed_seconds=round(time.time() - start_time, 2),
    )
    return cohort


def cohort_metadata(config: SimulationConfig) -> Dict[str, Any]:
    return {
        "tool_version": __version__,
        "n_subjects": config.n_subjects,
        "t_max": config.t_max,
        "seed": config.seed,
        "order": config.order,
        "labels": list(config.space.labels),
        **rng.generator_identity(),
    }
