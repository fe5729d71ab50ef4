"""
Core domain types.

States are 1-indexed everywhere a state is named (StateSpace, Trajectory,
function arguments), matching S = {1..M}. Numeric arrays are plain numpy
arrays and therefore 0-indexed: tensor.values[h - 1, j - 1, k - 1] is P_hjk.
"""

from typing import FrozenSet, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..constants import (
    DIST_SUM_TOL,
    DIVINE_ABSORBING,
    DIVINE_LABELS,
    DIVINE_TRANSITIONS,
    MAX_DAY,
    ROW_SUM_TOL,
)
from ..errors import DatasetValidationError

logger = structlog.get_logger()


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class StateSpace(BaseModel):
    """
    Finite label set with the one-day adjacency graph.

    adjacency holds 1-indexed ordered pairs (h, j): a direct one-day move
    h -> j is permitted. Staying put is an edge like any other, so transient
    states normally carry their self-loop.
    """
    m: int = Field(..., ge=2)
    labels: Tuple[str, ...]
    adjacency: FrozenSet[Tuple[int, int]]
    absorbing: FrozenSet[int] = frozenset()

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_graph(self):
        if len(self.labels) != self.m:
            raise ValueError(f"expected {self.m} labels, got {len(self.labels)}")
        if len(set(self.labels)) != self.m:
            raise ValueError("state labels must be distinct")
        for h, j in self.adjacency:
            if not (1 <= h <= self.m and 1 <= j <= self.m):
                raise ValueError(f"edge ({h}, {j}) outside states 1..{self.m}")
        for a in self.absorbing:
            if not 1 <= a <= self.m:
                raise ValueError(f"absorbing state {a} outside states 1..{self.m}")
            if {e for e in self.adjacency if e[0] == a} != {(a, a)}:
                raise ValueError(f"absorbing state {a} must have exactly the edge ({a}, {a})")
        for h in range(1, self.m + 1):
            if h not in self.absorbing and not any(e[0] == h for e in self.adjacency):
                raise ValueError(f"transient state {h} has no outgoing edge")
        return self

    @classmethod
    def from_edges(
        cls,
        labels: Sequence[str],
        edges: Iterable[Tuple[int, int]],
        absorbing: Iterable[int] = (),
        self_loops: bool = True,
    ) -> "StateSpace":
        """Build a space from its moves between distinct states.

        Absorbing states always get their self-loop; transient states get one
        when self_loops is set (daily data: staying is a move).
        """
        m = len(labels)
        absorbing = frozenset(int(a) for a in absorbing)
        adjacency = {(int(h), int(j)) for h, j in edges}
        adjacency |= {(a, a) for a in absorbing}
        if self_loops:
            adjacency |= {(h, h) for h in range(1, m + 1) if h not in absorbing}
        return cls(m=m, labels=tuple(labels), adjacency=frozenset(adjacency), absorbing=absorbing)

    @classmethod
    def divine(cls) -> "StateSpace":
        """The seven-state hospital model with its 14 transitions."""
        return cls.from_edges(DIVINE_LABELS, DIVINE_TRANSITIONS, DIVINE_ABSORBING)

    def allows(self, h: int, j: int) -> bool:
        return (h, j) in self.adjacency

    def is_absorbing(self, state: int) -> bool:
        return state in self.absorbing

    def predecessors(self, j: int) -> List[int]:
        return sorted(h for h, b in self.adjacency if b == j)

    def ancestors(self, target: int) -> List[int]:
        """States from which target is reachable, target included."""
        seen = {target}
        frontier = [target]
        while frontier:
            state = frontier.pop()
            for h in self.predecessors(state):
                if h not in seen:
                    seen.add(h)
                    frontier.append(h)
        return sorted(seen)

    def transitions(self) -> List[Tuple[int, int]]:
        """Moves between distinct states, sorted."""
        return sorted((h, j) for h, j in self.adjacency if h != j)

    def label(self, state: int) -> str:
        return self.labels[state - 1]


class Trajectory(BaseModel):
    """
    One subject's dense daily sample path: states[t] is occupied on day
    start_day + t. Adjacency and absorption rules need a StateSpace and are
    checked by validate_dataset.
    """
    subject_id: str
    start_day: int = Field(1, ge=1)
    states: Tuple[int, ...]

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_last_day(self):
        if self.end_day > MAX_DAY:
            raise ValueError(f"subject {self.subject_id} observed past day {MAX_DAY}")
        return self

    @property
    def end_day(self) -> int:
        return self.start_day + len(self.states) - 1

    def state_on(self, day: int) -> Optional[int]:
        """State on an integer day, None when the subject is not observed."""
        t = day - self.start_day
        if 0 <= t < len(self.states):
            return self.states[t]
        return None


class FirstOrderMatrix(BaseModel):
    """Square matrix P_hj; every row sums to 0 or 1."""
    values: np.ndarray

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @field_validator("values", mode="before")
    @classmethod
    def coerce_values(cls, v):
        return _frozen_array(v)

    @field_validator("values")
    @classmethod
    def check_stochastic(cls, v):
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {v.shape}")
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise ValueError("matrix entries must lie in [0, 1]")
        sums = v.sum(axis=1)
        bad = ~(np.isclose(sums, 0.0, rtol=0, atol=ROW_SUM_TOL) | np.isclose(sums, 1.0, rtol=0, atol=ROW_SUM_TOL))
        if np.any(bad):
            raise ValueError(f"rows {list(np.flatnonzero(bad) + 1)} sum neither to 0 nor to 1")
        return v

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @classmethod
    def identity(cls, m: int) -> "FirstOrderMatrix":
        return cls(values=np.eye(m))


class TransitionTensor(BaseModel):
    """
    Second-order transition tensor stored as M matrices of order M:
    values[h-1] is the matrix P_(h) = (P_hjk)_{j,k}. support[h-1, j-1]
    tells whether the pair (h, j) is defined, so a legitimately zero row
    is distinguishable from a pair that was never observed.
    """
    values: np.ndarray
    support: np.ndarray
    labels: Optional[Tuple[str, ...]] = None

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @field_validator("values", mode="before")
    @classmethod
    def coerce_values(cls, v):
        return _frozen_array(v)

    @field_validator("support", mode="before")
    @classmethod
    def coerce_support(cls, v):
        return _frozen_array(v, dtype=bool)

    @model_validator(mode="after")
    def check_rows(self):
        m = self.values.shape[0]
        if self.values.shape != (m, m, m):
            raise ValueError(f"expected an (m, m, m) array, got {self.values.shape}")
        if self.support.shape != (m, m):
            raise ValueError(f"support must be ({m}, {m}), got {self.support.shape}")
        if self.labels is not None and len(self.labels) != m:
            raise ValueError(f"expected {m} labels, got {len(self.labels)}")
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise ValueError("tensor entries must lie in [0, 1]")
        sums = self.values.sum(axis=2)
        if np.any(sums[~self.support] != 0.0):
            raise ValueError("unsupported pairs must have all-zero rows")
        ok = np.isclose(sums, 0.0, rtol=0, atol=ROW_SUM_TOL) | np.isclose(sums, 1.0, rtol=0, atol=ROW_SUM_TOL)
        if not np.all(ok):
            h, j = np.argwhere(~ok)[0] + 1
            raise ValueError(f"row ({h}, {j}) sums to {sums[h - 1, j - 1]!r}, expected 0 or 1")
        return self

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def matrix(self, h: int) -> np.ndarray:
        """The matrix P_(h)."""
        return self.values[h - 1]

    def row(self, h: int, j: int) -> np.ndarray:
        return self.values[h - 1, j - 1]

    def is_supported(self, h: int, j: int) -> bool:
        return bool(self.support[h - 1, j - 1])

    def row_sums(self) -> np.ndarray:
        return self.values.sum(axis=2)

    def check_space(self, space: StateSpace) -> List[str]:
        """Problems of this tensor against a state space's absorbing rules."""
        problems = []
        if space.m != self.m:
            return [f"tensor has {self.m} states, space has {space.m}"]
        for a in sorted(space.absorbing):
            expected = np.zeros((self.m, self.m))
            expected[a - 1, a - 1] = 1.0
            if not np.array_equal(self.matrix(a), expected):
                problems.append(f"matrix of absorbing state {a} must be zero except P_{a}{a}{a} = 1")
        return problems


class ChainInitialization(BaseModel):
    """
    Law of X_1 and of the first step X_1 -> X_2. The second-order tensor
    only applies from the third day on.
    """
    initial_dist: np.ndarray
    first_step: FirstOrderMatrix

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @field_validator("initial_dist", mode="before")
    @classmethod
    def coerce_dist(cls, v):
        return _frozen_array(v)

    @model_validator(mode="after")
    def check_distribution(self):
        dist = self.initial_dist
        if dist.ndim != 1 or dist.shape[0] != self.first_step.m:
            raise ValueError("initial_dist length must match first_step size")
        if np.any(dist < 0.0) or abs(dist.sum() - 1.0) > DIST_SUM_TOL:
            raise ValueError(f"initial_dist must be a probability vector (sum={dist.sum()!r})")
        sums = self.first_step.values.sum(axis=1)
        active = dist > 0
        if np.any(np.abs(sums[active] - 1.0) > ROW_SUM_TOL):
            raise ValueError("first_step rows of possible initial states must sum to 1")
        return self

    @property
    def m(self) -> int:
        return self.initial_dist.shape[0]


class Violation(BaseModel):
    """One rule a trajectory breaks"""
    subject_id: str
    kind: Literal["illegal_step", "after_absorption", "empty"]
    position: Optional[int] = None
    detail: str

    model_config = ConfigDict(frozen=True)


class ValidationReport(BaseModel):
    """Outcome of validate_dataset"""
    n_trajectories: int
    violations: Tuple[Violation, ...] = ()
    flagged: FrozenSet[str] = frozenset()
    strict: bool = True

    model_config = ConfigDict(frozen=True)

    @property
    def ok(self) -> bool:
        return not self.violations


class LiftedChain(BaseModel):
    """First-order chain on consecutive-state pairs (X_{t-1}, X_t)."""
    matrix: FirstOrderMatrix
    initial: np.ndarray
    m: int

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    def pair_index(self, h: int, j: int) -> int:
        return (h - 1) * self.m + (j - 1)


def validate_dataset(
    dataset: Sequence[Trajectory],
    space: StateSpace,
    strict: bool = True,
) -> ValidationReport:
    """
    Check every trajectory against the state space.

    Out-of-range states and an empty dataset always raise. Other rule
    breaks are collected; strict mode raises with the full list, otherwise
    offending subjects are flagged and kept.
    """
    if len(dataset) == 0:
        raise DatasetValidationError("dataset is empty")

    violations: List[Violation] = []
    for trajectory in dataset:
        sid = trajectory.subject_id
        states = trajectory.states
        for t, state in enumerate(states):
            if not 1 <= state <= space.m:
                raise DatasetValidationError(
                    f"subject {sid}: state {state} on day {trajectory.start_day + t} outside 1..{space.m}",
                    subject_id=sid,
                )
        if not states:
            violations.append(Violation(subject_id=sid, kind="empty", detail="trajectory has no observations"))
            continue
        for t in range(len(states) - 1):
            h, j = states[t], states[t + 1]
            if space.is_absorbing(h):
                if j == h:
                    continue
                violations.append(Violation(
                    subject_id=sid,
                    kind="after_absorption",
                    position=t + 1,
                    detail=f"state {j} on day {trajectory.start_day + t + 1} after absorbing state {h}",
                ))
                break
            if not space.allows(h, j):
                violations.append(Violation(
                    subject_id=sid,
                    kind="illegal_step",
                    position=t + 1,
                    detail=f"move {space.label(h)}->{space.label(j)} on day {trajectory.start_day + t + 1} not in adjacency",
                ))

    violations.sort(key=lambda v: (v.subject_id, v.position if v.position is not None else -1, v.kind))
    flagged = frozenset(v.subject_id for v in violations)

    if violations and strict:
        logger.error("Dataset validation failed", violations=len(violations), subjects=len(flagged))
        raise DatasetValidationError(
            f"{len(violations)} violation(s) in {len(flagged)} trajectory(ies); first: "
            f"subject {violations[0].subject_id}: {violations[0].detail}",
            violations=violations,
        )
    for v in violations:
        logger.warning("Trajectory flagged", subject_id=v.subject_id, kind=v.kind, detail=v.detail)

    return ValidationReport(
        n_trajectories=len(dataset),
        violations=tuple(violations),
        flagged=flagged,
        strict=strict,
    )


def lift_to_pairs(tensor: TransitionTensor, init: ChainInitialization) -> LiftedChain:
    """
    Turn the second-order chain into a first-order chain on pairs.

    Pair (h, j) has index (h-1)*m + (j-1). L[(h,j),(j,k)] = P_hjk for
    supported pairs; every other entry is zero.
    """
    m = tensor.m
    if init.m != m:
        raise ValueError(f"initialization has {init.m} states, tensor has {m}")
    lifted = np.zeros((m, m, m, m))
    values = np.where(tensor.support[:, :, None], tensor.values, 0.0)
    for j in range(m):
        lifted[:, j, j, :] = values[:, j, :]
    nu = init.initial_dist[:, None] * init.first_step.values
    return LiftedChain(
        matrix=FirstOrderMatrix(values=lifted.reshape(m * m, m * m)),
        initial=_frozen_array(nu.reshape(m * m)),
        m=m,
    )


__all__ = [
    "StateSpace",
    "Trajectory",
    "FirstOrderMatrix",
    "TransitionTensor",
    "ChainInitialization",
    "Violation",
    "ValidationReport",
    "LiftedChain",
    "validate_dataset",
    "lift_to_pairs",
]
