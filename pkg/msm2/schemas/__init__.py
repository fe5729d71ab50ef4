from pydantic import BaseModel, Field, field_validator, model_validator, ConfigDict
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np

from ..models import ChainInitialization, FirstOrderMatrix, StateSpace, TransitionTensor


class SpaceDocument(BaseModel):
    """
    State space file: labels in state order, moves between distinct
    states (1-indexed) and the absorbing states
    """
    labels: List[str] = Field(..., min_length=2)
    edges: List[Tuple[int, int]]
    absorbing: List[int] = []
    self_loops: bool = True

    model_config = ConfigDict(extra="forbid")

    def to_space(self) -> StateSpace:
        return StateSpace.from_edges(self.labels, self.edges, self.absorbing, self.self_loops)

    @classmethod
    def from_space(cls, space: StateSpace) -> "SpaceDocument":
        return cls(labels=list(space.labels), edges=space.transitions(), absorbing=sorted(space.absorbing))


class InitDocument(BaseModel):
    """Law of the first day and of the first move"""
    dist: List[float]
    first_step: List[List[float]]

    model_config = ConfigDict(extra="forbid")


class TensorDocument(BaseModel):
    """
    Tensor file: matrices[h-1][j-1][k-1] = P(next = k | previous = h, current = j)
    """
    m: int = Field(..., ge=2)
    labels: List[str] = []
    matrices: List[List[List[float]]]
    support: List[List[bool]]
    init: Optional[InitDocument] = None

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def check_dimensions(self):
        m = self.m
        if len(self.matrices) != m or any(len(mat) != m or any(len(row) != m for row in mat) for mat in self.matrices):
            raise ValueError(f"matrices must be {m} arrays of {m}x{m}")
        if len(self.support) != m or any(len(row) != m for row in self.support):
            raise ValueError(f"support must be {m}x{m}")
        if self.labels and len(self.labels) != m:
            raise ValueError(f"expected {m} labels, got {len(self.labels)}")
        if self.init is not None and (len(self.init.dist) != m or len(self.init.first_step) != m):
            raise ValueError(f"init must describe {m} states")
        return self

    def to_tensor(self) -> TransitionTensor:
        return TransitionTensor(
            values=np.array(self.matrices, dtype=float),
            support=np.array(self.support, dtype=bool),
            labels=tuple(self.labels) if self.labels else None,
        )

    def to_init(self) -> Optional[ChainInitialization]:
        if self.init is None:
            return None
        return ChainInitialization(
            initial_dist=np.array(self.init.dist, dtype=float),
            first_step=FirstOrderMatrix(values=np.array(self.init.first_step, dtype=float)),
        )

    @classmethod
    def from_tensor(cls, tensor: TransitionTensor, init: Optional[ChainInitialization] = None) -> "TensorDocument":
        init_doc = None
        if init is not None:
            init_doc = InitDocument(
                dist=[float(x) for x in init.initial_dist],
                first_step=init.first_step.values.tolist(),
            )
        return cls(
            m=tensor.m,
            labels=list(tensor.labels or ()),
            matrices=tensor.values.tolist(),
            support=tensor.support.tolist(),
            init=init_doc,
        )


class SimulationConfigFile(BaseModel):
    """
    Configuration file of the simulate command. The tensor file must carry
    an init block; relative paths are resolved against the config file.
    """
    space: Union[Literal["divine"], SpaceDocument, str]
    tensor: str = Field(..., description="Path to a tensor JSON with an init block")
    n_subjects: int = Field(..., ge=1)
    t_max: int = Field(..., ge=2)
    seed: int = Field(0, ge=0, lt=2**64)
    order: Literal["first", "second"] = "second"

    model_config = ConfigDict(extra="forbid")


class RunManifest(BaseModel):
    """
    Everything needed to reproduce one output file. No timestamps, so a
    rerun writes the same bytes.
    """
    command: str
    tool_version: str
    inputs: Dict[str, str] = {}
    outputs: List[str] = []
    configuration: Dict[str, Any] = {}
    dataset_fingerprint: Optional[str] = None
    generator: Optional[Dict[str, str]] = None


class MarkovTestRow(BaseModel):
    """One line of the Markov test report"""
    transition: str
    conditioning: str
    aggregate: Literal["global", "mean", "max"]
    UM: Optional[float] = None
    WM: Optional[float] = None
    S: Optional[float] = None
    p_UM: Optional[float] = None
    p_WM: Optional[float] = None
    p_S: Optional[float] = None
    grid_points: int = 0
    degenerate_points: int = 0
    note: str = ""

    @field_validator("p_UM", "p_WM", "p_S")
    @classmethod
    def validate_p_value(cls, v):
        if v is not None and not 0.0 < v <= 1.0:
            raise ValueError("p-values lie in (0, 1]")
        return v


class TwoStepLine(BaseModel):
    """One line of the two-step path summary"""
    transition: str
    total: int
    path: str
    count: int
    percent: str
