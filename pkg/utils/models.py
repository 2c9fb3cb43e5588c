import math
from enum import Enum
from typing import List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# a knob setting is an index vector into the knob space grid
KnobSetting = Tuple[int, ...]


class Goal(str, Enum):
    """Direction of the objective metric."""
    maximize = "maximize"
    minimize = "minimize"


class Bound(str, Enum):
    """Which side of the set point is feasible."""
    below = "below"
    above = "above"


class ObjectiveSpec(BaseModel):
    """Objective metric f_o and its direction."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    metric: str = Field(description="Metric name, e.g. 'fps'")
    direction: Goal = Field(default=Goal.maximize)


class ConstraintSpec(BaseModel):
    """Constraint metric f_c with set point epsilon."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    metric: str = Field(description="Metric name, e.g. 'power'")
    set_point: float = Field(description="Set point in metric units")
    direction: Bound = Field(default=Bound.below)

    @field_validator("set_point")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("set_point must be finite")
        return v

    def satisfied(self, value: float) -> bool:
        """strictly on the feasible side of the set point"""
        if self.direction == Bound.below:
            return value < self.set_point
        return value > self.set_point

    def violation(self, value: float) -> float:
        """positive excess past the set point, normalized by |set_point|"""
        scale = max(abs(self.set_point), 1e-9)
        if self.direction == Bound.below:
            return max(value - self.set_point, 0.0) / scale
        return max(self.set_point - value, 0.0) / scale


class OptimizationSpec(BaseModel):
    """User-specified constrained optimization problem."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    objective: ObjectiveSpec
    constraints: List[ConstraintSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _distinct_metrics(self) -> "OptimizationSpec":
        names = [self.objective.metric] + [c.metric for c in self.constraints]
        if len(set(names)) != len(names):
            raise ValueError(f"metric names must be distinct, got {names}")
        return self

    @property
    def maximize(self) -> bool:
        return self.objective.direction == Goal.maximize

    def is_feasible(self, c: Sequence[float]) -> bool:
        return all(spec.satisfied(v) for spec, v in zip(self.constraints, c))

    def violation(self, c: Sequence[float]) -> float:
        """total normalized violation across constraints (0 when feasible)"""
        return sum(spec.violation(v) for spec, v in zip(self.constraints, c))

    def better(self, a: float, b: float) -> bool:
        """True if objective value a strictly beats b"""
        return a > b if self.maximize else a < b


class Measurement(BaseModel):
    """One evaluated sample: knob, objective o, constraint values c."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    knob: KnobSetting
    o: float
    c: List[float] = Field(default_factory=list)
    round: int = Field(default=0, ge=0)

    @field_validator("o")
    @classmethod
    def _finite_o(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("objective must be finite")
        return v

    @field_validator("c")
    @classmethod
    def _finite_c(cls, v: List[float]) -> List[float]:
        if not all(math.isfinite(x) for x in v):
            raise ValueError("constraint values must be finite")
        return v


class EventKind(str, Enum):
    phase_started = "PhaseStarted"
    sample_requested = "SampleRequested"
    sample_measured = "SampleMeasured"
    knob_chosen = "KnobChosen"
    monitor_tick = "MonitorTick"
    new_phase_detected = "NewPhaseDetected"
    finished = "Finished"


class ControllerEvent(BaseModel):
    """One controller transition, serialized as a single JSON line."""
    model_config = ConfigDict(frozen=True)

    kind: EventKind
    interval_index: int
    session: str = ""
    phase: int = 0
    knob: Optional[KnobSetting] = None
    measurement: Optional[Measurement] = None
    stage: Optional[str] = None
    o_ref: Optional[float] = None
    c_ref: Optional[List[float]] = None
    infeasible: bool = False
    truncated: bool = False
    reason: Optional[str] = None
