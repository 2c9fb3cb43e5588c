"""Scenario files: knob space, scripted phases, noise. Plus noiseless and noisy evaluation."""

import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from simulator.surfaces import SurfaceSpec
from tuning.knobspace import KnobSpace, cartesian_product
from utils.errors import ConfigurationError
from utils.models import Bound, ConstraintSpec, Goal, ObjectiveSpec, OptimizationSpec

logger = logging.getLogger(__name__)

BUNDLED_DIR = Path(__file__).parent / "scenarios"


class PhaseSpec(BaseModel):
    """One stationary span of the workload."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    length_intervals: int = Field(ge=1)
    objective: SurfaceSpec
    constraints: List[SurfaceSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _roles(self) -> "PhaseSpec":
        if self.objective.direction not in (None, Goal.maximize.value, Goal.minimize.value):
            raise ValueError(f"objective direction must be maximize or minimize, got {self.objective.direction!r}")
        if self.objective.set_point is not None:
            raise ValueError("objective surface cannot carry a set_point")
        for cs in self.constraints:
            if cs.set_point is None or not math.isfinite(cs.set_point):
                raise ValueError(f"constraint '{cs.metric}' needs a finite set_point")
            if cs.direction not in (None, Bound.below.value, Bound.above.value):
                raise ValueError(f"constraint direction must be below or above, got {cs.direction!r}")
        return self

    def optimization_spec(self) -> OptimizationSpec:
        return OptimizationSpec(
            objective=ObjectiveSpec(metric=self.objective.metric, direction=self.objective.direction or Goal.maximize),
            constraints=[
                ConstraintSpec(metric=cs.metric, set_point=cs.set_point, direction=cs.direction or Bound.below)
                for cs in self.constraints
            ],
        )


class Scenario(BaseModel):
    """A synthetic workload. Immutable once loaded."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    space: KnobSpace
    phases: List[PhaseSpec] = Field(min_length=1)
    noise_cv: Union[float, Dict[str, float]] = 0.03
    interval_seconds: float = Field(default=3.0, gt=0)
    seed: int = 0

    @field_validator("space", mode="before")
    @classmethod
    def _joint_space(cls, v):
        if isinstance(v, dict) and set(v) == {"application", "device"}:
            return cartesian_product(KnobSpace.model_validate(v["application"]), KnobSpace.model_validate(v["device"]))
        return v

    @field_validator("noise_cv")
    @classmethod
    def _non_negative(cls, v):
        values = v.values() if isinstance(v, dict) else [v]
        if any(x < 0 or not math.isfinite(x) for x in values):
            raise ValueError("noise_cv must be finite and >= 0")
        return v

    @model_validator(mode="after")
    def _consistent(self) -> "Scenario":
        for phase in self.phases:
            for surface in [phase.objective, *phase.constraints]:
                surface.validate_for(self.space)
        first = self.phases[0].optimization_spec()
        for i, phase in enumerate(self.phases[1:], start=1):
            if phase.optimization_spec() != first:
                raise ValueError(f"phase {i} disagrees with phase 0 on metrics, directions or set points")
        return self

    def optimization_spec(self) -> OptimizationSpec:
        return self.phases[0].optimization_spec()

    @property
    def total_intervals(self) -> int:
        return sum(p.length_intervals for p in self.phases)

    def phase_bounds(self) -> List[Tuple[int, int]]:
        """[start, end) interval range of every phase"""
        bounds, start = [], 0
        for p in self.phases:
            bounds.append((start, start + p.length_intervals))
            start += p.length_intervals
        return bounds

    def phase_at(self, interval: int) -> int:
        for i, (start, end) in enumerate(self.phase_bounds()):
            if start <= interval < end:
                return i
        raise ValueError(f"interval {interval} outside 0..{self.total_intervals - 1}")

    def cv_for(self, metric: str) -> float:
        if isinstance(self.noise_cv, dict):
            return self.noise_cv.get(metric, 0.0)
        return self.noise_cv

    def _phase(self, phase_idx: int) -> PhaseSpec:
        if not 0 <= phase_idx < len(self.phases):
            raise ValueError(f"phase {phase_idx} outside 0..{len(self.phases) - 1}")
        return self.phases[phase_idx]


def evaluate_grid(scenario: Scenario, phase_idx: int, indices: np.ndarray = None) -> Tuple[np.ndarray, np.ndarray]:
    """Noiseless metrics for many settings: o of shape (n,), c of shape (n, n_constraints).

    Without `indices` the whole space is evaluated in lexicographic order.
    """
    phase = scenario._phase(phase_idx)
    space = scenario.space
    rows = space.grid() if indices is None else np.atleast_2d(np.asarray(indices, dtype=np.int64))
    o = phase.objective.evaluate(space, rows)
    c = np.stack([cs.evaluate(space, rows) for cs in phase.constraints], axis=1) if phase.constraints \
        else np.zeros((len(rows), 0))
    return o, c


def evaluate_true(scenario: Scenario, phase_idx: int, knob: Sequence[int]) -> Tuple[float, List[float]]:
    knob = scenario.space.check(knob)
    o, c = evaluate_grid(scenario, phase_idx, [knob])
    return float(o[0]), [float(v) for v in c[0]]


def _lognormal_factor(cv: float, rng: np.random.Generator) -> float:
    if cv == 0:
        return 1.0
    sigma = math.sqrt(math.log1p(cv * cv))
    return math.exp(sigma * rng.standard_normal())


def measure(
    scenario: Scenario, phase_idx: int, knob: Sequence[int], rng: np.random.Generator
) -> Tuple[float, List[float]]:
    """True metrics times independent lognormal noise (median 1, CV noise_cv) per metric."""
    o, c = evaluate_true(scenario, phase_idx, knob)
    phase = scenario.phases[phase_idx]
    o *= _lognormal_factor(scenario.cv_for(phase.objective.metric), rng)
    c = [v * _lognormal_factor(scenario.cv_for(cs.metric), rng) for v, cs in zip(c, phase.constraints)]
    return o, c


def interval_rng(scenario: Scenario, session_seed: int, interval: int) -> np.random.Generator:
    """RNG stream for one measurement interval of one session."""
    return np.random.default_rng([scenario.seed, session_seed, interval])


# ---------------------------------------------------------------- files

def bundled_scenarios() -> List[str]:
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.json"))


def resolve_scenario_path(name_or_path: Union[str, Path]) -> Path:
    """A path to an existing file, or the name of a bundled scenario."""
    path = Path(name_or_path)
    if path.is_file():
        return path
    bundled = BUNDLED_DIR / f"{name_or_path}.json"
    if bundled.is_file():
        return bundled
    raise ConfigurationError(f"no scenario file or bundled scenario named '{name_or_path}' "
                             f"(bundled: {', '.join(bundled_scenarios())})")


def _line_of(text: str, loc: Sequence) -> int:
    """Best-effort line number for a validation error location."""
    pos = 0
    for part in loc:
        if isinstance(part, str):
            found = text.find(f'"{part}"', pos)
            if found >= 0:
                pos = found
    return text.count("\n", 0, pos) + 1


def load_scenario(name_or_path: Union[str, Path]) -> Scenario:
    path = resolve_scenario_path(name_or_path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as e:
        problems = []
        for err in e.errors():
            where = ".".join(str(p) for p in err["loc"]) or "<root>"
            problems.append(f"{path}:{_line_of(text, err['loc'])}: {where}: {err['msg']}")
        raise ConfigurationError("invalid scenario\n" + "\n".join(problems)) from None
    logger.debug("loaded scenario %s: %d settings, %d phases", path, scenario.space.size, len(scenario.phases))
    return scenario


def save_scenario(scenario: Scenario, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = scenario.model_dump(mode="json", exclude_none=True)
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    return path
