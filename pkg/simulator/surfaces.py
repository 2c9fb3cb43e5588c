"""Synthetic response surfaces standing in for real application/device behavior.

Every family evaluates a whole batch of knob index rows at once, so the
same code serves single measurements and exhaustive oracle scans.
"""

from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from tuning.knobspace import KnobSpace
from utils.errors import ConfigurationError


class _Surface(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    metric: str = Field(min_length=1)
    # objective: maximize|minimize, constraint: below|above
    direction: Optional[str] = None
    # constraints only
    set_point: Optional[float] = None

    def validate_for(self, space: KnobSpace) -> None:
        """raise ConfigurationError if the surface does not fit the space"""

    def evaluate(self, space: KnobSpace, indices: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _knob_values(space: KnobSpace, indices: np.ndarray, name: str) -> np.ndarray:
    j = space.dimension(name)
    return np.asarray(space.dimensions[j].values, dtype=float)[indices[:, j]]


def _normalized_frequency(space: KnobSpace, indices: np.ndarray, name: Optional[str]) -> np.ndarray:
    if name is None:
        return np.ones(len(indices))
    top = space.dimensions[space.dimension(name)].values[-1]
    return _knob_values(space, indices, name) / top


class Cluster(BaseModel):
    """A group of identical cores: a core-count knob plus an optional frequency knob."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    cores: str
    frequency: Optional[str] = None
    weight: float = Field(default=1.0, gt=0)


class ParallelScaling(_Surface):
    """Throughput W / (t_s + t_p / (p*f) + alpha*p): interior optimum once alpha > 0."""
    family: Literal["ParallelScaling"] = "ParallelScaling"
    work: float = Field(gt=0)
    serial_time: float = Field(default=0.0, ge=0)
    parallel_time: float = Field(gt=0)
    overhead: float = Field(default=0.0, ge=0)
    clusters: List[Cluster] = Field(min_length=1)
    # application knob scaling the work done per interval, e.g. batch size
    work_knob: Optional[str] = None
    work_exponent: float = 0.0

    def validate_for(self, space: KnobSpace) -> None:
        for cl in self.clusters:
            space.dimension(cl.cores)
            if cl.frequency is not None:
                space.dimension(cl.frequency)
        if self.work_knob is not None:
            space.dimension(self.work_knob)

    def evaluate(self, space: KnobSpace, indices: np.ndarray) -> np.ndarray:
        compute = np.zeros(len(indices))
        cores = np.zeros(len(indices))
        for cl in self.clusters:
            n = _knob_values(space, indices, cl.cores)
            compute += cl.weight * n * _normalized_frequency(space, indices, cl.frequency)
            cores += cl.weight * n
        work = np.full(len(indices), self.work)
        if self.work_knob is not None:
            work = work * _knob_values(space, indices, self.work_knob) ** self.work_exponent
        active = compute > 0
        denom = self.serial_time + self.parallel_time / np.where(active, compute, 1.0) + self.overhead * cores
        return np.where(active, work / denom, 0.0)


class Bump(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    amplitude: float
    center: List[float]
    width: float = Field(gt=0)


class BumpMix(_Surface):
    """base + sum of Gaussian bumps over unit-cube knob coordinates (multi-modal)."""
    family: Literal["BumpMix"] = "BumpMix"
    base: float = 0.0
    bumps: List[Bump] = Field(min_length=1)

    def validate_for(self, space: KnobSpace) -> None:
        for b in self.bumps:
            if len(b.center) != space.ndim:
                raise ConfigurationError(f"bump center has {len(b.center)} coords, space has {space.ndim} dims")

    def evaluate(self, space: KnobSpace, indices: np.ndarray) -> np.ndarray:
        scale = np.array([max(c - 1, 1) for c in space.counts], dtype=float)
        x = indices / scale
        out = np.full(len(indices), self.base, dtype=float)
        for b in self.bumps:
            d2 = np.sum((x - np.asarray(b.center)) ** 2, axis=1)
            out += b.amplitude * np.exp(-d2 / (2.0 * b.width ** 2))
        return out


class PowerCluster(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    cores: str
    frequency: Optional[str] = None
    beta: float = Field(ge=0)


class PowerModel(_Surface):
    """P_static + sum beta*f^3*active_cores + gamma*total_active_cores."""
    family: Literal["PowerModel"] = "PowerModel"
    static: float = Field(default=0.0, ge=0)
    clusters: List[PowerCluster] = Field(min_length=1)
    gamma: float = Field(default=0.0, ge=0)

    def validate_for(self, space: KnobSpace) -> None:
        for cl in self.clusters:
            space.dimension(cl.cores)
            if cl.frequency is not None:
                space.dimension(cl.frequency)

    def evaluate(self, space: KnobSpace, indices: np.ndarray) -> np.ndarray:
        out = np.full(len(indices), self.static, dtype=float)
        for cl in self.clusters:
            n = _knob_values(space, indices, cl.cores)
            f = _normalized_frequency(space, indices, cl.frequency)
            out += cl.beta * f ** 3 * n + self.gamma * n
        return out


class Tabulated(_Surface):
    """Explicit value per setting, in lexicographic (row-major) setting order."""
    family: Literal["Tabulated"] = "Tabulated"
    values: List[float] = Field(min_length=1)

    def validate_for(self, space: KnobSpace) -> None:
        if len(self.values) != space.size:
            raise ConfigurationError(f"table has {len(self.values)} entries, space has {space.size} settings")

    def evaluate(self, space: KnobSpace, indices: np.ndarray) -> np.ndarray:
        flat = np.ravel_multi_index(tuple(indices.T), space.counts)
        return np.asarray(self.values, dtype=float)[flat]


SurfaceSpec = Annotated[
    Union[ParallelScaling, BumpMix, PowerModel, Tabulated],
    Field(discriminator="family"),
]
