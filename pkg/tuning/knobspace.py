"""Discrete knob spaces: grids of named knob dimensions searched by index."""

import math
from functools import lru_cache
from typing import Iterator, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils.errors import ConfigurationError
from utils.models import KnobSetting

# every setting gets a row in the index grid and in each acquisition scan
MAX_SPACE_SIZE = 1_000_000


class KnobDimension(BaseModel):
    """One knob: a name plus its ordered discrete levels (core counts, MHz steps, ...)."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(min_length=1)
    values: List[float] = Field(min_length=1)

    @field_validator("values")
    @classmethod
    def _strictly_increasing(cls, v: List[float]) -> List[float]:
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("values must be strictly increasing with no duplicates")
        return v

    @property
    def count(self) -> int:
        return len(self.values)


class KnobSpace(BaseModel):
    """Cartesian grid of knob dimensions with a DEFAULT setting."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    dimensions: List[KnobDimension] = Field(min_length=1)
    default: KnobSetting

    @model_validator(mode="after")
    def _check(self) -> "KnobSpace":
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate dimension names in {names}")
        if self.size > MAX_SPACE_SIZE:
            raise ValueError(f"space has {self.size} settings, at most {MAX_SPACE_SIZE} are supported")
        if not self.contains(self.default):
            raise ValueError(f"default {self.default} is not a valid setting")
        return self

    @property
    def default_setting(self) -> KnobSetting:
        return tuple(self.default)

    @property
    def names(self) -> List[str]:
        return [d.name for d in self.dimensions]

    @property
    def counts(self) -> Tuple[int, ...]:
        return tuple(d.count for d in self.dimensions)

    @property
    def ndim(self) -> int:
        return len(self.dimensions)

    @property
    def size(self) -> int:
        return math.prod(self.counts)

    def contains(self, k: Sequence[int]) -> bool:
        if len(k) != len(self.dimensions):
            return False
        return all(0 <= int(i) < d.count for i, d in zip(k, self.dimensions))

    def check(self, k: Sequence[int]) -> KnobSetting:
        """return k as a KnobSetting or raise if it is not in the grid"""
        if not self.contains(k):
            raise ValueError(f"knob {tuple(k)} is not valid in space {self.counts}")
        return tuple(int(i) for i in k)

    def grid(self) -> np.ndarray:
        """all settings as an (size, ndim) index array in lexicographic order"""
        return _index_grid(self.counts)

    def unit_grid(self) -> np.ndarray:
        """all settings mapped into the unit cube, same row order as grid()"""
        return _unit_grid(self.counts)

    def flat_index(self, k: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(self.check(k)), self.counts))

    def setting_at(self, flat: int) -> KnobSetting:
        return tuple(int(i) for i in np.unravel_index(int(flat), self.counts))

    def settings(self) -> Iterator[KnobSetting]:
        for row in self.grid():
            yield tuple(int(i) for i in row)

    def values_of(self, k: Sequence[int]) -> Tuple[float, ...]:
        """actual knob values (not indices) for a setting"""
        k = self.check(k)
        return tuple(d.values[i] for i, d in zip(k, self.dimensions))

    def dimension(self, name: str) -> int:
        """position of the named dimension"""
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigurationError(f"unknown knob dimension '{name}'") from None


@lru_cache(maxsize=32)
def _index_grid(counts: Tuple[int, ...]) -> np.ndarray:
    axes = np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")
    grid = np.stack([a.ravel() for a in axes], axis=1).astype(np.int64)
    grid.setflags(write=False)
    return grid


@lru_cache(maxsize=32)
def _unit_grid(counts: Tuple[int, ...]) -> np.ndarray:
    scale = np.array([max(c - 1, 1) for c in counts], dtype=float)
    unit = _index_grid(counts) / scale
    unit.setflags(write=False)
    return unit


def cartesian_product(app_space: KnobSpace, dev_space: KnobSpace) -> KnobSpace:
    """Joint application x device space: app dims first, defaults concatenated."""
    clash = set(app_space.names) & set(dev_space.names)
    if clash:
        raise ConfigurationError(f"dimension names appear in both spaces: {sorted(clash)}")
    return KnobSpace(
        dimensions=list(app_space.dimensions) + list(dev_space.dimensions),
        default=app_space.default_setting + dev_space.default_setting,
    )


def normalize(space: KnobSpace, k: Sequence[int]) -> np.ndarray:
    """Map a setting to the unit cube; 1-value dimensions map to 0.0."""
    k = space.check(k)
    return np.array(
        [i / (c - 1) if c > 1 else 0.0 for i, c in zip(k, space.counts)],
        dtype=float,
    )


def nearest_setting(space: KnobSpace, p: Sequence[float]) -> KnobSetting:
    """Round a unit-cube point to the grid (clamped, ties round half up)."""
    p = np.asarray(p, dtype=float)
    if p.shape != (space.ndim,):
        raise ValueError(f"point has {p.shape} coords, space has {space.ndim} dims")
    out = []
    for x, c in zip(np.clip(p, 0.0, 1.0), space.counts):
        out.append(min(int(np.floor(x * (c - 1) + 0.5)), c - 1))
    return tuple(out)


def switch_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Manhattan distance between index vectors (per-dimension step count)."""
    return int(sum(abs(int(x) - int(y)) for x, y in zip(a, b)))


def order_min_switch_distance(settings: Sequence[KnobSetting], start: KnobSetting) -> List[KnobSetting]:
    """Greedy nearest-neighbor ordering that starts at `start`.

    Ties between equally near candidates go to the lexicographically
    smallest index vector, so the order is deterministic.
    """
    if not settings:
        raise ValueError("cannot order an empty list of settings")
    remaining = [tuple(s) for s in settings]
    start = tuple(start)
    try:
        remaining.remove(start)
    except ValueError:
        raise ValueError(f"start {start} is not among the settings") from None

    order = [start]
    current = start
    while remaining:
        nxt = min(remaining, key=lambda s: (switch_distance(current, s), s))
        remaining.remove(nxt)
        order.append(nxt)
        current = nxt
    return order
