"""Sampling schedule for one phase: LHS initialization, then a searching stage.

The hybrid schedule is LHS for the first M rounds, one GP-regressor pick,
constrained BO for the middle rounds, and a final GP-regressor pick on
everything measured so far. The other strategies are the baselines the
hybrid is compared against.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from tuning import gp
from tuning.acquisition import AcquisitionContext, ConstraintModel, argmax_acquisition
from tuning.knobspace import KnobSpace, nearest_setting, normalize, order_min_switch_distance
from utils.errors import ExhaustedError, PhaseCompleteError
from utils.models import Bound, KnobSetting, Measurement, OptimizationSpec

logger = logging.getLogger(__name__)

LHS_RETRIES = 100
RIDGE_PENALTY = 1e-3


class Strategy(str, Enum):
    hybrid = "hybrid"
    bayes_opt = "bayes_opt"
    gp_regressor = "gp_regressor"
    linear_regressor = "linear_regressor"
    random = "random"
    lhs_only = "lhs_only"


class Stage(str, Enum):
    """How one round's knob gets picked."""
    lhs = "LHS"
    gp = "GP"
    bo = "BO"
    linear = "Linear"
    random = "Random"


class RegressorKind(str, Enum):
    gp = "gp"
    linear = "linear"


def default_init_rounds(total_rounds: int, strategy: Strategy = Strategy.hybrid) -> int:
    """M = max(3, round(N/3)), pulled down when N is too small to leave a searching stage."""
    m = max(3, round(total_rounds / 3))
    reserve = 2 if strategy == Strategy.hybrid else 1
    return max(1, min(m, total_rounds - reserve))


class SamplingSchedule(BaseModel):
    """N rounds per phase, the first M of them initialization."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    total_rounds: int = Field(ge=2)
    init_rounds: int = Field(ge=1)
    strategy: Strategy = Strategy.hybrid

    @model_validator(mode="after")
    def _check(self) -> "SamplingSchedule":
        if self.init_rounds >= self.total_rounds:
            raise ValueError(f"need M < N, got M={self.init_rounds} N={self.total_rounds}")
        if self.strategy == Strategy.hybrid and self.total_rounds < self.init_rounds + 2:
            raise ValueError("hybrid needs N >= M + 2 for its two regressor picks")
        return self

    @classmethod
    def for_budget(
        cls,
        total_rounds: int,
        strategy: Strategy = Strategy.hybrid,
        init_rounds: Optional[int] = None,
    ) -> "SamplingSchedule":
        strategy = Strategy(strategy)
        if init_rounds is None:
            init_rounds = default_init_rounds(total_rounds, strategy)
        return cls(total_rounds=total_rounds, init_rounds=init_rounds, strategy=strategy)

    def stage(self, round: int) -> Stage:
        """stage used for 1-based round number `round`"""
        if not 1 <= round <= self.total_rounds:
            raise ValueError(f"round {round} outside 1..{self.total_rounds}")
        s = self.strategy
        if s == Strategy.random:
            return Stage.random
        if s == Strategy.lhs_only or round <= self.init_rounds:
            return Stage.lhs
        if s == Strategy.hybrid:
            if round == self.init_rounds + 1 or round == self.total_rounds:
                return Stage.gp
            return Stage.bo
        if s == Strategy.bayes_opt:
            return Stage.bo
        if s == Strategy.gp_regressor:
            return Stage.gp
        return Stage.linear

    def stages(self) -> List[Stage]:
        return [self.stage(r) for r in range(1, self.total_rounds + 1)]


# ---------------------------------------------------------------- LHS

def latin_hypercube(ndim: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Classic LHS in the unit cube: each of the m strata of every dimension hit once."""
    strata = np.stack([rng.permutation(m) for _ in range(ndim)], axis=1)
    return (strata + rng.random((m, ndim))) / m


@dataclass(frozen=True)
class LHSDesign:
    points: np.ndarray  # continuous sample before grid rounding, one row per setting
    settings: List[KnobSetting]  # grid settings, ordered for minimal switching


def lhs_design(space: KnobSpace, m: int, seed) -> LHSDesign:
    """LHS mapped onto the grid with duplicates removed, DEFAULT first."""
    if m > space.size:
        raise ExhaustedError(f"cannot draw {m} distinct settings from a space of {space.size}")
    rng = np.random.default_rng(seed)
    points = latin_hypercube(space.ndim, m, rng)
    strata = np.floor(points * m)

    taken: set = set()
    settings: List[KnobSetting] = []
    for i in range(m):
        k = nearest_setting(space, points[i])
        retries = 0
        while k in taken and retries < LHS_RETRIES:
            # re-jitter inside the same strata cell
            points[i] = (strata[i] + rng.random(space.ndim)) / m
            k = nearest_setting(space, points[i])
            retries += 1
        if k in taken:
            k = _nearest_unsampled(space, points[i], taken)
        taken.add(k)
        settings.append(k)

    default = space.default_setting
    if default not in taken:
        unit = np.array([normalize(space, k) for k in settings])
        closest = int(np.argmin(np.sum((unit - normalize(space, default)) ** 2, axis=1)))
        settings[closest] = default

    ordered = order_min_switch_distance(settings, default)
    # keep the continuous sample aligned with the emitted order
    row_of = {k: i for i, k in enumerate(settings)}
    return LHSDesign(points=points[[row_of[k] for k in ordered]], settings=ordered)


def lhs_samples(space: KnobSpace, m: int, seed) -> List[KnobSetting]:
    return lhs_design(space, m, seed).settings


def _nearest_unsampled(space: KnobSpace, point: np.ndarray, taken: set) -> KnobSetting:
    unit = space.unit_grid()
    dist = np.sum((unit - point) ** 2, axis=1)
    for k in taken:
        dist[space.flat_index(k)] = np.inf
    if not np.isfinite(dist).any():
        raise ExhaustedError("no unsampled setting left for LHS")
    return space.setting_at(int(np.argmin(dist)))


# ---------------------------------------------------------------- regressors

@dataclass(frozen=True)
class LinearModel:
    """Ridge least squares on unit-cube inputs, unpenalized intercept."""
    coef: np.ndarray
    intercept: float

    def predict(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.coef + self.intercept


def fit_linear(inputs: np.ndarray, targets: Sequence[float], penalty: float = RIDGE_PENALTY) -> LinearModel:
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    x_mean, y_mean = x.mean(axis=0), y.mean()
    xc, yc = x - x_mean, y - y_mean
    coef = np.linalg.solve(xc.T @ xc + penalty * np.eye(x.shape[1]), xc.T @ yc)
    return LinearModel(coef=coef, intercept=float(y_mean - x_mean @ coef))


def fit_gp(inputs: np.ndarray, targets: Sequence[float], kind: gp.KernelKind = gp.KernelKind.matern52) -> gp.GPModel:
    """GP with grid-searched hyperparameters (a fixed default kernel below two points)."""
    if len(inputs) >= 2:
        kernel = gp.optimize_hyperparams(inputs, targets, kind)
    else:
        kernel = gp.KernelConfig.isotropic(np.shape(inputs)[1], 0.5, kind, 1.0, 1e-6)
    return gp.fit(inputs, targets, kernel)


def _training_data(space: KnobSpace, data: Sequence[Measurement]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.array([normalize(space, m.knob) for m in data])
    o = np.array([m.o for m in data])
    c = np.array([m.c for m in data], dtype=float).reshape(len(data), len(data[0].c))
    return x, o, c


def _unsampled_mask(space: KnobSpace, history: Sequence[Measurement]) -> np.ndarray:
    mask = np.ones(space.size, dtype=bool)
    for m in history:
        mask[space.flat_index(m.knob)] = False
    if not mask.any():
        raise ExhaustedError(f"all {space.size} settings have been sampled")
    return mask


def regressor_pick(
    history: Sequence[Measurement],
    warm_start: Sequence[Measurement],
    space: KnobSpace,
    spec: OptimizationSpec,
    regressor_kind: RegressorKind = RegressorKind.gp,
) -> KnobSetting:
    """Exploitation pick: best predicted objective among predicted-feasible unsampled settings.

    Falls back to the least predicted violation when nothing is predicted feasible.
    """
    data = list(history) + list(warm_start or [])
    if len(data) < 2:
        raise ValueError("regressor pick needs at least two measurements")
    x, o, c = _training_data(space, data)
    grid = space.unit_grid()

    def fit_predict(targets: np.ndarray) -> np.ndarray:
        if RegressorKind(regressor_kind) == RegressorKind.linear:
            return fit_linear(x, targets).predict(grid)
        return gp.predict_many(fit_gp(x, targets), grid)[0]

    pred_o = fit_predict(o)
    feasible = np.ones(space.size, dtype=bool)
    violation = np.zeros(space.size)
    for j, cs in enumerate(spec.constraints):
        pred_c = fit_predict(c[:, j])
        if cs.direction == Bound.below:
            excess = pred_c - cs.set_point
        else:
            excess = cs.set_point - pred_c
        feasible &= excess < 0
        violation += np.maximum(excess, 0.0) / max(abs(cs.set_point), 1e-9)

    unsampled = _unsampled_mask(space, history)
    candidates = unsampled & feasible
    if candidates.any():
        score = pred_o if spec.maximize else -pred_o
        score = np.where(candidates, score, -np.inf)
        return space.setting_at(int(np.argmax(score)))
    logger.debug("no setting predicted feasible, picking least predicted violation")
    return space.setting_at(int(np.argmin(np.where(unsampled, violation, np.inf))))


# ---------------------------------------------------------------- selection

@dataclass(frozen=True)
class Selection:
    """Phase result: chosen knob plus its measured values as the detector reference."""
    knob: KnobSetting
    o_ref: float
    c_ref: List[float]
    infeasible: bool = False


def select_best(history: Sequence[Measurement], spec: OptimizationSpec) -> Selection:
    """Best measured feasible sample, or the least-violating one flagged infeasible."""
    if not history:
        raise ValueError("cannot select from an empty history")
    feasible = [m for m in history if spec.is_feasible(m.c)]
    if feasible:
        pick = feasible[0]
        for m in feasible[1:]:
            if spec.better(m.o, pick.o):
                pick = m
        return Selection(pick.knob, pick.o, list(pick.c), infeasible=False)
    pick = min(history, key=lambda m: spec.violation(m.c))
    return Selection(pick.knob, pick.o, list(pick.c), infeasible=True)


def incumbent(data: Sequence[Measurement], spec: OptimizationSpec) -> Optional[float]:
    values = [m.o for m in data if spec.is_feasible(m.c)]
    if not values:
        return None
    return max(values) if spec.maximize else min(values)


# ---------------------------------------------------------------- sampler

class Sampler:
    """Sampler state for one phase: picks knobs round by round and keeps the history."""

    def __init__(
        self,
        schedule: SamplingSchedule,
        space: KnobSpace,
        spec: OptimizationSpec,
        seed: Union[int, Sequence[int]] = 0,
        warm_start: Optional[Sequence[Measurement]] = None,
    ):
        self.schedule = schedule
        self.space = space
        self.spec = spec
        self.rng_seed = seed
        n_constraints = len(spec.constraints)
        self.warm_start: List[Measurement] = [
            m for m in (warm_start or []) if space.contains(m.knob) and len(m.c) == n_constraints
        ]
        dropped = len(warm_start or []) - len(self.warm_start)
        if dropped:
            logger.warning("dropped %d warm-start measurements outside the space or without %d constraint values",
                           dropped, n_constraints)
        self.history: List[Measurement] = []
        self.stages: List[Stage] = []
        self.pending: Optional[KnobSetting] = None
        self._rng = np.random.default_rng(seed)

        n_lhs = schedule.total_rounds if schedule.strategy == Strategy.lhs_only else schedule.init_rounds
        if schedule.strategy == Strategy.random:
            self._lhs: List[KnobSetting] = []
        else:
            self._lhs = lhs_samples(space, min(n_lhs, space.size), self._rng)

    @property
    def round(self) -> int:
        return len(self.history)

    @property
    def done(self) -> bool:
        return self.round >= self.schedule.total_rounds

    @property
    def sampled(self) -> set:
        return {m.knob for m in self.history}

    def next_sample(self) -> KnobSetting:
        """Knob for the next round (1-based round = len(history) + 1)."""
        if self.done:
            raise PhaseCompleteError(f"all {self.schedule.total_rounds} rounds already sampled")
        if self.pending is not None:
            return self.pending
        r = self.round + 1
        stage = self.schedule.stage(r)
        if stage == Stage.lhs and r > len(self._lhs):
            # space smaller than the LHS budget
            stage = Stage.random
        elif stage in (Stage.gp, Stage.bo, Stage.linear) and len(self.history) + len(self.warm_start) < 2:
            stage = Stage.random

        if stage == Stage.lhs:
            knob = self._lhs[r - 1]
        elif stage == Stage.random:
            knob = self._random_unsampled()
        elif stage == Stage.bo:
            knob = self._bo_pick()
        else:
            kind = RegressorKind.linear if stage == Stage.linear else RegressorKind.gp
            knob = regressor_pick(self.history, self.warm_start, self.space, self.spec, kind)

        if knob in self.sampled:
            # LHS knobs are fixed up front and cannot collide; model picks exclude history
            knob = self._random_unsampled()
        self.stages.append(stage)
        self.pending = knob
        logger.debug("round %d: %s picked %s", r, stage.value, knob)
        return knob

    def record(self, knob: Sequence[int], o: float, c: Sequence[float]) -> Measurement:
        """Store the measurement for a knob picked by next_sample."""
        knob = self.space.check(knob)
        if knob in self.sampled:
            raise ValueError(f"knob {knob} already sampled in this phase")
        if len(c) != len(self.spec.constraints):
            raise ValueError(f"expected {len(self.spec.constraints)} constraint values, got {len(c)}")
        m = Measurement(knob=knob, o=o, c=list(c), round=self.round + 1)
        self.history.append(m)
        self.pending = None
        return m

    def select_best(self) -> Selection:
        return select_best(self.history, self.spec)

    def _random_unsampled(self) -> KnobSetting:
        mask = _unsampled_mask(self.space, self.history)
        flat = self._rng.choice(np.flatnonzero(mask))
        return self.space.setting_at(int(flat))

    def _bo_pick(self) -> KnobSetting:
        data = self.history + self.warm_start
        x, o, c = _training_data(self.space, data)
        constraint_models = tuple(
            ConstraintModel(fit_gp(x, c[:, j]), cs.set_point, cs.direction)
            for j, cs in enumerate(self.spec.constraints)
        )
        ctx = AcquisitionContext(
            objective_model=fit_gp(x, o),
            constraint_models=constraint_models,
            incumbent=incumbent(data, self.spec),
            maximize=self.spec.maximize,
        )
        return argmax_acquisition(ctx, self.space, self.sampled)


def run_phase(sampler: Sampler, measure: Callable[[KnobSetting], Tuple[float, Sequence[float]]]) -> Selection:
    """Drive one sampling phase in-process: measure each remaining round, then pick the best.

    Stops early when the knob space runs out before the budget does.
    """
    while not sampler.done:
        try:
            knob = sampler.next_sample()
        except ExhaustedError:
            logger.info("knob space exhausted after %d rounds", sampler.round)
            break
        o, c = measure(knob)
        sampler.record(knob, o, c)
    return sampler.select_best()
