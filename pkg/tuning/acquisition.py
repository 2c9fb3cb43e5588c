"""Constraint-weighted Expected Improvement over the knob grid."""

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from tuning.gp import GPModel, predict_many
from tuning.knobspace import KnobSpace
from utils.errors import ExhaustedError
from utils.models import Bound, KnobSetting

SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class ConstraintModel:
    """GP surrogate for one constraint metric plus its set point."""
    model: GPModel
    set_point: float
    direction: Bound = Bound.below


@dataclass(frozen=True)
class AcquisitionContext:
    objective_model: GPModel
    constraint_models: Tuple[ConstraintModel, ...] = field(default_factory=tuple)
    # best feasible objective seen so far, None until something feasible is measured
    incumbent: Optional[float] = None
    maximize: bool = True


def _scalar_or_array(x: np.ndarray):
    return float(x) if np.ndim(x) == 0 else x


def expected_improvement(mean, variance, incumbent: float, maximize: bool = True):
    """EI of N(mean, variance) over the incumbent; works on scalars or arrays."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    improvement = mean - incumbent if maximize else incumbent - mean
    certain = sigma < SIGMA_FLOOR
    safe_sigma = np.where(certain, 1.0, sigma)
    z = improvement / safe_sigma
    ei = np.where(
        certain,
        np.maximum(improvement, 0.0),
        improvement * norm.cdf(z) + sigma * norm.pdf(z),
    )
    return _scalar_or_array(np.maximum(ei, 0.0))


def prob_feasible(mean, variance, set_point: float, direction: Bound = Bound.below):
    """P(metric on the feasible side of set_point) under N(mean, variance)."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    margin = set_point - mean if Bound(direction) == Bound.below else mean - set_point
    certain = sigma < SIGMA_FLOOR
    safe_sigma = np.where(certain, 1.0, sigma)
    p = np.where(certain, (margin > 0).astype(float), norm.cdf(margin / safe_sigma))
    return _scalar_or_array(np.clip(p, 0.0, 1.0))


def acquisition_values(ctx: AcquisitionContext, points: np.ndarray) -> np.ndarray:
    """Constrained acquisition at each row of points.

    EI times the product of feasibility probabilities; with no incumbent yet
    the feasibility product alone is returned.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    feasible = np.ones(len(points))
    for cm in ctx.constraint_models:
        c_mean, c_var = predict_many(cm.model, points)
        feasible = feasible * prob_feasible(c_mean, c_var, cm.set_point, cm.direction)
    if ctx.incumbent is None:
        return feasible
    o_mean, o_var = predict_many(ctx.objective_model, points)
    return np.asarray(expected_improvement(o_mean, o_var, ctx.incumbent, ctx.maximize)) * feasible


def constrained_acquisition(ctx: AcquisitionContext, x: Sequence[float]) -> float:
    return float(acquisition_values(ctx, np.asarray(x, dtype=float)[None, :])[0])


def argmax_acquisition(
    ctx: AcquisitionContext,
    space: KnobSpace,
    already_sampled: Iterable[KnobSetting],
) -> KnobSetting:
    """Best unsampled grid setting by full scan; ties go to the lexicographically smallest."""
    taken = [space.flat_index(k) for k in already_sampled]
    if len(set(taken)) >= space.size:
        raise ExhaustedError(f"all {space.size} settings have been sampled")
    values = acquisition_values(ctx, space.unit_grid()).copy()
    values[np.isnan(values)] = -np.inf
    values[taken] = -np.inf
    # a fully -inf scan still has unsampled entries; pick the first of those
    if not np.isfinite(values).any():
        mask = np.ones(space.size, dtype=bool)
        mask[taken] = False
        return space.setting_at(int(np.flatnonzero(mask)[0]))
    return space.setting_at(int(np.argmax(values)))
