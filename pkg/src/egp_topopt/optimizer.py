"""Design update schemes: the gradient projection loop and the OC baseline.

Both loops start from the uniform field ``x = f`` and alternate analysis
and update until the largest density change falls below ``tol`` or the
iteration budget runs out.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fea, objectives
from ._validation import check_density, check_field
from .filters import (FilterKernel, density_kernel, filter_density, filter_sensitivity,
                      sensitivity_kernel)
from .model import FilterConfig, ObjectiveKind, OptimizerConfig, ProblemDefinition
from .projection import StationaryPoint, expand_active_set, max_step

logger = logging.getLogger(__name__)

GREY_LOW, GREY_HIGH = 0.05, 0.95


class SuppressionError(RuntimeError):
    """No intermediate elements are left to absorb the volume residue."""


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    volume_fraction: float
    max_change: float
    clip_threshold: float
    active_set_size: int
    expansions: int
    update_ms: float
    fea_ms: float


CSV_COLUMNS = ("iter", "objective", "volume_fraction", "max_change", "clip_threshold",
               "active_set_size", "alg1_expansions", "update_ms", "fea_ms")


@dataclass
class ConvergenceRecord:
    """Append-only per-iteration history of one optimization run."""

    method: str
    rows: list = field(default_factory=list)
    converged: bool = False
    final_objective: float = float("nan")

    def append(self, row: IterationRecord):
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError("iterations must be strictly increasing")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def iterations_to_within(self, rel: float = 0.01) -> int:
        """First iteration whose objective is within ``rel`` of the final one."""
        final = self.final_objective
        for row in self.rows:
            if abs(row.objective - final) <= rel * abs(final):
                return row.iteration
        return len(self.rows) + 1


@dataclass(frozen=True)
class StepInfo:
    alpha: float
    clip_threshold: float
    active_set_size: int
    expansions: int
    max_change: float
    converged: bool = False
    suppressed: bool = True


def clip_gradient(g, multiplier: float = 5.0):
    """Clamp every component to ``[-T, T]`` with ``T = multiplier * mean(|g|)``."""
    g = np.asarray(g, dtype=float)
    if g.size == 0:
        raise ValueError("gradient is empty")
    if multiplier <= 0:
        raise ValueError("clip multiplier must be positive")
    threshold = multiplier * float(np.mean(np.abs(g)))
    return np.clip(g, -threshold, threshold), threshold


def grey_suppress(x, target_volume: float, delta_upper: float, delta_lower: float,
                  x_min: float = 0.0, x_max: float = 1.0) -> np.ndarray:
    """Snap near-bound densities to the bounds, then shift the remaining
    intermediate densities uniformly so that ``sum(x) == target_volume``.

    Intermediates pushed past a snapping threshold by the shift are held at
    that threshold and the leftover volume is spread over the others.
    """
    x = np.array(x, dtype=float)
    hi, lo = x_max - delta_upper, x_min + delta_lower
    x[x >= hi] = x_max
    x[x <= lo] = x_min
    movable = (x > x_min) & (x < x_max)
    tol = 1e-12 * max(1.0, target_volume)
    for _ in range(len(x) + 1):
        residue = target_volume - x.sum()
        if abs(residue) <= tol:
            return x
        count = movable.sum()
        if count == 0:
            break
        x[movable] += residue / count
        over = movable & (x > hi)
        under = movable & (x < lo)
        x[over] = hi
        x[under] = lo
        movable &= ~(over | under)
    raise SuppressionError(
        f"volume off target by {target_volume - x.sum():.3e} with no intermediate elements left")


@dataclass(frozen=True)
class Kernels:
    density: FilterKernel
    sensitivity: FilterKernel

    @classmethod
    def for_problem(cls, problem: ProblemDefinition, config: Optional[FilterConfig] = None):
        config = problem.filter_config if config is None else config
        return cls(density_kernel(problem.grid, config), sensitivity_kernel(problem.grid, config))


def _snap_step(x, d, alpha, x_min, x_max):
    x_new = np.clip(x + alpha * d, x_min, x_max)
    # components that reach a bound up to rounding land on it exactly
    gap = 1e-12
    x_new[x_new <= x_min + gap] = x_min
    x_new[x_new >= x_max - gap] = x_max
    return x_new


def egp_step(problem: ProblemDefinition, x, evaluation: objectives.ObjectiveEvaluation,
             kernels: Optional[Kernels] = None, config: Optional[OptimizerConfig] = None):
    """One gradient projection update.

    sensitivity filter -> clip -> negate -> active-set projection -> step
    to the bound (``alpha_max``) -> grey suppression. Returns the new design
    and a :class:`StepInfo`; a vanishing projected direction returns ``x``
    unchanged with ``converged=True``.
    """
    config = problem.optimizer_config if config is None else config
    kernels = Kernels.for_problem(problem) if kernels is None else kernels
    x = check_density(x, problem.n_elements)
    x_min, x_max = problem.x_min, problem.x_max
    grad = check_field(evaluation.gradient, problem.n_elements, "gradient")

    if config.clip_before_filter:
        if kernels.density.kind != "none":
            grad = kernels.density.matrix.T @ grad
        grad, threshold = clip_gradient(grad, config.clip_multiplier)
        grad = filter_sensitivity(grad, x, kernels.sensitivity)
    else:
        grad = filter_sensitivity(grad, x, kernels.sensitivity, kernels.density)
        grad, threshold = clip_gradient(grad, config.clip_multiplier)

    # the direction is scale-free (clipping and alpha_max absorb the scale), so
    # work at unit max-norm; otherwise tiny gradients near a disconnected
    # design fall under the projection's absolute tolerance floor
    scale = float(np.abs(grad).max())
    if scale == 0.0 or not np.isfinite(scale):
        return x.copy(), StepInfo(0.0, threshold, 0, 0, 0.0, converged=True)
    active, direction = expand_active_set(-grad / scale, x, x_min, x_max)
    if direction.stationary:
        return x.copy(), StepInfo(0.0, threshold, active.size, direction.expansions, 0.0,
                                  converged=True)
    d = direction.d
    try:
        alpha = max_step(x, d, x_min, x_max)
    except StationaryPoint:
        return x.copy(), StepInfo(0.0, threshold, active.size, direction.expansions, 0.0,
                                  converged=True)

    suppressed = True
    for attempt_alpha in (alpha, 0.5 * alpha):
        x_step = _snap_step(x, d, attempt_alpha, x_min, x_max)
        try:
            x_new = grey_suppress(x_step, problem.target_volume, config.delta_upper,
                                  config.delta_lower, x_min, x_max)
            alpha = attempt_alpha
            break
        except SuppressionError:
            logger.debug("grey suppression failed at alpha=%g", attempt_alpha)
    else:
        x_new, suppressed = x_step, False
    change = float(np.abs(x_new - x).max())
    return x_new, StepInfo(alpha, threshold, active.size, direction.expansions, change,
                           suppressed=suppressed)


def _analyse(problem, x_phys):
    K = fea.assemble(problem, x_phys)
    sol = fea.solve_equilibrium(K, problem, strict=False)
    return objectives.evaluate(problem, x_phys, sol, K)


def run_egp(problem: ProblemDefinition, config: Optional[OptimizerConfig] = None,
            filter_config: Optional[FilterConfig] = None, callback=None):
    """Gradient projection optimization from the uniform field ``x = f``.

    Returns ``(design, record)``; the physical field is
    ``filter_density(design, density_kernel(...))``.
    """
    config = problem.optimizer_config if config is None else config
    kernels = Kernels.for_problem(problem, filter_config)
    x = np.full(problem.n_elements, problem.volume_fraction)
    record = ConvergenceRecord("egp")
    x_phys = filter_density(x, kernels.density)
    for it in range(1, config.max_iter + 1):
        t0 = time.perf_counter()
        try:
            evaluation = _analyse(problem, x_phys)
        except fea.FeaError as exc:
            raise fea.FeaError(f"analysis failed at iteration {it}: {exc}") from exc
        t1 = time.perf_counter()
        x_new, info = egp_step(problem, x, evaluation, kernels, config)
        x_phys_new = filter_density(x_new, kernels.density)
        t2 = time.perf_counter()
        record.append(IterationRecord(
            it, evaluation.reported, float(x.mean()), info.max_change, info.clip_threshold,
            info.active_set_size, info.expansions, 1e3 * (t2 - t1), 1e3 * (t1 - t0)))
        if callback is not None:
            callback(it, x_new, evaluation, info)
        logger.info("egp it %3d obj %.6g change %.3f", it, evaluation.reported, info.max_change)
        x, x_phys = x_new, x_phys_new
        if info.converged or info.max_change < config.tol:
            record.converged = True
            break
    if len(record):
        record.final_objective = _analyse(problem, x_phys).reported
    return x, record


def oc_update(x, gradient, volume_gradient=None, move: float = 0.2, x_min: float = 0.0,
              x_max: float = 1.0, target_volume: Optional[float] = None, damping: float = 0.5,
              max_bisections: int = 500):
    """Optimality-criteria update ``x * (-g / (lambda dv))**damping`` within
    the move limit, with ``lambda`` bisected until ``sum(x_new)`` matches
    ``target_volume`` (default: ``sum(x)``) to ``1e-10 * n``."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(gradient, dtype=float)
    dv = np.ones_like(x) if volume_gradient is None else np.asarray(volume_gradient, dtype=float)
    if np.any(g > 0):
        raise ValueError("OC needs a nonpositive gradient")
    if np.any(dv <= 0):
        raise ValueError("volume gradient must be positive")
    target = float(x.sum()) if target_volume is None else float(target_volume)
    lower = np.maximum(x_min, x - move)
    upper = np.minimum(x_max, x + move)
    ratio = -g / dv
    tol = 1e-10 * len(x)

    def update(lam):
        return np.clip(x * (ratio / lam) ** damping, lower, upper)

    if upper.sum() < target - tol or lower.sum() > target + tol:
        raise ValueError("target volume is outside the move-limit box")
    if not np.any(ratio > 0):
        raise ValueError("degenerate gradient: OC multiplier cannot be bracketed")
    l1, l2 = 0.0, 1.0
    while update(l2).sum() > target:
        l2 *= 2.0
        if l2 > 1e300:
            raise ValueError("failed to bracket the OC multiplier")
    x_new = update(l2)
    for _ in range(max_bisections):
        lmid = 0.5 * (l1 + l2)
        if lmid in (l1, l2):
            break
        x_new = update(lmid)
        vol = x_new.sum()
        if abs(vol - target) <= tol:
            return x_new
        if vol > target:
            l1 = lmid
        else:
            l2 = lmid
    if abs(x_new.sum() - target) > tol:
        raise ValueError("OC bisection did not reach the target volume")
    return x_new


def run_oc(problem: ProblemDefinition, config: Optional[OptimizerConfig] = None,
           filter_config: Optional[FilterConfig] = None, callback=None):
    """Optimality-criteria baseline with the 88-line update and filters."""
    if problem.objective_kind is not ObjectiveKind.MIN_COMPLIANCE:
        raise ValueError("the OC baseline handles compliance problems only")
    config = problem.optimizer_config if config is None else config
    fcfg = problem.baseline_filter_config if filter_config is None else filter_config
    kernels = Kernels.for_problem(problem, fcfg)
    x = np.full(problem.n_elements, problem.volume_fraction)
    record = ConvergenceRecord("oc")
    x_phys = filter_density(x, kernels.density)
    for it in range(1, config.max_iter + 1):
        t0 = time.perf_counter()
        evaluation = _analyse(problem, x_phys)
        t1 = time.perf_counter()
        g = filter_sensitivity(evaluation.gradient, x, kernels.sensitivity, kernels.density)
        x_new = oc_update(x, np.minimum(g, 0.0), move=config.move_limit, x_min=problem.x_min,
                          x_max=problem.x_max, target_volume=problem.target_volume,
                          damping=config.oc_damping)
        x_phys_new = filter_density(x_new, kernels.density)
        t2 = time.perf_counter()
        change = float(np.abs(x_new - x).max())
        record.append(IterationRecord(it, evaluation.reported, float(x.mean()), change,
                                      float("nan"), 0, 0, 1e3 * (t2 - t1), 1e3 * (t1 - t0)))
        if callback is not None:
            callback(it, x_new, evaluation, None)
        logger.info("oc it %3d obj %.6g change %.3f", it, evaluation.reported, change)
        x, x_phys = x_new, x_phys_new
        if change < config.tol:
            record.converged = True
            break
    if len(record):
        record.final_objective = _analyse(problem, x_phys).reported
    return x, record


def grey_fraction(x, low: float = GREY_LOW, high: float = GREY_HIGH) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.mean((x > low) & (x < high)))
