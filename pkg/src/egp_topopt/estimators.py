"""Estimator-style wrappers around the optimization loops.

``fit`` takes a :class:`~egp_topopt.model.ProblemDefinition` in place of a
data matrix. Constructor arguments left at ``None`` keep the problem's own
settings, so ``EGPOptimizer().fit(make_mbb_problem())`` runs the preset as
defined.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .filters import density_kernel, filter_density
from .model import ObjectiveKind, ProblemDefinition
from .optimizer import grey_fraction, run_egp, run_oc


def _override(config, **values):
    changes = {k: v for k, v in values.items() if v is not None}
    return dataclasses.replace(config, **changes) if changes else config


class _TopologyOptimizer(BaseEstimator):
    method = ""

    def _resolve(self, problem: ProblemDefinition) -> ProblemDefinition:
        raise NotImplementedError

    def _run(self, problem):
        raise NotImplementedError

    def _physical(self, problem, x):
        return filter_density(x, density_kernel(problem.grid, problem.filter_config))

    def fit(self, problem: ProblemDefinition, y=None):
        if not isinstance(problem, ProblemDefinition):
            raise TypeError(f"fit expects a ProblemDefinition, got {type(problem).__name__}")
        problem = self._resolve(problem)
        x, record = self._run(problem)
        self.problem_ = problem
        self.density_ = x
        self.physical_density_ = self._physical(problem, x)
        self.history_ = record
        self.n_iter_ = len(record)
        self.converged_ = record.converged
        self.objective_ = record.final_objective
        self.grey_fraction_ = grey_fraction(x)
        return self

    def summary(self) -> dict:
        check_is_fitted(self, "density_")
        return {
            "method": self.method,
            "objective": self.objective_,
            "iterations": self.n_iter_,
            "converged": self.converged_,
            "grey_fraction": self.grey_fraction_,
            "volume_fraction": float(np.mean(self.density_)),
        }


class EGPOptimizer(_TopologyOptimizer):
    """Gradient projection with clipping, grey suppression and ``alpha_max`` steps."""

    method = "egp"

    def __init__(self, clip_multiplier=None, delta=None, max_iter=None, tol=None,
                 density_radius=None, sensitivity_radius=None, sensitivity_kind=None,
                 clip_before_filter=None):
        self.clip_multiplier = clip_multiplier
        self.delta = delta
        self.max_iter = max_iter
        self.tol = tol
        self.density_radius = density_radius
        self.sensitivity_radius = sensitivity_radius
        self.sensitivity_kind = sensitivity_kind
        self.clip_before_filter = clip_before_filter

    def _resolve(self, problem):
        opt = _override(problem.optimizer_config, clip_multiplier=self.clip_multiplier,
                        delta_upper=self.delta, delta_lower=self.delta,
                        max_iter=self.max_iter, tol=self.tol,
                        clip_before_filter=self.clip_before_filter)
        filt = _override(problem.filter_config, density_radius=self.density_radius,
                         sensitivity_radius=self.sensitivity_radius,
                         sensitivity_kind=self.sensitivity_kind)
        return problem.replace(optimizer_config=opt, filter_config=filt)

    def _run(self, problem):
        return run_egp(problem)


class OCOptimizer(_TopologyOptimizer):
    """Optimality-criteria baseline (compliance problems only)."""

    method = "oc"

    def __init__(self, max_iter=None, tol=None, move_limit=None, damping=None,
                 filter_radius=None):
        self.max_iter = max_iter
        self.tol = tol
        self.move_limit = move_limit
        self.damping = damping
        self.filter_radius = filter_radius

    def _resolve(self, problem):
        if problem.objective_kind is not ObjectiveKind.MIN_COMPLIANCE:
            raise ValueError("the OC baseline handles compliance problems only")
        opt = _override(problem.optimizer_config, max_iter=self.max_iter, tol=self.tol,
                        move_limit=self.move_limit, oc_damping=self.damping)
        base = problem.baseline_filter_config
        if self.filter_radius is not None:
            base = dataclasses.replace(base, density_radius=self.filter_radius,
                                       sensitivity_radius=self.filter_radius)
        return problem.replace(optimizer_config=opt, baseline_filter_config=base)

    def _physical(self, problem, x):
        return filter_density(x, density_kernel(problem.grid, problem.baseline_filter_config))

    def _run(self, problem):
        return run_oc(problem)


ESTIMATORS = {"egp": EGPOptimizer, "oc": OCOptimizer}
