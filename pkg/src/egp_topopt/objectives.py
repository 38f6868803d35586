"""Objective values and design sensitivities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fea
from ._validation import check_density
from .model import ObjectiveKind, ProblemDefinition

simp_modulus = fea.simp_modulus


class StaleSolutionError(ValueError):
    """The displacement field was computed for a different density field."""


class DegenerateStructureError(ArithmeticError):
    pass


class FiniteDifferenceCancellationError(ArithmeticError):
    """The finite-difference step is too small for the objective's precision."""


@dataclass(frozen=True)
class GaIntermediates:
    delta11: float
    delta12: float
    delta21: float
    delta22: float
    k_out: float
    f_out: float
    f_in: float


@dataclass(frozen=True)
class ObjectiveEvaluation:
    """Value and gradient with respect to the *physical* densities.

    ``value`` is what the optimizer minimizes (``-G_A`` for mechanisms);
    ``reported`` is the natural quantity (compliance or ``G_A``).
    """

    value: float
    gradient: np.ndarray
    element_terms: np.ndarray
    reported: float
    ga: Optional[GaIntermediates] = None


def _check_fresh(x, sol):
    if fea.density_hash(x) != sol.density_hash:
        raise StaleSolutionError("solution was computed for a different density field")


def compliance_with_sensitivity(problem: ProblemDefinition, x, sol: fea.FeaSolution,
                                K: Optional[fea.GlobalStiffness] = None) -> ObjectiveEvaluation:
    """Compliance ``F.U`` and ``dC/dx_e = -E'(x_e) u_e^T K_e u_e``."""
    x = check_density(x, problem.n_elements)
    _check_fresh(x, sol)
    if K is None:
        K = fea.assemble(problem, x)
    u, f = sol.displacements[0], sol.forces[0]
    ce = fea.element_energies(K, u)
    grad = -fea.simp_modulus_derivative(x, problem.material) * ce
    value = float(f @ u)
    return ObjectiveEvaluation(value, grad, ce, value)


def _load_magnitude(case, dof):
    return abs(sum(v for d, v in case.forces if d == dof))


def geometric_advantage(d11, d12, d21, d22, k_out, f_out):
    den = f_out * d11 + d11 * d22 * k_out - d21 * d12 * k_out
    if den == 0 or not np.isfinite(den):
        raise DegenerateStructureError("geometric-advantage denominator vanishes")
    return f_out * d21 / den


def geometric_advantage_with_sensitivity(problem: ProblemDefinition, x, sol: fea.FeaSolution,
                                         K: Optional[fea.GlobalStiffness] = None
                                         ) -> ObjectiveEvaluation:
    """Geometric advantage of a compliant mechanism and its gradient.

    ``D_ij = u_i^T K u_j / F_in`` with ``u_1`` from the input load and
    ``u_2`` from the dummy output load. The returned ``value`` is ``-G_A``.
    """
    x = check_density(x, problem.n_elements)
    _check_fresh(x, sol)
    if len(sol.displacements) < 2:
        raise ValueError("geometric advantage needs the input and dummy-output load cases")
    if K is None:
        K = fea.assemble(problem, x)
    u1, u2 = sol.displacements[:2]
    f_in = _load_magnitude(problem.load_cases[0], problem.input_dof)
    f_out = _load_magnitude(problem.load_cases[1], problem.output_dof)
    k_out = problem.output_spring.stiffness if problem.output_spring is not None else 0.0
    # u_i^T K u_j = u_i . f_j for the matrix actually solved (springs included)
    f1, f2 = sol.forces[:2]
    d11 = float(u1 @ f1) / f_in
    d12 = float(u1 @ f2) / f_in
    d21 = float(u2 @ f1) / f_in
    d22 = float(u2 @ f2) / f_in

    num = f_out * d21
    den = f_out * d11 + k_out * (d11 * d22 - d21 * d12)
    if den == 0 or not np.isfinite(den):
        raise DegenerateStructureError("geometric-advantage denominator vanishes")
    ga = num / den

    dE = -fea.simp_modulus_derivative(x, problem.material) / f_in
    e11 = fea.element_energies(K, u1)
    e12 = fea.element_energies(K, u1, u2)
    e22 = fea.element_energies(K, u2)
    g11, g12, g22 = dE * e11, dE * e12, dE * e22
    g21 = g12
    dnum = f_out * g21
    dden = f_out * g11 + k_out * (g11 * d22 + d11 * g22 - g21 * d12 - d21 * g12)
    dga = (dnum * den - num * dden) / den**2
    inter = GaIntermediates(d11, d12, d21, d22, k_out, f_out, f_in)
    return ObjectiveEvaluation(-ga, -dga, e12, ga, inter)


def evaluate(problem: ProblemDefinition, x, sol=None, K=None) -> ObjectiveEvaluation:
    """Assemble, solve (unless ``sol`` is given) and evaluate the objective."""
    x = check_density(x, problem.n_elements)
    if K is None:
        K = fea.assemble(problem, x)
    if sol is None:
        sol = fea.solve_equilibrium(K, problem)
    if problem.objective_kind is ObjectiveKind.MIN_COMPLIANCE:
        return compliance_with_sensitivity(problem, x, sol, K)
    return geometric_advantage_with_sensitivity(problem, x, sol, K)


def objective_value(problem: ProblemDefinition, x) -> float:
    return evaluate(problem, x).value


def finite_difference_check(problem: ProblemDefinition, x, objective_kind=None, h: float = 1e-6,
                            n_samples: int = 20, seed: int = 0, tol: float = 1e-4):
    """Worst relative error between the analytic gradient and central
    differences on a random subset of at least ``n_samples`` elements.

    The relative error of a component is ``|fd - an| / max(|an|, 1e-3 * max|an|)``.
    Raises :class:`FiniteDifferenceCancellationError` when ``h`` is so small
    that rounding dominates, detected when the differences at ``h`` and
    ``2h`` disagree by more than ``tol`` and more than the ``2h``/``4h`` pair
    does (truncation error must shrink with the step).
    """
    if objective_kind is not None and ObjectiveKind(objective_kind) is not problem.objective_kind:
        problem = problem.replace(objective_kind=ObjectiveKind(objective_kind))
    x = check_density(x, problem.n_elements)
    if h <= 0:
        raise ValueError("step must be positive")
    n = problem.n_elements
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=min(n, max(n_samples, 20)), replace=False))
    if np.any(x[idx] - 2 * h < 0) or np.any(x[idx] + 2 * h > 1):
        raise ValueError("densities must be at least 2h away from the bounds")
    analytic = evaluate(problem, x).gradient

    def central(i, step):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        return (objective_value(problem, xp) - objective_value(problem, xm)) / (2 * step)

    scale = max(np.abs(analytic[idx]).max(), np.finfo(float).tiny)
    worst = 0.0
    for i in idx:
        d1, d2 = central(i, h), central(i, 2 * h)
        gap12 = abs(d1 - d2)
        denom = max(abs(analytic[i]), 1e-3 * scale)
        if gap12 > tol * denom:
            wide_ok = 0 <= x[i] - 4 * h and x[i] + 4 * h <= 1
            if not wide_ok or gap12 >= abs(d2 - central(i, 4 * h)):
                raise FiniteDifferenceCancellationError(
                    f"step h={h:g} is dominated by rounding (element {i})")
        worst = max(worst, abs(d1 - analytic[i]) / denom)
    return worst
