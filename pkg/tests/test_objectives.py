import numpy as np
import pytest

from egp_topopt import fea, objectives
from egp_topopt.model import (LoadCase, MaterialSpec, make_cantilever3d_problem,
                              make_inverter_problem, make_mbb_problem)

from conftest import with_zero_load


def test_simp_modulus_values():
    m = MaterialSpec()
    assert objectives.simp_modulus(1.0, m) == 1.0
    assert objectives.simp_modulus(0.0, m) == m.young_modulus_void
    assert objectives.simp_modulus(0.5, MaterialSpec(young_modulus_void=0.0)) == 0.125
    with pytest.raises(ValueError):
        objectives.simp_modulus(1.2, m)
    with pytest.raises(ValueError):
        objectives.simp_modulus(-0.1, m)


def test_compliance_zero_load():
    p = with_zero_load(make_mbb_problem(6, 2))
    ev = objectives.evaluate(p, np.full(12, 0.5))
    assert ev.value == 0
    assert np.all(ev.gradient == 0)


def test_compliance_gradient_nonpositive_without_floor():
    p = make_mbb_problem(10, 4).replace(material=MaterialSpec(young_modulus_void=0.0))
    x = np.random.default_rng(0).uniform(0.1, 1, p.n_elements)
    assert np.all(objectives.evaluate(p, x).gradient <= 0)


def test_compliance_value_is_force_dot_displacement():
    p = make_mbb_problem(6, 2)
    x = np.full(12, 0.5)
    K = fea.assemble(p, x)
    sol = fea.solve_equilibrium(K, p)
    ev = objectives.compliance_with_sensitivity(p, x, sol, K)
    # f.u equals u^T K u, which is also sum_e E(x_e) u_e^T K_e u_e
    Kd = K.matrix.toarray()
    assert ev.value == pytest.approx(sol.u @ Kd @ sol.u, rel=1e-10)
    assert ev.value == pytest.approx(
        np.sum(fea.simp_modulus(x, p.material) * ev.element_terms), rel=1e-10)


@pytest.mark.parametrize("make", [lambda: make_mbb_problem(6, 2),
                                  lambda: make_mbb_problem(10, 4),
                                  lambda: make_cantilever3d_problem(4, 4, 2)])
def test_compliance_finite_differences(make):
    p = make()
    assert objectives.finite_difference_check(p, np.full(p.n_elements, 0.5)) < 1e-4
    x = np.random.default_rng(5).uniform(0.2, 0.9, p.n_elements)
    assert objectives.finite_difference_check(p, x, seed=1) < 1e-4


def test_ga_finite_differences():
    p = make_inverter_problem(8, 8)
    assert objectives.finite_difference_check(p, np.full(64, 0.2)) < 1e-4
    x = np.random.default_rng(6).uniform(0.1, 0.9, 64)
    assert objectives.finite_difference_check(p, x, seed=2) < 1e-4


def test_finite_difference_cancellation_guard():
    p = make_mbb_problem(6, 2)
    with pytest.raises(objectives.FiniteDifferenceCancellationError):
        objectives.finite_difference_check(p, np.full(12, 0.5), h=1e-15)


def test_finite_difference_needs_interior_point():
    p = make_mbb_problem(6, 2)
    with pytest.raises(ValueError):
        objectives.finite_difference_check(p, np.ones(12))


def _ga(p, x):
    return objectives.evaluate(p, x)


def test_ga_matches_output_over_input_displacement():
    # with the output spring in the stiffness matrix and the input load alone,
    # G_A is the output displacement (taken against the dummy load direction)
    # over the input displacement
    p = make_inverter_problem(8, 8)
    x = np.random.default_rng(7).uniform(0.1, 1, 64)
    ga = _ga(p, x).reported
    with_spring = p.replace(springs=(p.output_spring,))
    u = fea.solve_equilibrium(fea.assemble(with_spring, x), with_spring).displacements[0]
    assert ga == pytest.approx(-u[p.output_dof] / u[p.input_dof], rel=1e-8)


def test_ga_without_spring_reduces_to_delta_ratio():
    p = make_inverter_problem(8, 8).replace(output_spring=None)
    ev = _ga(p, np.full(64, 0.2))
    assert ev.reported == pytest.approx(ev.ga.delta21 / ev.ga.delta11, rel=1e-14)
    assert ev.ga.k_out == 0


def test_ga_value_is_negated_for_minimization():
    ev = _ga(make_inverter_problem(8, 8), np.full(64, 0.2))
    assert ev.value == -ev.reported


def test_ga_reciprocity_and_positive_diagonals():
    ev = _ga(make_inverter_problem(8, 8), np.random.default_rng(8).uniform(0.1, 1, 64))
    g = ev.ga
    assert g.delta11 > 0 and g.delta22 > 0
    # u1^T K u2 = u2^T K u1, and both Delta terms share the F_in normalisation
    assert g.delta12 == pytest.approx(g.delta21, rel=1e-8)


def _scaled_loads(p, c):
    cases = tuple(LoadCase(forces=tuple((d, c * v) for d, v in case.forces),
                           fixed_dofs=case.fixed_dofs) for case in p.load_cases)
    return p.replace(load_cases=cases)


@pytest.mark.parametrize("c", [0.5, 3.0])
def test_ga_invariant_to_uniform_load_scaling_without_spring(c):
    p = make_inverter_problem(8, 8).replace(output_spring=None)
    x = np.random.default_rng(9).uniform(0.1, 1, 64)
    assert _ga(_scaled_loads(p, c), x).reported == pytest.approx(_ga(p, x).reported, rel=1e-10)


def test_ga_needs_two_cases():
    p = make_inverter_problem(8, 8)
    x = np.full(64, 0.2)
    K = fea.assemble(p, x)
    sol = fea.solve_equilibrium(K, p)
    short = fea.FeaSolution(sol.displacements[:1], sol.forces[:1], sol.residuals[:1],
                            sol.wall_time, sol.density_hash)
    with pytest.raises(ValueError):
        objectives.geometric_advantage_with_sensitivity(p, x, short, K)


def test_stale_solution_rejected():
    p = make_mbb_problem(6, 2)
    x = np.full(12, 0.5)
    sol = fea.solve_equilibrium(fea.assemble(p, x), p)
    y = x.copy()
    y[0] = 0.6
    with pytest.raises(objectives.StaleSolutionError):
        objectives.compliance_with_sensitivity(p, y, sol)


def test_ga_degenerate_denominator():
    with pytest.raises(objectives.DegenerateStructureError):
        objectives.geometric_advantage(0.0, 0.0, 1.0, 0.0, 0.0, 1.0)


def test_ga_closed_form_matches_evaluation():
    ev = _ga(make_inverter_problem(8, 8), np.full(64, 0.2))
    g = ev.ga
    assert objectives.geometric_advantage(g.delta11, g.delta12, g.delta21, g.delta22,
                                          g.k_out, g.f_out) == pytest.approx(ev.reported, rel=1e-14)
