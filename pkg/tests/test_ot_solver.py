import itertools

import numpy as np
import pytest
from scipy.stats import norm

from otmageom.fields import CostFunction, Density, ScalarField
from otmageom.ma_structure import MAStructure
from otmageom.ot_solver import (
    DiscreteOTProblem,
    PotentialPair,
    TransportPlan,
    duality_report,
    el_residual_grid,
    hungarian,
    load_points,
    potential_from_monotone_map,
    sinkhorn,
    sinkhorn_annealed,
    solve_assignment,
    solve_monotone_1d,
)


def brute_force(c):
    """Minimum of sum_i C[i, sigma(i)] over all permutations."""
    n = len(c)
    return min(c[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n)))


def squared_distance_problem(rng, n):
    xs, ys = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    c = 0.5 * np.sum((xs[:, None, :] - ys[None, :, :]) ** 2, axis=-1)
    return DiscreteOTProblem.from_matrix(c)


def embedded(rho1, rho1_bar):
    side = Density.uniform([[-1.0, 1.0]])
    return MAStructure(CostFunction.quadratic(), Density.separable([rho1, side, side]),
                       Density.separable([rho1_bar, side, side]))


def line_grid(lo, hi, n, pad=1e-3):
    w = pad * (hi - lo)
    return np.column_stack([np.linspace(lo + w, hi - w, n), np.zeros(n), np.zeros(n)])


# -- problems and potentials ----------------------------------------------------------


def test_problem_validation():
    with pytest.raises(ValueError, match="positive"):
        DiscreteOTProblem.from_matrix(np.zeros((2, 2)), [1.0, 0.0], [0.5, 0.5])
    with pytest.raises(ValueError, match="sum"):
        DiscreteOTProblem.from_matrix(np.zeros((2, 2)), [0.5, 0.6], [0.5, 0.5])
    with pytest.raises(ValueError, match="non-finite"):
        DiscreteOTProblem.from_matrix(np.array([[0.0, np.inf], [0.0, 0.0]]))
    with pytest.raises(ValueError, match="shape"):
        DiscreteOTProblem(np.zeros((2, 1)), [0.5, 0.5], np.zeros((2, 1)), [0.5, 0.5], np.zeros((3, 2)))


def test_from_cost_builds_quadratic_matrix():
    xs = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    p = DiscreteOTProblem.from_cost(CostFunction.quadratic(), xs, xs)
    np.testing.assert_array_equal(p.cost_matrix, -np.eye(2))


def test_potential_conversion_pins_first_source():
    pair = PotentialPair.from_textbook([2.0, 3.0], [1.0, -1.0])
    np.testing.assert_array_equal(pair.u, [0.0, -1.0])
    np.testing.assert_array_equal(pair.u_bar, [-3.0, -1.0])
    # phi_i + psi_j is preserved up to sign
    np.testing.assert_array_equal(pair.u[:, None] + pair.u_bar[None, :], -np.array([[3.0, 1.0], [4.0, 2.0]]))


# -- exact assignment ----------------------------------------------------------------


def test_two_point_identity():
    p = DiscreteOTProblem.from_matrix([[0.0, 1.0], [1.0, 0.0]])
    plan, pots = solve_assignment(p)
    np.testing.assert_array_equal(plan.coupling, 0.5 * np.eye(2))
    rep = duality_report(p, plan, pots)
    assert rep.primal == 0.0 and abs(rep.gap) <= 1e-12


def test_two_point_anti_diagonal():
    p = DiscreteOTProblem.from_matrix([[1.0, 0.0], [0.0, 1.0]])
    plan, _ = solve_assignment(p)
    np.testing.assert_array_equal(plan.coupling, 0.5 * np.array([[0, 1], [1, 0]]))


def test_quadratic_cost_pairs_sorted_points():
    # for c = -x.y on a line the optimal pairing is monotone
    xs = np.array([[0.3, 0, 0], [-1.0, 0, 0], [2.0, 0, 0]])
    ys = np.array([[5.0, 0, 0], [1.0, 0, 0], [-2.0, 0, 0]])
    plan, _ = solve_assignment(DiscreteOTProblem.from_cost(CostFunction.quadratic(), xs, ys))
    np.testing.assert_array_equal(np.argmax(plan.coupling, axis=1), [1, 2, 0])


def test_assignment_rejects_non_uniform_or_rectangular():
    with pytest.raises(ValueError, match="square"):
        solve_assignment(DiscreteOTProblem.from_matrix(np.zeros((2, 3))))
    with pytest.raises(ValueError, match="uniform"):
        solve_assignment(DiscreteOTProblem.from_matrix(np.zeros((2, 2)), [0.25, 0.75], [0.5, 0.5]))


def test_hungarian_matches_brute_force(rng):
    for _ in range(200):
        n = int(rng.integers(1, 7))
        c = rng.normal(size=(n, n)) if rng.random() < 0.5 else rng.integers(0, 4, size=(n, n)).astype(float)
        assignment, phi, psi = hungarian(c)
        assert sorted(assignment) == list(range(n))
        best = brute_force(c)
        assert c[np.arange(n), assignment].sum() == pytest.approx(best, abs=1e-12)
        # textbook duals: feasible and tight on the assignment
        assert np.min(c - phi[:, None] - psi[None, :]) >= -1e-12
        assert phi.sum() + psi.sum() == pytest.approx(best, abs=1e-9)


def test_duality_report_on_random_instances(rng):
    for _ in range(50):
        n = int(rng.integers(2, 7))
        p = DiscreteOTProblem.from_matrix(rng.uniform(-1, 1, size=(n, n)))
        rep = duality_report(p, *solve_assignment(p))
        assert abs(rep.gap) <= 1e-9
        assert rep.duality_relation_defect <= 1e-9
        assert rep.feasibility_violation == 0.0
        assert rep.marginal_defect <= 1e-15
        assert rep.support_size == n


def test_weak_duality_for_feasible_pairs(rng):
    for _ in range(50):
        n = 5
        p = DiscreteOTProblem.from_matrix(rng.normal(size=(n, n)))
        plan, _ = solve_assignment(p)
        # any u, ubar with u_i + ubar_j >= -C_ij gives a lower bound
        u = rng.normal(size=n)
        u_bar = np.max(-p.cost_matrix - u[:, None], axis=0)
        rep = duality_report(p, plan, PotentialPair(u, u_bar))
        assert rep.feasibility_violation <= 1e-14
        assert rep.gap >= -1e-12


def test_product_coupling_gap_equals_primal_with_zero_potentials():
    c = np.array([[1.0, 2.0], [3.0, 4.0]])
    p = DiscreteOTProblem.from_matrix(c)
    rep = duality_report(p, TransportPlan(np.full((2, 2), 0.25)), PotentialPair(np.zeros(2), np.zeros(2)))
    assert rep.primal == pytest.approx(2.5)
    assert rep.dual == 0.0
    assert rep.gap == pytest.approx(rep.primal)
    assert rep.feasibility_violation == 0.0


def test_infeasible_potentials_are_reported():
    c = np.zeros((2, 2))
    p = DiscreteOTProblem.from_matrix(c)
    rep = duality_report(p, TransportPlan(0.5 * np.eye(2)), PotentialPair(np.array([0.0, -1.0]), np.zeros(2)))
    assert rep.feasibility_violation == pytest.approx(1.0)


# -- Sinkhorn --------------------------------------------------------------------------


def test_sinkhorn_two_point_uniform_cost():
    p = DiscreteOTProblem.from_matrix(np.zeros((2, 2)))
    res = sinkhorn(p, 1.0)
    np.testing.assert_allclose(res.plan.coupling, 0.25, atol=1e-12)
    assert res.converged


def test_sinkhorn_primal_within_entropy_bound(rng):
    for n in (4, 8):
        p = squared_distance_problem(rng, n)
        plan, _ = solve_assignment(p)
        optimum = float(np.sum(plan.coupling * p.cost_matrix))
        for rel in (1.0, 0.1):
            eps = rel * float(np.mean(p.cost_matrix))
            res = sinkhorn(p, eps, tol=1e-10)
            assert res.converged
            assert res.plan.marginal_defect(p) <= 1e-8
            primal = float(np.sum(res.plan.coupling * p.cost_matrix))
            assert optimum - 1e-12 <= primal <= optimum + eps * np.log(n)


def test_sinkhorn_converges_toward_assignment(rng):
    p = squared_distance_problem(rng, 8)
    plan, _ = solve_assignment(p)
    optimum = float(np.sum(plan.coupling * p.cost_matrix))
    rng_c = np.ptp(p.cost_matrix)
    gaps = []
    for rel in (1.0, 0.3, 0.1, 0.03, 0.01):
        res = sinkhorn(p, rel * float(np.mean(p.cost_matrix)), tol=1e-10)
        assert res.converged
        gaps.append(float(np.sum(res.plan.coupling * p.cost_matrix)) - optimum)
    assert all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.02 * rng_c


def test_sinkhorn_marginal_history_is_non_increasing(rng):
    p = squared_distance_problem(rng, 16)
    res = sinkhorn(p, 0.3 * float(np.mean(p.cost_matrix)), polish=False, max_iter=5000)
    h = res.marginal_history
    assert res.converged
    assert np.all(np.diff(h) <= 1e-15)


def test_sinkhorn_dual_is_feasible_lower_bound_after_shift(rng):
    p = squared_distance_problem(rng, 6)
    res = sinkhorn(p, 0.05 * float(np.mean(p.cost_matrix)), tol=1e-10)
    rep = duality_report(p, res.plan, res.potentials)
    # entropic duals may violate the hard constraint, but only by O(epsilon log N)
    assert rep.gap >= -1e-8
    assert rep.marginal_defect <= 1e-8


def test_sinkhorn_annealed_matches_cold_start(rng):
    p = squared_distance_problem(rng, 8)
    eps = [r * float(np.mean(p.cost_matrix)) for r in (1.0, 0.1, 0.01)]
    warm = sinkhorn_annealed(p, eps, tol=1e-10)
    cold = sinkhorn(p, eps[-1], tol=1e-10)
    np.testing.assert_allclose(warm[-1].plan.coupling, cold.plan.coupling, atol=1e-8)


def test_sinkhorn_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        sinkhorn(DiscreteOTProblem.from_matrix(np.zeros((2, 2))), 0.0)


def test_sinkhorn_general_weights(rng):
    c = rng.uniform(size=(3, 5))
    p = DiscreteOTProblem.from_matrix(c, [0.2, 0.3, 0.5], [0.1, 0.1, 0.2, 0.3, 0.3])
    res = sinkhorn(p, 0.05)
    assert res.plan.marginal_defect(p) <= 1e-9


# -- one-dimensional monotone maps -------------------------------------------------


def test_monotone_identity():
    rho = Density.uniform([[0.0, 1.0]])
    t = solve_monotone_1d(rho, rho, 33)
    np.testing.assert_allclose(t.values, t.grid, atol=1e-10)


def test_monotone_dilation():
    t = solve_monotone_1d(Density.uniform([[0.0, 1.0]]), Density.uniform([[0.0, 2.0]]), 33)
    np.testing.assert_allclose(t.values, 2 * t.grid, atol=1e-6)


def test_monotone_gaussian_shift():
    m = 0.3
    rho = Density.truncated_gaussian([[-4.0, 4.0]], [0.0], [[1.0]])
    rho_bar = Density.truncated_gaussian([[-4.0 + m, 4.0 + m]], [m], [[1.0]])
    t = solve_monotone_1d(rho, rho_bar, 129)
    inner = np.abs(t.grid) <= 3
    np.testing.assert_allclose(t.values[inner], t.grid[inner] + m, atol=1e-4)


def test_monotone_map_change_of_variables():
    rho = Density.truncated_gaussian([[-1.0, 1.0]], [0.2], [[0.3]])
    rho_bar = Density.uniform([[-1.0, 1.0]])
    t = solve_monotone_1d(rho, rho_bar, 256)
    # rho_bar(T) T' = rho; the target CDF is linear so T = 2F - 1 exactly
    spline = t.interpolant()
    x = np.linspace(-0.95, 0.95, 101)
    defect = np.abs(rho_bar(spline(x)) * spline.derivative()(x) - rho(x))
    assert np.max(defect) <= 5e-3
    z = (np.array([-1.0, 1.0]) - 0.2) / np.sqrt(0.3)
    cdf = (norm.cdf((x - 0.2) / np.sqrt(0.3)) - norm.cdf(z[0])) / (norm.cdf(z[1]) - norm.cdf(z[0]))
    np.testing.assert_allclose(spline(x), 2 * cdf - 1, atol=1e-5)


def test_monotone_rejects_bad_arguments():
    rho = Density.uniform([[0.0, 1.0]])
    with pytest.raises(ValueError):
        solve_monotone_1d(rho, rho, 1)
    with pytest.raises(ValueError):
        solve_monotone_1d(Density.uniform([[0.0, 1.0]] * 3), rho, 8)


def test_potential_from_monotone_map_derivatives():
    t = solve_monotone_1d(Density.uniform([[0.0, 1.0]]), Density.uniform([[0.0, 2.0]]), 17)
    u = potential_from_monotone_map(t)
    x = np.array([0.4, 0.3, -0.2])
    np.testing.assert_allclose(u.grad(x), [0.8, 0.3, -0.2], atol=1e-6)
    np.testing.assert_allclose(u.hess(x), np.diag([2.0, 1.0, 1.0]), atol=1e-6)
    assert u(x) == pytest.approx(0.16 + 0.5 * (0.09 + 0.04), abs=1e-6)


# -- Monge-Ampere residual on grids ---------------------------------------------------


def test_identity_potential_residual_vanishes():
    rho = Density.truncated_gaussian([[-1.0, 1.0]], [0.1], [[0.5]])
    s = embedded(rho, rho)
    summary = el_residual_grid(s, ScalarField.quadratic(np.eye(3)), line_grid(-1, 1, 50))
    assert summary.max_abs <= 1e-10
    assert summary.in_support.all() and not summary.failures


def test_monotone_potential_residual_decreases_with_grid():
    rho = Density.truncated_gaussian([[-1.0, 1.0]], [0.2], [[0.3]])
    rho_bar = Density.truncated_gaussian([[-1.0, 1.0]], [-0.1], [[0.5]])
    s = embedded(rho, rho_bar)
    grid = line_grid(-1, 1, 200)
    res = [el_residual_grid(s, potential_from_monotone_map(solve_monotone_1d(rho, rho_bar, n)), grid).max_abs
           for n in (64, 128, 256)]
    assert res[-1] <= 5e-3
    assert res[0] / res[1] >= 1.8 and res[1] / res[2] >= 1.8


def test_non_optimal_potential_has_large_residual(rng):
    rho = Density.truncated_gaussian([[-1.0, 1.0]], [0.2], [[0.3]])
    s = embedded(rho, Density.uniform([[-1.0, 1.0]]))
    m = rng.normal(size=(3, 3))
    u = ScalarField.quadratic(m @ m.T + np.eye(3))
    assert el_residual_grid(s, u, line_grid(-0.1, 0.1, 20)).max_abs > 0.1


def test_residual_grid_records_failures():
    rho = Density.uniform([[0.0, 1.0]])
    s = embedded(rho, rho)
    u = ScalarField(lambda x: 0.5 * x @ x, box=[[0.0, 1.0]] * 3)
    summary = el_residual_grid(s, u, [[0.5, 0.0, 0.0], [0.0, 0.5, 0.5]])
    assert 1 in summary.failures or 0 in summary.failures
    assert np.isnan(summary.residuals[list(summary.failures)]).all()


# -- point files --------------------------------------------------------------------


def test_load_points(tmp_path):
    f = tmp_path / "pts.txt"
    f.write_text("# x y z w\n0 0 0 1\n1, 2, 3, 3  # comment\n\n")
    xs, w = load_points(f)
    np.testing.assert_array_equal(xs, [[0, 0, 0], [1, 2, 3]])
    np.testing.assert_array_equal(w, [0.25, 0.75])


@pytest.mark.parametrize("text", ["", "0 0 0 -1\n", "0 0 0 1\n0 0 1\n", "a b c d\n"])
def test_load_points_rejects_malformed(tmp_path, text):
    f = tmp_path / "bad.txt"
    f.write_text(text)
    with pytest.raises(ValueError):
        load_points(f)


def test_sinkhorn_identical_point_sets(rng):
    # the identity coupling is optimal; the entropic primal stays within eps log N of it
    xs = rng.uniform(-1, 1, (10, 3))
    p = DiscreteOTProblem.from_cost(CostFunction.quadratic(), xs, xs)
    optimum = float(np.trace(p.cost_matrix)) / 10
    res = sinkhorn(p, 0.1, tol=1e-10)
    primal = float(np.sum(res.plan.coupling * p.cost_matrix))
    assert optimum <= primal <= optimum + 0.1 * np.log(10) + 1e-6
