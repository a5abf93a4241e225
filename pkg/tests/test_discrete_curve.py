import pytest
import numpy as np
import sys
import os

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core.errors import GridError, InfeasibleGridError, ProblemValidationError
from src.geometry.manifolds import Euclidean, FlatCylinder, Sphere
from src.curves.problem import InterpolationProblem
from src.curves.stencils import (
    first_difference, second_difference, first_difference_matrix, second_difference_matrix,
)
from src.curves.quadrature import EnergyQuadrature, central_coefficients
from src.curves.discrete_curve import (
    TimeGrid, ChartCurve, ConstraintMap, velocity, acceleration, spline_energy, path_energy,
    energy_and_gradient, energy_gradient, initial_curve, suggest_grid_size,
)


def curve_from(manifold, M, fn):
    grid = TimeGrid(M)
    return ChartCurve(grid, fn(grid.nodes), manifold)


def two_knot_problem(manifold, start, end, v=None, path_weight=0.0):
    return InterpolationProblem(
        manifold=manifold,
        order=2,
        knot_times=[0.0, 1.0],
        knot_points=[start, end],
        velocity_site=None if v is None else 0,
        prescribed={} if v is None else {1: v},
        path_weight=path_weight,
    )


class TestStencils:
    """Test cases for the difference stencils"""

    @pytest.fixture
    def values(self):
        return np.random.default_rng(3).normal(size=(12, 2))

    def test_matrices_match_stencils(self, values):
        h = 0.1
        np.testing.assert_allclose(first_difference_matrix(12, h) @ values, first_difference(values, h))
        np.testing.assert_allclose(second_difference_matrix(12, h) @ values, second_difference(values, h))

    def test_exact_on_quadratics(self):
        t = np.linspace(0.0, 1.0, 9)
        h = t[1] - t[0]
        x = 3.0 * t ** 2 - t + 2.0
        np.testing.assert_allclose(first_difference(x, h), 6.0 * t - 1.0, atol=1e-12)
        np.testing.assert_allclose(second_difference(x, h), 6.0, atol=1e-10)


class TestEnergyQuadrature:
    """Test cases for the closed energy quadrature"""

    def test_central_coefficients(self):
        np.testing.assert_array_equal(central_coefficients(2), [1.0, -2.0, 1.0])
        np.testing.assert_array_equal(central_coefficients(3), [-1.0, 3.0, -3.0, 1.0])

    def test_natural_ends_add_no_rows(self):
        M, h = 8, 1.0 / 8
        quadrature = EnergyQuadrature.closed(M, h, 1, 2)
        assert quadrature.n_rows == M - 1
        np.testing.assert_array_equal(quadrature.base, np.arange(1, M))
        np.testing.assert_allclose(quadrature.weights, h)

    def test_ghost_row_at_start_velocity_site(self):
        M, h = 8, 1.0 / 8
        v = np.array([0.7, -0.4])
        quadrature = EnergyQuadrature.closed(M, h, 2, 2, site=0, derivatives={1: v})
        X = np.random.default_rng(2).normal(size=(M + 1, 2))
        q = int(np.flatnonzero(quadrature.base == 0)[0])
        row = (quadrature.D @ X + quadrature.offset)[q]
        np.testing.assert_allclose(row, 2.0 * (X[1] - X[0] - h * v) / h ** 2, atol=1e-10)
        np.testing.assert_allclose((quadrature.Dv @ X + quadrature.velocity_offset)[q], v, atol=1e-12)
        assert quadrature.weights[q] == h / 2.0

    def test_interior_site_splits_the_centred_row(self):
        M, h = 8, 1.0 / 8
        quadrature = EnergyQuadrature.closed(M, h, 1, 2, site=4, derivatives={1: np.array([1.0])})
        assert quadrature.n_rows == M
        assert np.sum(quadrature.base == 4) == 2
        np.testing.assert_allclose(quadrature.weights[quadrature.base == 4], h / 2.0)
        assert abs(quadrature.weights.sum() - (M - 1) * h) <= 1e-15

    def test_quadratic_data_close_third_order_rows(self):
        M, h = 10, 0.1
        t = np.linspace(0.0, 1.0, M + 1)
        quadrature = EnergyQuadrature.closed(M, h, 1, 3, site=0, derivatives={1: np.zeros(1), 2: np.array([2.0])})
        assert quadrature.n_rows == M - 1
        assert quadrature.Dv is None
        rows = quadrature.D @ (t ** 2)[:, None] + quadrature.offset
        np.testing.assert_allclose(rows, 0.0, atol=1e-8)

    def test_no_rows_on_a_short_grid(self):
        with pytest.raises(ValueError):
            EnergyQuadrature.closed(2, 0.5, 1, 3)


class TestDiscreteCurve:
    """Test cases for discrete curves, energies and constraints"""

    @pytest.fixture
    def rng(self):
        return np.random.default_rng(11)

    @pytest.fixture
    def plane(self):
        return Euclidean(2)

    def test_grid_nodes_and_index(self):
        grid = TimeGrid(8)
        assert grid.n_nodes == 9
        assert grid.index_of(0.375) == 3
        with pytest.raises(GridError) as excinfo:
            grid.index_of(1.0 / 3.0)
        assert excinfo.value.suggested_grid == 9

    def test_grid_requires_two_steps(self):
        with pytest.raises(GridError):
            TimeGrid(1)

    def test_curve_coordinates_are_copied_and_frozen(self, plane):
        coords = np.zeros((5, 2))
        curve = ChartCurve(TimeGrid(4), coords, plane)
        coords[0, 0] = 1.0
        assert curve.coords[0, 0] == 0.0
        with pytest.raises(ValueError):
            curve.coords[0, 0] = 2.0

    def test_curve_shape_is_checked(self, plane):
        with pytest.raises(ValueError):
            ChartCurve(TimeGrid(4), np.zeros((4, 2)), plane)

    def test_velocity_exact_for_quadratic(self):
        curve = curve_from(Euclidean(1), 20, lambda t: t ** 2)
        np.testing.assert_allclose(velocity(curve)[:, 0], 2.0 * curve.times, atol=1e-10)

    def test_velocity_second_order(self):
        errors = []
        for M in (32, 64):
            curve = curve_from(Euclidean(1), M, lambda t: t ** 3)
            errors.append(np.max(np.abs(velocity(curve)[:, 0] - 3.0 * curve.times ** 2)))
        assert 3.0 <= errors[0] / errors[1] <= 5.0

    def test_straight_line_has_zero_energy(self, plane):
        curve = curve_from(plane, 64, lambda t: np.outer(t, [0.3, -0.7]) + [1.0, 2.0])
        assert spline_energy(curve) <= 1e-20
        np.testing.assert_allclose(acceleration(curve), 0.0, atol=1e-9)

    def test_parabola_energy(self):
        curve = curve_from(Euclidean(1), 64, lambda t: t ** 2)
        assert abs(spline_energy(curve) - 2.0) <= 1e-9

    def test_cubic_energy(self):
        curve = curve_from(Euclidean(1), 256, lambda t: 1.5 * t ** 2 - 0.5 * t ** 3)
        assert abs(spline_energy(curve) - 1.5) <= 1e-4

    def test_closed_energy_of_clamped_cubic(self):
        problem = two_knot_problem(Euclidean(1), [0.0], [1.0], v=[0.0])
        for M in (16, 64):
            h = 1.0 / M
            curve = curve_from(Euclidean(1), M, lambda t: 1.5 * t ** 2 - 0.5 * t ** 3)
            expected = 1.5 - 0.75 * h ** 2 + 0.25 * h ** 3
            assert abs(spline_energy(curve, problem=problem) - expected) <= 1e-12

    def test_energy_refinement_order(self):
        exact = 4.0 - np.sin(4.0)
        errors = []
        for M in (64, 128):
            curve = curve_from(Euclidean(1), M, lambda t: np.sin(2.0 * t))
            errors.append(abs(spline_energy(curve) - exact))
        order = np.log2(errors[0] / errors[1])
        assert 1.7 <= order <= 2.3

    def test_path_energy_of_line(self):
        curve = curve_from(Euclidean(1), 16, lambda t: 2.0 * t)
        assert abs(path_energy(curve) - 4.0) <= 1e-12
        assert abs(spline_energy(curve, path_weight=0.5) - 2.0) <= 1e-9

    def test_energy_reversal_invariance(self, rng):
        sphere = Sphere()
        coords = 0.3 * rng.normal(size=(17, 2)) + np.linspace([0.0, 0.0], [1.0, 0.5], 17)
        curve = ChartCurve(TimeGrid(16), coords, sphere)
        forward = spline_energy(curve, path_weight=0.2)
        backward = spline_energy(curve.reversed(), path_weight=0.2)
        assert abs(forward - backward) <= 1e-12 * abs(forward)

    @pytest.mark.parametrize('manifold', [Euclidean(2), FlatCylinder(), Sphere()], ids=['plane', 'cylinder', 'sphere'])
    @pytest.mark.parametrize('path_weight', [0.0, 0.3])
    def test_gradient_matches_finite_differences(self, manifold, path_weight, rng):
        M = 16
        problem = two_knot_problem(manifold, [0.1, -0.2], [0.8, 0.4], v=[0.5, 0.3], path_weight=path_weight)
        constraints = ConstraintMap(problem, TimeGrid(M))
        step = 1e-6
        for _ in range(20):
            base = initial_curve(problem, M).coords + 0.2 * rng.normal(size=(M + 1, 2))
            z = constraints.restrict(base)

            def energy(vec):
                return energy_and_gradient(
                    constraints.expand(vec), constraints.quadrature, manifold, path_weight, with_gradient=False
                )[0]

            _, G = energy_and_gradient(constraints.expand(z), constraints.quadrature, manifold, path_weight)
            analytic = constraints.reduce_gradient(G)
            numeric = np.zeros_like(z)
            for i in range(z.size):
                e = np.zeros_like(z)
                e[i] = step
                numeric[i] = (energy(z + e) - energy(z - e)) / (2 * step)
            scale = np.max(np.abs(analytic))
            assert np.max(np.abs(numeric - analytic)) <= 1e-5 * scale

    def test_constrained_nodes_have_zero_gradient(self, plane, rng):
        problem = two_knot_problem(plane, [0.0, 0.0], [1.0, 1.0], v=[1.0, 0.0])
        curve = initial_curve(problem, 20)
        noisy = ChartCurve(curve.grid, curve.coords + 0.1 * rng.normal(size=curve.coords.shape), plane)
        G = energy_gradient(noisy, problem)
        constraints = ConstraintMap(problem, curve.grid)
        assert not np.any(G[~constraints.free_mask])
        assert np.any(G[constraints.free_mask])

    def test_exact_cubic_is_critical_away_from_ends(self):
        M = 64
        problem = two_knot_problem(Euclidean(1), [0.0], [1.0], v=[0.0])
        curve = curve_from(Euclidean(1), M, lambda t: 1.5 * t ** 2 - 0.5 * t ** 3)
        G = energy_gradient(curve, problem)
        assert np.max(np.abs(G[4:M - 3])) <= 1e-8

    def test_initial_curve_without_velocity_is_linear(self):
        problem = two_knot_problem(Euclidean(1), [0.0], [1.0])
        curve = initial_curve(problem, 10)
        np.testing.assert_allclose(curve.coords[:, 0], curve.times, atol=1e-15)

    def test_initial_curve_hits_knots_and_velocity(self):
        problem = InterpolationProblem(
            manifold=Euclidean(1), order=2, knot_times=[0.0, 0.3, 1.0], knot_points=[[0.0], [2.0], [1.0]],
            velocity_site=0, prescribed={1: [0.5]},
        )
        curve = initial_curve(problem, 10)
        assert curve.coords[3, 0] == 2.0
        assert curve.coords[0, 0] == 0.0
        forward = (-3.0 * curve.coords[0] + 4.0 * curve.coords[1] - curve.coords[2]) / (2.0 * curve.h)
        assert abs(forward[0] - 0.5) <= 1e-14
        assert ConstraintMap(problem, curve.grid).velocity_residual(curve.coords) <= 1e-14

    def test_interior_velocity_site_eliminates_both_neighbours(self, plane):
        problem = InterpolationProblem(
            manifold=plane, order=2, knot_times=[0.0, 0.5, 1.0], knot_points=[[0, 0], [1, 1], [2, 0]],
            velocity_site=1, prescribed={1: [2.0, 0.0]},
        )
        constraints = ConstraintMap(problem, TimeGrid(16))
        assert sorted(e.node for e in constraints.eliminations) == [7, 9]
        assert constraints.free_nodes.size == 17 - 5

    def test_suggest_grid_size(self):
        assert suggest_grid_size([0.0, 1.0 / 3.0, 0.5, 1.0]) == 6
        assert suggest_grid_size([0.0, 1.0 / 3.0, 0.5, 1.0], at_least=100) == 102
        with pytest.raises(GridError):
            suggest_grid_size([0.0, np.sqrt(2.0) / 2.0, 1.0])

    def test_knot_off_grid_suggests_a_grid(self, plane):
        problem = InterpolationProblem(
            manifold=plane, order=2, knot_times=[0.0, 1.0 / 3.0, 1.0], knot_points=[[0, 0], [1, 1], [2, 0]],
        )
        with pytest.raises(GridError) as excinfo:
            initial_curve(problem, 10)
        assert excinfo.value.suggested_grid == 12

    def test_velocity_elimination_colliding_with_knot(self, plane):
        problem = InterpolationProblem(
            manifold=plane, order=2, knot_times=[0.0, 0.25, 1.0], knot_points=[[0, 0], [1, 1], [2, 0]],
            velocity_site=0, prescribed={1: [1.0, 0.0]},
        )
        with pytest.raises(InfeasibleGridError) as excinfo:
            ConstraintMap(problem, TimeGrid(4))
        assert excinfo.value.suggested_grid == 8

    def test_problem_validation_lists_every_issue(self, plane):
        with pytest.raises(ProblemValidationError) as excinfo:
            InterpolationProblem(
                manifold=plane, order=2, knot_times=[0.0, 0.5, 0.5, 0.9], knot_points=np.zeros((4, 2)),
                velocity_site=7, prescribed={1: [1.0, 0.0]},
            )
        fields = [loc for loc, _ in excinfo.value.locations]
        assert 'velocity.site' in fields
        assert any(loc.startswith('knots') for loc in fields)


if __name__ == "__main__":
    pytest.main([__file__])
