import pytest
import numpy as np
import sys
import os

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core.errors import GridError
from src.geometry.manifolds import Euclidean, Sphere
from src.curves.problem import InterpolationProblem
from src.curves.discrete_curve import ChartCurve, TimeGrid
from src.exact.polyspline import exact_solver
from src.optimization.energy_optimizer import energy_optimizer, OptimizerOptions
from src.verification.spline_verifier import (
    el_residual, junction_report, dubois_structure_fit, dubois_structure_check, reversal_check, verify,
)


def cubic_problem():
    return InterpolationProblem(
        manifold=Euclidean(1), order=2, knot_times=[0.0, 1.0], knot_points=[[0.0], [1.0]],
        velocity_site=0, prescribed={1: [0.0]},
    )


def three_knot_problem(site=0):
    return InterpolationProblem(
        manifold=Euclidean(2), order=2, knot_times=[0.0, 0.5, 1.0],
        knot_points=[[0.0, 0.0], [1.0, 0.5], [1.5, -0.5]],
        velocity_site=site, prescribed={1: [2.0, 1.0]},
    )


def sampled(fn, M, manifold):
    grid = TimeGrid(M)
    return ChartCurve(grid, fn(grid.nodes), manifold)


def great_circle(M, omega=1.5):
    # Chart radius tan(s/2) at arc length s traces a geodesic through the origin
    direction = np.array([0.6, 0.8])
    return sampled(lambda t: np.outer(np.tan(omega * t / 2.0), direction), M, Sphere())


class TestVerification:
    """Test cases for the solution certificates"""

    @pytest.fixture
    def exact_cubic(self):
        return exact_solver.solve_exact(cubic_problem())

    def test_exact_polynomial_passes(self, exact_cubic):
        report = verify(exact_cubic, cubic_problem())
        assert report.source == 'polynomial'
        assert report.passed(1e-8)
        assert report.reversal_difference <= 1e-12
        data = report.to_dict()
        assert data['grid_M'] is None
        assert len(data['el_residual_max']) == 1

    def test_sampled_cubic_has_small_residual(self):
        curve = sampled(lambda t: (1.5 * t ** 2 - 0.5 * t ** 3)[:, None], 32, Euclidean(1))
        residuals = el_residual(curve, problem=cubic_problem())
        assert len(residuals) == 1
        assert residuals[0]['sup'] <= 1e-7
        assert residuals[0]['times'][0] > 0.0

    def test_residual_needs_enough_nodes(self):
        curve = sampled(lambda t: t[:, None], 6, Euclidean(1))
        with pytest.raises(GridError):
            el_residual(curve)

    def test_geodesic_residual_converges(self):
        sups = [el_residual(great_circle(M))[0]['sup'] for M in (64, 128)]
        assert sups[0] / sups[1] >= 3.0

    def test_residual_on_eight_steps_per_interval(self):
        problem = three_knot_problem()
        curve = exact_solver.solve_exact(problem).sample(16)
        residuals = el_residual(curve, problem=problem)
        assert [r['interval'] for r in residuals] == [0, 1]
        assert max(r['sup'] for r in residuals) <= 1e-6

    def test_residual_on_ten_steps_per_interval(self):
        problem = three_knot_problem()
        curve = exact_solver.solve_exact(problem).sample(20)
        residuals = el_residual(curve, problem=problem)
        assert len(residuals) == 2
        assert residuals[0]['times'][0] == pytest.approx(3.0 / 20)
        assert residuals[1]['times'][0] == pytest.approx(12.0 / 20)

    def test_third_order_minimizer_report(self):
        problem = cubic_problem().with_order(3, prescribed={1: [0.0], 2: [0.0]})
        opts = OptimizerOptions.from_config(tol_grad=1e-9, max_iter=500)
        curve, report = energy_optimizer.minimize(problem, 64, opts)
        assert report.converged
        result = verify(curve, problem)
        assert result.structure_residual == []
        assert result.junction_jumps == []
        assert [n['knot'] for n in result.natural_values] == [1]
        assert result.natural_values[0]['value'] <= 1e-2

    def test_structure_of_flat_cubic(self):
        curve = sampled(lambda t: (1.5 * t ** 2 - 0.5 * t ** 3)[:, None], 64, Euclidean(1))
        fit = dubois_structure_fit(curve)
        assert fit.relative
        assert fit.misfit <= 1e-10
        np.testing.assert_allclose(fit.nu0, [3.0], atol=1e-8)
        np.testing.assert_allclose(fit.zeta0, [-3.0], atol=1e-8)

    def test_structure_rejects_non_spline(self):
        curve = sampled(lambda t: np.sin(6.0 * t)[:, None], 64, Euclidean(1))
        assert dubois_structure_check(curve) > 1e-3

    def test_sphere_minimizer_certificates_improve_with_grid(self):
        problem = InterpolationProblem(
            manifold=Sphere(), order=2, knot_times=[0.0, 1.0], knot_points=[[0.0, 0.0], [0.6, 0.3]],
            velocity_site=0, prescribed={1: [0.5, -0.4]},
        )
        opts = OptimizerOptions.from_config(tol_grad=1e-10, max_iter=3000)
        residuals, misfits = [], []
        for M in (32, 64, 128):
            curve, report = energy_optimizer.minimize(problem, M, opts)
            assert report.converged
            residuals.append(el_residual(curve, problem=problem)[0]['sup'])
            misfits.append(dubois_structure_check(curve))
        assert misfits[0] / misfits[1] >= 3.0
        assert misfits[1] / misfits[2] >= 3.0
        assert residuals[1] / residuals[2] >= 3.0

    def test_reversal_of_discrete_curve(self):
        curve = sampled(lambda t: np.column_stack([t ** 3, np.cos(t)]), 40, Euclidean(2))
        assert reversal_check(curve) <= 1e-10

    def test_sampled_spline_has_no_junction_jump(self):
        problem = three_knot_problem()
        curve = exact_solver.solve_exact(problem).sample(64)
        jumps, naturals = junction_report(curve, problem)
        assert [j['knot'] for j in jumps] == [1]
        assert jumps[0]['jump'] <= 1e-7
        assert [n['knot'] for n in naturals] == [2]
        assert naturals[0]['value'] <= 1e-7
        assert max(r['sup'] for r in el_residual(curve, problem=problem)) <= 1e-5

    def test_interior_velocity_site_is_flagged(self):
        problem = three_knot_problem(site=1)
        poly = exact_solver.solve_exact(problem)
        report = verify(poly, problem)
        assert report.junction_jumps[0]['velocity_site']
        assert report.junction_jumps[0]['jump'] > 1e-6
        assert [n['knot'] for n in report.natural_values] == [0, 2]
        assert report.passed(1e-8)


if __name__ == "__main__":
    pytest.main([__file__])
