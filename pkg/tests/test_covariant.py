import pytest
import numpy as np
import sys
import os

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.geometry.manifolds import ChartPoint, TangentVec, Euclidean, Sphere
from src.geometry.covariant import covariant_derivative_along, parallel_transport, covariant_integral
from src.curves.discrete_curve import ChartCurve, TimeGrid


def circle_curve(manifold, M, radius=0.8, turns=3.0):
    grid = TimeGrid(M)
    t = grid.nodes
    coords = radius * np.column_stack([np.cos(turns * t), np.sin(turns * t)])
    return ChartCurve(grid, coords, manifold)


def g_norms(manifold, curve, field):
    g = manifold.metric_field(curve.coords)
    return np.sqrt(np.einsum('na,nab,nb->n', field, g, field))


class TestCovariant:
    """Test cases for covariant differentiation and integration along curves"""

    @pytest.fixture
    def sphere(self):
        return Sphere()

    @pytest.fixture
    def plane(self):
        return Euclidean(2)

    def test_euclidean_derivative_of_linear_field(self, plane):
        curve = circle_curve(plane, 50)
        field = np.outer(curve.times, [1.0, 0.0])
        derivative = covariant_derivative_along(plane, curve, field)
        np.testing.assert_allclose(derivative, np.tile([1.0, 0.0], (51, 1)), atol=1e-12)

    def test_euclidean_transport_is_constant(self, plane):
        curve = circle_curve(plane, 40)
        moved = parallel_transport(plane, curve, np.array([0.3, -1.2]))
        np.testing.assert_allclose(moved, np.tile([0.3, -1.2], (41, 1)), atol=1e-14)

        zero = parallel_transport(plane, curve, np.zeros(2))
        assert not np.any(zero)

    def test_euclidean_integral_of_constant(self, plane):
        curve = circle_curve(plane, 40)
        mu = covariant_integral(plane, curve, np.tile([1.0, 0.0], (41, 1)))
        np.testing.assert_allclose(mu[:, 0], curve.times, atol=1e-13)
        np.testing.assert_allclose(mu[:, 1], 0.0, atol=1e-13)

    def test_sphere_transport_preserves_norm(self, sphere):
        curve = circle_curve(sphere, 1000)
        x0 = curve.coords[0]
        start = np.array([0.0, 1.0]) / np.sqrt(sphere.metric(x0)[0, 0])
        moved = parallel_transport(sphere, curve, TangentVec(ChartPoint(x0), start))
        norms = g_norms(sphere, curve, moved)
        assert np.max(np.abs(norms - 1.0)) <= 1e-8

    def test_sphere_transport_preserves_frame_gram(self, sphere):
        curve = circle_curve(sphere, 1000)
        frame = parallel_transport(sphere, curve, np.eye(2))
        g = sphere.metric_field(curve.coords)
        gram = np.einsum('nam,nab,nbl->nml', frame, g, frame)
        np.testing.assert_allclose(gram, np.broadcast_to(g[0], gram.shape), atol=1e-8)

    def test_transported_field_is_parallel_to_second_order(self, sphere):
        defects = []
        for M in (100, 200):
            curve = circle_curve(sphere, M)
            moved = parallel_transport(sphere, curve, np.array([0.2, 0.5]))
            defects.append(np.max(g_norms(sphere, curve, covariant_derivative_along(sphere, curve, moved))))
        assert defects[0] / defects[1] >= 3.0

    def test_integral_round_trip_converges(self, sphere):
        errors = []
        for M in (50, 100):
            curve = circle_curve(sphere, M)
            t = curve.times
            eta = np.column_stack([np.sin(t), np.cos(2.0 * t)])
            mu = covariant_integral(sphere, curve, eta)
            np.testing.assert_array_equal(mu[0], 0.0)
            back = covariant_derivative_along(sphere, curve, mu)
            errors.append(np.max(np.abs(back - eta)[1:-1]))
        assert errors[0] / errors[1] >= 3.0

    def test_transport_rejects_foreign_base_point(self, sphere):
        curve = circle_curve(sphere, 20)
        with pytest.raises(ValueError):
            parallel_transport(sphere, curve, TangentVec(ChartPoint([0.0, 0.0]), [1.0, 0.0]))

    def test_integral_rejects_wrong_shape(self, sphere):
        curve = circle_curve(sphere, 20)
        with pytest.raises(ValueError):
            covariant_integral(sphere, curve, np.zeros((5, 2)))


if __name__ == "__main__":
    pytest.main([__file__])
