import numpy as np
import logging
from typing import Union
from scipy.interpolate import CubicSpline
from src.geometry.manifolds import ManifoldModel, TangentVec
from src.curves.discrete_curve import ChartCurve, velocity
from src.curves.stencils import first_difference

logger = logging.getLogger(__name__)


def covariant_derivative_along(manifold: ManifoldModel, curve: ChartCurve, field: np.ndarray) -> np.ndarray:
    """
    (D_t v)^k = dv^k/dt + Gamma^k_ij x'^i v^j at every node.

    Args:
        manifold: model of the curve
        curve: discrete curve carrying the field
        field: (n, dim) components, or (n, dim, m) for a frame of m fields

    Returns:
        Array of the same shape as field
    """
    field = np.asarray(field, dtype=float)
    if field.shape[0] != curve.grid.n_nodes:
        raise ValueError(f"Field has {field.shape[0]} nodes, curve has {curve.grid.n_nodes}")
    derivative = first_difference(field, curve.h)
    if manifold.is_flat:
        return derivative
    gamma = manifold.christoffel_field(curve.coords)
    V = velocity(curve)
    if field.ndim == 2:
        return derivative + np.einsum('nkij,ni,nj->nk', gamma, V, field)
    return derivative + np.einsum('nkij,ni,njm->nkm', gamma, V, field)


def _covariant_ode(manifold: ManifoldModel, curve: ChartCurve, source: np.ndarray, start: np.ndarray) -> np.ndarray:
    """
    Classical RK4 for mu' = source - Gamma(x)(x', mu) along the cubic interpolant of the nodes.

    Midpoint values of the curve, its velocity and the source come from cubic
    splines through the node values, which keeps the stepping error at O(h^4).
    """
    times = curve.times
    h = curve.h
    n = times.size
    mu = np.zeros((n,) + start.shape)
    mu[0] = start

    flat = manifold.is_flat
    if flat:
        gamma_n = gamma_m = None
        vel_n = vel_m = None
    else:
        path = CubicSpline(times, curve.coords, axis=0)
        midpoints = times[:-1] + h / 2.0
        gamma_n = manifold.christoffel_field(curve.coords)
        gamma_m = manifold.christoffel_field(path(midpoints))
        vel_n = path(times, 1)
        vel_m = path(midpoints, 1)

    has_source = source is not None
    if has_source:
        src = CubicSpline(times, source, axis=0)
        src_n = source
        src_m = src(times[:-1] + h / 2.0)

    def rhs(y, gamma, vel, s):
        out = np.zeros_like(y) if s is None else (s if y.ndim == 1 else s[:, None] * np.ones_like(y))
        if gamma is None:
            return out
        if y.ndim == 1:
            return out - np.einsum('kij,i,j->k', gamma, vel, y)
        return out - np.einsum('kij,i,jm->km', gamma, vel, y)

    for step in range(n - 1):
        g0 = g1 = gm = None
        v0 = v1 = vm = None
        if not flat:
            g0, gm, g1 = gamma_n[step], gamma_m[step], gamma_n[step + 1]
            v0, vm, v1 = vel_n[step], vel_m[step], vel_n[step + 1]
        s0 = sm = s1 = None
        if has_source:
            s0, sm, s1 = src_n[step], src_m[step], src_n[step + 1]
        y = mu[step]
        k1 = rhs(y, g0, v0, s0)
        k2 = rhs(y + 0.5 * h * k1, gm, vm, sm)
        k3 = rhs(y + 0.5 * h * k2, gm, vm, sm)
        k4 = rhs(y + h * k3, g1, v1, s1)
        mu[step + 1] = y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    return mu


def parallel_transport(manifold: ManifoldModel, curve: ChartCurve,
                       v0: Union[TangentVec, np.ndarray]) -> np.ndarray:
    """
    Solve D_t v = 0 from the start of the curve.

    v0 may be a TangentVec, a component vector (dim,) or a frame (dim, m);
    the result has one row per node.
    """
    if isinstance(v0, TangentVec):
        if not np.allclose(v0.base.coords, curve.coords[0]):
            raise ValueError("Transported vector must be based at the start of the curve")
        start = v0.comp
    else:
        start = np.asarray(v0, dtype=float)
    if start.shape[0] != manifold.dim:
        raise ValueError(f"Vector has {start.shape[0]} components, manifold has dimension {manifold.dim}")
    return _covariant_ode(manifold, curve, None, start)


def covariant_integral(manifold: ManifoldModel, curve: ChartCurve, eta: np.ndarray) -> np.ndarray:
    """mu with mu(start) = 0 and D_t mu = eta"""
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (curve.grid.n_nodes, manifold.dim):
        raise ValueError(f"Source field has shape {eta.shape}, expected {(curve.grid.n_nodes, manifold.dim)}")
    return _covariant_ode(manifold, curve, eta, np.zeros(manifold.dim))
