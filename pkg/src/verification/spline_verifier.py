import numpy as np
import logging
from math import factorial
from numpy.polynomial import polynomial as P
from typing import Dict, List, Optional, Tuple, Union
from dataclasses import dataclass
from src.core.errors import GridError
from src.geometry.manifolds import ManifoldModel
from src.geometry.covariant import parallel_transport, covariant_integral
from src.curves.problem import InterpolationProblem
from src.curves.discrete_curve import (
    ChartCurve, acceleration, velocity, spline_energy, knot_node_indices,
)
from src.curves.stencils import central_difference, trapezoid_weights
from src.curves.quadrature import central_coefficients
from src.exact.polyspline import PiecewisePolynomial, exact_energy

logger = logging.getLogger(__name__)

Solution = Union[ChartCurve, PiecewisePolynomial]

MIN_STEPS_PER_INTERVAL = 8
RESIDUAL_MARGIN = 2
# The site node sits off the discrete solution by O(h^3) once its neighbours are eliminated
ELIMINATION_MARGIN = 3
FIT_TRIM = 2
STRUCTURE_SAMPLES = 64


@dataclass
class StructureFit:
    misfit: float
    nu0: np.ndarray
    zeta0: np.ndarray
    relative: bool = True


@dataclass
class VerificationReport:
    el_residual_max: List[float]
    junction_jumps: List[Dict]
    natural_values: List[Dict]
    structure_residual: List[float]
    reversal_difference: float
    grid_h: Optional[float] = None
    grid_M: Optional[int] = None
    source: str = 'discrete'

    def passed(self, tol: float = 1e-8) -> bool:
        """True when every certified quantity is within tol"""
        checks = list(self.el_residual_max) + list(self.structure_residual)
        checks += [j['jump'] for j in self.junction_jumps if not j['velocity_site']]
        checks += [n['value'] for n in self.natural_values]
        return all(value <= tol for value in checks)

    def to_dict(self) -> Dict:
        return {
            'source': self.source,
            'grid_M': self.grid_M,
            'grid_h': self.grid_h,
            'el_residual_max': [float(v) for v in self.el_residual_max],
            'junction_jumps': self.junction_jumps,
            'natural_values': self.natural_values,
            'structure_residual': [float(v) for v in self.structure_residual],
            'reversal_difference': float(self.reversal_difference),
        }


def _g_norm(manifold: ManifoldModel, X: np.ndarray, W: np.ndarray) -> np.ndarray:
    g = manifold.metric_field(X)
    return np.sqrt(np.maximum(np.einsum('na,nab,nb->n', W, g, W), 0.0))


def _interval_nodes(curve: ChartCurve, problem: Optional[InterpolationProblem]) -> List[Tuple[int, int]]:
    if problem is None:
        return [(0, curve.grid.M)]
    nodes = knot_node_indices(problem, curve.grid)
    return list(zip(nodes[:-1], nodes[1:]))


def _site_node(curve: ChartCurve, problem: Optional[InterpolationProblem]) -> Optional[int]:
    if problem is None or not problem.has_velocity:
        return None
    return knot_node_indices(problem, curve.grid)[problem.velocity_site]


def el_profile(curve: ChartCurve, margins: Tuple[int, int] = (RESIDUAL_MARGIN, RESIDUAL_MARGIN),
               order: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """
    |D_t^3 x' + R(D_t x', x') x'|_g on the nodes at least `margins` steps from the two ends.

    D_t^2 of the acceleration A is expanded as
        A'' + (Gamma(x', A))' + Gamma(x', A' + Gamma(x', A))
    with A'' a compact second difference, so node i reads nodes i-2..i+2
    only and a profile never mixes values from both sides of a knot. For
    order k > 2 (flat) the residual is the 2k-th central difference.

    Returns:
        (times, residual norms)
    """
    X = curve.coords
    h = curve.h
    manifold = curve.manifold
    steps = X.shape[0] - 1
    reach = max(2, order)
    lo, hi = max(margins[0], reach), max(margins[1], reach)
    if steps < max(MIN_STEPS_PER_INTERVAL, lo + hi):
        raise GridError(f"Residual needs at least {max(MIN_STEPS_PER_INTERVAL, lo + hi)} steps per interval, got {steps}")

    if order > 2:
        stencil = central_coefficients(2 * order) / h ** (2 * order)
        residual = sum(c * X[j:j + steps + 1 - 2 * order] for j, c in enumerate(stencil))
        norms = np.linalg.norm(residual, axis=1)
        return curve.times[lo:steps - hi + 1], norms[lo - order:steps - hi + 1 - order]

    V = central_difference(X, h)
    A = (X[2:] - 2.0 * X[1:-1] + X[:-2]) / (h * h)
    residual = (A[2:] - 2.0 * A[1:-1] + A[:-2]) / (h * h)
    if not manifold.is_flat:
        gamma = manifold.christoffel_field(X[1:-1])
        A = A + np.einsum('nkij,ni,nj->nk', gamma, V, V)
        F = np.einsum('nkij,ni,nj->nk', gamma, V, A)
        DA = central_difference(A, h) + F[1:-1]
        residual = (A[2:] - 2.0 * A[1:-1] + A[:-2]) / (h * h) + central_difference(F, h)
        residual = residual + np.einsum('nkij,ni,nj->nk', gamma[1:-1], V[1:-1], DA)
        R = manifold.curvature_field(X[2:-2])
        residual = residual + np.einsum('nlijk,ni,nj,nk->nl', R, A[1:-1], V[1:-1], V[1:-1])
    norms = _g_norm(manifold, X[2:-2], residual)
    return curve.times[lo:steps - hi + 1], norms[lo - 2:steps - hi - 1]


def el_residual(solution: Solution, manifold: Optional[ManifoldModel] = None,
                problem: Optional[InterpolationProblem] = None) -> List[Dict]:
    """
    Per-interval sup of the Euler-Lagrange residual.

    Piecewise polynomials are checked analytically (the derivative of order
    2k of every piece); discrete curves through compact covariant
    differences inside every knot interval, keeping RESIDUAL_MARGIN steps
    from each knot and ELIMINATION_MARGIN steps from the velocity site.
    """
    if isinstance(solution, PiecewisePolynomial):
        k = solution.order
        out = []
        for i in range(solution.n_pieces):
            ts = np.linspace(solution.breakpoints[i], solution.breakpoints[i + 1], 17)[1:-1]
            values = np.linalg.norm(solution.eval(ts, 2 * k), axis=1)
            out.append({'interval': i, 'sup': float(values.max()), 'times': ts, 'profile': values})
        return out

    curve = solution
    if manifold is not None and manifold is not curve.manifold:
        curve = ChartCurve(curve.grid, curve.coords, manifold)
    order = problem.order if problem is not None else 2
    site = _site_node(curve, problem)
    out = []
    for i, (i0, i1) in enumerate(_interval_nodes(curve, problem)):
        margins = (
            ELIMINATION_MARGIN if i0 == site else RESIDUAL_MARGIN,
            ELIMINATION_MARGIN if i1 == site else RESIDUAL_MARGIN,
        )
        times, profile = el_profile(curve.restrict(i0, i1), margins, order)
        out.append({'interval': i, 'sup': float(profile.max()), 'times': times, 'profile': profile})
    return out


def _one_sided_acceleration(manifold: ManifoldModel, X: np.ndarray, node: int, h: float, side: str) -> np.ndarray:
    """D_t x' at a node from the four nodes on one side"""
    s = 1 if side == 'right' else -1
    x = [X[node + s * j] for j in range(4)]
    acc = (2.0 * x[0] - 5.0 * x[1] + 4.0 * x[2] - x[3]) / (h * h)
    vel = s * (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * h)
    if not manifold.is_flat:
        acc = acc + np.einsum('kij,i,j->k', manifold.christoffel(X[node]), vel, vel)
    return acc


def _local_derivatives(curve: ChartCurve, node: int, direction: int, limit: int, order: int) -> List[np.ndarray]:
    """Derivatives 1..2k-2 at a node from a degree 2k-1 least-squares fit on the nodes towards `limit`"""
    count = min(2 * order + 2, abs(limit - node) + 1)
    if count < 2 * order:
        raise GridError(f"Node {node} has only {count} nodes on one side for an order-{order} fit")
    u = np.arange(count)
    coef = P.polyfit(u, curve.coords[node + direction * u], 2 * order - 1)
    step = direction * curve.h
    return [factorial(j) * coef[j] / step ** j for j in range(1, 2 * order - 1)]


def _high_order_report(curve: ChartCurve, problem: InterpolationProblem) -> Tuple[List[Dict], List[Dict]]:
    k = problem.order
    site = problem.velocity_site
    N = problem.n_intervals
    nodes = knot_node_indices(problem, curve.grid)
    jumps, naturals = [], []
    for i in range(1, N):
        left = _local_derivatives(curve, nodes[i], -1, nodes[i - 1], k)
        right = _local_derivatives(curve, nodes[i], 1, nodes[i + 1], k)
        by_order = [float(np.linalg.norm(r - l)) for l, r in zip(left, right)]
        jumps.append({
            'knot': i, 't': float(curve.times[nodes[i]]), 'jump': by_order[1],
            'jumps_by_order': by_order, 'max_jump': max(by_order), 'velocity_site': i == site,
        })
    for e in (0, N):
        if e == site:
            continue
        inward = 1 if e == 0 else -1
        derivs = _local_derivatives(curve, nodes[e], inward, nodes[e + inward], k)
        value = max(float(np.linalg.norm(d)) for d in derivs[k - 1:])
        naturals.append({'knot': e, 't': float(curve.times[nodes[e]]), 'value': value})
    return jumps, naturals


def junction_report(solution: Solution, problem: InterpolationProblem) -> Tuple[List[Dict], List[Dict]]:
    """
    Jumps of D_t x' at interior knots and |D_t x'| where natural conditions apply.

    For piecewise polynomials, and for discrete curves of order k > 2 through
    local polynomial fits, every derivative order 1..2k-2 is measured and the
    natural value is the largest of the orders k..2k-2.

    Returns:
        (junction entries, natural-condition entries)
    """
    site = problem.velocity_site
    N = problem.n_intervals
    extremes = [e for e in (0, N) if e != site]
    jumps, naturals = [], []

    if isinstance(solution, PiecewisePolynomial):
        k = solution.order
        for i in range(1, N):
            by_order = [float(np.linalg.norm(solution.jump(i, order))) for order in range(1, 2 * k - 1)]
            jumps.append({
                'knot': i, 't': float(solution.breakpoints[i]), 'jump': by_order[1] if len(by_order) > 1 else 0.0,
                'jumps_by_order': by_order, 'max_jump': max(by_order), 'velocity_site': i == site,
            })
        for e in extremes:
            t = solution.breakpoints[e]
            value = max(float(np.linalg.norm(solution.eval(t, order))) for order in range(k, 2 * k - 1))
            naturals.append({'knot': e, 't': float(t), 'value': value})
        return jumps, naturals

    curve = solution
    if problem.order > 2:
        return _high_order_report(curve, problem)
    X = curve.coords
    h = curve.h
    manifold = curve.manifold
    nodes = knot_node_indices(problem, curve.grid)
    for i in range(1, N):
        node = nodes[i]
        if node < 3 or node > curve.grid.M - 3:
            raise GridError(f"Knot {i} is too close to an end of the grid for one-sided stencils")
        left = _one_sided_acceleration(manifold, X, node, h, 'left')
        right = _one_sided_acceleration(manifold, X, node, h, 'right')
        jump = float(np.sqrt((right - left) @ manifold.metric(X[node]) @ (right - left)))
        jumps.append({'knot': i, 't': float(curve.times[node]), 'jump': jump, 'velocity_site': i == site})
    A = acceleration(curve)
    for e in extremes:
        node = nodes[e]
        value = float(np.sqrt(A[node] @ manifold.metric(X[node]) @ A[node]))
        naturals.append({'knot': e, 't': float(curve.times[node]), 'value': value})
    return jumps, naturals


def dubois_structure_fit(curve: ChartCurve, manifold: Optional[ManifoldModel] = None,
                         interval: Optional[Tuple[int, int]] = None) -> StructureFit:
    """
    Fit D_t x' - eta = nu + t zeta with nu, zeta parallel along one knot interval.

    eta is the double covariant integral of R(x', D_t x') x'. The parallel
    fields come from transporting the coordinate basis, so the fit is a
    linear least-squares problem for (nu(t0), zeta(t0)) in the metric norm
    weighted by the trapezoid rule. The FIT_TRIM nodes at each end, whose
    acceleration comes from one-sided stencils or reads the velocity site,
    stay out of the fit.

    Args:
        curve: discrete curve
        manifold: overrides the curve's manifold when given
        interval: node range (i0, i1); the whole curve when omitted

    Returns:
        StructureFit with the relative misfit (absolute when the fitted field vanishes)
    """
    manifold = manifold or curve.manifold
    if interval is not None:
        curve = curve.restrict(*interval)
    if manifold is not curve.manifold:
        curve = ChartCurve(curve.grid, curve.coords, manifold)
    X = curve.coords
    n, dim = X.shape
    times = curve.times
    V = velocity(curve)
    A = acceleration(curve)

    if manifold.is_flat:
        eta = np.zeros_like(A)
    else:
        R = manifold.curvature_field(X)
        source = np.einsum('nlijk,ni,nj,nk->nl', R, V, A, V)
        eta = covariant_integral(manifold, curve, covariant_integral(manifold, curve, source))
    target = A - eta

    frame = parallel_transport(manifold, curve, np.eye(dim))
    weights = trapezoid_weights(n, curve.h)
    rows = slice(FIT_TRIM, n - FIT_TRIM) if n > 2 * FIT_TRIM + 2 else slice(0, n)
    X, times, frame, weights, target = X[rows], times[rows], frame[rows], weights[rows], target[rows]
    n = X.shape[0]
    g = manifold.metric_field(X)
    chol = np.linalg.cholesky(g)
    scale = np.sqrt(weights)[:, None, None] * np.transpose(chol, (0, 2, 1))

    design = np.concatenate([frame, times[:, None, None] * frame], axis=2)
    lhs = np.einsum('nab,nbc->nac', scale, design).reshape(n * dim, 2 * dim)
    rhs = np.einsum('nab,nb->na', scale, target).reshape(n * dim)
    coef, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    residual = float(np.linalg.norm(lhs @ coef - rhs))
    size = float(np.linalg.norm(rhs))
    relative = size > 1e-12
    misfit = residual / size if relative else residual
    return StructureFit(misfit, coef[:dim], coef[dim:], relative)


def dubois_structure_check(curve: ChartCurve, manifold: Optional[ManifoldModel] = None,
                           interval: Optional[Tuple[int, int]] = None) -> float:
    return dubois_structure_fit(curve, manifold, interval).misfit


def reversal_check(solution: Solution, path_weight: float = 0.0) -> float:
    """Energy difference between a solution and its backward reparametrization"""
    if isinstance(solution, PiecewisePolynomial):
        return abs(exact_energy(solution) - exact_energy(solution.reversed()))
    return abs(spline_energy(solution, path_weight) - spline_energy(solution.reversed(), path_weight))


def verify(solution: Solution, problem: InterpolationProblem) -> VerificationReport:
    """Run every check and bundle the results"""
    try:
        residuals = el_residual(solution, problem.manifold, problem)
        jumps, naturals = junction_report(solution, problem)
        structure = []
        if isinstance(solution, PiecewisePolynomial):
            if solution.order == 2:
                for i in range(solution.n_pieces):
                    piece = PiecewisePolynomial(
                        solution.breakpoints[i:i + 2], solution.coeffs[i:i + 1], solution.order
                    )
                    structure.append(dubois_structure_check(piece.sample(STRUCTURE_SAMPLES)))
            grid_h, grid_M, source = None, None, 'polynomial'
        else:
            nodes = knot_node_indices(problem, solution.grid)
            if problem.order == 2:
                for i0, i1 in zip(nodes[:-1], nodes[1:]):
                    structure.append(dubois_structure_check(solution, problem.manifold, (i0, i1)))
            grid_h, grid_M, source = solution.h, solution.grid.M, 'discrete'
        report = VerificationReport(
            el_residual_max=[r['sup'] for r in residuals],
            junction_jumps=jumps,
            natural_values=naturals,
            structure_residual=structure,
            reversal_difference=reversal_check(solution, problem.path_weight),
            grid_h=grid_h,
            grid_M=grid_M,
            source=source,
        )
        logger.info(
            f"Verified {source} solution: EL residual {max(report.el_residual_max):.3e}, "
            f"structure misfit {max(structure) if structure else 0.0:.3e}"
        )
        return report
    except Exception as e:
        logger.error(f"Error verifying solution: {e}")
        raise
