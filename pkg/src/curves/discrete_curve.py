import math
import numpy as np
import logging
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass
from src.config.spline_config import SplineConfig
from src.core.errors import GridError, InfeasibleGridError
from src.geometry.manifolds import ManifoldModel
from src.curves.problem import InterpolationProblem
from src.curves.stencils import first_difference, second_difference
from src.curves.quadrature import EnergyQuadrature, taylor_offset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with M steps on [start, end]"""
    M: int
    start: float = 0.0
    end: float = 1.0

    def __post_init__(self):
        if self.M < 2:
            raise GridError(f"Grid needs at least 2 steps, got {self.M}")
        if not self.end > self.start:
            raise GridError(f"Grid end {self.end} must exceed start {self.start}")

    @property
    def h(self) -> float:
        return (self.end - self.start) / self.M

    @property
    def n_nodes(self) -> int:
        return self.M + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.start + self.h * np.arange(self.M + 1)

    def index_of(self, t: float) -> int:
        """Grid node that carries time t, or GridError if t falls between nodes"""
        position = (t - self.start) / self.h
        index = int(round(position))
        if abs(position - index) > SplineConfig.GRID_TIME_TOLERANCE * max(1.0, self.M) or not 0 <= index <= self.M:
            suggested = None
            try:
                suggested = suggest_grid_size([t], at_least=self.M)
            except GridError:
                pass
            raise GridError(f"Knot time {t} is not a node of the grid with M={self.M}", suggested)
        return index


@dataclass(frozen=True, eq=False)
class ChartCurve:
    """Discrete curve: chart coordinates at every node of a uniform grid"""
    grid: TimeGrid
    coords: np.ndarray
    manifold: ManifoldModel

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords.reshape(-1, 1)
        if coords.shape != (self.grid.n_nodes, self.manifold.dim):
            raise ValueError(
                f"Curve coordinates have shape {coords.shape}, expected {(self.grid.n_nodes, self.manifold.dim)}"
            )
        self.manifold.check_admissible(coords)
        coords.setflags(write=False)
        object.__setattr__(self, 'coords', coords)

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def h(self) -> float:
        return self.grid.h

    def reversed(self) -> 'ChartCurve':
        return ChartCurve(self.grid, self.coords[::-1].copy(), self.manifold)

    def restrict(self, i0: int, i1: int) -> 'ChartCurve':
        """Sub-curve on nodes i0..i1 (inclusive)"""
        if not 0 <= i0 < i1 <= self.grid.M:
            raise ValueError(f"Invalid node range [{i0}, {i1}]")
        nodes = self.grid.nodes
        sub_grid = TimeGrid(i1 - i0, float(nodes[i0]), float(nodes[i1]))
        return ChartCurve(sub_grid, self.coords[i0:i1 + 1].copy(), self.manifold)

    def speed_sq(self) -> np.ndarray:
        V = velocity(self)
        g = self.manifold.metric_field(self.coords)
        return np.einsum('na,nab,nb->n', V, g, V)

    def sup_speed_sq(self) -> float:
        return float(self.speed_sq().max())


def velocity(curve: ChartCurve) -> np.ndarray:
    return first_difference(curve.coords, curve.h)


def acceleration(curve: ChartCurve) -> np.ndarray:
    """Covariant acceleration D_t of the velocity at every node"""
    return _acceleration(curve.coords, curve.h, curve.manifold)[0]


def _acceleration(X: np.ndarray, h: float, manifold: ManifoldModel):
    V = first_difference(X, h)
    A = second_difference(X, h)
    if manifold.is_flat:
        return A, V, None
    gamma = manifold.christoffel_field(X)
    A = A + np.einsum('nkij,ni,nj->nk', gamma, V, V)
    return A, V, gamma


def spline_energy(curve: ChartCurve, path_weight: float = 0.0,
                  problem: Optional[InterpolationProblem] = None) -> float:
    """
    Trapezoid value of 1/2 int g(D_t v, D_t v) dt, plus path_weight * int g(v, v) dt.

    Without a problem the end nodes use one-sided stencils. With a problem the
    quadrature is closed by its end conditions, which is the functional the
    optimizer minimizes (of order k on flat manifolds).
    """
    if problem is None:
        quadrature = EnergyQuadrature.trapezoid(curve.grid.n_nodes, curve.h, curve.manifold.dim)
    else:
        quadrature = ConstraintMap(problem, curve.grid).quadrature
    return energy_and_gradient(curve.coords, quadrature, curve.manifold, path_weight, with_gradient=False)[0]


def path_energy(curve: ChartCurve) -> float:
    """Midpoint value of int g(v, v) dt over the grid cells"""
    X = curve.coords
    S = np.diff(X, axis=0) / curve.h
    g = curve.manifold.metric_field(0.5 * (X[1:] + X[:-1]))
    return float(curve.h * np.sum(np.einsum('na,nab,nb->n', S, g, S)))


def energy_and_gradient(X: np.ndarray, quadrature: EnergyQuadrature, manifold: ManifoldModel,
                        path_weight: float = 0.0, with_gradient: bool = True):
    """
    Discrete energy and its exact gradient with respect to every node coordinate.

    Args:
        X: (n, dim) node coordinates
        quadrature: rows and weights of the energy integrand
        manifold: model supplying metric and Christoffel data
        path_weight: weight of the path term int g(v, v) dt, taken cell by cell
        with_gradient: skip the gradient when False

    Returns:
        (energy, gradient) with gradient of shape (n, dim), or (energy, None)
    """
    X = manifold.check_admissible(X)
    curved = not manifold.is_flat
    if curved and quadrature.Dv is None:
        raise ValueError(f"Order-{quadrature.order} energies need a flat manifold, got {manifold.kind}")
    h = quadrature.h
    w = quadrature.weights
    base = X[quadrature.base]
    A = quadrature.D @ X + quadrature.offset
    g = manifold.metric_field(base)
    if curved:
        V = quadrature.Dv @ X + quadrature.velocity_offset
        gamma = manifold.christoffel_field(base)
        A = A + np.einsum('nkij,ni,nj->nk', gamma, V, V)
    gA = np.einsum('nab,nb->na', g, A)
    energy = 0.5 * float(np.sum(w * np.einsum('na,na->n', A, gA)))

    if path_weight:
        mid = 0.5 * (X[1:] + X[:-1])
        S = np.diff(X, axis=0) / h
        gS = np.einsum('nab,nb->na', manifold.metric_field(mid), S)
        energy += path_weight * h * float(np.sum(np.einsum('na,na->n', S, gS)))
    if not with_gradient:
        return energy, None

    B = w[:, None] * gA
    G = np.asarray(quadrature.D.T @ B)
    if curved:
        dg = manifold.metric_derivative_field(base)
        dgamma = manifold.christoffel_derivative_field(base)
        local = 0.5 * w[:, None] * np.einsum('ncab,na,nb->nc', dg, A, A)
        local += np.einsum('nk,nckij,ni,nj->nc', B, dgamma, V, V)
        np.add.at(G, quadrature.base, local)
        G += quadrature.Dv.T @ (2.0 * np.einsum('nk,nkij,ni->nj', B, gamma, V))
    if path_weight:
        flux = 2.0 * path_weight * gS
        G[1:] += flux
        G[:-1] -= flux
        if curved:
            bend = 0.5 * path_weight * h * np.einsum('ncab,na,nb->nc', manifold.metric_derivative_field(mid), S, S)
            G[1:] += bend
            G[:-1] += bend
    return energy, G


def suggest_grid_size(times: Sequence[float], at_least: int = 1,
                      max_denominator: Optional[int] = None) -> int:
    """Least multiple of the common denominator of the knot times that is >= at_least"""
    max_denominator = max_denominator or SplineConfig.GRID_MAX_DENOMINATOR
    denominator = 1
    for t in times:
        frac = Fraction(float(t)).limit_denominator(max_denominator)
        if abs(float(frac) - float(t)) > SplineConfig.GRID_TIME_TOLERANCE:
            raise GridError(f"Knot time {t} is not rational with denominator <= {max_denominator}")
        denominator = math.lcm(denominator, frac.denominator)
    return denominator * max(1, math.ceil(at_least / denominator))


@dataclass(frozen=True)
class _Elimination:
    """x_node = sum(coef * x_j for j, coef in terms) + offset"""
    node: int
    site: int
    terms: Tuple[Tuple[int, float], ...]
    offset: np.ndarray


class ConstraintMap:
    """
    Affine parametrization of the feasible curves by their free node coordinates.

    Knot nodes are pinned. For order 2 the neighbour on each side of the
    velocity site is eliminated through the one-sided second-order stencil,
        x_e = (3 x_site + x_partner + sign * 2 h v) / 4
    so the discrete velocity constraint holds exactly for every free vector.
    For order k >= 3 (flat only) the nearest (k - 1) // 2 nodes on each side
    are fixed to the Taylor polynomial of the prescribed derivatives. The
    closed energy quadrature of the problem is built alongside.
    """

    def __init__(self, problem: InterpolationProblem, grid: TimeGrid):
        self.problem = problem
        self.grid = grid
        self.dim = problem.dim
        self.order = problem.order
        targets = problem.targets()
        try:
            self.knot_nodes = [grid.index_of(t) for t in problem.knot_times]
        except GridError as e:
            raise GridError(str(e), _suggestion(problem.knot_times, grid.M)) from e
        self.pinned: Dict[int, np.ndarray] = {i: targets[n] for n, i in enumerate(self.knot_nodes)}
        self.eliminations: List[_Elimination] = []
        self.velocity = problem.velocity
        self.site: Optional[int] = self.knot_nodes[problem.velocity_site] if problem.has_velocity else None

        if self.order > 2:
            self._check_spacing()
        if self.site is not None:
            self._eliminate(self.site)

        eliminated = {e.node for e in self.eliminations}
        for e in self.eliminations:
            needed = [j for j, _ in e.terms]
            if e.node in self.pinned or not all(0 <= j <= grid.M for j in needed + [e.node]):
                raise InfeasibleGridError(
                    f"Velocity elimination at node {e.node} collides with a knot node on the grid with M={grid.M}",
                    suggested_grid=2 * grid.M,
                )
            if any(j in eliminated for j in needed):
                raise InfeasibleGridError(
                    f"Velocity elimination at node {e.node} needs a node that is itself eliminated",
                    suggested_grid=2 * grid.M,
                )

        constrained = set(self.pinned) | eliminated
        self.free_nodes = np.array([i for i in range(grid.n_nodes) if i not in constrained], dtype=int)
        self.free_mask = np.zeros(grid.n_nodes, dtype=bool)
        self.free_mask[self.free_nodes] = True
        self.quadrature = EnergyQuadrature.closed(
            grid.M, grid.h, self.dim, self.order, self.site, problem.prescribed if self.site is not None else {},
        )

    def _check_spacing(self):
        M = self.grid.M
        if int(np.diff(self.knot_nodes).min()) < self.order:
            raise InfeasibleGridError(
                f"Order {self.order} needs at least {self.order} steps between knots on the grid with M={M}",
                suggested_grid=2 * M,
            )

    def _eliminate(self, site: int):
        h = self.grid.h
        sides = [s for s in (-1, 1) if 0 <= site + s <= self.grid.M]
        if self.order == 2:
            for sign in sides:
                self.eliminations.append(_Elimination(
                    site + sign, site, ((site, 0.75), (site + 2 * sign, 0.25)), sign * 0.5 * h * self.velocity,
                ))
            return
        derivatives = self.problem.prescribed
        for sign in sides:
            for j in range(1, (self.order - 1) // 2 + 1):
                self.eliminations.append(_Elimination(
                    site + sign * j, site, ((site, 1.0),), taylor_offset(derivatives, sign * j * h, self.dim),
                ))

    @property
    def n_free(self) -> int:
        return self.free_nodes.size * self.dim

    def expand(self, z: np.ndarray) -> np.ndarray:
        """Full (n, dim) node array from the free coordinate vector"""
        X = np.zeros((self.grid.n_nodes, self.dim))
        X[self.free_nodes] = np.asarray(z, dtype=float).reshape(-1, self.dim)
        for node, point in self.pinned.items():
            X[node] = point
        for e in self.eliminations:
            X[e.node] = sum(coef * X[j] for j, coef in e.terms) + e.offset
        return X

    def restrict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X)[self.free_nodes].reshape(-1)

    def reduce_gradient(self, G: np.ndarray) -> np.ndarray:
        """Chain rule through the eliminations; returns the gradient over free coordinates"""
        G = np.array(G, dtype=float)
        for e in self.eliminations:
            for j, coef in e.terms:
                if self.free_mask[j]:
                    G[j] += coef * G[e.node]
        return G[self.free_nodes].reshape(-1)

    def masked(self, G: np.ndarray) -> np.ndarray:
        """Per-node gradient with constrained nodes set to exactly zero"""
        out = np.zeros((self.grid.n_nodes, self.dim))
        out[self.free_nodes] = self.reduce_gradient(G).reshape(-1, self.dim)
        return out

    def velocity_residual(self, X: np.ndarray) -> float:
        """Largest violation of the velocity data: one-sided stencils for order 2, Taylor nodes above"""
        if not self.eliminations:
            return 0.0
        X = np.asarray(X)
        h = self.grid.h
        worst = 0.0
        for e in self.eliminations:
            if self.order > 2:
                worst = max(worst, float(np.max(np.abs(X[e.node] - X[e.site] - e.offset))))
                continue
            sign = e.node - e.site
            partner = e.site + 2 * sign
            est = sign * (-3.0 * X[e.site] + 4.0 * X[e.node] - X[partner]) / (2.0 * h)
            worst = max(worst, float(np.max(np.abs(est - self.velocity))))
        return worst


def energy_gradient(curve: ChartCurve, problem: InterpolationProblem) -> np.ndarray:
    """Exact gradient of the closed discrete energy in the constrained parametrization, masked per node"""
    constraints = ConstraintMap(problem, curve.grid)
    _, G = energy_and_gradient(curve.coords, constraints.quadrature, curve.manifold, problem.path_weight)
    return constraints.masked(G)


def initial_curve(problem: InterpolationProblem, M: int) -> ChartCurve:
    """Piecewise-linear chart interpolation of the knots, then the velocity eliminations"""
    grid = TimeGrid(M)
    constraints = ConstraintMap(problem, grid)
    targets = problem.targets()
    nodes = grid.nodes
    linear = np.column_stack([
        np.interp(nodes, problem.knot_times, targets[:, d]) for d in range(problem.dim)
    ])
    X = constraints.expand(constraints.restrict(linear))
    logger.debug(f"Initial curve on M={M} with {constraints.free_nodes.size} free nodes")
    return ChartCurve(grid, X, problem.manifold)


def knot_node_indices(problem: InterpolationProblem, grid: TimeGrid) -> List[int]:
    return [grid.index_of(t) for t in problem.knot_times]


def _suggestion(times: Sequence[float], M: int) -> Optional[int]:
    try:
        return suggest_grid_size(times, at_least=M)
    except GridError:
        return None
