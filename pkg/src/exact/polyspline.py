import math
import numpy as np
import pandas as pd
import logging
from typing import Dict, List, Optional
from dataclasses import dataclass, field
from numpy.polynomial import polynomial as P
from numpy.polynomial import Polynomial
from scipy.linalg import lu_factor, lu_solve, null_space
from src.config.spline_config import SplineConfig
from src.core.errors import (
    ConditioningError, CountMismatchError, ProblemValidationError, SingularSystemError,
)
from src.geometry.manifolds import Euclidean, ManifoldModel
from src.curves.problem import InterpolationProblem
from src.curves.discrete_curve import ChartCurve, TimeGrid

logger = logging.getLogger(__name__)

ROW_FAMILIES = ('interp', 'prescribed', 'junction', 'natural')


@dataclass(eq=False)
class PiecewisePolynomial:
    """
    Piecewise polynomial carrying the order k of its energy.

    coeffs[i, m, d] multiplies (t - t_i)^m on piece i for coordinate d. Spline
    solutions have degree at most 2k-1; other curves may carry more terms.
    """
    breakpoints: np.ndarray
    coeffs: np.ndarray
    order: int

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim == 2:
            self.coeffs = self.coeffs[:, :, None]
        if self.coeffs.shape[0] != self.breakpoints.size - 1:
            raise ValueError(f"{self.coeffs.shape[0]} pieces for {self.breakpoints.size} breakpoints")

    @property
    def n_pieces(self) -> int:
        return self.coeffs.shape[0]

    @property
    def dim(self) -> int:
        return self.coeffs.shape[2]

    def _evaluate(self, t, order: int, side: str) -> np.ndarray:
        if order < 0:
            raise ValueError("Derivative order cannot be negative")
        scalar = np.ndim(t) == 0
        times = np.atleast_1d(np.asarray(t, dtype=float))
        pieces = np.searchsorted(self.breakpoints, times, side=side) - 1
        pieces = np.clip(pieces, 0, self.n_pieces - 1)
        out = np.zeros((times.size, self.dim))
        for i in np.unique(pieces):
            mask = pieces == i
            c = P.polyder(self.coeffs[i], order, axis=0) if order else self.coeffs[i]
            out[mask] = P.polyval(times[mask] - self.breakpoints[i], c, tensor=True).T
        return out[0] if scalar else out

    def eval(self, t, order: int = 0) -> np.ndarray:
        """Derivative of the given order; interior breakpoints use the left piece"""
        return self._evaluate(t, order, 'left')

    def eval_right(self, t, order: int = 0) -> np.ndarray:
        """Same as eval but interior breakpoints use the right piece"""
        return self._evaluate(t, order, 'right')

    def jump(self, index: int, order: int) -> np.ndarray:
        t = self.breakpoints[index]
        return self.eval_right(t, order) - self.eval(t, order)

    def reversed(self) -> 'PiecewisePolynomial':
        """The curve traversed backwards on the same parameter interval"""
        a, b = self.breakpoints[0], self.breakpoints[-1]
        new_breaks = (a + b - self.breakpoints)[::-1]
        n_coef = self.coeffs.shape[1]
        new_coeffs = np.zeros_like(self.coeffs)
        for new_i, old_i in enumerate(range(self.n_pieces - 1, -1, -1)):
            length = self.breakpoints[old_i + 1] - self.breakpoints[old_i]
            flip = Polynomial([length, -1.0])
            for d in range(self.dim):
                composed = Polynomial(self.coeffs[old_i, :, d])(flip).coef
                new_coeffs[new_i, :composed.size, d] = composed[:n_coef]
        return PiecewisePolynomial(new_breaks, new_coeffs, self.order)

    def sample(self, M: int, manifold: Optional[ManifoldModel] = None) -> ChartCurve:
        grid = TimeGrid(M, float(self.breakpoints[0]), float(self.breakpoints[-1]))
        return ChartCurve(grid, self.eval(grid.nodes), manifold or Euclidean(self.dim))

    def to_frame(self, M: int) -> pd.DataFrame:
        """Dense samples of the position and its first two derivatives"""
        times = TimeGrid(M, float(self.breakpoints[0]), float(self.breakpoints[-1])).nodes
        frame = pd.DataFrame({'t': times})
        for order, prefix in ((0, 'x'), (1, 'dx'), (2, 'ddx')):
            values = self.eval(times, order)
            for d in range(self.dim):
                frame[f"{prefix}{d}"] = values[:, d]
        return frame

    def to_dict(self) -> Dict:
        return {
            'order': self.order,
            'breakpoints': self.breakpoints.tolist(),
            'coefficients': self.coeffs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'PiecewisePolynomial':
        return cls(np.asarray(data['breakpoints']), np.asarray(data['coefficients']), int(data['order']))


def exact_energy(poly: PiecewisePolynomial, halved: bool = True) -> float:
    """
    Closed-form int |x^(k)|^2 dt over all pieces.

    Args:
        poly: piecewise polynomial of order k
        halved: multiply by 1/2 (the spline energy convention)

    Returns:
        Energy as a float, summed with math.fsum
    """
    k = poly.order
    terms = []
    for i in range(poly.n_pieces):
        length = poly.breakpoints[i + 1] - poly.breakpoints[i]
        for d in range(poly.dim):
            dk = P.polyder(poly.coeffs[i, :, d], k)
            antiderivative = P.polyint(P.polymul(dk, dk))
            terms.append(float(P.polyval(length, antiderivative)))
    total = math.fsum(terms)
    return 0.5 * total if halved else total


@dataclass
class LinearSystem:
    """Square constraint system of an exact spline with one label per row"""
    matrix: np.ndarray
    rhs: np.ndarray
    families: List[str] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.matrix.shape[1]

    def family_counts(self) -> Dict[str, int]:
        return {name: self.families.count(name) for name in ROW_FAMILIES}

    def scaled(self):
        """Rows normalized to unit max-norm"""
        scale = np.max(np.abs(self.matrix), axis=1)
        scale[scale == 0] = 1.0
        return self.matrix / scale[:, None], self.rhs / scale[:, None]

    def residual(self, solution: np.ndarray) -> np.ndarray:
        """Per-row residual of the normalized system, relative to 1 + |rhs|"""
        A, b = self.scaled()
        return np.abs(A @ solution - b) / (1.0 + np.abs(b))


def _derivative_row(k: int, tau: float, order: int) -> np.ndarray:
    row = np.zeros(2 * k)
    for m in range(order, 2 * k):
        row[m] = math.perm(m, order) * tau ** (m - order)
    return row


class ExactSplineSolver:
    """Linear-system solver for flat splines of any order k >= 2"""

    def __init__(self):
        self.max_pieces = SplineConfig.EXACT_MAX_PIECES
        self.residual_tol = SplineConfig.EXACT_RESIDUAL_TOL
        self.max_condition = SplineConfig.EXACT_MAX_CONDITION

    def _check_problem(self, problem: InterpolationProblem):
        if not problem.manifold.is_flat:
            raise ProblemValidationError(
                f"Exact solves need a flat manifold, got {problem.manifold.kind}",
                [('manifold.kind', "use the energy minimizer on curved manifolds")],
            )
        if problem.n_intervals > self.max_pieces:
            logger.warning(f"{problem.n_intervals} pieces exceed the monomial-basis limit of {self.max_pieces}")
            raise ConditioningError(
                f"{problem.n_intervals} pieces exceed the limit of {self.max_pieces} for the per-interval monomial basis"
            )

    def assemble_system(self, problem: InterpolationProblem) -> LinearSystem:
        """
        Build the square system of size 2kN shared by every coordinate.

        Row families: interpolation at both ends of each piece, prescribed
        derivatives on each side touching the velocity site, continuity of
        orders 1..2k-2 at the other interior knots, and natural conditions
        of orders k..2k-2 at each extreme that is not the velocity site.
        """
        self._check_problem(problem)
        k = problem.order
        N = problem.n_intervals
        n_coef = 2 * k
        size = n_coef * N
        bp = problem.knot_times
        lengths = np.diff(bp)
        targets = problem.targets()
        dim = problem.dim
        site = problem.velocity_site

        rows, rhs, families, labels = [], [], [], []

        def add(entries, value, family, label):
            row = np.zeros(size)
            for piece, tau, order, sign in entries:
                row[piece * n_coef:(piece + 1) * n_coef] += sign * _derivative_row(k, tau, order)
            rows.append(row)
            rhs.append(np.zeros(dim) if value is None else value)
            families.append(family)
            labels.append(label)

        for i in range(N):
            add([(i, 0.0, 0, 1.0)], targets[i], 'interp', f"x(t{i}) on piece {i}")
            add([(i, lengths[i], 0, 1.0)], targets[i + 1], 'interp', f"x(t{i + 1}) on piece {i}")

        if site is not None:
            for order in range(1, k):
                value = problem.prescribed[order]
                if site > 0:
                    add([(site - 1, lengths[site - 1], order, 1.0)], value, 'prescribed',
                        f"x^({order})(t{site}) from the left")
                if site < N:
                    add([(site, 0.0, order, 1.0)], value, 'prescribed', f"x^({order})(t{site}) from the right")

        for i in range(1, N):
            if i == site:
                continue
            for order in range(1, 2 * k - 1):
                add([(i - 1, lengths[i - 1], order, 1.0), (i, 0.0, order, -1.0)], None, 'junction',
                    f"continuity of order {order} at t{i}")

        for extreme in (0, N):
            if extreme == site:
                continue
            piece, tau = (0, 0.0) if extreme == 0 else (N - 1, lengths[N - 1])
            for order in range(k, 2 * k - 1):
                add([(piece, tau, order, 1.0)], None, 'natural', f"x^({order})(t{extreme}) = 0")

        if len(rows) != size:
            raise CountMismatchError(f"Assembled {len(rows)} constraint rows for {size} unknowns")

        return LinearSystem(np.array(rows), np.array(rhs).reshape(size, dim), families, labels)

    def solve_exact(self, problem: InterpolationProblem) -> PiecewisePolynomial:
        """
        Solve the flat spline problem exactly.

        Returns:
            PiecewisePolynomial of degree 2k-1 meeting every constraint row
        """
        try:
            system = self.assemble_system(problem)
            k = problem.order
            N = problem.n_intervals
            lengths = np.diff(problem.knot_times)
            # column equilibration: the unknown for (t - t_i)^m becomes c_m * L_i^m
            column_scale = np.concatenate([lengths[i] ** -np.arange(2.0 * k) for i in range(N)])
            A = system.matrix * column_scale[None, :]
            row_scale = np.max(np.abs(A), axis=1)
            row_scale[row_scale == 0] = 1.0
            A = A / row_scale[:, None]
            b = system.rhs / row_scale[:, None]
            condition = np.linalg.cond(A)
            if not np.isfinite(condition) or condition > self.max_condition:
                raise SingularSystemError(
                    f"Constraint system is singular or ill-conditioned (condition number {condition:.3e})"
                )
            solution = lu_solve(lu_factor(A), b) * column_scale[:, None]
            residual = system.residual(solution)
            worst = float(residual.max())
            if worst > self.residual_tol:
                raise SingularSystemError(f"Constraint residual {worst:.3e} exceeds {self.residual_tol:.1e}")
            poly = PiecewisePolynomial(
                problem.knot_times, solution.reshape(N, 2 * k, problem.dim), k
            )
            logger.debug(f"Solved exact spline: order {k}, {N} pieces, condition {condition:.3e}")
            return poly
        except Exception as e:
            logger.error(f"Error solving exact spline: {e}")
            raise

    def admissible_perturbation_basis(self, problem: InterpolationProblem) -> np.ndarray:
        """
        Null-space basis (columns) of perturbations that keep a piecewise
        polynomial admissible: zero at the knots, zero prescribed derivatives,
        continuous up to order k-1.
        """
        self._check_problem(problem)
        k = problem.order
        N = problem.n_intervals
        n_coef = 2 * k
        lengths = np.diff(problem.knot_times)
        rows = []

        def row_of(entries):
            row = np.zeros(n_coef * N)
            for piece, tau, order, sign in entries:
                row[piece * n_coef:(piece + 1) * n_coef] += sign * _derivative_row(k, tau, order)
            return row

        for i in range(N):
            rows.append(row_of([(i, 0.0, 0, 1.0)]))
            rows.append(row_of([(i, lengths[i], 0, 1.0)]))
        site = problem.velocity_site
        if site is not None:
            for order in range(1, k):
                if site > 0:
                    rows.append(row_of([(site - 1, lengths[site - 1], order, 1.0)]))
                if site < N:
                    rows.append(row_of([(site, 0.0, order, 1.0)]))
        for i in range(1, N):
            for order in range(1, k):
                rows.append(row_of([(i - 1, lengths[i - 1], order, 1.0), (i, 0.0, order, -1.0)]))
        return null_space(np.array(rows))


def perturbed(poly: PiecewisePolynomial, direction: np.ndarray, amount: np.ndarray) -> PiecewisePolynomial:
    """poly + amount[d] * direction in every coordinate d"""
    shape = poly.coeffs.shape
    delta = np.asarray(direction).reshape(shape[0], shape[1])[:, :, None] * np.asarray(amount)[None, None, :]
    return PiecewisePolynomial(poly.breakpoints, poly.coeffs + delta, poly.order)


# Global solver instance
exact_solver = ExactSplineSolver()
