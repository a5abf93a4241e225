import time
import numpy as np
import logging
from collections import deque
from typing import Dict, List, Optional, Tuple
from dataclasses import dataclass, field, asdict
from scipy import sparse
from scipy.sparse.linalg import splu
from src.config.spline_config import SplineConfig
from src.core.errors import ChartError, MaxIterExceeded, ProblemValidationError, SingularSystemError
from src.geometry.manifolds import TangentVec
from src.curves.problem import InterpolationProblem
from src.curves.discrete_curve import (
    ChartCurve, ConstraintMap, TimeGrid, energy_and_gradient, initial_curve,
)

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps
# Consecutive accepted steps with rounding-level decrease before the run counts as stalled
STALL_LIMIT = 5


@dataclass
class OptimizerOptions:
    tol_grad: float = SplineConfig.OPT_TOL_GRAD
    max_iter: int = SplineConfig.OPT_MAX_ITER
    memory: int = SplineConfig.OPT_MEMORY
    initial_step: float = SplineConfig.OPT_INITIAL_STEP
    backtrack: float = SplineConfig.OPT_BACKTRACK
    armijo: float = SplineConfig.OPT_ARMIJO
    tol_step: float = 1e-11
    max_backtracks: int = 60
    precondition: bool = True
    # Bound c^2 on int g(D_t v, D_t v) dt; None derives it from the initial curve
    coercivity_c_sq: Optional[float] = None

    def __post_init__(self):
        issues = []
        if self.tol_grad <= 0:
            issues.append(('tol_grad', "must be positive"))
        if self.max_iter < 1:
            issues.append(('max_iter', "must be at least 1"))
        if not 0 < self.backtrack < 1:
            issues.append(('backtrack', "must lie in (0, 1)"))
        if not 0 < self.armijo < 1:
            issues.append(('armijo', "must lie in (0, 1)"))
        if self.memory < 0:
            issues.append(('memory', "cannot be negative"))
        if issues:
            raise ProblemValidationError(
                "Invalid optimizer options: " + "; ".join(f"{k} {m}" for k, m in issues), issues
            )

    @classmethod
    def from_config(cls, **overrides) -> 'OptimizerOptions':
        defaults = asdict(SplineConfig.optimizer_defaults())
        defaults.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**defaults)


@dataclass
class ConvergenceReport:
    iterations: int
    energy: float
    grad_norm: float
    termination: str
    converged: bool
    energy_trace: List[float] = field(default_factory=list)
    coercivity_trace: List[float] = field(default_factory=list)
    coercivity_c: Optional[float] = None
    coercivity_violations: int = 0
    velocity_residual: float = 0.0
    grid_size: int = 0
    wall_time: float = 0.0

    def to_dict(self, include_traces: bool = True) -> Dict:
        data = asdict(self)
        if not include_traces:
            data.pop('energy_trace')
            data.pop('coercivity_trace')
        return data


def coercivity_bound(c_sq: float, h0: float) -> float:
    """(c + sqrt(c^2 + h0))^2, the speed bound for curves with int g(D_t v, D_t v) <= c^2"""
    c = np.sqrt(max(c_sq, 0.0))
    return float((c + np.sqrt(c * c + h0)) ** 2)


def coercivity_check(curve: ChartCurve, v: TangentVec, c_sq: float,
                     rel_tol: float = 1e-9) -> Tuple[bool, float]:
    """
    Compare sup_t g(x', x') with the bound implied by an acceleration budget.

    Args:
        curve: discrete curve whose velocity at the site equals v
        v: prescribed velocity (its base point fixes h0 = g(v, v))
        c_sq: bound on int g(D_t x', D_t x') dt
        rel_tol: relative slack for rounding

    Returns:
        (passed, sup of the squared speed)
    """
    h0 = curve.manifold.inner(v.base, v.comp, v.comp)
    sup_speed = curve.sup_speed_sq()
    bound = coercivity_bound(c_sq, h0)
    return sup_speed <= bound * (1.0 + rel_tol) + 1e-14, sup_speed


def gradient_floor(X: np.ndarray, h: float, manifold, tol_grad: float, order: int = 2) -> float:
    """Largest gradient entry that rounding alone produces on this grid, never below 100 * tol_grad"""
    g = manifold.metric_field(X)
    g_scale = float(np.max(np.einsum('naa->n', g))) / manifold.dim
    x_scale = max(1.0, float(np.max(np.abs(X))))
    # 4^k bounds the squared coefficient mass of an order-k difference row
    return max(1e2 * tol_grad, 25.0 * 4 ** order * EPS * x_scale * g_scale / h ** (2 * order - 1))


class _Preconditioner:
    """Factorized flat-metric Hessian of the closed quadrature on the free nodes, shared by every coordinate"""

    def __init__(self, constraints: ConstraintMap, curve: ChartCurve, path_weight: float):
        grid = constraints.grid
        n = grid.n_nodes
        h = grid.h
        quadrature = constraints.quadrature
        metric = curve.manifold.metric_field(curve.coords)
        scale = np.einsum('naa->n', metric) / curve.manifold.dim
        D = quadrature.D
        H = D.T @ sparse.diags(quadrature.weights * scale[quadrature.base]) @ D
        if path_weight:
            cells = sparse.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / h
            cell_scale = sparse.diags(0.5 * (scale[1:] + scale[:-1]))
            H = H + 2.0 * path_weight * h * (cells.T @ cell_scale @ cells)

        column = {node: j for j, node in enumerate(constraints.free_nodes)}
        rows, cols, vals = [], [], []
        for node, j in column.items():
            rows.append(node)
            cols.append(j)
            vals.append(1.0)
        for e in constraints.eliminations:
            for j, coef in e.terms:
                if j in column:
                    rows.append(e.node)
                    cols.append(column[j])
                    vals.append(coef)
        P = sparse.csr_matrix((vals, (rows, cols)), shape=(n, len(column)))
        self.dim = curve.manifold.dim
        self._lu = splu((P.T @ H @ P).tocsc())

    def apply(self, g: np.ndarray) -> np.ndarray:
        return self._lu.solve(g.reshape(-1, self.dim)).reshape(-1)


class _Identity:
    def apply(self, g: np.ndarray) -> np.ndarray:
        return g.copy()


class EnergyOptimizer:
    """Limited-memory quasi-Newton minimization of the discrete spline energy"""

    def __init__(self):
        self.options = OptimizerOptions.from_config()

    def minimize(self, problem: InterpolationProblem, M: int, opts: Optional[OptimizerOptions] = None,
                 start: Optional[ChartCurve] = None, raise_on_failure: bool = False
                 ) -> Tuple[ChartCurve, ConvergenceReport]:
        """
        Minimize the discrete energy over curves meeting every constraint of the problem.

        Args:
            problem: interpolation problem; order 2 on any manifold, any order on flat ones
            M: grid steps; every knot time must be a grid node
            opts: optimizer options (configured defaults when omitted)
            start: optional starting curve on the same grid, projected onto the constraints
            raise_on_failure: raise MaxIterExceeded instead of returning a non-converged report

        Returns:
            (best curve, convergence report)
        """
        opts = opts or self.options
        if problem.order != 2 and not problem.manifold.is_flat:
            raise ProblemValidationError(
                f"Order {problem.order} minimization needs a flat manifold, got {problem.manifold.kind}",
                [('order', "curved manifolds support order 2 only")],
            )
        if problem.order > 2 and not problem.has_velocity and problem.knot_times.size < problem.order:
            raise SingularSystemError(
                f"Order {problem.order} without derivative data needs at least {problem.order} knots, "
                f"got {problem.knot_times.size}"
            )
        started = time.perf_counter()
        grid = TimeGrid(M)
        constraints = ConstraintMap(problem, grid)
        manifold = problem.manifold
        sigma = problem.path_weight
        if start is None:
            start = initial_curve(problem, M)
        z = constraints.restrict(start.coords)
        X = constraints.expand(z)

        energy, G = energy_and_gradient(X, constraints.quadrature, manifold, sigma)
        g = constraints.reduce_gradient(G)
        curve = ChartCurve(grid, X, manifold)

        precond = _Preconditioner(constraints, curve, sigma) if opts.precondition else _Identity()

        monitor_v = problem.prescribed_derivs[0][1] if problem.has_velocity and problem.order == 2 else None
        c_sq = opts.coercivity_c_sq if opts.coercivity_c_sq is not None else 2.0 * energy
        energy_trace = [energy]
        coercivity_trace: List[float] = []
        violations = 0

        def monitor(candidate: ChartCurve):
            nonlocal violations
            if monitor_v is None:
                coercivity_trace.append(candidate.sup_speed_sq())
                return
            passed, sup_speed = coercivity_check(candidate, monitor_v, c_sq)
            coercivity_trace.append(sup_speed)
            if not passed:
                violations += 1
                logger.warning(
                    f"Coercivity bound violated: sup speed^2 {sup_speed:.6g} exceeds "
                    f"{coercivity_bound(c_sq, manifold.inner(monitor_v.base, monitor_v.comp, monitor_v.comp)):.6g}"
                )

        floor = gradient_floor(X, grid.h, manifold, opts.tol_grad, problem.order)
        stalled = 0
        monitor(curve)
        history: deque = deque(maxlen=opts.memory if opts.memory > 0 else 1)
        termination = 'max_iter'
        converged = False
        iteration = 0

        try:
            while iteration < opts.max_iter:
                grad_norm = float(np.max(np.abs(g))) if g.size else 0.0
                if grad_norm <= opts.tol_grad:
                    termination, converged = 'gradient_tolerance', True
                    break

                d = self._direction(g, history, precond, opts.memory)
                if float(g @ d) >= 0.0:
                    history.clear()
                    d = -precond.apply(g)
                if float(np.max(np.abs(d))) <= opts.tol_step * (1.0 + float(np.max(np.abs(z)))):
                    termination, converged = 'step_tolerance', True
                    break

                accepted = self._line_search(z, d, energy, g, grad_norm, constraints, manifold, sigma, opts)
                if accepted is None and history:
                    history.clear()
                    d = -precond.apply(g)
                    accepted = self._line_search(z, d, energy, g, grad_norm, constraints, manifold, sigma, opts)
                if accepted is None:
                    if grad_norm <= floor:
                        termination, converged = 'rounding_floor', True
                    else:
                        termination = 'line_search_failed'
                    break

                z_new, X_new, energy_new, g_new = accepted
                stalled = stalled + 1 if energy - energy_new <= 1e2 * EPS * abs(energy) else 0
                s = z_new - z
                y = g_new - g
                sy = float(s @ y)
                if opts.memory > 0 and sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
                    history.append((s, y, 1.0 / sy))
                z, X, energy, g = z_new, X_new, energy_new, g_new
                curve = ChartCurve(grid, X, manifold)
                energy_trace.append(energy)
                monitor(curve)
                iteration += 1
                logger.debug(f"Iteration {iteration}: energy={energy:.12g} grad={float(np.max(np.abs(g))):.3e}")
                if stalled >= STALL_LIMIT:
                    if float(np.max(np.abs(g))) <= floor:
                        termination, converged = 'rounding_floor', True
                    else:
                        termination = 'stalled'
                    break
        except Exception as e:
            logger.error(f"Error minimizing spline energy: {e}")
            raise

        grad_norm = float(np.max(np.abs(g))) if g.size else 0.0
        if not converged and grad_norm <= opts.tol_grad:
            termination, converged = 'gradient_tolerance', True
        report = ConvergenceReport(
            iterations=iteration,
            energy=energy,
            grad_norm=grad_norm,
            termination=termination,
            converged=converged,
            energy_trace=energy_trace,
            coercivity_trace=coercivity_trace,
            coercivity_c=float(np.sqrt(c_sq)) if monitor_v is not None else None,
            coercivity_violations=violations,
            velocity_residual=constraints.velocity_residual(X),
            grid_size=M,
            wall_time=time.perf_counter() - started,
        )
        if converged:
            logger.info(f"Minimized on M={M}: energy={energy:.10g} after {iteration} iterations ({termination})")
        else:
            logger.warning(f"Optimizer stopped without converging on M={M}: {termination}, grad={grad_norm:.3e}")
            if raise_on_failure:
                raise MaxIterExceeded(
                    f"Optimizer did not converge on M={M} ({termination}, gradient {grad_norm:.3e})",
                    curve=curve, report=report,
                )
        return curve, report

    @staticmethod
    def _direction(g: np.ndarray, history, precond, memory: int) -> np.ndarray:
        """Two-loop recursion with the preconditioner as initial inverse Hessian"""
        if memory == 0 or not history:
            return -precond.apply(g)
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(history):
            alpha = rho * float(s @ q)
            alphas.append(alpha)
            q -= alpha * y
        s_last, y_last, _ = history[-1]
        Hy = precond.apply(y_last)
        gamma = float(s_last @ y_last) / max(float(y_last @ Hy), 1e-300)
        r = gamma * precond.apply(q)
        for (s, y, rho), alpha in zip(history, reversed(alphas)):
            beta = rho * float(y @ r)
            r += s * (alpha - beta)
        return -r

    @staticmethod
    def _line_search(z, d, energy, g, grad_norm, constraints, manifold, sigma, opts):
        """Armijo backtracking; steps that leave the chart count as failed trials"""
        slope = float(g @ d)
        noise = 1e2 * EPS * max(abs(energy), 1e-300)
        step = opts.initial_step
        for _ in range(opts.max_backtracks):
            z_trial = z + step * d
            X_trial = constraints.expand(z_trial)
            try:
                e_trial, G_trial = energy_and_gradient(X_trial, constraints.quadrature, manifold, sigma)
            except ChartError:
                step *= opts.backtrack
                continue
            if np.isfinite(e_trial):
                if e_trial <= energy + opts.armijo * step * slope:
                    return z_trial, X_trial, e_trial, constraints.reduce_gradient(G_trial)
                if e_trial - energy <= noise:
                    g_trial = constraints.reduce_gradient(G_trial)
                    if float(np.max(np.abs(g_trial))) < grad_norm:
                        return z_trial, X_trial, e_trial, g_trial
            step *= opts.backtrack
        return None

    def multi_start(self, problem: InterpolationProblem, M: int, opts: Optional[OptimizerOptions] = None,
                    starts: int = 1, seed: Optional[int] = None) -> Tuple[ChartCurve, ConvergenceReport]:
        """
        Run the optimizer from several perturbed initial curves and keep the lowest energy.

        The first start is the unperturbed initial curve; later starts add a
        seeded combination of low-frequency sine modes to the free nodes.
        """
        seed = SplineConfig.DEFAULT_SEED if seed is None else seed
        rng = np.random.default_rng(seed)
        base = initial_curve(problem, M)
        constraints = ConstraintMap(problem, base.grid)
        span = 1.0 + float(np.ptp(problem.targets(), axis=0).max())
        times = base.times

        best: Optional[Tuple[ChartCurve, ConvergenceReport]] = None
        for index in range(max(1, starts)):
            start = base
            if index > 0:
                amplitudes = rng.normal(scale=0.1 * span, size=(3, problem.dim))
                modes = np.sin(np.pi * np.outer(times, np.arange(1, 4)))
                perturbed = base.coords + modes @ amplitudes
                try:
                    start = ChartCurve(base.grid, constraints.expand(constraints.restrict(perturbed)), problem.manifold)
                except ChartError as e:
                    logger.warning(f"Skipping start {index}: {e}")
                    continue
            curve, report = self.minimize(problem, M, opts, start=start)
            better = best is None or (report.converged, -report.energy) > (best[1].converged, -best[1].energy)
            if better:
                best = (curve, report)
            logger.debug(f"Start {index}: energy={report.energy:.10g} converged={report.converged}")

        logger.info(f"Multi-start over {starts} starts kept energy {best[1].energy:.10g}")
        return best


# Global optimizer instance
energy_optimizer = EnergyOptimizer()
