import numpy as np
import pandas as pd
import logging
from fractions import Fraction
from typing import Dict, List, Optional, Tuple
from dataclasses import dataclass
from numpy.polynomial import polynomial as P
from src.config.spline_config import SplineConfig
from src.core.errors import ProblemValidationError
from src.geometry.manifolds import FlatCylinder
from src.curves.problem import InterpolationProblem
from src.exact.polyspline import PiecewisePolynomial, exact_energy, exact_solver

logger = logging.getLogger(__name__)

# Quintic smoothstep S(u) = 10u^3 - 15u^4 + 6u^5: S(0)=0, S(1)=1, S', S'' vanish at both ends
SMOOTHSTEP = np.array([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])


@dataclass
class WindingProblem:
    """Three knots on the cylinder cover: 0 at t=0, m + 1/2 at t=r, k0 at t=1"""
    r: float
    m: int
    k0: int
    v: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise ProblemValidationError(f"Middle knot time must lie in (0, 1), got {self.r}", [('r', 'outside (0, 1)')])

    @property
    def middle_target(self) -> float:
        return self.m + 0.5

    def to_problem(self) -> InterpolationProblem:
        prescribed = {} if self.v is None else {1: np.array([self.v, 0.0])}
        return InterpolationProblem(
            manifold=FlatCylinder(),
            order=2,
            knot_times=np.array([0.0, self.r, 1.0]),
            knot_points=np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.0]]),
            velocity_site=None if self.v is None else 0,
            prescribed=prescribed,
            windings=np.array([0, self.m, self.k0]),
            name=f"winding m={self.m} k0={self.k0}",
        )


def warn_if_rational(r: float) -> bool:
    """Log a warning when r is (numerically) a rational with a small denominator"""
    limit = SplineConfig.RATIONAL_WARN_DENOMINATOR
    frac = Fraction(float(r)).limit_denominator(limit)
    if abs(float(frac) - r) <= 1e-12:
        logger.warning(f"Middle knot time r={r} is rational ({frac}); zero-energy classes may exist")
        return True
    return False


def _parabola_coefficient(r: float, k0, m):
    return (np.asarray(m) + 0.5 - np.asarray(k0) * r) / (r * r - r)


def parabola_energy(r: float, k0, m):
    """int q''^2 for the parabola through (0, 0), (r, m + 1/2), (1, k0)"""
    a = _parabola_coefficient(r, k0, m)
    return 4.0 * a * a


def parabola_initial_speed(r: float, k0, m):
    """
    q'(0) = k0 - a for q(t) = a t^2 + (k0 - a) t.

    The value k0 - 2a that sometimes appears for this quantity is not the
    derivative of q at 0; differentiating q gives k0 - a.
    """
    return np.asarray(k0) - _parabola_coefficient(r, k0, m)


def fitted_parabola(r: float, k0: int, m: int) -> PiecewisePolynomial:
    a = float(_parabola_coefficient(r, k0, m))
    return PiecewisePolynomial(np.array([0.0, 1.0]), np.array([[0.0, k0 - a, a, 0.0]]), 2)


def best_approximation(r: float, K: int) -> Dict:
    """Exhaustive best k0 in 1..K for |m + 1/2 - k0 r| with m the nearest admissible integer"""
    if K < 1:
        raise ValueError("K must be at least 1")
    k = np.arange(1, K + 1)
    m = np.rint(k * r - 0.5)
    gaps = np.abs(m + 0.5 - k * r)
    best = int(np.argmin(gaps))
    return {'K': int(K), 'k0': int(k[best]), 'm': int(m[best]), 'gap': float(gaps[best])}


def doubling_schedule(K_max: int) -> List[int]:
    schedule = []
    K = 1
    while K < K_max:
        schedule.append(K)
        K *= 2
    schedule.append(int(K_max))
    return schedule


def continued_fraction_denominators(r: float, n_terms: int = 30, limit: Optional[int] = None) -> List[int]:
    """Denominators q_n of the continued-fraction convergents of r"""
    denominators = []
    q_prev, q = 1, 0
    x = float(r)
    for _ in range(n_terms):
        a = int(np.floor(x))
        q_prev, q = q, a * q + q_prev
        if limit is not None and q > limit:
            break
        denominators.append(q)
        frac = x - a
        if frac < 1e-12:
            break
        x = 1.0 / frac
    return denominators


def natural_spline_energy(r: float, k0: int, m: int) -> float:
    """int x''^2 of the 3-knot natural cubic spline in the winding class (m, k0)"""
    poly = exact_solver.solve_exact(WindingProblem(r, m, k0).to_problem())
    return exact_energy(poly, halved=False)


def bump_second_derivative_integral(delta: float) -> float:
    """int phi''^2 for the mirrored smoothstep bump of half-width delta"""
    s2 = P.polyder(SMOOTHSTEP, 2)
    unit = float(P.polyval(1.0, P.polyint(P.polymul(s2, s2))))
    return 2.0 * unit / delta ** 3


def natural_periodic_curve(r: float, k0: int, alpha: float, delta: float) -> PiecewisePolynomial:
    """
    The line t -> k0 t plus alpha times the bump centred at r.

    Pieces: [0, r-delta] line, [r-delta, r] rising smoothstep,
    [r, r+delta] falling smoothstep, [r+delta, 1] line.
    """
    _check_support(r, delta)
    u = np.array([delta ** -p for p in range(6)])
    rising = alpha * SMOOTHSTEP * u
    falling = -rising
    falling[0] += alpha
    breakpoints = np.array([0.0, r - delta, r, r + delta, 1.0])
    coeffs = np.zeros((4, 6))
    for i, start in enumerate(breakpoints[:-1]):
        coeffs[i, 0] = k0 * start
        coeffs[i, 1] = k0
    coeffs[1] += rising
    coeffs[2] += falling
    return PiecewisePolynomial(breakpoints, coeffs, 2)


def _check_support(r: float, delta: float):
    if delta <= 0 or r - delta <= 0.0 or r + delta >= 1.0:
        raise ProblemValidationError(
            f"Bump support [{r - delta}, {r + delta}] must lie inside (0, 1)", [('delta', 'support outside (0, 1)')]
        )


class CylinderLab:
    """Winding-class experiments on the flat cylinder of perimeter one"""

    def __init__(self):
        self.default_r = SplineConfig.resolve_real(SplineConfig.CYLINDER_DEFAULT_R)

    def dirichlet_sequence(self, r: Optional[float] = None, K_max: int = 10000,
                           with_splines: bool = True) -> pd.DataFrame:
        """
        Best winding classes along a doubling schedule of K.

        Args:
            r: middle knot time (golden-ratio conjugate by default)
            K_max: last K of the schedule
            with_splines: add the 3-knot natural spline energy per class

        Returns:
            DataFrame with K, k0, m, gap, energy_int, energy_f, initial_speed, cf_denominator
        """
        r = self.default_r if r is None else r
        if K_max < 1:
            raise ProblemValidationError("K_max must be at least 1", [('K_max', 'must be at least 1')])
        warn_if_rational(r)
        rows = [best_approximation(r, K) for K in doubling_schedule(K_max)]
        table = pd.DataFrame(rows)
        table['energy_int'] = parabola_energy(r, table['k0'].to_numpy(), table['m'].to_numpy())
        table['energy_f'] = 0.5 * table['energy_int']
        table['initial_speed'] = parabola_initial_speed(r, table['k0'].to_numpy(), table['m'].to_numpy())
        # gap <= 1/q for the largest convergent denominator q <= K
        denominators = continued_fraction_denominators(r, limit=K_max)
        table['cf_denominator'] = [max(q for q in denominators if q <= K) for K in table['K']]
        if with_splines:
            table['spline_energy_int'] = [
                natural_spline_energy(r, int(k0), int(m)) for k0, m in zip(table['k0'], table['m'])
            ]
        logger.info(
            f"Dirichlet sequence for r={r:.12g} up to K={K_max}: best gap {table['gap'].iloc[-1]:.3e}, "
            f"energy {table['energy_int'].iloc[-1]:.3e}"
        )
        return table

    def constrained_winding_scan(self, r: Optional[float] = None, v: float = 0.0,
                                 window: Tuple[int, int] = (-10, 10)) -> Tuple[pd.DataFrame, Dict]:
        """
        Exact energies of every class (m, k0) in the window with x'(0) = v.

        Returns:
            (table with m, k0, energy_int, energy_f; summary with the minimizing class)
        """
        r = self.default_r if r is None else r
        lo, hi = int(window[0]), int(window[1])
        if hi < lo:
            raise ProblemValidationError("Empty winding window", [('window', f"[{lo}, {hi}] is empty")])
        warn_if_rational(r)
        rows = []
        try:
            for m in range(lo, hi + 1):
                for k0 in range(lo, hi + 1):
                    poly = exact_solver.solve_exact(WindingProblem(r, m, k0, v).to_problem())
                    energy = exact_energy(poly, halved=False)
                    rows.append({'m': m, 'k0': k0, 'energy_int': energy, 'energy_f': 0.5 * energy})
        except Exception as e:
            logger.error(f"Error scanning winding classes: {e}")
            raise
        table = pd.DataFrame(rows)
        best = table.loc[table['energy_int'].idxmin()]
        on_boundary = table[table['m'].isin([lo, hi]) | table['k0'].isin([lo, hi])]
        summary = {
            'r': r,
            'v': v,
            'window': [lo, hi],
            'argmin': {'m': int(best['m']), 'k0': int(best['k0'])},
            'min_energy_int': float(best['energy_int']),
            'min_boundary_energy_int': float(on_boundary['energy_int'].min()),
        }
        logger.info(
            f"Winding scan r={r:.12g} v={v} window=[{lo}, {hi}]: argmin m={summary['argmin']['m']} "
            f"k0={summary['argmin']['k0']} energy {summary['min_energy_int']:.6g}"
        )
        return table, summary

    def natural_periodic_sequence(self, r: Optional[float] = None, K_max: int = 10000,
                                  delta: float = 0.1) -> pd.DataFrame:
        """
        Energies of line-plus-bump curves along the Dirichlet sequence.

        Each curve is k0 t + alpha phi(t) with alpha = m + 1/2 - k0 r, so it
        hits m + 1/2 at r and k0 at 1 while x'' vanishes near both ends and
        x'(0) = x'(1).
        """
        r = self.default_r if r is None else r
        _check_support(r, delta)
        sequence = self.dirichlet_sequence(r, K_max, with_splines=False)
        bump = bump_second_derivative_integral(delta)
        alpha = sequence['m'].to_numpy() + 0.5 - sequence['k0'].to_numpy() * r
        table = sequence[['K', 'k0', 'm']].copy()
        table['alpha'] = alpha
        table['energy_int'] = alpha ** 2 * bump
        table['energy_f'] = 0.5 * table['energy_int']
        logger.info(f"Natural/periodic sequence delta={delta}: last energy {table['energy_int'].iloc[-1]:.3e}")
        return table


# Global lab instance
cylinder_lab = CylinderLab()
