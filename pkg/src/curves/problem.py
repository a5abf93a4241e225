import numpy as np
import logging
from typing import Dict, List, Optional, Tuple
from dataclasses import dataclass, field
from src.geometry.manifolds import ManifoldModel, ChartPoint, TangentVec, FlatCylinder
from src.core.errors import ChartError, ProblemValidationError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class InterpolationProblem:
    """
    Interpolation data for a spline of order k.

    Knots are (t_i, p_i) with t_0 = 0 < t_1 < ... < t_N = 1. At most one knot
    (the velocity site) carries prescribed derivatives v_l, l = 1..k-1, given
    as D_t^{l-1} of the velocity. On the flat cylinder `windings` lifts each
    knot by an integer number of turns along coordinate 0.
    """
    manifold: ManifoldModel
    order: int
    knot_times: np.ndarray
    knot_points: np.ndarray
    velocity_site: Optional[int] = None
    prescribed: Dict[int, np.ndarray] = field(default_factory=dict)
    windings: Optional[np.ndarray] = None
    path_weight: float = 0.0
    name: str = ''

    def __post_init__(self):
        self.knot_times = np.asarray(self.knot_times, dtype=float).reshape(-1)
        points = np.asarray(self.knot_points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(self.knot_times.size, -1)
        self.knot_points = points
        self.prescribed = {int(l): np.asarray(v, dtype=float).reshape(-1) for l, v in self.prescribed.items()}
        if self.windings is not None:
            self.windings = np.asarray(self.windings, dtype=int).reshape(-1)
        self.validate()

    def validate(self):
        """Check every structural rule and raise one error listing all of them"""
        issues: List[Tuple[str, str]] = []
        times = self.knot_times
        dim = self.manifold.dim

        if self.order < 2:
            issues.append(('order', f"order must be at least 2, got {self.order}"))
        if times.size < 2:
            issues.append(('knots', "at least two knots are required"))
        if self.knot_points.shape != (times.size, dim):
            issues.append(('knots', f"expected {times.size} points of dimension {dim}, got shape {self.knot_points.shape}"))
        if not np.all(np.isfinite(times)):
            issues.append(('knots', "knot times must be finite"))
        if times.size >= 2:
            if times[0] != 0.0:
                issues.append(('knots[0].t', f"first knot time must be 0, got {times[0]}"))
            if times[-1] != 1.0:
                issues.append((f"knots[{times.size - 1}].t", f"last knot time must be 1, got {times[-1]}"))
            for i in range(1, times.size):
                if times[i] <= times[i - 1]:
                    issues.append((f"knots[{i}].t", f"knot times must be strictly increasing ({times[i - 1]} then {times[i]})"))

        if self.velocity_site is None:
            if self.prescribed:
                issues.append(('velocity.site', "prescribed derivatives given without a velocity site"))
        else:
            if not 0 <= self.velocity_site < times.size:
                issues.append(('velocity.site', f"velocity site {self.velocity_site} is not a knot index"))
            expected = set(range(1, self.order))
            if set(self.prescribed) != expected:
                issues.append((
                    'velocity.derivatives',
                    f"order {self.order} needs derivatives of orders {sorted(expected)}, got {sorted(self.prescribed)}"
                ))
            for l, v in self.prescribed.items():
                if v.shape != (dim,):
                    issues.append((f"velocity.derivatives[{l}]", f"expected {dim} components, got {v.shape[0]}"))
                elif not np.all(np.isfinite(v)):
                    issues.append((f"velocity.derivatives[{l}]", "components must be finite"))

        if self.windings is not None:
            if not isinstance(self.manifold, FlatCylinder):
                issues.append(('windings', "winding targets only apply to the flat cylinder"))
            elif self.windings.shape != times.shape:
                issues.append(('windings', f"expected {times.size} winding integers, got {self.windings.size}"))

        windings_ok = self.windings is None or self.windings.shape == times.shape
        if self.knot_points.shape == (times.size, dim) and windings_ok:
            try:
                self.manifold.check_admissible(self.targets())
            except ChartError as e:
                issues.append(('knots', str(e)))

        if self.path_weight < 0:
            issues.append(('path_weight', "path weight cannot be negative"))

        if issues:
            message = "; ".join(f"{loc}: {msg}" for loc, msg in issues)
            raise ProblemValidationError(f"Invalid interpolation problem: {message}", issues)

    @property
    def n_intervals(self) -> int:
        return self.knot_times.size - 1

    @property
    def dim(self) -> int:
        return self.manifold.dim

    @property
    def has_velocity(self) -> bool:
        return self.velocity_site is not None

    @property
    def velocity(self) -> Optional[np.ndarray]:
        return self.prescribed.get(1)

    @property
    def velocity_time(self) -> Optional[float]:
        if self.velocity_site is None:
            return None
        return float(self.knot_times[self.velocity_site])

    def targets(self) -> np.ndarray:
        """Knot points on the universal cover (windings applied)"""
        pts = self.knot_points.copy()
        if self.windings is not None:
            pts[:, 0] += self.windings
        return pts

    @property
    def knots(self) -> List[Tuple[float, ChartPoint]]:
        return [(float(t), ChartPoint(p)) for t, p in zip(self.knot_times, self.targets())]

    @property
    def prescribed_derivs(self) -> List[Tuple[int, TangentVec]]:
        if self.velocity_site is None:
            return []
        base = ChartPoint(self.targets()[self.velocity_site])
        return [(l, TangentVec(base, self.prescribed[l])) for l in sorted(self.prescribed)]

    def with_order(self, order: int, prescribed: Optional[Dict[int, np.ndarray]] = None) -> 'InterpolationProblem':
        return InterpolationProblem(
            manifold=self.manifold,
            order=order,
            knot_times=self.knot_times,
            knot_points=self.knot_points,
            velocity_site=self.velocity_site,
            prescribed=self.prescribed if prescribed is None else prescribed,
            windings=self.windings,
            path_weight=self.path_weight,
            name=self.name,
        )

    def describe(self) -> Dict:
        return {
            'name': self.name,
            'manifold': self.manifold.descriptor(),
            'order': self.order,
            'knot_times': self.knot_times.tolist(),
            'knot_points': self.knot_points.tolist(),
            'velocity_site': self.velocity_site,
            'prescribed': {str(l): v.tolist() for l, v in self.prescribed.items()},
            'windings': None if self.windings is None else self.windings.tolist(),
            'path_weight': self.path_weight,
        }
