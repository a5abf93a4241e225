import json
import logging
import numpy as np
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union
from dataclasses import dataclass, field
from src.config.spline_config import SplineConfig
from src.core.errors import ProblemValidationError
from src.geometry.manifolds import make_manifold
from src.curves.problem import InterpolationProblem

logger = logging.getLogger(__name__)

SOLVER_KEYS = {
    'grid': int, 'tol_grad': float, 'max_iter': int, 'memory': int,
    'initial_step': float, 'backtrack': float, 'armijo': float, 'starts': int,
}


@dataclass
class ProblemFile:
    """Parsed problem document: the problem itself plus solver settings"""
    problem: InterpolationProblem
    solver: Dict[str, Any] = field(default_factory=dict)
    source: Optional[str] = None
    raw: Dict[str, Any] = field(default_factory=dict)


class ProblemLoader:
    """Reads JSON problem documents and reports every malformed field at once"""

    def load(self, path: Union[str, Path]) -> ProblemFile:
        path = Path(path)
        try:
            text = path.read_text(encoding='utf-8')
        except OSError as e:
            raise ProblemValidationError(f"Cannot read problem file {path}: {e}", [(str(path), str(e))])
        parsed = self.loads(text)
        parsed.source = str(path)
        logger.info(f"Loaded problem '{parsed.problem.name or path.stem}' from {path}")
        return parsed

    def loads(self, text: str) -> ProblemFile:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ProblemValidationError(
                f"Problem file is not valid JSON: {e.msg}", [(f"line {e.lineno}, column {e.colno}", e.msg)]
            )
        if not isinstance(data, dict):
            raise ProblemValidationError("Problem file must hold a JSON object", [('$', 'expected an object')])
        return self.from_dict(data)

    def from_dict(self, data: Dict[str, Any]) -> ProblemFile:
        issues: List[Tuple[str, str]] = []

        manifold = None
        spec = data.get('manifold')
        if not isinstance(spec, dict):
            issues.append(('manifold', 'required object with a "kind" field'))
        else:
            try:
                manifold = make_manifold(
                    spec.get('kind'), spec.get('dim'), pole=spec.get('pole'), rho_pole=spec.get('rho_pole')
                )
            except ProblemValidationError as e:
                issues.extend(e.locations)
            except (TypeError, ValueError) as e:
                issues.append(('manifold', str(e)))

        order = data.get('order', 2)
        if not isinstance(order, int) or isinstance(order, bool):
            issues.append(('order', f"expected an integer, got {order!r}"))
            order = 2

        times, points = [], []
        knots = data.get('knots')
        if not isinstance(knots, list) or not knots:
            issues.append(('knots', 'required non-empty list of {"t", "point"} objects'))
        else:
            for i, knot in enumerate(knots):
                if not isinstance(knot, dict):
                    issues.append((f"knots[{i}]", 'expected an object'))
                    continue
                t = self._real(knot.get('t'), f"knots[{i}].t", issues)
                point = self._vector(knot.get('point'), f"knots[{i}].point", issues)
                if t is not None and point is not None:
                    times.append(t)
                    points.append(point)

        site, prescribed = None, {}
        velocity = data.get('velocity')
        if velocity is not None:
            if not isinstance(velocity, dict):
                issues.append(('velocity', 'expected an object with "site" and "derivatives"'))
            else:
                site = velocity.get('site')
                if not isinstance(site, int) or isinstance(site, bool):
                    issues.append(('velocity.site', f"expected a knot index, got {site!r}"))
                    site = None
                derivatives = velocity.get('derivatives')
                if isinstance(derivatives, list):
                    derivatives = {str(l + 1): v for l, v in enumerate(derivatives)}
                if not isinstance(derivatives, dict) or not derivatives:
                    issues.append(('velocity.derivatives', 'expected a list of vectors or an {order: vector} object'))
                else:
                    for key, value in derivatives.items():
                        try:
                            level = int(key)
                        except ValueError:
                            issues.append((f"velocity.derivatives[{key}]", 'derivative order must be an integer'))
                            continue
                        vec = self._vector(value, f"velocity.derivatives[{key}]", issues)
                        if vec is not None:
                            prescribed[level] = vec

        windings = data.get('windings')
        if windings is not None and (
            not isinstance(windings, list) or not all(isinstance(w, int) and not isinstance(w, bool) for w in windings)
        ):
            issues.append(('windings', 'expected a list of integers'))
            windings = None

        path_weight = self._real(data.get('path_weight', 0.0), 'path_weight', issues)

        solver = {}
        raw_solver = data.get('solver', {}) or {}
        if not isinstance(raw_solver, dict):
            issues.append(('solver', 'expected an object'))
        else:
            for key, value in raw_solver.items():
                if key not in SOLVER_KEYS:
                    issues.append((f"solver.{key}", 'unknown solver option'))
                    continue
                try:
                    solver[key] = SOLVER_KEYS[key](value)
                except (TypeError, ValueError):
                    issues.append((f"solver.{key}", f"expected {SOLVER_KEYS[key].__name__}, got {value!r}"))

        if issues:
            raise ProblemValidationError(
                "Invalid problem file: " + "; ".join(f"{loc}: {msg}" for loc, msg in issues), issues
            )

        dims = {len(p) for p in points}
        if len(dims) > 1:
            raise ProblemValidationError(
                "Knot points have mixed dimensions", [('knots', f"dimensions {sorted(dims)}")]
            )

        problem = InterpolationProblem(
            manifold=manifold,
            order=order,
            knot_times=np.array(times),
            knot_points=np.array(points),
            velocity_site=site,
            prescribed=prescribed,
            windings=None if windings is None else np.array(windings),
            path_weight=path_weight or 0.0,
            name=str(data.get('name', '')),
        )
        return ProblemFile(problem=problem, solver=solver, raw=data)

    @staticmethod
    def _real(value, location: str, issues: List[Tuple[str, str]]) -> Optional[float]:
        """Numbers, fraction strings such as "1/3", or named constants"""
        if isinstance(value, bool) or value is None:
            issues.append((location, f"expected a real number, got {value!r}"))
            return None
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            key = value.strip().lower()
            if key in SplineConfig.NAMED_CONSTANTS:
                return SplineConfig.NAMED_CONSTANTS[key]
            try:
                return float(Fraction(key))
            except (ValueError, ZeroDivisionError):
                pass
        issues.append((location, f"expected a real number, got {value!r}"))
        return None

    def _vector(self, value, location: str, issues: List[Tuple[str, str]]) -> Optional[List[float]]:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, list) or not value:
            issues.append((location, f"expected a list of numbers, got {value!r}"))
            return None
        out = []
        before = len(issues)
        for i, item in enumerate(value):
            out.append(self._real(item, f"{location}[{i}]", issues))
        return None if len(issues) > before else out


# Global loader instance
problem_loader = ProblemLoader()
