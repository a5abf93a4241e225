import json
import sys
import logging
import numpy as np
import pandas as pd
from pathlib import Path
from typing import Any, Dict, Optional, Union
from src.config.spline_config import SplineConfig
from src.core.errors import ProblemValidationError
from src.geometry.manifolds import make_manifold
from src.curves.discrete_curve import ChartCurve, TimeGrid
from src.exact.polyspline import PiecewisePolynomial

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def _to_builtin(value: Any) -> Any:
    """Convert numpy containers and scalars to plain JSON types"""
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_builtin(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + '.meta.json')


class ResultWriter:
    """Serializes curves, polynomials, tables and reports"""

    def __init__(self):
        self.schema_version = SplineConfig.SCHEMA_VERSION

    def document(self, kind: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        doc = {'schema_version': self.schema_version, 'kind': kind}
        doc.update(payload)
        return _to_builtin(doc)

    def write_json(self, doc: Dict[str, Any], path: Optional[Union[str, Path]] = None):
        text = json.dumps(_to_builtin(doc), indent=2, sort_keys=False)
        if path is None:
            sys.stdout.write(text + '\n')
            return
        Path(path).write_text(text + '\n', encoding='utf-8')
        logger.info(f"Wrote {doc.get('kind', 'document')} to {path}")

    def curve_frame(self, curve: ChartCurve) -> pd.DataFrame:
        frame = pd.DataFrame({'t': curve.times})
        for d in range(curve.coords.shape[1]):
            frame[f"x{d}"] = curve.coords[:, d]
        return frame

    def write_curve(self, curve: ChartCurve, path: Union[str, Path], meta: Optional[Dict[str, Any]] = None):
        """CSV with one node per row plus a JSON sidecar describing grid and manifold"""
        path = Path(path)
        self.curve_frame(curve).to_csv(path, index=False, float_format=FLOAT_FORMAT)
        sidecar = {
            'grid': {'M': curve.grid.M, 'start': curve.grid.start, 'end': curve.grid.end},
            'manifold': curve.manifold.descriptor(),
        }
        if meta:
            sidecar.update(meta)
        self.write_json(self.document('curve', sidecar), sidecar_path(path))
        logger.info(f"Wrote curve with {curve.grid.n_nodes} nodes to {path}")

    def read_curve(self, path: Union[str, Path]) -> ChartCurve:
        path = Path(path)
        meta_path = sidecar_path(path)
        try:
            meta = json.loads(meta_path.read_text(encoding='utf-8'))
            frame = pd.read_csv(path, float_precision='round_trip')
        except (OSError, ValueError) as e:
            raise ProblemValidationError(f"Cannot read curve {path}: {e}", [(str(path), str(e))])
        grid_meta = meta.get('grid', {})
        spec = meta.get('manifold', {})
        manifold = make_manifold(spec.get('kind'), spec.get('dim'), spec.get('pole'), spec.get('rho_pole'))
        columns = [c for c in frame.columns if c.startswith('x')]
        grid = TimeGrid(int(grid_meta['M']), float(grid_meta.get('start', 0.0)), float(grid_meta.get('end', 1.0)))
        return ChartCurve(grid, frame[columns].to_numpy(), manifold)

    def write_polynomial(self, poly: PiecewisePolynomial, path: Optional[Union[str, Path]] = None,
                         extra: Optional[Dict] = None):
        """Coefficients plus any extra report fields; stdout when path is None"""
        payload = poly.to_dict()
        if extra:
            payload.update(extra)
        self.write_json(self.document('piecewise_polynomial', payload), path)

    def read_polynomial(self, path: Union[str, Path]) -> PiecewisePolynomial:
        try:
            data = json.loads(Path(path).read_text(encoding='utf-8'))
            return PiecewisePolynomial.from_dict(data)
        except (OSError, ValueError, KeyError) as e:
            raise ProblemValidationError(f"Cannot read polynomial {path}: {e}", [(str(path), str(e))])

    def write_table(self, table: pd.DataFrame, path: Optional[Union[str, Path]] = None):
        if path is None:
            sys.stdout.write(table.to_string(index=False) + '\n')
            return
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        logger.info(f"Wrote table with {len(table)} rows to {path}")


def is_polynomial_file(path: Union[str, Path]) -> bool:
    path = Path(path)
    if path.suffix.lower() != '.json':
        return False
    try:
        return json.loads(path.read_text(encoding='utf-8')).get('kind') == 'piecewise_polynomial'
    except (OSError, ValueError, AttributeError):
        return False


# Global writer instance
result_writer = ResultWriter()
