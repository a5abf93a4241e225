import numpy as np
import logging
from typing import Dict, Optional, Sequence, Union
from dataclasses import dataclass
from src.config.spline_config import SplineConfig
from src.core.errors import ChartError, ProblemValidationError

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True, eq=False)
class ChartPoint:
    """Chart coordinates of a point on one of the model manifolds"""
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'coords', np.asarray(self.coords, dtype=float).reshape(-1))

    @property
    def dim(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True, eq=False)
class TangentVec:
    base: ChartPoint
    comp: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'comp', np.asarray(self.comp, dtype=float).reshape(-1))
        if self.comp.shape[0] != self.base.dim:
            raise ValueError(
                f"Tangent vector has {self.comp.shape[0]} components, base point has dimension {self.base.dim}"
            )


class ManifoldModel:
    """
    Riemannian model manifold described in a single global chart.

    Field methods take an (n, dim) array of chart points and return per-node
    tensors with the node index first:
        metric_field              g[n, a, b]
        metric_derivative_field   dg[n, c, a, b]   = d_c g_ab
        christoffel_field         Gamma[n, k, i, j] = Gamma^k_ij
        christoffel_derivative_field  dGamma[n, c, k, i, j] = d_c Gamma^k_ij
        curvature_field           R[n, l, i, j, k]  with R(d_i, d_j) d_k = R^l_ijk d_l
    """

    kind = 'abstract'

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"Manifold dimension must be positive, got {dim}")
        self.dim = dim

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim})"

    @property
    def is_flat(self) -> bool:
        return False

    def descriptor(self) -> Dict:
        return {'kind': self.kind, 'dim': self.dim}

    def _as_points(self, x: Union[ChartPoint, ArrayLike]) -> np.ndarray:
        if isinstance(x, ChartPoint):
            x = x.coords
        pts = np.asarray(x, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.shape[-1] != self.dim:
            raise ChartError(f"{self!r} expects {self.dim} chart coordinates, got {pts.shape[-1]}")
        return pts

    def check_admissible(self, x: Union[ChartPoint, ArrayLike]) -> np.ndarray:
        """Return the points as an (n, dim) array or raise ChartError"""
        pts = self._as_points(x)
        if not np.all(np.isfinite(pts)):
            raise ChartError("Chart coordinates must be finite")
        return pts

    # Field versions ------------------------------------------------------

    def metric_field(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def metric_derivative_field(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def christoffel_field(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def christoffel_derivative_field(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def curvature_field(self, pts: np.ndarray) -> np.ndarray:
        pts = self.check_admissible(pts)
        gamma = self.christoffel_field(pts)
        dgamma = self.christoffel_derivative_field(pts)
        # R^l_ijk = d_i G^l_jk - d_j G^l_ik + G^l_im G^m_jk - G^l_jm G^m_ik
        derivative_part = (
            np.einsum('niljk->nlijk', dgamma)
            - np.einsum('njlik->nlijk', dgamma)
        )
        quadratic_part = (
            np.einsum('nlim,nmjk->nlijk', gamma, gamma)
            - np.einsum('nljm,nmik->nlijk', gamma, gamma)
        )
        return derivative_part + quadratic_part

    # Point versions ------------------------------------------------------

    def metric(self, x: Union[ChartPoint, ArrayLike]) -> np.ndarray:
        return self.metric_field(self.check_admissible(x))[0]

    def christoffel(self, x: Union[ChartPoint, ArrayLike]) -> np.ndarray:
        return self.christoffel_field(self.check_admissible(x))[0]

    def curvature(self, x: Union[ChartPoint, ArrayLike]) -> np.ndarray:
        return self.curvature_field(self.check_admissible(x))[0]

    def inner(self, x: Union[ChartPoint, ArrayLike], u: ArrayLike, v: ArrayLike) -> float:
        return float(np.asarray(u) @ self.metric(x) @ np.asarray(v))

    def apply_curvature(self, x, X: ArrayLike, Y: ArrayLike, Z: ArrayLike) -> np.ndarray:
        """R(X, Y) Z at a single chart point"""
        R = self.curvature(x)
        return np.einsum('lijk,i,j,k->l', R, np.asarray(X), np.asarray(Y), np.asarray(Z))


class Euclidean(ManifoldModel):
    """Flat R^n with the identity metric"""

    kind = 'euclidean'

    @property
    def is_flat(self) -> bool:
        return True

    def metric_field(self, pts):
        n = pts.shape[0]
        return np.broadcast_to(np.eye(self.dim), (n, self.dim, self.dim)).copy()

    def metric_derivative_field(self, pts):
        return np.zeros((pts.shape[0],) + (self.dim,) * 3)

    def christoffel_field(self, pts):
        return np.zeros((pts.shape[0],) + (self.dim,) * 3)

    def christoffel_derivative_field(self, pts):
        return np.zeros((pts.shape[0],) + (self.dim,) * 4)

    def curvature_field(self, pts):
        pts = self.check_admissible(pts)
        return np.zeros((pts.shape[0],) + (self.dim,) * 4)


class FlatCylinder(Euclidean):
    """
    Cylinder of perimeter one, represented on its universal cover R x R.

    Coordinate 0 is the angular coordinate in winding units (period 1),
    coordinate 1 the height. Winding classes are carried explicitly by the
    problem, never inferred from the angle.
    """

    kind = 'cylinder'

    def __init__(self):
        super().__init__(2)

    def __repr__(self) -> str:
        return "FlatCylinder()"

    def to_embedding(self, x: ArrayLike) -> np.ndarray:
        pts = self.check_admissible(x)
        angle = 2.0 * np.pi * pts[:, 0]
        radius = 1.0 / (2.0 * np.pi)
        return np.column_stack([radius * np.cos(angle), radius * np.sin(angle), pts[:, 1]])


class Sphere(ManifoldModel):
    """
    Unit sphere in the stereographic chart projected from a configurable pole.

    With s = |x|^2 the metric is g = 4 / (1 + s)^2 * I, a conformal factor
    e^{2 phi} with phi = log 2 - log(1 + s).
    """

    kind = 'sphere'

    def __init__(self, pole: Optional[ArrayLike] = None, rho_pole: Optional[float] = None):
        super().__init__(2)
        pole = np.array([0.0, 0.0, 1.0]) if pole is None else np.asarray(pole, dtype=float)
        norm = np.linalg.norm(pole)
        if pole.shape != (3,) or norm == 0:
            raise ValueError("Sphere pole must be a non-zero 3-vector")
        self.pole = pole / norm
        self.rho_pole = float(rho_pole if rho_pole is not None else SplineConfig.SPHERE_POLE_RADIUS)
        self._frame = self._build_frame(self.pole)

    def __repr__(self) -> str:
        return f"Sphere(pole={self.pole.tolist()}, rho_pole={self.rho_pole})"

    @staticmethod
    def _build_frame(pole: np.ndarray) -> np.ndarray:
        """Orthonormal columns (e1, e2, pole)"""
        helper = np.array([1.0, 0.0, 0.0]) if abs(pole[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = helper - (helper @ pole) * pole
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(pole, e1)
        return np.column_stack([e1, e2, pole])

    def descriptor(self) -> Dict:
        return {'kind': self.kind, 'dim': self.dim, 'pole': self.pole.tolist(), 'rho_pole': self.rho_pole}

    def check_admissible(self, x):
        pts = super().check_admissible(x)
        radius = np.sqrt(np.sum(pts ** 2, axis=1))
        if np.any(radius >= self.rho_pole):
            worst = float(radius.max())
            raise ChartError(
                f"Chart point at radius {worst:.4g} is within the pole-proximity limit {self.rho_pole:.4g}"
            )
        return pts

    def to_embedding(self, x) -> np.ndarray:
        pts = self.check_admissible(x)
        s = np.sum(pts ** 2, axis=1)
        canonical = np.column_stack([2 * pts[:, 0], 2 * pts[:, 1], s - 1.0]) / (1.0 + s)[:, None]
        return canonical @ self._frame.T

    def from_embedding(self, X: ArrayLike) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(X, dtype=float)) @ self._frame
        denom = 1.0 - Y[:, 2]
        if np.any(denom <= 0):
            raise ChartError("Point coincides with the projection pole")
        pts = Y[:, :2] / denom[:, None]
        return self.check_admissible(pts)

    def _conformal(self, pts):
        s = np.sum(pts ** 2, axis=1)
        factor = 4.0 / (1.0 + s) ** 2
        dphi = -2.0 * pts / (1.0 + s)[:, None]
        hess = (
            -2.0 * np.eye(2)[None, :, :] / (1.0 + s)[:, None, None]
            + 4.0 * np.einsum('ni,nj->nij', pts, pts) / ((1.0 + s) ** 2)[:, None, None]
        )
        return factor, dphi, hess

    def metric_field(self, pts):
        factor, _, _ = self._conformal(pts)
        return factor[:, None, None] * np.eye(2)[None, :, :]

    def metric_derivative_field(self, pts):
        factor, dphi, _ = self._conformal(pts)
        # d_c g_ab = 2 e^{2 phi} d_c phi delta_ab
        return 2.0 * np.einsum('n,nc,ab->ncab', factor, dphi, np.eye(2))

    def christoffel_field(self, pts):
        _, dphi, _ = self._conformal(pts)
        eye = np.eye(2)
        # G^k_ij = delta^k_i d_j phi + delta^k_j d_i phi - delta_ij d_k phi
        return (
            np.einsum('ki,nj->nkij', eye, dphi)
            + np.einsum('kj,ni->nkij', eye, dphi)
            - np.einsum('ij,nk->nkij', eye, dphi)
        )

    def christoffel_derivative_field(self, pts):
        _, _, hess = self._conformal(pts)
        eye = np.eye(2)
        return (
            np.einsum('ki,njc->nckij', eye, hess)
            + np.einsum('kj,nic->nckij', eye, hess)
            - np.einsum('ij,nkc->nckij', eye, hess)
        )


def make_manifold(kind: str, dim: Optional[int] = None, pole: Optional[ArrayLike] = None,
                  rho_pole: Optional[float] = None) -> ManifoldModel:
    """Build one of the built-in models from its descriptor fields"""
    key = (kind or '').lower()
    if key == 'euclidean':
        if dim is None:
            raise ProblemValidationError("Euclidean manifold needs a dimension", [('manifold.dim', 'required')])
        return Euclidean(int(dim))
    if key in ('cylinder', 'flatcylinder', 'flat_cylinder'):
        if dim not in (None, 2):
            raise ProblemValidationError("FlatCylinder is two-dimensional", [('manifold.dim', 'must be 2')])
        return FlatCylinder()
    if key == 'sphere':
        if dim not in (None, 2):
            raise ProblemValidationError("Sphere is two-dimensional", [('manifold.dim', 'must be 2')])
        return Sphere(pole=pole, rho_pole=rho_pole)
    raise ProblemValidationError(f"Unknown manifold kind: {kind}", [('manifold.kind', f"unknown kind '{kind}'")])


def metric(manifold: ManifoldModel, x: Union[ChartPoint, ArrayLike]) -> np.ndarray:
    return manifold.metric(x)


def christoffel(manifold: ManifoldModel, x: Union[ChartPoint, ArrayLike]) -> np.ndarray:
    return manifold.christoffel(x)


def curvature(manifold: ManifoldModel, x: Union[ChartPoint, ArrayLike]) -> np.ndarray:
    return manifold.curvature(x)
