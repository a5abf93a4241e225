import numpy as np
import logging
from math import comb, factorial
from typing import Dict, List, Optional, Tuple
from dataclasses import dataclass
from scipy import sparse
from src.curves.stencils import trapezoid_weights, first_difference_matrix, second_difference_matrix

logger = logging.getLogger(__name__)


def central_coefficients(order: int) -> np.ndarray:
    """Weights of the k-th central difference over k + 1 consecutive nodes"""
    return np.array([(-1.0) ** (order - i) * comb(order, i) for i in range(order + 1)])


def taylor_offset(derivatives: Dict[int, np.ndarray], t: float, dim: int) -> np.ndarray:
    """sum_l t^l / l! v_l over the prescribed derivatives v_l"""
    out = np.zeros(dim)
    for l, v in derivatives.items():
        out += t ** l / factorial(l) * np.asarray(v, dtype=float)
    return out


@dataclass
class EnergyQuadrature:
    """
    Weighted rows that evaluate the energy integrand on a uniform grid.

    Row q carries the k-th derivative D[q] @ X + offset[q]. For order 2 on a
    curved manifold the Christoffel term uses the velocity row
    Dv[q] @ X + velocity_offset[q], and metric data are read at node base[q].
    The energy is 1/2 sum_q weights[q] g(A_q, A_q).
    """
    h: float
    order: int
    D: sparse.csr_matrix
    offset: np.ndarray
    Dv: Optional[sparse.csr_matrix]
    velocity_offset: Optional[np.ndarray]
    base: np.ndarray
    weights: np.ndarray

    @property
    def n_rows(self) -> int:
        return int(self.weights.size)

    @property
    def n_nodes(self) -> int:
        return int(self.D.shape[1])

    @classmethod
    def trapezoid(cls, n_nodes: int, h: float, dim: int) -> 'EnergyQuadrature':
        """Trapezoid rule over every node, one-sided stencils at the two ends"""
        zeros = np.zeros((n_nodes, dim))
        return cls(
            h=h, order=2,
            D=second_difference_matrix(n_nodes, h), offset=zeros,
            Dv=first_difference_matrix(n_nodes, h), velocity_offset=zeros.copy(),
            base=np.arange(n_nodes), weights=trapezoid_weights(n_nodes, h),
        )

    @classmethod
    def closed(cls, M: int, h: float, dim: int, order: int, site: Optional[int] = None,
               derivatives: Optional[Dict[int, np.ndarray]] = None) -> 'EnergyQuadrature':
        """
        Quadrature closed by the end conditions of an interpolation problem.

        Central k-th differences are kept wherever their stencil fits on the
        grid. A natural end gets no further rows, which leaves the integrand
        free to vanish there. At the velocity site the stencils may reach past
        the site; those values come from a ghost node mirrored across it,
            x_{s+d} = x_{s-d} + T(d h) - T(-d h),
        with T the Taylor polynomial of the prescribed derivatives. For even k
        the row centred on the site gets half weight, and an interior site
        gets one such row per side.
        """
        builder = _RowBuilder(M, h, dim, order, site, derivatives or {})
        m = order // 2
        even = order % 2 == 0
        interior_site = site is not None and 0 < site < M
        for start in range(0, M - order + 1):
            if even and interior_site and start + m == site:
                continue
            builder.add(start, h)
        if site == 0:
            for start in range(-m, 0):
                builder.add(start, h / 2.0 if even and start + m == 0 else h, side=1)
        elif site == M:
            for start in range(M - order + 1, M - order + m + 1):
                builder.add(start, h / 2.0 if even and start + m == M else h, side=-1)
        elif interior_site and even:
            builder.add(site - m, h / 2.0, side=1)
            builder.add(site - m, h / 2.0, side=-1)
        quadrature = builder.build()
        logger.debug(f"Closed quadrature of order {order}: {quadrature.n_rows} rows on M={M}")
        return quadrature


class _RowBuilder:
    def __init__(self, M: int, h: float, dim: int, order: int, site: Optional[int],
                 derivatives: Dict[int, np.ndarray]):
        self.M = M
        self.h = h
        self.dim = dim
        self.order = order
        self.site = site
        self.derivatives = derivatives
        self.entries: List[Tuple[int, int, float]] = []
        self.velocity_entries: List[Tuple[int, int, float]] = []
        self.offsets: List[np.ndarray] = []
        self.velocity_offsets: List[np.ndarray] = []
        self.base: List[int] = []
        self.weights: List[float] = []

    def _resolve(self, stencil: Dict[int, float], side: int) -> Tuple[Dict[int, float], np.ndarray]:
        """Coefficients on real nodes plus a constant, ghosts on the far side of the site reflected"""
        coeffs: Dict[int, float] = {}
        const = np.zeros(self.dim)
        for node, c in stencil.items():
            d = node - self.site if side else 0
            if d * side < 0:
                node = self.site - d
                jump = taylor_offset(self.derivatives, d * self.h, self.dim) \
                    - taylor_offset(self.derivatives, -d * self.h, self.dim)
                const += c * jump
            if not 0 <= node <= self.M:
                raise ValueError(f"Stencil node {node} lies outside the grid with M={self.M}")
            coeffs[node] = coeffs.get(node, 0.0) + c
        return coeffs, const

    def add(self, start: int, weight: float, side: int = 0):
        k = self.order
        row = len(self.weights)
        weights = central_coefficients(k) / self.h ** k
        coeffs, const = self._resolve({start + i: c for i, c in enumerate(weights)}, side)
        self.entries.extend((row, node, c) for node, c in coeffs.items() if c != 0.0)
        self.offsets.append(const)
        if k == 2:
            half = 0.5 / self.h
            coeffs, const = self._resolve({start: -half, start + 2: half}, side)
            self.velocity_entries.extend((row, node, c) for node, c in coeffs.items() if c != 0.0)
            self.velocity_offsets.append(const)
        self.base.append(start + k // 2)
        self.weights.append(weight)

    @staticmethod
    def _matrix(entries: List[Tuple[int, int, float]], shape: Tuple[int, int]) -> sparse.csr_matrix:
        if not entries:
            return sparse.csr_matrix(shape)
        rows, cols, vals = zip(*entries)
        return sparse.csr_matrix((vals, (rows, cols)), shape=shape)

    def build(self) -> EnergyQuadrature:
        shape = (len(self.weights), self.M + 1)
        if not self.weights:
            raise ValueError(f"No order-{self.order} stencil fits on the grid with M={self.M}")
        velocity = self.order == 2
        return EnergyQuadrature(
            h=self.h,
            order=self.order,
            D=self._matrix(self.entries, shape),
            offset=np.array(self.offsets),
            Dv=self._matrix(self.velocity_entries, shape) if velocity else None,
            velocity_offset=np.array(self.velocity_offsets) if velocity else None,
            base=np.array(self.base, dtype=int),
            weights=np.array(self.weights),
        )
