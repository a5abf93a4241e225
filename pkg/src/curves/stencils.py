import numpy as np
from scipy import sparse

# Second-order stencils on a uniform grid. Interior rows are centered, the
# two end rows are one-sided so every node gets a value.
_D1_START = np.array([-3.0, 4.0, -1.0]) / 2.0
_D1_END = np.array([1.0, -4.0, 3.0]) / 2.0
_D2_START = np.array([2.0, -5.0, 4.0, -1.0])
_D2_END = np.array([-1.0, 4.0, -5.0, 2.0])


def trapezoid_weights(n_nodes: int, h: float) -> np.ndarray:
    w = np.full(n_nodes, h)
    w[0] = w[-1] = h / 2.0
    return w


def first_difference(X: np.ndarray, h: float) -> np.ndarray:
    """d/dt of node values X (n, ...) with second-order accuracy everywhere"""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 3:
        raise ValueError("First difference needs at least 3 nodes")
    out = np.empty_like(X)
    out[1:-1] = (X[2:] - X[:-2]) / (2.0 * h)
    out[0] = np.tensordot(_D1_START, X[:3], axes=1) / h
    out[-1] = np.tensordot(_D1_END, X[-3:], axes=1) / h
    return out


def second_difference(X: np.ndarray, h: float) -> np.ndarray:
    """Compact d2/dt2: (x+ - 2x + x-)/h^2 inside, 4-point one-sided at the ends"""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 4:
        raise ValueError("Second difference needs at least 4 nodes")
    h2 = h * h
    out = np.empty_like(X)
    out[1:-1] = (X[2:] - 2.0 * X[1:-1] + X[:-2]) / h2
    out[0] = np.tensordot(_D2_START, X[:4], axes=1) / h2
    out[-1] = np.tensordot(_D2_END, X[-4:], axes=1) / h2
    return out


def central_difference(X: np.ndarray, h: float) -> np.ndarray:
    """Centered first difference; the result has two fewer nodes than X"""
    X = np.asarray(X, dtype=float)
    return (X[2:] - X[:-2]) / (2.0 * h)


def first_difference_matrix(n_nodes: int, h: float) -> sparse.csr_matrix:
    interior = n_nodes - 2
    D = sparse.diags(
        [-np.ones(interior), np.ones(interior)], [0, 2], shape=(interior, n_nodes)
    ) / (2.0 * h)
    start = sparse.csr_matrix((_D1_START / h, ([0, 0, 0], [0, 1, 2])), shape=(1, n_nodes))
    end = sparse.csr_matrix(
        (_D1_END / h, ([0, 0, 0], [n_nodes - 3, n_nodes - 2, n_nodes - 1])), shape=(1, n_nodes)
    )
    return sparse.vstack([start, D, end]).tocsr()


def second_difference_matrix(n_nodes: int, h: float) -> sparse.csr_matrix:
    interior = n_nodes - 2
    h2 = h * h
    D = sparse.diags(
        [np.ones(interior), -2.0 * np.ones(interior), np.ones(interior)], [0, 1, 2],
        shape=(interior, n_nodes)
    ) / h2
    start = sparse.csr_matrix((_D2_START / h2, ([0] * 4, [0, 1, 2, 3])), shape=(1, n_nodes))
    end = sparse.csr_matrix(
        (_D2_END / h2, ([0] * 4, list(range(n_nodes - 4, n_nodes)))), shape=(1, n_nodes)
    )
    return sparse.vstack([start, D, end]).tocsr()
