"""Quadrature rules shared by the spatial, temporal and kernel integrals."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

# Dunavant's 6-point rule, exact for degree-4 polynomials on a triangle.
_A1, _B1, _W1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
_A2, _B2, _W2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
TRI_BARY = np.array([
    [_A1, _A1, _B1], [_A1, _B1, _A1], [_B1, _A1, _A1],
    [_A2, _A2, _B2], [_A2, _B2, _A2], [_B2, _A2, _A2],
])
TRI_WEIGHTS = np.array([_W1] * 3 + [_W2] * 3)


def triangle_rule(triangles: np.ndarray, areas: np.ndarray, n_vertices: int):
    """Interpolation matrix onto quadrature nodes plus matching weights.

    ``Q @ field`` gives the P1 interpolant at every node; ``weights @ g(Q @ field)``
    integrates ``g`` of the interpolant.
    """
    m = len(triangles)
    nq = len(TRI_WEIGHTS)
    rows = np.repeat(np.arange(m * nq), 3)
    cols = np.repeat(triangles, nq, axis=0).ravel()
    vals = np.tile(TRI_BARY, (m, 1)).ravel()
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(m * nq, n_vertices))
    weights = (areas[:, None] * TRI_WEIGHTS[None, :]).ravel()
    return Q, weights


def simpson_weights(n: int, a: float, b: float) -> np.ndarray:
    """Composite Simpson weights on ``n`` (odd, >= 3) equispaced nodes."""
    if n < 3 or n % 2 == 0:
        raise ValueError("Simpson's rule needs an odd node count >= 3")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (b - a) / (3.0 * (n - 1))


def gauss_legendre_panels(f, a: float, b: float, width: float, order: int = 20) -> float:
    """Composite Gauss-Legendre on panels of at most ``width``."""
    x, w = np.polynomial.legendre.leggauss(order)
    n = max(1, int(np.ceil((b - a) / width - 1e-12)))
    edges = np.linspace(a, b, n + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return float(np.dot(weights, f(nodes)))
