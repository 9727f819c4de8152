"""Quadrature rules on triangles and edges."""

import numpy as np

# Dunavant's 6-point rule, exact for polynomials of degree 4.
_A = 0.44594849091596488632
_B = 1.0 - 2.0 * _A
_C = 0.09157621350977074346
_D = 1.0 - 2.0 * _C
_WA = 0.22338158967801146570
_WC = 1.0 / 3.0 - _WA

TRIANGLE_POINTS = np.array([
    [_B, _A, _A], [_A, _B, _A], [_A, _A, _B],
    [_D, _C, _C], [_C, _D, _C], [_C, _C, _D],
])
"""Barycentric coordinates of the degree-4 rule, shape (6, 3)."""

TRIANGLE_WEIGHTS = np.array([_WA] * 3 + [_WC] * 3)
"""Weights relative to the cell area; they sum to one."""


def triangle_points(tri):
    """Physical quadrature points of every cell, shape ``(n_cells, 6, 2)``."""
    corners = tri.vertices[tri.cells]  # (nc, 3, 2)
    return np.einsum("qj,cjd->cqd", TRIANGLE_POINTS, corners)


def gauss_edge(n: int = 2):
    """Gauss-Legendre nodes on [0, 1] and weights summing to one."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def edge_points(tri, n: int = 2):
    """Gauss points on every edge, shape ``(n_edges, n, 2)``, and weights."""
    s, w = gauss_edge(n)
    a = tri.vertices[tri.edges[:, 0]]
    b = tri.vertices[tri.edges[:, 1]]
    return a[:, None, :] + s[None, :, None] * (b - a)[:, None, :], w
