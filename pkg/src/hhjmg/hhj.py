"""Lowest-order Hellan-Herrmann-Johnson spaces and operators.

Coefficient conventions
-----------------------
stress (``V_h``)
    one value per edge: the constant normal-normal moment ``n^T tau n`` on
    that edge. The field is piecewise constant and symmetric.
deflection (``P_h``)
    P1 nodal values at interior vertices (order of
    ``Triangulation.interior_vertices``).
vector potential (``S_h``)
    P1 nodal values at all vertices, interleaved ``[x0, y0, x1, y1, ...]``.

Tensors are passed around as arrays of shape ``(..., 2, 2)``.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .mesh import Triangulation
from .quadrature import TRIANGLE_POINTS, TRIANGLE_WEIGHTS, edge_points, triangle_points

__all__ = [
    "c_apply",
    "c_inverse_apply",
    "cell_tensor_from_edge_values",
    "edge_basis_tensors",
    "assemble_mass",
    "assemble_l2_mass",
    "assemble_bform",
    "assemble_p1_stiffness",
    "assemble_p1_mass",
    "load_vector",
    "assemble_symcurl",
    "interp_Pi",
    "interp_I",
    "project_Q",
    "divdiv_h_apply",
    "stress_field",
    "cell_tensors",
    "Discretization",
    "SolverError",
]


class SolverError(RuntimeError):
    """An iterative solve failed to reach its tolerance."""


def _check_nu(nu):
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {nu}")


def c_apply(tau, nu: float):
    """Apply the plate compliance ``C tau = tau/(1-nu) - nu/(1-nu^2) tr(tau) I``."""
    _check_nu(nu)
    tau = np.asarray(tau, dtype=float)
    tr = np.trace(tau, axis1=-2, axis2=-1)[..., None, None]
    return tau / (1.0 - nu) - nu / (1.0 - nu * nu) * tr * np.eye(2)


def c_inverse_apply(s, nu: float):
    """Inverse of :func:`c_apply`: ``(1 - nu) s + nu tr(s) I``."""
    _check_nu(nu)
    s = np.asarray(s, dtype=float)
    tr = np.trace(s, axis1=-2, axis2=-1)[..., None, None]
    return (1.0 - nu) * s + nu * tr * np.eye(2)


def _nn_rows(normals):
    # n^T tau n = n1^2 t11 + 2 n1 n2 t12 + n2^2 t22
    n1, n2 = normals[..., 0], normals[..., 1]
    return np.stack([n1 * n1, 2.0 * n1 * n2, n2 * n2], axis=-1)


def _voigt_to_tensor(v):
    return np.stack([np.stack([v[..., 0], v[..., 1]], -1),
                     np.stack([v[..., 1], v[..., 2]], -1)], -2)


def cell_tensor_from_edge_values(normals, m):
    """Constant symmetric tensor with prescribed normal-normal moments.

    Parameters
    ----------
    normals : array_like, shape (3, 2)
        Unit normals of the three edges (sign is irrelevant).
    m : array_like, shape (3,)
        Target values of ``n_i^T tau n_i``.
    """
    N = _nn_rows(np.asarray(normals, dtype=float))
    if abs(np.linalg.det(N)) < 1e-12:
        raise np.linalg.LinAlgError("edge normals of a degenerate triangle")
    return _voigt_to_tensor(np.linalg.solve(N, np.asarray(m, dtype=float)))


def edge_basis_tensors(tri: Triangulation) -> np.ndarray:
    """Local basis tensors, shape ``(n_cells, 3, 2, 2)``.

    Entry ``[c, j]`` has unit normal-normal moment on local edge ``j`` of cell
    ``c`` and zero moment on the two other edges.
    """
    N = _nn_rows(tri.normals[tri.cell_edges])  # (nc, 3 edges, 3 voigt)
    Ninv = np.linalg.inv(N)  # column j: voigt coefficients of basis j
    return _voigt_to_tensor(np.swapaxes(Ninv, 1, 2))


def cell_tensors(tri: Triangulation, sigma) -> np.ndarray:
    """Per-cell constant tensor of a stress coefficient vector, ``(n_cells, 2, 2)``."""
    T = edge_basis_tensors(tri)
    return np.einsum("cj,cjab->cab", np.asarray(sigma)[tri.cell_edges], T)


def stress_field(tri: Triangulation, sigma):
    """Cellwise evaluator ``f(x, y, cells)`` of a stress coefficient vector."""
    tens = cell_tensors(tri, sigma)

    def field(x, y, cells):
        return np.broadcast_to(tens[cells], np.shape(x) + (2, 2))

    field.cellwise = True
    return field


def _scatter(rows, cols, vals, shape):
    A = sp.coo_matrix((np.ravel(vals), (np.ravel(rows), np.ravel(cols))), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _local_mass_blocks(tri, nu):
    T = edge_basis_tensors(tri)
    CT = c_apply(T, nu)
    return tri.areas[:, None, None] * np.einsum("ciab,cjab->cij", CT, T)


def assemble_mass(tri: Triangulation, nu: float) -> sp.csr_matrix:
    """Matrix of ``a(sigma, tau) = int C sigma : tau`` on the edge basis."""
    _check_nu(nu)
    local = _local_mass_blocks(tri, nu)
    ce = tri.cell_edges
    rows = np.repeat(ce[:, :, None], 3, axis=2)
    cols = np.repeat(ce[:, None, :], 3, axis=1)
    return _scatter(rows, cols, local, (tri.n_edges, tri.n_edges))


def assemble_l2_mass(tri: Triangulation) -> sp.csr_matrix:
    """Plain ``int sigma : tau`` on the edge basis (``nu = 0`` mass)."""
    return assemble_mass(tri, 0.0)


def assemble_bform(tri: Triangulation) -> sp.csr_matrix:
    """Matrix of the HHJ coupling form, rows = interior vertices, cols = edges.

    For piecewise constant stresses the elementwise divergence vanishes, so only
    ``sum_K int_{dK} M_nt(tau) d_t v ds`` contributes. With ``v`` linear on the
    edge this integral is ``M_nt * (v(end) - v(start))`` along the
    counterclockwise traversal.
    """
    T = edge_basis_tensors(tri)  # (nc, 3 basis, 2, 2)
    n = tri.cell_normals()  # (nc, 3 edges, 2)
    t = tri.cell_tangents()
    # mnt[c, k, j]: M_nt of basis j on local edge k
    mnt = np.einsum("cka,cjab,ckb->ckj", t, T, n)
    start = tri.cells[:, [1, 2, 0]]
    stop = tri.cells[:, [2, 0, 1]]
    ce = tri.cell_edges

    rows, cols, vals = [], [], []
    for verts, sgn in ((stop, 1.0), (start, -1.0)):
        r = np.repeat(verts[:, :, None], 3, axis=2)
        c = np.repeat(ce[:, None, :], 3, axis=1)
        rows.append(r)
        cols.append(c)
        vals.append(sgn * mnt)
    rows = np.concatenate([r.ravel() for r in rows])
    cols = np.concatenate([c.ravel() for c in cols])
    vals = np.concatenate([v.ravel() for v in vals])

    dof = tri.interior_index[rows]
    keep = dof >= 0
    B = _scatter(dof[keep], cols[keep], vals[keep], (tri.n_interior_vertices, tri.n_edges))
    return _chop(B)


def _chop(A, rel=1e-13):
    if A.nnz:
        A.data[np.abs(A.data) <= rel * np.abs(A.data).max()] = 0.0
        A.eliminate_zeros()
    return A


def _p1_scatter(tri, local):
    dof = tri.interior_index[tri.cells]
    r = np.repeat(dof[:, :, None], 3, axis=2)
    c = np.repeat(dof[:, None, :], 3, axis=1)
    keep = (r >= 0) & (c >= 0)
    n = tri.n_interior_vertices
    return _scatter(r[keep], c[keep], local[keep], (n, n))


def assemble_p1_stiffness(tri: Triangulation) -> sp.csr_matrix:
    """Dirichlet P1 stiffness on interior vertices."""
    g = tri.barycentric_gradients()
    local = tri.areas[:, None, None] * np.einsum("cia,cja->cij", g, g)
    return _p1_scatter(tri, local)


def assemble_p1_mass(tri: Triangulation) -> sp.csr_matrix:
    """Dirichlet P1 mass on interior vertices."""
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _p1_scatter(tri, tri.areas[:, None, None] * ref)


def load_vector(tri: Triangulation, f) -> np.ndarray:
    """``int f phi_i`` for interior hats, by the degree-4 rule. ``f(x, y)`` is vectorized."""
    pts = triangle_points(tri)
    fv = np.broadcast_to(np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:2])
    # (nc, 3 hats)
    local = tri.areas[:, None] * np.einsum("q,cq,qj->cj", TRIANGLE_WEIGHTS, fv, TRIANGLE_POINTS)
    dof = tri.interior_index[tri.cells]
    keep = dof >= 0
    return np.bincount(dof[keep], weights=local[keep], minlength=tri.n_interior_vertices)


def _hat_symcurls(tri):
    """Symmetric curls of the 2 x 3 vector hats on each cell, ``(nc, 3, 2, 2, 2)``.

    Index order: cell, local vertex, component, tensor row, tensor col. The curl
    of a scalar is ``(d2 w, -d1 w)``, applied row-wise to vector fields.
    """
    g = tri.barycentric_gradients()
    d1, d2 = g[..., 0], g[..., 1]
    z = np.zeros_like(d1)
    sx = np.stack([np.stack([d2, -0.5 * d1], -1), np.stack([-0.5 * d1, z], -1)], -2)
    sy = np.stack([np.stack([z, 0.5 * d2], -1), np.stack([0.5 * d2, -d1], -1)], -2)
    return np.stack([sx, sy], axis=2)


def assemble_symcurl(tri: Triangulation, tol: float = 1e-12) -> sp.csr_matrix:
    """Matrix of the symmetric curl from ``S_h`` (interleaved) to ``V_h``.

    The edge coefficient is evaluated from both neighbouring cells; a relative
    mismatch larger than ``tol`` raises ``AssertionError`` (it can only come
    from an inconsistent mesh or a coding error).
    """
    S = _hat_symcurls(tri)  # (nc, 3 vertex, 2 comp, 2, 2)
    n = tri.normals[tri.cell_edges]  # (nc, 3 edges, 2)
    # val[c, k, j, d] = n_k^T S[c, j, d] n_k
    val = np.einsum("cka,cjdab,ckb->ckjd", n, S, n)
    ce = tri.cell_edges
    col = 2 * tri.cells[:, None, :, None] + np.arange(2)[None, None, None, :]
    rows = np.broadcast_to(ce[:, :, None, None], val.shape)
    cols = np.broadcast_to(col, val.shape)
    owner = np.broadcast_to(np.arange(tri.n_cells)[:, None, None, None], val.shape)

    first = tri.edge_cells[rows, 0] == owner
    shape = (tri.n_edges, 2 * tri.n_vertices)
    CA = _scatter(rows[first], cols[first], val[first], shape)
    CB = _scatter(rows[~first], cols[~first], val[~first], shape)
    scale = np.abs(CA.data).max()
    interior = ~tri.boundary_edges
    mismatch = (CA[interior] - CB[interior]) if interior.any() else None
    if mismatch is not None and mismatch.nnz and np.abs(mismatch.data).max() > tol * scale:
        raise AssertionError("symmetric curl disagrees across an interior edge")
    return _chop(CA)


def _as_cellwise(tau):
    if getattr(tau, "cellwise", False):
        return tau
    return lambda x, y, cells: tau(x, y)


def interp_Pi(tri: Triangulation, tau, n_gauss: int = 2) -> np.ndarray:
    """Edge means of ``n_e^T tau n_e``.

    ``tau(x, y)`` returns tensors of shape ``x.shape + (2, 2)``. A cellwise
    callable (attribute ``cellwise = True``, signature ``tau(x, y, cells)``)
    is evaluated from the first neighbouring cell of each edge, which is the
    right thing for piecewise fields with single-valued normal moments.
    """
    pts, w = edge_points(tri, n_gauss)
    cells = np.broadcast_to(tri.edge_cells[:, :1], pts.shape[:2])
    vals = np.asarray(_as_cellwise(tau)(pts[..., 0], pts[..., 1], cells), dtype=float)
    nn = np.einsum("ea,eqab,eb->eq", tri.normals, vals, tri.normals)
    return nn @ w


def interp_I(tri: Triangulation, phi) -> np.ndarray:
    """Vertex interpolation of ``phi(x, y) -> (u, v)`` into interleaved ``S_h``."""
    x, y = tri.vertices[:, 0], tri.vertices[:, 1]
    u, v = phi(x, y)
    out = np.empty(2 * tri.n_vertices)
    out[0::2] = np.broadcast_to(u, x.shape)
    out[1::2] = np.broadcast_to(v, x.shape)
    return out


def _cg(A, b, rtol, what):
    if not np.any(b):
        return np.zeros_like(b)
    x, info = cg(A, b, rtol=rtol, atol=0.0, maxiter=10 * A.shape[0] + 100)
    if info != 0:
        res = np.linalg.norm(b - A @ x) / np.linalg.norm(b)
        raise SolverError(f"CG for {what} did not converge (relative residual {res:.2e})")
    return x


def project_Q(tri: Triangulation, v, mass=None) -> np.ndarray:
    """L2 projection of ``v(x, y)`` onto ``P_h``."""
    mass = assemble_p1_mass(tri) if mass is None else mass
    return _cg(mass, load_vector(tri, v), 1e-13, "the L2 projection")


def divdiv_h_apply(tri: Triangulation, sigma, bform=None, mass=None) -> np.ndarray:
    """Discrete double divergence: the P_h field ``q`` with ``(q, v) = b(sigma, v)``."""
    bform = assemble_bform(tri) if bform is None else bform
    mass = assemble_p1_mass(tri) if mass is None else mass
    return _cg(mass, bform @ np.asarray(sigma, dtype=float), 1e-13, "(div div)_h")


class Discretization:
    """Assembled HHJ operators of one mesh, built lazily and cached."""

    def __init__(self, tri: Triangulation, nu: float):
        _check_nu(nu)
        self.tri = tri
        self.nu = nu

    @cached_property
    def mass(self):
        return assemble_mass(self.tri, self.nu)

    @cached_property
    def bform(self):
        return assemble_bform(self.tri)

    @cached_property
    def symcurl(self):
        return assemble_symcurl(self.tri)

    @cached_property
    def p1_stiffness(self):
        return assemble_p1_stiffness(self.tri)

    @cached_property
    def p1_mass(self):
        return assemble_p1_mass(self.tri)

    def divdiv(self, sigma):
        return divdiv_h_apply(self.tri, sigma, self.bform, self.p1_mass)

    def project_Q(self, v):
        return project_Q(self.tri, v, self.p1_mass)

    def load(self, f):
        return load_vector(self.tri, f)

    def identity_times(self, w):
        """Stress coefficients of ``Pi_h(w I)`` for a P1 field ``w`` on interior vertices.

        ``M_n(w I) = w``, so every edge gets the mean of its endpoint values.
        """
        full = np.zeros(self.tri.n_vertices)
        full[self.tri.interior_vertices] = w
        return 0.5 * (full[self.tri.edges[:, 0]] + full[self.tri.edges[:, 1]])

    @cached_property
    def identity_matrix(self):
        """Sparse map ``w -> Pi_h(w I)`` (edges x interior vertices)."""
        tri = self.tri
        e = np.repeat(np.arange(tri.n_edges), 2)
        dof = tri.interior_index[tri.edges.ravel()]
        keep = dof >= 0
        return _scatter(e[keep], dof[keep], np.full(keep.sum(), 0.5),
                        (tri.n_edges, tri.n_interior_vertices))
