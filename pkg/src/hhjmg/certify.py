"""Numerical certificates for the discrete complex and the interpolation diagram.

The lowest-order sequence

    P1 vector fields --symcurl--> V_h --(div div)_h--> P_h --> 0

is exact on simply connected meshes: ``B C = 0``, the kernel of ``B`` is the
range of ``C`` (dimension ``2V - 3``) and ``B`` is onto ``P_h``. The
interpolations commute with the symmetric curl, and ``Pi_h`` preserves the
b-form against P1 functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, splu

from .hhj import _as_cellwise, assemble_bform, assemble_symcurl, interp_I, interp_Pi
from .mesh import Triangulation
from .quadrature import gauss_edge

__all__ = [
    "ExactnessReport",
    "check_exactness",
    "check_commute_curl",
    "check_commute_divdiv",
    "symcurl_of",
    "bform_smooth",
    "monomial_fields",
]

RANK_RTOL = 1e-9


@dataclass
class ExactnessReport:
    """Dimensions, ranks and pass flags of the discrete sequence on one mesh."""

    dim_S: int
    dim_V: int
    dim_P: int
    nullity_B: int
    rank_C: int
    rank_B: int
    complex_residual: float
    complex_holds: bool
    kernel_matches_range: bool
    surjectivity_holds: bool
    method: str = "svd"
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.complex_holds and self.kernel_matches_range and self.surjectivity_holds

    def summary(self) -> str:
        flag = "ok" if self.ok else "FAIL"
        return (f"[{flag}] dims S/V/P = {self.dim_S}/{self.dim_V}/{self.dim_P}, "
                f"rank C = {self.rank_C}, nullity B = {self.nullity_B}, rank B = {self.rank_B}, "
                f"|BC| = {self.complex_residual:.1e} ({self.method})")


def _rank_dense(A) -> int:
    if min(A.shape) == 0:
        return 0
    s = sla.svdvals(A.toarray() if sp.issparse(A) else A)
    return int(np.sum(s > RANK_RTOL * s[0])) if s[0] > 0 else 0


def _nullity_sparse_psd(G, expect: int) -> int:
    """Number of eigenvalues of the PSD matrix ``G`` below ``RANK_RTOL * |G|``.

    Uses shift-invert Lanczos for the few smallest eigenvalues; only meant to
    confirm a small, known nullity on meshes too large for a dense SVD.
    """
    n = G.shape[0]
    k = min(n - 1, expect + 3)
    scale = abs(G).sum(axis=1).max()
    vals = eigsh(sp.csc_matrix(G), k=k, sigma=-1e-6 * scale, which="LM",
                 return_eigenvectors=False)
    return int(np.sum(vals < RANK_RTOL * scale))


def check_exactness(tri: Triangulation, max_dense: int = 4000) -> ExactnessReport:
    """Certify exactness of the discrete sequence on ``tri``.

    Ranks come from a dense SVD (threshold ``1e-9`` times the largest singular
    value) when ``#edges <= max_dense``. Larger meshes use sparse surrogates:
    the nullity of ``C^T C`` from its smallest eigenvalues and a sparse LU of
    ``B B^T`` for full row rank.
    """
    B = assemble_bform(tri)
    C = assemble_symcurl(tri)
    dim_S, dim_V, dim_P = 2 * tri.n_vertices, tri.n_edges, tri.n_interior_vertices
    BC = B @ C
    scale = max(abs(B).max() if B.nnz else 1.0, 1.0) * max(abs(C).max(), 1.0)
    residual = float(abs(BC).max()) / scale if BC.nnz else 0.0
    notes = []
    if dim_V <= max_dense:
        method = "svd"
        rank_C = _rank_dense(C)
        rank_B = _rank_dense(B)
    else:
        method = "sparse"
        rank_C = dim_S - _nullity_sparse_psd(C.T @ C, 3)
        rank_B = 0
        if dim_P:
            lu = splu(sp.csc_matrix(B @ B.T))
            d = np.abs(lu.U.diagonal())
            rank_B = int(np.sum(d > RANK_RTOL * d.max()))
    nullity_B = dim_V - rank_B
    expected = 2 * tri.n_vertices - 3
    kernel_ok = nullity_B == rank_C == expected
    if dim_V != 2 * tri.n_vertices + dim_P - 3:
        notes.append("edge count differs from 2V + V_int - 3")
        kernel_ok = False
    return ExactnessReport(
        dim_S=dim_S, dim_V=dim_V, dim_P=dim_P, nullity_B=nullity_B, rank_C=rank_C,
        rank_B=rank_B, complex_residual=residual, complex_holds=residual <= 1e-12,
        kernel_matches_range=kernel_ok, surjectivity_holds=rank_B == dim_P,
        method=method, notes=notes)


def monomial_fields(degree: int):
    """Vector monomials ``(x^a y^b, 0)`` and ``(0, x^a y^b)`` with ``a + b <= degree``.

    Yields ``(component, a, b)``.
    """
    for d in range(degree + 1):
        for a in range(d + 1):
            for comp in (0, 1):
                yield comp, a, d - a


def _mono(a, b, x, y):
    if a < 0 or b < 0:
        return np.zeros_like(x, dtype=float)
    return np.asarray(x, dtype=float) ** a * np.asarray(y, dtype=float) ** b


def symcurl_of(comp: int, a: int, b: int):
    """Symmetric curl of the monomial vector field, as a tensor callable.

    Row ``comp`` of the gradient-rotated field is ``(d2 w, -d1 w)`` with
    ``w = x^a y^b``; the result is symmetrized.
    """
    def tau(x, y):
        d1 = a * _mono(a - 1, b, x, y)
        d2 = b * _mono(a, b - 1, x, y)
        out = np.zeros(np.shape(x) + (2, 2))
        out[..., comp, 0] += 0.5 * d2
        out[..., comp, 1] += -0.5 * d1
        out[..., 0, comp] += 0.5 * d2
        out[..., 1, comp] += -0.5 * d1
        return out
    return tau


def check_commute_curl(tri: Triangulation, degree: int, C=None) -> float:
    """Max deviation ``|symcurl(I_h phi) - Pi_h(symcurl phi)|`` over monomials.

    Parameters
    ----------
    degree : int
        Highest total degree of the monomial vector fields, at most 3.
    """
    if not 0 <= degree <= 3:
        raise ValueError("degree must be between 0 and 3")
    C = assemble_symcurl(tri) if C is None else C
    worst = 0.0
    for comp, a, b in monomial_fields(degree):
        def phi(x, y, comp=comp, a=a, b=b):
            w = _mono(a, b, x, y)
            z = np.zeros_like(w)
            return (w, z) if comp == 0 else (z, w)
        lhs = C @ interp_I(tri, phi)
        rhs = interp_Pi(tri, symcurl_of(comp, a, b), n_gauss=3)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def bform_smooth(tri: Triangulation, tau, n_gauss: int = 4) -> np.ndarray:
    """``b(tau, v_i)`` for every interior hat ``v_i`` and a smooth tensor field.

    For P1 test functions the volume term vanishes and the tangential moment
    cancels between neighbours, leaving ``-sum_K int_{dK} n^T tau n d_n v``,
    evaluated with ``n_gauss`` Gauss points per edge. Cellwise fields (see
    :func:`hhjmg.hhj.interp_Pi`) are accepted.
    """
    s, w = gauss_edge(n_gauss)
    a = tri.vertices[tri.edges[:, 0]]
    b = tri.vertices[tri.edges[:, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    cells = np.broadcast_to(tri.edge_cells[:, :1], pts.shape[:2])
    vals = np.asarray(_as_cellwise(tau)(pts[..., 0], pts[..., 1], cells), dtype=float)
    nn = np.einsum("ea,eqab,eb->eq", tri.normals, vals, tri.normals)
    mn = tri.edge_lengths * (nn @ w)
    return _edge_moment_to_hats(tri, mn)


def _edge_moment_to_hats(tri, mn):
    # -sum over cells K containing e of |e|-integrated M_n times grad(v_i).n_{K,e}
    grads = tri.barycentric_gradients()  # (nc, 3, 2)
    n_out = tri.cell_normals()  # (nc, 3 edges, 2)
    ce = tri.cell_edges
    contrib = -np.einsum("ck,cjd,ckd->cj", mn[ce], grads, n_out)
    dof = tri.interior_index[tri.cells]
    keep = dof >= 0
    return np.bincount(dof[keep], weights=contrib[keep], minlength=tri.n_interior_vertices)


def check_commute_divdiv(tri: Triangulation, tau, n_gauss: int = 4, B=None) -> float:
    """Max over interior hats of ``|b(tau, v) - b(Pi_h tau, v)|``."""
    B = assemble_bform(tri) if B is None else B
    exact = bform_smooth(tri, tau, n_gauss)
    discrete = B @ interp_Pi(tri, tau, n_gauss=n_gauss)
    if exact.size == 0:
        return 0.0
    return float(np.max(np.abs(exact - discrete)))
