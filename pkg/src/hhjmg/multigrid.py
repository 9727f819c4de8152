"""V-cycle multigrid for the divergence-free part of the HHJ saddle point system.

Every level solves: find ``sigma`` in ``ker B_k`` with ``a(sigma, kappa) =
<r, kappa>`` for all ``kappa`` in ``ker B_k``. Because ``ker B_k`` is the image
of the symmetric curl of P1 vector fields, the smoother works with the two
curl-of-hat directions per vertex; corrections never leave the kernel, so
the multiplier of the saddle system is never formed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, splu

from ._sweep import sweep
from .hhj import Discretization, SolverError, edge_basis_tensors
from .mesh import RefinementMap, Triangulation, initial_mesh, refine_uniform

__all__ = [
    "PatchKernelBasis",
    "Level",
    "Hierarchy",
    "MGResult",
    "ConvergenceError",
    "build_hierarchy",
    "assemble_prolongation",
    "prolongation",
    "smooth",
    "coarse_solve",
    "vcycle",
    "mg_solve",
    "estimate_contraction",
    "a_norm",
    "additive_schwarz_condition",
]

log = logging.getLogger(__name__)


class ConvergenceError(SolverError):
    """Multigrid did not reach the tolerance; ``result`` holds the last iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass
class PatchKernelBasis:
    """Kernel directions of all vertex patches of one level.

    Column ``2i + d`` of ``kernel`` is the symmetric curl of the vector hat at
    vertex ``i`` in component ``d``; it is supported on edges touching ``i``.
    ``gram[i]`` is the 2x2 ``a``-Gram matrix of the two columns of vertex ``i``.
    """

    kernel: sp.csc_matrix
    mass_kernel: sp.csc_matrix
    gram: np.ndarray
    gram_inv: np.ndarray

    @classmethod
    def build(cls, mass, symcurl):
        K = sp.csc_matrix(symcurl)
        K.sort_indices()
        MK = sp.csc_matrix(mass @ K)
        MK.sort_indices()
        KMK = K.multiply(MK)
        diag = np.asarray(KMK.sum(axis=0)).ravel()
        off = np.asarray(K[:, 0::2].multiply(MK[:, 1::2]).sum(axis=0)).ravel()
        gram = np.empty((len(off), 2, 2))
        gram[:, 0, 0] = diag[0::2]
        gram[:, 1, 1] = diag[1::2]
        gram[:, 0, 1] = gram[:, 1, 0] = off
        lam = np.linalg.eigvalsh(gram)
        if np.any(lam[:, 0] <= 1e-12 * lam[:, 1]):
            bad = int(np.argmin(lam[:, 0] / lam[:, 1]))
            raise SolverError(f"singular patch Gram matrix at vertex {bad}")
        return cls(K, MK, gram, np.linalg.inv(gram))

    @property
    def n_patches(self) -> int:
        return len(self.gram)

    def columns(self, i: int):
        """Edge ids and the two kernel columns of vertex ``i`` restricted to them."""
        block = self.kernel[:, 2 * i:2 * i + 2].tocoo()
        edges = np.unique(block.row)
        cols = np.zeros((len(edges), 2))
        cols[np.searchsorted(edges, block.row), block.col] = block.data
        return edges, cols


def assemble_prolongation(coarse: Triangulation, fine: Triangulation,
                          rmap: RefinementMap) -> sp.csr_matrix:
    """Natural inclusion ``V_{k-1} -> V_k`` as a fine-edges x coarse-edges matrix.

    The value on fine edge ``f`` is ``n_f^T tau n_f`` for the coarse basis
    tensor ``tau`` restricted to the coarse cell containing ``f``.
    """
    T = edge_basis_tensors(coarse)
    parent = rmap.coarse_cell_of_fine_cell[fine.edge_cells[:, 0]]
    n = fine.normals
    vals = np.einsum("fa,fjab,fb->fj", n, T[parent], n)
    rows = np.repeat(np.arange(fine.n_edges), 3)
    cols = coarse.cell_edges[parent].ravel()
    P = sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(fine.n_edges, coarse.n_edges))
    P.data[np.abs(P.data) <= 1e-13 * np.abs(P.data).max()] = 0.0
    P.eliminate_zeros()
    P.sort_indices()
    return P


@dataclass
class Level:
    tri: Triangulation
    ops: Discretization
    basis: PatchKernelBasis
    prolong: sp.csr_matrix | None = None
    restrict: sp.csr_matrix | None = None
    rmap: RefinementMap | None = None
    _bbt: object = field(default=None, repr=False)

    @property
    def mass(self):
        return self.ops.mass

    @property
    def symcurl(self):
        return self.ops.symcurl

    def kernel_part(self, v):
        """Euclidean projection of ``v`` onto ``ker B``.

        Equals the saddle-point residual ``v - B^T u`` for the least-squares
        multiplier ``u``.
        """
        B = self.ops.bform
        if B.shape[0] == 0:
            return np.array(v, dtype=float)
        if self._bbt is None:
            self._bbt = splu(sp.csc_matrix(B @ B.T))
        out = np.array(v, dtype=float)
        # B B^T is ill conditioned on fine meshes; a few refinement sweeps
        # keep the projection accurate to round-off
        for _ in range(3):
            out -= B.T @ self._bbt.solve(B @ out)
        return out


class Hierarchy:
    """Nested levels ``1 .. J`` plus default smoothing counts."""

    def __init__(self, levels, nu, m1=1, m2=1):
        if m1 < 0 or m2 < 0 or m1 + m2 < 1:
            raise ValueError("smoothing steps must be >= 0 with m1 + m2 >= 1")
        self.levels = list(levels)
        self.nu = nu
        self.m1 = m1
        self.m2 = m2
        c = self.levels[0]
        self._coarse_matrix = sp.csr_matrix(c.symcurl.T @ (c.mass @ c.symcurl))
        # null space of the symmetric curl: span{(1,0), (0,1), (x,y)}
        x, y = c.tri.vertices.T
        Z = np.zeros((2 * c.tri.n_vertices, 3))
        Z[0::2, 0] = 1.0
        Z[1::2, 1] = 1.0
        Z[0::2, 2] = x
        Z[1::2, 2] = y
        self._coarse_null = np.linalg.qr(Z)[0]

    @property
    def J(self) -> int:
        return len(self.levels)

    def level(self, k: int) -> Level:
        if not 1 <= k <= self.J:
            raise IndexError(f"level {k} outside 1..{self.J}")
        return self.levels[k - 1]

    @property
    def finest(self) -> Level:
        return self.levels[-1]

    def truncate(self, J: int) -> "Hierarchy":
        """Hierarchy made of the first ``J`` levels (shares all data)."""
        return Hierarchy(self.levels[:J], self.nu, self.m1, self.m2)

    def __repr__(self):
        sizes = ", ".join(str(lv.tri.n_vertices) for lv in self.levels)
        return f"Hierarchy(J={self.J}, nu={self.nu}, vertices=[{sizes}])"


def _make_level(tri, nu, coarse=None, rmap=None):
    ops = Discretization(tri, nu)
    basis = PatchKernelBasis.build(ops.mass, ops.symcurl)
    P = R = None
    if coarse is not None:
        P = assemble_prolongation(coarse.tri, tri, rmap)
        R = P.T.tocsr()
    return Level(tri, ops, basis, P, R, rmap)


def build_hierarchy(domain, J: int, nu: float, m1: int = 1, m2: int = 1) -> Hierarchy:
    """Assemble ``J`` nested levels by red refinement.

    ``domain`` is ``"square"``, ``"lshape"`` or a level-1 :class:`Triangulation`.
    """
    if J < 1:
        raise ValueError("need at least one level")
    tri = initial_mesh(domain) if isinstance(domain, str) else domain
    levels = [_make_level(tri, nu)]
    for _ in range(J - 1):
        fine, rmap = refine_uniform(levels[-1].tri)
        levels.append(_make_level(fine, nu, levels[-1], rmap))
        log.debug("built level %d: %d vertices", len(levels), fine.n_vertices)
    return Hierarchy(levels, nu, m1, m2)


def prolongation(hier: Hierarchy, k: int) -> sp.csr_matrix:
    """Prolongation from level ``k - 1`` to level ``k`` (``2 <= k <= J``)."""
    if not 2 <= k <= hier.J:
        raise IndexError(f"prolongation needs 2 <= k <= {hier.J}, got {k}")
    return hier.level(k).prolong


def a_norm(level: Level, sigma) -> float:
    return float(np.sqrt(max(sigma @ (level.mass @ sigma), 0.0)))


def smooth(hier: Hierarchy, k: int, sigma, r, order: str = "forward") -> np.ndarray:
    """One multiplicative sweep over the vertex patches of level ``k``.

    ``order`` is ``"forward"`` (ascending vertex ids) or ``"backward"``.
    """
    if order not in ("forward", "backward"):
        raise ValueError(f"order must be 'forward' or 'backward', got {order!r}")
    lv = hier.level(k)
    sigma = np.array(sigma, dtype=float)
    res = np.asarray(r, dtype=float) - lv.mass @ sigma
    sweep(lv.basis, sigma, res, order == "backward")
    return sigma


def coarse_solve(hier: Hierarchy, r, x0=None, rtol: float = 1e-12) -> np.ndarray:
    """Exact kernel solve on level 1 through the semidefinite potential system.

    Solves ``(C^T M C) phi = C^T r`` by CG and returns ``C phi``; the P1
    rigid-type null space of ``C`` drops out. Round-off in ``C^T r`` along that
    null space is projected away so the system stays consistent.
    """
    lv = hier.level(1)
    C = lv.symcurl
    rhs = C.T @ np.asarray(r, dtype=float)
    Z = hier._coarse_null
    rhs -= Z @ (Z.T @ rhs)
    if not np.any(rhs):
        return np.zeros(lv.tri.n_edges)
    A = hier._coarse_matrix
    phi, info = cg(A, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=20 * A.shape[0])
    if info != 0:
        rel = np.linalg.norm(rhs - A @ phi) / np.linalg.norm(rhs)
        raise SolverError(f"coarse CG stagnated at relative residual {rel:.2e}")
    return C @ phi


def _cycle(hier, k, sigma, res, m1, m2):
    # in place; res == r - M sigma on entry and on exit
    lv = hier.levels[k - 1]
    if k == 1:
        e = coarse_solve(hier, res)
        sigma += e
        res -= lv.mass @ e
        return
    for _ in range(m1):
        sweep(lv.basis, sigma, res, False)
    rc = lv.restrict @ res
    ec = np.zeros(len(rc))
    _cycle(hier, k - 1, ec, rc, m1, m2)
    e = lv.prolong @ ec
    sigma += e
    res -= lv.mass @ e
    for _ in range(m2):
        sweep(lv.basis, sigma, res, True)


def vcycle(hier: Hierarchy, k: int, sigma, r, m1: int | None = None,
           m2: int | None = None) -> np.ndarray:
    """One V(m1, m2) cycle on level ``k`` starting from ``sigma``."""
    m1 = hier.m1 if m1 is None else m1
    m2 = hier.m2 if m2 is None else m2
    lv = hier.level(k)
    sigma = np.array(sigma, dtype=float)
    res = np.asarray(r, dtype=float) - lv.mass @ sigma
    _cycle(hier, k, sigma, res, m1, m2)
    return sigma


@dataclass
class MGResult:
    sigma: np.ndarray
    iterations: int
    residual_history: list = field(default_factory=list)
    converged: bool = True


def mg_solve(hier: Hierarchy, r, tol: float = 1e-8, max_iter: int = 200,
             m1: int | None = None, m2: int | None = None, level: int | None = None,
             callback=None, residual: str = "saddle") -> MGResult:
    """Iterate V-cycles from zero until the relative residual is below ``tol``.

    ``residual`` selects the norm of ``res = r - M sigma``:

    ``"saddle"``
        ``|res - B^T u|`` with the least-squares multiplier ``u``, i.e. the
        residual of the full saddle point system once the deflection is
        eliminated; normalized by the same quantity for ``r``.
    ``"pullback"``
        ``|C^T res| / |C^T r|`` with ``C`` the symmetric curl.

    ``callback(sigma)`` is called on every iterate including the initial zero.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` cycles do not reach ``tol``.
    """
    k = hier.J if level is None else level
    m1 = hier.m1 if m1 is None else m1
    m2 = hier.m2 if m2 is None else m2
    lv = hier.level(k)
    if residual == "saddle":
        measure = lambda v: np.linalg.norm(lv.kernel_part(v))  # noqa: E731
    elif residual == "pullback":
        C = lv.symcurl
        measure = lambda v: np.linalg.norm(C.T @ v)  # noqa: E731
    else:
        raise ValueError(f"unknown residual norm {residual!r}")
    r = np.asarray(r, dtype=float)
    sigma = np.zeros(lv.tri.n_edges)
    res = r.copy()
    norm0 = measure(r)
    history = [1.0 if norm0 > 0 else 0.0]
    if callback is not None:
        callback(sigma)
    if norm0 == 0.0:
        return MGResult(sigma, 0, history, True)
    for it in range(1, max_iter + 1):
        _cycle(hier, k, sigma, res, m1, m2)
        if callback is not None:
            callback(sigma)
        history.append(float(measure(res) / norm0))
        if history[-1] <= tol:
            log.info("V(%d,%d) on level %d converged in %d cycles", m1, m2, k, it)
            return MGResult(sigma, it, history, True)
    result = MGResult(sigma, max_iter, history, False)
    raise ConvergenceError(
        f"no convergence in {max_iter} cycles (relative residual {history[-1]:.2e})", result)


def estimate_contraction(hier: Hierarchy, r, reference_sigma, first: int = 5,
                         last: int = 15, m1: int | None = None, m2: int | None = None,
                         level: int | None = None) -> float:
    """Largest A-norm error ratio ``|e_{m+1}| / |e_m|`` for ``first <= m <= last``."""
    k = hier.J if level is None else level
    m1 = hier.m1 if m1 is None else m1
    m2 = hier.m2 if m2 is None else m2
    lv = hier.level(k)
    sigma = np.zeros(lv.tri.n_edges)
    res = np.asarray(r, dtype=float).copy()
    errors = [a_norm(lv, reference_sigma - sigma)]
    for _ in range(last + 1):
        _cycle(hier, k, sigma, res, m1, m2)
        errors.append(a_norm(lv, reference_sigma - sigma))
    errors = np.array(errors)
    return float(np.max(errors[first + 1:last + 2] / errors[first:last + 1]))


def _patch_correction(lv, r):
    # sum_i K_i G_i^{-1} K_i^T r
    y = (lv.basis.kernel.T @ r).reshape(-1, 2)
    z = np.einsum("iab,ib->ia", lv.basis.gram_inv, y).ravel()
    return lv.basis.kernel @ z


def _additive_apply(hier, k, sigma, multilevel):
    lv = hier.level(k)
    r = lv.mass @ sigma
    if not multilevel:
        return _patch_correction(lv, r)
    residuals = [r]
    for j in range(k, 1, -1):
        residuals.append(hier.level(j).restrict @ residuals[-1])
    out = _patch_correction(hier.level(1), residuals[-1])
    for j in range(2, k + 1):
        out = hier.level(j).prolong @ out + _patch_correction(hier.level(j), residuals[k - j])
    return out


def additive_schwarz_condition(hier: Hierarchy, k: int, multilevel: bool = True,
                               steps: int = 80, seed: int = 0):
    """Extreme eigenvalues of the additive patch preconditioned kernel operator.

    Lanczos (full reorthogonalisation, ``M`` inner product) on the operator
    ``sum_{l,i} P_{l,i}`` restricted to ``ker B_k``; with ``multilevel=False``
    only the patches of level ``k`` are used. Returns ``(lam_min, lam_max)``.
    """
    lv = hier.level(k)
    M = lv.mass
    rng = np.random.default_rng(seed)
    v = lv.symcurl @ rng.standard_normal(2 * lv.tri.n_vertices)
    steps = min(steps, 2 * lv.tri.n_vertices - 3)
    V = []
    alpha, beta = [], []
    v = v / np.sqrt(v @ (M @ v))
    for j in range(steps):
        V.append(v)
        w = _additive_apply(hier, k, v, multilevel)
        a = w @ (M @ v)
        alpha.append(a)
        for u in V:
            w = w - (w @ (M @ u)) * u
        for u in V:
            w = w - (w @ (M @ u)) * u
        b = np.sqrt(max(w @ (M @ w), 0.0))
        if b < 1e-12 * abs(a) or j == steps - 1:
            break
        beta.append(b)
        v = w / b
    Tm = np.diag(alpha) + np.diag(beta[:len(alpha) - 1], 1) + np.diag(beta[:len(alpha) - 1], -1)
    lam = np.linalg.eigvalsh(Tm)
    return float(lam[0]), float(lam[-1])
