"""End-to-end plate solves: load transfer, multigrid, deflection and errors.

The HHJ system reads ``M sigma + B^T u = 0``, ``B sigma = -F``. A particular
stress ``sigma_0 = Pi_h(w I)`` with ``w`` the P1 solution of ``-Lap w = f``
satisfies ``B sigma_0 = -F``, so ``sigma = sigma_0 + s`` with ``s`` in ``ker B``
and ``a(s, kappa) = -a(sigma_0, kappa)`` on the kernel. Multigrid solves for
``s``; the deflection follows from one more Poisson problem.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .hhj import Discretization, _cg, cell_tensors
from .mesh import Triangulation
from .multigrid import Hierarchy, build_hierarchy, estimate_contraction, mg_solve
from .quadrature import TRIANGLE_POINTS, TRIANGLE_WEIGHTS, triangle_points

__all__ = [
    "ManufacturedCase",
    "manufactured_square_case",
    "constant_load_case",
    "source_transfer",
    "recover_deflection",
    "compute_errors",
    "direct_solve",
    "PlateSolution",
    "solve_plate",
    "ExperimentConfig",
    "run_experiment",
    "convergence_study",
]

log = logging.getLogger(__name__)


@dataclass
class ManufacturedCase:
    """Closed-form plate data. Fields without a known exact solution are ``None``."""

    f: Callable
    nu: float
    u_exact: Callable | None = None
    grad_u: Callable | None = None
    hessian_u: Callable | None = None
    name: str = ""

    def sigma_exact(self, x, y):
        """``-[(1 - nu) hess u + nu (Lap u) I]``, shape ``x.shape + (2, 2)``."""
        H = self.hessian_u(x, y)
        lap = H[..., 0, 0] + H[..., 1, 1]
        out = -(1.0 - self.nu) * H
        out[..., 0, 0] -= self.nu * lap
        out[..., 1, 1] -= self.nu * lap
        return out


def manufactured_square_case(nu: float = 0.3) -> ManufacturedCase:
    """Clamped unit square with ``u = (x^2 - x)^2 (y^2 - y)^2``."""
    g = lambda t: (t * t - t) ** 2  # noqa: E731
    g1 = lambda t: 2.0 * (t * t - t) * (2.0 * t - 1.0)  # noqa: E731
    g2 = lambda t: 12.0 * t * t - 12.0 * t + 2.0  # noqa: E731

    def u(x, y):
        return g(x) * g(y)

    def grad(x, y):
        return np.stack(np.broadcast_arrays(g1(x) * g(y), g(x) * g1(y)), axis=-1)

    def hess(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        H = np.empty(x.shape + (2, 2))
        H[..., 0, 0] = g2(x) * g(y)
        H[..., 1, 1] = g(x) * g2(y)
        H[..., 0, 1] = H[..., 1, 0] = g1(x) * g1(y)
        return H

    def f(x, y):
        return 24.0 * g(y) + 2.0 * g2(x) * g2(y) + 24.0 * g(x)

    return ManufacturedCase(f=f, nu=nu, u_exact=u, grad_u=grad, hessian_u=hess,
                            name="square")


def constant_load_case(nu: float = 0.0) -> ManufacturedCase:
    """Unit load without a closed-form solution."""
    return ManufacturedCase(f=lambda x, y: np.ones(np.broadcast(x, y).shape), nu=nu,
                            name="unit load")


def _ops(obj) -> Discretization:
    if isinstance(obj, Discretization):
        return obj
    if isinstance(obj, Hierarchy):
        return obj.finest.ops
    return obj.ops


def source_transfer(level, f):
    """Move the load into the first equation.

    Parameters
    ----------
    level : Hierarchy, Level or Discretization
        Finest level of a hierarchy, or the operators of one mesh.
    f : callable
        Load ``f(x, y)``.

    Returns
    -------
    offset : ndarray
        Stress coefficients of ``Pi_h(w_h I)``.
    r : ndarray
        Right-hand side ``-M offset`` of the kernel problem.
    """
    ops = _ops(level)
    F = ops.load(f)
    w = _cg(ops.p1_stiffness, F, 1e-12, "the load transfer Poisson problem")
    offset = ops.identity_matrix @ w
    return offset, -(ops.mass @ offset)


def recover_deflection(level, sigma_h) -> np.ndarray:
    """Deflection at interior vertices from ``int grad u . grad v_i = a(sigma_h, Pi_h(v_i I))``."""
    ops = _ops(level)
    rhs = ops.identity_matrix.T @ (ops.mass @ np.asarray(sigma_h, dtype=float))
    return _cg(ops.p1_stiffness, rhs, 1e-12, "deflection recovery")


def _full_nodal(tri, u_int):
    full = np.zeros(tri.n_vertices)
    full[tri.interior_vertices] = u_int
    return full


def compute_errors(tri: Triangulation, sigma_h, u_h, case: ManufacturedCase):
    """L2 error of the stress and full H1 error of the deflection.

    Both use the degree-4 triangle rule. ``u_h`` holds interior vertex values.

    Returns
    -------
    (float, float)
    """
    pts = triangle_points(tri)
    x, y = pts[..., 0], pts[..., 1]
    wa = tri.areas[:, None] * TRIANGLE_WEIGHTS[None, :]
    dS = case.sigma_exact(x, y) - cell_tensors(tri, sigma_h)[:, None]
    stress = np.sqrt(np.sum(wa * np.einsum("cqab,cqab->cq", dS, dS)))

    nodal = _full_nodal(tri, u_h)[tri.cells]  # (nc, 3)
    uh = nodal @ TRIANGLE_POINTS.T  # (nc, q)
    gh = np.einsum("cj,cjd->cd", nodal, tri.barycentric_gradients())
    du = case.u_exact(x, y) - uh
    dg = case.grad_u(x, y) - gh[:, None, :]
    defl = np.sqrt(np.sum(wa * (du ** 2 + np.sum(dg ** 2, axis=-1))))
    return float(stress), float(defl)


def direct_solve(level, f):
    """Sparse LU solve of the assembled saddle system ``[[M, B^T], [B, 0]]``.

    Returns ``(sigma, u)`` with ``u`` at interior vertices.
    """
    ops = _ops(level)
    M, B = ops.mass, ops.bform
    K = sp.bmat([[M, B.T], [B, None]], format="csc")
    rhs = np.concatenate([np.zeros(M.shape[0]), -ops.load(f)])
    x = spsolve(K, rhs)
    return x[:M.shape[0]], x[M.shape[0]:]


@dataclass
class PlateSolution:
    tri: Triangulation
    sigma_tilde: np.ndarray
    offset: np.ndarray
    u: np.ndarray
    iterations: int
    residual_history: list = field(repr=False, default_factory=list)

    @property
    def sigma(self):
        return self.sigma_tilde + self.offset


def solve_plate(hier: Hierarchy, f, tol: float = 1e-8, max_iter: int = 200,
                m1: int | None = None, m2: int | None = None, residual: str = "saddle",
                callback=None) -> PlateSolution:
    """Stress by multigrid on the finest level of ``hier``, then the deflection."""
    lv = hier.finest
    offset, r = source_transfer(lv, f)
    res = mg_solve(hier, r, tol=tol, max_iter=max_iter, m1=m1, m2=m2,
                   residual=residual, callback=callback)
    u = recover_deflection(lv, res.sigma + offset)
    return PlateSolution(lv.tri, res.sigma, offset, u, res.iterations, res.residual_history)


@dataclass
class ExperimentConfig:
    """Iteration-count experiment on levels ``first_level .. levels``."""

    domain: str = "square"
    levels: int = 6
    nu: float | None = None
    smoothing: tuple = ((1, 1), (2, 2))
    tol: float = 1e-8
    max_iter: int = 200
    first_level: int = 3
    residual: str = "saddle"
    with_errors: bool = False
    with_delta: bool = False
    mesh: Triangulation | None = None

    def resolved_nu(self) -> float:
        if self.nu is not None:
            return self.nu
        return 0.3 if self.domain == "square" else 0.0

    def case(self) -> ManufacturedCase:
        if self.domain == "square":
            return manufactured_square_case(self.resolved_nu())
        return constant_load_case(self.resolved_nu())


def run_experiment(config: ExperimentConfig) -> list[dict]:
    """One row per level with size (vertex count) and cycle counts.

    Keys: ``level``, ``size``, ``iters_<m1><m2>`` for each smoothing pair, and
    optionally ``h``, ``stress_l2_err``, ``defl_h1_err`` (needs an exact
    solution) and ``delta`` (V(1,1) contraction against a tightly converged
    reference).
    """
    nu = config.resolved_nu()
    case = config.case()
    base = config.mesh if config.mesh is not None else config.domain
    full = build_hierarchy(base, config.levels, nu)
    rows = []
    for k in range(min(config.first_level, config.levels), config.levels + 1):
        hier = full.truncate(k)
        tri = hier.finest.tri
        row = {"level": k, "size": tri.n_vertices}
        sol = None
        for m1, m2 in config.smoothing:
            sol = solve_plate(hier, case.f, tol=config.tol, max_iter=config.max_iter,
                              m1=m1, m2=m2, residual=config.residual)
            row[f"iters_{m1}{m2}"] = sol.iterations
        if config.with_errors and case.u_exact is not None:
            row["h"] = tri.h
            row["stress_l2_err"], row["defl_h1_err"] = compute_errors(tri, sol.sigma, sol.u, case)
        if config.with_delta:
            _, r = source_transfer(hier.finest, case.f)
            ref = mg_solve(hier, r, tol=1e-12, max_iter=400, m1=2, m2=2).sigma
            row["delta"] = estimate_contraction(hier, r, ref, m1=1, m2=1)
        log.info("level %d: %s", k, row)
        rows.append(row)
    return rows


def convergence_study(levels: int, nu: float = 0.3, first_level: int = 1,
                      tol: float = 1e-10, mesh: Triangulation | None = None) -> list[dict]:
    """Errors of the manufactured square solution and observed stress order.

    ``order`` is ``log2(e_{k-1} / e_k)`` of the stress error (``nan`` on the
    first row).
    """
    case = manufactured_square_case(nu)
    full = build_hierarchy("square" if mesh is None else mesh, levels, nu)
    rows = []
    for k in range(first_level, levels + 1):
        hier = full.truncate(k)
        tri = hier.finest.tri
        sol = solve_plate(hier, case.f, tol=tol, max_iter=400)
        es, eu = compute_errors(tri, sol.sigma, sol.u, case)
        order = np.log2(rows[-1]["stress_l2_err"] / es) if rows else float("nan")
        rows.append({"level": k, "h": tri.h, "stress_l2_err": es, "defl_h1_err": eu,
                     "order": float(order)})
    return rows
