import numpy as np
import pytest

from hhjmg.hhj import interp_Pi
from hhjmg.multigrid import build_hierarchy
from hhjmg.pipeline import (
    ExperimentConfig,
    ManufacturedCase,
    compute_errors,
    constant_load_case,
    direct_solve,
    manufactured_square_case,
    recover_deflection,
    run_experiment,
    solve_plate,
    source_transfer,
)
from hhjmg.quadrature import TRIANGLE_WEIGHTS, triangle_points


def test_manufactured_values():
    c = manufactured_square_case(0.3)
    assert np.isclose(c.f(0.5, 0.5), 5.0)
    assert np.allclose(c.sigma_exact(np.array(0.5), np.array(0.5)), 0.08125 * np.eye(2))
    s = np.linspace(0, 1, 11)
    z = np.zeros_like(s)
    for x, y, n in [(s, z, 1), (s, z + 1, 1), (z, s, 0), (z + 1, s, 0)]:
        assert np.allclose(c.u_exact(x, y), 0)
        assert np.allclose(c.grad_u(x, y)[..., n], 0)


def test_manufactured_divdiv_is_minus_load():
    c = manufactured_square_case(0.3)
    rng = np.random.default_rng(0)
    h = 1e-4

    def S(x, y, i, j):
        return c.sigma_exact(np.array(x), np.array(y))[i, j]

    for x, y in rng.uniform(0.1, 0.9, (6, 2)):
        d11 = (S(x + h, y, 0, 0) - 2 * S(x, y, 0, 0) + S(x - h, y, 0, 0)) / h ** 2
        d22 = (S(x, y + h, 1, 1) - 2 * S(x, y, 1, 1) + S(x, y - h, 1, 1)) / h ** 2
        d12 = (S(x + h, y + h, 0, 1) - S(x + h, y - h, 0, 1)
               - S(x - h, y + h, 0, 1) + S(x - h, y - h, 0, 1)) / (4 * h * h)
        assert abs(d11 + 2 * d12 + d22 + c.f(x, y)) <= 1e-5


def test_hessian_consistent_with_gradient():
    c = manufactured_square_case(0.3)
    x, y, h = 0.3, 0.7, 1e-6
    H = c.hessian_u(np.array(x), np.array(y))
    gx = (c.grad_u(x + h, y) - c.grad_u(x - h, y)) / (2 * h)
    gy = (c.grad_u(x, y + h) - c.grad_u(x, y - h)) / (2 * h)
    assert np.allclose(H[:, 0], gx, atol=1e-8) and np.allclose(H[:, 1], gy, atol=1e-8)


def test_source_transfer(square_hier):
    lv = square_hier.finest
    off, r = source_transfer(lv, lambda x, y: np.zeros_like(x))
    assert not off.any() and not r.any()
    c = manufactured_square_case(0.3)
    off, r = source_transfer(lv, c.f)
    F = lv.ops.load(c.f)
    assert np.abs(lv.ops.bform @ off + F).max() <= 1e-10
    assert np.allclose(r, -(lv.mass @ off))


def test_recover_zero(square_hier):
    lv = square_hier.finest
    assert not recover_deflection(lv, np.zeros(lv.tri.n_edges)).any()


def test_full_system_level2():
    hier = build_hierarchy("square", 2, 0.3)
    c = manufactured_square_case(0.3)
    sol = solve_plate(hier, c.f)
    ops = hier.finest.ops
    assert np.abs(ops.bform @ sol.sigma_tilde).max() <= 1e-10
    assert np.abs(ops.mass @ sol.sigma + ops.bform.T @ sol.u).max() <= 1e-7
    assert np.abs(ops.bform @ sol.sigma + ops.load(c.f)).max() <= 1e-7
    sd, ud = direct_solve(hier, c.f)
    assert np.abs(sol.sigma - sd).max() <= 1e-7
    assert np.abs(sol.u - ud).max() <= 1e-7
    # energy identity
    s = sol.sigma_tilde
    assert np.isclose(s @ (ops.mass @ s), float(s.T @ ops.mass.toarray() @ s), rtol=1e-12)


def test_lshape_unit_load():
    hier = build_hierarchy("lshape", 2, 0.0)
    c = constant_load_case()
    sol = solve_plate(hier, c.f)
    sd, ud = direct_solve(hier, c.f)
    assert np.abs(sol.u - ud).max() <= 1e-7
    assert sol.u.max() > 0  # a downward load bends the plate one way


def best_constant_error(tri, case):
    """Per-cell least-squares constant fit of the exact stress, and its L2 error."""
    pts = triangle_points(tri)
    S = case.sigma_exact(pts[..., 0], pts[..., 1])
    w = TRIANGLE_WEIGHTS
    mean = np.einsum("q,cqab->cab", w, S)
    d = S - mean[:, None]
    return np.sqrt(np.sum(tri.areas[:, None] * w * np.einsum("cqab,cqab->cq", d, d)))


def test_compute_errors(square_hier):
    tri = square_hier.finest.tri
    c = manufactured_square_case(0.3)
    s = interp_Pi(tri, c.sigma_exact)
    nodal = c.u_exact(*tri.vertices[tri.interior_vertices].T)
    es, eu = compute_errors(tri, s, nodal, c)
    # the edge-moment interpolant is not the L2 projection: the worst linear
    # field on one cell gives ratio sqrt(21/4) (see the next test)
    assert es <= 2.5 * best_constant_error(tri, c)
    assert eu > 0

    # piecewise-constant exact stress and vanishing deflection
    H = np.array([[1.0, -0.5], [-0.5, 2.0]])
    const = ManufacturedCase(
        f=lambda x, y: 0 * x, nu=0.2, u_exact=lambda x, y: 0 * x,
        grad_u=lambda x, y: np.zeros(np.shape(x) + (2,)),
        hessian_u=lambda x, y: np.broadcast_to(H, np.shape(x) + (2, 2)).copy())
    s = interp_Pi(tri, const.sigma_exact)
    es, eu = compute_errors(tri, s, np.zeros(tri.n_interior_vertices), const)
    assert es <= 1e-12 and eu == 0.0


def test_interpolation_vs_best_constant_single_cell(reference_triangle):
    # tau = x e1 e1^T: Pi tau = [[0, 1/4], [1/4, 0]], so |tau - Pi tau|^2 =
    # 1/12 + 1/16 while the best constant x = 1/3 leaves 1/36
    t = reference_triangle
    E = np.array([[1.0, 0.0], [0.0, 0.0]])
    case = ManufacturedCase(f=None, nu=0.0, u_exact=lambda x, y: 0 * x,
                            grad_u=lambda x, y: np.zeros(np.shape(x) + (2,)),
                            hessian_u=lambda x, y: -np.multiply.outer(x, E))
    s = interp_Pi(t, case.sigma_exact)
    assert np.allclose(s, [0.0, 0.0, 0.25])
    es, _ = compute_errors(t, s, np.zeros(0), case)
    assert np.isclose(es, np.sqrt(1 / 12 + 1 / 16))
    assert np.isclose(es / best_constant_error(t, case), np.sqrt(21 / 4))


def test_run_experiment_deterministic():
    cfg = ExperimentConfig(domain="lshape", levels=3, first_level=2)
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    assert a == b
    assert [r["size"] for r in a] == [225, 833]
    assert cfg.resolved_nu() == 0.0


def test_run_experiment_errors_and_delta():
    rows = run_experiment(ExperimentConfig(domain="square", levels=3, first_level=3,
                                           with_errors=True, with_delta=True,
                                           smoothing=((1, 1),)))
    (row,) = rows
    assert row["size"] == 1089 and 0 < row["delta"] < 1
    assert row["stress_l2_err"] < 0.01 and row["defl_h1_err"] < 1e-3


def test_invalid_poisson_ratio():
    with pytest.raises(ValueError):
        build_hierarchy("square", 1, 0.5)
