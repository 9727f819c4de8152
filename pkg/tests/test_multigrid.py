import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hhjmg.hhj import SolverError, cell_tensors
from hhjmg.multigrid import (
    ConvergenceError,
    PatchKernelBasis,
    a_norm,
    additive_schwarz_condition,
    build_hierarchy,
    coarse_solve,
    estimate_contraction,
    mg_solve,
    prolongation,
    smooth,
    vcycle,
)


def kernel_problem(lv, seed):
    """Random kernel solution and its right-hand side ``r = M sigma*``."""
    rng = np.random.default_rng(seed)
    exact = lv.symcurl @ rng.standard_normal(2 * lv.tri.n_vertices)
    return exact, lv.mass @ exact


def kernel_solution(lv, r):
    """Dense Galerkin solve on range(C), the oracle for small levels."""
    C = lv.symcurl.toarray()
    A = C.T @ lv.mass.toarray() @ C
    phi = np.linalg.lstsq(A, C.T @ r, rcond=None)[0]
    return C @ phi


# -- hierarchy ----------------------------------------------------------------

def test_hierarchy_shape(square_hier, lshape_hier):
    assert square_hier.finest.tri.n_vertices == 1089
    assert lshape_hier.finest.tri.n_vertices == 833
    for hier in (square_hier, lshape_hier):
        for lv in hier.levels:
            assert abs(lv.ops.bform @ lv.symcurl).max() <= 1e-12
            assert np.linalg.eigvalsh(lv.basis.gram)[:, 0].min() > 0
            assert abs(lv.ops.bform @ lv.basis.kernel).max() <= 1e-12
    with pytest.raises(ValueError):
        build_hierarchy("square", 0, 0.3)
    with pytest.raises(ValueError):
        build_hierarchy("square", 2, 0.3, m1=0, m2=0)


def test_patch_support(square_hier):
    lv = square_hier.level(2)
    t = lv.tri
    for i in (0, 17, 150, t.n_vertices - 1):
        edges, cols = lv.basis.columns(i)
        touching = np.flatnonzero((t.edges == i).any(axis=1))
        assert set(edges) <= set(touching)
        G = cols.T @ lv.mass[edges][:, edges].toarray() @ cols
        assert np.allclose(G, lv.basis.gram[i])


def test_gram_singularity_detected(square_hier):
    lv = square_hier.level(1)
    C = lv.symcurl.tolil()
    C[:, 1] = C[:, 0]  # make the two directions of vertex 0 parallel
    with pytest.raises(SolverError):
        PatchKernelBasis.build(lv.mass, C.tocsr())


# -- prolongation ---------------------------------------------------------------

def test_prolongation_ones_and_rank(square_hier):
    P = prolongation(square_hier, 2)
    assert np.allclose(P @ np.ones(P.shape[1]), 1.0)
    assert np.linalg.matrix_rank(P.toarray()) == P.shape[1]
    with pytest.raises(IndexError):
        prolongation(square_hier, 1)


@pytest.mark.parametrize("k", [2, 3])
def test_prolongation_is_inclusion(lshape_hier, k):
    fine = lshape_hier.level(k)
    coarse = lshape_hier.level(k - 1)
    s = np.random.default_rng(k).standard_normal(coarse.tri.n_edges)
    Tc = cell_tensors(coarse.tri, s)
    Tf = cell_tensors(fine.tri, fine.prolong @ s)
    parent = fine.rmap.coarse_cell_of_fine_cell
    assert np.abs(Tf - Tc[parent]).max() <= 1e-13 * (1 + np.abs(Tc).max())


def test_prolongation_maps_kernel_to_kernel(square_hier):
    for k in (2, 3):
        lv = square_hier.level(k)
        Cc = square_hier.level(k - 1).symcurl
        assert abs(lv.ops.bform @ lv.prolong @ Cc).max() <= 1e-12


# -- smoother -------------------------------------------------------------------

def test_smooth_fixed_point(square_hier):
    lv = square_hier.level(2)
    exact, r = kernel_problem(lv, 0)
    out = smooth(square_hier, 2, exact, r)
    assert np.abs(out - exact).max() <= 1e-12
    with pytest.raises(ValueError):
        smooth(square_hier, 2, exact, r, order="sideways")


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["forward", "backward"]))
def test_smooth_energy_decreases(seed, order):
    hier = _hier()
    lv = hier.level(2)
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(lv.tri.n_edges)
    target = kernel_solution(lv, r)
    sigma = lv.symcurl @ rng.standard_normal(2 * lv.tri.n_vertices)
    before = a_norm(lv, target - sigma)
    after_sigma = smooth(hier, 2, sigma, r, order)
    assert a_norm(lv, target - after_sigma) <= before * (1 + 1e-12)
    assert np.abs(lv.ops.bform @ after_sigma).max() <= 1e-10


_CACHE = {}


def _hier():
    if "sq" not in _CACHE:
        _CACHE["sq"] = build_hierarchy("square", 2, 0.3)
    return _CACHE["sq"]


# -- coarse solve ------------------------------------------------------------------

def test_coarse_solve(square_hier):
    lv = square_hier.level(1)
    assert np.all(coarse_solve(square_hier, np.zeros(lv.tri.n_edges)) == 0)
    r = np.random.default_rng(4).standard_normal(lv.tri.n_edges)
    s = coarse_solve(square_hier, r)
    g = lv.basis.kernel.T @ (r - lv.mass @ s)
    assert np.abs(g).max() <= 1e-10 * np.abs(lv.basis.kernel.T @ r).max()
    # a start shifted along the null space of the curl gives the same stress
    x, y = lv.tri.vertices.T
    shift = np.zeros(2 * lv.tri.n_vertices)
    shift[0::2] = 3.0 + 2.0 * x
    shift[1::2] = -1.0 + 2.0 * y
    s2 = coarse_solve(square_hier, r, x0=shift)
    assert np.abs(s - s2).max() <= 1e-9 * np.abs(s).max()
    assert np.allclose(s, kernel_solution(lv, r), atol=1e-9)


# -- V-cycle ----------------------------------------------------------------------

def test_vcycle_fixed_point(lshape_hier):
    lv = lshape_hier.finest
    exact, r = kernel_problem(lv, 1)
    out = vcycle(lshape_hier, 3, exact, r)
    assert np.abs(out - exact).max() <= 1e-12 * max(1.0, np.abs(exact).max())


@pytest.mark.parametrize("k", [2, 3])
def test_vcycle_reduces_error_and_keeps_kernel(square_hier, lshape_hier, k):
    for hier in (square_hier, lshape_hier):
        lv = hier.level(k)
        exact, r = kernel_problem(lv, k)
        sigma = np.zeros_like(r)
        for _ in range(3):
            new = vcycle(hier, k, sigma, r, 1, 1)
            assert a_norm(lv, exact - new) < a_norm(lv, exact - sigma)
            assert np.abs(lv.ops.bform @ new).max() <= 1e-10
            sigma = new


@pytest.mark.parametrize("m", [1, 2])
def test_error_propagator_symmetric(square_hier, m):
    lv = square_hier.level(3)
    rng = np.random.default_rng(m)

    def E(u):
        return u - vcycle(square_hier, 3, np.zeros_like(u), lv.mass @ u, m, m)

    u = lv.symcurl @ rng.standard_normal(2 * lv.tri.n_vertices)
    v = lv.symcurl @ rng.standard_normal(2 * lv.tri.n_vertices)
    lhs = E(u) @ (lv.mass @ v)
    rhs = u @ (lv.mass @ E(v))
    assert abs(lhs - rhs) <= 1e-10


# -- outer iteration -------------------------------------------------------------

def test_mg_solve_matches_oracle(square_hier):
    lv = square_hier.level(2)
    r = np.random.default_rng(9).standard_normal(lv.tri.n_edges)
    res = mg_solve(square_hier, r, tol=1e-10, level=2)
    assert res.converged and res.residual_history[-1] <= 1e-10
    assert np.allclose(res.sigma, kernel_solution(lv, r), atol=1e-8)
    pb = mg_solve(square_hier, r, tol=1e-10, level=2, residual="pullback")
    assert np.allclose(pb.sigma, res.sigma, atol=1e-8)
    assert mg_solve(square_hier, np.zeros_like(r), level=2).iterations == 0
    with pytest.raises(ValueError):
        mg_solve(square_hier, r, level=2, residual="energy")


def test_mg_solve_raises(square_hier):
    r = np.random.default_rng(0).standard_normal(square_hier.finest.tri.n_edges)
    with pytest.raises(ConvergenceError) as info:
        mg_solve(square_hier, r, tol=1e-8, max_iter=2)
    assert info.value.result.iterations == 2


def test_kernel_part_is_projection(square_hier):
    lv = square_hier.finest
    v = np.random.default_rng(2).standard_normal(lv.tri.n_edges)
    p = lv.kernel_part(v)
    assert np.abs(lv.ops.bform @ p).max() <= 1e-12
    assert np.allclose(lv.kernel_part(p), p, atol=1e-13)


def test_contraction_level_3(square_hier, lshape_hier):
    for hier in (square_hier, lshape_hier):
        lv = hier.finest
        exact, r = kernel_problem(lv, 5)
        d11 = estimate_contraction(hier, r, exact, m1=1, m2=1)
        d22 = estimate_contraction(hier, r, exact, m1=2, m2=2)
        assert 0 < d11 < 1
        assert d22 <= d11 + 0.02


def test_multilevel_additive_schwarz_condition_bounded():
    hier = build_hierarchy("square", 4, 0.3)
    kappa = []
    for k in (2, 3, 4):
        lo, hi = additive_schwarz_condition(hier, k, multilevel=True)
        assert lo > 0
        kappa.append(hi / lo)
    ratios = np.array(kappa[1:]) / np.array(kappa[:-1])
    assert np.all(ratios <= 1.25), kappa


def test_single_level_additive_schwarz_degrades():
    # without the coarse levels the patch preconditioner sees the h^-2 growth
    hier = build_hierarchy("square", 3, 0.3)
    k2 = np.divide(*additive_schwarz_condition(hier, 2, multilevel=False)[::-1])
    k3 = np.divide(*additive_schwarz_condition(hier, 3, multilevel=False)[::-1])
    assert k3 / k2 > 2.0
