import numpy as np
import pytest

from hhjmg.mesh import build_triangulation, initial_mesh, refine_uniform
from hhjmg.multigrid import build_hierarchy

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def two_cell_square():
    return build_triangulation([(0, 0), (1, 0), (1, 1), (0, 1)], [(0, 1, 2), (0, 2, 3)])


@pytest.fixture(scope="session")
def nine_vertex_square(two_cell_square):
    return refine_uniform(two_cell_square)[0]


@pytest.fixture(scope="session")
def reference_triangle():
    return build_triangulation([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)])


@pytest.fixture(scope="session")
def square_meshes():
    """Square meshes of levels 1, 2, 3."""
    tri = initial_mesh("square")
    out = [tri]
    for _ in range(2):
        tri = refine_uniform(tri)[0]
        out.append(tri)
    return out


@pytest.fixture(scope="session")
def lshape_meshes():
    tri = initial_mesh("lshape")
    out = [tri]
    for _ in range(2):
        tri = refine_uniform(tri)[0]
        out.append(tri)
    return out


@pytest.fixture(scope="session")
def square_hier():
    return build_hierarchy("square", 3, 0.3)


@pytest.fixture(scope="session")
def lshape_hier():
    return build_hierarchy("lshape", 3, 0.0)


def p1_eval(tri, nodal, x, y):
    """Evaluate a P1 field with nodal values by brute-force point location."""
    x, y = np.ravel(x), np.ravel(y)
    out = np.full(x.shape, np.nan)
    p = tri.vertices[tri.cells]  # (nc, 3, 2)
    T = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # (nc, 2, 2)
    Tinv = np.linalg.inv(T)
    for n, (px, py) in enumerate(zip(x, y)):
        lam12 = np.einsum("cab,cb->ca", Tinv, np.array([px, py]) - p[:, 0])
        lam = np.column_stack([1 - lam12.sum(1), lam12])
        c = int(np.argmax(lam.min(axis=1)))
        out[n] = lam[c] @ nodal[tri.cells[c]]
    return out
