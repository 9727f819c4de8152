"""Triangular meshes, uniform red refinement and nested hierarchies.

A :class:`Triangulation` stores vertices, counterclockwise cells and a
canonical edge list. Edge ``e`` runs from ``edges[e, 0]`` to ``edges[e, 1]``
with the smaller vertex id first; its tangent points along that direction and
its normal is ``n = (t_y, -t_x)``.

Local edge ``j`` of a cell is the edge opposite local vertex ``j``; it is
traversed counterclockwise from local vertex ``(j + 1) % 3`` to
``(j + 2) % 3``. ``cell_edge_sign[c, j]`` is ``+1`` when that traversal agrees
with the global edge orientation, so the outward normal of the cell on that
edge is ``cell_edge_sign * normals[edge]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "MeshError",
    "Edge",
    "Triangulation",
    "RefinementMap",
    "build_triangulation",
    "initial_mesh",
    "refine_uniform",
    "containing_coarse_cell",
    "read_mesh",
    "write_mesh",
]

DOMAINS = ("square", "lshape")


class MeshError(ValueError):
    """Raised for invalid (degenerate, clockwise or non-conforming) meshes."""


@dataclass(frozen=True)
class Edge:
    endpoints: tuple[int, int]
    tangent: np.ndarray
    normal: np.ndarray
    length: float
    boundary: bool
    adjacent_cells: tuple[int, ...]


class Triangulation:
    """Conforming triangulation with precomputed edge frames and incidence.

    Use :func:`build_triangulation` rather than calling the constructor with
    unchecked data.
    """

    def __init__(self, vertices, cells, edges, cell_edges, cell_edge_sign,
                 edge_cells, level=1):
        self.vertices = vertices
        self.cells = cells
        self.edges = edges
        self.cell_edges = cell_edges
        self.cell_edge_sign = cell_edge_sign
        self.edge_cells = edge_cells
        self.level = level

        p = vertices
        d = p[edges[:, 1]] - p[edges[:, 0]]
        self.edge_lengths = np.hypot(d[:, 0], d[:, 1])
        self.tangents = d / self.edge_lengths[:, None]
        self.normals = np.column_stack([self.tangents[:, 1], -self.tangents[:, 0]])

        a, b, c = (p[cells[:, j]] for j in range(3))
        self.areas = 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                            - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

        self.boundary_edges = edge_cells[:, 1] < 0
        boundary_vertex = np.zeros(len(vertices), dtype=bool)
        boundary_vertex[edges[self.boundary_edges].ravel()] = True
        self.boundary_vertices = boundary_vertex
        self.interior_vertices = np.flatnonzero(~boundary_vertex)
        # vertex id -> index into P_h coefficient vectors, -1 on the boundary
        self.interior_index = np.full(len(vertices), -1, dtype=np.int64)
        self.interior_index[self.interior_vertices] = np.arange(len(self.interior_vertices))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_interior_vertices(self) -> int:
        return len(self.interior_vertices)

    @property
    def h(self) -> float:
        """Largest edge length."""
        return float(self.edge_lengths.max())

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def euler_characteristic(self) -> int:
        return self.n_cells - self.n_edges + self.n_vertices

    def edge(self, e: int) -> Edge:
        cells = tuple(int(c) for c in self.edge_cells[e] if c >= 0)
        return Edge(
            endpoints=(int(self.edges[e, 0]), int(self.edges[e, 1])),
            tangent=self.tangents[e].copy(),
            normal=self.normals[e].copy(),
            length=float(self.edge_lengths[e]),
            boundary=bool(self.boundary_edges[e]),
            adjacent_cells=cells,
        )

    def cell_normals(self) -> np.ndarray:
        """Outward unit normals, shape ``(n_cells, 3, 2)``, per local edge."""
        return self.normals[self.cell_edges] * self.cell_edge_sign[..., None]

    def cell_tangents(self) -> np.ndarray:
        """Counterclockwise unit tangents ``t = (-n_y, n_x)`` per local edge."""
        n = self.cell_normals()
        return np.stack([-n[..., 1], n[..., 0]], axis=-1)

    def barycentric_gradients(self) -> np.ndarray:
        """Gradients of the three P1 hat functions on every cell, ``(n_cells, 3, 2)``."""
        p = self.vertices[self.cells]
        # grad lambda_j = rot90(edge opposite j) / (2 area)
        e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        return np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2.0 * self.areas[:, None, None])

    def vertex_patch_cells(self) -> list[np.ndarray]:
        """Cells sharing each vertex, in ascending cell order."""
        order = np.argsort(self.cells.ravel(), kind="stable")
        counts = np.bincount(self.cells.ravel(), minlength=self.n_vertices)
        return np.split(order // 3, np.cumsum(counts)[:-1])

    def __repr__(self):
        return (f"Triangulation(level={self.level}, vertices={self.n_vertices}, "
                f"cells={self.n_cells}, edges={self.n_edges})")


@dataclass(frozen=True)
class RefinementMap:
    """Parent/child bookkeeping of one red refinement step."""

    coarse_cell_of_fine_cell: np.ndarray
    fine_vertex_of_coarse_edge: np.ndarray
    coarse_vertex_embedding: np.ndarray

    def compose(self, finer: "RefinementMap") -> "RefinementMap":
        """Map from the cells of ``finer``'s fine mesh straight to this coarse mesh."""
        return RefinementMap(
            coarse_cell_of_fine_cell=self.coarse_cell_of_fine_cell[finer.coarse_cell_of_fine_cell],
            fine_vertex_of_coarse_edge=np.empty(0, dtype=np.int64),
            coarse_vertex_embedding=finer.coarse_vertex_embedding[self.coarse_vertex_embedding],
        )


def _enumerate_edges(cells):
    nc = len(cells)
    # local edge j joins local vertices (j+1)%3 -> (j+2)%3
    start = cells[:, [1, 2, 0]]
    stop = cells[:, [2, 0, 1]]
    lo = np.minimum(start, stop).ravel()
    hi = np.maximum(start, stop).ravel()
    pairs = np.column_stack([lo, hi])
    edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise MeshError("non-conforming mesh: an edge is shared by more than two cells")
    cell_edges = inverse.reshape(nc, 3)
    cell_edge_sign = np.where(start < stop, 1, -1).astype(np.int8)

    edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
    owner = np.repeat(np.arange(nc), 3)
    order = np.argsort(inverse, kind="stable")
    first = np.ones(len(order), dtype=bool)
    first[1:] = inverse[order][1:] != inverse[order][:-1]
    edge_cells[inverse[order][first], 0] = owner[order][first]
    edge_cells[inverse[order][~first], 1] = owner[order][~first]
    return edges.astype(np.int64), cell_edges, cell_edge_sign, edge_cells


def _check_hanging_nodes(tri: Triangulation):
    bnd = np.flatnonzero(tri.boundary_edges)
    if len(bnd) == 0:
        return
    tree = cKDTree(tri.vertices)
    a = tri.vertices[tri.edges[bnd, 0]]
    b = tri.vertices[tri.edges[bnd, 1]]
    mid = 0.5 * (a + b)
    radius = 0.5 * tri.edge_lengths[bnd]
    for k, near in enumerate(tree.query_ball_point(mid, radius * (1 + 1e-12))):
        e = bnd[k]
        for v in near:
            if v in (tri.edges[e, 0], tri.edges[e, 1]):
                continue
            d = tri.vertices[v] - a[k]
            along = d @ tri.tangents[e]
            off = abs(d @ tri.normals[e])
            if off <= 1e-12 * tri.edge_lengths[e] and 0 < along < tri.edge_lengths[e]:
                raise MeshError(f"non-conforming mesh: vertex {v} hangs on edge {e}")


def build_triangulation(vertices, cells, level: int = 1, check: bool = True) -> Triangulation:
    """Build a triangulation from a vertex list and counterclockwise cells.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    cells : array_like of int, shape (nc, 3)
        0-based vertex ids, counterclockwise.
    level : int
        Level tag carried by the mesh.
    check : bool
        Run the (more expensive) hanging-node conformity check.

    Raises
    ------
    MeshError
        On invalid vertex references, non-finite coordinates, zero-area or
        clockwise cells, or non-conforming edge sharing.
    """
    vertices = np.array(vertices, dtype=float).reshape(-1, 2)
    cells = np.array(cells, dtype=np.int64).reshape(-1, 3)
    if not np.all(np.isfinite(vertices)):
        raise MeshError("vertex coordinates must be finite")
    if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
        raise MeshError("cells reference vertices that do not exist")
    if np.any((cells[:, 0] == cells[:, 1]) | (cells[:, 1] == cells[:, 2])
              | (cells[:, 0] == cells[:, 2])):
        raise MeshError("degenerate cell with repeated vertex")

    edges, cell_edges, sign, edge_cells = _enumerate_edges(cells)
    tri = Triangulation(vertices, cells, edges, cell_edges, sign, edge_cells, level)

    scale = np.max(tri.edge_lengths) ** 2 if len(edges) else 1.0
    if np.any(np.abs(tri.areas) <= 1e-14 * scale):
        raise MeshError("degenerate (zero-area) cell")
    if np.any(tri.areas < 0):
        bad = int(np.flatnonzero(tri.areas < 0)[0])
        raise MeshError(f"cell {bad} is not counterclockwise")
    if check:
        _check_hanging_nodes(tri)
    return tri


def _grid(x0, x1, n):
    xs = np.linspace(x0, x1, n + 1)
    X, Y = np.meshgrid(xs, xs)  # row j <-> y index
    return np.column_stack([X.ravel(), Y.ravel()])


def _split_squares(n, keep):
    cells = []
    for j in range(n):
        for i in range(n):
            if not keep(i, j):
                continue
            v00 = j * (n + 1) + i
            v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
            # diagonal from the (i, j) corner to the (i+1, j+1) corner
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return np.array(cells, dtype=np.int64)


def initial_mesh(domain: str) -> Triangulation:
    """Level-1 mesh of a named domain.

    ``"square"`` is an 8x8 grid on (0, 1)^2 (81 vertices); ``"lshape"`` is the
    grid of spacing 1/4 on (-1, 1)^2 with the quadrant [0, 1) x (-1, 0] removed.
    Every grid square is split along its lower-left to upper-right diagonal.
    """
    if domain == "square":
        return build_triangulation(_grid(0.0, 1.0, 8), _split_squares(8, lambda i, j: True))
    if domain == "lshape":
        pts = _grid(-1.0, 1.0, 8)
        cells = _split_squares(8, lambda i, j: not (i >= 4 and j < 4))
        used = np.unique(cells)
        renumber = np.full(len(pts), -1, dtype=np.int64)
        renumber[used] = np.arange(len(used))
        return build_triangulation(pts[used], renumber[cells])
    raise ValueError(f"unknown domain {domain!r}; expected one of {DOMAINS}")


def refine_uniform(coarse: Triangulation) -> tuple[Triangulation, RefinementMap]:
    """Split every cell into four congruent children at its edge midpoints.

    Fine vertex ids keep the coarse ids; the midpoint of coarse edge ``e`` gets
    id ``n_vertices + e``. Children ``4c .. 4c + 3`` belong to coarse cell ``c``.
    """
    nv = coarse.n_vertices
    mid = 0.5 * (coarse.vertices[coarse.edges[:, 0]] + coarse.vertices[coarse.edges[:, 1]])
    vertices = np.vstack([coarse.vertices, mid])

    a, b, c = coarse.cells.T
    # midpoint opposite each local vertex
    ma, mb, mc = (nv + coarse.cell_edges[:, j] for j in range(3))
    children = np.stack([
        np.column_stack([a, mc, mb]),
        np.column_stack([mc, b, ma]),
        np.column_stack([mb, ma, c]),
        np.column_stack([ma, mb, mc]),
    ], axis=1).reshape(-1, 3)

    fine = build_triangulation(vertices, children, level=coarse.level + 1, check=False)
    rmap = RefinementMap(
        coarse_cell_of_fine_cell=np.repeat(np.arange(coarse.n_cells), 4),
        fine_vertex_of_coarse_edge=nv + np.arange(coarse.n_edges),
        coarse_vertex_embedding=np.arange(nv),
    )
    return fine, rmap


def containing_coarse_cell(rmap: RefinementMap, fine_cell: int) -> int:
    """Parent of ``fine_cell`` in the coarse mesh of ``rmap``."""
    n = len(rmap.coarse_cell_of_fine_cell)
    if not 0 <= fine_cell < n:
        raise IndexError(f"fine cell {fine_cell} out of range [0, {n})")
    return int(rmap.coarse_cell_of_fine_cell[fine_cell])


def write_mesh(tri: Triangulation, path) -> None:
    """Write the plain text format ``nv nc`` / ``x y`` lines / ``i j k`` lines.

    Coordinates use ``repr`` so reading the file back is bit-exact.
    """
    lines = [f"{tri.n_vertices} {tri.n_cells}"]
    lines += [f"{x!r} {y!r}" for x, y in tri.vertices.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in tri.cells.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path, level: int = 1) -> Triangulation:
    tokens = Path(path).read_text().split("\n")
    tokens = [t for t in tokens if t.strip()]
    try:
        nv, nc = (int(s) for s in tokens[0].split())
        verts = [[float(s) for s in line.split()] for line in tokens[1:1 + nv]]
        cells = [[int(s) for s in line.split()] for line in tokens[1 + nv:1 + nv + nc]]
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    if len(verts) != nv or len(cells) != nc or any(len(v) != 2 for v in verts) \
            or any(len(c) != 3 for c in cells):
        raise MeshError(f"malformed mesh file {path}: header/body size mismatch")
    return build_triangulation(verts, cells, level=level)
