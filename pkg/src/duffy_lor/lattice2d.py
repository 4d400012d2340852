"""The collapsed lattice on the reference triangle: entities, incidence
matrices and the low-order-refined subcells.

Ordering follows the local DOF numbering of ``duffy_ref``: vertices (i, j)
with j outer and i inner, the apex last; horizontal edges first, then
vertical edges; cells (i, j) with j outer.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .duffy_ref import duffy_forward, unit_lattice, v_index, wh_index, wv_index, z_index
from .interp1d import Lattice1D


@dataclass(frozen=True)
class CollapsedLattice:
    """Image of the tensor lattice under the collapsing map.

    ``vertices`` lists (i, j) pairs (the apex appears once as (0, N));
    ``edges`` lists ``(tail, head)`` vertex indices oriented from lower to
    higher index; ``cells`` lists (i, j) pairs.  ``coords`` holds the
    triangle coordinates of each vertex.
    """

    N: int
    lattice_x: Lattice1D = field(repr=False)
    lattice_y: Lattice1D = field(repr=False)
    vertices: list = field(repr=False)
    edges: list = field(repr=False)
    edge_labels: list = field(repr=False)
    cells: list = field(repr=False)
    coords: np.ndarray = field(repr=False)

    @property
    def counts(self):
        return len(self.vertices), len(self.edges), len(self.cells)


def build_lattice(N, lat_x=None, lat_y=None):
    if N < 1:
        raise ValueError("N must be at least 1")
    lat_x = unit_lattice(N) if lat_x is None else lat_x
    lat_y = unit_lattice(N) if lat_y is None else lat_y
    xv, yv = lat_x.points, lat_y.points
    vertices = [(i, j) for j in range(N) for i in range(N + 1)] + [(0, N)]
    coords = np.array([duffy_forward(xv[i], yv[j]) for i, j in vertices])
    edges = [None] * (2 * N * N + N)
    labels = [None] * len(edges)
    for j in range(N):
        for i in range(N):
            k = wh_index(N, i, j)
            edges[k] = (v_index(N, i, j), v_index(N, i + 1, j))
            labels[k] = ("h", i, j)
        for i in range(N + 1):
            k = wv_index(N, i, j)
            edges[k] = (v_index(N, i, j), v_index(N, i, j + 1))
            labels[k] = ("e", i, j)
    cells = [None] * (N * N)
    for j in range(N):
        for i in range(N):
            cells[z_index(N, i, j)] = (i, j)
    return CollapsedLattice(N, lat_x, lat_y, vertices, edges, labels, cells, coords)


def incidence(lat, kind):
    """Signed incidence matrix: ``grad`` (edges x vertices) or ``curl`` (cells x edges)."""
    N = lat.N
    rows, cols, vals = [], [], []
    if kind == "grad":
        for e, (tail, head) in enumerate(lat.edges):
            rows += [e, e]
            cols += [head, tail]
            vals += [1, -1]
        shape = (len(lat.edges), len(lat.vertices))
    elif kind == "curl":
        for c, (i, j) in enumerate(lat.cells):
            bnd = [(wh_index(N, i, j), 1), (wv_index(N, i + 1, j), 1),
                   (wv_index(N, i, j), -1)]
            if j + 1 < N:
                bnd.append((wh_index(N, i, j + 1), -1))
            for e, s in bnd:
                rows.append(c)
                cols.append(e)
                vals.append(s)
        shape = (len(lat.cells), len(lat.edges))
    else:
        raise ValueError(f"unknown incidence kind {kind!r}")
    return sp.csr_matrix((np.array(vals, dtype=np.int64), (rows, cols)), shape=shape)


@dataclass(frozen=True)
class LorCell:
    """One subcell of the collapsed lattice.

    ``verts`` are reference-triangle coordinates in counterclockwise order
    starting at the lower-left corner; ``vdofs`` the matching local V
    indices; ``edofs`` the local W indices of the bottom, right, top and
    left sides (top omitted for triangles), each lattice edge running
    left-to-right or bottom-to-top; ``cell`` the local Z index.
    """

    kind: str
    ij: tuple
    verts: np.ndarray = field(repr=False)
    vdofs: tuple = ()
    edofs: tuple = ()
    cell: int = 0


def lor_cells(lat):
    """Quadrilateral and triangular subcells of the collapsed lattice."""
    N = lat.N
    out = []
    for c, (i, j) in enumerate(lat.cells):
        a, b = v_index(N, i, j), v_index(N, i + 1, j)
        if j + 1 < N:
            d, e = v_index(N, i + 1, j + 1), v_index(N, i, j + 1)
            vd = (a, b, d, e)
            ed = (wh_index(N, i, j), wv_index(N, i + 1, j), wh_index(N, i, j + 1), wv_index(N, i, j))
            kind = "quad"
        else:
            apex = v_index(N, 0, N)
            vd = (a, b, apex)
            ed = (wh_index(N, i, j), wv_index(N, i + 1, j), wv_index(N, i, j))
            kind = "tri"
        out.append(LorCell(kind, (i, j), lat.coords[list(vd)], vd, ed, c))
    return out


def polygon_area(verts):
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
