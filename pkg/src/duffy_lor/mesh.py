"""Triangle meshes, global DOF maps and low-order-refined submeshes.

Element convention: local vertex 2 is the collapsed vertex (apex) of the
reference construction.  Local edges are e0 = (0, 1), e1 = (0, 2) and
e2 = (1, 2); global edges run from the lower to the higher global vertex
index.
"""

from dataclasses import dataclass, field

import numpy as np

from .duffy_ref import space_dim, unit_lattice, v_index, wh_index, wv_index
from .lattice2d import build_lattice, lor_cells

LOCAL_EDGES = ((0, 1), (0, 2), (1, 2))
DUPLICATE_TOL = 1e-12


class MeshError(ValueError):
    """Malformed or invalid mesh input."""


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Counterclockwise triangle mesh with derived, globally oriented edges."""

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    edges: np.ndarray = field(init=False, repr=False)
    tri_edges: np.ndarray = field(init=False, repr=False)
    tri_edge_signs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        T = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        B = np.asarray(self.boundary, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "triangles", T)
        object.__setattr__(self, "boundary", B)
        if T.size and (T.min() < 0 or T.max() >= len(V)):
            raise MeshError("triangle vertex index out of range")
        if np.any(signed_areas(V, T) <= 0):
            raise MeshError("triangles must have positive signed area")
        keys = {}
        tri_edges = np.empty_like(T)
        signs = np.empty(T.shape, dtype=np.int64)
        for t, tri in enumerate(T):
            for k, (a, b) in enumerate(LOCAL_EDGES):
                va, vb = int(tri[a]), int(tri[b])
                key = (min(va, vb), max(va, vb))
                tri_edges[t, k] = keys.setdefault(key, len(keys))
                signs[t, k] = 1 if va < vb else -1
        counts = np.bincount(tri_edges.ravel(), minlength=len(keys))
        if np.any(counts > 2):
            raise MeshError("mesh is not edge-manifold")
        edges = np.array(list(keys), dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "tri_edges", tri_edges)
        object.__setattr__(self, "tri_edge_signs", signs)

    @property
    def nv(self):
        return len(self.vertices)

    @property
    def nt(self):
        return len(self.triangles)

    @property
    def ne(self):
        return len(self.edges)

    def boundary_edges(self):
        """Indices of edges adjacent to exactly one triangle."""
        counts = np.bincount(self.tri_edges.ravel(), minlength=self.ne)
        return np.flatnonzero(counts == 1)

    def boundary_vertices(self):
        return np.unique(self.edges[self.boundary_edges()])

    def element_maps(self):
        """Per-element origin ``p0`` (nt, 2) and Jacobian ``J`` (nt, 2, 2)."""
        P = self.vertices[self.triangles]
        J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
        return P[:, 0], J


def signed_areas(V, T):
    P = V[T]
    d1, d2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


# ------------------------------------------------------------- file format

def write_mesh(mesh):
    lines = ["duffy-mesh 1", f"vertices {mesh.nv}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.nt}")
    lines += [" ".join(map(str, t)) for t in mesh.triangles.tolist()]
    lines.append(f"boundary {len(mesh.boundary)}")
    lines += [" ".join(map(str, b)) for b in mesh.boundary.tolist()]
    return "\n".join(lines) + "\n"


def parse_mesh(text):
    """Parse the duffy-mesh v1 text format; errors carry the line number."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    pos = 0

    def take(n_fields, conv, what):
        nonlocal pos
        if pos >= len(rows):
            raise MeshError(f"unexpected end of file while reading {what}")
        lineno, tok = rows[pos]
        if len(tok) != n_fields:
            raise MeshError(f"expected {n_fields} fields for {what} at line {lineno}")
        pos += 1
        try:
            return lineno, [conv(t) for t in tok]
        except ValueError:
            raise MeshError(f"malformed {what} at line {lineno}") from None

    def header(name):
        nonlocal pos
        if pos >= len(rows) or rows[pos][1][0] != name or len(rows[pos][1]) != 2:
            where = rows[pos][0] if pos < len(rows) else "end of file"
            raise MeshError(f"expected '{name} <count>' at line {where}")
        lineno, tok = rows[pos]
        pos += 1
        try:
            n = int(tok[1])
        except ValueError:
            raise MeshError(f"malformed count at line {lineno}") from None
        if n < 0:
            raise MeshError(f"negative count at line {lineno}")
        return n

    if not rows or rows[0][1] != ["duffy-mesh", "1"]:
        raise MeshError(f"malformed header at line {rows[0][0] if rows else 1}")
    pos = 1
    nv = header("vertices")
    verts = [take(2, float, "vertex")[1] for _ in range(nv)]
    V = np.array(verts, dtype=float).reshape(-1, 2)
    nt = header("triangles")
    tris = []
    for _ in range(nt):
        lineno, t = take(3, int, "triangle")
        if min(t) < 0 or max(t) >= nv:
            raise MeshError(f"vertex index out of range at line {lineno}")
        if len(set(t)) < 3:
            raise MeshError(f"degenerate triangle at line {lineno}")
        area = signed_areas(V, np.array([t]))[0]
        if area == 0:
            raise MeshError(f"degenerate triangle at line {lineno}")
        if area < 0:
            raise MeshError(f"negative-area triangle at line {lineno}")
        tris.append(t)
    bnd = []
    if pos < len(rows):
        nb = header("boundary")
        for _ in range(nb):
            lineno, b = take(3, int, "boundary edge")
            if min(b[:2]) < 0 or max(b[:2]) >= nv:
                raise MeshError(f"vertex index out of range at line {lineno}")
            if b[2] <= 0:
                raise MeshError(f"boundary attribute must be positive at line {lineno}")
            bnd.append(b)
    if pos != len(rows):
        raise MeshError(f"unexpected content at line {rows[pos][0]}")
    rounded = np.round(V / DUPLICATE_TOL).astype(np.int64) if nv else V
    if nv and len(np.unique(rounded, axis=0)) != nv:
        raise MeshError("duplicate vertices")
    return TriMesh(V, np.array(tris, dtype=np.int64).reshape(-1, 3),
                   np.array(bnd, dtype=np.int64).reshape(-1, 3))


# ------------------------------------------------------------- generators

def reference_mesh():
    return TriMesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]],
                   [[0, 1, 1], [1, 2, 1], [0, 2, 1]])


def _with_boundary(V, T):
    m = TriMesh(V, T)
    be = m.boundary_edges()
    B = np.column_stack([m.edges[be], np.ones(len(be), dtype=np.int64)])
    return TriMesh(V, T, B)


def structured_tri_mesh(nx, ny):
    """Unit square with nx * ny cells, each split along its diagonal."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be positive")
    xs, ys = np.linspace(0.0, 1.0, nx + 1), np.linspace(0.0, 1.0, ny + 1)
    V = np.array([(x, y) for y in ys for x in xs])
    T = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 2, a + nx + 1
            T += [(a, b, c), (a, c, d)]
    return _with_boundary(V, np.array(T))


def uniform_refine(mesh):
    """Split every triangle into four through its edge midpoints."""
    mid = mesh.nv + np.arange(mesh.ne)
    V = np.vstack([mesh.vertices, mesh.vertices[mesh.edges].mean(axis=1)])
    T = []
    for tri, ed in zip(mesh.triangles, mesh.tri_edges):
        v0, v1, v2 = tri
        m01, m02, m12 = mid[ed]
        T += [(v0, m01, m02), (m01, v1, m12), (m02, m12, v2), (m01, m12, m02)]
    T = np.array(T)
    if len(mesh.boundary):
        key = {tuple(e): k for k, e in enumerate(mesh.edges.tolist())}
        B = []
        for a, b, attr in mesh.boundary.tolist():
            m = mid[key[(min(a, b), max(a, b))]]
            B += [(a, m, attr), (m, b, attr)]
        return TriMesh(V, T, np.array(B))
    return TriMesh(V, T)


def perturb_mesh(mesh, amplitude, seed=0):
    """Randomly move interior vertices by up to ``amplitude`` in each coordinate."""
    rng = np.random.default_rng(seed)
    V = mesh.vertices.copy()
    inner = np.setdiff1d(np.arange(mesh.nv), mesh.boundary_vertices())
    V[inner] += rng.uniform(-amplitude, amplitude, (len(inner), 2))
    return TriMesh(V, mesh.triangles, mesh.boundary)


# ------------------------------------------------------------- DOF maps

@dataclass(frozen=True, eq=False)
class DofMap:
    """Local-to-global DOF indices with orientation signs (W only)."""

    kind: str
    N: int
    cell_dofs: np.ndarray = field(repr=False)
    cell_signs: np.ndarray = field(repr=False)
    total_dofs: int = 0
    boundary_dofs: np.ndarray = field(default=None, repr=False)


def is_symmetric_lattice(lat, tol=1e-13):
    p = lat.points
    return bool(np.allclose(p + p[::-1], 1.0, rtol=0, atol=tol))


def _local_layout(kind, N):
    """Local indices grouped by entity: vertices, edge interiors, element interior."""
    if kind == "V":
        verts = [v_index(N, 0, 0), v_index(N, N, 0), v_index(N, 0, N)]
        edges = [[v_index(N, k, 0) for k in range(1, N)],
                 [v_index(N, 0, k) for k in range(1, N)],
                 [v_index(N, N, k) for k in range(1, N)]]
    elif kind == "W":
        verts = []
        edges = [[wh_index(N, k, 0) for k in range(N)],
                 [wv_index(N, 0, k) for k in range(N)],
                 [wv_index(N, N, k) for k in range(N)]]
    else:
        verts, edges = [], [[], [], []]
    used = set(verts) | {i for e in edges for i in e}
    interior = [i for i in range(space_dim(kind, N)) if i not in used]
    return verts, edges, interior


def build_dof_map(mesh, kind, N, lat_x=None, lat_y=None):
    """Global numbering: V vertices, edges, interiors; W edges, interiors; Z per element."""
    if kind not in ("V", "W", "Z"):
        raise ValueError(f"unknown space kind {kind!r}")
    if N < 1:
        raise ValueError("N must be at least 1")
    lat_x = unit_lattice(N) if lat_x is None else lat_x
    lat_y = unit_lattice(N) if lat_y is None else lat_y
    if kind != "Z" and mesh.nt > 1:
        if not (is_symmetric_lattice(lat_x) and np.allclose(lat_x.points, lat_y.points)):
            raise ValueError("conforming global spaces need one symmetric lattice in x and y")
    nloc = space_dim(kind, N)
    verts, edges, interior = _local_layout(kind, N)
    dofs = np.empty((mesh.nt, nloc), dtype=np.int64)
    signs = np.ones((mesh.nt, nloc))
    nv, ne, nt = mesh.nv, mesh.ne, mesh.nt
    if kind == "V":
        per_edge, n_int = N - 1, (N - 1) ** 2
        edge_base, int_base = nv, nv + ne * (N - 1)
    elif kind == "W":
        per_edge, n_int = N, 2 * N * (N - 1)
        edge_base, int_base = 0, N * ne
    else:
        per_edge, n_int = 0, N * N
        edge_base, int_base = 0, 0
    for t in range(nt):
        for k, loc in enumerate(verts):
            dofs[t, loc] = mesh.triangles[t, k]
        for k, locs in enumerate(edges):
            e, s = mesh.tri_edges[t, k], mesh.tri_edge_signs[t, k]
            for m, loc in enumerate(locs):
                mm = m if s > 0 else per_edge - 1 - m
                dofs[t, loc] = edge_base + e * per_edge + mm
                if kind == "W" and s < 0:
                    signs[t, loc] = -1.0
        for m, loc in enumerate(interior):
            dofs[t, loc] = int_base + t * n_int + m
    total = int_base + nt * n_int
    if kind == "Z":
        bdofs = np.zeros(0, dtype=np.int64)
    else:
        be = mesh.boundary_edges()
        parts = [edge_base + per_edge * be[:, None] + np.arange(per_edge)[None, :]]
        if kind == "V":
            parts.append(mesh.boundary_vertices()[:, None])
        bdofs = np.unique(np.concatenate([p.ravel() for p in parts]))
    return DofMap(kind, N, dofs, signs, total, bdofs.astype(np.int64))


# ------------------------------------------------------------- LOR mesh

@dataclass(frozen=True, eq=False)
class LorMesh:
    """Subcells of every parent element with global V, W, Z DOF indices.

    Quads and triangles are stored separately.  ``*_verts`` are physical
    vertex coordinates (counterclockwise, lower-left first), ``*_v`` V
    DOFs at those vertices, ``*_w``/``*_ws`` W DOFs and signs for the
    bottom, right, (top,) left sides, ``*_z`` the Z DOF.
    """

    N: int
    dofmaps: dict = field(repr=False)
    quad_verts: np.ndarray = field(repr=False)
    quad_v: np.ndarray = field(repr=False)
    quad_w: np.ndarray = field(repr=False)
    quad_ws: np.ndarray = field(repr=False)
    quad_z: np.ndarray = field(repr=False)
    tri_verts: np.ndarray = field(repr=False)
    tri_v: np.ndarray = field(repr=False)
    tri_w: np.ndarray = field(repr=False)
    tri_ws: np.ndarray = field(repr=False)
    tri_z: np.ndarray = field(repr=False)

    @property
    def n_quads(self):
        return len(self.quad_verts)

    @property
    def n_tris(self):
        return len(self.tri_verts)


def build_lor_mesh(mesh, N, lat=None):
    lat = unit_lattice(N) if lat is None else lat
    maps = {k: build_dof_map(mesh, k, N, lat, lat) for k in ("V", "W", "Z")}
    cells = lor_cells(build_lattice(N, lat, lat))
    p0, J = mesh.element_maps()
    out = {"quad": [[] for _ in range(6)], "tri": [[] for _ in range(6)]}
    for cell in cells:
        bucket = out[cell.kind]
        ref = cell.verts
        bucket[0].append(p0[:, None, :] + np.einsum("tab,kb->tka", J, ref))
        bucket[1].append(maps["V"].cell_dofs[:, list(cell.vdofs)])
        bucket[2].append(maps["W"].cell_dofs[:, list(cell.edofs)])
        bucket[3].append(maps["W"].cell_signs[:, list(cell.edofs)])
        bucket[4].append(maps["Z"].cell_dofs[:, cell.cell])
    arrays = {}
    for kind, nvert in (("quad", 4), ("tri", 3)):
        b = out[kind]
        if b[0]:
            arrays[kind] = [np.concatenate(b[0]), np.concatenate(b[1]), np.concatenate(b[2]),
                            np.concatenate(b[3]), np.concatenate(b[4])]
        else:
            arrays[kind] = [np.zeros((0, nvert, 2)), np.zeros((0, nvert), dtype=np.int64),
                            np.zeros((0, nvert), dtype=np.int64), np.zeros((0, nvert)),
                            np.zeros(0, dtype=np.int64)]
    return LorMesh(N, maps, *arrays["quad"], *arrays["tri"])
