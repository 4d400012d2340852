import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duffy_lor.duffy_ref import build_ref_space, evaluate, unit_lattice
from duffy_lor.mesh import (
    MeshError, TriMesh, build_dof_map, build_lor_mesh, parse_mesh, perturb_mesh, reference_mesh,
    signed_areas, structured_tri_mesh, uniform_refine, write_mesh,
)

REF_FILE = """duffy-mesh 1
# reference triangle
vertices 3
0 0
1 0
0 1
triangles 1
0 1 2
boundary 3
0 1 1
1 2 1
2 0 1
"""


def test_parse_reference():
    m = parse_mesh(REF_FILE)
    assert (m.nv, m.nt, m.ne) == (3, 1, 3)
    assert len(m.boundary) == 3


def test_round_trip_bit_identical():
    m = perturb_mesh(structured_tri_mesh(1, 1), 0.0)
    text = write_mesh(m)
    m2 = parse_mesh(text)
    assert write_mesh(m2) == text
    assert np.array_equal(m2.vertices, m.vertices) and np.array_equal(m2.triangles, m.triangles)
    r = perturb_mesh(uniform_refine(structured_tri_mesh(2, 2)), 0.05, seed=3)
    assert np.array_equal(parse_mesh(write_mesh(r)).vertices, r.vertices)


@pytest.mark.parametrize("text,msg", [
    (REF_FILE.replace("0 1 2\n", "0 1 1\n"), "degenerate triangle at line 8"),
    (REF_FILE.replace("0 1 2\n", "0 2 1\n"), "negative-area triangle at line 8"),
    (REF_FILE.replace("0 1 2\n", "0 1 5\n"), "out of range at line 8"),
    (REF_FILE.replace("duffy-mesh 1", "duffy-mesh 2"), "malformed header at line 1"),
    (REF_FILE.replace("vertices 3", "vertices x"), "malformed count at line 3"),
    (REF_FILE.replace("1 0\n0 1\n", "1 0\n0 0\n"), "degenerate triangle"),
])
def test_parse_errors(text, msg):
    with pytest.raises(MeshError, match=msg):
        parse_mesh(text)


def test_duplicate_vertices_rejected():
    text = REF_FILE.replace("vertices 3\n0 0\n1 0\n0 1\n", "vertices 4\n0 0\n1 0\n0 1\n1 0\n")
    with pytest.raises(MeshError, match="duplicate"):
        parse_mesh(text)


def test_structured_mesh():
    m = structured_tri_mesh(1, 1)
    assert (m.nv, m.nt) == (4, 2)
    m = structured_tri_mesh(2, 2)
    assert (m.nv, m.nt) == (9, 8)
    assert signed_areas(m.vertices, m.triangles).sum() == pytest.approx(1.0, abs=1e-14)
    assert set(m.boundary[:, 2]) == {1} and len(m.boundary) == 8


def test_uniform_refine():
    m = structured_tri_mesh(1, 1)
    r = uniform_refine(m)
    assert r.nt == 8 and r.nv == m.nv + m.ne
    child = signed_areas(r.vertices, r.triangles).reshape(-1, 4).sum(axis=1)
    assert np.allclose(child, signed_areas(m.vertices, m.triangles), atol=1e-14)
    assert len(r.boundary) == 2 * len(m.boundary)


def test_invalid_meshes():
    with pytest.raises(MeshError):
        TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])
    # three triangles on the edge (0, 1)
    V = [[0, 0], [1, 0], [0, 1], [0.5, 0.5], [0.2, 0.9]]
    with pytest.raises(MeshError, match="manifold"):
        TriMesh(V, [[0, 1, 2], [0, 1, 3], [0, 1, 4]])


def test_dof_counts_two_triangles():
    m = structured_tri_mesh(1, 1)
    assert build_dof_map(m, "V", 2).total_dofs == 11
    assert build_dof_map(m, "W", 2).total_dofs == 18
    assert build_dof_map(m, "Z", 2).total_dofs == 8


@settings(max_examples=10, deadline=None)
@given(nx=st.integers(1, 3), ny=st.integers(1, 3), k=st.integers(0, 1), N=st.integers(1, 5))
def test_dof_count_formulas(nx, ny, k, N):
    m = structured_tri_mesh(nx, ny)
    for _ in range(k):
        m = uniform_refine(m)
    # independent entity count: edges from the vertex pairs of every triangle
    edges = {tuple(sorted(e)) for t in m.triangles.tolist() for e in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2]))}
    nv, ne, nt = m.nv, len(edges), m.nt
    assert build_dof_map(m, "V", N).total_dofs == nv + (N - 1) * ne + (N - 1) ** 2 * nt
    assert build_dof_map(m, "W", N).total_dofs == N * ne + 2 * N * (N - 1) * nt
    assert build_dof_map(m, "Z", N).total_dofs == N * N * nt
    for kind in "VWZ":
        dm = build_dof_map(m, kind, N)
        assert np.array_equal(np.unique(dm.cell_dofs), np.arange(dm.total_dofs))


def test_boundary_dofs():
    m = structured_tri_mesh(2, 2)
    N = 3
    dv = build_dof_map(m, "V", N)
    assert len(dv.boundary_dofs) == 8 + 8 * (N - 1)
    dw = build_dof_map(m, "W", N)
    assert len(dw.boundary_dofs) == 8 * N
    assert len(build_dof_map(m, "Z", N).boundary_dofs) == 0


def test_non_symmetric_lattice_rejected():
    m = structured_tri_mesh(1, 1)
    lat = unit_lattice(4, (0, 1))
    with pytest.raises(ValueError, match="symmetric"):
        build_dof_map(m, "V", 4, lat, lat)
    build_dof_map(reference_mesh(), "V", 4, lat, lat)


def _trace_values(mesh, dm, space, x, t, edge, s):
    """Values (V) or tangential components (W) of a global field on a local edge of element t."""
    P = mesh.vertices[mesh.triangles[t]]
    a, b = [(0, 1), (0, 2), (1, 2)][edge]
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pts_ref = ref[a] + np.outer(s, ref[b] - ref[a])
    pts_phys = P[a] + np.outer(s, P[b] - P[a])
    coeffs = x[dm.cell_dofs[t]] * dm.cell_signs[t]
    vals = evaluate(space, pts_ref[:, 0], pts_ref[:, 1])
    if space.kind == "V":
        return pts_phys, coeffs @ vals
    J = np.column_stack([P[1] - P[0], P[2] - P[0]])
    phys = np.linalg.solve(J.T, np.einsum("k,kap->ap", coeffs, vals))
    tangent = P[b] - P[a]
    return pts_phys, tangent @ phys / np.linalg.norm(tangent) * np.sign(mesh.triangles[t][b] - mesh.triangles[t][a])


@pytest.mark.parametrize("kind", ["V", "W"])
def test_interelement_continuity(kind):
    m = perturb_mesh(uniform_refine(structured_tri_mesh(1, 1)), 0.05, seed=2)
    N = 4
    space = build_ref_space(kind, N)
    dm = build_dof_map(m, kind, N)
    x = np.random.default_rng(0).standard_normal(dm.total_dofs)
    s = np.linspace(0.05, 0.95, 10)
    owners = {}
    for t in range(m.nt):
        for k in range(3):
            owners.setdefault(m.tri_edges[t, k], []).append((t, k))
    checked = 0
    for e, occ in owners.items():
        if len(occ) != 2:
            continue
        (t1, k1), (t2, k2) = occ
        p1, v1 = _trace_values(m, dm, space, x, t1, k1, s)
        # parametrize the second element's edge so the points coincide
        a2, b2 = [(0, 1), (0, 2), (1, 2)][k2]
        same = m.triangles[t1][[(0, 1), (0, 2), (1, 2)][k1][0]] == m.triangles[t2][a2]
        p2, v2 = _trace_values(m, dm, space, x, t2, k2, s if same else 1 - s)
        assert np.allclose(p1, p2, atol=1e-13)
        assert np.allclose(v1, v2, atol=1e-9)
        checked += 1
    assert checked == m.ne - len(m.boundary_edges())


def test_lor_mesh():
    one = reference_mesh()
    lor = build_lor_mesh(one, 4)
    assert (lor.n_quads, lor.n_tris) == (12, 4)
    lor1 = build_lor_mesh(one, 1)
    assert lor1.n_quads == 0 and np.allclose(lor1.tri_verts[0], one.vertices)
    m = structured_tri_mesh(1, 1)
    lor8 = build_lor_mesh(m, 8)
    assert lor8.dofmaps["V"].total_dofs == build_dof_map(m, "V", 8).total_dofs
    used = np.unique(np.concatenate([lor8.quad_v.ravel(), lor8.tri_v.ravel()]))
    assert np.array_equal(used, np.arange(lor8.dofmaps["V"].total_dofs))
