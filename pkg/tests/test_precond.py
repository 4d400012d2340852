import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from duffy_lor.assembly import assemble_global, assemble_lor, element_matrix
from duffy_lor.duffy_ref import build_ref_space, unit_lattice
from duffy_lor.mesh import build_dof_map, build_lor_mesh, structured_tri_mesh
from duffy_lor.precond import (
    bubble_dim, dirichlet_system, fictitious_preconditioner, fictitious_transfer, identity_preconditioner,
    lor_preconditioner, mass_diag_preconditioner, pn_dim, pn_element, pn_reference_stiffness,
    reference_mass_diag, reference_mass_matrix,
)
from duffy_lor.jacobi1d import quad_rule
from duffy_lor.solver import cond_estimate, pcg

MESH = structured_tri_mesh(2, 2)
LATTICES = [(0, 0), (1, 1), (0, 1), (1, 0)]


def test_identity_preconditioner():
    pc = identity_preconditioner(3)
    r = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(pc(r), r) and pc.shape == (3, 3)


def test_lor_preconditioner_exact_at_n1():
    dm = build_dof_map(MESH, "V", 1)
    A = assemble_global(MESH, dm, build_ref_space("V", 1), "mass+stiffness")
    A0 = assemble_lor(build_lor_mesh(MESH, 1), "V", "mass+stiffness")
    pc = lor_preconditioner(A0)
    x = np.random.default_rng(0).standard_normal(dm.total_dofs)
    assert np.allclose(pc.apply(A @ x), x, atol=1e-12)


def test_lor_preconditioner_symmetric():
    A0 = assemble_lor(build_lor_mesh(MESH, 4), "V", "mass+stiffness")
    pc = lor_preconditioner(A0)
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal((2, A0.shape[0]))
    assert x @ pc(y) == pytest.approx(y @ pc(x), rel=1e-12)
    assert x @ pc(x) > 0


@pytest.mark.parametrize("w", LATTICES)
@pytest.mark.parametrize("N", [1, 2, 5, 9])
def test_reference_mass_matrix_matches_assembly(N, w):
    """1D tensor route and the 2D element route agree."""
    lat = unit_lattice(N, w)
    M2 = element_matrix(build_ref_space("V", N, lat, lat), "mass")
    assert np.abs(reference_mass_matrix(N, w, w) - M2).max() < 1e-13


@pytest.mark.parametrize("w", LATTICES)
@pytest.mark.parametrize("variant", ["tensor", "diagonal"])
def test_mass_diag_positive(w, variant):
    for N in (1, 2, 3, 8, 20):
        d = reference_mass_diag(N, w, w, variant)
        assert d.shape == (N * (N + 1) + 1,)
        assert np.all(d > 0)


def test_mass_diag_tensor_weights():
    # off the apex the weights integrate constants over the triangle exactly
    for N in (2, 4, 8):
        d = reference_mass_diag(N, (0, 1), (0, 1))
        assert d[:-1].sum() == pytest.approx(0.5, rel=1e-12)
        assert d[-1] == pytest.approx(quad_rule("lobatto", N + 1, (1, 0)).weights[-1] / 4)


def test_mass_diag_variant_rejected():
    with pytest.raises(ValueError):
        reference_mass_diag(3, variant="lumped")


def test_mass_diag_growth_vs_bounded():
    def kappa(N, w):
        M = reference_mass_matrix(N, w, w)
        lam = scipy.linalg.eigvalsh(M, np.diag(reference_mass_diag(N, w, w)))
        return lam[-1] / lam[0]

    k00 = [kappa(N, (0, 0)) for N in (8, 16, 32)]
    k11 = [kappa(N, (1, 1)) for N in (8, 16, 32)]
    assert k00[2] / k00[1] > 1.6 and k00[1] / k00[0] > 1.5
    assert k11[2] / k11[1] < 1.02 and max(k11) < 11


def test_mass_diag_preconditioner_global():
    N = 4
    dm = build_dof_map(MESH, "V", N)
    pc = mass_diag_preconditioner(MESH, dm, (1, 1), (1, 1))
    d = reference_mass_diag(N, (1, 1), (1, 1))
    assert pc.diagonal.sum() == pytest.approx(MESH.nt * 2 * (1 / 8) * d.sum(), rel=1e-12)
    M = assemble_global(MESH, dm, build_ref_space("V", N, unit_lattice(N, (1, 1)), unit_lattice(N, (1, 1))), "mass")
    est = cond_estimate(M, sp.diags(pc.diagonal), method="dense")
    assert est.cond < 11
    with pytest.raises(ValueError):
        mass_diag_preconditioner(MESH, build_dof_map(MESH, "W", 2))


def test_dimensions():
    assert [pn_dim(N) for N in (1, 2, 3, 4)] == [3, 6, 10, 15]
    assert [bubble_dim(N) for N in (1, 2, 3, 5)] == [0, 0, 1, 6]


@pytest.mark.parametrize("N", [1, 2, 3, 4, 7])
def test_pn_element_reproduces_boundary_values(N):
    el = pn_element(N)
    nb = len(el.boundary)
    assert nb == 3 * N
    assert np.allclose(el.phi[el.boundary, :nb], np.eye(nb), atol=1e-12)
    assert np.allclose(el.phi[el.boundary, nb:], 0.0, atol=1e-12)


@pytest.mark.parametrize("N", [2, 4, 6])
def test_pn_stiffness_two_routes(N):
    """Direct Dubiner gradients vs P_N embedded in V_h and the V_h stiffness."""
    el = pn_element(N)
    J = np.array([[1.1, 0.3], [0.2, 0.9]])
    S1 = pn_reference_stiffness(el, J)
    S2 = el.phi.T @ element_matrix(build_ref_space("V", N), "stiffness", J) @ el.phi
    assert np.abs(S1 - S2).max() < 1e-11 * np.abs(S1).max()


@pytest.mark.parametrize("N", [1, 2, 3, 5])
def test_fictitious_transfer_structure(N):
    ft = fictitious_transfer(MESH, N)
    n_p, n_v = ft.R.shape
    assert n_v == build_dof_map(MESH, "V", N).total_dofs
    assert n_p == MESH.nv + (N - 1) * MESH.ne + MESH.nt * bubble_dim(N)
    assert ft.block_size == bubble_dim(N)
    # R restricted to embedded P_N functions is the identity
    I = (ft.R @ ft.E).toarray()
    assert np.abs(I - np.eye(n_p)).max() < 1e-11
    # embedding is energy-preserving
    G = (ft.E.T @ ft.A_hat @ ft.E - ft.A).toarray()
    assert np.abs(G).max() < 1e-10 * abs(ft.A).max()


def test_fictitious_block_sizes():
    assert fictitious_transfer(MESH, 2).block_size == 0
    assert fictitious_transfer(MESH, 5).block_size == 6


def test_fictitious_preconditioner_symmetric_and_bounded():
    N = 4
    ft = fictitious_transfer(MESH, N)
    A, A_hat, R = dirichlet_system(ft)
    B = fictitious_preconditioner(ft)
    n = A.shape[0]
    Bd = np.column_stack([B(e) for e in np.eye(n)])
    assert np.abs(Bd - Bd.T).max() < 1e-11 * np.abs(Bd).max()
    lam = np.sort(np.linalg.eigvals(Bd @ A.toarray()).real)
    free_v = np.setdiff1d(np.arange(R.shape[1]), ft.v_boundary)
    free_p = np.setdiff1d(np.arange(n), ft.p_boundary)
    Rf = R[free_p][:, free_v].toarray()
    Af = A.toarray()[np.ix_(free_p, free_p)]
    Ah = A_hat.toarray()[np.ix_(free_v, free_v)]
    c_R = scipy.linalg.eigvalsh(Rf.T @ Af @ Rf, Ah)[-1]
    assert lam[0] >= 1 - 1e-9
    assert lam[-1] <= c_R * (1 + 1e-9)
    res = pcg(A, np.ones(n), B, rtol=1e-10)
    assert res.converged and res.iterations <= 15
