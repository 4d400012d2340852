"""Preconditioners: low-order-refined, diagonal mass, and fictitious space.

The fictitious-space construction preconditions the standard P_N Lagrange
space through the Duffy space V_h.  Both spaces share the vertex and edge
DOFs (point values at the edge Lobatto nodes); P_N adds (N-1)(N-2)/2
interior bubbles per element.  The transfer R maps a V_h function to the
P_N function with the same boundary values whose bubble part solves the
local problem ``a(R v, w) = a(v, w)`` for every P_N bubble ``w``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._poly2d import Poly2D, interp_coeffs, stack_grid
from .assembly import _geometry, _scatter, apply_dirichlet, element_matrix
from .duffy_ref import build_ref_space, unit_lattice, v_index
from .interp1d import lagrange_table, lobatto_lattice
from .jacobi1d import gauss_legendre, jacobi_eval, quad_rule
from .solver import sparse_cholesky


class Preconditioner:
    """Symmetric positive operator ``z = M r`` given by a callable."""

    def __init__(self, apply, n, name="", symmetric=True, positive=True):
        self._apply = apply
        self.n = n
        self.name = name
        self.symmetric = symmetric
        self.positive = positive

    def apply(self, r):
        return self._apply(np.asarray(r, dtype=float))

    __call__ = apply

    @property
    def shape(self):
        return (self.n, self.n)

    def matvec(self, r):
        return self.apply(r)


def identity_preconditioner(n):
    return Preconditioner(lambda r: r.copy(), n, "identity")


def lor_preconditioner(A0):
    """Exact sparse Cholesky solve with the LOR matrix (identity DOF transfer)."""
    factor = sparse_cholesky(sp.csr_matrix(A0))
    return Preconditioner(factor.solve, A0.shape[0], "lor")


# ------------------------------------------------------------- diagonal mass

def _unit_lobatto(N, w):
    return lobatto_lattice(N, w, (0.0, 1.0))


def reference_mass_matrix(N, wx=(0, 0), wy=(0, 0)):
    """V mass matrix on the reference triangle from 1D factors.

    Uses the tensor structure of the square representatives: ``L_i(x) L_j(y)``
    for j < N and ``L_N(y)`` for the apex, with the (1 - y) weight in y.
    """
    lx, ly = _unit_lobatto(N, wx), _unit_lobatto(N, wy)
    q, w = gauss_legendre(N + 2, 0.0, 1.0)
    Lx, Ly = lagrange_table(lx, q).values, lagrange_table(ly, q).values
    Mx, sx = (Lx * w) @ Lx.T, Lx @ w
    My = (Ly * (w * (1.0 - q))) @ Ly.T
    n0 = N * (N + 1)
    M = np.zeros((n0 + 1, n0 + 1))
    M[:n0, :n0] = np.kron(My[:N, :N], Mx)
    M[:n0, n0] = M[n0, :n0] = np.kron(My[:N, N], sx)
    M[n0, n0] = My[N, N]
    return M


def reference_mass_diag(N, wx=(0, 0), wy=(0, 0), variant="tensor"):
    """Diagonal weights for the reference V mass matrix.

    ``tensor``: products of 1D weights.  x uses the interpolatory weights of
    the x lattice; y uses ``(1 - y_j)`` times the interpolatory weight for
    j < N and, at the collapsed vertex, the endpoint weight of the (1, 0)
    Lobatto rule for the weight ``1 - y``.  ``diagonal``: the diagonal of
    the mass matrix itself.
    """
    if variant == "diagonal":
        return np.diag(reference_mass_matrix(N, wx, wy)).copy()
    if variant != "tensor":
        raise ValueError(f"unknown mass diagonal variant {variant!r}")
    lx, ly = _unit_lobatto(N, wx), _unit_lobatto(N, wy)
    q, w = gauss_legendre(N + 2, 0.0, 1.0)
    ix = lagrange_table(lx, q).values @ w
    iy = lagrange_table(ly, q).values @ w
    # weight (1 - t) on [-1, 1] maps to 4 (1 - y) dy on [0, 1]
    apex = quad_rule("lobatto", N + 1, (1, 0)).weights[-1] / 4.0
    dy = (1.0 - ly.points[:N]) * iy[:N]
    return np.concatenate([np.kron(dy, ix), [apex]])


def mass_diag_preconditioner(mesh, dofmap, wx=(0, 0), wy=(0, 0), variant="tensor"):
    """Inverse of the assembled diagonal mass weights."""
    if dofmap.kind != "V":
        raise ValueError("diagonal mass preconditioner is defined on V")
    d_ref = reference_mass_diag(dofmap.N, wx, wy, variant)
    _, J = mesh.element_maps()
    det, _ = _geometry(J)
    D = np.bincount(dofmap.cell_dofs.ravel(), weights=(det[:, None] * d_ref[None]).ravel(),
                    minlength=dofmap.total_dofs)
    if np.any(D <= 0):
        raise ValueError("diagonal mass weights must be positive")
    inv = 1.0 / D
    pc = Preconditioner(lambda r: inv * r, dofmap.total_dofs, "mass-diag")
    pc.diagonal = D
    return pc


# ------------------------------------------------------------- P_N space

def dubiner_basis(N):
    """Orthogonal triangle polynomials ``P_p(2x-1) (1-y)^p P_q^(2p+1,0)(2y-1)``, p + q <= N."""
    nodes, _ = gauss_legendre(N + 1, 0.0, 1.0)
    out = []
    for p in range(N + 1):
        cx = np.zeros(p + 1)
        cx[p] = 1.0
        for q in range(N - p + 1):
            vals = (1.0 - nodes) ** p * jacobi_eval(q, (2 * p + 1, 0), 2.0 * nodes - 1.0)
            cy = interp_coeffs(nodes, vals)
            out.append(Poly2D.outer(cx, cy))
    return out


def pn_dim(N):
    return (N + 1) * (N + 2) // 2


def bubble_dim(N):
    return (N - 1) * (N - 2) // 2


def _boundary_local(N):
    """Local V indices on the element boundary, in local index order."""
    idx = [v_index(N, i, 0) for i in range(N + 1)]
    for j in range(1, N):
        idx += [v_index(N, 0, j), v_index(N, N, j)]
    idx.append(v_index(N, 0, N))
    return np.array(sorted(idx))


@dataclass(frozen=True, eq=False)
class PNElement:
    """P_N basis on the reference triangle, expressed in V_h DOFs.

    ``phi`` (dim V, dim P_N): V DOF values of each P_N basis function;
    boundary functions first (one per boundary V node, in ``boundary``
    order), then bubbles.  ``coeffs`` holds Dubiner coefficients.
    """

    N: int
    boundary: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    coeffs: np.ndarray = field(repr=False)
    polys: list = field(repr=False)


def pn_element(N, lat=None):
    lat = unit_lattice(N) if lat is None else lat
    pts = lat.points
    polys = dubiner_basis(N)
    vals = stack_grid(polys, pts, pts)                      # (nP, i, j)
    apex_vals = stack_grid(polys, [0.5], [1.0])[:, 0, 0]
    nv = N * (N + 1) + 1
    E = np.zeros((nv, len(polys)))
    for j in range(N):
        for i in range(N + 1):
            E[v_index(N, i, j)] = vals[:, i, j]
    E[v_index(N, 0, N)] = apex_vals
    bnd = _boundary_local(N)
    Bv = E[bnd]
    Cb = np.linalg.pinv(Bv)
    if N >= 3:
        _, s, Vt = np.linalg.svd(Bv)
        Cn = Vt[len(bnd):].T
    else:
        Cn = np.zeros((len(polys), 0))
    C = np.hstack([Cb, Cn])
    return PNElement(N, bnd, E @ C, C, polys)


def pn_reference_stiffness(elem, J=None):
    """P_N stiffness integrated directly from the Dubiner gradients."""
    N = elem.N
    J = np.eye(2) if J is None else np.asarray(J, dtype=float)
    det, K = _geometry(J)
    rule = quad_rule("gauss", N + 2)
    xq, wx = rule.mapped(0.0, 1.0)
    X = np.repeat(xq, xq.size)
    w = np.outer(wx, wx * (1.0 - xq)).ravel()
    g1 = stack_grid([p.dx().div_one_minus_y() for p in elem.polys], xq, xq).reshape(len(elem.polys), -1)
    g2 = stack_grid([p.dy() for p in elem.polys], xq, xq).reshape(len(elem.polys), -1)
    grad = np.stack([g1, g2 + X * g1], axis=1)
    S = det * np.einsum("iaq,ab,q,jbq->ij", grad, K, w, grad)
    return elem.coeffs.T @ S @ elem.coeffs


def pn_dof_map(mesh, vmap):
    """Global P_N numbering: shared V vertex/edge DOFs, then bubbles per element."""
    N = vmap.N
    nshared = mesh.nv + (N - 1) * mesh.ne
    bnd = _boundary_local(N)
    nb = bubble_dim(N)
    dofs = np.empty((mesh.nt, len(bnd) + nb), dtype=np.int64)
    dofs[:, :len(bnd)] = vmap.cell_dofs[:, bnd]
    dofs[:, len(bnd):] = nshared + np.arange(mesh.nt)[:, None] * nb + np.arange(nb)[None, :]
    return dofs, nshared + mesh.nt * nb


@dataclass(frozen=True, eq=False)
class FictitiousTransfer:
    """Transfer ``R`` from V_h to P_N with the stiffness matrices of both spaces.

    ``R`` (n_P x n_V) is sparse; ``blocks[t]`` is the dense bubble solve of
    element t.  ``A`` is the P_N stiffness, ``A_hat`` the V_h stiffness,
    ``E`` the embedding of P_N into V_h (V DOF values of P_N functions).
    Boundary DOF lists refer to Dirichlet DOFs of each space.
    """

    N: int
    R: sp.csr_matrix = field(repr=False)
    E: sp.csr_matrix = field(repr=False)
    A: sp.csr_matrix = field(repr=False)
    A_hat: sp.csr_matrix = field(repr=False)
    blocks: list = field(repr=False)
    p_boundary: np.ndarray = field(repr=False)
    v_boundary: np.ndarray = field(repr=False)
    vmap: object = field(repr=False)

    @property
    def block_size(self):
        return bubble_dim(self.N)


def fictitious_transfer(mesh, N, form="stiffness"):
    """Build R, the P_N stiffness and the V_h stiffness on ``mesh``."""
    from .assembly import assemble_global
    from .mesh import build_dof_map

    if N < 1:
        raise ValueError("N must be at least 1")
    vmap = build_dof_map(mesh, "V", N)
    space = build_ref_space("V", N)
    elem = pn_element(N)
    pdofs, n_p = pn_dof_map(mesh, vmap)
    nbd = len(elem.boundary)
    _, Js = mesh.element_maps()
    rows, cols, vals = [], [], []
    erows, ecols, evals = [], [], []
    A_loc = np.zeros((mesh.nt,) + (elem.phi.shape[1],) * 2)
    blocks = []
    for t in range(mesh.nt):
        J = Js[t]
        A_p = pn_reference_stiffness(elem, J)
        Ahat = element_matrix(space, form, J)
        if form != "stiffness":
            A_p = elem.phi.T @ Ahat @ elem.phi
        A_loc[t] = A_p
        vd = vmap.cell_dofs[t]
        if elem.phi.shape[1] > nbd:
            Abb = A_p[nbd:, nbd:]
            rhs = elem.phi[:, nbd:].T @ Ahat
            rhs[:, elem.boundary] -= A_p[nbd:, :nbd]
            block = np.linalg.solve(Abb, rhs)
            blocks.append(block)
            r = np.repeat(pdofs[t, nbd:], len(vd))
            c = np.tile(vd, block.shape[0])
            rows.append(r)
            cols.append(c)
            vals.append(block.ravel())
        else:
            blocks.append(np.zeros((0, len(vd))))
        er, ec = np.nonzero(np.abs(elem.phi) > 0)
        erows.append(vd[er])
        ecols.append(pdofs[t, ec])
        evals.append(elem.phi[er, ec])
    n_v = vmap.total_dofs
    nshared = mesh.nv + (N - 1) * mesh.ne
    # shared vertex and edge DOFs pass through unchanged
    rows.append(np.arange(nshared))
    cols.append(np.arange(nshared))
    vals.append(np.ones(nshared))
    R = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_p, n_v)).tocsr()
    E = _embedding(erows, ecols, evals, n_v, n_p)
    A = _scatter(pdofs, np.ones(pdofs.shape), A_loc, n_p)
    A_hat = assemble_global(mesh, vmap, space, form)
    return FictitiousTransfer(N, R, E, A, A_hat, blocks, vmap.boundary_dofs[vmap.boundary_dofs < nshared],
                              vmap.boundary_dofs, vmap)


def _embedding(erows, ecols, evals, n_v, n_p):
    r, c, v = map(np.concatenate, (erows, ecols, evals))
    # shared entries are identical across elements; keep one copy
    _, keep = np.unique(np.column_stack([r, c]), axis=0, return_index=True)
    return sp.csr_matrix((v[keep], (r[keep], c[keep])), shape=(n_v, n_p))


def dirichlet_system(ft):
    """Dirichlet-eliminated P_N matrix, V_h matrix and free-DOF transfer."""
    A = apply_dirichlet(ft.A, ft.p_boundary)
    A_hat = apply_dirichlet(ft.A_hat, ft.v_boundary)
    keep_p = np.ones(ft.R.shape[0])
    keep_p[ft.p_boundary] = 0.0
    keep_v = np.ones(ft.R.shape[1])
    keep_v[ft.v_boundary] = 0.0
    R = (sp.diags(keep_p) @ ft.R @ sp.diags(keep_v)).tocsr()
    return A, A_hat, R


def fictitious_preconditioner(ft, inner=None, dirichlet=True):
    """``B = R inner R^T`` (plus identity on Dirichlet rows when eliminated).

    ``inner`` defaults to an exact sparse Cholesky solve with the V_h
    stiffness; any preconditioner of that matrix (e.g. the LOR one) may be
    passed instead.
    """
    if dirichlet:
        _, A_hat, R = dirichlet_system(ft)
    else:
        A_hat, R = ft.A_hat, ft.R
    if inner is None:
        inner = Preconditioner(sparse_cholesky(A_hat).solve, A_hat.shape[0], "exact")
    Rt = R.T.tocsr()
    bmask = np.zeros(R.shape[0])
    if dirichlet:
        bmask[ft.p_boundary] = 1.0

    def apply(r):
        return R @ inner.apply(Rt @ r) + bmask * r

    return Preconditioner(apply, R.shape[0], "fictitious")
