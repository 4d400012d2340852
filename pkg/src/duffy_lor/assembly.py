"""Element, global and low-order-refined matrices, plus matrix-free V operators.

Forms: ``stiffness`` (gradient form on V, curl form on W), ``mass`` (all
kinds) and ``mass+stiffness`` (V only, the sum of both).  Element matrices
for an affine map with Jacobian ``J`` are linear combinations of a few
reference integrals: with ``K = J^-1 J^-T``,

* V stiffness ``|det J| sum_ab K_ab S_ab``, ``S_ab = int d_a v d_b v``,
* V mass ``|det J| int v v``,
* W mass ``|det J| sum_ab K_ab int w_a w_b``,
* W curl form ``int curl w curl w / |det J|``,
* Z mass ``int z z / |det J|``.

Reference integrals use tensor Gauss rules with N + 2 points per direction
on the square, which integrate every (pre-divided) integrand exactly.
"""

import functools

import numpy as np
import scipy.io
import scipy.sparse as sp

from ._poly2d import div_one_minus, eval1d, lagrange_coeffs, deriv1d
from .duffy_ref import build_ref_space, eval_tables, space_dim, unit_lattice, v_index
from .jacobi1d import quad_rule

FORMS = ("stiffness", "mass", "mass+stiffness")


def _check_form(kind, form):
    ok = {"V": FORMS, "W": ("stiffness", "mass"), "Z": ("mass",)}[kind]
    if form not in ok:
        raise ValueError(f"form {form!r} is not defined on {kind}")


def _form_terms(form):
    return {"stiffness": ("stiffness",), "mass": ("mass",),
            "mass+stiffness": ("mass", "stiffness")}[form]


@functools.lru_cache(maxsize=64)
def reference_integrals(space):
    """Reference matrices: dict of (dim, dim) arrays keyed by term name."""
    tab = eval_tables(space)
    w = tab.weight
    out = {}
    if space.kind == "V":
        g = tab.grad
        for a in range(2):
            for b in range(a, 2):
                out[f"S{a}{b}"] = np.einsum("iq,q,jq->ij", g[:, a], w, g[:, b])
        out["M"] = np.einsum("iq,q,jq->ij", tab.value, w, tab.value)
    elif space.kind == "W":
        v = tab.value
        for a in range(2):
            for b in range(a, 2):
                out[f"S{a}{b}"] = np.einsum("iq,q,jq->ij", v[:, a], w, v[:, b])
        out["C"] = np.einsum("iq,q,jq->ij", tab.curl, w, tab.curl)
    else:
        out["M"] = np.einsum("iq,q,jq->ij", tab.value, w, tab.value)
    return out


def _geometry(J):
    J = np.asarray(J, dtype=float)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0):
        raise ValueError("element map must have positive Jacobian determinant")
    Jinv = np.linalg.inv(J)
    K = Jinv @ np.swapaxes(Jinv, -1, -2)
    return det, K


def _tensor_combo(R, det, K):
    # sum_ab K_ab S_ab with S_ab symmetric pairs, scaled by det
    S01 = R["S01"]
    return det * (K[0, 0] * R["S00"] + K[1, 1] * R["S11"] + K[0, 1] * (S01 + S01.T))


def element_matrix(space, form, elem_map=None):
    """Element matrix for the affine map with Jacobian ``elem_map`` (2x2, default identity)."""
    _check_form(space.kind, form)
    J = np.eye(2) if elem_map is None else np.asarray(elem_map, dtype=float)
    det, K = _geometry(J)
    R = reference_integrals(space)
    out = np.zeros((space.dim, space.dim))
    for term in _form_terms(form):
        if space.kind == "V":
            out += _tensor_combo(R, det, K) if term == "stiffness" else det * R["M"]
        elif space.kind == "W":
            out += R["C"] / det if term == "stiffness" else _tensor_combo(R, det, K)
        else:
            out += R["M"] / det
    return 0.5 * (out + out.T)


def _element_matrices(mesh, space, form):
    _, J = mesh.element_maps()
    det, K = _geometry(J)
    R = reference_integrals(space)
    mats = np.zeros((mesh.nt, space.dim, space.dim))
    for term in _form_terms(form):
        scalar = (space.kind == "V" and term == "mass") or (space.kind == "W" and term == "stiffness") \
            or space.kind == "Z"
        if scalar:
            key = "C" if space.kind == "W" else "M"
            scale = det if space.kind == "V" else 1.0 / det
            mats += scale[:, None, None] * R[key][None]
        else:
            S01 = R["S01"]
            mats += det[:, None, None] * (K[:, 0, 0, None, None] * R["S00"]
                                          + K[:, 1, 1, None, None] * R["S11"]
                                          + K[:, 0, 1, None, None] * (S01 + S01.T))
    return mats


def _scatter(dofs, signs, mats, n):
    local = mats * signs[:, :, None] * signs[:, None, :]
    nl = dofs.shape[1]
    rows = np.repeat(dofs, nl, axis=1).ravel()
    cols = np.tile(dofs, (1, nl)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sort_indices()
    return A


def apply_dirichlet(A, bdofs):
    """Replace the rows and columns of ``bdofs`` by the identity (keeps symmetry)."""
    A = sp.csr_matrix(A, copy=True)
    keep = np.ones(A.shape[0])
    keep[np.asarray(bdofs, dtype=np.int64)] = 0.0
    D = sp.diags(keep)
    B = (D @ A @ D).tocsr()
    B = B + sp.diags(1.0 - keep)
    B = B.tocsr()
    B.sort_indices()
    return B


def assemble_global(mesh, dofmap, space, form, dirichlet=False):
    """Global sparse matrix by scatter-add over elements in index order."""
    if dofmap.kind != space.kind or dofmap.N != space.N:
        raise ValueError("DOF map does not match the space kind and degree")
    if dofmap.cell_dofs.shape != (mesh.nt, space.dim):
        raise ValueError("DOF map does not match the mesh")
    _check_form(space.kind, form)
    A = _scatter(dofmap.cell_dofs, dofmap.cell_signs, _element_matrices(mesh, space, form),
                 dofmap.total_dofs)
    return apply_dirichlet(A, dofmap.boundary_dofs) if dirichlet else A


def global_incidence(mesh, N, kind, lat=None):
    """Global gradient (W x V) or curl (Z x W) incidence matrix."""
    from .lattice2d import build_lattice, incidence
    from .mesh import build_dof_map

    lat = unit_lattice(N) if lat is None else lat
    loc = incidence(build_lattice(N, lat, lat), kind).toarray().astype(float)
    src, dst = ("V", "W") if kind == "grad" else ("W", "Z")
    ms, md = build_dof_map(mesh, src, N, lat, lat), build_dof_map(mesh, dst, N, lat, lat)
    rows, cols, vals = [], [], []
    for t in range(mesh.nt):
        r, c = np.nonzero(loc)
        rows.append(md.cell_dofs[t, r])
        cols.append(ms.cell_dofs[t, c])
        vals.append(loc[r, c] * md.cell_signs[t, r] * ms.cell_signs[t, c])
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    # shared entries are repeated identically; keep one copy
    key = np.unique(np.column_stack([rows, cols]), axis=0, return_index=True)[1]
    return sp.csr_matrix((vals[key], (rows[key], cols[key])), shape=(md.total_dofs, ms.total_dofs))


def export_matrix_market(path, A):
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), symmetry="symmetric")


# ------------------------------------------------------------- LOR

_G2 = (np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)]), np.array([0.5, 0.5]))


def _quad_data(P):
    """Bilinear-map data on 2x2 Gauss points for quads P (nq, 4, 2)."""
    s, ws = _G2
    xi, eta = np.repeat(s, 2), np.tile(s, 2)
    w = np.repeat(ws, 2) * np.tile(ws, 2)
    N = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=1)
    dN = np.stack([np.stack([-(1 - eta), 1 - eta, eta, -eta], axis=1),
                   np.stack([-(1 - xi), -xi, xi, 1 - xi], axis=1)], axis=1)   # (g, 2, 4)
    J = np.einsum("gbk,qka->qgab", dN, P)                                     # dx_a / dxi_b
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0):
        raise ValueError("degenerate LOR quadrilateral")
    Jinv = np.linalg.inv(J)
    return xi, eta, w, N, dN, J, det, Jinv


def _lor_quad_matrices(P, kind, term):
    xi, eta, w, Nv, dN, J, det, Jinv = _quad_data(P)
    if kind == "V":
        if term == "mass":
            return np.einsum("g,qg,gi,gj->qij", w, det, Nv, Nv)
        grad = np.einsum("qgba,gbi->qgai", Jinv, dN)                       # J^-T grad
        return np.einsum("g,qg,qgai,qgaj->qij", w, det, grad, grad)
    if kind == "W":
        if term == "stiffness":
            c = np.array([1.0, 1.0, -1.0, -1.0])
            return np.einsum("g,qg->q", w, 1.0 / det)[:, None, None] * np.outer(c, c)[None]
        z = np.zeros_like(xi)
        ref = np.stack([np.stack([1 - eta, z], 1), np.stack([z, xi], 1),
                        np.stack([eta, z], 1), np.stack([z, 1 - xi], 1)], axis=1)   # (g, 4, 2)
        phys = np.einsum("qgba,gib->qgia", Jinv, ref)
        return np.einsum("g,qg,qgia,qgja->qij", w, det, phys, phys)
    return np.einsum("g,qg->q", w, 1.0 / det)[:, None, None]


def _lor_tri_matrices(P, kind, term):
    d1, d2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    if np.any(area <= 0):
        raise ValueError("degenerate LOR triangle")
    # gradients of barycentric coordinates: rows of the inverse of [d1 d2]
    J = np.stack([d1, d2], axis=2)
    Jinv = np.linalg.inv(J)
    g = np.stack([-Jinv[:, 0] - Jinv[:, 1], Jinv[:, 0], Jinv[:, 1]], axis=1)   # (t, 3, 2)
    if kind == "V":
        if term == "mass":
            return area[:, None, None] * (np.ones((3, 3)) + np.eye(3))[None] / 12.0
        return area[:, None, None] * np.einsum("tia,tja->tij", g, g)
    if kind == "W":
        if term == "stiffness":
            c = np.array([1.0, 1.0, -1.0])
            return (1.0 / area)[:, None, None] * np.outer(c, c)[None]
        # Whitney forms on edges (0,1), (1,2), (0,2) at edge midpoints (exact for quadratics)
        pairs = ((0, 1), (1, 2), (0, 2))
        mids = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
        W = np.zeros((len(P), 3, 3, 2))                                        # (t, point, edge, comp)
        for p, lam in enumerate(mids):
            for e, (a, b) in enumerate(pairs):
                W[:, p, e] = lam[a] * g[:, b] - lam[b] * g[:, a]
        return (area / 3.0)[:, None, None] * np.einsum("tpia,tpja->tij", W, W)
    return (1.0 / area)[:, None, None]


def assemble_lor(lor, kind, form, dirichlet=False):
    """Lowest-order matrix on the LOR submesh with the high-order DOF numbering."""
    _check_form(kind, form)
    dm = lor.dofmaps[kind]
    blocks = []
    for P, v, w, ws, z, fn in ((lor.quad_verts, lor.quad_v, lor.quad_w, lor.quad_ws, lor.quad_z,
                                _lor_quad_matrices),
                               (lor.tri_verts, lor.tri_v, lor.tri_w, lor.tri_ws, lor.tri_z,
                                _lor_tri_matrices)):
        if len(P) == 0:
            continue
        mats = sum(fn(P, kind, t) for t in _form_terms(form))
        if kind == "V":
            blocks.append((v, np.ones(v.shape), mats))
        elif kind == "W":
            blocks.append((w, ws, mats))
        else:
            blocks.append((z[:, None], np.ones((len(z), 1)), mats))
    rows, cols, vals = [], [], []
    for dofs, signs, mats in blocks:
        local = mats * signs[:, :, None] * signs[:, None, :]
        nl = dofs.shape[1]
        rows.append(np.repeat(dofs, nl, axis=1).ravel())
        cols.append(np.tile(dofs, (1, nl)).ravel())
        vals.append(local.ravel())
    n = dm.total_dofs
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    A.sort_indices()
    return apply_dirichlet(A, dm.boundary_dofs) if dirichlet else A


# ------------------------------------------------------------- matrix-free

@functools.lru_cache(maxsize=32)
def _matfree_tables(N, lat_key, nq):
    lat = np.array(lat_key)
    rule = quad_rule("gauss", nq)
    q, wq = rule.mapped(0.0, 1.0)
    C = lagrange_coeffs(lat)
    B = np.array([eval1d(C[:, i], q) for i in range(N + 1)]).T                  # (Q, N+1)
    dB = np.array([eval1d(deriv1d(C[:, i]), q) for i in range(N + 1)]).T
    E = np.zeros_like(B)
    for j in range(N):
        E[:, j] = eval1d(div_one_minus(C[:, j]), q)
    return q, wq, B, dB, E


def matfree_apply(mesh, dofmap, space, form, x, return_flops=False):
    """``A @ x`` for a V form by sum factorization, without forming ``A``.

    ``space`` may be a ``RefSpace`` or ``None`` (then the Lobatto lattice of
    degree ``dofmap.N`` is used).  With ``return_flops`` the per-element
    multiply-add count of the tensor contractions is returned as well.
    """
    if dofmap.kind != "V":
        raise ValueError("matrix-free application is implemented for V only")
    _check_form("V", form)
    N = dofmap.N
    if space is not None:
        if space.kind != "V" or space.N != N:
            raise ValueError("space does not match the DOF map")
        if not np.allclose(space.lattice_x.points, space.lattice_y.points):
            raise ValueError("matrix-free application needs the same lattice in x and y")
        lat = space.lattice_x.points
    else:
        lat = unit_lattice(N).points
    x = np.asarray(x, dtype=float)
    if x.shape != (dofmap.total_dofs,):
        raise ValueError("vector length does not match the DOF map")
    q, wq, B, dB, E = _matfree_tables(N, tuple(np.round(lat, 17)), N + 2)
    Q = q.size
    terms = _form_terms(form)
    _, J = mesh.element_maps()
    det, K = _geometry(J)
    nt = mesh.nt

    # gather to tensor layout U[e, i, j]; the collapsed row j = N holds the apex value
    grid = np.array([[v_index(N, i, j) for j in range(N + 1)] for i in range(N + 1)])
    U = x[dofmap.cell_dofs][:, grid]
    W2 = np.outer(wq, wq * (1.0 - q))                                          # (Qx, Qy)
    Xq = q[:, None]
    flops = 0

    def fwd(A, Bm):
        # A (Q, N+1) along x, Bm (Q, N+1) along y
        T = np.einsum("eij,rj->eir", U, Bm)
        return np.einsum("qi,eir->eqr", A, T)

    def bwd(F, A, Bm):
        T = np.einsum("eqr,qi->eir", F, A)
        return np.einsum("eir,rj->eij", T, Bm)

    contraction = (N + 1) * (N + 1) * Q + Q * (N + 1) * Q
    R = np.zeros_like(U)
    if "mass" in terms:
        val = fwd(B, B)
        R += bwd(det[:, None, None] * W2 * val, B, B)
        flops += 2 * contraction
    if "stiffness" in terms:
        g1 = fwd(dB, E)
        g2 = fwd(B, dB)
        t1, t2 = g1, g2 + Xq * g1
        wd = det[:, None, None] * W2
        f1 = wd * (K[:, 0, 0, None, None] * t1 + K[:, 0, 1, None, None] * t2)
        f2 = wd * (K[:, 1, 0, None, None] * t1 + K[:, 1, 1, None, None] * t2)
        R += bwd(f1 + Xq * f2, dB, E) + bwd(f2, B, dB)
        flops += 4 * contraction
    # scatter back: the apex collects the whole collapsed row
    Y = np.zeros((nt, space_dim("V", N)))
    Y[:, grid[:, :N].ravel()] = R[:, :, :N].reshape(nt, -1)
    Y[:, v_index(N, 0, N)] = R[:, :, N].sum(axis=1)
    y = np.bincount(dofmap.cell_dofs.ravel(), weights=Y.ravel(), minlength=dofmap.total_dofs)
    return (y, flops) if return_flops else y


def matfree_flops(N, form="stiffness"):
    """Per-element multiply-add count of :func:`matfree_apply`."""
    Q = N + 2
    contraction = (N + 1) * (N + 1) * Q + Q * (N + 1) * Q
    terms = _form_terms(form)
    return contraction * (2 * ("mass" in terms) + 4 * ("stiffness" in terms))


def ref_space(kind, N):
    """Cached reference space on the default Lobatto lattice."""
    return _ref_space_cached(kind, N)


@functools.lru_cache(maxsize=32)
def _ref_space_cached(kind, N):
    return build_ref_space(kind, N)


class MatfreeOperator:
    """Matrix-free V operator, optionally with Dirichlet rows and columns eliminated."""

    def __init__(self, mesh, dofmap, space, form, dirichlet=False):
        self.mesh, self.dofmap, self.space, self.form = mesh, dofmap, space, form
        n = dofmap.total_dofs
        self.shape = (n, n)
        self.dtype = np.dtype(float)
        self.mask = np.ones(n)
        if dirichlet:
            self.mask[dofmap.boundary_dofs] = 0.0

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        y = matfree_apply(self.mesh, self.dofmap, self.space, self.form, self.mask * x)
        return self.mask * y + (1.0 - self.mask) * x

    __matmul__ = matvec = __call__ = apply
