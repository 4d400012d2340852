"""1D nodal and histopolation bases on Lobatto lattices, piecewise low-order
bases, weighted Gram matrices and high/low-order norm equivalence constants.
"""

from dataclasses import dataclass, field

import numpy as np

from .jacobi1d import JacobiWeight, _as_weight, jacobi_table, quad_rule
from .solver import dense_sym_geig

PIECEWISE_QUAD_POINTS = 12
REFINEMENT_TOL = 1e-10

EQUIVALENCE_KINDS = ("L2", "H1", "WEIGHTED_H1", "INV_WEIGHTED_L2", "WEIGHTED_L2",
                     "HISTOP", "WEIGHTED_HISTOP", "INV_WEIGHTED_HISTOP")


@dataclass(frozen=True)
class Lattice1D:
    """Strictly increasing lattice points including both interval endpoints."""

    points: np.ndarray = field(repr=False)
    interval: tuple = (-1.0, 1.0)
    source: JacobiWeight = JacobiWeight(0, 0)

    def __post_init__(self):
        p = np.array(self.points, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("a lattice needs at least two points")
        if np.any(np.diff(p) <= 0):
            raise ValueError("lattice points must be strictly increasing")
        a, b = self.interval
        if p[0] != a or p[-1] != b:
            raise ValueError("lattice must include both interval endpoints")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    @property
    def N(self):
        return self.points.size - 1

    @property
    def widths(self):
        return np.diff(self.points)


def lobatto_lattice(N, w=(0, 0), interval=(-1.0, 1.0)):
    """Lattice of (N+1) Jacobi-Gauss-Lobatto points mapped to ``interval``."""
    if N < 1:
        raise ValueError("N must be at least 1")
    w = _as_weight(w)
    t = np.array(quad_rule("lobatto", N + 1, w).nodes)
    a, b = map(float, interval)
    x = a + 0.5 * (b - a) * (t + 1.0)
    x[0], x[-1] = a, b
    return Lattice1D(x, (a, b), w)


@dataclass(frozen=True)
class BasisTable:
    """Basis values and first derivatives, shape ``(nbasis, npoints)``."""

    kind: str
    points: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    derivs: np.ndarray = field(repr=False)


def barycentric_weights(nodes):
    """Barycentric weights scaled to unit maximum magnitude."""
    x = np.asarray(nodes, dtype=float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    logw = -np.sum(np.log(np.abs(diff)), axis=1)
    sign = np.prod(np.sign(diff), axis=1)
    return sign * np.exp(logw - logw.max())


def differentiation_matrix(nodes):
    """``D[i, j] = L_j'(x_i)`` for the Lagrange basis on ``nodes``."""
    x = np.asarray(nodes, dtype=float)
    w = barycentric_weights(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def _lagrange_values(nodes, x):
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = barycentric_weights(nodes)
    diff = x[None, :] - nodes[:, None]
    exact = diff == 0.0
    diff[exact] = 1.0
    terms = w[:, None] / diff
    with np.errstate(divide="ignore", invalid="ignore"):
        V = terms / terms.sum(axis=0)
    hit = exact.any(axis=0)
    V[:, hit] = exact[:, hit].astype(float)
    return V


def lagrange_table(lat, eval_pts):
    """Lagrange basis on the lattice points (second barycentric form)."""
    nodes = lat.points if isinstance(lat, Lattice1D) else np.asarray(lat, dtype=float)
    x = np.atleast_1d(np.asarray(eval_pts, dtype=float))
    V = _lagrange_values(nodes, x)
    D = differentiation_matrix(nodes)
    return BasisTable("lagrange", x, V, D.T @ V)


def histop_table(lat, eval_pts):
    """Histopolation basis ``Lhat_i = sum_{k > i} L_k'`` of degree N - 1.

    The integral of ``Lhat_i`` over subinterval ``j`` is ``delta_ij``.
    """
    nodes = lat.points if isinstance(lat, Lattice1D) else np.asarray(lat, dtype=float)
    x = np.atleast_1d(np.asarray(eval_pts, dtype=float))
    V = _lagrange_values(nodes, x)
    D = differentiation_matrix(nodes)
    dV = D.T @ V
    ddV = D.T @ dV
    H = np.cumsum(dV[::-1], axis=0)[::-1][1:]
    dH = np.cumsum(ddV[::-1], axis=0)[::-1][1:]
    return BasisTable("histop", x, H, dH)


def piecewise_table(lat, eval_pts, kind):
    """Hat functions (``pw_linear``) or cell indicators (``pw_constant``)."""
    nodes = lat.points if isinstance(lat, Lattice1D) else np.asarray(lat, dtype=float)
    x = np.atleast_1d(np.asarray(eval_pts, dtype=float))
    N = nodes.size - 1
    cell = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, N - 1)
    h = np.diff(nodes)[cell]
    s = (x - nodes[cell]) / h
    cols = np.arange(x.size)
    if kind == "pw_constant":
        V = np.zeros((N, x.size))
        V[cell, cols] = 1.0
        return BasisTable(kind, x, V, np.zeros_like(V))
    if kind != "pw_linear":
        raise ValueError(f"unknown piecewise kind {kind!r}")
    V = np.zeros((N + 1, x.size))
    dV = np.zeros_like(V)
    V[cell, cols] = 1.0 - s
    V[cell + 1, cols] = s
    dV[cell, cols] = -1.0 / h
    dV[cell + 1, cols] = 1.0 / h
    return BasisTable(kind, x, V, dV)


def basis_table(kind, lat, eval_pts):
    if kind == "lagrange":
        return lagrange_table(lat, eval_pts)
    if kind == "histop":
        return histop_table(lat, eval_pts)
    return piecewise_table(lat, eval_pts, kind)


def _gram_once(kind, lat, w, use_derivatives, npoints):
    a, b = lat.interval
    if kind in ("lagrange", "histop"):
        rule = quad_rule("gauss", npoints)
        x, wts = rule.mapped(a, b)
    else:
        rule = quad_rule("gauss", npoints)
        xs, ws = [], []
        for lo, hi in zip(lat.points[:-1], lat.points[1:]):
            xc, wc = rule.mapped(lo, hi)
            xs.append(xc)
            ws.append(wc)
        x, wts = np.concatenate(xs), np.concatenate(ws)
    # the Jacobi weight is defined on [-1, 1]; map the interval onto it
    t = -1.0 + 2.0 * (x - a) / (b - a)
    wts = wts * w(t)
    tab = basis_table(kind, lat, x)
    B = tab.derivs if use_derivatives else tab.values
    G = (B * wts) @ B.T
    return 0.5 * (G + G.T)


def weighted_gram(kind, lat, w=(0, 0), use_derivatives=False, npoints=None):
    """Gram matrix of a 1D basis in the ``(alpha, beta)`` weighted inner product.

    Polynomial kinds use one Gauss-Legendre rule on the whole interval,
    piecewise kinds a rule per subinterval.  The weight exponents must be
    non-negative integers so the integrand is a polynomial.  The result is
    compared against a rule with twice as many points, and a change above
    ``REFINEMENT_TOL`` raises ValueError.
    """
    w = _as_weight(w)
    if w.alpha < 0 or w.beta < 0 or w.alpha != int(w.alpha) or w.beta != int(w.beta):
        raise ValueError("weighted_gram needs non-negative integer weight exponents")
    N = lat.N
    if npoints is None:
        if kind in ("lagrange", "histop"):
            npoints = N + 1 + int(np.ceil((w.alpha + w.beta) / 2))
        else:
            npoints = PIECEWISE_QUAD_POINTS
    G = _gram_once(kind, lat, w, use_derivatives, npoints)
    G2 = _gram_once(kind, lat, w, use_derivatives, 2 * npoints)
    if np.max(np.abs(G - G2)) > REFINEMENT_TOL * max(1.0, np.abs(G2).max()):
        raise ValueError("quadrature rule too weak for the Gram matrix integrand")
    return G


def mass_diag(N):
    """Diagonal mass weights for the ``(1 + x)``-weighted mass matrix.

    ``D_0`` is the endpoint weight of the (0,1) Lobatto rule and
    ``D_i = (1 + xi_i) rho_i`` with the (0,0) Lobatto nodes and weights.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    r00 = quad_rule("lobatto", N + 1, (0, 0))
    r01 = quad_rule("lobatto", N + 1, (0, 1))
    D = (1.0 + r00.nodes) * r00.weights
    D[0] = r01.weights[0]
    return D


def mass_matrix(N):
    """``M_ij = int L_i L_j (1 + x) dx`` on the (0,0) Lobatto lattice."""
    return weighted_gram("lagrange", lobatto_lattice(N), (0, 1))


def phi_basis_table(N, eval_pts):
    """``Phi_i = (1 + x) P_i^{(0,3)}`` for i < N and ``Phi_N = P_N^{(0,2)}``."""
    if N < 2:
        raise ValueError("N must be at least 2")
    x = np.atleast_1d(np.asarray(eval_pts, dtype=float))
    P = jacobi_table(N - 1, (0, 3), x)
    dP = np.zeros_like(P)
    if N > 1:
        dP[1:] = np.array([0.5 * (k + 4) * jacobi_table(k - 1, (1, 4), x)[k - 1]
                           for k in range(1, N)])
    vals = np.vstack([(1 + x) * P, jacobi_table(N, (0, 2), x)[N][None]])
    dPN = 0.5 * (N + 3) * jacobi_table(N - 1, (1, 3), x)[N - 1]
    ders = np.vstack([P + (1 + x) * dP, dPN[None]])
    return BasisTable("phi", x, vals, ders)


# ------------------------------------------------------ norm equivalences

def _ones_complement(n):
    Q, _ = np.linalg.qr(np.ones((n, 1)), mode="complete")
    return Q[:, 1:]


def _hat_gram(xi, weight_fn, npts=32):
    """Piecewise-linear mass matrix with a smooth weight, per-cell Gauss."""
    n = xi.size
    G = np.zeros((n, n))
    rule = quad_rule("gauss", npts)
    s = 0.5 * (rule.nodes + 1.0)
    for k in range(n - 1):
        h = xi[k + 1] - xi[k]
        xs = xi[k] + h * s
        ws = 0.5 * h * rule.weights * weight_fn(xs)
        phi = np.array([1.0 - s, s])
        G[k:k + 2, k:k + 2] += (phi * ws) @ phi.T
    return G


def _stiff_pw(xi, cell_weights):
    n = xi.size
    G = np.zeros((n, n))
    for k, c in enumerate(cell_weights):
        G[k:k + 2, k:k + 2] += c * np.array([[1.0, -1.0], [-1.0, 1.0]])
    return G


def _forms(kind, N):
    """High-order and low-order quadratic forms in the shared DOF vector."""
    xi = np.array(lobatto_lattice(N).points)
    h = np.diff(xi)
    gauss = quad_rule("gauss", N + 3)
    x, wq = gauss.nodes, gauss.weights
    wx = 1.0 - x
    # integral of (1 - x) over each cell
    cell_w = h - 0.5 * (xi[1:] ** 2 - xi[:-1] ** 2)
    if kind == "L2":
        V = lagrange_table(xi, x).values
        return (V * wq) @ V.T, _hat_gram(xi, np.ones_like), None
    if kind in ("H1", "WEIGHTED_H1"):
        dV = lagrange_table(xi, x).derivs
        if kind == "H1":
            return (dV * wq) @ dV.T, _stiff_pw(xi, 1.0 / h), "constants"
        return (dV * wq * wx) @ dV.T, _stiff_pw(xi, cell_w / h ** 2), "constants"
    if kind == "INV_WEIGHTED_L2":
        # u_N = (1 - x) sum_i f_i L~_i(x) / (1 - xi_i), f_N = 0
        q = lagrange_table(xi[:-1], x).values / (1.0 - xi[:-1])[:, None]
        GN = (q * wq * wx) @ q.T
        Gh = _hat_gram(xi[:-1], lambda t: 1.0 / (1.0 - t))
        # last cell: u_h = f_{N-1} (1 - x) / (1 - xi_{N-1}) in the (-1,0) norm
        Gh[N - 1, N - 1] += 0.5
        return GN, Gh, None
    if kind == "WEIGHTED_L2":
        V = lagrange_table(xi, x).values
        P = jacobi_table(N - 1, (0, 0), xi).T
        Q, _ = np.linalg.qr(P)
        GN = Q.T @ ((V * wq * wx) @ V.T) @ Q
        Gh = Q.T @ _hat_gram(xi, lambda t: 1.0 - t) @ Q
        return GN, Gh, None
    if kind in ("HISTOP", "WEIGHTED_HISTOP"):
        H = histop_table(xi, x).values
        if kind == "HISTOP":
            return (H * wq) @ H.T, np.diag(1.0 / h), None
        return (H * wq * wx) @ H.T, np.diag(cell_w / h ** 2), None
    if kind == "INV_WEIGHTED_HISTOP":
        # u_N = (1 - x) r(x), r of degree N - 1, with prescribed cell integrals
        cell_rule = quad_rule("gauss", N // 2 + 2)
        Mm = np.zeros((N, N))
        for k in range(N):
            xc, wc = cell_rule.mapped(xi[k], xi[k + 1])
            Mm[k] = jacobi_table(N - 1, (0, 0), xc) @ (wc * (1.0 - xc))
        R = np.linalg.inv(Mm)
        P = jacobi_table(N - 1, (0, 0), x)
        GN = R.T @ ((P * wq * wx) @ P.T) @ R
        d = np.empty(N)
        d[:-1] = np.log((1.0 - xi[:-2]) / (1.0 - xi[1:-1])) / h[:-1] ** 2
        d[-1] = 2.0 / (1.0 - xi[-2]) ** 2
        return GN, np.diag(d), None
    raise ValueError(f"unknown equivalence kind {kind!r}")


def equivalence_constants(kind, N):
    """Extreme generalized eigenvalues of the (high-order, low-order) norm pair."""
    if N < 1:
        raise ValueError("N must be at least 1")
    GN, Gh, deflate = _forms(kind, N)
    if deflate == "constants":
        Q = _ones_complement(GN.shape[0])
        GN, Gh = Q.T @ GN @ Q, Q.T @ Gh @ Q
    lam = dense_sym_geig(0.5 * (GN + GN.T), 0.5 * (Gh + Gh.T))
    return float(lam[0]), float(lam[-1])


def phi_discrete_identities(N):
    """Residuals of the closed-form discrete inner products of the Phi basis.

    Returns a dict ``name -> (computed, expected)`` for the discrete inner
    product weighted by ``mass_diag(N)`` at the (0,0) Lobatto nodes.  The
    ``orthogonal`` entry reports the largest ``|<Phi_i, Phi_j>|`` over
    ``i != j`` with ``i + j <= 2N - 4``.
    """
    if N < 3:
        raise ValueError("N must be at least 3")
    x = quad_rule("lobatto", N + 1, (0, 0)).nodes
    P = phi_basis_table(N, x).values
    G = (P * mass_diag(N)) @ P.T
    r = quad_rule("gauss", N + 3, (0, 1))
    cont = r.integrate(phi_basis_table(N, r.nodes).values[N - 1] ** 2)
    off = [abs(G[i, j]) for i in range(N + 1) for j in range(N + 1) if i != j and i + j <= 2 * N - 4]
    return {
        "pair_N-2_N-1": (G[N - 2, N - 1], 8.0 * (N - 1) / ((N + 1) * (N + 2))),
        "pair_N-2_N": (G[N - 2, N], 8.0 * (N - 1) / (N * (N + 2))),
        "pair_N-1_N": (G[N - 1, N], -8.0 * (N * N - 5 * N - 5) / ((N + 1) * (N + 2) ** 2)),
        "norm_gap_N-1": (G[N - 1, N - 1] - cont, 72.0 * N / ((N + 1) * (N + 2) ** 2)),
        "norm_gap_N": (G[N, N] - 2.0, 2.0 * (N ** 3 - 2 * N ** 2 + 16 * N + 12) / (N * (N + 2) ** 2)),
        "orthogonal": (max(off, default=0.0), 0.0),
    }
