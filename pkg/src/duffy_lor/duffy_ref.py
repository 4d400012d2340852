"""Reference triangle spaces V, W, Z built on the unit square through the
collapsing map ``phi(x, y) = (x (1 - y), y)``.

Every basis function is stored by its pulled-back representative on the
square as a ``Poly2D`` (one component for V and Z, two for W).  The
triangle fields are recovered as

* V: ``v~ = v``,
* W: ``w~ = (w1 / (1 - y), w2 + x w1 / (1 - y))`` (covariant),
* Z: ``z~ = z / (1 - y)`` (2-form),

and every quotient by ``1 - y`` is formed exactly, so all stored tables are
polynomials.
"""

from dataclasses import dataclass, field

import numpy as np

from ._poly2d import (
    Poly2D, deriv1d, eval1d, interp_coeffs, lagrange_coeffs, mul_one_minus, stack_grid,
)
from .interp1d import Lattice1D, lobatto_lattice
from .jacobi1d import quad_rule

KINDS = ("V", "W", "Z")


class DuffyMap:
    """The collapsing map of the unit square onto the unit right triangle."""

    @staticmethod
    def forward(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return x * (1.0 - y), y

    @staticmethod
    def inverse(xt, yt):
        xt, yt = np.asarray(xt, dtype=float), np.asarray(yt, dtype=float)
        if np.any(yt >= 1.0):
            raise ValueError("inverse map is undefined at the collapsed vertex y = 1")
        return xt / (1.0 - yt), yt

    @staticmethod
    def jacobian(x, y):
        return np.array([[1.0 - y, -x], [0.0, 1.0]])

    @staticmethod
    def inverse_jacobian(x, y):
        if y >= 1.0:
            raise ValueError("inverse map is undefined at the collapsed vertex y = 1")
        return np.array([[1.0 / (1.0 - y), x / (1.0 - y)], [0.0, 1.0]])

    @staticmethod
    def det(x, y):
        return 1.0 - np.asarray(y, dtype=float)


duffy_forward = DuffyMap.forward
duffy_inverse = DuffyMap.inverse


def unit_lattice(N, w=(0, 0)):
    """Jacobi-Gauss-Lobatto lattice on [0, 1]."""
    return lobatto_lattice(N, w, (0.0, 1.0))


# ------------------------------------------------------------- 1D factors

@dataclass(frozen=True)
class _Factors1D:
    """Shifted-Legendre coefficients of the 1D building blocks on a lattice."""

    L: list
    dL: list
    H: list          # histopolation basis Lhat_i, i < N


def _factors(lat):
    C = lagrange_coeffs(lat.points)
    L = [C[:, i].copy() for i in range(lat.N + 1)]
    dL = [deriv1d(c) for c in L]
    H = []
    acc = np.zeros(1)
    for k in range(lat.N, 0, -1):
        acc = _add(acc, dL[k])
        H.append(acc.copy())
    return _Factors1D(L, dL, H[::-1])


def _add(a, b):
    n = max(len(a), len(b))
    out = np.zeros(n)
    out[:len(a)] += a
    out[:len(b)] += b
    return out


# ------------------------------------------------------------- ref space

@dataclass(frozen=True, eq=False)
class RefSpace:
    """Dual basis of one of the spaces V, W, Z on the reference triangle.

    ``basis[k]`` is a tuple of ``Poly2D`` components (the square
    representative).  ``entity_dofs`` maps lattice entities to local DOF
    indices: ``("v", i, j)`` and ``("apex",)`` for V, ``("h", i, j)`` and
    ``("e", i, j)`` for horizontal and vertical edges of W, ``("c", i, j)``
    for cells of Z.  ``derived[k]`` holds the exact quotients used by the
    evaluation tables.
    """

    kind: str
    N: int
    lattice_x: Lattice1D = field(repr=False)
    lattice_y: Lattice1D = field(repr=False)
    basis: list = field(repr=False)
    entity_dofs: dict = field(repr=False)
    derived: list = field(repr=False)

    @property
    def dim(self):
        return len(self.basis)


def space_dim(kind, N):
    return {"V": N * N + N + 1, "W": 2 * N * N + N, "Z": N * N}[kind]


def v_index(N, i, j):
    """Local V index of lattice vertex (i, j); the whole top row is the apex."""
    return N * (N + 1) if j == N else j * (N + 1) + i


def wh_index(N, i, j):
    return j * N + i


def wv_index(N, i, j):
    return N * N + j * (N + 1) + i


def z_index(N, i, j):
    return j * N + i


def _check_lattice(lat, N):
    if not isinstance(lat, Lattice1D):
        lat = Lattice1D(np.asarray(lat, dtype=float), (0.0, 1.0))
    if lat.interval != (0.0, 1.0):
        raise ValueError("reference lattices must live on [0, 1]")
    if lat.N != N:
        raise ValueError(f"lattice has {lat.N + 1} points, expected {N + 1}")
    return lat


def build_ref_space(kind, N, lat_x=None, lat_y=None):
    """Construct the dual basis of V, W or Z of degree N on the reference triangle."""
    if kind not in KINDS:
        raise ValueError(f"unknown space kind {kind!r}")
    if N < 1:
        raise ValueError("N must be at least 1")
    lat_x = _check_lattice(unit_lattice(N) if lat_x is None else lat_x, N)
    lat_y = _check_lattice(unit_lattice(N) if lat_y is None else lat_y, N)
    fx, fy = _factors(lat_x), _factors(lat_y)
    builder = {"V": _build_v, "W": _build_w, "Z": _build_z}[kind]
    basis, entities = builder(N, lat_x, lat_y, fx, fy)
    derived = [_derive(kind, b) for b in basis]
    return RefSpace(kind, N, lat_x, lat_y, basis, entities, derived)


def _build_v(N, lat_x, lat_y, fx, fy):
    basis = [None] * space_dim("V", N)
    ent = {}
    for j in range(N):
        for i in range(N + 1):
            k = v_index(N, i, j)
            basis[k] = (Poly2D.outer(fx.L[i], fy.L[j]),)
            ent[("v", i, j)] = k
    k = v_index(N, 0, N)
    basis[k] = (Poly2D.outer([1.0], fy.L[N]),)
    ent[("apex",)] = k
    return basis, ent


def _build_w(N, lat_x, lat_y, fx, fy):
    yv = lat_y.points
    basis = [None] * space_dim("W", N)
    ent = {}
    zero = Poly2D.zero()
    for j in range(N):
        prof = mul_one_minus(fy.L[j]) / (1.0 - yv[j])
        for i in range(N):
            k = wh_index(N, i, j)
            basis[k] = (Poly2D.outer(fx.H[i], prof), zero)
            ent[("h", i, j)] = k
    for j in range(N):
        Hj = fy.H[j]
        # s2 interpolates Lhat_j / (1 - y) at the first N lattice points
        s2 = interp_coeffs(yv[:N], eval1d(Hj, yv[:N]) / (1.0 - yv[:N]))
        s2_w = mul_one_minus(mul_one_minus(s2))
        Hj_w = mul_one_minus(Hj)
        for i in range(N + 1):
            k = wv_index(N, i, j)
            w2 = Poly2D.outer(fx.L[i], Hj)
            w1 = -Poly2D.outer(fx.dL[i], Hj_w)
            s1 = np.zeros(1)
            if i >= 1:
                s1 = _add(s1, fx.H[i - 1])
            if i <= N - 1:
                s1 = _add(s1, -fx.H[i])
            w1 = w1 + Poly2D.outer(s1, s2_w)
            basis[k] = (w1, w2)
            ent[("e", i, j)] = k
    return basis, ent


def _build_z(N, lat_x, lat_y, fx, fy):
    yv = lat_y.points
    basis = [None] * space_dim("Z", N)
    ent = {}
    for j in range(N):
        vals = np.where(np.arange(N + 1) <= j, -1.0 / np.where(yv < 1.0, 1.0 - yv, 1.0), 0.0)
        f = interp_coeffs(yv, vals)
        h = mul_one_minus(f)
        z = deriv1d(h)
        for i in range(N):
            k = z_index(N, i, j)
            basis[k] = (Poly2D.outer(fx.H[i], z),)
            ent[("c", i, j)] = k
    return basis, ent


def _derive(kind, comps):
    """Exact quotient polynomials feeding the evaluation tables."""
    if kind == "V":
        (v,) = comps
        return {"g1": v.dx().div_one_minus_y(), "g2": v.dy()}
    if kind == "W":
        w1, w2 = comps
        curl = w2.dx() - w1.dy()
        return {"u1": w1.div_one_minus_y(), "w2": w2, "curl": curl.div_one_minus_y()}
    (z,) = comps
    return {"zq": z.div_one_minus_y()}


# ------------------------------------------------------------- evaluation

def evaluate(space, xt, yt, what="value"):
    """Evaluate basis fields at triangle points (away from the apex).

    ``what`` is ``value`` for all kinds, ``grad`` for V and ``curl`` for W.
    Shapes: scalars ``(dim, npts)``, vectors ``(dim, 2, npts)``.
    """
    x, y = duffy_inverse(np.atleast_1d(xt), np.atleast_1d(yt))
    out = []
    for comps, der in zip(space.basis, space.derived):
        if space.kind == "V":
            if what == "value":
                out.append(comps[0](x, y))
            elif what == "grad":
                g1 = der["g1"](x, y)
                out.append(np.array([g1, der["g2"](x, y) + x * g1]))
            else:
                raise ValueError(f"V supports value and grad, not {what!r}")
        elif space.kind == "W":
            if what == "value":
                u1 = der["u1"](x, y)
                out.append(np.array([u1, der["w2"](x, y) + x * u1]))
            elif what == "curl":
                out.append(der["curl"](x, y))
            else:
                raise ValueError(f"W supports value and curl, not {what!r}")
        else:
            if what != "value":
                raise ValueError(f"Z supports value only, not {what!r}")
            out.append(der["zq"](x, y))
    return np.array(out)


@dataclass(frozen=True)
class EvalTable2D:
    """Basis data at tensor quadrature points of the square (flattened, x outer).

    ``weight`` already contains the factor ``1 - y`` of the collapsing map,
    so an integral over the reference triangle is ``sum(weight * f)``.
    Triangle-frame quantities: V ``value``, ``grad`` (dim, 2, Q); W
    ``value`` (dim, 2, Q), ``curl``; Z ``value``.
    """

    kind: str
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    weight: np.ndarray = field(repr=False)
    value: np.ndarray = field(repr=False)
    grad: np.ndarray = field(default=None, repr=False)
    curl: np.ndarray = field(default=None, repr=False)


def default_rules(N):
    return quad_rule("gauss", N + 2), quad_rule("gauss", N + 2)


def eval_tables(space, qx=None, qy=None):
    """Tabulate triangle-frame basis data at the tensor Gauss points."""
    if qx is None or qy is None:
        qx, qy = default_rules(space.N)
    xq, wx = qx.mapped(0.0, 1.0)
    yq, wy = qy.mapped(0.0, 1.0)
    X = np.repeat(xq, yq.size)
    Y = np.tile(yq, xq.size)
    weight = np.outer(wx, wy * (1.0 - yq)).ravel()

    def grid(polys):
        return stack_grid(polys, xq, yq).reshape(len(polys), -1)

    if space.kind == "V":
        val = grid([c[0] for c in space.basis])
        g1 = grid([d["g1"] for d in space.derived])
        g2 = grid([d["g2"] for d in space.derived])
        grad = np.stack([g1, g2 + X * g1], axis=1)
        return EvalTable2D("V", X, Y, weight, val, grad=grad)
    if space.kind == "W":
        u1 = grid([d["u1"] for d in space.derived])
        w2 = grid([d["w2"] for d in space.derived])
        curl = grid([d["curl"] for d in space.derived])
        return EvalTable2D("W", X, Y, weight, np.stack([u1, w2 + X * u1], axis=1), curl=curl)
    zq = grid([d["zq"] for d in space.derived])
    return EvalTable2D("Z", X, Y, weight, zq)


# ------------------------------------------------------------- DOF functionals

def _edge_rule(N):
    return quad_rule("gauss", N + 2)


def dof_matrix(space, fields=None):
    """Apply every DOF functional to every basis function: shape (dim, dim).

    Row index is the functional, column the basis function.  ``fields``
    optionally replaces the basis by other square representatives (tuples
    of ``Poly2D`` components).  Functionals act
    on the square representatives, where they are point values, line
    integrals along lattice edges and cell integrals.
    """
    N = space.N
    xv, yv = space.lattice_x.points, space.lattice_y.points
    rule = _edge_rule(N)
    basis = space.basis if fields is None else fields
    nf = len(basis)
    D = np.zeros((space.dim, nf))
    if space.kind == "V":
        vals = stack_grid([b[0] for b in basis], xv, yv)
        for j in range(N):
            for i in range(N + 1):
                D[v_index(N, i, j)] = vals[:, i, j]
        D[v_index(N, 0, N)] = stack_grid([b[0] for b in basis], [0.5], [1.0])[:, 0, 0]
        return D
    # composite Gauss points on every lattice subinterval
    t, wt = rule.mapped(0.0, 1.0)
    xs = (xv[:-1, None] + np.diff(xv)[:, None] * t).ravel()
    ys = (yv[:-1, None] + np.diff(yv)[:, None] * t).ravel()
    wxs = (np.diff(xv)[:, None] * wt).ravel()
    wys = (np.diff(yv)[:, None] * wt).ravel()
    q = t.size
    if space.kind == "W":
        w1 = stack_grid([b[0] for b in basis], xs, yv[:N])
        w2 = stack_grid([b[1] for b in basis], xv, ys)
        h = (w1 * wxs[None, :, None]).reshape(nf, N, q, N).sum(axis=2)
        v = (w2 * wys[None, None, :]).reshape(nf, N + 1, N, q).sum(axis=3)
        for j in range(N):
            for i in range(N):
                D[wh_index(N, i, j)] = h[:, i, j]
            for i in range(N + 1):
                D[wv_index(N, i, j)] = v[:, i, j]
        return D
    z = stack_grid([b[0] for b in basis], xs, ys)
    z = z * wxs[None, :, None] * wys[None, None, :]
    c = z.reshape(nf, N, q, N, q).sum(axis=(2, 4))
    for j in range(N):
        for i in range(N):
            D[z_index(N, i, j)] = c[:, i, j]
    return D


def interpolate(space, f):
    """DOF vector of a field given on the triangle.

    V: ``f(xt, yt)`` point values; W: ``f(xt, yt) -> (f1, f2)`` with line
    integrals along the mapped lattice edges; Z: ``f(xt, yt)`` with cell
    integrals.  Gauss rules with N + 2 points per edge or cell direction.
    """
    N = space.N
    xv, yv = space.lattice_x.points, space.lattice_y.points
    rule = quad_rule("gauss", N + 2)
    out = np.zeros(space.dim)
    if space.kind == "V":
        for j in range(N):
            xt, yt = duffy_forward(xv, np.full(N + 1, yv[j]))
            out[[v_index(N, i, j) for i in range(N + 1)]] = f(xt, yt)
        out[v_index(N, 0, N)] = np.asarray(f(np.array([0.0]), np.array([1.0]))).ravel()[0]
        return out
    if space.kind == "W":
        for j in range(N):
            for i in range(N):
                xs, ws = rule.mapped(xv[i], xv[i + 1])
                f1, _ = f(xs * (1.0 - yv[j]), np.full_like(xs, yv[j]))
                out[wh_index(N, i, j)] = (1.0 - yv[j]) * (np.asarray(f1) @ ws)
            ys, ws = rule.mapped(yv[j], yv[j + 1])
            for i in range(N + 1):
                f1, f2 = f(xv[i] * (1.0 - ys), ys)
                out[wv_index(N, i, j)] = (-xv[i] * np.asarray(f1) + np.asarray(f2)) @ ws
        return out
    for j in range(N):
        ys, wy = rule.mapped(yv[j], yv[j + 1])
        for i in range(N):
            xs, wx = rule.mapped(xv[i], xv[i + 1])
            X, Y = np.meshgrid(xs, ys, indexing="ij")
            vals = np.asarray(f(X * (1.0 - Y), Y)) * (1.0 - Y)
            out[z_index(N, i, j)] = wx @ vals @ wy
    return out


def divisibility_residuals(space):
    """Largest quotient value at y = 1 demanded by the conformity conditions.

    V: ``dv/dx / (1 - y)``; W: ``(w1 + (1 - y) dw2/dx) / (1 - y)^2``; Z:
    ``z / (1 - y)``.  Each quotient must exist as a polynomial; the division
    raises otherwise.  Returns the maximum magnitude of the quotients on a
    sample of the top edge, a finite number for every conforming basis.
    """
    xs = np.linspace(0.0, 1.0, 11)
    worst = 0.0
    for comps in space.basis:
        if space.kind == "V":
            q = comps[0].dx().div_one_minus_y()
        elif space.kind == "W":
            w1, w2 = comps
            q = (w1 + w2.dx().mul_one_minus_y()).div_one_minus_y().div_one_minus_y()
        else:
            q = comps[0].div_one_minus_y()
        worst = max(worst, float(np.abs(q.grid(xs, [1.0])).max()))
    return worst
