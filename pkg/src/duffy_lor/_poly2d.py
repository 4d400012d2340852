"""Tensor Legendre polynomials on the unit square.

A ``Poly2D`` stores coefficients ``c[a, b]`` of ``P_a(2x - 1) P_b(2y - 1)``.
Multiplication by ``x`` or ``1 - y`` acts on one coefficient axis through the
Legendre recurrence; exact division by ``1 - y`` inverts that multiplication
and checks the remainder.
"""

import functools

import numpy as np
from numpy.polynomial import legendre as leg

DIVISION_TOL = 1e-9


def _to_ref(x):
    return 2.0 * np.asarray(x, dtype=float) - 1.0


def lagrange_coeffs(nodes):
    """Columns are the shifted-Legendre coefficients of the Lagrange basis."""
    nodes = np.asarray(nodes, dtype=float)
    V = leg.legvander(_to_ref(nodes), nodes.size - 1)
    return np.linalg.inv(V)


def interp_coeffs(nodes, values):
    """Coefficients of the polynomial of degree len(nodes) - 1 through the data."""
    nodes = np.asarray(nodes, dtype=float)
    V = leg.legvander(_to_ref(nodes), nodes.size - 1)
    return np.linalg.solve(V, np.asarray(values, dtype=float))


def deriv1d(c):
    return leg.legder(c, 1, scl=2.0) if len(c) > 1 else np.zeros(1)


@functools.lru_cache(maxsize=None)
def _mulx_matrix(n):
    """Matrix of multiplication by t on series of length n (result length n + 1)."""
    M = np.zeros((n + 1, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        r = leg.legmulx(e)
        M[:r.size, k] = r
    return M


@functools.lru_cache(maxsize=None)
def _one_minus_ops(n):
    """(1 - y) multiplication matrix for length-n series and its pseudo-inverse."""
    A = 0.5 * (np.eye(n + 1, n) - _mulx_matrix(n))
    return A, np.linalg.pinv(A)


def mul_one_minus(c):
    # 1 - y = (1 - t) / 2
    c = np.asarray(c, dtype=float)
    return _one_minus_ops(c.shape[0])[0] @ c


def mul_var(c):
    # x = (1 + t) / 2
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    return 0.5 * (np.eye(n + 1, n) + _mulx_matrix(n)) @ c


def _div_rows(C, tol):
    """Divide every column of C (series along axis 0) by 1 - y."""
    n = C.shape[0]
    if n == 1:
        Q = np.zeros((1,) + C.shape[1:])
        R = C
    else:
        A, Ainv = _one_minus_ops(n - 1)
        Q = Ainv @ C
        R = C - A @ Q
    scale = max(np.abs(C).max(initial=0.0), 1e-300)
    if np.abs(R).max(initial=0.0) > tol * scale:
        raise ValueError("polynomial is not divisible by (1 - y)")
    return Q


def div_one_minus(c, tol=DIVISION_TOL):
    """Exact quotient of a 1D series by ``1 - y``; raises if not divisible."""
    return _div_rows(np.atleast_1d(np.asarray(c, dtype=float)), tol)


def eval1d(c, x):
    return leg.legval(_to_ref(x), c)


class Poly2D:
    """Polynomial on [0, 1]^2 in a tensor shifted-Legendre basis."""

    __slots__ = ("c",)

    def __init__(self, c):
        c = np.atleast_2d(np.asarray(c, dtype=float))
        self.c = c

    @classmethod
    def outer(cls, cx, cy):
        return cls(np.outer(np.atleast_1d(cx), np.atleast_1d(cy)))

    @classmethod
    def zero(cls):
        return cls(np.zeros((1, 1)))

    @property
    def degree(self):
        return self.c.shape[0] - 1, self.c.shape[1] - 1

    def _pad(self, other):
        a, b = self.c, other.c
        shape = (max(a.shape[0], b.shape[0]), max(a.shape[1], b.shape[1]))
        A = np.zeros(shape)
        B = np.zeros(shape)
        A[:a.shape[0], :a.shape[1]] = a
        B[:b.shape[0], :b.shape[1]] = b
        return A, B

    def __add__(self, other):
        A, B = self._pad(other)
        return Poly2D(A + B)

    def __sub__(self, other):
        A, B = self._pad(other)
        return Poly2D(A - B)

    def __neg__(self):
        return Poly2D(-self.c)

    def __mul__(self, s):
        return Poly2D(self.c * float(s))

    __rmul__ = __mul__

    def dx(self):
        if self.c.shape[0] == 1:
            return Poly2D(np.zeros((1, self.c.shape[1])))
        return Poly2D(leg.legder(self.c, 1, scl=2.0, axis=0))

    def dy(self):
        if self.c.shape[1] == 1:
            return Poly2D(np.zeros((self.c.shape[0], 1)))
        return Poly2D(leg.legder(self.c, 1, scl=2.0, axis=1))

    def mul_x(self):
        return Poly2D(mul_var(self.c))

    def mul_one_minus_y(self):
        return Poly2D(mul_one_minus(self.c.T).T)

    def div_one_minus_y(self, tol=DIVISION_TOL):
        return Poly2D(_div_rows(self.c.T, tol).T)

    def grid(self, x, y):
        """Values on the tensor grid ``x`` by ``y``: shape (len(x), len(y))."""
        Vx = leg.legvander(_to_ref(x), self.c.shape[0] - 1)
        Vy = leg.legvander(_to_ref(y), self.c.shape[1] - 1)
        return Vx @ self.c @ Vy.T

    def __call__(self, x, y):
        return leg.legval2d(_to_ref(x), _to_ref(y), self.c)


def stack_grid(polys, x, y):
    """Values of many polynomials on one tensor grid: shape (n, len(x), len(y))."""
    dx = max(p.c.shape[0] for p in polys)
    dy = max(p.c.shape[1] for p in polys)
    C = np.zeros((len(polys), dx, dy))
    for k, p in enumerate(polys):
        C[k, :p.c.shape[0], :p.c.shape[1]] = p.c
    Vx = leg.legvander(_to_ref(x), dx - 1)
    Vy = leg.legvander(_to_ref(y), dy - 1)
    return np.einsum("ia,kab,jb->kij", Vx, C, Vy, optimize=True)
