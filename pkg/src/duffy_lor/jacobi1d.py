"""Jacobi polynomials, generalized Jacobi polynomials and Jacobi quadrature.

All polynomials live on [-1, 1] and are normalized by
``P_n^{(a,b)}(1) = binom(n + a, n)``.  Quadrature nodes are found by Newton
iteration with deflation; weights come from a moment solve against exact
Jacobi moments, so every (a, b) pair is handled by the same code path.
"""

from dataclasses import dataclass, field
from fractions import Fraction
import functools
import math

import numpy as np

NEWTON_TOL = 1e-15
NEWTON_MAXIT = 100


class QuadratureError(RuntimeError):
    """Raised when node finding fails (no convergence or repeated roots)."""


@dataclass(frozen=True)
class JacobiWeight:
    """Weight ``(1 - x)**alpha * (1 + x)**beta`` on [-1, 1]."""

    alpha: float = 0
    beta: float = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (1.0 - x) ** self.alpha * (1.0 + x) ** self.beta

    @property
    def classical(self):
        return self.alpha > -1 and self.beta > -1

    def total_mass(self):
        """Integral of the weight over [-1, 1]."""
        _require_classical(self)
        a, b = self.alpha, self.beta
        return math.exp((a + b + 1) * math.log(2.0) + math.lgamma(a + 1)
                        + math.lgamma(b + 1) - math.lgamma(a + b + 2))


def _as_weight(w):
    if isinstance(w, JacobiWeight):
        return w
    a, b = w
    return JacobiWeight(a, b)


def _require_classical(w):
    if not (w.alpha > -1 and w.beta > -1):
        raise ValueError(
            f"classical Jacobi polynomials need alpha, beta > -1, got "
            f"({w.alpha}, {w.beta}); use gen_jacobi_eval")


@dataclass(frozen=True)
class QuadRule1D:
    weight: JacobiWeight
    npoints: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    kind: str = "gauss"

    def integrate(self, values):
        """Weighted sum over the last axis of ``values``."""
        return np.asarray(values) @ self.weights

    def mapped(self, a, b):
        """Nodes and plain (unweighted) scaled weights on [a, b]."""
        h = 0.5 * (b - a)
        return a + h * (self.nodes + 1.0), h * self.weights


# ---------------------------------------------------------------------------
# classical polynomials

def jacobi_table(nmax, w, x):
    """Values of P_0 .. P_nmax at ``x``; shape ``(nmax + 1,) + x.shape``."""
    w = _as_weight(w)
    _require_classical(w)
    a, b = float(w.alpha), float(w.beta)
    x = np.asarray(x, dtype=float)
    P = np.empty((nmax + 1,) + x.shape)
    P[0] = 1.0
    if nmax == 0:
        return P
    P[1] = 0.5 * (a - b) + 0.5 * (a + b + 2.0) * x
    for k in range(2, nmax + 1):
        s = 2.0 * k + a + b
        a1 = 2.0 * k * (k + a + b) * (s - 2.0)
        a2 = (s - 1.0) * (a * a - b * b)
        a3 = (s - 2.0) * (s - 1.0) * s
        a4 = 2.0 * (k + a - 1.0) * (k + b - 1.0) * s
        P[k] = ((a2 + a3 * x) * P[k - 1] - a4 * P[k - 2]) / a1
    return P


def jacobi_eval(n, w, x, deriv_order=0):
    """P_n^{(alpha,beta)}(x) or its first derivative."""
    w = _as_weight(w)
    _require_classical(w)
    if n < 0:
        raise ValueError("degree must be non-negative")
    x = np.asarray(x, dtype=float)
    if deriv_order == 0:
        return jacobi_table(n, w, x)[n]
    if deriv_order != 1:
        raise ValueError("deriv_order must be 0 or 1")
    if n == 0:
        return np.zeros_like(x)
    shifted = JacobiWeight(w.alpha + 1, w.beta + 1)
    return 0.5 * (n + w.alpha + w.beta + 1) * jacobi_table(n - 1, shifted, x)[n - 1]


def jacobi_norm_sq(n, w):
    """Closed-form weighted norm ||P_n||^2 with respect to its own weight."""
    w = _as_weight(w)
    _require_classical(w)
    a, b = w.alpha, w.beta
    if n == 0:
        return w.total_mass()
    logv = ((a + b + 1) * math.log(2.0) + math.lgamma(n + a + 1)
            + math.lgamma(n + b + 1) - math.log(2 * n + a + b + 1)
            - math.lgamma(n + 1) - math.lgamma(n + a + b + 1))
    return math.exp(logv)


def jacobi_moments(kmax, w):
    """Exact monomial moments m_k = int x^k w(x) dx, k = 0..kmax.

    Uses the Beta-function recurrence for moments of (1+x)^j under the
    weight, then the binomial expansion of x^k = ((1+x) - 1)^k.  Returned as
    Fractions when alpha and beta are integers, otherwise floats.
    """
    w = _as_weight(w)
    _require_classical(w)
    a, b = w.alpha, w.beta
    if float(a).is_integer() and float(b).is_integer():
        a, b = int(a), int(b)
        # c_j = int (1+x)^j w = 2^{a+b+j+1} B(a+1, b+j+1)
        c = [Fraction(2 ** (a + b + 1) * math.factorial(a) * math.factorial(b),
                      math.factorial(a + b + 1))]
        for j in range(1, kmax + 1):
            c.append(c[-1] * 2 * (b + j) / (a + b + j + 1))
        return [sum(Fraction(math.comb(k, j) * (-1) ** (k - j)) * c[j]
                    for j in range(k + 1)) for k in range(kmax + 1)]
    c = [w.total_mass()]
    for j in range(1, kmax + 1):
        c.append(c[-1] * 2.0 * (b + j) / (a + b + j + 1))
    return [sum(math.comb(k, j) * (-1) ** (k - j) * c[j] for j in range(k + 1))
            for k in range(kmax + 1)]


# ---------------------------------------------------------------------------
# generalized polynomials (integer exponents)

def gen_jacobi_offset(w):
    """Index offset n0 of the generalized family and its case label."""
    w = _as_weight(w)
    a, b = w.alpha, w.beta
    if not (float(a).is_integer() and float(b).is_integer()):
        raise ValueError("generalized Jacobi polynomials need integer exponents")
    a, b = int(a), int(b)
    if a <= -1 and b <= -1:
        return -a - b, "both"
    if a <= -1:
        return -a, "alpha"
    if b <= -1:
        return -b, "beta"
    return 0, "none"


def gen_jacobi_eval(n, w, x, deriv_order=0):
    """Generalized Jacobi polynomial J_n^{(alpha,beta)} or its derivative.

    Negative integer exponents are absorbed as a polynomial prefactor
    multiplying a classical Jacobi polynomial.  The derivative uses
    ``dJ_n^{(a,b)} = C_n J_{n-1}^{(a+1,b+1)}``.
    """
    w = _as_weight(w)
    n0, case = gen_jacobi_offset(w)
    if n < n0:
        raise ValueError(f"degree {n} below offset n0={n0} for weight "
                         f"({w.alpha}, {w.beta})")
    a, b = int(w.alpha), int(w.beta)
    x = np.asarray(x, dtype=float)
    if deriv_order == 1:
        if case == "none":
            return jacobi_eval(n, w, x, 1)
        if n == n0:
            # J_{n0} is a pure prefactor; differentiate directly
            return _gen_prefactor_deriv(a, b, x)
        if case == "both":
            c = -2.0 * (n + a + b + 1)
        elif case == "alpha":
            c = -float(n)
        else:
            # mirror image of the "alpha" case under x -> -x flips the sign
            c = float(n)
        return c * gen_jacobi_eval(n - 1, (a + 1, b + 1), x)
    if deriv_order != 0:
        raise ValueError("deriv_order must be 0 or 1")
    if case == "both":
        return (1 - x) ** (-a) * (1 + x) ** (-b) * jacobi_eval(n - n0, (-a, -b), x)
    if case == "alpha":
        return (1 - x) ** (-a) * jacobi_eval(n - n0, (-a, b), x)
    if case == "beta":
        return (1 + x) ** (-b) * jacobi_eval(n - n0, (a, -b), x)
    return jacobi_eval(n, (a, b), x)


def _gen_prefactor_deriv(a, b, x):
    p, q = max(-a, 0), max(-b, 0)
    d = np.zeros_like(x)
    if p:
        d -= p * (1 - x) ** (p - 1) * (1 + x) ** q
    if q:
        d += q * (1 - x) ** p * (1 + x) ** (q - 1)
    return d


def gen_jacobi_norm_sq(n, w):
    """||J_n||^2 in the (|alpha|, |beta|) weight via the classical formula."""
    w = _as_weight(w)
    n0, _ = gen_jacobi_offset(w)
    return jacobi_norm_sq(n - n0, (abs(w.alpha), abs(w.beta)))


# ---------------------------------------------------------------------------
# quadrature

def _jacobi_scalar(n, a, b, x):
    """P_n and P_n' at a scalar x (differentiated recurrence)."""
    p0, d0 = 1.0, 0.0
    if n == 0:
        return p0, d0
    p1 = 0.5 * (a - b) + 0.5 * (a + b + 2.0) * x
    d1 = 0.5 * (a + b + 2.0)
    for k in range(2, n + 1):
        s = 2.0 * k + a + b
        a1 = 2.0 * k * (k + a + b) * (s - 2.0)
        a2 = (s - 1.0) * (a * a - b * b)
        a3 = (s - 2.0) * (s - 1.0) * s
        a4 = 2.0 * (k + a - 1.0) * (k + b - 1.0) * s
        p2 = ((a2 + a3 * x) * p1 - a4 * p0) / a1
        d2 = ((a2 + a3 * x) * d1 + a3 * p1 - a4 * d0) / a1
        p0, p1, d0, d1 = p1, p2, d1, d2
    return p1, d1


def _jacobi_roots(n, w):
    """Roots of P_n^{(a,b)} by Newton iteration with deflation."""
    a, b = float(w.alpha), float(w.beta)
    roots = np.empty(n)
    for k in range(n):
        r = -math.cos((2 * k + 1) * math.pi / (2 * n))
        if k > 0:
            r = 0.5 * (r + roots[k - 1])
        prev = roots[:k].tolist()
        for _ in range(NEWTON_MAXIT):
            p, dp = _jacobi_scalar(n, a, b, r)
            s = math.fsum(1.0 / (r - q) for q in prev)
            delta = -p / (dp - s * p)
            r += delta
            if abs(delta) <= NEWTON_TOL:
                break
        else:
            raise QuadratureError(
                f"Newton iteration for root {k} of P_{n}^({w.alpha},{w.beta}) "
                f"did not converge in {NEWTON_MAXIT} iterations")
        roots[k] = r
    # polish without deflation
    for _ in range(2):
        p = jacobi_eval(n, w, roots)
        dp = jacobi_eval(n, w, roots, 1)
        roots = roots - p / dp
    roots.sort()
    if n > 1 and np.min(np.diff(roots)) <= 0.0:
        raise QuadratureError(f"repeated roots of P_{n}^({w.alpha},{w.beta})")
    return roots


def _moment_weights(nodes, w):
    """Interpolatory weights: exact for P_0 .. P_{n-1} of the weight family."""
    n = len(nodes)
    P = jacobi_table(n - 1, w, nodes)
    scale = np.array([math.sqrt(jacobi_norm_sq(k, w)) for k in range(n)])
    V = P / scale[:, None]
    rhs = np.zeros(n)
    rhs[0] = scale[0]
    return np.linalg.solve(V, rhs)


def quad_rule(kind, npoints, w=(0, 0)):
    """Jacobi-Gauss or Jacobi-Gauss-Lobatto rule with ``npoints`` nodes."""
    w = _as_weight(w)
    _require_classical(w)
    return _quad_rule(kind, int(npoints), w)


@functools.lru_cache(maxsize=512)
def _quad_rule(kind, npoints, w):
    if kind == "gauss":
        if npoints < 1:
            raise ValueError("gauss rule needs at least one point")
        nodes = _jacobi_roots(npoints, w)
    elif kind == "lobatto":
        if npoints < 2:
            raise ValueError("lobatto rule needs at least two points")
        inner = _jacobi_roots(npoints - 2, JacobiWeight(w.alpha + 1, w.beta + 1)) \
            if npoints > 2 else np.empty(0)
        if inner.size and (inner[0] <= -1.0 or inner[-1] >= 1.0):
            raise QuadratureError("interior Lobatto node fell on an endpoint")
        nodes = np.concatenate(([-1.0], inner, [1.0]))
    else:
        raise ValueError(f"unknown rule kind {kind!r}")
    weights = _moment_weights(nodes, w)
    if np.any(weights <= 0):
        raise QuadratureError("non-positive quadrature weight")
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadRule1D(w, npoints, nodes, weights, kind)


def gauss_legendre(npoints, a=-1.0, b=1.0):
    """Plain Gauss-Legendre nodes and weights mapped to [a, b]."""
    return quad_rule("gauss", npoints).mapped(a, b)


def lobatto_aliasing_coefficient(N):
    """Exact rational factor multiplying u_{2N} in the Lobatto aliasing error."""
    if N < 1:
        raise ValueError("N must be at least 1")
    f = math.factorial
    return Fraction(2 ** (2 * N + 1) * N * f(N - 1) ** 2 * f(N + 1) ** 2,
                    (N + 1) * (2 * N + 1) * f(2 * N) ** 2)


def lobatto_aliasing_error(N, u_coeffs):
    """Predicted (quadrature - integral) for the (N+1)-point Legendre-Lobatto rule.

    ``u_coeffs`` are monomial coefficients u_0 .. u_d with d <= 2N + 1.
    """
    u = np.atleast_1d(np.asarray(u_coeffs, dtype=float))
    if len(u) > 2 * N + 2:
        if np.any(u[2 * N + 2:] != 0):
            raise ValueError(f"polynomial degree exceeds 2N+1 = {2 * N + 1}")
    if len(u) <= 2 * N:
        return 0.0
    return float(Fraction(float(u[2 * N])) * lobatto_aliasing_coefficient(N))
