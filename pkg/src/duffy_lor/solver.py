"""Linear algebra kernels: PCG, sparse Cholesky, dense symmetric eigensolvers
and generalized condition number estimation.

Operators are anything accepted by ``scipy.sparse.linalg.aslinearoperator``.
Dense eigenvalues come from a cyclic Jacobi method, sparse factorizations
from an up-looking Cholesky on a minimum degree ordering.
"""

from dataclasses import dataclass, field
import heapq

import numba
import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import aslinearoperator

JACOBI_TOL = 1e-12
JACOBI_MAXSWEEPS = 60
DEFLATION_TAU = 1e-10


class NotSPDError(np.linalg.LinAlgError):
    """Raised when a Cholesky pivot is not positive."""

    def __init__(self, row):
        super().__init__(f"matrix not SPD: non-positive pivot at row {row}")
        self.row = row


# ---------------------------------------------------------------- dense eig

@numba.njit(cache=True)
def _jacobi_sweeps(a, v, want_vectors, tol, maxsweeps):
    n = a.shape[0]
    fro = np.sqrt(np.sum(a * a))
    for sweep in range(maxsweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += 2.0 * a[p, q] * a[p, q]
        if np.sqrt(off) <= tol * fro or fro == 0.0:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                if want_vectors:
                    for k in range(n):
                        vkp = v[k, p]
                        vkq = v[k, q]
                        v[k, p] = c * vkp - s * vkq
                        v[k, q] = s * vkp + c * vkq
    return -1


def dense_sym_eig(A, vectors=False, tol=JACOBI_TOL, maxsweeps=JACOBI_MAXSWEEPS):
    """Eigenvalues (ascending) of a symmetric matrix by cyclic Jacobi rotations.

    Iterates until the off-diagonal Frobenius norm is at most
    ``tol * ||A||_F``.  With ``vectors=True`` also returns the accumulated
    orthogonal rotation matrix whose columns are the eigenvectors.
    """
    a = np.array(A, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("square matrix expected")
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n) if vectors else np.zeros((1, 1))
    sweeps = _jacobi_sweeps(a, v, vectors, tol, maxsweeps)
    if sweeps < 0:
        raise np.linalg.LinAlgError("Jacobi eigensolver did not converge")
    lam = np.diag(a).copy()
    order = np.argsort(lam, kind="stable")
    if vectors:
        return lam[order], v[:, order]
    return lam[order]


@numba.njit(cache=True)
def _dense_chol(a):
    n = a.shape[0]
    for j in range(n):
        d = a[j, j]
        for k in range(j):
            d -= a[j, k] * a[j, k]
        if not d > 0.0:
            return j
        d = np.sqrt(d)
        a[j, j] = d
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= a[i, k] * a[j, k]
            a[i, j] = s / d
    for i in range(n):
        for j in range(i + 1, n):
            a[i, j] = 0.0
    return -1


def dense_cholesky(B):
    """Lower triangular L with ``B = L L^T``; raises NotSPDError."""
    a = np.array(B, dtype=float, copy=True)
    row = _dense_chol(a)
    if row >= 0:
        raise NotSPDError(row)
    return a


def dense_sym_geig(A, B, vectors=False, tol=JACOBI_TOL):
    """Generalized eigenvalues of ``A x = lam B x`` with B SPD.

    Reduces to a standard problem through ``B = L L^T`` and
    ``L^{-1} A L^{-T}``.
    """
    A = np.asarray(A, dtype=float)
    L = dense_cholesky(B)
    X = scipy.linalg.solve_triangular(L, A, lower=True)
    C = scipy.linalg.solve_triangular(L, X.T, lower=True)
    C = 0.5 * (C + C.T)
    if not vectors:
        return dense_sym_eig(C, tol=tol)
    lam, Y = dense_sym_eig(C, vectors=True, tol=tol)
    return lam, scipy.linalg.solve_triangular(L.T, Y, lower=False)


# ---------------------------------------------------------- sparse Cholesky

def min_degree_order(A):
    """Deterministic minimum degree ordering of a symmetric sparsity pattern.

    Works on the explicit elimination graph.  Ties go to the smallest index,
    and neighbours indistinguishable from the pivot are eliminated together.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    adj = []
    for i in range(n):
        nb = set(A.indices[A.indptr[i]:A.indptr[i + 1]].tolist())
        nb.discard(i)
        adj.append(nb)
    for i in range(n):
        for j in adj[i]:
            adj[j].add(i)
    heap = [(len(adj[i]), i) for i in range(n)]
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    order = []
    while heap:
        d, v = heapq.heappop(heap)
        if done[v] or d != len(adj[v]):
            continue
        nb = adj[v]
        clique = nb | {v}
        group = [v] + sorted(u for u in nb
                             if len(adj[u]) == len(nb) and adj[u] | {u} == clique)
        gset = set(group)
        rest = nb - gset
        for g in group:
            done[g] = True
            order.append(g)
            adj[g] = set()
        for u in rest:
            au = adj[u]
            au -= gset
            au |= rest
            au.discard(u)
            heapq.heappush(heap, (len(au), u))
    return np.asarray(order, dtype=np.int64)


@numba.njit(cache=True)
def _etree(n, Cp, Ci):
    parent = -np.ones(n, dtype=np.int64)
    ancestor = -np.ones(n, dtype=np.int64)
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@numba.njit(cache=True)
def _ereach(k, Cp, Ci, parent, s, w):
    n = parent.shape[0]
    top = n
    w[k] = k
    for p in range(Cp[k], Cp[k + 1]):
        i = Ci[p]
        if i > k:
            continue
        length = 0
        while w[i] != k:
            s[length] = i
            length += 1
            w[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            s[top] = s[length]
    return top


@numba.njit(cache=True)
def _chol_numeric(n, Cp, Ci, Cx, parent):
    s = np.empty(n, dtype=np.int64)
    w = -np.ones(n, dtype=np.int64)
    counts = np.ones(n, dtype=np.int64)
    for k in range(n):
        top = _ereach(k, Cp, Ci, parent, s, w)
        for t in range(top, n):
            counts[s[t]] += 1
    Lp = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        Lp[j + 1] = Lp[j] + counts[j]
    Li = np.empty(Lp[n], dtype=np.int64)
    Lx = np.empty(Lp[n], dtype=np.float64)
    c = Lp[:n].copy()
    x = np.zeros(n)
    w[:] = -1
    for k in range(n):
        top = _ereach(k, Cp, Ci, parent, s, w)
        for p in range(Cp[k], Cp[k + 1]):
            if Ci[p] <= k:
                x[Ci[p]] = Cx[p]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            i = s[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, c[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            p = c[i]
            c[i] += 1
            Li[p] = k
            Lx[p] = lki
        if not d > 0.0:
            return Lp, Li, Lx, k
        p = c[k]
        c[k] += 1
        Li[p] = k
        Lx[p] = np.sqrt(d)
    return Lp, Li, Lx, -1


@numba.njit(cache=True)
def _chol_solve(Lp, Li, Lx, x):
    n = Lp.shape[0] - 1
    for j in range(n):
        x[j] /= Lx[Lp[j]]
        xj = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj
    for j in range(n - 1, -1, -1):
        acc = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            acc -= Lx[p] * x[Li[p]]
        x[j] = acc / Lx[Lp[j]]


@dataclass(frozen=True)
class CholeskyFactor:
    """Sparse ``P A P^T = L L^T`` with L stored by columns, diagonal first."""

    n: int
    perm: np.ndarray
    Lp: np.ndarray
    Li: np.ndarray
    Lx: np.ndarray

    @property
    def nnz(self):
        return int(self.Lp[-1])

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.ndim == 2:
            return np.column_stack([self.solve(b[:, j]) for j in range(b.shape[1])])
        y = b[self.perm].copy()
        _chol_solve(self.Lp, self.Li, self.Lx, y)
        x = np.empty_like(y)
        x[self.perm] = y
        return x

    def L(self):
        """The factor as a scipy CSC matrix (in permuted ordering)."""
        return sp.csc_matrix((self.Lx, self.Li, self.Lp), shape=(self.n, self.n))


def sparse_cholesky(A, perm=None):
    """Factor a sparse SPD matrix; ordering defaults to minimum degree."""
    A = sp.csr_matrix(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("square matrix expected")
    if perm is None:
        perm = min_degree_order(A)
    perm = np.asarray(perm, dtype=np.int64)
    C = sp.triu(A[perm][:, perm], format="csc")
    C.sort_indices()
    Cp = C.indptr.astype(np.int64)
    Ci = C.indices.astype(np.int64)
    parent = _etree(n, Cp, Ci)
    Lp, Li, Lx, bad = _chol_numeric(n, Cp, Ci, C.data.astype(float), parent)
    if bad >= 0:
        raise NotSPDError(int(perm[bad]))
    return CholeskyFactor(n, perm, Lp, Li, Lx)


def solve(factor, b):
    return factor.solve(b)


# --------------------------------------------------------------------- PCG

@dataclass
class PCGResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)
    breakdown: int | None = None

    def __iter__(self):
        return iter((self.x, self.iterations))


def _as_apply(M):
    if M is None:
        return lambda r: r.copy()
    if callable(M) and not hasattr(M, "matvec") and not hasattr(M, "shape"):
        return M
    if hasattr(M, "apply"):
        return M.apply
    return aslinearoperator(M).matvec


def pcg(A, b, M=None, rtol=1e-10, maxit=1000, x0=None, callback=None):
    """Preconditioned conjugate gradients.

    Stops when ``||b - A x||_2 <= rtol ||b||_2`` (recursive residual).
    Hitting ``maxit`` is reported through ``converged=False``.  A
    non-positive curvature ``p^T A p`` stops the iteration and records the
    iteration index in ``breakdown``.
    """
    Aop = aslinearoperator(A)
    prec = _as_apply(M)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - Aop.matvec(x) if x0 is not None else b.copy()
    bnorm = np.linalg.norm(b)
    res = [float(np.linalg.norm(r))]
    target = rtol * bnorm
    if res[0] <= target:
        return PCGResult(x, 0, True, res)
    z = prec(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, maxit + 1):
        q = Aop.matvec(p)
        pq = p @ q
        if not pq > 0.0:
            return PCGResult(x, it - 1, False, res, breakdown=it)
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        res.append(float(np.linalg.norm(r)))
        if callback is not None:
            callback(x)
        if res[-1] <= target:
            return PCGResult(x, it, True, res)
        z = prec(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return PCGResult(x, maxit, False, res)


# ------------------------------------------------------ spectrum estimation

@dataclass(frozen=True)
class SpectrumEstimate:
    lambda_min: float
    lambda_max: float
    method: str
    deflation: str

    @property
    def cond(self):
        return self.lambda_max / self.lambda_min


def _dense(A):
    if sp.issparse(A):
        return A.toarray()
    if isinstance(A, np.ndarray):
        return np.asarray(A, dtype=float)
    op = aslinearoperator(A)
    return op.matmat(np.eye(op.shape[1]))


def _ones_complement(n):
    Q, _ = np.linalg.qr(np.ones((n, 1)), mode="complete")
    return Q[:, 1:]


def _dense_pencil(A, B, deflation, tau):
    if deflation == "constants":
        Q = _ones_complement(A.shape[0])
        A, B = Q.T @ A @ Q, Q.T @ B @ Q
    elif deflation == "threshold":
        mu, V = dense_sym_eig(B, vectors=True)
        keep = mu > tau * mu.max()
        if not keep.any():
            raise ValueError("operator is identically zero on complement")
        V = V[:, keep]
        A, B = V.T @ A @ V, V.T @ B @ V
    elif deflation != "none":
        raise ValueError(f"unknown deflation policy {deflation!r}")
    lam = dense_sym_geig(0.5 * (A + A.T), 0.5 * (B + B.T))
    if deflation == "threshold":
        lam = lam[lam > tau * lam.max()]
        if lam.size == 0:
            raise ValueError("operator is identically zero on complement")
    return lam


def lanczos_extremes(A, B, Bsolve, n, maxit=200, tol=1e-6, v0=None,
                     project=None, seed=0):
    """Extreme eigenvalues of ``B^{-1} A`` by Lanczos in the B inner product.

    ``Bsolve(r)`` applies ``B^{-1}``.  Full reorthogonalization is used.
    Iteration stops when both extreme Ritz pairs have residual estimates
    below ``tol`` times the Ritz value, or after ``maxit`` steps.
    ``project`` (optional) is applied to every new vector to stay in a
    subspace.
    """
    Aop, Bop = aslinearoperator(A), aslinearoperator(B)
    proj = project if project is not None else (lambda v: v)
    rng = np.random.default_rng(seed)
    v = proj(rng.standard_normal(n) if v0 is None else np.array(v0, dtype=float))
    Bv = Bop.matvec(v)
    nrm = np.sqrt(v @ Bv)
    v, Bv = v / nrm, Bv / nrm
    V, BV = [v], [Bv]
    alphas, betas = [], []
    theta = np.array([0.0])
    for k in range(min(maxit, n)):
        Av = Aop.matvec(V[-1])
        alphas.append(V[-1] @ Av)
        w = proj(Bsolve(Av))
        Vm, BVm = np.array(V), np.array(BV)
        for _ in range(2):
            w -= Vm.T @ (BVm @ w)
            w = proj(w)
        Bw = Bop.matvec(w)
        beta = np.sqrt(max(w @ Bw, 0.0))
        T = np.diag(alphas)
        if betas:
            T += np.diag(betas, 1) + np.diag(betas, -1)
        theta, S = scipy.linalg.eigh(T)
        ends = (0, len(theta) - 1)
        resid = [abs(beta * S[-1, j]) for j in ends]
        if all(resid[m] <= tol * abs(theta[j]) for m, j in enumerate(ends)):
            break
        if beta <= 1e-14 * max(1.0, abs(theta).max()):
            break
        betas.append(beta)
        V.append(w / beta)
        BV.append(Bw / beta)
    return float(theta[0]), float(theta[-1]), k + 1


def cond_estimate(A_high, A_low, deflation="none", method="auto", tau=DEFLATION_TAU,
                  dense_max=1500, maxit=200, tol=1e-6):
    """Extreme eigenvalues of the pencil ``(A_high, A_low)``.

    ``deflation`` is ``"none"``, ``"constants"`` (project out the all-ones
    vector) or ``"threshold"`` (drop the near-null space of ``A_low`` and
    pencil eigenvalues below ``tau * lambda_max``).
    """
    n = aslinearoperator(A_high).shape[0]
    if aslinearoperator(A_low).shape[0] != n:
        raise ValueError("operators must have the same dimension")
    if method == "auto":
        method = "dense" if n <= dense_max else "lanczos"
    if method == "dense":
        lam = _dense_pencil(_dense(A_high), _dense(A_low), deflation, tau)
        return SpectrumEstimate(float(lam[0]), float(lam[-1]), "dense", deflation)
    if method != "lanczos":
        raise ValueError(f"unknown method {method!r}")
    B = sp.csr_matrix(A_low)
    if deflation == "none":
        fac = sparse_cholesky(B)
        lo, hi, _ = lanczos_extremes(A_high, B, fac.solve, n, maxit, tol)
    elif deflation == "constants":
        # ground the first unknown; solutions are then shifted to mean zero
        fac = sparse_cholesky(B[1:, 1:])

        def project(v):
            return v - v.mean()

        def bsolve(r):
            x = np.zeros(n)
            x[1:] = fac.solve(r[1:])
            return project(x)

        lo, hi, _ = lanczos_extremes(A_high, B, bsolve, n, maxit, tol, project=project)
    else:
        raise ValueError("the Lanczos path supports deflation 'none' and 'constants'")
    return SpectrumEstimate(lo, hi, "lanczos", deflation)
