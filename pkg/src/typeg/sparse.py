"""Sparse Cholesky factorisation and selected inversion.

The symbolic analysis (fill-reducing ordering, elimination tree, row
patterns of the factor) is done once for a structural pattern and reused
for every numeric factorisation whose nonzeros lie inside that pattern.
This is the situation in the Gibbs sampler, where the posterior precision
changes values but never structure.

The numeric phase is an up-looking left Cholesky.  The partial inverse of
the factorised matrix on the factor's pattern is obtained with the
Takahashi recursion.  All loops live in :mod:`numba` kernels, with a
plain-Python fallback selected through :mod:`typeg._accel`.
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu

from ._accel import jit

__all__ = [
    "CholeskyError",
    "SymbolicCholesky",
    "CholeskyFactor",
    "SelectedInverse",
    "fill_reducing_ordering",
]


class CholeskyError(np.linalg.LinAlgError):
    """Raised when a matrix is not numerically positive definite."""


# ---------------------------------------------------------------------------
# kernels


@jit
def _etree(n, Ap, Ai):
    parent = np.full(n, -1, np.int64)
    ancestor = np.full(n, -1, np.int64)
    for k in range(n):
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@jit
def _row_counts(n, Ap, Ai, parent):
    mark = np.full(n, -1, np.int64)
    counts = np.zeros(n, np.int64)
    for k in range(n):
        mark[k] = k
        cnt = 0
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i > k:
                continue
            while mark[i] != k:
                mark[i] = k
                cnt += 1
                i = parent[i]
        counts[k] = cnt
    return counts


@jit
def _row_patterns(n, Ap, Ai, parent, Rp):
    # Row k of L (excluding the diagonal), in topological order of the
    # elimination tree so that the sparse triangular solve in the numeric
    # phase sees dependencies first.
    Rj = np.empty(Rp[n], np.int64)
    mark = np.full(n, -1, np.int64)
    path = np.empty(n, np.int64)
    out = np.empty(n, np.int64)
    for k in range(n):
        mark[k] = k
        top = n
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i > k:
                continue
            length = 0
            while mark[i] != k:
                path[length] = i
                length += 1
                mark[i] = k
                i = parent[i]
            while length > 0:
                top -= 1
                length -= 1
                out[top] = path[length]
        start = Rp[k]
        for t in range(top, n):
            Rj[start + t - top] = out[t]
    return Rj


@jit
def _column_structure(n, Rp, Rj):
    colcount = np.ones(n, np.int64)
    for q in range(Rp[n]):
        colcount[Rj[q]] += 1
    Lp = np.zeros(n + 1, np.int64)
    for j in range(n):
        Lp[j + 1] = Lp[j] + colcount[j]
    Li = np.empty(Lp[n], np.int64)
    c = Lp[:n].copy()
    for k in range(n):
        Li[c[k]] = k
        c[k] += 1
        for q in range(Rp[k], Rp[k + 1]):
            i = Rj[q]
            Li[c[i]] = k
            c[i] += 1
    return Lp, Li


@jit
def _chol_numeric(n, Ap, Ai, Ax, perm, iperm, Rp, Rj, Lp, Li, Lx):
    """Fill ``Lx``; return -1 on success, k >= 0 if pivot k is not positive,
    and -2 - k if column k of A has an entry outside the analysed pattern."""
    x = np.zeros(n)
    c = np.empty(n, np.int64)
    for j in range(n):
        c[j] = Lp[j] + 1
    for k in range(n):
        col = perm[k]
        for p in range(Ap[col], Ap[col + 1]):
            i = iperm[Ai[p]]
            if i <= k:
                x[i] += Ax[p]
        d = x[k]
        x[k] = 0.0
        for q in range(Rp[k], Rp[k + 1]):
            i = Rj[q]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, c[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            Lx[c[i]] = lki
            c[i] += 1
        for p in range(Ap[col], Ap[col + 1]):
            i = iperm[Ai[p]]
            if i < k and x[i] != 0.0:
                return -2 - k
        if not d > 0.0:
            return k
        Lx[Lp[k]] = np.sqrt(d)
    return -1


@jit
def _lower_solve(n, Lp, Li, Lx, b):
    # in place: b <- L^{-1} b, b is (n, m)
    m = b.shape[1]
    for j in range(n):
        piv = Lx[Lp[j]]
        for r in range(m):
            b[j, r] /= piv
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            lij = Lx[p]
            for r in range(m):
                b[i, r] -= lij * b[j, r]


@jit
def _upper_solve(n, Lp, Li, Lx, b):
    # in place: b <- L^{-T} b
    m = b.shape[1]
    for j in range(n - 1, -1, -1):
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            lij = Lx[p]
            for r in range(m):
                b[j, r] -= lij * b[i, r]
        piv = Lx[Lp[j]]
        for r in range(m):
            b[j, r] /= piv


@jit
def _lookup(Lp, Li, Z, r, c):
    # entry (r, c), r >= c, of the selected inverse stored on L's pattern
    lo = Lp[c]
    hi = Lp[c + 1] - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        v = Li[mid]
        if v == r:
            return Z[mid]
        if v < r:
            lo = mid + 1
        else:
            hi = mid - 1
    return np.nan


@jit
def _takahashi(n, Lp, Li, Lx):
    Z = np.zeros(Lp[n])
    acc = np.zeros(n)
    for i in range(n - 1, -1, -1):
        p0 = Lp[i]
        p1 = Lp[i + 1]
        lii = Lx[p0]
        m = p1 - p0 - 1
        for a in range(m):
            acc[a] = 0.0
        # rows below j in column i are a subset of column j's pattern, so
        # one forward merge over column j yields every Z[k, j] needed, and
        # each stored entry serves both (j, k) and (k, j)
        for a in range(m):
            qa = p0 + 1 + a
            j = Li[qa]
            lj = Lx[qa]
            scan = Lp[j]
            acc[a] += lj * Z[scan]
            scan += 1
            for b in range(a + 1, m):
                qb = qa + b - a
                k = Li[qb]
                while Li[scan] < k:
                    scan += 1
                zkj = Z[scan]
                acc[a] += Lx[qb] * zkj
                acc[b] += lj * zkj
        s = 0.0
        for a in range(m):
            z = -acc[a] / lii
            Z[p0 + 1 + a] = z
            s += Lx[p0 + 1 + a] * z
        Z[p0] = (1.0 / lii - s) / lii
    return Z


@jit
def _trace_product(Lp, Li, Z, iperm, Mp, Mj, Mx):
    total = 0.0
    for r in range(Mp.shape[0] - 1):
        a = iperm[r]
        for p in range(Mp[r], Mp[r + 1]):
            b = iperm[Mj[p]]
            if a >= b:
                total += Mx[p] * _lookup(Lp, Li, Z, a, b)
            else:
                total += Mx[p] * _lookup(Lp, Li, Z, b, a)
    return total


@jit
def _row_quadratic(Lp, Li, Z, iperm, Ap, Aj, Ax):
    m = Ap.shape[0] - 1
    out = np.zeros(m)
    for r in range(m):
        s = 0.0
        for p in range(Ap[r], Ap[r + 1]):
            a = iperm[Aj[p]]
            for q in range(Ap[r], Ap[r + 1]):
                b = iperm[Aj[q]]
                if a >= b:
                    s += Ax[p] * Ax[q] * _lookup(Lp, Li, Z, a, b)
                else:
                    s += Ax[p] * Ax[q] * _lookup(Lp, Li, Z, b, a)
        out[r] = s
    return out


@jit
def _gather(Lp, Li, Z, iperm, rows, cols):
    out = np.empty(rows.shape[0])
    for t in range(rows.shape[0]):
        a = iperm[rows[t]]
        b = iperm[cols[t]]
        if a >= b:
            out[t] = _lookup(Lp, Li, Z, a, b)
        else:
            out[t] = _lookup(Lp, Li, Z, b, a)
    return out


# ---------------------------------------------------------------------------
# python layer


def _structure(pattern):
    """Symmetric boolean CSC structure including the diagonal."""
    S = sp.csc_matrix(pattern, dtype=np.float64, copy=True)
    S.data = np.ones_like(S.data)
    S = S + S.T + sp.identity(S.shape[0], format="csc")
    S = sp.csc_matrix(S)
    S.sum_duplicates()
    S.sort_indices()
    S.data[:] = 1.0
    return S


def _permuted(S, perm):
    P = S[perm][:, perm]
    P = sp.csc_matrix(P)
    P.sort_indices()
    return P


def _fill(S, perm):
    P = _permuted(S, perm)
    n = S.shape[0]
    Ap = P.indptr.astype(np.int64)
    Ai = P.indices.astype(np.int64)
    parent = _etree(n, Ap, Ai)
    return int(_row_counts(n, Ap, Ai, parent).sum()) + n


def fill_reducing_ordering(pattern, method="auto"):
    """Return a permutation ``perm`` (new index -> old index).

    Parameters
    ----------
    pattern : sparse matrix
        Symmetric structure to factorise.
    method : {"auto", "rcm", "mmd", "natural"}
        ``auto`` evaluates reverse Cuthill-McKee and multiple minimum
        degree and keeps the one with the smaller factor.
    """
    S = _structure(pattern)
    n = S.shape[0]
    if method == "natural" or n <= 2:
        return np.arange(n)
    candidates = []
    if method in ("auto", "rcm"):
        candidates.append(
            np.asarray(reverse_cuthill_mckee(sp.csr_matrix(S), symmetric_mode=True),
                       dtype=np.int64))
    if method in ("auto", "mmd"):
        deg = np.asarray(S.sum(axis=1)).ravel()
        M = sp.csc_matrix(-0.5 * S / deg.max() + sp.diags(deg + 1.0))
        lu = splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options={"SymmetricMode": True})
        candidates.append(np.argsort(lu.perm_c).astype(np.int64))
    if not candidates:
        raise ValueError(f"unknown ordering method {method!r}")
    if len(candidates) == 1:
        return candidates[0]
    fills = [_fill(S, c) for c in candidates]
    return candidates[int(np.argmin(fills))]


class SymbolicCholesky:
    """Symbolic analysis for every SPD matrix whose pattern lies in ``pattern``.

    Parameters
    ----------
    pattern : sparse matrix
        Structural superset of the matrices that will be factorised.  Only
        the structure is used; explicit zeros count as nonzeros.
    ordering : str or array, optional
        Ordering method passed to :func:`fill_reducing_ordering`, or an
        explicit permutation.
    """

    def __init__(self, pattern, ordering="auto"):
        S = _structure(pattern)
        self.n = n = S.shape[0]
        if isinstance(ordering, str):
            perm = fill_reducing_ordering(S, ordering)
        else:
            perm = np.asarray(ordering, dtype=np.int64)
            if np.sort(perm).tolist() != list(range(n)):
                raise ValueError("ordering is not a permutation")
        self.perm = perm
        self.iperm = np.empty(n, np.int64)
        self.iperm[perm] = np.arange(n)
        P = _permuted(S, perm)
        Ap = P.indptr.astype(np.int64)
        Ai = P.indices.astype(np.int64)
        self.parent = _etree(n, Ap, Ai)
        counts = _row_counts(n, Ap, Ai, self.parent)
        self.Rp = np.zeros(n + 1, np.int64)
        np.cumsum(counts, out=self.Rp[1:])
        self.Rj = _row_patterns(n, Ap, Ai, self.parent, self.Rp)
        self.Lp, self.Li = _column_structure(n, self.Rp, self.Rj)

    @property
    def nnz(self):
        """Number of stored entries of the factor."""
        return int(self.Lp[-1])

    def factor(self, A):
        """Numeric factorisation of the symmetric matrix ``A``."""
        A = sp.csr_matrix(A)
        if A.shape != (self.n, self.n):
            raise ValueError(f"matrix shape {A.shape} does not match analysis ({self.n})")
        Lx = np.zeros(self.nnz)
        status = _chol_numeric(self.n, A.indptr.astype(np.int64),
                               A.indices.astype(np.int64), A.data.astype(np.float64),
                               self.perm, self.iperm, self.Rp, self.Rj,
                               self.Lp, self.Li, Lx)
        if status <= -2:
            raise ValueError(
                f"column {self.perm[-2 - status]} has entries outside the analysed pattern")
        if status >= 0:
            raise CholeskyError(
                f"matrix not positive definite (pivot {int(status)} of {self.n})")
        return CholeskyFactor(self, Lx)


class CholeskyFactor:
    """Numeric factor ``P A Pᵀ = L Lᵀ`` produced by :class:`SymbolicCholesky`."""

    def __init__(self, symbolic, Lx):
        self.symbolic = symbolic
        self.Lx = Lx

    @property
    def n(self):
        return self.symbolic.n

    def logdet(self):
        """log det A."""
        s = self.symbolic
        return 2.0 * float(np.sum(np.log(self.Lx[s.Lp[:-1]])))

    def solve(self, b):
        """Solve ``A x = b`` for a vector or an (n, m) array."""
        s = self.symbolic
        b = np.asarray(b, dtype=np.float64)
        vec = b.ndim == 1
        work = np.ascontiguousarray(b.reshape(s.n, -1)[s.perm])
        _lower_solve(s.n, s.Lp, s.Li, self.Lx, work)
        _upper_solve(s.n, s.Lp, s.Li, self.Lx, work)
        out = np.empty_like(work)
        out[s.perm] = work
        return out[:, 0] if vec else out

    def sample(self, z):
        """Map standard normal ``z`` to a draw from N(0, A⁻¹)."""
        s = self.symbolic
        z = np.asarray(z, dtype=np.float64)
        vec = z.ndim == 1
        work = np.ascontiguousarray(z.reshape(s.n, -1)).copy()
        _upper_solve(s.n, s.Lp, s.Li, self.Lx, work)
        out = np.empty_like(work)
        out[s.perm] = work
        return out[:, 0] if vec else out

    def L(self):
        """Factor as a scipy CSC matrix in the permuted ordering."""
        s = self.symbolic
        return sp.csc_matrix((self.Lx, s.Li, s.Lp), shape=(s.n, s.n))

    def selected_inverse(self):
        """Entries of A⁻¹ on the pattern of L (Takahashi recursion)."""
        s = self.symbolic
        return SelectedInverse(s, _takahashi(s.n, s.Lp, s.Li, self.Lx))


class SelectedInverse:
    """Entries of A⁻¹ on the symmetric pattern of the Cholesky factor."""

    def __init__(self, symbolic, Z):
        self.symbolic = symbolic
        self.Z = Z

    def diag(self):
        """Diagonal of A⁻¹ in the original ordering."""
        s = self.symbolic
        return self.Z[s.Lp[:-1]][s.iperm]

    def trace_product(self, M):
        """tr(A⁻¹ M) for sparse ``M`` whose pattern lies in the factor's."""
        s = self.symbolic
        M = sp.csr_matrix(M)
        val = _trace_product(s.Lp, s.Li, self.Z, s.iperm, M.indptr.astype(np.int64),
                             M.indices.astype(np.int64), M.data.astype(np.float64))
        if np.isnan(val):
            raise ValueError("matrix has entries outside the selected pattern")
        return float(val)

    def row_quadratic(self, A):
        """Vector with entries a_r A⁻¹ a_rᵀ for the rows a_r of ``A``."""
        s = self.symbolic
        A = sp.csr_matrix(A)
        out = _row_quadratic(s.Lp, s.Li, self.Z, s.iperm, A.indptr.astype(np.int64),
                             A.indices.astype(np.int64), A.data.astype(np.float64))
        if np.isnan(out).any():
            raise ValueError("row supports are not covered by the selected pattern")
        return out

    def entries(self, rows, cols):
        """A⁻¹[rows, cols]; NaN where outside the pattern."""
        s = self.symbolic
        return _gather(s.Lp, s.Li, self.Z, s.iperm, np.asarray(rows, np.int64),
                       np.asarray(cols, np.int64))

    def to_sparse(self):
        """Symmetric scipy matrix holding the selected entries."""
        s = self.symbolic
        low = sp.csc_matrix((self.Z, s.Li, s.Lp), shape=(s.n, s.n))
        full = low + low.T - sp.diags(low.diagonal())
        return sp.csr_matrix(full)[s.iperm][:, s.iperm]
