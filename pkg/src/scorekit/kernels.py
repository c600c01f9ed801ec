"""Radial scalar kernels and the matrix-valued kernels built from them.

Everything is parameterized by the squared distance u = ||x - y||^2, which
keeps all derivative formulas polynomial in u and avoids the 1/r singularity
of the distance parameterization at r = 0.

Two scalar families, both normalized so phi(0) = 1:

    imq:      phi(u) = (1 + u/sigma^2)^(-1/2)
    gaussian: phi(u) = exp(-u / (2 sigma^2))

Two matrix-valued kernels on top of a scalar phi:

    diagonal:  K(x, y) = phi(u) * I_d
    curl_free: K(x, y) = -4 phi''(u) r r^T - 2 phi'(u) I_d,   r = x - y

The curl-free kernel equals the mixed second derivatives d/dx_i d/dy_j of
the scalar kernel, so every field in its span is a gradient field.
"""

import numpy as np

from .errors import InputError

FAMILIES = ("imq", "gaussian")
KINDS = ("diagonal", "curl_free")


# ======================================================================
# scalar radial kernels
# ======================================================================

class ScalarRadialKernel:
    """A radial kernel family phi(u) with derivatives up to third order."""

    __slots__ = ("family", "bandwidth")

    def __init__(self, family: str, bandwidth: float):
        if family not in FAMILIES:
            raise InputError(f"unknown kernel family {family!r}; expected one of {FAMILIES}")
        bandwidth = float(bandwidth)
        if not np.isfinite(bandwidth) or bandwidth <= 0.0:
            raise InputError(f"bandwidth must be a positive finite real, got {bandwidth!r}")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "bandwidth", bandwidth)

    def __setattr__(self, name, value):
        raise AttributeError("ScalarRadialKernel is immutable")

    def __repr__(self):
        return f"ScalarRadialKernel({self.family!r}, bandwidth={self.bandwidth!r})"

    def __eq__(self, other):
        return (isinstance(other, ScalarRadialKernel)
                and self.family == other.family and self.bandwidth == other.bandwidth)

    def __hash__(self):
        return hash((self.family, self.bandwidth))

    # phi and its u-derivatives, vectorized over u arrays.

    def phi(self, u):
        u = np.asarray(u, dtype=np.float64)
        s2 = self.bandwidth ** 2
        if self.family == "imq":
            return (1.0 + u / s2) ** -0.5
        return np.exp(-u / (2.0 * s2))

    def dphi(self, u):
        u = np.asarray(u, dtype=np.float64)
        s2 = self.bandwidth ** 2
        if self.family == "imq":
            return (-0.5 / s2) * (1.0 + u / s2) ** -1.5
        return (-0.5 / s2) * np.exp(-u / (2.0 * s2))

    def d2phi(self, u):
        u = np.asarray(u, dtype=np.float64)
        s2 = self.bandwidth ** 2
        if self.family == "imq":
            return (0.75 / s2 ** 2) * (1.0 + u / s2) ** -2.5
        return (0.25 / s2 ** 2) * np.exp(-u / (2.0 * s2))

    def d3phi(self, u):
        u = np.asarray(u, dtype=np.float64)
        s2 = self.bandwidth ** 2
        if self.family == "imq":
            return (-1.875 / s2 ** 3) * (1.0 + u / s2) ** -3.5
        return (-0.125 / s2 ** 3) * np.exp(-u / (2.0 * s2))


def scalar_derivs(kernel: ScalarRadialKernel, u):
    """Return (phi, phi', phi'', phi''') at squared distance u >= 0."""
    arr = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise InputError("u must be finite and nonnegative")
    out = (kernel.phi(arr), kernel.dphi(arr), kernel.d2phi(arr), kernel.d3phi(arr))
    if np.isscalar(u) or getattr(u, "ndim", 0) == 0:
        return tuple(float(v) for v in out)
    return out


class MatrixKernelSpec:
    """Diagonal or curl-free matrix-valued kernel over a scalar radial kernel."""

    __slots__ = ("kind", "scalar")

    def __init__(self, kind: str, scalar: ScalarRadialKernel):
        if kind not in KINDS:
            raise InputError(f"unknown matrix kernel kind {kind!r}; expected one of {KINDS}")
        if not isinstance(scalar, ScalarRadialKernel):
            raise InputError("scalar must be a ScalarRadialKernel")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "scalar", scalar)

    def __setattr__(self, name, value):
        raise AttributeError("MatrixKernelSpec is immutable")

    def __repr__(self):
        return f"MatrixKernelSpec({self.kind!r}, {self.scalar!r})"

    def __eq__(self, other):
        return (isinstance(other, MatrixKernelSpec)
                and self.kind == other.kind and self.scalar == other.scalar)

    def __hash__(self):
        return hash((self.kind, self.scalar))


# ======================================================================
# sample validation and pairwise geometry
# ======================================================================

def as_samples(X) -> np.ndarray:
    """Validate an M x d sample matrix: 2-D, finite, M >= 1, d >= 1."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"samples must be a 2-D (M, d) array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InputError(f"samples need M >= 1 and d >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("samples contain non-finite entries")
    return np.ascontiguousarray(arr)


def _as_vector(x, d: int, name: str = "query") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (d,):
        raise InputError(f"{name} must have shape ({d},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InputError(f"{name} contains non-finite entries")
    return v


def _as_queries(Xq, d: int) -> np.ndarray:
    q = np.asarray(Xq, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != d:
        raise InputError(f"queries must have shape (Q, {d}), got {q.shape}")
    if not np.all(np.isfinite(q)):
        raise InputError("queries contain non-finite entries")
    return np.ascontiguousarray(q)


def sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """All pairwise squared Euclidean distances, clipped at zero."""
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    out = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    np.maximum(out, 0.0, out=out)
    return out


def scalar_gram(kernel: ScalarRadialKernel, X: np.ndarray, Y: np.ndarray = None) -> np.ndarray:
    """k(X, Y) with k(x, y) = phi(||x - y||^2); Y defaults to X."""
    X = as_samples(X)
    Y = X if Y is None else as_samples(Y)
    return kernel.phi(sq_dists(X, Y))


# ======================================================================
# pointwise matrix-kernel evaluation
# ======================================================================

def eval_matrix_kernel(spec: MatrixKernelSpec, x, y) -> np.ndarray:
    """Evaluate the d x d kernel block K(x, y)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64)
    d = x.shape[0]
    y = _as_vector(y, d, "y")
    x = _as_vector(x, d, "x")
    r = x - y
    u = float(r @ r)
    if spec.kind == "diagonal":
        return float(spec.scalar.phi(u)) * np.eye(d)
    p1 = float(spec.scalar.dphi(u))
    p2 = float(spec.scalar.d2phi(u))
    return -4.0 * p2 * np.outer(r, r) - 2.0 * p1 * np.eye(d)


def curlfree_matvec(spec: MatrixKernelSpec, x, y, a) -> np.ndarray:
    """K_cf(x, y) @ a in O(d), without forming the d x d block.

    K_cf(x,y) a = -4 phi''(u) (r . a) r - 2 phi'(u) a, with r = x - y.
    """
    if spec.kind != "curl_free":
        raise InputError("curlfree_matvec requires a curl_free kernel spec")
    x = np.asarray(x, dtype=np.float64).ravel()
    d = x.shape[0]
    x = _as_vector(x, d, "x")
    y = _as_vector(y, d, "y")
    a = _as_vector(a, d, "a")
    r = x - y
    u = float(r @ r)
    p1 = float(spec.scalar.dphi(u))
    p2 = float(spec.scalar.d2phi(u))
    return -4.0 * p2 * float(r @ a) * r - 2.0 * p1 * a


# ======================================================================
# divergence field zeta
# ======================================================================

def zeta_batch(spec: MatrixKernelSpec, samples, queries) -> np.ndarray:
    """Empirical kernel-divergence field at each query row.

    diagonal:   zeta(x) = (1/M) sum_m 2 phi'(u_m) (x^m - x)
    curl_free:  zeta(x) = -(4/M) sum_m [(d+2) phi''(u_m) + 2 u_m phi'''(u_m)] (x^m - x)

    Both are the divergence of the kernel with respect to its sample
    argument, averaged over the samples; u_m = ||x^m - x||^2.
    """
    X = as_samples(samples)
    M, d = X.shape
    Q = _as_queries(queries, d)
    U = sq_dists(Q, X)  # (Q, M)
    if spec.kind == "diagonal":
        W = (2.0 / M) * spec.scalar.dphi(U)
    else:
        W = (-4.0 / M) * ((d + 2) * spec.scalar.d2phi(U) + 2.0 * U * spec.scalar.d3phi(U))
    return W @ X - W.sum(axis=1)[:, None] * Q


def zeta(spec: MatrixKernelSpec, samples, query) -> np.ndarray:
    """zeta at a single d-vector query."""
    X = as_samples(samples)
    q = _as_vector(query, X.shape[1])
    return zeta_batch(spec, X, q[None, :])[0]


def h_vector(spec: MatrixKernelSpec, samples) -> np.ndarray:
    """zeta stacked at the samples themselves: (zeta(x^1), ..., zeta(x^M))."""
    X = as_samples(samples)
    return zeta_batch(spec, X, X).ravel()


# ======================================================================
# Gram matrices: dense and implicit (matrix-free) forms
# ======================================================================

class DenseGram:
    """Materialized Md x Md Gram matrix over a sample set."""

    __slots__ = ("spec", "samples", "matrix", "_eig")

    def __init__(self, spec, samples, matrix):
        self.spec = spec
        self.samples = samples
        self.matrix = matrix
        self._eig = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def matvec(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64).ravel()
        if b.shape[0] != self.dim:
            raise InputError(f"vector length {b.shape[0]} != Gram dimension {self.dim}")
        return self.matrix @ b

    def eigensystem(self):
        """Cached full eigendecomposition (values descending)."""
        if self._eig is None:
            from .spectral_linalg import sym_eig
            self._eig = sym_eig(0.5 * (self.matrix + self.matrix.T))
        return self._eig


class ImplicitGram:
    """Matrix-free Gram operator.

    Stores only O(M^2) scalar-derivative tables; a matvec costs O(M^2 d)
    time instead of touching an Md x Md matrix (O(M^2 d^2) storage dense).
    """

    __slots__ = ("spec", "samples", "_p1", "_p2", "_k", "_keig")

    def __init__(self, spec: MatrixKernelSpec, samples):
        X = as_samples(samples)
        self.spec = spec
        self.samples = X
        self._keig = None
        U = sq_dists(X, X)
        if spec.kind == "diagonal":
            self._k = spec.scalar.phi(U)
            self._p1 = None
            self._p2 = None
        else:
            self._k = None
            self._p1 = spec.scalar.dphi(U)
            self._p2 = spec.scalar.d2phi(U)

    def scalar_eigensystem(self):
        """Cached eigendecomposition of the scalar M x M Gram (diagonal kind).

        For a diagonal kernel the Md x Md spectrum is exactly the scalar
        spectrum with multiplicity d, so this is the full eigen content.
        """
        if self.spec.kind != "diagonal":
            raise InputError("scalar_eigensystem is only defined for diagonal kernels")
        if self._keig is None:
            from .spectral_linalg import sym_eig
            self._keig = sym_eig(0.5 * (self._k + self._k.T))
        return self._keig

    @property
    def dim(self) -> int:
        M, d = self.samples.shape
        return M * d

    def matvec(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64).ravel()
        if b.shape[0] != self.dim:
            raise InputError(f"vector length {b.shape[0]} != Gram dimension {self.dim}")
        M, d = self.samples.shape
        C = b.reshape(M, d)
        if self.spec.kind == "diagonal":
            return (self._k @ C).ravel()
        X = self.samples
        S = X @ C.T                               # S[m, l] = x^m . c^l
        t = np.einsum("ij,ij->i", X, C)           # t[l] = x^l . c^l
        alpha = self._p2 * (S - t[None, :])       # phi''(u_ml) * (r_ml . c^l)
        out = -4.0 * (alpha.sum(axis=1)[:, None] * X - alpha @ X) - 2.0 * (self._p1 @ C)
        return out.ravel()


def cross_gram(spec: MatrixKernelSpec, rows, cols) -> np.ndarray:
    """Dense block matrix of K(r_p, c_q); shape (P*d, Q*d), d x d blocks."""
    A = as_samples(rows)
    P, d = A.shape
    B = _as_queries(cols, d)
    Q = B.shape[0]
    if spec.kind == "diagonal":
        return np.kron(scalar_gram(spec.scalar, A, B), np.eye(d))
    R = A[:, None, :] - B[None, :, :]              # (P, Q, d)
    U = np.einsum("pqk,pqk->pq", R, R)
    P1 = spec.scalar.dphi(U)
    P2 = spec.scalar.d2phi(U)
    K4 = np.einsum("pq,pqi,pqj->piqj", -4.0 * P2, R, R)
    for i in range(d):
        K4[:, i, :, i] -= 2.0 * P1
    return np.ascontiguousarray(K4.reshape(P * d, Q * d))


def assemble_gram(spec: MatrixKernelSpec, samples, mode: str = "dense"):
    """Build the Md x Md Gram over the samples, dense or implicit.

    Mode is an explicit caller choice; there is no size-based auto switch.
    """
    if mode == "implicit":
        return ImplicitGram(spec, samples)
    if mode != "dense":
        raise InputError(f"unknown gram mode {mode!r}; expected 'dense' or 'implicit'")
    X = as_samples(samples)
    M, d = X.shape
    try:
        K = cross_gram(spec, X, X)
    except MemoryError as exc:
        need = (M * d) ** 2 * 8
        raise MemoryError(f"dense Gram for M={M}, d={d} needs ~{need} bytes") from exc
    return DenseGram(spec, X, K)


def gram_matvec(gram, b: np.ndarray) -> np.ndarray:
    """K @ b for either Gram form."""
    return gram.matvec(b)


def cross_apply(spec: MatrixKernelSpec, queries, basis, coeffs: np.ndarray) -> np.ndarray:
    """sum_j K(x_q, b_j) c_j for each query row; coeffs is N x d.

    This is the K_{xX} c part of every prediction, evaluated without
    materializing the Q*d x N*d cross Gram.
    """
    B = as_samples(basis)
    N, d = B.shape
    Q = _as_queries(queries, d)
    C = np.asarray(coeffs, dtype=np.float64)
    if C.shape != (N, d):
        raise InputError(f"coeffs must have shape ({N}, {d}), got {C.shape}")
    U = sq_dists(Q, B)
    if spec.kind == "diagonal":
        return spec.scalar.phi(U) @ C
    S = Q @ C.T
    t = np.einsum("ij,ij->i", B, C)
    alpha = spec.scalar.d2phi(U) * (S - t[None, :])
    return -4.0 * (alpha.sum(axis=1)[:, None] * Q - alpha @ B) - 2.0 * (spec.scalar.dphi(U) @ C)
