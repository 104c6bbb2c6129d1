"""Stable float64 primitives: normalisation, log-sum-exp, softmax, Jacobi eigensolver, PCA."""

import numpy as np

from .errors import DegenerateVector, EmptyInput, NonFiniteError, ShapeError

NORM_FLOOR = 1e-12
JACOBI_TOL = 1e-10
JACOBI_MAX_SWEEPS = 100


def as_vector(v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    if v.size == 0:
        raise EmptyInput("vector is empty")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError("vector contains NaN or Inf")
    return v


def as_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if m.shape[0] == 0 or m.shape[1] == 0:
        raise ShapeError(f"matrix dimensions must be positive, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("matrix contains NaN or Inf")
    return m


def l2_normalize(v):
    v = as_vector(v)
    norm = np.sqrt(np.dot(v, v))
    if norm < NORM_FLOOR:
        raise DegenerateVector("cannot normalise a zero-norm vector")
    return v / norm


def normalize_rows(m):
    """Row-wise L2 normalisation with the zero-row guard used by the encoder.

    Rows whose norm is below ``NORM_FLOOR`` are passed through unchanged.
    Returns ``(normalized, norms, guarded)`` where ``guarded`` is a boolean
    mask of rows that hit the guard.
    """
    m = np.asarray(m, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    guarded = norms < NORM_FLOOR
    safe = np.where(guarded, 1.0, norms)
    return m / safe[:, None], norms, guarded


def log_sum_exp(xs):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise EmptyInput("log_sum_exp of an empty vector")
    top = np.max(xs)
    if not np.isfinite(top):
        return top
    return top + np.log(np.sum(np.exp(xs - top)))


def logsumexp_rows(m, mask=None):
    """log-sum-exp along axis 1, optionally restricted to ``mask``.

    Rows with an empty mask get ``-inf``.
    """
    m = np.asarray(m, dtype=np.float64)
    masked = m if mask is None else np.where(mask, m, -np.inf)
    top = np.max(masked, axis=1)
    top_safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        # masked entries are -inf, so exp sends them to exactly 0
        return top_safe + np.log(np.sum(np.exp(masked - top_safe[:, None]), axis=1))


def softmax(xs):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise EmptyInput("softmax of an empty vector")
    e = np.exp(xs - np.max(xs))
    return e / np.sum(e)


def softmax_rows(m):
    m = np.asarray(m, dtype=np.float64)
    e = np.exp(m - np.max(m, axis=1, keepdims=True))
    return e / np.sum(e, axis=1, keepdims=True)


def _fix_signs(vectors):
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def symmetric_eigen(m, tol=JACOBI_TOL):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues sorted in descending order and the matching
    orthonormal eigenvectors as columns. Each eigenvector's
    largest-magnitude component is made positive so outputs are
    deterministic.
    """
    a = as_matrix(m)
    n, k = a.shape
    if n != k:
        raise ShapeError(f"symmetric_eigen needs a square matrix, got {a.shape}")
    if np.max(np.abs(a - a.T)) > 1e-9:
        raise ShapeError("symmetric_eigen needs a symmetric matrix")
    a = 0.5 * (a + a.T)
    vecs = np.eye(n)
    # scale-aware stopping so large Gram matrices converge too
    threshold = tol * max(1.0, np.linalg.norm(a))

    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2) * 2.0)
        if off < threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                v_p = vecs[:, p].copy()
                v_q = vecs[:, q]
                vecs[:, p] = c * v_p - s * v_q
                vecs[:, q] = s * v_p + c * v_q

    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], _fix_signs(vecs[:, order])


def pca_project(rows, dims):
    """Centre ``rows`` and project them onto the top ``dims`` principal directions."""
    x = as_matrix(rows)
    n, d = x.shape
    if dims < 1 or dims > d:
        raise ShapeError(f"dims must be in [1, {d}], got {dims}")
    if n < 2:
        raise ShapeError("pca_project needs at least 2 rows")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    _, vecs = symmetric_eigen(cov)
    return centered @ vecs[:, :dims]
