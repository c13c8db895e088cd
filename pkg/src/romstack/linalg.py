"""Dense linear-algebra helpers: matrix exponential and damped pseudoinverse."""

import numpy as np

EXPM_TOL = 1e-14


def expm(a, tol=EXPM_TOL):
    """Matrix exponential by scaling and squaring with a truncated Taylor series.

    The matrix is scaled by 2**-s until its 1-norm is below 0.5, the series is
    summed until the next term drops below ``tol`` (relative), and the result is
    squared back s times.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expm expects a square matrix")
    n = a.shape[0]
    norm = np.abs(a).sum(axis=0).max() if n else 0.0
    s = 0
    if norm > 0.5:
        s = int(np.ceil(np.log2(norm / 0.5)))
    scaled = a / (2.0**s)
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 60):
        term = term @ scaled / k
        result = result + term
        if np.abs(term).max() <= tol * max(1.0, np.abs(result).max()):
            break
    for _ in range(s):
        result = result @ result
    return result


def expm_with_integral(a, b, t):
    """Return ``(exp(a t), int_0^t exp(a s) ds @ b)`` via the augmented exponential.

    Uses exp([[a, b], [0, 0]] t) = [[exp(a t), int_0^t exp(a s) ds b], [0, I]].
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float).reshape(a.shape[0], -1)
    n, m = b.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a
    aug[:n, n:] = b
    e = expm(aug * t)
    return e[:n, :n], e[:n, n:]


def damped_pinv(a, damping=1e-6, sigma_min=1e-4):
    """SVD pseudoinverse with Tikhonov damping when the matrix is near-singular.

    Returns ``(pinv, damped)``. Damping is engaged only when the smallest
    nonzero-expected singular value falls below ``sigma_min``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((a.shape[1], a.shape[0])), False
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    k = min(a.shape)
    damped = bool(s[k - 1] < sigma_min) if k else False
    if damped:
        inv_s = s / (s**2 + damping**2)
    else:
        inv_s = np.where(s > 0.0, 1.0 / np.where(s > 0.0, s, 1.0), 0.0)
    return (vt.T * inv_s) @ u.T, damped


def pinv(a, rcond=1e-10):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((a.shape[1], a.shape[0]))
    return np.linalg.pinv(a, rcond=rcond)


def row_basis(a, b=None, rtol=1e-10):
    """Compress ``a x = b`` to an equivalent full-row-rank system.

    Returns ``(a_r, b_r, residual)`` where ``residual`` measures how far ``b``
    lies outside the column space of ``a`` (zero for consistent systems).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] == 0:
        empty = np.zeros((0, a.shape[1]))
        return empty, np.zeros(0), 0.0
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    tol = rtol * max(1.0, s[0] if s.size else 0.0)
    r = int(np.sum(s > tol))
    a_r = s[:r, None] * vt[:r]
    if b is None:
        return a_r, None, 0.0
    b = np.asarray(b, dtype=float)
    b_r = u[:, :r].T @ b
    residual = float(np.linalg.norm(b - u[:, :r] @ b_r))
    return a_r, b_r, residual


def null_space(a, rtol=1e-10):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[1]
    if a.shape[0] == 0:
        return np.eye(n)
    u, s, vt = np.linalg.svd(a, full_matrices=True)
    tol = rtol * max(1.0, s[0] if s.size else 0.0)
    r = int(np.sum(s > tol))
    return vt[r:].T
