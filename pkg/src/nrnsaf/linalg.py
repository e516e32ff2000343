"""Dense real-matrix kernels used by the theory engine.

Matrices are plain ``numpy.ndarray`` objects in numpy's default row-major
storage.  ``vec`` always stacks columns (Fortran order), so that
``vec(X @ Z @ Y) == kron(Y.T, X) @ vec(Z)``.
"""

from __future__ import annotations

from typing import Callable, Union

import numpy as np
import scipy.linalg

MatVec = Callable[[np.ndarray], np.ndarray]


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class ContractError(ValueError):
    pass


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def kron(x, y) -> np.ndarray:
    """Kronecker product; block ``(i, j)`` of the result is ``x[i, j] * y``."""
    x = as_matrix(x)
    y = as_matrix(y)
    rows = x.shape[0] * y.shape[0]
    cols = x.shape[1] * y.shape[1]
    if rows * cols > 2**31:
        raise ValueError(f"kron result {rows}x{cols} is too large")
    return np.kron(x, y)


def vec(x) -> np.ndarray:
    """Stack the columns of ``x`` into one vector."""
    return np.asarray(x, dtype=float).reshape(-1, order="F")


def unvec(v, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Inverse of :func:`vec`.  Without ``shape`` the length must be a square."""
    v = np.asarray(v, dtype=float).ravel()
    if shape is None:
        m = int(round(np.sqrt(v.size)))
        if m * m != v.size:
            raise ValueError(f"length {v.size} is not a perfect square; pass shape")
        shape = (m, m)
    if shape[0] * shape[1] != v.size:
        raise ValueError(f"cannot reshape length {v.size} into {shape}")
    return v.reshape(shape, order="F")


def solve(a, b, *, pivot_tol: float = 1e-12) -> np.ndarray:
    """Solve ``a x = b`` by LU factorisation with partial pivoting.

    Raises SingularMatrixError when a pivot is tiny relative to the
    largest entry of its original row.
    """
    a = as_matrix(a)
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"solve needs a square matrix, got {a.shape}")
    if b.shape[0] != n:
        raise ValueError(f"rhs length {b.shape[0]} does not match matrix order {n}")
    row_scale = np.abs(a).max(axis=1)
    if np.any(row_scale == 0.0):
        raise SingularMatrixError("matrix has an all-zero row")
    lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    # Row k of U came from original row perm[k].
    perm = np.arange(n)
    for k, p in enumerate(piv):
        perm[k], perm[p] = perm[p], perm[k]
    pivots = np.abs(np.diag(lu))
    if np.any(pivots < pivot_tol * row_scale[perm]):
        raise SingularMatrixError("matrix is singular to working precision")
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def _probe_vectors(n: int, count: int = 8) -> np.ndarray:
    rng = np.random.default_rng(0x5EED)
    probes = rng.standard_normal((count, n))
    probes[0] = 1.0
    return probes / np.linalg.norm(probes, axis=1, keepdims=True)


def max_eig_sym(a, *, sym_tol: float = 1e-10, tol: float = 1e-8, max_iter: int = 100_000):
    """Largest eigenvalue (and eigenvector) of a symmetric matrix.

    Power iteration on ``a + s I`` with ``s = 2 ||a||_F`` so that the shifted
    spectrum is strictly positive and the top eigenvalue is the dominant one.
    """
    a = as_matrix(a)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ContractError(f"max_eig_sym needs a square matrix, got {a.shape}")
    fro = np.linalg.norm(a)
    if np.abs(a - a.T).max(initial=0.0) > sym_tol * max(fro, 1e-300):
        raise ContractError("max_eig_sym needs a symmetric matrix")
    if fro == 0.0:
        v = np.zeros(n)
        v[0] = 1.0
        return 0.0, v

    probes = _probe_vectors(n)
    rayleigh = np.einsum("ij,jk,ik->i", probes, a, probes)
    v = probes[int(np.argmax(rayleigh))].copy()
    shifted = a + 2.0 * fro * np.eye(n)
    lam = float(v @ a @ v)
    for _ in range(max_iter):
        w = shifted @ v
        v = w / np.linalg.norm(w)
        av = a @ v
        lam = float(v @ av)
        if np.linalg.norm(av - lam * v) <= tol * fro:
            break
    return max(lam, float(rayleigh.max())), v


def spectral_radius_estimate(
    a: Union[np.ndarray, MatVec],
    n: int | None = None,
    *,
    iters: int = 2000,
    seed: int = 1234,
    overflow: float = 1e300,
) -> float:
    """Estimate the spectral radius from the growth rate of ``a^k x``.

    ``a`` is either a square matrix or a callable applying the operator to
    a vector (then ``n`` is required).  The start vector is a fixed random
    draw, so the estimate is valid for generic operators; an operator whose
    dominant eigenspace is orthogonal to that draw is underestimated.

    The iterate is renormalised every step and the growth rate is fitted to
    the second half of the run, which removes the start-vector transient.
    """
    if callable(a):
        if n is None:
            raise ValueError("n is required when a is a callable")
        apply = a
    else:
        mat = np.asarray(a, dtype=float)
        n = mat.shape[0]
        apply = mat.__matmul__

    x = np.random.default_rng(seed).standard_normal(n)
    x /= np.linalg.norm(x)
    log_norms = np.zeros(iters + 1)
    for k in range(1, iters + 1):
        y = apply(x)
        norm = np.linalg.norm(y)
        if not np.isfinite(norm) or norm > overflow:
            return float("inf")
        if norm == 0.0:
            return 0.0
        log_norms[k] = log_norms[k - 1] + np.log(norm)
        x = y / norm
    # Least-squares slope rather than endpoints: a complex dominant pair
    # makes the norm oscillate, and the fit averages that out.
    k = np.arange(iters // 2, iters + 1)
    slope = np.polyfit(k, log_norms[k], 1)[0]
    return float(np.exp(slope))
