"""Hot numeric kernels: pairwise squared distances and Gaussian kernel matrices.

Two interchangeable backends. The numba-jitted one is used by default when
numba imports cleanly; setting the environment variable ``DDALIGN_NO_NUMBA=1``
(or any non-empty value other than ``0``) before import forces the pure-numpy
path. Both produce the same values to floating-point roundoff; the twin-ness
is asserted in tests and timed in ``benchmarks/bench_kernels.py``.
"""

import os

import numpy as np

__all__ = [
    "ACTIVE_BACKEND",
    "gaussian_kernel_matrix",
    "pairwise_sq_dists",
    "gaussian_kernel_matrix_numpy",
    "pairwise_sq_dists_numpy",
]


def pairwise_sq_dists_numpy(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """All-pairs squared Euclidean distances, shape [n, m]."""
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def gaussian_kernel_matrix_numpy(X: np.ndarray, Y: np.ndarray, sigma: float) -> np.ndarray:
    """exp(-||x_i - y_j||^2 / sigma), shape [n, m]."""
    return np.exp(pairwise_sq_dists_numpy(X, Y) / -sigma)


def _disabled_by_env() -> bool:
    flag = os.environ.get("DDALIGN_NO_NUMBA", "")
    return flag not in ("", "0")


if not _disabled_by_env():
    try:
        from numba import njit

        @njit(cache=True)
        def _pairwise_sq_dists_jit(X, Y):  # pragma: no cover - exercised via wrapper
            n, d = X.shape
            m = Y.shape[0]
            out = np.empty((n, m))
            for i in range(n):
                for j in range(m):
                    acc = 0.0
                    for k in range(d):
                        diff = X[i, k] - Y[j, k]
                        acc += diff * diff
                    out[i, j] = acc
            return out

        @njit(cache=True)
        def _gaussian_kernel_matrix_jit(X, Y, sigma):  # pragma: no cover
            n, d = X.shape
            m = Y.shape[0]
            out = np.empty((n, m))
            inv = 1.0 / sigma
            for i in range(n):
                for j in range(m):
                    acc = 0.0
                    for k in range(d):
                        diff = X[i, k] - Y[j, k]
                        acc += diff * diff
                    out[i, j] = np.exp(-acc * inv)
            return out

        def pairwise_sq_dists(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
            return _pairwise_sq_dists_jit(
                np.ascontiguousarray(X, dtype=np.float64),
                np.ascontiguousarray(Y, dtype=np.float64),
            )

        def gaussian_kernel_matrix(X: np.ndarray, Y: np.ndarray, sigma: float) -> np.ndarray:
            return _gaussian_kernel_matrix_jit(
                np.ascontiguousarray(X, dtype=np.float64),
                np.ascontiguousarray(Y, dtype=np.float64),
                float(sigma),
            )

        ACTIVE_BACKEND = "numba"
    except ImportError:  # pragma: no cover - depends on environment
        pairwise_sq_dists = pairwise_sq_dists_numpy
        gaussian_kernel_matrix = gaussian_kernel_matrix_numpy
        ACTIVE_BACKEND = "numpy"
else:
    pairwise_sq_dists = pairwise_sq_dists_numpy
    gaussian_kernel_matrix = gaussian_kernel_matrix_numpy
    ACTIVE_BACKEND = "numpy"
