"""Pure-numpy implementations of the hot kernels.

These are the reference semantics for the compiled extension: same
signatures, same float64 contracts. Everything here is O(n*K*p^2) per call
and dominates the fixed-point iteration cost, which is why a compiled
variant exists at all.
"""

import numpy as np
from scipy.linalg import solve_triangular

NAME = "numpy"

_LOG_2PI = np.log(2.0 * np.pi)


def mvn_logpdf_matrix(y, mus, chols, logdets):
    """Log density of each row of ``y`` under each Gaussian component.

    Args:
        y: (n, p) observations.
        mus: (K, p) component means.
        chols: (K, p, p) lower Cholesky factors of the covariances.
        logdets: (K,) log determinants of the covariances.

    Returns:
        (n, K) array of log densities.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, p = y.shape
    K = mus.shape[0]
    out = np.empty((n, K))
    for k in range(K):
        z = solve_triangular(chols[k], (y - mus[k]).T, lower=True,
                             check_finite=False)
        quad = np.einsum("ij,ij->j", z, z)
        out[:, k] = -0.5 * (p * _LOG_2PI + logdets[k] + quad)
    return out


def weighted_scatter(y, w, centers):
    """Per-component weighted scatter matrices about fixed centers.

    Args:
        y: (n, p) observations.
        w: (n, K) nonnegative weights.
        centers: (K, p) centering vectors.

    Returns:
        (K, p, p) array with entries ``sum_i w[i,k] (y_i-c_k)(y_i-c_k)^T``.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, p = y.shape
    K = w.shape[1]
    out = np.empty((K, p, p))
    for k in range(K):
        d = y - centers[k]
        out[k] = (w[:, k, None] * d).T @ d
    return out
