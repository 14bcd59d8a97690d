"""Dense probability primitives.

Multivariate normal and skew-normal densities, positive truncated-normal
moments, and seeded component samplers. All SPD work goes through Cholesky
factors; a failed factorization is retried once with a small diagonal jitter
before raising, which keeps fixed-point iterations alive near-degenerate
scale matrices.
"""

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import log_ndtr, ndtr, ndtri

from . import _backend
from .exceptions import ParameterizationError
from .params import ExpertComponent, GaussianParams, SkewNormalParams

_LOG_2PI = np.log(2.0 * np.pi)


def spd_cholesky(sigma):
    """Lower Cholesky factor of ``sigma`` with one jittered retry.

    The retry adds 1e-8 * trace/p to the diagonal; a second failure raises
    ParameterizationError.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        pass
    p = sigma.shape[0]
    jitter = 1e-8 * np.trace(sigma) / p
    try:
        return np.linalg.cholesky(sigma + jitter * np.eye(p))
    except np.linalg.LinAlgError:
        raise ParameterizationError(
            "matrix is not positive definite (Cholesky failed after jitter)"
        ) from None


def chol_logdet(chol):
    return 2.0 * np.log(np.diag(chol)).sum()


def inverse_mills(x):
    """phi(x)/Phi(x), stable deep in the left tail via log-domain erfc."""
    x = np.asarray(x, dtype=np.float64)
    log_phi = -0.5 * (x * x + _LOG_2PI)
    return np.exp(log_phi - log_ndtr(x))


def mvn_logpdf(y, g: GaussianParams):
    """Log Gaussian density of a single point, via Cholesky."""
    y = np.asarray(y, dtype=np.float64)
    chol = spd_cholesky(g.sigma)
    z = solve_triangular(chol, y - g.mu, lower=True, check_finite=False)
    return float(-0.5 * (g.dim * _LOG_2PI + chol_logdet(chol) + z @ z))


def mahalanobis_sq(y, g: GaussianParams):
    """(y-mu)' Sigma^{-1} (y-mu), computed through the Cholesky factor."""
    y = np.asarray(y, dtype=np.float64)
    chol = spd_cholesky(g.sigma)
    z = solve_triangular(chol, y - g.mu, lower=True, check_finite=False)
    return float(z @ z)


def mvn_logpdf_many(y, mu, sigma):
    """Log Gaussian density for each row of ``y`` under one component."""
    chol = spd_cholesky(sigma)
    logdet = chol_logdet(chol)
    y2 = np.atleast_2d(np.asarray(y, dtype=np.float64))
    out = _backend.mvn_logpdf_matrix(
        np.ascontiguousarray(y2),
        np.ascontiguousarray(mu[None, :]),
        np.ascontiguousarray(chol[None, :, :]),
        np.asarray([logdet]),
    )
    return out[:, 0]


def truncnorm_plus_moments(m, t):
    """First and second moments of a normal truncated to the positive line.

    Arguments are the pre-truncation mean ``m`` and standard deviation ``t``;
    both may be arrays. Returns (mean, second_moment).
    """
    m = np.asarray(m, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ParameterizationError("truncation scale t must be positive")
    ratio = inverse_mills(m / t)
    mean = m + t * ratio
    second = m * m + t * t + m * t * ratio
    if m.ndim == 0 and t.ndim == 0:
        return float(mean), float(second)
    return mean, second


def truncnorm_plus_sample(m, t, n, rng):
    """Sample N+(m, t^2) by inverse CDF with clamped uniforms."""
    u = rng.uniform(size=n)
    # P(v <= 0) under N(m, t^2); the inverse CDF maps u into its complement
    lower = ndtr(-np.asarray(m, dtype=np.float64) / t)
    arg = np.clip(lower + u * (1.0 - lower), 1e-16, 1.0 - 1e-16)
    return m + t * ndtri(arg)


def sn_dp_transform(s: SkewNormalParams):
    """Direct-parameterization quantities of a skew-normal component.

    Returns (omega_mat, alpha, omega_diag) where omega_mat = sigma + psi psi',
    omega_diag is the square root of its diagonal, and alpha is the shape
    vector of the closed-form density.
    """
    omega_mat = s.sigma + np.outer(s.psi, s.psi)
    chol = spd_cholesky(omega_mat)
    omega_inv_psi = cho_solve((chol, True), s.psi, check_finite=False)
    rest = 1.0 - s.psi @ omega_inv_psi
    if rest <= 0:
        raise ParameterizationError(
            "invalid skewness: 1 - psi' Omega^{-1} psi must be positive")
    omega_diag = np.sqrt(np.diag(omega_mat))
    alpha = omega_diag * omega_inv_psi / np.sqrt(rest)
    return omega_mat, alpha, omega_diag


def skew_normal_logpdf(y, s: SkewNormalParams):
    """Log density 2 phi_p(y; mu, Omega) Phi(alpha' omega^{-1} (y-mu))."""
    omega_mat, alpha, omega_diag = sn_dp_transform(s)
    y = np.asarray(y, dtype=np.float64)
    base = mvn_logpdf(y, GaussianParams(s.mu, omega_mat))
    lin = alpha @ ((y - s.mu) / omega_diag)
    return float(np.log(2.0) + base + log_ndtr(lin))


def skew_normal_logpdf_many(y, s: SkewNormalParams):
    """Vectorized skew-normal log density for each row of ``y``."""
    omega_mat, alpha, omega_diag = sn_dp_transform(s)
    base = mvn_logpdf_many(y, s.mu, omega_mat)
    lin = (np.atleast_2d(y) - s.mu) / omega_diag @ alpha
    return np.log(2.0) + base + log_ndtr(lin)


def _sample_mvn(mu, sigma, n, rng):
    chol = spd_cholesky(sigma)
    z = rng.standard_normal((n, mu.shape[0]))
    return mu + z @ chol.T


def sample_component(model_family, params, n, rng_seed):
    """Draw ``n`` i.i.d. rows from one component density, seeded.

    For the experts family ``params`` is a pair (component, x) where x is the
    design matrix row(s) to condition on; the return value is a response
    vector of length n (x a single row) or of len(x) (one draw per row,
    n ignored).
    """
    if n < 1:
        raise ParameterizationError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    if model_family == "gaussian":
        g = params if isinstance(params, GaussianParams) else GaussianParams(*params)
        return _sample_mvn(g.mu, g.sigma, n, rng)
    if model_family == "skew_normal":
        s = params if isinstance(params, SkewNormalParams) else SkewNormalParams(*params)
        v = truncnorm_plus_sample(0.0, 1.0, n, rng)
        eps = _sample_mvn(np.zeros(s.dim), s.sigma, n, rng)
        return s.mu + v[:, None] * s.psi + eps
    if model_family == "experts":
        comp, x = params
        if not isinstance(comp, ExpertComponent):
            comp = ExpertComponent(*comp)
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        m = x.shape[0] if x.shape[0] > 1 else n
        mean = x @ comp.beta
        if x.shape[0] == 1:
            mean = np.full(m, mean[0])
        return mean + np.sqrt(comp.sigma2) * rng.standard_normal(m)
    raise ParameterizationError(f"unknown family {model_family!r}")
