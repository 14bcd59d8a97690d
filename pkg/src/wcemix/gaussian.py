"""Gaussian-mixture estimating-equation step.

The bias-correction integrals have closed forms under a Gaussian component,
so one sweep costs a weighted mean, a weighted scatter, and an eigenvalue
clip that enforces a pooled eigenvalue-ratio bound across components.
"""

from dataclasses import dataclass

import numpy as np

from . import _backend
from .core import update_mixing
from .distributions import chol_logdet, spd_cholesky
from .exceptions import ComponentCollapseError
from .params import GaussianParams, MixtureParams

_LOG_2PI = np.log(2.0 * np.pi)

# driver-level degeneracy thresholds
MIN_PI = 1e-6
MIN_EIGVAL = 1e-10


@dataclass
class GaussBiasTerms:
    """Closed-form correction scalars of one Gaussian component.

    b is the integral of f^(1+gamma); g enters the scatter-update denominator;
    c2_scale multiplies Sigma^{-1} in the scale-block correction term.
    """

    b: float
    g: float
    c2_scale: float


def gaussian_bias_terms(sigma, gamma, p=None):
    """Correction terms for density power ``gamma`` and covariance ``sigma``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if p is None:
        p = sigma.shape[0]
    logdet = chol_logdet(spd_cholesky(sigma))
    log_b = -0.5 * gamma * logdet - 0.5 * p * gamma * _LOG_2PI \
        - 0.5 * p * np.log1p(gamma)
    b = float(np.exp(log_b))
    g = gamma * b / (1.0 + gamma)
    return GaussBiasTerms(b=b, g=g, c2_scale=-0.5 * g)


def eigen_ratio_constrain(sigmas, c, weights=None):
    """Clip eigenvalues so the pooled max/min ratio is at most ``c``.

    The common clip interval [m, c*m] is chosen on a 200-point log grid to
    minimize the weighted squared log-distortion of the eigenvalues;
    eigenvectors are unchanged. Inputs already satisfying the bound are
    returned as-is.
    """
    sig = np.asarray(sigmas, dtype=np.float64)
    lam, vecs = np.linalg.eigh(sig)
    lo, hi = lam.min(), lam.max()
    if lo > 0 and hi / lo <= c * (1.0 + 1e-9):
        return [np.asarray(s) for s in sigmas]
    if weights is None:
        weights = np.ones(sig.shape[0])
    weights = np.asarray(weights, dtype=np.float64)
    lam_pos = np.maximum(lam, 1e-300)
    grid = np.geomspace(max(lo, 1e-300) / c, max(hi, 1e-300), 200)
    clipped = np.clip(lam_pos[None], grid[:, None, None],
                      (c * grid)[:, None, None])
    obj = ((np.log(lam_pos)[None] - np.log(clipped)) ** 2
           * weights[None, :, None]).sum(axis=(1, 2))
    m = grid[int(obj.argmin())]
    lam_c = np.clip(lam_pos, m, c * m)
    out = np.einsum("kij,kj,klj->kil", vecs, lam_c, vecs)
    out = 0.5 * (out + np.transpose(out, (0, 2, 1)))
    return list(out)


def gmm_ee_update(data, u, params: MixtureParams, gamma, eigen_ratio_c,
                  logf=None):
    """One estimating-equation sweep for a Gaussian mixture.

    Means and scatters are reweighted by u * f^gamma; the scatter denominator
    subtracts the correction g evaluated at the previous covariances, and the
    eigen-ratio bound is enforced afterwards. Degenerate denominators or
    vanishing mass raise ComponentCollapseError.
    """
    y = np.ascontiguousarray(data, dtype=np.float64)
    n, p = y.shape
    k = params.n_components
    mus = np.stack([c.mu for c in params.components])
    sigmas = np.stack([c.sigma for c in params.components])
    if logf is None:
        chols = np.stack([spd_cholesky(s) for s in sigmas])
        logdets = np.array([chol_logdet(ch) for ch in chols])
        logf = _backend.mvn_logpdf_matrix(y, mus, chols, logdets)
    w = np.exp(gamma * logf) if gamma > 0 else np.ones_like(logf)
    uw = np.ascontiguousarray(u * w)
    s0w = uw.sum(axis=0)
    s0u = u.sum(axis=0)
    if np.any(s0w <= 0):
        raise ComponentCollapseError("a component lost all weighted mass")

    bias = [gaussian_bias_terms(s, gamma, p) for s in sigmas]
    mu_new = (uw.T @ y) / s0w[:, None]
    scatter = _backend.weighted_scatter(y, uw, np.ascontiguousarray(mu_new))
    denom = s0w - np.array([t.g for t in bias]) * s0u
    if np.any(denom <= 0):
        raise ComponentCollapseError("nonpositive scatter denominator")
    sig_new = scatter / denom[:, None, None]
    sig_new = 0.5 * (sig_new + np.transpose(sig_new, (0, 2, 1)))

    eigvals = np.linalg.eigvalsh(sig_new)
    if eigvals.min() < MIN_EIGVAL:
        raise ComponentCollapseError("a covariance became numerically singular")
    if eigen_ratio_c is not None:
        sig_list = eigen_ratio_constrain(sig_new, eigen_ratio_c, weights=s0u)
    else:
        sig_list = list(sig_new)

    pi_new = update_mixing(u, w, np.array([t.b for t in bias]))
    if pi_new.min() < MIN_PI:
        raise ComponentCollapseError("a mixing probability collapsed")
    comps = [GaussianParams(mu_new[j], sig_list[j]) for j in range(k)]
    return MixtureParams("gaussian", pi_new, comps)


class _GaussianFamily:
    """Adapter wiring the Gaussian operations into the generic driver."""

    name = "gaussian"

    def coerce_data(self, data):
        y = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if y.ndim == 1:
            y = y[:, None]
        return y

    def n_obs(self, data):
        return data.shape[0]

    def initialize(self, data, k, rng, diversify=False):
        from .core import _init_gaussian
        return _init_gaussian(data, k, rng, diversify=diversify)

    def log_density_matrix(self, data, params):
        mus = np.stack([c.mu for c in params.components])
        chols = np.stack([spd_cholesky(c.sigma) for c in params.components])
        logdets = np.array([chol_logdet(ch) for ch in chols])
        return _backend.mvn_logpdf_matrix(data, mus, chols, logdets)

    def mixing_log_weights(self, data, params):
        return np.broadcast_to(np.log(params.pi), (data.shape[0],
                                                   params.n_components))

    def ee_step(self, data, u, logf, params, config):
        return gmm_ee_update(data, u, params, config.gamma,
                             config.eigen_ratio_c, logf=logf)

    def flatten(self, params):
        parts = [params.pi[:-1]]
        p = params.dim
        il, jl = np.tril_indices(p)
        for c in params.components:
            parts.append(c.mu)
            parts.append(c.sigma[il, jl])
        return np.concatenate(parts)

    def flat_layout(self, params):
        names = [f"pi[{j}]" for j in range(params.n_components - 1)]
        p = params.dim
        il, jl = np.tril_indices(p)
        for k in range(params.n_components):
            names += [f"mu[{k}][{j}]" for j in range(p)]
            names += [f"sigma[{k}][{i},{j}]" for i, j in zip(il, jl)]
        return names

    def unflatten(self, flat, template):
        k, p = template.n_components, template.dim
        il, jl = np.tril_indices(p)
        head = flat[:k - 1]
        pi = np.concatenate([head, [1.0 - head.sum()]])
        pos = k - 1
        comps = []
        for _ in range(k):
            mu = flat[pos:pos + p]
            pos += p
            sig = np.zeros((p, p))
            sig[il, jl] = flat[pos:pos + len(il)]
            sig[jl, il] = sig[il, jl]
            pos += len(il)
            comps.append(GaussianParams(mu, sig))
        return MixtureParams("gaussian", pi, comps)

    def n_free_params(self, params):
        k, p = params.n_components, params.dim
        return (k - 1) + k * (p + p * (p + 1) // 2)

    def component_log_density(self, data, params, k):
        c = params.components[k]
        from .distributions import mvn_logpdf_many
        return mvn_logpdf_many(data, c.mu, c.sigma)

    def draw_component_log_density(self, data, params, k, r_draws, rng):
        c = params.components[k]
        from .distributions import _sample_mvn, mvn_logpdf_many
        draws = _sample_mvn(c.mu, c.sigma, r_draws, rng)
        return mvn_logpdf_many(draws, c.mu, c.sigma)

    def closed_form_scores(self, data, params, k):
        from scipy.stats import chi2
        c = params.components[k]
        chol = spd_cholesky(c.sigma)
        from scipy.linalg import solve_triangular
        z = solve_triangular(chol, (data - c.mu).T, lower=True,
                             check_finite=False)
        d2 = np.einsum("ij,ij->j", z, z)
        return chi2.sf(d2, df=params.dim)

    def imputed_scores(self, data, params, gamma):
        from .core import softmax_rows
        y = data
        n, p = y.shape
        k = params.n_components
        logf = self.log_density_matrix(y, params)
        u = softmax_rows(self.mixing_log_weights(y, params) + logf)
        w = np.exp(gamma * logf) if gamma > 0 else np.ones_like(logf)
        bias = [gaussian_bias_terms(c.sigma, gamma, p)
                for c in params.components]
        il, jl = np.tril_indices(p)
        cols = []
        ref = (u[:, -1] * w[:, -1]
               / (params.pi[-1] * bias[-1].b))
        for j in range(k - 1):
            cols.append(u[:, j] * w[:, j] / (params.pi[j] * bias[j].b) - ref)
        for j in range(k):
            c = params.components[j]
            d = y - c.mu
            uwj = (u[:, j] * w[:, j])[:, None]
            cols.extend((uwj * d).T)
            outer = d[:, il] * d[:, jl]
            mat = (uwj * (c.sigma[il, jl][None] - outer)
                   - (u[:, j] * bias[j].g)[:, None] * c.sigma[il, jl][None])
            cols.extend(mat.T)
        return np.column_stack(cols)


FAMILY = _GaussianFamily()
