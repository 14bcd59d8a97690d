"""Skew-normal-mixture estimating-equation step.

Works through the hierarchical representation y = mu + psi*v + eps with a
positive half-normal latent v: the E-step imputes weighted moments of v in
closed form, and the EE-step then updates every parameter analytically. The
correction terms B and g are the Gaussian ones with the component scale
matrix, since conditionally on v the observation is Gaussian.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import log_ndtr

from . import _backend
from .core import update_mixing
from .distributions import (chol_logdet, inverse_mills, mvn_logpdf_many,
                            skew_normal_logpdf_many, sn_dp_transform,
                            spd_cholesky)
from .exceptions import ComponentCollapseError
from .gaussian import (MIN_EIGVAL, MIN_PI, eigen_ratio_constrain,
                       gaussian_bias_terms)
from .params import MixtureParams, SkewNormalParams

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class SnLatentStats:
    """Latent-variable quantities of one (observation, component) pair."""

    delta: float
    tau2: float
    t2: float
    m: float
    u_big: float
    v0: float
    v1: float
    v2: float


def _latent_arrays(y, s: SkewNormalParams, gamma):
    """Vectorized latent moments for every row of ``y`` under one component.

    Returns (delta, tau2, t2, m, u_big, v0, v1, v2) with scalar tau2/t2 and
    (n,) arrays elsewhere. gamma=0 is special-cased so the weight expectation
    is exactly one.
    """
    y2 = np.atleast_2d(np.asarray(y, dtype=np.float64))
    chol = spd_cholesky(s.sigma)
    d = y2 - s.mu
    siginv_psi = cho_solve((chol, True), s.psi, check_finite=False)
    q = float(s.psi @ siginv_psi)
    lin = d @ siginv_psi                      # psi' Sigma^{-1} (y - mu)
    tau2 = 1.0 / (q + 1.0)
    delta = lin * tau2
    if gamma == 0.0:
        t2 = tau2
        m = delta
        u_big = np.ones_like(lin)
    else:
        t2 = 1.0 / ((1.0 + gamma) * q + 1.0)
        m = t2 * (1.0 + gamma) * lin
        siginv_d = cho_solve((chol, True), d.T, check_finite=False)
        quad = np.einsum("ij,ji->i", d, siginv_d)
        t = np.sqrt(t2)
        tau = np.sqrt(tau2)
        log_u = (-0.5 * gamma * chol_logdet(chol)
                 - 0.5 * gamma * s.dim * _LOG_2PI
                 + log_ndtr(m / t) - log_ndtr(delta / tau)
                 + 0.5 * (np.log(t2) - np.log(tau2))
                 - 0.5 * gamma * quad
                 - 0.5 * delta * delta / tau2
                 + 0.5 * m * m / t2)
        u_big = np.exp(log_u)
    t = np.sqrt(t2)
    ratio = inverse_mills(m / t)
    v0 = u_big
    v1 = u_big * (m + t * ratio)
    v2 = u_big * (m * m + t2 + m * t * ratio)
    return delta, tau2, t2, m, u_big, v0, v1, v2


def snm_latent_expectations(y, s: SkewNormalParams, gamma):
    """Latent-moment record of a single observation."""
    delta, tau2, t2, m, u_big, v0, v1, v2 = _latent_arrays(y, s, gamma)
    return SnLatentStats(delta=float(delta[0]), tau2=float(tau2),
                         t2=float(t2), m=float(m[0]), u_big=float(u_big[0]),
                         v0=float(v0[0]), v1=float(v1[0]), v2=float(v2[0]))


def snm_ee_update(data, u, params: MixtureParams, gamma, eigen_ratio_c,
                  moments=None):
    """One estimating-equation sweep for a skew-normal mixture.

    ``moments``, when given, is the (v0, v1, v2) triple of (n, K) arrays from
    the E-step; otherwise it is recomputed at the current parameters. Updates
    follow the Gauss-Seidel order mu, psi, sigma within the sweep.
    """
    y = np.ascontiguousarray(data, dtype=np.float64)
    n, p = y.shape
    k = params.n_components
    if moments is None:
        v0 = np.empty((n, k))
        v1 = np.empty((n, k))
        v2 = np.empty((n, k))
        for j, c in enumerate(params.components):
            *_, v0j, v1j, v2j = _latent_arrays(y, c, gamma)
            v0[:, j], v1[:, j], v2[:, j] = v0j, v1j, v2j
    else:
        v0, v1, v2 = moments

    bias = [gaussian_bias_terms(c.sigma, gamma, p) for c in params.components]
    uv0 = u * v0
    uv1 = u * v1
    uv2 = u * v2
    s0 = uv0.sum(axis=0)
    s0u = u.sum(axis=0)
    if np.any(s0 <= 0):
        raise ComponentCollapseError("a component lost all weighted mass")

    comps = []
    sig_raw = np.empty((k, p, p))
    mus = np.empty((k, p))
    psis = np.empty((k, p))
    for j, c in enumerate(params.components):
        mu_new = (uv0[:, j] @ y - uv1[:, j].sum() * c.psi) / s0[j]
        d = y - mu_new
        denom_psi = uv2[:, j].sum()
        if denom_psi <= 0:
            raise ComponentCollapseError("vanishing skewness denominator")
        psi_new = (uv1[:, j] @ d) / denom_psi
        denom = s0[j] - bias[j].g * s0u[j]
        if denom <= 0:
            raise ComponentCollapseError("nonpositive scatter denominator")
        cross = uv1[:, j] @ d
        scatter = _backend.weighted_scatter(
            y, np.ascontiguousarray(uv0[:, j:j + 1]),
            np.ascontiguousarray(mu_new[None, :]))[0]
        eta = (scatter
               - np.outer(psi_new, cross)
               - np.outer(cross, psi_new)
               + denom_psi * np.outer(psi_new, psi_new))
        sig = eta / denom
        sig_raw[j] = 0.5 * (sig + sig.T)
        mus[j] = mu_new
        psis[j] = psi_new

    if np.linalg.eigvalsh(sig_raw).min() < MIN_EIGVAL:
        raise ComponentCollapseError("a scale matrix became numerically singular")
    if eigen_ratio_c is not None:
        sig_list = eigen_ratio_constrain(sig_raw, eigen_ratio_c, weights=s0u)
    else:
        sig_list = list(sig_raw)

    pi_new = update_mixing(u, v0, np.array([t.b for t in bias]))
    if pi_new.min() < MIN_PI:
        raise ComponentCollapseError("a mixing probability collapsed")
    for j in range(k):
        comps.append(SkewNormalParams(mus[j], psis[j], sig_list[j]))
    return MixtureParams("skew_normal", pi_new, comps)


class _SkewNormalFamily:
    """Adapter wiring the skew-normal operations into the generic driver."""

    name = "skew_normal"

    def coerce_data(self, data):
        y = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if y.ndim == 1:
            y = y[:, None]
        return y

    def n_obs(self, data):
        return data.shape[0]

    def initialize(self, data, k, rng, diversify=False):
        from .core import _init_skew_normal
        return _init_skew_normal(data, k, rng, diversify=diversify)

    def log_density_matrix(self, data, params):
        out = np.empty((data.shape[0], params.n_components))
        for j, c in enumerate(params.components):
            out[:, j] = skew_normal_logpdf_many(data, c)
        return out

    def mixing_log_weights(self, data, params):
        return np.broadcast_to(np.log(params.pi),
                               (data.shape[0], params.n_components))

    def ee_step(self, data, u, logf, params, config):
        return snm_ee_update(data, u, params, config.gamma,
                             config.eigen_ratio_c)

    def flatten(self, params):
        parts = [params.pi[:-1]]
        p = params.dim
        il, jl = np.tril_indices(p)
        for c in params.components:
            parts.append(c.mu)
            parts.append(c.psi)
            parts.append(c.sigma[il, jl])
        return np.concatenate(parts)

    def flat_layout(self, params):
        names = [f"pi[{j}]" for j in range(params.n_components - 1)]
        p = params.dim
        il, jl = np.tril_indices(p)
        for k in range(params.n_components):
            names += [f"mu[{k}][{j}]" for j in range(p)]
            names += [f"psi[{k}][{j}]" for j in range(p)]
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
            psi = flat[pos:pos + p]
            pos += p
            sig = np.zeros((p, p))
            sig[il, jl] = flat[pos:pos + len(il)]
            sig[jl, il] = sig[il, jl]
            pos += len(il)
            comps.append(SkewNormalParams(mu, psi, sig))
        return MixtureParams("skew_normal", pi, comps)

    def n_free_params(self, params):
        k, p = params.n_components, params.dim
        return (k - 1) + k * (2 * p + p * (p + 1) // 2)

    def component_log_density(self, data, params, k):
        return skew_normal_logpdf_many(data, params.components[k])

    def draw_component_log_density(self, data, params, k, r_draws, rng):
        from .distributions import _sample_mvn, truncnorm_plus_sample
        c = params.components[k]
        v = truncnorm_plus_sample(0.0, 1.0, r_draws, rng)
        eps = _sample_mvn(np.zeros(c.dim), c.sigma, r_draws, rng)
        draws = c.mu + v[:, None] * c.psi + eps
        return skew_normal_logpdf_many(draws, c)

    def closed_form_scores(self, data, params, k):
        return None

    def imputed_scores(self, data, params, gamma):
        from .core import softmax_rows
        y = data
        n, p = y.shape
        k = params.n_components
        logf = self.log_density_matrix(y, params)
        u = softmax_rows(self.mixing_log_weights(y, params) + logf)
        bias = [gaussian_bias_terms(c.sigma, gamma, p)
                for c in params.components]
        v0 = np.empty((n, k))
        v1 = np.empty((n, k))
        v2 = np.empty((n, k))
        for j, c in enumerate(params.components):
            *_, v0j, v1j, v2j = _latent_arrays(y, c, gamma)
            v0[:, j], v1[:, j], v2[:, j] = v0j, v1j, v2j
        il, jl = np.tril_indices(p)
        cols = []
        ref = u[:, -1] * v0[:, -1] / (params.pi[-1] * bias[-1].b)
        for j in range(k - 1):
            cols.append(u[:, j] * v0[:, j] / (params.pi[j] * bias[j].b) - ref)
        for j, c in enumerate(params.components):
            d = y - c.mu
            uj = u[:, j]
            cols.extend((uj[:, None] * (v0[:, j:j + 1] * d
                                        - np.outer(v1[:, j], c.psi))).T)
            cols.extend((uj[:, None] * (v1[:, j:j + 1] * d
                                        - np.outer(v2[:, j], c.psi))).T)
            outer = d[:, il] * d[:, jl]
            psi_d = (d[:, il] * c.psi[jl][None]
                     + d[:, jl] * c.psi[il][None])
            eta = (v0[:, j:j + 1] * outer
                   - v1[:, j:j + 1] * psi_d
                   + v2[:, j:j + 1] * (c.psi[il] * c.psi[jl])[None])
            mat = (uj[:, None] * (v0[:, j:j + 1] * c.sigma[il, jl][None] - eta)
                   - (uj * bias[j].g)[:, None] * c.sigma[il, jl][None])
            cols.extend(mat.T)
        return np.column_stack(cols)


FAMILY = _SkewNormalFamily()
