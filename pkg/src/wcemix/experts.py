"""Mixture-of-experts estimating-equation step.

Gaussian regression experts with softmax gating on the shared design matrix.
Regression coefficients and variances update in closed form; the gating
vectors maximize a weighted multinomial log-likelihood by Newton steps with
halving. The last component is the gating reference (empty eta).
"""

import numpy as np

from .exceptions import ComponentCollapseError
from .params import ExpertComponent, MixtureParams, RegressionData

_LOG_2PI = np.log(2.0 * np.pi)

MIN_MASS = 1e-6

_NEWTON_MAX_ITER = 100
_NEWTON_MAX_HALVINGS = 20


def gating_probs(x_row, etas):
    """Softmax gating probabilities for one covariate vector.

    ``etas`` holds the K-1 non-reference gating vectors; the last component's
    vector is the implicit zero.
    """
    x_row = np.asarray(x_row, dtype=np.float64)
    logits = np.array([x_row @ e for e in etas] + [0.0])
    logits -= logits.max()
    ex = np.exp(logits)
    return ex / ex.sum()


def gating_log_probs_matrix(x, etas):
    """Row-wise log gating probabilities for a design matrix."""
    n = x.shape[0]
    k = len(etas) + 1
    logits = np.zeros((n, k))
    for j, e in enumerate(etas):
        logits[:, j] = x @ e
    logits -= logits.max(axis=1, keepdims=True)
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def moe_bias_terms(sigma2, gamma):
    """Correction scalars of one Gaussian expert.

    The returned pair (b, c2) is covariate-free because the weight integral
    of a Gaussian regression does not involve the conditioning point.
    """
    b = (2.0 * np.pi * sigma2) ** (-0.5 * gamma) * (1.0 + gamma) ** (-0.5)
    c2 = -0.5 * gamma * sigma2 ** (-1.0 - 0.5 * gamma) \
        * (2.0 * np.pi) ** (-0.5 * gamma) * (1.0 + gamma) ** (-1.5)
    return float(b), float(c2)


def _expert_logf_matrix(data: RegressionData, params: MixtureParams):
    n = data.n
    k = params.n_components
    out = np.empty((n, k))
    for j, c in enumerate(params.components):
        r = data.y - data.x @ c.beta
        out[:, j] = -0.5 * (_LOG_2PI + np.log(c.sigma2) + r * r / c.sigma2)
    return out


def moe_ee_update(data: RegressionData, u, params: MixtureParams, gamma,
                  logf=None):
    """Closed-form beta and sigma^2 updates of every expert.

    Weighted normal equations with weights u * f^gamma; the variance
    denominator subtracts the correction evaluated at the previous variance.
    Returns (components, w_new) where w_new holds the density weights at the
    updated expert parameters, as the gating step consumes them.
    """
    if logf is None:
        logf = _expert_logf_matrix(data, params)
    w = np.exp(gamma * logf) if gamma > 0 else np.ones_like(logf)
    uw = u * w
    s0w = uw.sum(axis=0)
    s0u = u.sum(axis=0)
    if np.any(s0w <= 0):
        raise ComponentCollapseError("an expert lost all weighted mass")
    comps = []
    for j, c in enumerate(params.components):
        wj = uw[:, j]
        xtw = data.x.T * wj
        try:
            beta = np.linalg.solve(xtw @ data.x, xtw @ data.y)
        except np.linalg.LinAlgError:
            raise ComponentCollapseError(
                "singular weighted design in an expert update") from None
        r = data.y - data.x @ beta
        g1 = gamma * (2.0 * np.pi * c.sigma2) ** (-0.5 * gamma) \
            * (1.0 + gamma) ** (-1.5)
        denom = s0w[j] - g1 * s0u[j]
        if denom <= 0:
            raise ComponentCollapseError("nonpositive variance denominator")
        sigma2 = float(wj @ (r * r) / denom)
        if sigma2 < 1e-12:
            raise ComponentCollapseError("an expert variance collapsed")
        comps.append(ExpertComponent(beta, sigma2, c.eta))
    w_new = None
    if gamma > 0:
        tmp = MixtureParams("experts", None, comps)
        w_new = np.exp(gamma * _expert_logf_matrix(data, tmp))
    else:
        w_new = np.ones_like(logf)
    return comps, w_new


def _weighted_multinomial_objective(x, ut, etas_flat, k, q):
    etas = [etas_flat[j * q:(j + 1) * q] for j in range(k - 1)]
    logg = gating_log_probs_matrix(x, etas)
    return float((ut * logg).sum()), logg


def moe_gating_update(data: RegressionData, u, w, b_terms, etas_init):
    """Maximize the weighted multinomial gating likelihood by Newton steps.

    ``b_terms`` holds the per-component weight integrals; the effective
    per-row class weights are u * w / b. Step halving keeps the objective
    non-decreasing; failure to reach gradient norm 1e-8 * n within 100 steps
    raises to the driver.
    """
    x = data.x
    n, q = x.shape
    k = u.shape[1]
    if k == 1:
        return []
    ut = u * w / np.asarray(b_terms)[None, :]
    eta = np.concatenate([np.asarray(e, dtype=np.float64) for e in etas_init]) \
        if etas_init else np.zeros(0)
    if eta.size != (k - 1) * q:
        raise ValueError("etas_init has the wrong total length")

    row_tot = ut.sum(axis=1)
    tol = 1e-8 * n
    obj, logg = _weighted_multinomial_objective(x, ut, eta, k, q)
    for _ in range(_NEWTON_MAX_ITER):
        g = np.exp(logg)
        grad = np.empty((k - 1) * q)
        for j in range(k - 1):
            grad[j * q:(j + 1) * q] = x.T @ (ut[:, j] - row_tot * g[:, j])
        if np.max(np.abs(grad)) < tol:
            break
        hess = np.empty(((k - 1) * q, (k - 1) * q))
        for j in range(k - 1):
            for m in range(j, k - 1):
                wjm = row_tot * g[:, j] * ((j == m) - g[:, m])
                block = -(x.T * wjm) @ x
                hess[j * q:(j + 1) * q, m * q:(m + 1) * q] = block
                hess[m * q:(m + 1) * q, j * q:(j + 1) * q] = block.T
        # tiny ridge guards rank deficiency when weights concentrate
        hess -= 1e-10 * np.abs(np.trace(hess)) * np.eye(hess.shape[0])
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            raise ComponentCollapseError("singular gating Hessian") from None
        scale = 1.0
        for _ in range(_NEWTON_MAX_HALVINGS):
            cand = eta + scale * step
            cand_obj, cand_logg = _weighted_multinomial_objective(
                x, ut, cand, k, q)
            if cand_obj >= obj:
                break
            scale *= 0.5
        else:
            break
        eta, obj, logg = cand, cand_obj, cand_logg
    else:
        raise ComponentCollapseError("gating update failed to converge")
    if np.max(np.abs(grad)) >= tol:
        # loop may have exited on a stalled halving search
        obj2, logg2 = _weighted_multinomial_objective(x, ut, eta, k, q)
        g2 = np.exp(logg2)
        grad = np.concatenate([x.T @ (ut[:, j] - row_tot * g2[:, j])
                               for j in range(k - 1)])
        if np.max(np.abs(grad)) >= tol:
            raise ComponentCollapseError("gating update failed to converge")
    return [eta[j * q:(j + 1) * q] for j in range(k - 1)]


class _ExpertsFamily:
    """Adapter wiring the mixture-of-experts operations into the driver."""

    name = "experts"

    def coerce_data(self, data):
        if isinstance(data, RegressionData):
            return data
        x, y = data
        return RegressionData(np.asarray(x, dtype=np.float64),
                              np.asarray(y, dtype=np.float64))

    def n_obs(self, data):
        return data.n

    def initialize(self, data, k, rng, diversify=False):
        # the random K-way split is already seed-diverse
        from .core import _init_experts
        return _init_experts(data, k, rng)

    def log_density_matrix(self, data, params):
        return _expert_logf_matrix(data, params)

    def mixing_log_weights(self, data, params):
        etas = [c.eta for c in params.components if c.eta is not None]
        return gating_log_probs_matrix(data.x, etas)

    def ee_step(self, data, u, logf, params, config):
        if np.min(u.sum(axis=0)) / data.n < MIN_MASS:
            raise ComponentCollapseError("an expert lost its membership mass")
        comps, w_new = moe_ee_update(data, u, params, config.gamma, logf=logf)
        b_new = np.array([moe_bias_terms(c.sigma2, config.gamma)[0]
                          for c in comps])
        etas_init = [c.eta for c in params.components if c.eta is not None]
        etas = moe_gating_update(data, u, w_new, b_new, etas_init)
        out = []
        for j, c in enumerate(comps):
            eta = etas[j] if j < len(etas) else None
            out.append(ExpertComponent(c.beta, c.sigma2, eta))
        return MixtureParams("experts", None, out)

    def flatten(self, params):
        parts = [c.eta for c in params.components if c.eta is not None]
        for c in params.components:
            parts.append(c.beta)
            parts.append(np.array([c.sigma2]))
        return np.concatenate(parts)

    def flat_layout(self, params):
        q = params.dim
        k = params.n_components
        names = []
        for j in range(k - 1):
            names += [f"eta[{j}][{i}]" for i in range(q)]
        for j in range(k):
            names += [f"beta[{j}][{i}]" for i in range(q)]
            names.append(f"sigma2[{j}]")
        return names

    def unflatten(self, flat, template):
        k, q = template.n_components, template.dim
        pos = 0
        etas = []
        for _ in range(k - 1):
            etas.append(flat[pos:pos + q])
            pos += q
        comps = []
        for j in range(k):
            beta = flat[pos:pos + q]
            pos += q
            sigma2 = float(flat[pos])
            pos += 1
            comps.append(ExpertComponent(beta, sigma2,
                                         etas[j] if j < k - 1 else None))
        return MixtureParams("experts", None, comps)

    def n_free_params(self, params):
        k, q = params.n_components, params.dim
        return (k - 1) * q + k * (q + 1)

    def component_log_density(self, data, params, k):
        c = params.components[k]
        r = data.y - data.x @ c.beta
        return -0.5 * (_LOG_2PI + np.log(c.sigma2) + r * r / c.sigma2)

    def draw_component_log_density(self, data, params, k, r_draws, rng):
        # the draw density only depends on the standardized residual, so the
        # conditioning covariates drop out of the comparison
        c = params.components[k]
        z = rng.standard_normal(r_draws)
        return -0.5 * (_LOG_2PI + np.log(c.sigma2) + z * z)

    def closed_form_scores(self, data, params, k):
        from scipy.stats import chi2
        c = params.components[k]
        r = data.y - data.x @ c.beta
        return chi2.sf(r * r / c.sigma2, df=1)

    def imputed_scores(self, data, params, gamma):
        from .core import softmax_rows
        logf = self.log_density_matrix(data, params)
        u = softmax_rows(self.mixing_log_weights(data, params) + logf)
        w = np.exp(gamma * logf) if gamma > 0 else np.ones_like(logf)
        k = params.n_components
        b = np.array([moe_bias_terms(c.sigma2, gamma)[0]
                      for c in params.components])
        ut = u * w / b[None, :]
        row_tot = ut.sum(axis=1)
        etas = [c.eta for c in params.components if c.eta is not None]
        g = np.exp(gating_log_probs_matrix(data.x, etas))
        cols = []
        for j in range(k - 1):
            cols.extend((data.x * (ut[:, j] - row_tot * g[:, j])[:, None]).T)
        for j, c in enumerate(params.components):
            r = data.y - data.x @ c.beta
            uwj = u[:, j] * w[:, j]
            cols.extend((data.x * (uwj * r)[:, None]).T)
            g1 = gamma * (2.0 * np.pi * c.sigma2) ** (-0.5 * gamma) \
                * (1.0 + gamma) ** (-1.5)
            cols.append(uwj * (c.sigma2 - r * r) - u[:, j] * g1 * c.sigma2)
        return np.column_stack(cols)


FAMILY = _ExpertsFamily()
