"""Sandwich asymptotic covariance of the weighted estimator.

The per-observation estimating functions are imputed with posterior
expectations of the latent variables; the bread matrix is the numeric
Jacobian built from the last two fixed-point iterates, falling back to
central differences for coordinates that stopped moving.
"""

from dataclasses import dataclass

import numpy as np

from .core import get_family
from .exceptions import InferenceError
from .params import FitResult, MixtureParams


@dataclass
class SandwichEstimate:
    """Covariance over the free parameter coordinates with a naming map."""

    cov: np.ndarray
    std_errors: np.ndarray
    param_layout: list


def imputed_score(y_i, params: MixtureParams, gamma, family=None):
    """Per-observation estimating function with latent values imputed."""
    fam = get_family(family or params.family)
    if params.family == "experts":
        x_row, y_val = y_i
        data = fam.coerce_data((np.atleast_2d(np.asarray(x_row)),
                                np.asarray([y_val])))
    else:
        data = fam.coerce_data(np.atleast_2d(np.asarray(y_i)))
    return fam.imputed_scores(data, params, gamma)[0]


def imputed_score_matrix(data, params: MixtureParams, gamma):
    """All n per-observation estimating functions, one row each."""
    fam = get_family(params.family)
    return fam.imputed_scores(fam.coerce_data(data), params, gamma)


def sandwich_covariance(fit: FitResult, data, gamma=None, family=None):
    """A^{-1} M A^{-T} / n covariance of the fitted free coordinates.

    A averages the Jacobian of the imputed scores, differenced between the
    final two iterates coordinate by coordinate; coordinates whose iterate
    difference is below 1e-10 use scaled central differences instead. M is
    the average outer product of the scores.
    """
    if fit.params_prev is None:
        raise InferenceError("fit does not carry its previous iterate")
    if gamma is None:
        gamma = fit.gamma
    params = fit.params
    fam = get_family(family or params.family)
    data = fam.coerce_data(data)
    n = fam.n_obs(data)

    flat = fam.flatten(params)
    flat_prev = fam.flatten(fit.params_prev)
    layout = fam.flat_layout(params)
    d = flat.shape[0]

    g0 = fam.imputed_scores(data, params, gamma)
    if g0.shape[1] != d:
        raise InferenceError("score length disagrees with the free layout")
    m_mat = g0.T @ g0 / n

    a_mat = np.empty((d, d))
    for j in range(d):
        step = flat[j] - flat_prev[j]
        if abs(step) >= 1e-10:
            pert = flat.copy()
            pert[j] = flat_prev[j]
            gj = fam.imputed_scores(data, fam.unflatten(pert, params), gamma)
            a_mat[:, j] = (g0 - gj).mean(axis=0) / step
        else:
            h = 1e-5 * (1.0 + abs(flat[j]))
            hi = flat.copy()
            hi[j] += h
            lo = flat.copy()
            lo[j] -= h
            g_hi = fam.imputed_scores(data, fam.unflatten(hi, params), gamma)
            g_lo = fam.imputed_scores(data, fam.unflatten(lo, params), gamma)
            a_mat[:, j] = (g_hi - g_lo).mean(axis=0) / (2.0 * h)

    cond = np.linalg.cond(a_mat)
    if not np.isfinite(cond) or cond > 1e12:
        raise InferenceError(
            f"bread matrix is numerically singular (condition {cond:.3e})")
    a_inv = np.linalg.solve(a_mat, np.eye(d))
    cov = a_inv @ m_mat @ a_inv.T / n
    cov = 0.5 * (cov + cov.T)
    std = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return SandwichEstimate(cov=cov, std_errors=std, param_layout=layout)
