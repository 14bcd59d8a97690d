"""Classification, outlier detection and trimmed-BIC model selection.

An observation is flagged when the probability that a fresh draw from its
assigned component has lower density than the observation does is at most
alpha. For Gaussian-type components that probability has a chi-square closed
form; the generic path estimates it by Monte Carlo with per-component draw
sets. The trimmed BIC rescales the non-outlier log-likelihood back to the
full sample size before adding the parameter penalty.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import get_family, mixture_loglik_rows, run_eee
from .exceptions import FitError, ParameterizationError, WcemixError
from .params import FitConfig, FitResult, MixtureParams


@dataclass
class OutlierReport:
    """Per-observation tail probabilities and the resulting flags."""

    scores: np.ndarray
    flags: np.ndarray
    alpha: float
    mc_draws: int


def outlier_score(y_i, theta_k, family, r_draws=10_000, seed=0,
                  method="auto"):
    """Tail probability of one observation under one component.

    The score is P(f(Y) <= f(y_i)) for Y drawn from the component; values
    near zero mark outliers. ``method`` is "chi2" (closed form, Gaussian-type
    components), "mc" (Monte Carlo with ``r_draws`` draws), or "auto".
    """
    if r_draws < 1000:
        raise ParameterizationError("r_draws must be at least 1000")
    fam = get_family(family)
    params, k, data = _single_component_view(fam, y_i, theta_k)
    if method == "auto":
        method = "mc" if fam.closed_form_scores(data, params, k) is None \
            else "chi2"
    if method == "chi2":
        scores = fam.closed_form_scores(data, params, k)
        if scores is None:
            raise ParameterizationError(
                f"no closed-form score for family {family!r}")
        return float(scores[0])
    rng = np.random.default_rng(seed)
    draw_logf = np.sort(fam.draw_component_log_density(data, params, k,
                                                       r_draws, rng))
    obs_logf = fam.component_log_density(data, params, k)
    return float(np.searchsorted(draw_logf, obs_logf[0], side="right")
                 / r_draws)


def _single_component_view(fam, y_i, theta_k):
    """Wrap one observation and one component in family-shaped containers."""
    from .params import (ExpertComponent, GaussianParams, RegressionData,
                         SkewNormalParams)
    if isinstance(theta_k, GaussianParams):
        params = MixtureParams("gaussian", np.array([1.0]), [theta_k])
        data = fam.coerce_data(np.atleast_2d(np.asarray(y_i, dtype=np.float64)))
    elif isinstance(theta_k, SkewNormalParams):
        params = MixtureParams("skew_normal", np.array([1.0]), [theta_k])
        data = fam.coerce_data(np.atleast_2d(np.asarray(y_i, dtype=np.float64)))
    elif isinstance(theta_k, ExpertComponent):
        comp = ExpertComponent(theta_k.beta, theta_k.sigma2, None)
        params = MixtureParams("experts", None, [comp])
        x_row, y_val = y_i
        data = RegressionData(np.atleast_2d(np.asarray(x_row, dtype=np.float64)),
                              np.asarray([y_val], dtype=np.float64))
    else:
        raise ParameterizationError(f"unsupported component {type(theta_k)!r}")
    return params, 0, data


def detect_outliers(fit: FitResult, data, alpha=0.01, r_draws=10_000, seed=0,
                    method="auto"):
    """Score every observation against its assigned component and flag.

    Monte Carlo scoring shares one seeded draw set per component (stream
    derived from (seed, component)), so a fixed seed reproduces the report
    bitwise.
    """
    fam = get_family(fit.params.family)
    data = fam.coerce_data(data)
    n = fam.n_obs(data)
    labels = fit.labels
    scores = np.empty(n)
    for k in range(fit.params.n_components):
        members = labels == k
        if not members.any():
            continue
        closed = fam.closed_form_scores(data, fit.params, k) \
            if method in ("auto", "chi2") else None
        if closed is not None:
            scores[members] = closed[members]
            continue
        if method == "chi2":
            raise ParameterizationError(
                f"no closed-form score for family {fit.params.family!r}")
        rng = np.random.default_rng([seed, k])
        draw_logf = np.sort(fam.draw_component_log_density(
            data, fit.params, k, r_draws, rng))
        obs_logf = fam.component_log_density(data, fit.params, k)
        scores[members] = np.searchsorted(
            draw_logf, obs_logf[members], side="right") / r_draws
    flags = scores <= alpha
    return OutlierReport(scores=scores, flags=flags, alpha=alpha,
                         mc_draws=r_draws)


def trimmed_bic(fit: FitResult, data, flags=None):
    """Information criterion over the non-flagged observations.

    -(2n/|S|) * sum_{i in S} log f_M(y_i) + |Psi| log n, reducing to the
    standard BIC when nothing is flagged.
    """
    fam = get_family(fit.params.family)
    data = fam.coerce_data(data)
    n = fam.n_obs(data)
    if flags is None:
        flags = fit.outlier_flags
    keep = ~np.asarray(flags, dtype=bool)
    n_keep = int(keep.sum())
    if n_keep < 1:
        raise WcemixError("every observation was flagged; criterion undefined")
    rows = mixture_loglik_rows(data, fit.params)
    penalty = fam.n_free_params(fit.params) * math.log(n)
    return float(-(2.0 * n / n_keep) * rows[keep].sum() + penalty)


@dataclass
class SelectionCell:
    k: int
    gamma: float
    trimmed_bic: float
    converged: bool
    failed: bool
    n_outliers: int


@dataclass
class SelectionResult:
    best_k: int
    best_gamma: float
    best_fit: FitResult
    table: list = field(default_factory=list)

    def per_gamma_minimizers(self):
        out = {}
        for cell in self.table:
            if cell.failed:
                continue
            cur = out.get(cell.gamma)
            if cur is None or cell.trimmed_bic < cur.trimmed_bic:
                out[cell.gamma] = cell
        return out


def select_model(data, family, k_grid, gamma_grid, config: FitConfig):
    """Fit every (K, gamma) cell and return the criterion minimizer.

    Failed cells are kept in the table with failed=True and excluded from the
    argmin. The best fit overall (and the per-gamma minimizers, via the
    result object) are reported for monitoring.
    """
    k_grid = list(k_grid)
    gamma_grid = list(gamma_grid)
    if not k_grid or not gamma_grid:
        raise ParameterizationError("selection grids must be nonempty")
    table = []
    best = None
    for gamma in gamma_grid:
        for k in k_grid:
            cfg = FitConfig(gamma=gamma, max_iter=config.max_iter,
                            tol=config.tol, n_starts=config.n_starts,
                            eigen_ratio_c=config.eigen_ratio_c,
                            seed=config.seed, alpha=config.alpha,
                            mc_draws=config.mc_draws)
            try:
                fit = run_eee(family, data, k, cfg)
            except (FitError, WcemixError):
                table.append(SelectionCell(k=k, gamma=gamma,
                                           trimmed_bic=math.nan,
                                           converged=False, failed=True,
                                           n_outliers=0))
                continue
            cell = SelectionCell(k=k, gamma=gamma,
                                 trimmed_bic=fit.trimmed_bic,
                                 converged=fit.converged, failed=False,
                                 n_outliers=int(fit.outlier_flags.sum()))
            table.append(cell)
            if best is None or fit.trimmed_bic < best[0].trimmed_bic:
                best = (fit, cell)
    if best is None:
        raise FitError("every selection cell failed")
    fit, cell = best
    return SelectionResult(best_k=cell.k, best_gamma=cell.gamma,
                           best_fit=fit, table=table)
