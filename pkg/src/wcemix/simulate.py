"""Scenario generators, evaluation metrics and the replication harness.

Scenarios reproduce the standard three-cluster Gaussian and two-cluster
skew-normal designs: inliers from the mixture, outliers uniform on a box
with the mixture's high-density region carved out. Replications own RNG
streams derived from the scenario seed, so study results do not depend on
the degree of parallelism.
"""

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import solve_triangular
from scipy.optimize import linear_sum_assignment

from .core import mixture_loglik_rows, run_eee
from .exceptions import ParameterizationError, WcemixError
from .params import (FitConfig, FitResult, GaussianParams, MixtureParams,
                     SkewNormalParams)
from .distributions import spd_cholesky, truncnorm_plus_sample


@dataclass
class Scenario:
    """Simulation configuration; true parameters default per the family."""

    family: str
    xi: float
    omega: float
    p: int
    n: int
    true_params: Optional[MixtureParams] = None
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.omega < 1:
            raise ParameterizationError("omega must lie in [0, 1)")
        if self.p < 2:
            raise ParameterizationError("scenarios need p >= 2")
        if self.true_params is None:
            if self.family == "gaussian":
                self.true_params = default_gaussian_params(self.xi, self.p)
            elif self.family == "skew_normal":
                self.true_params = default_skewnormal_params(self.xi, self.p)
            else:
                raise ParameterizationError(
                    f"no default parameters for family {self.family!r}")

    @property
    def n_outliers(self):
        return int(round(self.omega * self.n))


def _blockdiag(top, p):
    out = np.eye(p)
    out[:2, :2] = top
    return out


def default_gaussian_params(xi, p):
    """Three overlapping-to-separated clusters with mixing (0.3, 0.3, 0.4)."""
    mus = np.zeros((3, p))
    mus[0, :2] = (-xi, -xi)
    mus[1, :2] = (xi, -xi)
    mus[2, :2] = (xi, xi)
    tops = [np.array([[2.0, 0.3], [0.3, 1.0]]),
            np.array([[1.0, -0.3], [-0.3, 1.0]]),
            np.array([[1.0, 0.3], [0.3, 2.0]])]
    comps = [GaussianParams(mus[k], _blockdiag(tops[k], p)) for k in range(3)]
    return MixtureParams("gaussian", np.array([0.3, 0.3, 0.4]), comps)


def default_skewnormal_params(xi, p):
    """Two mirrored skewed clusters with mixing (0.4, 0.6)."""
    mu = np.zeros(p)
    mu[:2] = (xi, xi)
    psi = np.zeros(p)
    psi[:2] = (2.0, 2.0)
    sigma = _blockdiag(np.array([[1.0, 0.3], [0.3, 1.0]]), p)
    comps = [SkewNormalParams(mu, psi, sigma),
             SkewNormalParams(-mu, -psi, sigma)]
    return MixtureParams("skew_normal", np.array([0.4, 0.6]), comps)


def _outlier_box(p):
    lo = np.full(p, -3.0)
    hi = np.full(p, 3.0)
    lo[0], hi[0] = -10.0, 10.0
    lo[1], hi[1] = -5.0, 5.0
    return lo, hi


def _min_mahalanobis_sq(x, params):
    best = None
    for c in params.components:
        chol = spd_cholesky(c.sigma)
        zz = solve_triangular(chol, (x - c.mu).T, lower=True,
                              check_finite=False)
        d2 = np.einsum("ij,ij->j", zz, zz)
        best = d2 if best is None else np.minimum(best, d2)
    return best


def _draw_outliers(params, p, n_out, rng, max_proposals=1_000_000):
    if n_out == 0:
        return np.empty((0, p))
    lo, hi = _outlier_box(p)
    threshold = 5.0 * p
    out = []
    got = 0
    proposed = 0
    while got < n_out:
        batch = max(4 * (n_out - got), 256)
        if proposed + batch > max_proposals:
            batch = max_proposals - proposed
            if batch <= 0:
                raise WcemixError(
                    "outlier rejection sampling exhausted its proposal budget")
        x = rng.uniform(lo, hi, size=(batch, p))
        proposed += batch
        ok = _min_mahalanobis_sq(x, params) > threshold
        accepted = x[ok]
        out.append(accepted)
        got += len(accepted)
    return np.concatenate(out)[:n_out]


def _assemble(scn, inliers, labels_in, outliers, rng):
    n_out = len(outliers)
    data = np.concatenate([inliers, outliers])
    labels = np.concatenate([labels_in, np.full(n_out, -1, dtype=int)])
    delta = np.concatenate([np.zeros(len(inliers), dtype=bool),
                            np.ones(n_out, dtype=bool)])
    perm = rng.permutation(len(data))
    return data[perm], labels[perm], delta[perm]


def gen_gaussian_data(scn: Scenario):
    """Draw (data, true_labels, outlier_indicators); labels of outliers are -1."""
    if scn.family != "gaussian":
        raise ParameterizationError("scenario family must be gaussian")
    rng = np.random.default_rng(scn.seed)
    params = scn.true_params
    n_out = scn.n_outliers
    n_in = scn.n - n_out
    labels = rng.choice(params.n_components, size=n_in, p=params.pi)
    y = np.empty((n_in, scn.p))
    for k, c in enumerate(params.components):
        idx = labels == k
        z = rng.standard_normal((int(idx.sum()), scn.p))
        y[idx] = c.mu + z @ spd_cholesky(c.sigma).T
    outliers = _draw_outliers(params, scn.p, n_out, rng)
    return _assemble(scn, y, labels, outliers, rng)


def gen_skewnormal_data(scn: Scenario):
    """Skewed-cluster variant of the generator; same outlier scheme."""
    if scn.family != "skew_normal":
        raise ParameterizationError("scenario family must be skew_normal")
    rng = np.random.default_rng(scn.seed)
    params = scn.true_params
    n_out = scn.n_outliers
    n_in = scn.n - n_out
    labels = rng.choice(params.n_components, size=n_in, p=params.pi)
    y = np.empty((n_in, scn.p))
    for k, c in enumerate(params.components):
        idx = labels == k
        m = int(idx.sum())
        v = truncnorm_plus_sample(0.0, 1.0, m, rng)
        eps = rng.standard_normal((m, scn.p)) @ spd_cholesky(c.sigma).T
        y[idx] = c.mu + v[:, None] * c.psi + eps
    outliers = _draw_outliers(params, scn.p, n_out, rng)
    return _assemble(scn, y, labels, outliers, rng)


def generate(scn: Scenario):
    if scn.family == "gaussian":
        return gen_gaussian_data(scn)
    return gen_skewnormal_data(scn)


def _match_components(fitted: MixtureParams, truth: MixtureParams):
    """Permutation mapping fitted index -> true index, by mean distances."""
    mus_f = np.stack([c.mu for c in fitted.components])
    mus_t = np.stack([c.mu for c in truth.components])
    cost = np.linalg.norm(mus_f[:, None, :] - mus_t[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    return perm


def _mise_box(p):
    lo = np.full(p, -3.0)
    hi = np.full(p, 3.0)
    lo[:2], hi[:2] = -6.0, 6.0
    return lo, hi


def compute_metrics(fit: FitResult, truth, data, mc_points=3000, seed=0):
    """Per-replication error metrics against the generating truth.

    ``truth`` is the (true_params, true_labels, outlier_indicators) triple.
    Fitted components are aligned to the truth by minimum-cost matching on
    the means before any parameter comparison.
    """
    true_params, true_labels, delta = truth
    fitted = fit.params
    if fitted.n_components != true_params.n_components:
        raise WcemixError("fitted and true component counts differ")
    perm = _match_components(fitted, true_params)

    mse_mu = mse_sigma = mse_pi = mse_psi = 0.0
    has_psi = fitted.family == "skew_normal"
    for j, c in enumerate(fitted.components):
        t = true_params.components[perm[j]]
        mse_mu += float(((c.mu - t.mu) ** 2).sum())
        mse_sigma += float(((c.sigma - t.sigma) ** 2).sum())
        mse_pi += float((fitted.pi[j] - true_params.pi[perm[j]]) ** 2)
        if has_psi:
            mse_psi += float(((c.psi - t.psi) ** 2).sum())

    p = fitted.dim
    lo, hi = _mise_box(p)
    rng = np.random.default_rng([seed, 424243])
    pts = rng.uniform(lo, hi, size=(mc_points, p))
    f_hat = np.exp(mixture_loglik_rows(pts, fitted))
    f_true = np.exp(mixture_loglik_rows(pts, true_params))
    volume = float(np.prod(hi - lo))
    mise = volume * float(((f_hat - f_true) ** 2).mean())

    inlier = ~np.asarray(delta, dtype=bool)
    mapped = perm[fit.labels]
    mce = float((mapped[inlier] != true_labels[inlier]).mean())

    flags = np.asarray(fit.outlier_flags, dtype=bool)
    n_flagged = int(flags.sum())
    fdr = float(flags[inlier].sum() / n_flagged) if n_flagged else 0.0
    n_true_out = int((~inlier).sum())
    pw = float(flags[~inlier].sum() / n_true_out) if n_true_out else math.nan

    rec = {"mse_mu": mse_mu, "mse_sigma": mse_sigma, "mse_pi": mse_pi,
           "mise": mise, "mce": mce, "fdr": fdr, "pw": pw,
           "n_flagged": n_flagged, "iterations": fit.iterations,
           "converged": fit.converged}
    if has_psi:
        rec["mse_psi"] = mse_psi
    return rec


_METRIC_KEYS = ("mse_mu", "mse_sigma", "mse_pi", "mse_psi", "mise", "mce",
                "fdr", "pw")


@dataclass
class StudyReport:
    """Per-replication records plus per-method means and standard errors."""

    scenario: Scenario
    records: list
    summary: dict
    n_failures: dict = field(default_factory=dict)

    def write_csv(self, path):
        keys = ["method", "rep", "failed"] + [k for k in _METRIC_KEYS
                                              if any(k in r for r in self.records)]
        keys += ["n_flagged", "iterations", "converged"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
            writer.writeheader()
            for rec in self.records:
                writer.writerow(rec)

    def write_json(self, path):
        payload = {
            "schema": "wce/1",
            "scenario": {
                "family": self.scenario.family, "xi": self.scenario.xi,
                "omega": self.scenario.omega, "p": self.scenario.p,
                "n": self.scenario.n, "seed": self.scenario.seed,
            },
            "summary": self.summary,
            "n_failures": self.n_failures,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)


def _one_replication(scn, methods, rep):
    data_scn = replace(scn, seed=scn.seed + rep)
    data, labels, delta = generate(data_scn)
    truth = (scn.true_params, labels, delta)
    out = []
    k_true = scn.true_params.n_components
    for mi, (label, cfg) in enumerate(methods):
        fit_cfg = replace(cfg, seed=scn.seed + 100_000 * (rep + 1) + mi)
        rec = {"method": label, "rep": rep, "failed": False}
        try:
            fit = run_eee(scn.family, data, k_true, fit_cfg)
            rec.update(compute_metrics(fit, truth, data,
                                       seed=scn.seed + rep))
        except WcemixError as exc:
            rec["failed"] = True
            rec["error"] = str(exc)
        out.append(rec)
    return out


def run_study(scn: Scenario, methods, n_reps=100, parallelism=1):
    """Replicate fit-and-score runs; deterministic for fixed (seed, n_reps).

    ``methods`` is a list of (label, FitConfig) pairs applied to the same
    generated data within each replication. Failed replications are recorded
    with failed=True and excluded from the summary means, never dropped
    silently.
    """
    if n_reps < 1:
        raise ParameterizationError("n_reps must be >= 1")
    if parallelism and parallelism > 1:
        chunks = Parallel(n_jobs=parallelism)(
            delayed(_one_replication)(scn, methods, rep)
            for rep in range(n_reps))
    else:
        chunks = [_one_replication(scn, methods, rep) for rep in range(n_reps)]
    records = [rec for chunk in chunks for rec in chunk]

    summary = {}
    n_failures = {}
    for label, _ in methods:
        rows = [r for r in records if r["method"] == label and not r["failed"]]
        n_failures[label] = sum(1 for r in records
                                if r["method"] == label and r["failed"])
        stats = {}
        for key in _METRIC_KEYS:
            vals = np.array([r[key] for r in rows if key in r
                             and np.isfinite(r[key])])
            if len(vals):
                se = float(vals.std(ddof=1) / math.sqrt(len(vals))) \
                    if len(vals) > 1 else 0.0
                stats[key] = {"mean": float(vals.mean()), "se": se,
                              "n": int(len(vals))}
        summary[label] = stats
    return StudyReport(scenario=scn, records=records, summary=summary,
                       n_failures=n_failures)
