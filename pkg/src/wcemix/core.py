"""Family-agnostic weighted estimating-equation machinery.

The fitting loop alternates an E-step (posterior membership probabilities)
with a family-specific estimating-equation step in which every observation's
contribution is damped by its component density raised to the power gamma.
Bias-correction integrals restore unbiasedness of the weighted equations;
gamma=0 reduces every update to the classical EM algorithm.

Multi-start: each start owns the RNG stream ``seed + start_index``; collapsed
starts are redrawn from fresh streams, and the surviving solutions are ranked
by the trimmed information criterion.
"""

import warnings

import numpy as np
from scipy.special import logsumexp

from .exceptions import (ComponentCollapseError, FitError,
                         InitializationError, ParameterizationError)
from .params import (ExpertComponent, FitConfig, FitResult, GaussianParams,
                     MixtureParams, RegressionData, SkewNormalParams)
from . import distributions as dist


def get_family(name):
    """Return the family adapter singleton for ``name``."""
    from . import experts, gaussian, skewnormal

    table = {
        "gaussian": gaussian.FAMILY,
        "experts": experts.FAMILY,
        "skew_normal": skewnormal.FAMILY,
    }
    try:
        return table[name]
    except KeyError:
        raise ParameterizationError(f"unknown family {name!r}") from None


def softmax_rows(logits):
    """Row-wise softmax with max subtraction; degenerate rows become uniform.

    A row whose every entry is -inf or NaN carries no density information;
    it is assigned the uniform distribution and a warning is emitted.
    """
    logits = np.asarray(logits, dtype=np.float64)
    mx = logits.max(axis=1, keepdims=True)
    bad = ~np.isfinite(mx[:, 0])
    if np.any(bad):
        warnings.warn(f"{int(bad.sum())} rows had vanishing density under "
                      "every component; assigned uniform responsibilities")
        mx = np.where(np.isfinite(mx), mx, 0.0)
    ex = np.exp(logits - mx)
    ex[bad] = 1.0
    return ex / ex.sum(axis=1, keepdims=True)


def responsibilities(data, params: MixtureParams):
    """Posterior membership probabilities, one row per observation."""
    fam = get_family(params.family)
    data = fam.coerce_data(data)
    logf = fam.log_density_matrix(data, params)
    return softmax_rows(fam.mixing_log_weights(data, params) + logf)


def density_weight(y, theta, gamma):
    """Component density raised to the power gamma, exp(gamma * logpdf)."""
    if gamma < 0:
        raise ParameterizationError("gamma must be nonnegative")
    if isinstance(theta, GaussianParams):
        lp = dist.mvn_logpdf(y, theta)
    elif isinstance(theta, SkewNormalParams):
        lp = dist.skew_normal_logpdf(y, theta)
    elif isinstance(theta, tuple) and isinstance(theta[0], ExpertComponent):
        comp, x = theta
        mean = float(np.asarray(x, dtype=np.float64) @ comp.beta)
        lp = (-0.5 * np.log(2.0 * np.pi * comp.sigma2)
              - 0.5 * (float(y) - mean) ** 2 / comp.sigma2)
    else:
        raise ParameterizationError(f"unsupported component {type(theta)!r}")
    return float(np.exp(gamma * lp))


def update_mixing(u, w, b):
    """Solve the weighted equation for the mixing probabilities.

    pi_k is proportional to sum_i u[i,k] w[i,k] / b[k]; a vanishing numerator
    signals a collapsed component to the driver.
    """
    num = (np.asarray(u) * np.asarray(w)).sum(axis=0) / np.asarray(b)
    if np.any(num <= 0):
        raise ComponentCollapseError("a mixing-probability numerator vanished")
    return num / num.sum()


# ---------------------------------------------------------------------------
# initialization strategies


def _kmeanspp_centers(y, k, rng):
    n = y.shape[0]
    centers = np.empty((k, y.shape[1]))
    centers[0] = y[rng.integers(n)]
    d2 = ((y - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = y[rng.integers(n)]
        else:
            centers[j] = y[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((y - centers[j]) ** 2).sum(axis=1))
    return centers


def _trimmed_kmeans_assign(y, k, rng, trim=0.1, n_iter=10):
    centers = _kmeanspp_centers(y, k, rng)
    for _ in range(n_iter):
        d2 = ((y[:, None, :] - centers[None]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        nearest = d2[np.arange(len(y)), assign]
        cutoff = np.quantile(nearest, 1.0 - trim) if trim > 0 else np.inf
        keep = nearest <= cutoff
        for j in range(k):
            pts = y[keep & (assign == j)]
            if len(pts):
                centers[j] = pts.mean(axis=0)
    d2 = ((y[:, None, :] - centers[None]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def _trimmed_subset(pts, trim=0.1):
    center = np.median(pts, axis=0)
    d2 = ((pts - center) ** 2).sum(axis=1)
    cutoff = np.quantile(d2, 1.0 - trim) if trim > 0 else np.inf
    return pts[d2 <= cutoff]


def _trimmed_moments(pts, trim=0.1):
    sub = _trimmed_subset(pts, trim)
    mu = sub.mean(axis=0)
    d = sub - mu
    cov = d.T @ d / len(sub)
    return mu, cov


def _ensure_spd(cov):
    p = cov.shape[0]
    bump = 1e-6 * max(np.trace(cov) / p, 1e-12)
    for _ in range(3):
        try:
            np.linalg.cholesky(cov)
            return cov
        except np.linalg.LinAlgError:
            cov = cov + bump * np.eye(p)
            bump *= 100
    raise InitializationError("degenerate cluster covariance")


def _column_skewness(pts):
    d = pts - pts.mean(axis=0)
    m2 = (d ** 2).mean(axis=0)
    m3 = (d ** 3).mean(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        g1 = np.where(m2 > 0, m3 / np.maximum(m2, 1e-300) ** 1.5, 0.0)
    return np.nan_to_num(g1)


def _init_gaussian(y, k, rng, trim=0.1, diversify=False):
    n, p = y.shape
    if n <= k * p:
        raise InitializationError(f"need n > K*p observations (n={n}, K={k}, p={p})")
    assign = _trimmed_kmeans_assign(y, k, rng, trim=trim)
    comps, counts = [], []
    for j in range(k):
        pts = y[assign == j]
        if len(pts) <= p:
            raise InitializationError("a cluster seed captured too few points")
        mu, cov = _trimmed_moments(pts, trim=trim)
        if diversify:
            mu = mu + 0.3 * np.sqrt(np.diag(cov)) * rng.standard_normal(p)
        comps.append(GaussianParams(mu, _ensure_spd(cov)))
        counts.append(len(pts))
    pi = np.asarray(counts, dtype=np.float64)
    return MixtureParams("gaussian", pi / pi.sum(), comps)


def _init_skew_normal(y, k, rng, trim=0.1, diversify=False):
    n, p = y.shape
    if n <= k * p:
        raise InitializationError(f"need n > K*p observations (n={n}, K={k}, p={p})")
    assign = _trimmed_kmeans_assign(y, k, rng, trim=trim)
    comps = []
    for j in range(k):
        pts = y[assign == j]
        if len(pts) <= p:
            raise InitializationError("a cluster seed captured too few points")
        sub = _trimmed_subset(pts, trim)
        mu = sub.mean(axis=0)
        psi = _column_skewness(sub)
        if diversify:
            # fresh starts explore shape space around a moment-matched guess
            # (third central moment of mu + psi*halfnormal + noise is
            # 0.218*psi^3), with jitter, occasional sign flips, and the
            # location moved to preserve the first moment
            spread = sub.std(axis=0)
            m3 = ((sub - mu) ** 3).mean(axis=0)
            psi_mm = 1.6614 * np.cbrt(m3)
            sign = np.where(rng.random(p) < 0.1, -1.0, 1.0)
            psi = sign * psi_mm * rng.uniform(0.7, 1.3, size=p) \
                + 0.25 * spread * rng.standard_normal(p)
            mu = mu - psi * np.sqrt(2.0 / np.pi)
        comps.append(SkewNormalParams(mu, psi, np.eye(p)))
    return MixtureParams("skew_normal", np.full(k, 1.0 / k), comps)


def _huber_regression(x, y, n_iter=50):
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    scale = 1.0
    for _ in range(n_iter):
        r = y - x @ beta
        scale = 1.4826 * np.median(np.abs(r - np.median(r)))
        scale = max(scale, 1e-8 * max(np.abs(y).max(), 1.0), 1e-300)
        cut = 1.345 * scale
        wts = np.where(np.abs(r) <= cut, 1.0, cut / np.abs(r))
        new = np.linalg.solve(x.T @ (wts[:, None] * x), x.T @ (wts * y))
        if np.max(np.abs(new - beta)) < 1e-10 * (1 + np.max(np.abs(beta))):
            beta = new
            break
        beta = new
    return beta, max(scale ** 2, 1e-10)


def _init_experts(data: RegressionData, k, rng):
    n, q = data.x.shape
    if n <= k * (q + 1):
        raise InitializationError("too few observations for the expert count")
    perm = rng.permutation(n)
    groups = np.array_split(perm, k)
    comps = []
    for j, idx in enumerate(groups):
        if len(idx) <= q:
            raise InitializationError("a random split group is too small")
        beta, s2 = _huber_regression(data.x[idx], data.y[idx])
        eta = np.zeros(q) if j < k - 1 else None
        comps.append(ExpertComponent(beta, s2, eta))
    return MixtureParams("experts", None, comps)


def initialize(family, data, k, strategy=None, seed=0):
    """Construct starting values; deterministic given ``seed``.

    Strategies: "trimmed_kmeans" (default for gaussian and skew_normal) seeds
    with k-means++ and robust per-cluster moments; "random_split" (experts)
    fits a robust regression per random group with zero gating coefficients.
    """
    fam = get_family(family)
    data = fam.coerce_data(data)
    rng = np.random.default_rng(seed)
    defaults = {"gaussian": "trimmed_kmeans", "skew_normal": "trimmed_kmeans",
                "experts": "random_split"}
    strategy = strategy or defaults[family]
    if family == "gaussian" and strategy == "trimmed_kmeans":
        return _init_gaussian(data, k, rng)
    if family == "skew_normal" and strategy == "trimmed_kmeans":
        return _init_skew_normal(data, k, rng)
    if family == "experts" and strategy == "random_split":
        return _init_experts(data, k, rng)
    raise InitializationError(f"unknown strategy {strategy!r} for {family}")


# ---------------------------------------------------------------------------
# fixed-point driver


def _fit_single(fam, data, params, config: FitConfig, start_index=0):
    flat = fam.flatten(params)
    trace = []
    converged = False
    prev_params = params
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        logf = fam.log_density_matrix(data, params)
        u = softmax_rows(fam.mixing_log_weights(data, params) + logf)
        new_params = fam.ee_step(data, u, logf, params, config)
        new_flat = fam.flatten(new_params)
        delta = float(np.max(np.abs(new_flat - flat) / (1.0 + np.abs(flat))))
        trace.append(delta)
        prev_params, params, flat = params, new_params, new_flat
        if delta < config.tol:
            converged = True
            break
    logf = fam.log_density_matrix(data, params)
    u = softmax_rows(fam.mixing_log_weights(data, params) + logf)
    labels = u.argmax(axis=1)
    n = u.shape[0]
    return FitResult(
        params=params,
        responsibilities=u,
        labels=labels,
        outlier_flags=np.zeros(n, dtype=bool),
        outlier_scores=np.ones(n),
        trimmed_bic=np.nan,
        iterations=iterations,
        converged=converged,
        objective_trace=trace,
        params_prev=prev_params,
        start_index=start_index,
        gamma=config.gamma,
    )


def run_eee(family, data, k, config: FitConfig, initial_params=None):
    """Multi-start fixed-point fit of one mixture family.

    Runs ``config.n_starts`` independent starts (a single one when
    ``initial_params`` is given), scores each solution by the trimmed
    information criterion at ``config.alpha``, and returns the minimizer.
    Collapsed starts are redrawn from fresh seeds; once the failure budget
    3 * n_starts is spent, a FitError reports the failure mode.
    """
    from . import selection

    fam = get_family(family)
    data = fam.coerce_data(data)
    results = []
    failures = 0
    budget = 3 * max(config.n_starts, 1)
    last_failure = "no starts attempted"
    n_starts = 1 if initial_params is not None else config.n_starts
    for s in range(n_starts):
        seed_s = config.seed + s
        while True:
            try:
                if initial_params is not None:
                    p0 = initial_params
                else:
                    p0 = fam.initialize(data, k, np.random.default_rng(seed_s),
                                        diversify=(s > 0 or failures > 0))
                results.append(_fit_single(fam, data, p0, config, start_index=s))
                break
            except (ComponentCollapseError, InitializationError) as exc:
                last_failure = str(exc)
                failures += 1
                if initial_params is not None or failures >= budget:
                    if initial_params is not None:
                        raise
                    raise FitError(
                        f"all starts failed after {failures} attempts; "
                        f"last failure: {last_failure}") from exc
                seed_s = config.seed + config.n_starts + failures

    pool = [r for r in results if r.converged]
    if not pool:
        warnings.warn("no start converged within max_iter; returning the "
                      "best non-converged solution")
        pool = results
    for res in pool:
        report = selection.detect_outliers(res, data, alpha=config.alpha,
                                           r_draws=config.mc_draws,
                                           seed=config.seed)
        res.outlier_flags = report.flags
        res.outlier_scores = report.scores
        res.trimmed_bic = selection.trimmed_bic(res, data, report.flags)
    pool.sort(key=lambda r: (r.trimmed_bic, r.start_index))
    return pool[0]


def mixture_loglik_rows(data, params: MixtureParams):
    """Log mixture density of each observation."""
    fam = get_family(params.family)
    data = fam.coerce_data(data)
    logf = fam.log_density_matrix(data, params)
    return logsumexp(fam.mixing_log_weights(data, params) + logf, axis=1)
