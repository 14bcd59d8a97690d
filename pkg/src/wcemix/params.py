"""Domain types shared across the estimation machinery.

Parameter containers are plain dataclasses over float64 numpy arrays; they
validate on construction and are treated as immutable afterwards (updates
build new instances).
"""

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .exceptions import ParameterizationError

FAMILIES = ("gaussian", "experts", "skew_normal")

_SYM_TOL = 1e-12


def as_vector(x, name="vector"):
    v = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if v.ndim != 1:
        raise ParameterizationError(f"{name} must be one-dimensional")
    return v


def check_spd(sigma, name="sigma"):
    """Validate symmetry and positive definiteness; return the array.

    Symmetry to within 1e-12 relative; definiteness via Cholesky.
    """
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim == 0:
        s = s.reshape(1, 1)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ParameterizationError(f"{name} must be square, got {s.shape}")
    scale = max(np.abs(s).max(), 1.0)
    if np.abs(s - s.T).max() > _SYM_TOL * scale:
        raise ParameterizationError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        raise ParameterizationError(f"{name} is not positive definite") from None
    return s


@dataclass
class GaussianParams:
    """Mean vector and SPD covariance of one Gaussian component."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = as_vector(self.mu, "mu")
        self.sigma = check_spd(self.sigma)
        if self.sigma.shape[0] != self.mu.shape[0]:
            raise ParameterizationError("mu and sigma dimensions disagree")

    @property
    def dim(self):
        return self.mu.shape[0]


@dataclass
class SkewNormalParams:
    """Location, skewness and SPD scale of one skew-normal component."""

    mu: np.ndarray
    psi: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = as_vector(self.mu, "mu")
        self.psi = as_vector(self.psi, "psi")
        self.sigma = check_spd(self.sigma)
        if not (self.mu.shape == self.psi.shape
                and self.sigma.shape[0] == self.mu.shape[0]):
            raise ParameterizationError("mu/psi/sigma dimensions disagree")

    @property
    def dim(self):
        return self.mu.shape[0]


@dataclass
class ExpertComponent:
    """Gaussian regression expert with optional gating coefficients.

    ``eta`` is None for exactly one (the reference) component; the remaining
    components carry a gating vector of the same length as ``beta``.
    """

    beta: np.ndarray
    sigma2: float
    eta: Optional[np.ndarray] = None

    def __post_init__(self):
        self.beta = as_vector(self.beta, "beta")
        self.sigma2 = float(self.sigma2)
        if self.sigma2 <= 0:
            raise ParameterizationError("sigma2 must be positive")
        if self.eta is not None:
            self.eta = as_vector(self.eta, "eta")
            if self.eta.shape != self.beta.shape:
                raise ParameterizationError("eta and beta lengths disagree")

    @property
    def dim(self):
        return self.beta.shape[0]


@dataclass
class MixtureParams:
    """Full parameter collection of one mixture model.

    ``pi`` holds the mixing probabilities; it is None for the experts family,
    whose mixing proportions live in the components' gating vectors.
    """

    family: str
    pi: Optional[np.ndarray]
    components: list

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterizationError(f"unknown family {self.family!r}")
        if not self.components:
            raise ParameterizationError("need at least one component")
        if self.family == "experts":
            if self.pi is not None:
                raise ParameterizationError("experts mixtures carry no pi")
            n_ref = sum(1 for c in self.components if c.eta is None)
            if n_ref != 1 or self.components[-1].eta is not None:
                raise ParameterizationError(
                    "exactly the last expert component must have empty eta")
        else:
            self.pi = as_vector(self.pi, "pi")
            if self.pi.shape[0] != len(self.components):
                raise ParameterizationError("pi length != number of components")
            if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-12:
                raise ParameterizationError("pi must be a probability vector")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ParameterizationError("components disagree on dimension")

    @property
    def n_components(self):
        return len(self.components)

    @property
    def dim(self):
        return self.components[0].dim


@dataclass
class RegressionData:
    """Design matrix (first column all ones) and response vector."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = as_vector(self.y, "y")
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise ParameterizationError("design/response shapes disagree")
        if not np.all(self.x[:, 0] == 1.0):
            raise ParameterizationError("first design column must be all ones")
        if np.linalg.matrix_rank(self.x) < self.x.shape[1]:
            raise ParameterizationError("design matrix is rank deficient")

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def q(self):
        return self.x.shape[1]


@dataclass
class FitConfig:
    """Tuning knobs of the fixed-point driver.

    gamma=0 reproduces classical maximum likelihood; 0.2-0.3 is the
    recommended robust range. alpha and mc_draws parameterize the outlier
    rule used by the trimmed information criterion that ranks multi-start
    solutions.
    """

    gamma: float = 0.3
    max_iter: int = 1000
    tol: float = 1e-6
    n_starts: int = 10
    eigen_ratio_c: Optional[float] = 10.0
    seed: int = 0
    alpha: float = 0.01
    mc_draws: int = 10_000

    def __post_init__(self):
        if self.gamma < 0:
            raise ParameterizationError("gamma must be nonnegative")
        if self.tol <= 0:
            raise ParameterizationError("tol must be positive")
        if self.eigen_ratio_c is not None and self.eigen_ratio_c < 1:
            raise ParameterizationError("eigen_ratio_c must be >= 1")
        if not 0 < self.alpha < 1:
            raise ParameterizationError("alpha must lie in (0, 1)")


@dataclass
class FitResult:
    """Converged fit with classification, outlier flags and diagnostics."""

    params: MixtureParams
    responsibilities: np.ndarray
    labels: np.ndarray
    outlier_flags: np.ndarray
    outlier_scores: np.ndarray
    trimmed_bic: float
    iterations: int
    converged: bool
    objective_trace: list = field(default_factory=list)
    # final and previous parameter iterates, kept for sandwich inference
    params_prev: Optional[MixtureParams] = None
    start_index: int = 0
    gamma: float = 0.0


def copy_params(params: MixtureParams) -> MixtureParams:
    comps = []
    for c in params.components:
        if isinstance(c, GaussianParams):
            comps.append(GaussianParams(c.mu.copy(), c.sigma.copy()))
        elif isinstance(c, SkewNormalParams):
            comps.append(SkewNormalParams(c.mu.copy(), c.psi.copy(),
                                          c.sigma.copy()))
        else:
            eta = None if c.eta is None else c.eta.copy()
            comps.append(ExpertComponent(c.beta.copy(), c.sigma2, eta))
    pi = None if params.pi is None else params.pi.copy()
    return MixtureParams(params.family, pi, comps)


def permute_components(params: MixtureParams, order: Sequence[int]) -> MixtureParams:
    """Reindex components by ``order`` (experts keep the reference slot last)."""
    comps = [params.components[j] for j in order]
    pi = None if params.pi is None else params.pi[list(order)]
    return MixtureParams(params.family, pi, comps)
