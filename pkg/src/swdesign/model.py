"""Marginal model for cross-sectional stepped-wedge trials with a binary outcome.

A trial runs for J periods with K participants per cluster-period. Clusters
follow one of the J-1 standard stepped-wedge sequences: sequence s
(s = 2, ..., J) stays in the control condition for periods 1..s-1 and is
treated from period s onward. The cluster-period prevalence follows a
logistic marginal model,

    logit(mu_j) = beta_j + X_sj * delta,

with one log-odds effect per period and a treatment effect ``delta`` on the
same scale. The working covariance of the J cluster-period mean outcomes has
binomial diagonal ``nu_j/K * (1 + (K-1)*alpha0)`` and off-diagonal
``sqrt(nu_j*nu_l) * alpha0 * rho**|j-l|``, where ``nu_j = mu_j*(1-mu_j)``:
a constant within-cluster correlation ``alpha0`` that decays geometrically
with the period lag. ``rho = 1`` is the simple exchangeable special case.

Everything here is a pure function of its inputs; all values are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as _scipy_expit
from scipy.special import logit as _scipy_logit

from .errors import ModelError, ValidationError

__all__ = [
    "TrialConfig",
    "ThetaVector",
    "CorrelationParams",
    "SequenceMatrices",
    "expit",
    "logit",
    "marginal_means",
    "binomial_variance",
    "working_covariance",
    "mean_jacobian",
    "sequence_matrices",
]


def _frozen(values, dtype=float) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.setflags(write=False)
    return out


def standard_sequences(periods: int) -> np.ndarray:
    """Return the (J-1) x J treatment indicator matrix of the standard design.

    Row index 0 corresponds to the sequence that switches in period 2; entry
    (s-2, j-1) is 1 exactly when period j is on or after the switch period s.
    """
    j = np.arange(1, periods + 1)
    s = np.arange(2, periods + 1)
    return _frozen(j[None, :] >= s[:, None])


@dataclass(frozen=True, eq=False)
class TrialConfig:
    """Trial geometry: period count, cluster-period size and the sequence set.

    ``sequences`` may be omitted, in which case the standard unidirectional
    set is built; if given it must equal that set (each of the J-1 distinct
    rows switches once, from control to treatment, and never back).
    """

    periods: int
    cluster_period_size: int
    clusters: int = 1
    sequences: np.ndarray | None = None

    def __post_init__(self):
        if int(self.periods) != self.periods or self.periods < 3:
            raise ValidationError(f"periods must be an integer >= 3, got {self.periods}")
        if int(self.cluster_period_size) != self.cluster_period_size or self.cluster_period_size < 1:
            raise ValidationError(
                f"cluster_period_size must be a positive integer, got {self.cluster_period_size}"
            )
        if int(self.clusters) != self.clusters or self.clusters < 1:
            raise ValidationError(f"clusters must be a positive integer, got {self.clusters}")
        object.__setattr__(self, "periods", int(self.periods))
        object.__setattr__(self, "cluster_period_size", int(self.cluster_period_size))
        object.__setattr__(self, "clusters", int(self.clusters))
        standard = standard_sequences(self.periods)
        if self.sequences is None:
            object.__setattr__(self, "sequences", standard)
        else:
            given = np.asarray(self.sequences, dtype=float)
            if given.shape != standard.shape or not np.array_equal(given, standard):
                raise ValidationError(
                    "sequences must be the standard stepped-wedge set: "
                    f"{self.periods - 1} distinct rows of length {self.periods}, "
                    "each all-zero before its switch period and all-one from it"
                )
            object.__setattr__(self, "sequences", _frozen(given))

    @property
    def n_sequences(self) -> int:
        return self.periods - 1

    def treatment_indicator(self, sequence_index: int) -> np.ndarray:
        """Indicator vector of the sequence switching in period ``sequence_index``.

        Valid indices are 2..J; anything else is a configuration error.
        """
        if int(sequence_index) != sequence_index or not 2 <= sequence_index <= self.periods:
            raise ValidationError(
                f"sequence_index must be an integer in [2, {self.periods}], got {sequence_index}"
            )
        return self.sequences[int(sequence_index) - 2]


@dataclass(frozen=True, eq=False)
class ThetaVector:
    """Model parameters: per-period log-odds effects plus the treatment effect."""

    betas: np.ndarray
    delta: float

    def __post_init__(self):
        betas = np.atleast_1d(np.asarray(self.betas, dtype=float))
        if betas.ndim != 1 or betas.size == 0:
            raise ValidationError("betas must be a one-dimensional, non-empty vector")
        if not np.all(np.isfinite(betas)):
            raise ValidationError("betas must be finite")
        if not np.isfinite(self.delta):
            raise ValidationError(f"delta must be finite, got {self.delta}")
        object.__setattr__(self, "betas", _frozen(betas))
        object.__setattr__(self, "delta", float(self.delta))

    def as_array(self) -> np.ndarray:
        """The parameter vector (beta_1, ..., beta_J, delta)."""
        return np.append(self.betas, self.delta)

    @classmethod
    def from_array(cls, theta: np.ndarray) -> "ThetaVector":
        theta = np.asarray(theta, dtype=float)
        return cls(betas=theta[:-1], delta=float(theta[-1]))


@dataclass(frozen=True)
class CorrelationParams:
    """Working correlation parameters: within-cluster level and per-lag decay.

    ``rho = 1`` gives the simple exchangeable structure.
    """

    alpha0: float
    rho: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha0) and 0.0 < self.alpha0 < 1.0):
            raise ValidationError(f"alpha0 must lie in (0, 1), got {self.alpha0}")
        if not (np.isfinite(self.rho) and 0.0 < self.rho <= 1.0):
            raise ValidationError(f"rho must lie in (0, 1], got {self.rho}")

    @property
    def is_exchangeable(self) -> bool:
        return self.rho == 1.0


@dataclass(frozen=True, eq=False)
class SequenceMatrices:
    """Per-sequence mean Jacobian (J x (J+1)) and working covariance (J x J)."""

    jacobian: np.ndarray
    covariance: np.ndarray


def expit(x):
    """Inverse logit, 1/(1 + exp(-x)); saturates smoothly at extreme inputs."""
    return _scipy_expit(x)


def logit(p):
    """Log-odds, log(p/(1-p))."""
    return _scipy_logit(p)


def _check_theta(theta: ThetaVector, config: TrialConfig) -> None:
    if theta.betas.size != config.periods:
        raise ValidationError(
            f"betas has length {theta.betas.size} but the trial has {config.periods} periods"
        )


def marginal_means(theta: ThetaVector, sequence_index: int, config: TrialConfig) -> np.ndarray:
    """Period-wise prevalences expit(beta_j + X_sj * delta) for one sequence."""
    _check_theta(theta, config)
    x = config.treatment_indicator(sequence_index)
    return _scipy_expit(theta.betas + theta.delta * x)


def binomial_variance(mu):
    """mu*(1-mu) for prevalences strictly inside the unit interval."""
    mu_arr = np.asarray(mu, dtype=float)
    if not np.all((mu_arr > 0.0) & (mu_arr < 1.0)):
        raise ValidationError(f"mu must lie strictly in (0, 1), got {mu}")
    return mu_arr * (1.0 - mu_arr)


def working_covariance(
    theta: ThetaVector,
    sequence_index: int,
    corr: CorrelationParams,
    config: TrialConfig,
) -> np.ndarray:
    """Working covariance of the J cluster-period means for one sequence.

    The result is exactly symmetric by construction and its positive
    definiteness is verified by a Cholesky factorization before it is
    returned, so no downstream inversion can silently propagate NaNs.
    """
    mu = marginal_means(theta, sequence_index, config)
    nu = binomial_variance(mu)
    k = config.cluster_period_size
    periods = np.arange(config.periods)
    lag = np.abs(periods[:, None] - periods[None, :])
    cov = np.sqrt(np.outer(nu, nu)) * (corr.alpha0 * corr.rho**lag)
    cov[periods, periods] = nu / k * (1.0 + (k - 1) * corr.alpha0)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ModelError(
            f"working covariance for sequence {sequence_index} is not positive definite"
        ) from exc
    return cov


def mean_jacobian(theta: ThetaVector, sequence_index: int, config: TrialConfig) -> np.ndarray:
    """J x (J+1) derivative of the mean vector in the parameters.

    Under the logit link, row j is nu_j on the beta_j column and nu_j * X_sj
    on the trailing treatment-effect column.
    """
    mu = marginal_means(theta, sequence_index, config)
    nu = mu * (1.0 - mu)
    x = config.treatment_indicator(sequence_index)
    j = config.periods
    jac = np.zeros((j, j + 1))
    jac[np.arange(j), np.arange(j)] = nu
    jac[:, j] = nu * x
    return jac


def sequence_matrices(
    theta: ThetaVector,
    sequence_index: int,
    corr: CorrelationParams,
    config: TrialConfig,
) -> SequenceMatrices:
    """Bundle the Jacobian and working covariance of one sequence."""
    return SequenceMatrices(
        jacobian=mean_jacobian(theta, sequence_index, config),
        covariance=working_covariance(theta, sequence_index, corr, config),
    )
