"""Comparator allocations, efficiency reporting and scenario generation.

Comparators are the balanced allocation (equal weight per sequence) and the
closed-form allocation of Lawrie, Carlin and Forbes (2015) for stepped-wedge
trials analysed under a normal approximation, which puts an outer weight on
the first and last sequences and a common inner weight on the rest.
Efficiency of a reference design against an optimal one is reported as the
percent of additional clusters the reference needs to match the optimum,
100 * (exp(objective_ref - objective_opt) - 1).

Scenarios come in two flavours: named real-trial configurations with
published estimates and standard errors (Wald-interval box priors), and
hypothetical configurations whose period effects follow a geometric
time-trend recurrence and whose prior box is derived from the predicted
covariance of a pilot trial with a balanced allocation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.special import ndtri

from .design import DesignWeights, information_matrix
from .errors import UnidentifiableDesignError, ValidationError
from .model import CorrelationParams, ThetaVector, TrialConfig
from .objective import ObjectiveEvaluator, ObjectiveSample, ThetaBoxPrior

__all__ = [
    "EfficiencyReport",
    "ScenarioSpec",
    "GridAxes",
    "balanced_design",
    "lawrie_design",
    "efficiency_report",
    "time_trend_betas",
    "normal_quantile",
    "prior_from_estimates",
    "prior_from_pilot",
    "scenario_grid",
    "named_scenario",
    "NAMED_SCENARIOS",
]


def balanced_design(config: TrialConfig) -> DesignWeights:
    """Equal allocation 1/(J-1) to each sequence."""
    return DesignWeights(np.full(config.n_sequences, 1.0 / config.n_sequences))


def lawrie_design(config: TrialConfig, alpha0: float) -> DesignWeights:
    """Closed-form optimal allocation under a normal approximation.

    With J periods, K participants per cluster-period and within-cluster
    correlation alpha0:

        outer = (1 + alpha0*(3K - 1)) / (2*(1 + alpha0*(JK - 1)))
        inner = K*alpha0 / (1 + alpha0*(JK - 1))

    applied as (outer, inner, ..., inner, outer). The weights sum to one
    exactly by the identity 2*outer + (J-3)*inner = 1.
    """
    if not (np.isfinite(alpha0) and 0.0 < alpha0 < 1.0):
        raise ValidationError(f"alpha0 must lie in (0, 1), got {alpha0}")
    j, k = config.periods, config.cluster_period_size
    denom = 1.0 + alpha0 * (j * k - 1.0)
    outer = (1.0 + alpha0 * (3.0 * k - 1.0)) / (2.0 * denom)
    inner = k * alpha0 / denom
    weights = np.full(config.n_sequences, inner)
    weights[0] = weights[-1] = outer
    # close the simplex exactly: the identity holds algebraically but the
    # three roundings above can leave the sum one ulp off
    weights[-1] = outer + (1.0 - 2.0 * outer - (j - 3) * inner)
    return DesignWeights(weights)


@dataclass(frozen=True)
class EfficiencyReport:
    """Objective values and cluster-inflation percentages for the comparators.

    ``ratio_* = exp(objective_* - objective_optimal)`` is the factor by which
    the comparator needs its cluster count inflated to match the optimum;
    the percent fields are ``100 * (ratio - 1)``.
    """

    psi_optimal: float
    psi_balanced: float
    psi_lawrie: float

    @property
    def ratio_balanced(self) -> float:
        return math.exp(self.psi_balanced - self.psi_optimal)

    @property
    def ratio_lawrie(self) -> float:
        return math.exp(self.psi_lawrie - self.psi_optimal)

    @property
    def percent_additional_clusters_balanced(self) -> float:
        return 100.0 * (self.ratio_balanced - 1.0)

    @property
    def percent_additional_clusters_lawrie(self) -> float:
        return 100.0 * (self.ratio_lawrie - 1.0)


def efficiency_report(
    p_opt,
    sample: ObjectiveSample,
    corr: CorrelationParams,
    config: TrialConfig,
    evaluator: ObjectiveEvaluator | None = None,
) -> EfficiencyReport:
    """Compare an allocation against balanced and Lawrie on one shared sample.

    All three objective values come from the identical draw set (common
    random numbers), so their differences carry no between-design noise.
    """
    evaluator = evaluator or ObjectiveEvaluator(sample, corr, config)
    return EfficiencyReport(
        psi_optimal=evaluator.value(p_opt),
        psi_balanced=evaluator.value(balanced_design(config)),
        psi_lawrie=evaluator.value(lawrie_design(config, corr.alpha0)),
    )


def time_trend_betas(a: float, b: float, periods: int) -> np.ndarray:
    """Geometric time-trend recurrence for the period effects.

    beta_1 = 0.1 and each later period adds a*b**(j-1), so the first
    increment is a*b and b = 0 gives a constant 0.1 trend while b = 1 gives
    an arithmetic trend with step a.
    """
    if periods < 3:
        raise ValidationError(f"periods must be >= 3, got {periods}")
    betas = np.empty(periods)
    betas[0] = 0.1
    for i in range(1, periods):
        betas[i] = betas[i - 1] + a * b**i
    return betas


def normal_quantile(q: float) -> float:
    """Standard normal inverse CDF (rational approximation, < 1e-9 error)."""
    if not 0.0 < q < 1.0:
        raise ValidationError(f"quantile level must lie in (0, 1), got {q}")
    return float(ndtri(q))


def prior_from_estimates(estimates, standard_errors, level: float) -> ThetaBoxPrior:
    """Wald-interval box prior: estimate +/- z_{(1+level)/2} * SE per coordinate."""
    est = np.atleast_1d(np.asarray(estimates, dtype=float))
    ses = np.atleast_1d(np.asarray(standard_errors, dtype=float))
    if est.shape != ses.shape:
        raise ValidationError("estimates and standard_errors must have equal length")
    if np.any(ses <= 0.0):
        raise ValidationError(f"standard_errors must be positive, got {ses}")
    if not 0.0 < level < 1.0:
        raise ValidationError(f"prior_level must lie in (0, 1), got {level}")
    z = normal_quantile((1.0 + level) / 2.0)
    return ThetaBoxPrior(lower=est - z * ses, upper=est + z * ses)


def prior_from_pilot(
    theta: ThetaVector,
    corr: CorrelationParams,
    config: TrialConfig,
    pilot_clusters: int,
    level: float,
) -> ThetaBoxPrior:
    """Box prior from the predicted covariance of a balanced pilot trial.

    The pilot covariance is (information at the balanced allocation)^{-1}
    divided by ``pilot_clusters``; coordinate-wise standard errors are the
    square roots of its diagonal and the box is their Wald interval at
    ``level``. Interval half-widths therefore scale exactly as
    1/sqrt(pilot_clusters).
    """
    if int(pilot_clusters) != pilot_clusters or pilot_clusters < 1:
        raise ValidationError(f"pilot_clusters must be a positive integer, got {pilot_clusters}")
    info = information_matrix(balanced_design(config), theta, corr, config)
    rcond = 1.0 / np.linalg.cond(info)
    if not rcond > 1e-12:
        raise UnidentifiableDesignError(
            "pilot information matrix is singular; the scenario parameters are invalid"
        )
    cov = np.linalg.inv(info) / pilot_clusters
    ses = np.sqrt(np.diag(cov))
    return prior_from_estimates(theta.as_array(), ses, level)


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """A fully-specified design problem: geometry, correlation, trend, prior.

    Exactly one of the trend forms must be given: explicit period effects
    (``betas``, optionally with ``beta_ses`` for an estimate-based prior) or
    the recurrence parameters (``trend_a``, ``trend_b``). With explicit
    standard errors the prior is the Wald box around the estimates;
    otherwise it derives from a hypothetical pilot with ``pilot_clusters``
    clusters (default 2*(J-1), a balanced pilot with two clusters per
    sequence). Explicit ``delta_bounds`` override the treatment-effect
    coordinate of either prior.
    """

    config: TrialConfig
    corr: CorrelationParams
    delta: float
    betas: np.ndarray | None = None
    beta_ses: np.ndarray | None = None
    trend_a: float | None = None
    trend_b: float | None = None
    delta_se: float | None = None
    delta_bounds: tuple[float, float] | None = None
    prior_level: float = 0.95
    pilot_clusters: int | None = None
    label: str = ""

    def __post_init__(self):
        explicit = self.betas is not None
        recurrence = self.trend_a is not None or self.trend_b is not None
        if explicit == recurrence:
            raise ValidationError(
                "scenario trend: set exactly one of explicit betas or the (a, b) recurrence"
            )
        if recurrence and (self.trend_a is None or self.trend_b is None):
            raise ValidationError("scenario trend: recurrence needs both a and b")
        if not 0.0 < self.prior_level < 1.0:
            raise ValidationError(f"prior_level must lie in (0, 1), got {self.prior_level}")
        if explicit:
            betas = np.atleast_1d(np.asarray(self.betas, dtype=float))
            if betas.size != self.config.periods:
                raise ValidationError(
                    f"betas has length {betas.size} but the trial has {self.config.periods} periods"
                )
            object.__setattr__(self, "betas", betas)
            if self.beta_ses is not None:
                ses = np.atleast_1d(np.asarray(self.beta_ses, dtype=float))
                if ses.size != betas.size:
                    raise ValidationError("beta_ses must match betas in length")
                object.__setattr__(self, "beta_ses", ses)
            if self.beta_ses is None or (self.delta_se is None and self.delta_bounds is None):
                raise ValidationError(
                    "explicit-trend scenarios need beta_ses plus delta_se or delta_bounds"
                )
        if self.pilot_clusters is None:
            object.__setattr__(self, "pilot_clusters", 2 * (self.config.periods - 1))

    def theta(self) -> ThetaVector:
        if self.betas is not None:
            return ThetaVector(betas=self.betas, delta=self.delta)
        return ThetaVector(
            betas=time_trend_betas(self.trend_a, self.trend_b, self.config.periods),
            delta=self.delta,
        )

    def prior(self) -> ThetaBoxPrior:
        if self.betas is not None and self.beta_ses is not None:
            estimates = np.append(self.betas, self.delta)
            ses = np.append(self.beta_ses, self.delta_se if self.delta_se is not None else 1.0)
            box = prior_from_estimates(estimates, ses, self.prior_level)
        else:
            box = prior_from_pilot(
                self.theta(), self.corr, self.config, self.pilot_clusters, self.prior_level
            )
        if self.delta_bounds is not None:
            lo, hi = float(self.delta_bounds[0]), float(self.delta_bounds[1])
            if lo > hi:
                raise ValidationError(f"delta_bounds must be ordered, got {self.delta_bounds}")
            lower, upper = box.lower.copy(), box.upper.copy()
            lower[-1], upper[-1] = lo, hi
            box = ThetaBoxPrior(lower=lower, upper=upper)
        return box


# Published GEE estimates for the Washington State expedited partner therapy
# trial (simple exchangeable and exponential decay working correlations);
# standard errors in the same order. K = 305 is the trial's average
# cluster-period size and 22 clusters were randomised over J = 5 periods.
_WASHINGTON_COMMON = dict(periods=5, cluster_period_size=305, clusters=22)
NAMED_SCENARIOS = ("washington-se", "washington-ed")


def named_scenario(name: str, prior_level: float = 0.95) -> ScenarioSpec:
    """A built-in real-trial scenario; see :data:`NAMED_SCENARIOS`."""
    key = name.strip().lower()
    if key == "washington-se":
        return ScenarioSpec(
            config=TrialConfig(**_WASHINGTON_COMMON),
            corr=CorrelationParams(alpha0=0.0051, rho=1.0),
            betas=np.array([-2.444, -2.454, -2.535, -2.609, -2.537]),
            beta_ses=np.array([0.091, 0.091, 0.094, 0.106, 0.145]),
            delta=-0.141,
            delta_se=0.092,
            prior_level=prior_level,
            label=key,
        )
    if key == "washington-ed":
        return ScenarioSpec(
            config=TrialConfig(**_WASHINGTON_COMMON),
            corr=CorrelationParams(alpha0=0.0070, rho=0.7157),
            betas=np.array([-2.437, -2.444, -2.508, -2.613, -2.552]),
            beta_ses=np.array([0.095, 0.089, 0.100, 0.115, 0.131]),
            delta=-0.124,
            delta_se=0.087,
            prior_level=prior_level,
            label=key,
        )
    raise ValidationError(f"scenario name must be one of {NAMED_SCENARIOS}, got {name!r}")


@dataclass(frozen=True, eq=False)
class GridAxes:
    """Axes of a scenario sweep, in sweep order: a, b, K, alpha0, rho."""

    a: tuple[float, ...]
    b: tuple[float, ...]
    cluster_period_size: tuple[int, ...]
    alpha0: tuple[float, ...]
    rho: tuple[float, ...]

    def __post_init__(self):
        for name in ("a", "b", "cluster_period_size", "alpha0", "rho"):
            values = tuple(getattr(self, name))
            if len(values) == 0:
                raise ValidationError(f"grid axis {name!r} must be non-empty")
            object.__setattr__(self, name, values)

    @property
    def n_cells(self) -> int:
        return (
            len(self.a)
            * len(self.b)
            * len(self.cluster_period_size)
            * len(self.alpha0)
            * len(self.rho)
        )


def scenario_grid(
    axes: GridAxes,
    periods: int,
    delta: float,
    prior_level: float = 0.80,
    pilot_clusters: int | None = None,
    clusters: int = 1,
) -> Iterator[ScenarioSpec]:
    """Stream the Cartesian product of the axes as recurrence scenarios.

    Cells come in lexicographic order over (a, b, K, alpha0, rho) as listed,
    regardless of how they are later evaluated.
    """
    for a in axes.a:
        for b in axes.b:
            for k in axes.cluster_period_size:
                for alpha0 in axes.alpha0:
                    for rho in axes.rho:
                        yield ScenarioSpec(
                            config=TrialConfig(
                                periods=periods, cluster_period_size=int(k), clusters=clusters
                            ),
                            corr=CorrelationParams(alpha0=float(alpha0), rho=float(rho)),
                            delta=float(delta),
                            trend_a=float(a),
                            trend_b=float(b),
                            prior_level=prior_level,
                            pilot_clusters=pilot_clusters,
                        )
