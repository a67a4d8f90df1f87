"""Box priors, Latin hypercube draws and the prior-averaged design objective.

The robust objective of an allocation is the average of the local criterion
log var_delta over parameter draws from a coordinate-wise uniform box prior,
a Monte Carlo estimate of the criterion's integral against that prior. Draws
are Latin hypercube stratified (exactly one draw per coordinate stratum, with
uniform jitter inside each stratum so the estimator is unbiased) and fully
determined by (prior, n, seed).

Per-draw information blocks do not depend on the allocation, so
:class:`ObjectiveEvaluator` caches them once per sample and reuses them for
every allocation an optimizer proposes. Objective averages use ``math.fsum``,
making the value independent of draw order bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as _expit

from .design import RCOND_LIMIT, as_weight_array
from .errors import ModelError, UnidentifiableDesignError, ValidationError
from .model import CorrelationParams, ThetaVector, TrialConfig, working_covariance

__all__ = [
    "ThetaBoxPrior",
    "ObjectiveSample",
    "lhs_sample",
    "ObjectiveEvaluator",
    "bayes_objective",
    "write_draws",
]


@dataclass(frozen=True, eq=False)
class ThetaBoxPrior:
    """Coordinate-wise uniform prior box for (beta_1, ..., beta_J, delta).

    Zero-width coordinates are allowed; a box with ``lower == upper``
    everywhere is a point prior.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValidationError("prior lower and upper bounds must be vectors of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValidationError("prior bounds must be finite")
        if np.any(lower > upper):
            raise ValidationError("prior lower bounds must not exceed upper bounds")
        for name, arr in (("lower", lower), ("upper", upper)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dimension(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, points: np.ndarray) -> bool:
        points = np.asarray(points, dtype=float)
        return bool(np.all(points >= self.lower) and np.all(points <= self.upper))


@dataclass(eq=False)
class ObjectiveSample:
    """A seeded batch of parameter draws used to estimate the objective.

    ``lambdas`` caches the per-draw criterion values from the most recent
    evaluation; it is bookkeeping, not an input.
    """

    seed: int
    prior: ThetaBoxPrior
    draws: np.ndarray
    lambdas: np.ndarray | None = field(default=None, compare=False)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def theta(self, index: int) -> ThetaVector:
        """The ``index``-th draw as a parameter vector."""
        return ThetaVector.from_array(self.draws[index])


def lhs_sample(prior: ThetaBoxPrior, n: int, seed: int) -> ObjectiveSample:
    """Draw ``n`` Latin hypercube points from the prior box.

    Each coordinate interval is split into ``n`` equal strata and receives
    exactly one draw per stratum, placed uniformly at random within it.
    Identical (prior, n, seed) produce bitwise-identical draws.
    """
    if int(n) != n or n < 1:
        raise ValidationError(f"n must be a positive integer, got {n}")
    n = int(n)
    rng = np.random.default_rng(seed)
    unit = np.empty((n, prior.dimension))
    for coord in range(prior.dimension):
        unit[:, coord] = (rng.permutation(n) + rng.random(n)) / n
    draws = prior.lower + unit * prior.width
    draws.setflags(write=False)
    return ObjectiveSample(seed=int(seed), prior=prior, draws=draws)


def write_draws(sample: ObjectiveSample, path, delimiter: str = ",") -> None:
    """Export the draws, one per row, to a delimited text file for audit."""
    j = sample.prior.dimension - 1
    header = delimiter.join([f"beta_{i}" for i in range(1, j + 1)] + ["delta"])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        for row in sample.draws:
            fh.write(delimiter.join(repr(float(v)) for v in row) + "\n")


def _ordered_mean(values: np.ndarray) -> float:
    # fsum is exactly rounded, hence independent of draw order; a constant
    # vector must average to exactly that constant (point-prior contract).
    if values[0] == values.min() == values.max():
        return float(values[0])
    return math.fsum(values) / values.size


class ObjectiveEvaluator:
    """Caches per-draw, per-sequence information blocks for one sample.

    Building the cache costs one pass over the draws; evaluating an
    allocation afterwards is a weighted sum of cached blocks plus one small
    symmetric eigendecomposition per draw, which simultaneously yields the
    treatment variance, its gradient in the weights and the reciprocal
    condition number used for the identifiability guard.
    """

    def __init__(self, sample: ObjectiveSample, corr: CorrelationParams, config: TrialConfig):
        if sample.prior.dimension != config.periods + 1:
            raise ValidationError(
                f"prior dimension {sample.prior.dimension} does not match "
                f"periods + 1 = {config.periods + 1}"
            )
        self.sample = sample
        self.corr = corr
        self.config = config
        self._blocks = self._build_blocks()

    def _build_blocks(self) -> np.ndarray:
        config, corr = self.config, self.corr
        draws = self.sample.draws
        n, j, k = draws.shape[0], config.periods, config.cluster_period_size
        periods = np.arange(j)
        lag = np.abs(periods[:, None] - periods[None, :])
        corr_mat = corr.alpha0 * corr.rho**lag
        blocks = np.empty((n, config.n_sequences, j + 1, j + 1))
        for s in range(config.n_sequences):
            x = config.sequences[s]
            mu = _expit(draws[:, :j] + draws[:, j:] * x)
            nu = mu * (1.0 - mu)
            cov = np.sqrt(nu[:, :, None] * nu[:, None, :]) * corr_mat
            cov[:, periods, periods] = nu / k * (1.0 + (k - 1) * corr.alpha0)
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                self._locate_bad_draw(s + 2)
            jac = np.zeros((n, j, j + 1))
            jac[:, periods, periods] = nu
            jac[:, :, j] = nu * x
            solved = np.linalg.solve(cov, jac)
            blocks[:, s] = np.einsum("nji,njk->nik", jac, solved)
        return 0.5 * (blocks + np.transpose(blocks, (0, 1, 3, 2)))

    def _locate_bad_draw(self, sequence_index: int):
        for i in range(self.sample.n_draws):
            try:
                working_covariance(self.sample.theta(i), sequence_index, self.corr, self.config)
            except ModelError as exc:
                raise ModelError(f"draw {i}: {exc}") from exc
        raise ModelError(f"working covariance for sequence {sequence_index} is not positive definite")

    @property
    def info_blocks(self) -> np.ndarray:
        """(n, J-1, J+1, J+1) array of per-draw information blocks."""
        return self._blocks

    def _decompose(self, p) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        w = as_weight_array(p, self.config)
        info = np.einsum("s,nsij->nij", w, self._blocks)
        eigvals, eigvecs = np.linalg.eigh(info)
        ok = (eigvals[:, -1] > 0.0) & (eigvals[:, 0] / eigvals[:, -1] > RCOND_LIMIT)
        if not np.all(ok):
            bad = int(np.argmin(ok))
            raise UnidentifiableDesignError(
                f"design is unidentifiable at draw {bad}: information matrix has "
                f"reciprocal condition number below {RCOND_LIMIT:.0e}",
                draw_index=bad,
            )
        var = np.einsum("nk,nk->n", eigvecs[:, -1, :] ** 2, 1.0 / eigvals)
        return var, eigvals, eigvecs

    def criterion_values(self, p) -> np.ndarray:
        """Per-draw local criterion values log var_delta; cached on the sample."""
        var, _, _ = self._decompose(p)
        values = np.log(var)
        self.sample.lambdas = values
        return values

    def value(self, p) -> float:
        """The objective: prior average of the local criterion."""
        return _ordered_mean(self.criterion_values(p))

    def value_and_gradient(self, p) -> tuple[float, np.ndarray]:
        """Objective and its gradient in the weights.

        Uses d(M^{-1}) = -M^{-1} (dM) M^{-1}: with u = M^{-1} e the
        derivative of the per-draw criterion in weight s is
        -(u' A_s u) / var.
        """
        var, eigvals, eigvecs = self._decompose(p)
        values = np.log(var)
        self.sample.lambdas = values
        u = np.einsum("nik,nk->ni", eigvecs, eigvecs[:, -1, :] / eigvals)
        per_draw = -np.einsum("ni,nsij,nj->ns", u, self._blocks, u) / var[:, None]
        return _ordered_mean(values), per_draw.mean(axis=0)

    def mc_standard_error(self, p) -> float:
        """Plain Monte Carlo standard error of the objective estimate.

        Conservative under Latin hypercube stratification; reported as a
        convergence diagnostic.
        """
        values = self.criterion_values(p)
        if values.size < 2:
            return 0.0
        return float(np.std(values, ddof=1) / math.sqrt(values.size))

    def values_many(self, weight_rows: np.ndarray, chunk: int = 128) -> np.ndarray:
        """Objective at each row of an (m, J-1) weight array.

        Rows where any draw is unidentifiable get +inf instead of raising;
        exhaustive lattice scans skip those points. Row values agree exactly
        with :meth:`value` on the same allocation.
        """
        rows = np.asarray(weight_rows, dtype=float)
        n, d = self.sample.n_draws, self.config.periods + 1
        out = np.full(rows.shape[0], np.inf)
        for lo in range(0, rows.shape[0], chunk):
            w = rows[lo : lo + chunk]
            info = np.einsum("ps,nsij->pnij", w, self._blocks)
            eigvals, eigvecs = np.linalg.eigh(info.reshape(-1, d, d))
            eigvals = eigvals.reshape(w.shape[0], n, d)
            eigvecs = eigvecs.reshape(w.shape[0], n, d, d)
            ok = np.all(
                (eigvals[..., -1] > 0.0) & (eigvals[..., 0] / eigvals[..., -1] > RCOND_LIMIT),
                axis=1,
            )
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                var = np.einsum("pnk,pnk->pn", eigvecs[:, :, -1, :] ** 2, 1.0 / eigvals)
            for i in np.nonzero(ok)[0]:
                out[lo + i] = _ordered_mean(np.log(var[i]))
        return out


def bayes_objective(p, sample: ObjectiveSample, corr: CorrelationParams, config: TrialConfig) -> float:
    """Prior-averaged criterion of an allocation on a given sample.

    Comparisons between allocations must reuse one sample so their
    difference carries no between-design sampling noise. Raises
    :class:`UnidentifiableDesignError`, naming the offending draw, if any
    draw makes the design unidentifiable.
    """
    return ObjectiveEvaluator(sample, corr, config).value(p)
