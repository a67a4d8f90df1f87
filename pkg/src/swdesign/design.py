"""Weighted information matrix and the treatment-variance design criterion.

An approximate design allocates proportions p = (p_2, ..., p_J) of clusters
to the J-1 sequences. One cluster's worth of information about the full
parameter vector is the weighted sum over sequences of D_s' V_s^{-1} D_s, and
the criterion of a design is the log of the variance of the treatment-effect
estimate: the last diagonal entry of the inverse information matrix. The
1/I cluster-count factor is deliberately left out, so the criterion is a
property of the allocation alone; running I clusters shifts it by -log(I).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import UnidentifiableDesignError, ValidationError
from .model import CorrelationParams, ThetaVector, TrialConfig, mean_jacobian, working_covariance

__all__ = [
    "DesignWeights",
    "RCOND_LIMIT",
    "SIMPLEX_TOL",
    "as_weight_array",
    "sequence_information",
    "information_matrix",
    "var_delta",
    "log_var_delta",
]

# Designs whose information matrix has a reciprocal condition number below
# this are reported as unidentifiable rather than as a huge noisy variance.
RCOND_LIMIT = 1e-12

SIMPLEX_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DesignWeights:
    """A point on the allocation simplex: nonnegative weights summing to one."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if w.ndim != 1 or w.size < 2:
            raise ValidationError("weights must be a vector with at least two entries")
        if not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite")
        if np.any(w < 0.0):
            raise ValidationError(f"weights must be nonnegative, got {w}")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValidationError(f"weights must sum to 1 within {SIMPLEX_TOL}, got sum {w.sum()!r}")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.size

    def reversed(self) -> "DesignWeights":
        """The allocation with the sequence order flipped (p_s -> p_{J+2-s})."""
        return DesignWeights(self.weights[::-1])


def as_weight_array(p, config: TrialConfig | None = None) -> np.ndarray:
    """Coerce ``DesignWeights`` or array-like to a validated weight vector."""
    if not isinstance(p, DesignWeights):
        p = DesignWeights(np.asarray(p, dtype=float))
    if config is not None and len(p) != config.n_sequences:
        raise ValidationError(
            f"weights has {len(p)} entries but the trial has {config.n_sequences} sequences"
        )
    return p.weights


def sequence_information(
    theta: ThetaVector, corr: CorrelationParams, config: TrialConfig
) -> np.ndarray:
    """Per-sequence information blocks D_s' V_s^{-1} D_s, stacked (J-1, J+1, J+1).

    The blocks do not depend on the allocation, so callers evaluating many
    designs at one parameter vector should compute them once.
    """
    blocks = np.empty((config.n_sequences, config.periods + 1, config.periods + 1))
    for s in range(2, config.periods + 1):
        jac = mean_jacobian(theta, s, config)
        cov = working_covariance(theta, s, corr, config)
        cho = scipy.linalg.cho_factor(cov, lower=True)
        blocks[s - 2] = jac.T @ scipy.linalg.cho_solve(cho, jac)
    # enforce exact symmetry lost to floating-point solves
    return 0.5 * (blocks + np.transpose(blocks, (0, 2, 1)))


def information_matrix(p, theta: ThetaVector, corr: CorrelationParams, config: TrialConfig) -> np.ndarray:
    """Weighted information matrix sum_s p_s D_s' V_s^{-1} D_s for one cluster."""
    w = as_weight_array(p, config)
    return np.einsum("s,sij->ij", w, sequence_information(theta, corr, config))


def _solve_var_delta(info: np.ndarray) -> float:
    """Last diagonal entry of the inverse of ``info`` via a Cholesky solve."""
    rcond = 1.0 / np.linalg.cond(info)
    if not rcond > RCOND_LIMIT:
        raise UnidentifiableDesignError(
            "design is unidentifiable: information matrix has reciprocal "
            f"condition number {rcond:.3e} (limit {RCOND_LIMIT:.0e})"
        )
    try:
        cho = scipy.linalg.cho_factor(info, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise UnidentifiableDesignError(
            "design is unidentifiable: information matrix is not positive definite"
        ) from exc
    unit = np.zeros(info.shape[0])
    unit[-1] = 1.0
    return float(scipy.linalg.cho_solve(cho, unit)[-1])


def var_delta(p, theta: ThetaVector, corr: CorrelationParams, config: TrialConfig) -> float:
    """Variance of the treatment-effect estimate under the design, for one cluster.

    Strictly positive; raises :class:`UnidentifiableDesignError` when the
    weighted information matrix cannot be inverted reliably (for example a
    single-sequence design, whose J x (J+1) Jacobian can never have full
    column rank).
    """
    return _solve_var_delta(information_matrix(p, theta, corr, config))


def log_var_delta(p, theta: ThetaVector, corr: CorrelationParams, config: TrialConfig) -> float:
    """Log of :func:`var_delta`: the local design criterion being minimised."""
    return math.log(var_delta(p, theta, corr, config))
