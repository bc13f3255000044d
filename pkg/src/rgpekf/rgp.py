"""Recursive Gaussian process regression with a directly measured output.

The GP posterior is carried as a mean vector and covariance matrix over the
fixed basis lattice.  Each scalar measurement triggers one inference step
(interpolation weights, predicted mean and variance at the current input) and
one rank-one update of the basis statistics.  Injected process noise acts as
a forgetting factor for slowly drifting hidden functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernel import KernelPrecomp, kernel_row, normalize, solve_against_gram


@dataclass(frozen=True)
class RgpNoise:
    """Noise configuration for the recursive update.

    ``cov_bound`` optionally caps the diagonal of the basis covariance, which
    is useful once process noise keeps re-inflating it.
    """

    process_std: float = 0.0
    measurement_std: float = 1.0
    cov_bound: float | None = None

    def __post_init__(self):
        if not (np.isfinite(self.measurement_std) and self.measurement_std > 0):
            raise ValueError(f"measurement_std must be positive, got {self.measurement_std}")
        if not (np.isfinite(self.process_std) and self.process_std >= 0):
            raise ValueError(f"process_std must be non-negative, got {self.process_std}")
        if self.cov_bound is not None and self.cov_bound <= 0:
            raise ValueError(f"cov_bound must be positive when set, got {self.cov_bound}")


@dataclass(frozen=True)
class RgpState:
    """Posterior mean and covariance of the GP at the basis vectors."""

    mean: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)
    step: int = 0

    @property
    def n_basis(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class InferenceResult:
    """GP prediction at one test input: weights, mean and variance."""

    weights: np.ndarray = field(repr=False)
    mean: float = 0.0
    variance: float = 0.0


def rgp_init(pre: KernelPrecomp) -> RgpState:
    """Fresh posterior: zero mean, covariance equal to the Gram matrix."""
    n = pre.n_basis
    return RgpState(mean=np.zeros(n), cov=pre.gram.copy(), step=0)


def rgp_infer(state: RgpState, zeta, pre: KernelPrecomp) -> InferenceResult:
    """Predict the GP output at a physical input.

    Returns the interpolation weights J (solution of J K = k(X_k, X)), the
    predicted mean J mu and the predicted variance
    sigma_K^2 + J (C - K) J^T.
    """
    if state.n_basis != pre.n_basis:
        raise ValueError(f"state has {state.n_basis} basis points, precomputation {pre.n_basis}")
    x = normalize(zeta, pre.grid)
    j = solve_against_gram(kernel_row(x, pre.basis, pre.spec), pre)
    mean = float(j @ state.mean)
    variance = pre.spec.signal_std**2 + float(j @ (state.cov - pre.gram) @ j)
    return InferenceResult(weights=j, mean=mean, variance=variance)


def rgp_update(state: RgpState, inf: InferenceResult, y: float, noise: RgpNoise) -> RgpState:
    """Absorb one scalar measurement of the GP output.

    Gain G = C J^T / (C_p + sigma_y^2); the covariance contracts by G J C and
    then receives the process-noise floor sigma_p^2 on its diagonal.
    """
    if not np.isfinite(y):
        raise ValueError(f"non-finite measurement: {y}")
    innovation_var = inf.variance + noise.measurement_std**2
    if innovation_var <= 0:
        raise ValueError(f"non-positive innovation variance {innovation_var}")
    j = inf.weights
    gain = (state.cov @ j) / innovation_var
    mean = state.mean + gain * (y - inf.mean)
    cov = state.cov - np.outer(gain, j @ state.cov)
    if noise.process_std > 0:
        cov = cov + noise.process_std**2 * np.eye(state.n_basis)
    cov = 0.5 * (cov + cov.T)
    if noise.cov_bound is not None:
        cov = bound_covariance(cov, noise.cov_bound)
    return RgpState(mean=mean, cov=cov, step=state.step + 1)


def bound_covariance(cov: np.ndarray, bound: float) -> np.ndarray:
    """Cap diagonal entries at ``bound`` without breaking positive semidefiniteness.

    Rows and columns whose diagonal exceeds the bound are scaled by
    sqrt(bound / diag), a congruence transform that preserves correlations.
    """
    diag = np.diag(cov)
    over = diag > bound
    if not np.any(over):
        return cov
    scale = np.ones_like(diag)
    scale[over] = np.sqrt(bound / diag[over])
    return cov * np.outer(scale, scale)
