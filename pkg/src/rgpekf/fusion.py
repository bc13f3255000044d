"""Fusion of the recursive GP into an extended Kalman filter.

Two integration depths are provided.  The pure-prediction variant treats the
GP as a frozen feedforward disturbance model: only its inference step runs,
and the predicted disturbance enters the EKF as a noisy input.  The fused
variant appends the GP basis values to the state vector, so one joint
predict/update cycle estimates the physical states and trains the GP from
indirect measurements at the same time.  The joint update comes in two
flavors: a full update of states and GP (4a), and a state-only update that
leaves the GP statistics untouched (4b) for samples that should not train
the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .kernel import KernelPrecomp, kernel_row, normalize, solve_against_gram
from .rgp import InferenceResult, RgpState, rgp_infer


class InnovationCovarianceError(ValueError):
    """Innovation covariance is singular or not positive definite."""


@dataclass(frozen=True)
class PlantModel:
    """Nonlinear discrete-time plant with a scalar disturbance channel.

    ``f(x, u, z)`` maps to the next state, ``h(x)`` to the measurement.
    ``jac_x``, ``jac_z`` and ``jac_h`` are the Jacobians of f w.r.t. the
    state and the disturbance, and of h w.r.t. the state; ``jac_z`` returns
    the disturbance gain as a length-n_x vector.
    """

    n_x: int
    f: Callable[[np.ndarray, float, float], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    jac_x: Callable[[np.ndarray, float, float], np.ndarray]
    jac_z: Callable[[np.ndarray, float, float], np.ndarray]
    jac_h: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class EkfNoise:
    """EKF noise configuration.

    ``sigma_r`` is the residual-uncertainty floor added to the GP prediction
    variance: it accounts for what a finite basis lattice cannot represent
    and prevents the filter from trusting the GP too much in low-noise runs.
    """

    q_x: np.ndarray = field(repr=False)
    r_x: np.ndarray = field(repr=False)
    sigma_r: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q_x", np.atleast_2d(np.asarray(self.q_x, dtype=float)))
        object.__setattr__(self, "r_x", np.atleast_2d(np.asarray(self.r_x, dtype=float)))
        if not np.allclose(self.q_x, self.q_x.T):
            raise ValueError("q_x must be symmetric")
        if not np.allclose(self.r_x, self.r_x.T):
            raise ValueError("r_x must be symmetric")
        if self.sigma_r < 0 or not np.isfinite(self.sigma_r):
            raise ValueError(f"sigma_r must be non-negative, got {self.sigma_r}")


@dataclass(frozen=True)
class StateBelief:
    """Gaussian belief over the physical states only."""

    mean: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)
    step: int = 0


@dataclass(frozen=True)
class FusedBelief:
    """Joint Gaussian belief over physical states and GP basis values.

    The mean stacks the n_x states first, then the basis values; the
    covariance is blocked accordingly.
    """

    mean: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)
    n_x: int = 0
    step: int = 0

    @property
    def state_mean(self) -> np.ndarray:
        return self.mean[: self.n_x]

    @property
    def gp_mean(self) -> np.ndarray:
        return self.mean[self.n_x :]

    @property
    def state_cov(self) -> np.ndarray:
        return self.cov[: self.n_x, : self.n_x]

    @property
    def gp_cov(self) -> np.ndarray:
        return self.cov[self.n_x :, self.n_x :]

    @property
    def cross_cov(self) -> np.ndarray:
        return self.cov[: self.n_x, self.n_x :]

    def gp_state(self) -> RgpState:
        """View of the GP block as a stand-alone recursive-GP state."""
        return RgpState(mean=self.gp_mean.copy(), cov=self.gp_cov.copy(), step=self.step)


@dataclass(frozen=True)
class FusedStepLog:
    """Per-step quantities worth keeping for evaluation."""

    step: int
    gp_pred_mean: float
    gp_pred_var: float
    gp_pred_var_inflated: float
    innovation: np.ndarray
    trained: bool


def _symmetrize(c: np.ndarray) -> np.ndarray:
    return 0.5 * (c + c.T)


def _solve_spd(s: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve s x = b for symmetric positive-definite s via Cholesky."""
    try:
        cho = sla.cho_factor(_symmetrize(s), lower=True)
    except np.linalg.LinAlgError as exc:
        raise InnovationCovarianceError(f"innovation covariance not positive definite: {exc}") from exc
    return sla.cho_solve(cho, b)


def fused_init(x0_mean: np.ndarray, x0_cov: np.ndarray, pre: KernelPrecomp) -> FusedBelief:
    """Initial joint belief: states as given, GP block at its prior (0, K)."""
    x0_mean = np.asarray(x0_mean, dtype=float).ravel()
    x0_cov = np.atleast_2d(np.asarray(x0_cov, dtype=float))
    n_x = x0_mean.shape[0]
    m = pre.n_basis
    mean = np.concatenate([x0_mean, np.zeros(m)])
    cov = np.zeros((n_x + m, n_x + m))
    cov[:n_x, :n_x] = x0_cov
    cov[n_x:, n_x:] = pre.gram
    return FusedBelief(mean=mean, cov=cov, n_x=n_x, step=0)


def pure_predict(
    belief: StateBelief,
    rgp_state: RgpState,
    model: PlantModel,
    noise: EkfNoise,
    u,
    zeta,
    pre: KernelPrecomp,
) -> tuple[StateBelief, InferenceResult]:
    """EKF prediction with the GP as a frozen noisy disturbance input.

    Runs the GP inference only, inflates its variance by sigma_r^2 and feeds
    the result through the linearized dynamics:
    C_pred = A C A^T + Q_x + e (C_z_pred + sigma_r^2) e^T.
    """
    inf = rgp_infer(rgp_state, zeta, pre)
    var_inflated = inf.variance + noise.sigma_r**2
    a = np.atleast_2d(model.jac_x(belief.mean, u, inf.mean))
    e = np.asarray(model.jac_z(belief.mean, u, inf.mean), dtype=float).ravel()
    mean = np.asarray(model.f(belief.mean, u, inf.mean), dtype=float).ravel()
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(e)):
        raise ValueError("non-finite Jacobians at the linearization point")
    cov = a @ belief.cov @ a.T + noise.q_x + var_inflated * np.outer(e, e)
    return StateBelief(mean=mean, cov=_symmetrize(cov), step=belief.step + 1), inf


def pure_update(pred: StateBelief, y, model: PlantModel, noise: EkfNoise) -> StateBelief:
    """Standard EKF correction of a predicted state belief."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    h_jac = np.atleast_2d(model.jac_h(pred.mean))
    pht = pred.cov @ h_jac.T
    s = h_jac @ pht + noise.r_x
    gain = _solve_spd(s, pht.T).T
    innovation = y - np.atleast_1d(model.h(pred.mean))
    mean = pred.mean + gain @ innovation
    cov = pred.cov - gain @ pht.T
    return StateBelief(mean=mean, cov=_symmetrize(cov), step=pred.step)


def fused_predict(
    belief: FusedBelief,
    model: PlantModel,
    noise: EkfNoise,
    process_std: float,
    u,
    zeta,
    pre: KernelPrecomp,
) -> tuple[FusedBelief, InferenceResult]:
    """Joint prediction of states and GP basis values.

    The extended transition matrix couples the state block to the GP block
    through e J, while the GP block itself propagates as identity.  The input
    noise term e (sigma_K^2 - J K J^T + sigma_r^2) e^T completes the GP
    prediction variance; together with J C_zz J^T from the transition part it
    reproduces the pure GP prediction when the cross covariance is zero.
    ``process_std`` is the GP process noise, entering once through the
    extended process-noise block.
    """
    n_x, m = belief.n_x, pre.n_basis
    if belief.mean.shape[0] != n_x + m:
        raise ValueError(f"belief dimension {belief.mean.shape[0]} != n_x + basis count {n_x + m}")
    mu_x = belief.state_mean
    mu_z = belief.gp_mean

    x_norm = normalize(zeta, pre.grid)
    j = solve_against_gram(kernel_row(x_norm, pre.basis, pre.spec), pre)
    gp_pred_mean = float(j @ mu_z)
    jkj = float((j @ pre.gram) @ j)
    gp_pred_var = pre.spec.signal_std**2 + float(j @ (belief.gp_cov - pre.gram) @ j)
    inf = InferenceResult(weights=j, mean=gp_pred_mean, variance=gp_pred_var)

    a = np.atleast_2d(model.jac_x(mu_x, u, gp_pred_mean))
    e = np.asarray(model.jac_z(mu_x, u, gp_pred_mean), dtype=float).ravel()
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(e)):
        raise ValueError("non-finite Jacobians at the linearization point")

    a_ext = np.zeros((n_x + m, n_x + m))
    a_ext[:n_x, :n_x] = a
    a_ext[:n_x, n_x:] = np.outer(e, j)
    a_ext[n_x:, n_x:] = np.eye(m)
    e_ext = np.concatenate([e, np.zeros(m)])

    mean = np.concatenate([np.asarray(model.f(mu_x, u, gp_pred_mean), dtype=float).ravel(), mu_z])
    input_var = pre.spec.signal_std**2 - jkj + noise.sigma_r**2
    cov = a_ext @ belief.cov @ a_ext.T + input_var * np.outer(e_ext, e_ext)
    cov[:n_x, :n_x] += noise.q_x
    if process_std > 0:
        cov[n_x:, n_x:] += process_std**2 * np.eye(m)
    pred = FusedBelief(mean=mean, cov=_symmetrize(cov), n_x=n_x, step=belief.step + 1)
    return pred, inf


def fused_update_4a(pred: FusedBelief, y, model: PlantModel, noise: EkfNoise) -> FusedBelief:
    """Joint correction of states and GP from one indirect measurement.

    The measurement map touches only the state block, so the GP learns purely
    through the cross covariance built up during prediction.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n_x = pred.n_x
    h_jac = np.atleast_2d(model.jac_h(pred.state_mean))
    # H_ext = [H, 0]: only the state columns of the covariance matter.
    pht = pred.cov[:, :n_x] @ h_jac.T
    s = h_jac @ pht[:n_x] + noise.r_x
    gain = _solve_spd(s, pht.T).T
    innovation = y - np.atleast_1d(model.h(pred.state_mean))
    mean = pred.mean + gain @ innovation
    cov = pred.cov - gain @ pht.T
    return FusedBelief(mean=mean, cov=_symmetrize(cov), n_x=n_x, step=pred.step)


def fused_update_4b(pred: FusedBelief, y, model: PlantModel, noise: EkfNoise) -> FusedBelief:
    """State-only correction; GP mean and covariance stay at their prediction.

    The gain is computed from the state block alone and embedded with
    E = [I; 0], so only the state-state block of the joint covariance
    changes.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n_x = pred.n_x
    h_jac = np.atleast_2d(model.jac_h(pred.state_mean))
    cov_xx = pred.cov[:n_x, :n_x]
    pht = cov_xx @ h_jac.T
    s = h_jac @ pht + noise.r_x
    gain = _solve_spd(s, pht.T).T
    innovation = y - np.atleast_1d(model.h(pred.state_mean))
    mean = pred.mean.copy()
    mean[:n_x] = mean[:n_x] + gain @ innovation
    cov = pred.cov.copy()
    cov[:n_x, :n_x] = cov_xx - gain @ pht.T
    return FusedBelief(mean=mean, cov=_symmetrize(cov), n_x=n_x, step=pred.step)


def fused_step(
    belief: FusedBelief,
    y,
    model: PlantModel,
    noise: EkfNoise,
    process_std: float,
    u,
    zeta,
    pre: KernelPrecomp,
    train: bool = True,
) -> tuple[FusedBelief, FusedStepLog]:
    """One full cycle: inference, linearization, prediction, then update.

    ``train`` selects the joint update (states and GP) or the state-only
    update that rejects the sample for GP training.
    """
    pred, inf = fused_predict(belief, model, noise, process_std, u, zeta, pre)
    innovation = np.atleast_1d(np.asarray(y, dtype=float)) - np.atleast_1d(model.h(pred.state_mean))
    if train:
        updated = fused_update_4a(pred, y, model, noise)
    else:
        updated = fused_update_4b(pred, y, model, noise)
    log = FusedStepLog(
        step=updated.step,
        gp_pred_mean=inf.mean,
        gp_pred_var=inf.variance,
        gp_pred_var_inflated=inf.variance + noise.sigma_r**2,
        innovation=innovation,
        trained=train,
    )
    return updated, log
