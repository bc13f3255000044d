"""Pseudo-inverse baseline: reconstruct the disturbance, then train a plain GP.

For a linear plant with every state measured, the disturbance acting between
two samples can be recovered by inverting the finite-difference dynamics.
The reconstruction serves as a direct (noisy) measurement for the recursive
GP, whose measurement variance is treated as a tuning parameter rather than
derived from the sensor noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernel import KernelPrecomp
from .rgp import InferenceResult, RgpNoise, RgpState, rgp_infer, rgp_update


@dataclass(frozen=True)
class LinearPlant:
    """Discrete-time linear dynamics x' = A x + B u + e z."""

    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    e: np.ndarray = field(repr=False)
    sample_time: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_2d(np.asarray(self.a, dtype=float)))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).ravel())
        object.__setattr__(self, "e", np.asarray(self.e, dtype=float).ravel())
        if not np.any(self.e != 0.0):
            raise ValueError("disturbance gain e must be nonzero for the pseudo-inverse")
        if self.sample_time <= 0:
            raise ValueError(f"sample_time must be positive, got {self.sample_time}")

    @property
    def e_pinv(self) -> np.ndarray:
        """Left pseudo-inverse (e^T e)^-1 e^T of the disturbance gain."""
        return self.e / float(self.e @ self.e)


def disturbance_measurement(x_next, x, u, plant: LinearPlant) -> float:
    """Recover z from a pair of full state measurements.

    Computes e+ (x_{k+1} - (A x_k + B u_k)); exact on noiseless data, and the
    measurement noise of both states propagates through the same affine map.
    """
    x_next = np.asarray(x_next, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    residual = x_next - (plant.a @ x + plant.b * float(u))
    return float(plant.e_pinv @ residual)


def rgpb_step(
    state: RgpState,
    zeta,
    x,
    x_next,
    u,
    plant: LinearPlant,
    pre: KernelPrecomp,
    noise: RgpNoise,
) -> tuple[RgpState, InferenceResult, float]:
    """One baseline cycle: reconstruct the pseudo-measurement, infer, update.

    The inference at ``zeta`` happens before the update, so its mean and
    variance are genuine one-step-ahead predictions.  ``noise.measurement_std``
    is the tuned design value, not the physical reconstruction noise.
    """
    inf = rgp_infer(state, zeta, pre)
    y_gp = disturbance_measurement(x_next, x, u, plant)
    updated = rgp_update(state, inf, y_gp, noise)
    return updated, inf, y_gp
