"""Squared-exponential kernel, basis-vector grid and stabilized Gram solves.

The Gaussian process is parameterized on a fixed lattice of basis vectors
living in normalized coordinates (grid spacing exactly 1 along every axis).
Physical inputs are mapped onto that lattice by an affine normalization, and
all online evaluations reduce to solving small linear systems against the
kernel Gram matrix.  The Gram matrix can be nearly singular for moderate
length scales, so the inverse is never formed; a QR factorization computed
once up front backs every solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class GramFactorizationError(ValueError):
    """Gram matrix is rank deficient to machine precision."""


class GramSolveError(ValueError):
    """Triangular solve against the Gram factorization failed."""


@dataclass(frozen=True)
class KernelSpec:
    """Hyperparameters of the squared-exponential kernel.

    ``length_scale`` is expressed in normalized grid units (the basis lattice
    has spacing 1), ``signal_std`` in units of the GP output.
    """

    length_scale: float = 1.0
    signal_std: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.length_scale) and self.length_scale > 0):
            raise ValueError(f"length_scale must be positive, got {self.length_scale}")
        if not (np.isfinite(self.signal_std) and self.signal_std > 0):
            raise ValueError(f"signal_std must be positive, got {self.signal_std}")


@dataclass(frozen=True)
class GridSpec:
    """Basis-vector lattice: per-dimension point counts and physical bounds."""

    counts: tuple[int, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(n) for n in self.counts))
        object.__setattr__(self, "lower", tuple(float(b) for b in self.lower))
        object.__setattr__(self, "upper", tuple(float(b) for b in self.upper))
        if not self.counts:
            raise ValueError("grid needs at least one dimension")
        if len(self.lower) != len(self.counts) or len(self.upper) != len(self.counts):
            raise ValueError("counts, lower and upper must have equal lengths")
        if any(n < 1 for n in self.counts):
            raise ValueError(f"per-dimension counts must be >= 1, got {self.counts}")
        for lo, hi in zip(self.lower, self.upper):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"bounds must be finite with lower < upper, got ({lo}, {hi})")

    @property
    def n_inputs(self) -> int:
        return len(self.counts)

    @property
    def n_basis(self) -> int:
        return int(np.prod(self.counts))


def se_kernel(x, x2, spec: KernelSpec) -> float:
    """Evaluate k(x, x') = sigma_K^2 * exp(-|x - x'|^2 / (2 L)).

    Inputs are normalized coordinates; note that the length scale divides the
    squared distance directly (no additional square).
    """
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape:
        raise ValueError(f"input dimensions differ: {x.shape} vs {x2.shape}")
    d = x - x2
    return spec.signal_std**2 * float(np.exp(-(d @ d) / (2.0 * spec.length_scale)))


def kernel_row(x, basis: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Row vector k(x, X) of kernel values between one input and all basis vectors."""
    x = np.asarray(x, dtype=float).ravel()
    d2 = np.sum((basis - x[None, :]) ** 2, axis=1)
    return spec.signal_std**2 * np.exp(-d2 / (2.0 * spec.length_scale))


def build_grid(grid: GridSpec) -> np.ndarray:
    """All lattice vertices {0..N_1-1} x ... x {0..N_d-1}, dimension 1 fastest.

    For counts (2, 3) the rows are (0,0), (1,0), (0,1), (1,1), (0,2), (1,2).
    """
    axes = [np.arange(n, dtype=float) for n in grid.counts]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel(order="F") for m in mesh], axis=1)


def normalize(zeta, grid: GridSpec) -> np.ndarray:
    """Map physical inputs onto lattice coordinates.

    Component i maps affinely so that the lower bound lands on 0 and the upper
    bound on N_i - 1.  Out-of-range inputs extrapolate through the same map;
    the kernel decay handles the growing distance.
    """
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    if zeta.shape != (grid.n_inputs,):
        raise ValueError(f"expected input of dimension {grid.n_inputs}, got shape {zeta.shape}")
    if not np.all(np.isfinite(zeta)):
        raise ValueError(f"non-finite input components: {zeta}")
    lo = np.asarray(grid.lower)
    hi = np.asarray(grid.upper)
    counts = np.asarray(grid.counts, dtype=float)
    return (zeta - lo) * (counts - 1.0) / (hi - lo)


@dataclass(frozen=True)
class KernelPrecomp:
    """Offline products shared by every online evaluation.

    Holds the basis matrix, the Gram matrix K = k(X, X) and its QR factors
    with the sign convention diag(R) > 0 (so the factorization is unique and
    ``qr_q @ qr_r`` reconstructs K).  The explicit inverse of K is never
    stored.
    """

    spec: KernelSpec
    grid: GridSpec
    basis: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)
    qr_q: np.ndarray = field(repr=False)
    qr_r: np.ndarray = field(repr=False)

    @property
    def n_basis(self) -> int:
        return self.basis.shape[0]


def precompute(spec: KernelSpec, grid: GridSpec) -> KernelPrecomp:
    """Build the basis lattice, its Gram matrix and the QR factorization."""
    basis = build_grid(grid)
    d2 = np.sum((basis[:, None, :] - basis[None, :, :]) ** 2, axis=2)
    gram = spec.signal_std**2 * np.exp(-d2 / (2.0 * spec.length_scale))
    q, r = sla.qr(gram)
    # Fix a deterministic sign convention: positive diagonal of R.
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    q = q * signs[None, :]
    r = signs[:, None] * r
    diag = np.abs(np.diag(r))
    if diag.min() <= gram.shape[0] * np.finfo(float).eps * diag.max():
        raise GramFactorizationError(
            "Gram matrix is rank deficient to machine precision "
            f"(triangular diagonal ratio {diag.max() / max(diag.min(), np.finfo(float).tiny):.3e}); "
            "reduce the length scale or the basis density"
        )
    return KernelPrecomp(spec=spec, grid=grid, basis=basis, gram=gram, qr_q=q, qr_r=r)


def solve_against_gram(rhs: np.ndarray, pre: KernelPrecomp) -> np.ndarray:
    """Solve the row system J K = rhs through the QR factors.

    Uses J R^T = rhs Q, i.e. a single triangular solve, which stays accurate
    for nearly singular Gram matrices where multiplying by a precomputed
    inverse loses digits.
    """
    rhs = np.asarray(rhs, dtype=float).ravel()
    if rhs.shape != (pre.n_basis,):
        raise ValueError(f"rhs length {rhs.shape[0]} does not match basis count {pre.n_basis}")
    diag = np.diag(pre.qr_r)
    if np.any(diag == 0.0):
        raise GramSolveError("zero diagonal in the triangular factor; Gram system is singular")
    j = sla.solve_triangular(pre.qr_r, rhs @ pre.qr_q, lower=False)
    if not np.all(np.isfinite(j)):
        raise GramSolveError("triangular solve produced non-finite interpolation weights")
    return j
