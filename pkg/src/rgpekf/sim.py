"""Benchmark plant, signal generators and closed-loop scenario runner.

The validation plant is a stable second-order linear system driven by a
step-wise input and an unmeasured disturbance z that depends on a measurable
colored-noise signal zeta through a cubic map.  Three measurement scenarios
are defined: S1 (both states, high noise), S2 (both states, low noise) and
S3 (first state only, low noise).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import fusion
from .baseline import LinearPlant, rgpb_step
from .fusion import EkfNoise, PlantModel
from .kernel import GridSpec, KernelPrecomp, KernelSpec, precompute
from .rgp import RgpNoise, RgpState, rgp_init

ESTIMATORS = ("rgp-dkf", "rgp-b", "pure-prediction")
SCENARIOS = ("S1", "S2", "S3")


class ScenarioError(ValueError):
    """Estimator and scenario cannot be combined."""


@dataclass(frozen=True)
class BenchmarkPlant:
    """Continuous-time benchmark plant matrices."""

    a: np.ndarray = field(default_factory=lambda: np.array([[0.0, 1.0], [-4.0, -4.0]]))
    b: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    e: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    c_partial: np.ndarray = field(default_factory=lambda: np.array([[1.0, 0.0]]))
    c_full: np.ndarray = field(default_factory=lambda: np.eye(2))


def hidden_z(zeta: float) -> float:
    """Hidden disturbance map z = -10 (1 + 0.1 zeta + zeta^3), strictly decreasing."""
    if not np.isfinite(zeta):
        raise ValueError(f"non-finite input: {zeta}")
    return -10.0 * (1.0 + 0.1 * zeta + zeta**3)


def euler_step(x, u, z, plant: BenchmarkPlant, dt: float) -> np.ndarray:
    """Explicit Euler step x + dt (A x + B u + E z)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float).ravel()
    if not (np.all(np.isfinite(x)) and np.isfinite(u) and np.isfinite(z)):
        raise ValueError("non-finite inputs to euler_step")
    return x + dt * (plant.a @ x + plant.b * float(u) + plant.e * float(z))


def discretize(plant: BenchmarkPlant, dt: float) -> LinearPlant:
    """Euler-discretized matrices matching euler_step exactly."""
    n = plant.a.shape[0]
    return LinearPlant(a=np.eye(n) + dt * plant.a, b=dt * plant.b, e=dt * plant.e, sample_time=dt)


def benchmark_model(plant: BenchmarkPlant, dt: float, full_state: bool) -> PlantModel:
    """EKF plant model for the benchmark with either output map."""
    lin = discretize(plant, dt)
    c = plant.c_full if full_state else plant.c_partial

    return PlantModel(
        n_x=2,
        f=lambda x, u, z: lin.a @ x + lin.b * float(u) + lin.e * float(z),
        h=lambda x: c @ x,
        jac_x=lambda x, u, z: lin.a,
        jac_z=lambda x, u, z: lin.e,
        jac_h=lambda x: c,
    )


def colored_noise(rng: np.random.Generator, dt: float, duration: float, cutoff_hz: float, target_std: float) -> np.ndarray:
    """First-order low-pass filtered white Gaussian noise, rescaled to target_std.

    The filter pole is a = exp(-2 pi f_c dt), so the lag-1 autocorrelation of
    the output equals a.  The series starts from a stationary sample and the
    final rescaling pins the sample standard deviation exactly.
    """
    if cutoff_hz <= 0:
        raise ValueError(f"cutoff_hz must be positive, got {cutoff_hz}")
    n = int(round(duration / dt))
    if target_std == 0.0:
        return np.zeros(n)
    a = np.exp(-2.0 * np.pi * cutoff_hz * dt)
    drive_std = np.sqrt(1.0 - a * a)
    w = rng.standard_normal(n)
    out = np.empty(n)
    value = rng.standard_normal()  # stationary unit-variance start
    for k in range(n):
        value = a * value + drive_std * w[k]
        out[k] = value
    sample_std = out.std()
    if sample_std > 0:
        out *= target_std / sample_std
    return out


def step_input(
    duration: float,
    dt: float,
    schedule: list[tuple[float, float]] | None = None,
    rng: np.random.Generator | None = None,
    dwell: float = 5.0,
    low: float = -1.0,
    high: float = 1.0,
) -> np.ndarray:
    """Piecewise-constant input series.

    With an explicit ``schedule`` (list of (start_time, level) pairs) the
    levels are held from each start time onward.  Otherwise one level per
    dwell interval is drawn uniformly from [low, high].
    """
    n = int(round(duration / dt))
    t = np.arange(n) * dt
    if schedule is not None:
        pairs = sorted((float(ts), float(level)) for ts, level in schedule)
        out = np.zeros(n)
        for ts, level in pairs:
            out[t >= ts] = level
        return out
    if rng is None:
        raise ValueError("step_input needs either a schedule or an rng")
    n_levels = max(1, int(np.ceil(duration / dwell)))
    levels = rng.uniform(low, high, size=n_levels)
    idx = np.minimum((t / dwell).astype(int), n_levels - 1)
    return levels[idx]


@dataclass(frozen=True)
class ScenarioConfig:
    """One benchmark measurement scenario plus its signal generators."""

    scenario: str
    full_state: bool
    meas_std: float
    duration: float = 100.0
    dt: float = 0.01
    seed: int = 0
    zeta_std: float = 0.6
    zeta_cutoff_hz: float = 0.1
    u_dwell: float = 5.0
    u_low: float = -1.0
    u_high: float = 1.0
    u_schedule: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}, expected one of {SCENARIOS}")
        if self.duration <= 0 or self.dt <= 0:
            raise ValueError("duration and dt must be positive")

    @property
    def n_outputs(self) -> int:
        return 2 if self.full_state else 1

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


def scenario_config(scenario: str, *, noise_low: float = 0.01, noise_high: float = 0.3, **kwargs) -> ScenarioConfig:
    """Materialize the S1/S2/S3 taxonomy: S1 high noise full state, S2 low
    noise full state, S3 low noise first state only."""
    table = {
        "S1": dict(full_state=True, meas_std=noise_high),
        "S2": dict(full_state=True, meas_std=noise_low),
        "S3": dict(full_state=False, meas_std=noise_low),
    }
    if scenario not in table:
        raise ValueError(f"unknown scenario {scenario!r}")
    return ScenarioConfig(scenario=scenario, **table[scenario], **kwargs)


@dataclass(frozen=True)
class EstimatorParams:
    """Everything an estimator needs beyond the scenario itself."""

    kernel: KernelSpec
    grid: GridSpec
    sigma_r: float
    process_std: float = 0.0
    sigma_ygp: float = 1.0
    cov_bound: float | None = None
    q_x_diag: tuple[float, float] = (0.0, 0.0)
    x0_mean: tuple[float, float] = (0.0, 0.0)
    x0_cov_diag: tuple[float, float] = (1.0, 1.0)
    snapshot_times: tuple[float, ...] = ()


@dataclass(frozen=True)
class GpSnapshot:
    """GP basis statistics captured at one point in time."""

    time: float
    mean: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)
    sigma_r: float = 0.0


@dataclass
class RunRecord:
    """Per-step log of one closed-loop run.

    Row k holds the signals at sample k, the GP prediction made for z(zeta_k)
    before any data from sample k+1 was used, and the estimator posterior
    after absorbing the measurement taken at sample k+1 (column ``y`` is that
    absorbed measurement).  All arrays share length duration/dt.
    """

    scenario: str
    estimator: str
    seed: int
    dt: float
    t: np.ndarray
    zeta: np.ndarray
    z_true: np.ndarray
    u: np.ndarray
    x_true: np.ndarray
    x_true_next: np.ndarray
    y: np.ndarray
    mu_x: np.ndarray
    var_x: np.ndarray
    mu_z_pred: np.ndarray
    var_z_pred: np.ndarray
    var_z_pred_inflated: np.ndarray
    innovation: np.ndarray
    train: np.ndarray
    snapshots: list[GpSnapshot] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.t.shape[0]

    def zeta_range(self, upto_time: float | None = None) -> tuple[float, float]:
        """Range of zeta actually visited (optionally up to a cutoff time)."""
        values = self.zeta if upto_time is None else self.zeta[self.t <= upto_time]
        return float(values.min()), float(values.max())


def _rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    zeta_ss, meas_ss, u_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(zeta_ss), np.random.default_rng(meas_ss), np.random.default_rng(u_ss))


def _simulate_truth(cfg: ScenarioConfig, plant: BenchmarkPlant):
    """Truth trajectory, measurements and exogenous signals for one run."""
    rng_zeta, rng_meas, rng_u = _rng_streams(cfg.seed)
    n = cfg.n_steps
    zeta = colored_noise(rng_zeta, cfg.dt, cfg.duration, cfg.zeta_cutoff_hz, cfg.zeta_std)
    schedule = list(cfg.u_schedule) if cfg.u_schedule is not None else None
    u = step_input(cfg.duration, cfg.dt, schedule=schedule, rng=rng_u, dwell=cfg.u_dwell, low=cfg.u_low, high=cfg.u_high)
    z = np.array([hidden_z(zk) for zk in zeta])
    x = np.zeros((n + 1, 2))
    for k in range(n):
        x[k + 1] = euler_step(x[k], u[k], z[k], plant, cfg.dt)
    c = plant.c_full if cfg.full_state else plant.c_partial
    y = x @ c.T + cfg.meas_std * rng_meas.standard_normal((n + 1, c.shape[0]))
    return zeta, u, z, x, y


def _snapshot_due(times: tuple[float, ...], taken: set[float], t_now: float) -> list[float]:
    return [ts for ts in times if ts not in taken and t_now >= ts - 1e-12]


def run_scenario(cfg: ScenarioConfig, estimator: str, params: EstimatorParams, plant: BenchmarkPlant | None = None) -> RunRecord:
    """Closed-loop simulation of one (scenario, estimator, seed) cell.

    The estimator is stepped once per sample: at step k it predicts with
    (u_k, zeta_k) and absorbs the measurement taken at sample k+1.
    """
    if estimator not in ESTIMATORS:
        raise ScenarioError(f"unknown estimator {estimator!r}, expected one of {ESTIMATORS}")
    if estimator == "rgp-b" and not cfg.full_state:
        raise ScenarioError("rgp-b needs full state measurements and cannot run on scenario S3")
    plant = plant if plant is not None else BenchmarkPlant()
    pre = precompute(params.kernel, params.grid)
    zeta, u, z, x, y = _simulate_truth(cfg, plant)
    n = cfg.n_steps

    record = RunRecord(
        scenario=cfg.scenario,
        estimator=estimator,
        seed=cfg.seed,
        dt=cfg.dt,
        t=np.arange(n) * cfg.dt,
        zeta=zeta,
        z_true=z,
        u=u,
        x_true=x[:n].copy(),
        x_true_next=x[1 : n + 1].copy(),
        y=np.full((n, 2), np.nan),
        mu_x=np.full((n, 2), np.nan),
        var_x=np.full((n, 2), np.nan),
        mu_z_pred=np.full(n, np.nan),
        var_z_pred=np.full(n, np.nan),
        var_z_pred_inflated=np.full(n, np.nan),
        innovation=np.full((n, 2), np.nan),
        train=np.ones(n, dtype=bool),
    )
    record.y[:, : cfg.n_outputs] = y[1 : n + 1]

    if estimator == "rgp-dkf":
        _drive_fused(cfg, params, plant, pre, zeta, u, y, record, train=True)
    elif estimator == "pure-prediction":
        _drive_pure(cfg, params, plant, pre, zeta, u, y, record)
    else:
        _drive_baseline(cfg, params, plant, pre, zeta, u, y, record)
    return record


def _ekf_noise(cfg: ScenarioConfig, params: EstimatorParams) -> EkfNoise:
    r = cfg.meas_std**2 * np.eye(cfg.n_outputs)
    return EkfNoise(q_x=np.diag(params.q_x_diag), r_x=r, sigma_r=params.sigma_r)


def _drive_fused(cfg, params, plant, pre: KernelPrecomp, zeta, u, y, record: RunRecord, train: bool):
    model = benchmark_model(plant, cfg.dt, cfg.full_state)
    noise = _ekf_noise(cfg, params)
    belief = fusion.fused_init(np.asarray(params.x0_mean), np.diag(params.x0_cov_diag), pre)
    taken: set[float] = set()
    for k in range(cfg.n_steps):
        belief, log = fusion.fused_step(
            belief, y[k + 1], model, noise, params.process_std, u[k], zeta[k], pre, train=train
        )
        record.mu_x[k] = belief.state_mean
        record.var_x[k] = np.diag(belief.state_cov)
        record.mu_z_pred[k] = log.gp_pred_mean
        record.var_z_pred[k] = log.gp_pred_var
        record.var_z_pred_inflated[k] = log.gp_pred_var_inflated
        record.innovation[k, : cfg.n_outputs] = log.innovation
        record.train[k] = train
        for ts in _snapshot_due(params.snapshot_times, taken, (k + 1) * cfg.dt):
            taken.add(ts)
            record.snapshots.append(
                GpSnapshot(time=ts, mean=belief.gp_mean.copy(), cov=belief.gp_cov.copy(), sigma_r=params.sigma_r)
            )


def _drive_pure(cfg, params, plant, pre: KernelPrecomp, zeta, u, y, record: RunRecord):
    model = benchmark_model(plant, cfg.dt, cfg.full_state)
    noise = _ekf_noise(cfg, params)
    frozen = rgp_init(pre)
    belief = fusion.StateBelief(mean=np.asarray(params.x0_mean, dtype=float), cov=np.diag(params.x0_cov_diag), step=0)
    taken: set[float] = set()
    for k in range(cfg.n_steps):
        pred, inf = fusion.pure_predict(belief, frozen, model, noise, u[k], zeta[k], pre)
        innovation = y[k + 1] - np.atleast_1d(model.h(pred.mean))
        belief = fusion.pure_update(pred, y[k + 1], model, noise)
        record.mu_x[k] = belief.mean
        record.var_x[k] = np.diag(belief.cov)
        record.mu_z_pred[k] = inf.mean
        record.var_z_pred[k] = inf.variance
        record.var_z_pred_inflated[k] = inf.variance + params.sigma_r**2
        record.innovation[k, : cfg.n_outputs] = innovation
        record.train[k] = False
        for ts in _snapshot_due(params.snapshot_times, taken, (k + 1) * cfg.dt):
            taken.add(ts)
            record.snapshots.append(
                GpSnapshot(time=ts, mean=frozen.mean.copy(), cov=frozen.cov.copy(), sigma_r=params.sigma_r)
            )


def _drive_baseline(cfg, params, plant, pre: KernelPrecomp, zeta, u, y, record: RunRecord):
    lin = discretize(plant, cfg.dt)
    noise = RgpNoise(process_std=params.process_std, measurement_std=params.sigma_ygp, cov_bound=params.cov_bound)
    state = rgp_init(pre)
    taken: set[float] = set()
    for k in range(cfg.n_steps):
        state, inf, y_gp = rgpb_step(state, zeta[k], y[k], y[k + 1], u[k], lin, pre, noise)
        record.mu_x[k] = y[k + 1]  # baseline consumes raw state measurements
        record.mu_z_pred[k] = inf.mean
        record.var_z_pred[k] = inf.variance
        record.var_z_pred_inflated[k] = inf.variance  # no residual floor in the baseline
        record.innovation[k, 0] = y_gp - inf.mean
        record.train[k] = True
        for ts in _snapshot_due(params.snapshot_times, taken, (k + 1) * cfg.dt):
            taken.add(ts)
            record.snapshots.append(GpSnapshot(time=ts, mean=state.mean.copy(), cov=state.cov.copy(), sigma_r=0.0))
