"""Anomaly-aided 2-D odometry with online interference-model learning.

Truth integrates the clean trajectory velocity; the filter and the
odometry-only baseline integrate the control ``u = v + w`` where ``w`` is the
process-noise realization (per axis std ``sigma_w / sqrt(dt)``, so the
position random walk has variance ``sigma_w^2 dt`` per step).

Augmented filter state: ``[p_x, p_y, Lambda]`` where ``Lambda`` holds either
the seven coefficients of the known interference structure (scenario 1) or the
flat network parameters (scenario 2). Parameters follow a random walk.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import ekf_core as ekf
from .. import nn_core as nn
from ..errors import ConfigurationError, DomainError
from ..field_models import (
    AnomalyMap2D,
    InterferenceTruth,
    interference_jacobian_beta,
    interference_value,
    map_gradient,
    map_value,
)
from . import metrics
from .trajectories import Trajectory


class Scenario(enum.Enum):
    KNOWN_STRUCTURE = "known_structure"
    NEURAL_NETWORK = "neural_network"


class FeatureSet(enum.Enum):
    M = "M"
    MV = "MV"
    ALL = "ALL"

    @property
    def columns(self) -> tuple[int, ...]:
        # indices into [p_x, p_y, m, psi, s]
        return {"M": (2,), "MV": (2, 4), "ALL": (0, 1, 2, 3, 4)}[self.value]


# normalization of the five true features: (offset, scale)
FEATURE_NORMALIZATION = {
    0: (1000.0, 1000.0),   # p_x [m]
    1: (1000.0, 1000.0),   # p_y [m]
    2: (0.0, 100.0),       # m [nT]
    3: (0.0, math.pi),     # psi [rad]
    4: (20.0, 2.0),        # s [m/s]
}

DEFAULT_TRUTH_BETA = (0.4, 2 * math.pi / 1500.0, 0.3, 2 * math.pi / 1200.0, 2.0, 0.3, 1.0e-2)


def network_for(feature_set: FeatureSet, n_hidden: int, use_output_bias: bool = True,
                output_scale: float = 1.0) -> nn.NetworkConfig:
    cols = feature_set.columns
    return nn.NetworkConfig(
        n_inputs=len(cols),
        n_hidden=n_hidden,
        use_output_bias=use_output_bias,
        output_scale=output_scale,
        input_offsets=tuple(FEATURE_NORMALIZATION[c][0] for c in cols),
        input_scales=tuple(FEATURE_NORMALIZATION[c][1] for c in cols),
    )


@dataclass(frozen=True)
class SimConfig:
    """Filter and noise settings for one run.

    ``q_state`` and ``r_filter`` of ``None`` mean "matched to the simulated
    noise" (``sigma_w^2 dt`` and ``sigma_v^2``). Per-step values given here are
    defined at ``dt = 1 s`` and scale linearly with ``dt``.
    """

    scenario: Scenario = Scenario.NEURAL_NETWORK
    feature_set: FeatureSet = FeatureSet.M
    n_hidden: int = 8
    use_output_bias: bool = True
    output_scale: float = 1.0
    glorot_gain: float = 1.0
    sigma_w: float = 0.3
    sigma_v: float = 0.1
    P0_state: float = 1.0
    P0_params: float | tuple[float, ...] = 1000.0
    q_params: float | tuple[float, ...] = 0.5
    q_state: float | None = 20.0
    r_filter: float | None = 0.01
    beta_init: tuple[float, ...] | None = None
    gate_active: bool = False
    gate_threshold: float = 6.0
    gate_warmup: float = 60.0
    decoupling: ekf.Level = ekf.Level.FULLY_COUPLED
    joseph: bool = False
    record_jacobians: bool = False
    seed: int = 0

    def __post_init__(self):
        for name, enum_type in (("scenario", Scenario), ("feature_set", FeatureSet), ("decoupling", ekf.Level)):
            v = getattr(self, name)
            if not isinstance(v, enum_type):
                object.__setattr__(self, name, enum_type(v))
        for name in ("P0_params", "q_params", "beta_init"):
            v = getattr(self, name)
            if isinstance(v, list):
                object.__setattr__(self, name, tuple(float(x) for x in v))
        if self.P0_state < 0 or np.any(np.asarray(self.P0_params) < 0) or np.any(np.asarray(self.q_params) < 0):
            raise ConfigurationError("P0 and q values must be >= 0")
        if self.q_state is not None and self.q_state < 0:
            raise ConfigurationError("q_state must be >= 0")
        if self.sigma_w < 0 or self.sigma_v < 0:
            raise ConfigurationError("noise standard deviations must be >= 0")
        if self.r_filter is not None and not self.r_filter > 0:
            raise ConfigurationError("r_filter must be > 0")
        if self.n_hidden < 1:
            raise ConfigurationError("n_hidden must be >= 1")

    @property
    def network(self) -> nn.NetworkConfig:
        return network_for(self.feature_set, self.n_hidden, self.use_output_bias, self.output_scale)

    @property
    def n_params(self) -> int:
        return 7 if self.scenario is Scenario.KNOWN_STRUCTURE else self.network.n_params

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, enum.Enum):
                d[k] = v.value if not isinstance(v, ekf.Level) else int(v)
            elif isinstance(v, tuple):
                d[k] = list(v)
        return d


# Per-coefficient prior variance and random-walk intensity for the known
# structure. The spatial frequencies get far smaller values than the
# amplitudes: a drift of 1e-4 rad/m in a frequency already moves the model by
# tenths of a nT across the 2 km domain.
SCENARIO1_P0_PARAMS = (100.0, 1e-10, 100.0, 1e-10, 100.0, 100.0, 1e-4)
SCENARIO1_Q_PARAMS = (1e-8, 1e-16, 1e-8, 1e-16, 1e-8, 1e-8, 1e-14)

DEFAULT_TRAJECTORY = {Scenario.KNOWN_STRUCTURE: "irregular", Scenario.NEURAL_NETWORK: "lawnmower"}


def scenario1_config(truth: InterferenceTruth | None = None, **overrides) -> SimConfig:
    """Known-structure defaults: noise models matched to the simulation.

    The two spatial frequencies start at their nominal values: with a zero
    frequency the measurement Jacobian of both the amplitude and the
    frequency is identically zero, so they could never leave zero.
    """
    beta = (truth or InterferenceTruth(DEFAULT_TRUTH_BETA)).beta
    base = dict(
        scenario=Scenario.KNOWN_STRUCTURE,
        P0_params=SCENARIO1_P0_PARAMS,
        q_params=SCENARIO1_Q_PARAMS,
        q_state=None,
        r_filter=None,
        beta_init=(0.0, beta[1], 0.0, beta[3], 0.0, 0.0, 0.0),
    )
    base.update(overrides)
    return SimConfig(**base)


def scenario2_config(**overrides) -> SimConfig:
    base = dict(scenario=Scenario.NEURAL_NETWORK)
    base.update(overrides)
    return SimConfig(**base)


@dataclass(frozen=True)
class Measurements:
    z: np.ndarray        # (N+1,) scalar field measurements [nT]
    u: np.ndarray        # (N+1, 2) noisy velocity control [m/s]
    g_true: np.ndarray   # (N+1,) interference truth [nT]
    m_true: np.ndarray   # (N+1,) anomaly at the true position [nT]


def true_features(traj: Trajectory, anomaly: np.ndarray) -> np.ndarray:
    return np.column_stack([traj.position, anomaly, traj.heading, traj.speed])


def simulate_measurements(traj: Trajectory, amap: AnomalyMap2D, truth: InterferenceTruth,
                          sigma_v: float, seed, sigma_w: float = 0.0) -> Measurements:
    """``z = m(p) + g(phi) + v``; control ``u = velocity + w``."""
    rng = np.random.default_rng(seed)
    n = len(traj)
    m_true = np.array([map_value(amap, p) for p in traj.position])
    feats = true_features(traj, m_true)
    g = np.array([interference_value(truth.beta, truth.c, f) for f in feats])
    v_noise = rng.normal(0.0, 1.0, size=n) * sigma_v
    w_noise = rng.normal(0.0, 1.0, size=(n, 2)) * (sigma_w / math.sqrt(traj.dt))
    return Measurements(m_true + g + v_noise, traj.velocity + w_noise, g, m_true)


@dataclass
class RunResult:
    t: np.ndarray
    truth: np.ndarray
    odometry: np.ndarray
    estimate: np.ndarray
    position_cov: np.ndarray   # (N+1, 2, 2)
    params: np.ndarray         # (N+1, n_params)
    g_true: np.ndarray
    g_model: np.ndarray
    nis: np.ndarray
    gated: np.ndarray
    innovation: np.ndarray
    jacobians: np.ndarray | None = None
    wall_time: float = 0.0
    diverged: bool = False
    final_state: ekf.GaussianState | None = field(default=None, repr=False)

    @property
    def position_error(self) -> np.ndarray:
        return np.linalg.norm(self.estimate - self.truth, axis=1)

    @property
    def odometry_error(self) -> np.ndarray:
        return np.linalg.norm(self.odometry - self.truth, axis=1)

    @property
    def mean_position_error(self) -> float:
        return float(self.position_error.mean())

    @property
    def final_odometry_drift(self) -> float:
        return float(self.odometry_error[-1])

    @property
    def model_rmse(self) -> float:
        return metrics.model_rmse(self.g_true, self.g_model)

    @property
    def drms(self) -> float:
        return metrics.drms(self.estimate, self.truth)

    def nees(self) -> np.ndarray:
        e = self.estimate - self.truth
        return np.einsum("ti,tij,tj->t", e, np.linalg.inv(self.position_cov), e)

    def metrics(self) -> dict:
        return {
            "mean_position_error": self.mean_position_error,
            "final_odometry_drift": self.final_odometry_drift,
            "model_rmse": self.model_rmse,
            "drms": self.drms,
            "diverged": bool(self.diverged),
        }


class _KnownStructure:
    def __init__(self, truth_c: float):
        self.c = truth_c

    def value(self, params, phi):
        return interference_value(params, self.c, phi)

    def jacobian(self, params, phi):
        return interference_jacobian_beta(InterferenceTruth(tuple(params), self.c), phi)


class _Network:
    def __init__(self, config: nn.NetworkConfig, columns):
        self.config = config
        self.columns = list(columns)

    def value(self, params, phi):
        return nn.forward(params, phi[self.columns], self.config)

    def jacobian(self, params, phi):
        return nn.jacobian_params(params, phi[self.columns], self.config)


def _as_vector(v, n):
    a = np.asarray(v, dtype=float)
    return np.full(n, float(a)) if a.ndim == 0 else a.reshape(-1)


def _model_for(config: SimConfig, truth: InterferenceTruth):
    if config.scenario is Scenario.KNOWN_STRUCTURE:
        return _KnownStructure(truth.c)
    return _Network(config.network, config.feature_set.columns)


def filter_features(pos_est, amap, heading, speed) -> np.ndarray:
    """Feature vector seen by the filter: estimated position, map at that position,
    and the exogenous heading and speed."""
    return np.array([pos_est[0], pos_est[1], map_value(amap, pos_est), heading, speed])


def predicted_measurement(x_aug, amap, model, heading, speed) -> float:
    phi = filter_features(x_aug[:2], amap, heading, speed)
    return map_value(amap, x_aug[:2]) + model.value(x_aug[2:], phi)


def measurement_jacobian(x_aug, amap, model, heading, speed) -> np.ndarray:
    """``[dm/dp, dg/dLambda]``; feature dependence on position is neglected."""
    phi = filter_features(x_aug[:2], amap, heading, speed)
    return np.concatenate([map_gradient(amap, x_aug[:2]), model.jacobian(x_aug[2:], phi)])


def _seeds(seed):
    ss = np.random.SeedSequence(seed)
    return ss.spawn(3)


def initial_parameters(config: SimConfig, seed) -> np.ndarray:
    if config.beta_init is not None:
        p = np.asarray(config.beta_init, dtype=float)
        if p.size != config.n_params:
            raise ConfigurationError(f"beta_init must have {config.n_params} entries")
        return p
    if config.scenario is Scenario.KNOWN_STRUCTURE:
        return np.zeros(7)
    return nn.glorot_init(config.network, config.glorot_gain, seed)


def filter_covariances(config: SimConfig, dt: float):
    """``(P0, Q, R)`` of the augmented filter; ``None`` process/measurement values fall back to the truth."""
    n_p = config.n_params
    P0 = np.diag(np.concatenate([np.full(2, config.P0_state), _as_vector(config.P0_params, n_p)]))
    q_state = config.sigma_w ** 2 * dt if config.q_state is None else config.q_state * dt
    Q = np.diag(np.concatenate([np.full(2, q_state), _as_vector(config.q_params, n_p) * dt]))
    R = config.sigma_v ** 2 if config.r_filter is None else config.r_filter
    return P0, Q, R


def run_filter(config: SimConfig, traj: Trajectory, amap: AnomalyMap2D, truth: InterferenceTruth,
               meas: Measurements | None = None, seed=None) -> RunResult:
    """Run the augmented EKF (either scenario) over one trajectory."""
    seed = config.seed if seed is None else seed
    meas_seed, init_seed, nn_seed = _seeds(seed)
    if meas is None:
        meas = simulate_measurements(traj, amap, truth, config.sigma_v, meas_seed, config.sigma_w)
    model = _model_for(config, truth)
    dt = traj.dt
    n = len(traj)
    n_p = config.n_params
    dim = 2 + n_p

    init_rng = np.random.default_rng(init_seed)
    p0 = traj.position[0] + init_rng.normal(0.0, 1.0, size=2) * math.sqrt(config.P0_state)
    x0 = np.concatenate([p0, initial_parameters(config, nn_seed)])
    P0, Q, R = filter_covariances(config, dt)
    state = ekf.GaussianState(x0, P0)
    noise = ekf.NoiseConfig(Q, max(R, 1e-300), dt)
    F = np.eye(dim)
    G = np.zeros((dim, 2))
    G[0, 0] = G[1, 1] = dt
    if config.scenario is Scenario.NEURAL_NETWORK:
        blocks = tuple(s.stop - s.start for s in config.network.layer_slices().values())
    else:
        blocks = (n_p,)
    decoupling = ekf.DecouplingLevel(config.decoupling, 2, blocks)

    est = np.empty((n, 2))
    odo = np.empty((n, 2))
    pcov = np.empty((n, 2, 2))
    params = np.empty((n, n_p))
    g_model = np.empty(n)
    nis = np.full(n, np.nan)
    innov = np.full(n, np.nan)
    gated = np.zeros(n, dtype=bool)
    jac = np.full((n, dim), np.nan) if config.record_jacobians else None

    def record(k, st):
        est[k] = st.mean[:2]
        pcov[k] = st.covariance[:2, :2]
        params[k] = st.mean[2:]
        phi = filter_features(st.mean[:2], amap, traj.heading[k], traj.speed[k])
        g_model[k] = model.value(st.mean[2:], phi)

    odo[0] = p0
    record(0, state)
    diverged = False
    diag = amap.diagonal if math.isfinite(amap.diagonal) else math.inf
    start = time.perf_counter()
    for k in range(1, n):
        odo[k] = odo[k - 1] + dt * meas.u[k - 1]
        state = ekf.predict_linear(state, F, G, meas.u[k - 1], noise)
        x = state.mean
        if not diverged:
            try:
                h = predicted_measurement(x, amap, model, traj.heading[k], traj.speed[k])
                H = measurement_jacobian(x, amap, model, traj.heading[k], traj.speed[k])
            except DomainError:
                diverged = True
            else:
                gate = ekf.GateConfig(config.gate_threshold,
                                      config.gate_active and traj.t[k] > config.gate_warmup)
                state, rec = ekf.update_scalar(state, meas.z[k], h, H, noise, gate, joseph=config.joseph)
                if config.decoupling is not ekf.Level.FULLY_COUPLED:
                    state = ekf.GaussianState(state.mean, ekf.apply_decoupling(state.covariance, decoupling))
                nis[k], innov[k], gated[k] = rec.nis, rec.innovation, rec.gated
                if jac is not None:
                    jac[k] = H
        try:
            record(k, state)
        except DomainError:
            diverged = True
            est[k], pcov[k], params[k] = state.mean[:2], state.covariance[:2, :2], state.mean[2:]
            g_model[k] = np.nan
        if not np.all(np.isfinite(state.mean)) or np.linalg.norm(est[k] - traj.position[k]) > diag:
            diverged = True
    wall = time.perf_counter() - start
    return RunResult(traj.t.copy(), traj.position.copy(), odo, est, pcov, params, meas.g_true.copy(),
                     g_model, nis, gated, innov, jac, wall, diverged, state)


def run_scenario1(config: SimConfig, traj, amap, truth, meas=None, seed=None) -> RunResult:
    if config.scenario is not Scenario.KNOWN_STRUCTURE:
        raise ConfigurationError("run_scenario1 needs scenario=known_structure")
    return run_filter(config, traj, amap, truth, meas, seed)


def run_scenario2(config: SimConfig, traj, amap, truth, meas=None, seed=None) -> RunResult:
    if config.scenario is not Scenario.NEURAL_NETWORK:
        raise ConfigurationError("run_scenario2 needs scenario=neural_network")
    return run_filter(config, traj, amap, truth, meas, seed)


def run(config: SimConfig, traj, amap, truth, meas=None, seed=None) -> RunResult:
    return run_filter(config, traj, amap, truth, meas, seed)


def with_seed(config: SimConfig, seed: int) -> SimConfig:
    return replace(config, seed=seed)
