"""Combined Tolles-Lawson + residual network platform-field model.

``B_pf = A_TL(m) beta_TL + alpha * NN([m_vec, m_scalar]) + S_CB``

The Jacobian row is partitioned as ``[beta_TL (18), S_CB (1), Lambda_NN (N_p), m_vec (3)]``.
The module also runs a navigation-free calibration EKF over ``[beta_TL, S_CB, Lambda_NN]``
on a synthetic attitude schedule, with cold or warm initialization.
"""

from __future__ import annotations

import enum
import hashlib
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ekf_core as ekf
from . import nn_core as nn
from . import tolles_lawson as tl
from .errors import ConfigurationError

N_FEATURES = 4
FEATURE_SCALE = 50000.0  # nT; brings vector and scalar readings to O(1)
PAYLOAD_VERSION = 1


def hybrid_network(n_hidden: int, alpha: float = 400.0, use_output_bias: bool = False,
                   feature_scale: float = FEATURE_SCALE) -> nn.NetworkConfig:
    return nn.NetworkConfig(
        n_inputs=N_FEATURES,
        n_hidden=n_hidden,
        use_output_bias=use_output_bias,
        output_scale=alpha,
        input_offsets=(0.0,) * N_FEATURES,
        input_scales=(feature_scale,) * N_FEATURES,
    )


@dataclass(frozen=True)
class HybridModel:
    tl: tl.TLCoefficients
    nn_config: nn.NetworkConfig
    nn_params: np.ndarray
    bias_cb: float = 0.0

    def __post_init__(self):
        if self.nn_config.n_inputs != N_FEATURES:
            raise ConfigurationError("the residual network takes exactly 4 features [m_vec, m_scalar]")
        p = np.array(self.nn_params, dtype=float).reshape(-1)
        if p.size != self.nn_config.n_params:
            raise ConfigurationError(f"network needs {self.nn_config.n_params} parameters, got {p.size}")
        p.flags.writeable = False
        object.__setattr__(self, "nn_params", p)
        object.__setattr__(self, "bias_cb", float(self.bias_cb))

    @property
    def alpha(self) -> float:
        return self.nn_config.output_scale

    @property
    def n_params(self) -> int:
        return tl.N_COEFFS + 1 + self.nn_config.n_params

    @property
    def state_vector(self) -> np.ndarray:
        return np.concatenate([self.tl.vector, [self.bias_cb], self.nn_params])

    def with_state(self, x) -> "HybridModel":
        x = np.asarray(x, dtype=float)
        return replace(self, tl=tl.TLCoefficients(x[:18]), bias_cb=float(x[18]), nn_params=x[19:])


def features(sample: tl.MagSample) -> np.ndarray:
    return np.array([*sample.m_vec, sample.m_scalar])


def hybrid_terms(sample: tl.MagSample, model: HybridModel, cosines: str = "vector"):
    """The three additive pieces ``(TL, NN, S_CB)`` in nT."""
    return (tl.tl_predict(sample, model.tl, cosines),
            nn.forward(model.nn_params, features(sample), model.nn_config),
            model.bias_cb)


def hybrid_predict(sample: tl.MagSample, model: HybridModel, cosines: str = "vector") -> float:
    t, g, b = hybrid_terms(sample, model, cosines)
    return t + g + b


@dataclass(frozen=True)
class HybridJacobian:
    tl: np.ndarray      # (18,)
    bias: float         # always 1
    nn: np.ndarray      # (N_p,)
    m_vec: np.ndarray   # (3,)

    @property
    def row(self) -> np.ndarray:
        return np.concatenate([self.tl, [self.bias], self.nn, self.m_vec])

    @property
    def params_row(self) -> np.ndarray:
        """Row restricted to the filter parameters ``[beta_TL, S_CB, Lambda_NN]``."""
        return np.concatenate([self.tl, [self.bias], self.nn])


def hybrid_jacobian(sample: tl.MagSample, model: HybridModel, cosines: str = "vector") -> HybridJacobian:
    """Partitioned Jacobian of :func:`hybrid_predict`.

    The ``m_vec`` block is the closed-form TL partial (scalar reading and rate
    held fixed, cosines ``m_vec / Bt``) plus the network input derivative. It
    is exact for ``cosines="scalar"``.
    """
    phi = features(sample)
    d_nn_inputs = nn.jacobian_inputs(model.nn_params, phi, model.nn_config)
    return HybridJacobian(
        tl=tl.build_a_row(sample, cosines),
        bias=1.0,
        nn=nn.jacobian_params(model.nn_params, phi, model.nn_config),
        m_vec=tl.jacobian_vector_mag(sample, model.tl) + d_nn_inputs[:3],
    )


# --- warm payload ---------------------------------------------------------------------

def parameter_labels(config: nn.NetworkConfig) -> list[str]:
    labels = list(tl.LABELS) + ["S_CB"]
    nh, ni = config.n_hidden, config.n_inputs
    # vec(W1) is column-major: input index varies slowest
    labels += [f"W1[{i},{k}]" for k in range(ni) for i in range(nh)]
    labels += [f"b1[{i}]" for i in range(nh)]
    labels += [f"W2[{i}]" for i in range(nh)]
    if config.use_output_bias:
        labels.append("b2")
    return labels


@dataclass(frozen=True)
class WarmPayload:
    mean: np.ndarray
    covariance: np.ndarray
    n_hidden: int
    use_output_bias: bool
    alpha: float

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ConfigurationError("warm payload covariance does not match its mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def network(self) -> nn.NetworkConfig:
        return hybrid_network(self.n_hidden, self.alpha, self.use_output_bias)


def _payload_body(p: WarmPayload) -> list[str]:
    labels = parameter_labels(p.network)
    if len(labels) != p.mean.size:
        raise ConfigurationError("warm payload dimension does not match its network")
    lines = [
        f"version {PAYLOAD_VERSION}",
        f"n_hidden {p.n_hidden}",
        f"use_output_bias {int(p.use_output_bias)}",
        f"alpha {p.alpha!r}",
        f"n_params {p.mean.size}",
        "mean",
    ]
    lines += [f"{lab} {float(v)!r}" for lab, v in zip(labels, p.mean)]
    lines.append("covariance")
    lines += [" ".join(repr(float(v)) for v in row) for row in p.covariance]
    return lines


def save_payload(path, payload: WarmPayload) -> str:
    """Write the labeled text payload; returns its SHA-256 checksum."""
    body = "\n".join(_payload_body(payload)) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    with open(Path(path), "w") as fh:
        fh.write("# magnav_online calibration state\n")
        fh.write(body)
        fh.write(f"sha256 {digest}\n")
    return digest


def load_payload(path) -> WarmPayload:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if not lines or not lines[-1].startswith("sha256 "):
        raise ConfigurationError(f"{path}: missing checksum line")
    body = "\n".join(lines[:-1]) + "\n"
    if hashlib.sha256(body.encode()).hexdigest() != lines[-1].split()[1]:
        raise ConfigurationError(f"{path}: checksum mismatch, file is corrupted or edited")
    it = iter(lines[:-1])
    try:
        head = dict(next(it).split() for _ in range(5))
        if int(head["version"]) != PAYLOAD_VERSION:
            raise ConfigurationError(f"{path}: unsupported payload version {head['version']}")
        n = int(head["n_params"])
        if next(it) != "mean":
            raise ConfigurationError(f"{path}: expected 'mean' section")
        mean = np.array([float(next(it).split()[1]) for _ in range(n)])
        if next(it) != "covariance":
            raise ConfigurationError(f"{path}: expected 'covariance' section")
        cov = np.array([[float(v) for v in next(it).split()] for _ in range(n)])
    except (StopIteration, KeyError, ValueError, IndexError) as exc:
        raise ConfigurationError(f"{path}: malformed calibration state ({exc})") from exc
    payload = WarmPayload(mean, cov, int(head["n_hidden"]), bool(int(head["use_output_bias"])),
                          float(head["alpha"]))
    if len(parameter_labels(payload.network)) != n:
        raise ConfigurationError(f"{path}: parameter count does not match the stored network")
    return payload


class StartKind(enum.Enum):
    COLD = "cold"
    WARM = "warm"


@dataclass(frozen=True)
class StartMode:
    kind: StartKind = StartKind.COLD
    payload: WarmPayload | None = None

    def __post_init__(self):
        if not isinstance(self.kind, StartKind):
            object.__setattr__(self, "kind", StartKind(self.kind))
        if self.kind is StartKind.WARM and self.payload is None:
            raise ConfigurationError("warm start needs a payload")

    @classmethod
    def cold(cls) -> "StartMode":
        return cls(StartKind.COLD)

    @classmethod
    def warm(cls, payload: WarmPayload) -> "StartMode":
        return cls(StartKind.WARM, payload)


# --- synthetic calibration experiment ----------------------------------------------------

DEFAULT_TL_TRUTH = tl.TLCoefficients.from_parts(
    a=(300.0, -150.0, 200.0),
    b=(0.010, -0.004, 0.006, 0.008, -0.003, 0.005),
    c=(0.02, -0.01, 0.005, 0.01, 0.015, -0.005, -0.01, 0.005, 0.02),
)


@dataclass(frozen=True)
class HybridScenario:
    """Scripted attitude schedule rotating a fixed external field into the body frame."""

    duration: float = 600.0
    rate: float = 10.0
    B_nav: tuple[float, float, float] = (20000.0, 2000.0, 45000.0)
    attitude_amplitudes: tuple[float, float, float] = (0.35, 0.25, 0.6)
    attitude_periods: tuple[float, float, float] = (23.0, 37.0, 61.0)
    tl_truth: tl.TLCoefficients = DEFAULT_TL_TRUTH
    residual_amplitude: float = 40.0
    bias_cb: float = 25.0
    noise_std: float = 1.0
    seed: int = 0

    def residual(self, m_vec) -> np.ndarray:
        """Bounded nonlinear residual (nT) of the body-frame direction."""
        m = np.atleast_2d(np.asarray(m_vec, dtype=float))
        u = m / np.linalg.norm(m, axis=1)[:, None]
        return self.residual_amplitude * np.tanh(3.0 * (u[:, 0] * u[:, 2] - u[:, 1]))


@dataclass(frozen=True)
class HybridData:
    t: np.ndarray
    m_vec: np.ndarray       # body-frame vector reading
    m_scalar: np.ndarray    # scalar reading including platform field and noise
    B_e: np.ndarray         # external scalar field, known to the filter
    platform: np.ndarray    # true platform field (TL + residual + bias)


def simulate_hybrid(scn: HybridScenario, seed=None) -> HybridData:
    """Noisy scalar readings ``Be + TL(beta*) + residual + S_CB + v``."""
    rng = np.random.default_rng(scn.seed if seed is None else seed)
    n = int(round(scn.duration * scn.rate)) + 1
    t = np.arange(n) / scn.rate
    R = tl.attitude_matrices(t, scn.attitude_amplitudes, scn.attitude_periods)
    m_vec = R @ np.asarray(scn.B_nav, dtype=float)
    B_e = np.full(n, float(np.linalg.norm(scn.B_nav)))
    m_dot = np.vstack([np.zeros(3), np.diff(m_vec, axis=0) * scn.rate])
    noise = rng.normal(0.0, scn.noise_std, size=n)
    extra = scn.residual(m_vec) + scn.bias_cb + noise
    # the A-row uses the scalar reading itself, so iterate Bt = Be + A(Bt) beta + extra
    Bt = B_e + extra
    for _ in range(100):
        Bt_new = B_e + tl.build_a_matrix(m_vec, Bt, m_dot) @ scn.tl_truth.vector + extra
        done = np.max(np.abs(Bt_new - Bt)) <= 1e-15 * np.max(np.abs(Bt))
        Bt = Bt_new
        if done:
            break
    return HybridData(t, m_vec, Bt, B_e, Bt - B_e - noise)


@dataclass(frozen=True)
class HybridConfig:
    n_hidden: int = 5
    alpha: float = 400.0
    use_output_bias: bool = False
    glorot_gain: float = 1e-2
    P0_tl: float = 1e5
    P0_cb: float = 1.0
    P0_nn: float = 1.0
    q_tl: float = 1.0
    q_cb: float = 1e-6
    q_nn: float = 1e-20
    R: float = 10.0
    gate_active: bool = False
    gate_threshold: float = 6.0
    gate_warmup: float = 600.0
    joseph: bool = False
    divergence_limit: float = 1e6
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError("alpha must be > 0")
        if min(self.P0_tl, self.P0_cb, self.P0_nn, self.q_tl, self.q_cb, self.q_nn) < 0:
            raise ConfigurationError("P0 and q values must be >= 0")
        if not self.R > 0:
            raise ConfigurationError("R must be > 0")

    @property
    def network(self) -> nn.NetworkConfig:
        return hybrid_network(self.n_hidden, self.alpha, self.use_output_bias)


@dataclass
class HybridRunResult:
    t: np.ndarray
    platform: np.ndarray
    tl_out: np.ndarray
    nn_out: np.ndarray
    bias_out: np.ndarray
    predicted: np.ndarray
    nis: np.ndarray
    w2_l1: np.ndarray
    final_state: ekf.GaussianState = field(repr=False)
    network: nn.NetworkConfig = field(repr=False)
    diverged: bool = False
    wall_time: float = 0.0

    @property
    def calibration_error(self) -> np.ndarray:
        return self.platform - self.predicted

    def rmse(self, start: int = 0, stop: int | None = None) -> float:
        e = self.calibration_error[start:stop]
        return float(np.sqrt(np.mean(e ** 2)))

    def running_rmse(self, window: int) -> np.ndarray:
        """Trailing-window RMSE of the calibration error."""
        e2 = self.calibration_error ** 2
        c = np.concatenate([[0.0], np.cumsum(e2)])
        k = np.arange(1, e2.size + 1)
        lo = np.maximum(k - window, 0)
        return np.sqrt((c[k] - c[lo]) / (k - lo))

    @property
    def nn_max_abs(self) -> float:
        return float(np.max(np.abs(self.nn_out)))

    @property
    def payload(self) -> WarmPayload:
        return WarmPayload(self.final_state.mean, self.final_state.covariance,
                           self.network.n_hidden, self.network.use_output_bias,
                           self.network.output_scale)


def initial_state(config: HybridConfig, start: StartMode) -> ekf.GaussianState:
    net = config.network
    if start.kind is StartKind.WARM:
        p = start.payload
        if (p.n_hidden, p.use_output_bias) != (net.n_hidden, net.use_output_bias) or p.alpha != net.output_scale:
            raise ConfigurationError("warm payload network does not match the configured network")
        return ekf.GaussianState(p.mean, p.covariance)
    ss = np.random.SeedSequence(config.seed)
    w0 = nn.glorot_init(net, config.glorot_gain, ss)
    x0 = np.concatenate([np.zeros(tl.N_COEFFS + 1), w0])
    P0 = np.diag(np.concatenate([np.full(tl.N_COEFFS, config.P0_tl), [config.P0_cb],
                                 np.full(net.n_params, config.P0_nn)]))
    return ekf.GaussianState(x0, P0)


def run_hybrid_coldstart(data: HybridData, start: StartMode, config: HybridConfig) -> HybridRunResult:
    """Joint calibration EKF over ``[beta_TL, S_CB, Lambda_NN]`` with the external field known."""
    net = config.network
    state = initial_state(config, start)
    dt = float(data.t[1] - data.t[0])
    Q = np.concatenate([np.full(tl.N_COEFFS, config.q_tl), [config.q_cb], np.full(net.n_params, config.q_nn)])
    noise = ekf.NoiseConfig(Q, config.R, dt)
    samples = tl.samples_from_series(data.t, data.m_vec, data.m_scalar)
    n = len(samples)
    out = {k: np.full(n, np.nan) for k in ("tl", "nn", "bias", "pred", "nis", "w2")}
    w2_slice = net.layer_slices()["W2"]
    model = HybridModel(tl.TLCoefficients(state.mean[:18]), net, state.mean[19:], state.mean[18])
    diverged = False
    start_time = time.perf_counter()
    for k, s in enumerate(samples):
        idx = k + 1
        state = ekf.predict_static(state, noise)
        model = model.with_state(state.mean)
        h = data.B_e[idx] + hybrid_predict(s, model)
        H = hybrid_jacobian(s, model).params_row
        gate = ekf.GateConfig(config.gate_threshold, config.gate_active and data.t[idx] > config.gate_warmup)
        state, rec = ekf.update_scalar(state, data.m_scalar[idx], h, H, noise, gate, joseph=config.joseph)
        model = model.with_state(state.mean)
        t_out, g_out, b_out = hybrid_terms(s, model)
        out["tl"][k], out["nn"][k], out["bias"][k] = t_out, g_out, b_out
        out["pred"][k] = t_out + g_out + b_out
        out["nis"][k] = rec.nis
        out["w2"][k] = np.sum(np.abs(state.mean[19:][w2_slice]))
        if not np.all(np.isfinite(state.mean)) or abs(data.platform[idx] - out["pred"][k]) > config.divergence_limit:
            diverged = True
            break
    wall = time.perf_counter() - start_time
    return HybridRunResult(data.t[1:], data.platform[1:], out["tl"], out["nn"], out["bias"], out["pred"],
                           out["nis"], out["w2"], state, net, diverged, wall)
