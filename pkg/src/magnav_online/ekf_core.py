"""EKF engine for joint state/parameter estimation with scalar measurements.

Also hosts the diagnostics that tie the EKF parameter update to an online
natural-gradient step (gain form vs. covariance-preconditioned gradient form).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalDegeneracyError


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.shape != (mean.size, mean.size):
            raise ConfigurationError(
                f"covariance shape {cov.shape} does not match mean length {mean.size}"
            )
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def is_psd(self, rel_tol: float = 1e-10) -> bool:
        w = np.linalg.eigvalsh(symmetrize(self.covariance))
        return bool(w.min() >= -rel_tol * max(abs(w.max()), 1e-300))


@dataclass(frozen=True)
class NoiseConfig:
    """Process noise ``Q_d`` (already discretized, full or diagonal) and scalar ``R``."""

    process_noise: np.ndarray
    measurement_variance: float
    dt: float = 1.0

    def __post_init__(self):
        Q = np.array(self.process_noise, dtype=float)
        if Q.ndim == 1:
            Q = np.diag(Q)
        elif Q.ndim == 0:
            Q = Q.reshape(1, 1)
        if Q.shape[0] != Q.shape[1]:
            raise ConfigurationError("process noise must be square")
        if not self.measurement_variance > 0:
            raise ConfigurationError("measurement variance R must be > 0")
        if not self.dt > 0:
            raise ConfigurationError("dt must be > 0")
        Q.flags.writeable = False
        object.__setattr__(self, "process_noise", Q)

    @classmethod
    def from_continuous(cls, q_c, measurement_variance: float, dt: float) -> "NoiseConfig":
        """First-order discretization ``Q_d = Q_c * dt``."""
        return cls(np.asarray(q_c, dtype=float) * dt, measurement_variance, dt)


@dataclass(frozen=True)
class GateConfig:
    threshold: float = 6.0
    active: bool = True


@dataclass(frozen=True)
class UpdateRecord:
    innovation: float
    innovation_variance: float
    nis: float
    gated: bool
    kalman_gain: np.ndarray


class Level(enum.IntEnum):
    FULLY_COUPLED = 0
    STATE_MODEL = 1
    LAYER_WISE = 2
    FULL_DIAGONAL_PARAMS = 3


@dataclass(frozen=True)
class DecouplingLevel:
    """Covariance sparsity pattern.

    ``n_state`` leading entries are the vehicle/kinematic block. The remaining
    entries are split into ``param_blocks`` (e.g. W1, b1, W2, b2), given as
    consecutive block lengths that must add up to the parameter count.
    """

    level: Level
    n_state: int
    param_blocks: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.n_state < 0 or any(b <= 0 for b in self.param_blocks):
            raise ConfigurationError("invalid block specification")

    @property
    def dim(self) -> int:
        return self.n_state + sum(self.param_blocks)

    def mask(self) -> np.ndarray:
        n = self.dim
        if self.level == Level.FULLY_COUPLED:
            return np.ones((n, n), dtype=bool)
        m = np.zeros((n, n), dtype=bool)
        s = self.n_state
        m[:s, :s] = True
        if self.level == Level.STATE_MODEL:
            m[s:, s:] = True
        elif self.level == Level.LAYER_WISE:
            start = s
            for b in self.param_blocks:
                m[start:start + b, start:start + b] = True
                start += b
        else:
            idx = np.arange(s, n)
            m[idx, idx] = True
        return m


def predict_static(state: GaussianState, noise: NoiseConfig) -> GaussianState:
    Q = noise.process_noise
    if Q.shape != (state.dim, state.dim):
        raise ConfigurationError("process noise dimension does not match state")
    return GaussianState(state.mean, symmetrize(state.covariance + Q))


def predict_linear(state: GaussianState, F, G, u, noise: NoiseConfig) -> GaussianState:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    n = state.dim
    if F.shape != (n, n):
        raise ConfigurationError(f"transition matrix must be {n}x{n}")
    Q = noise.process_noise
    if Q.shape != (n, n):
        raise ConfigurationError("process noise dimension does not match state")
    mean = F @ state.mean
    if G is not None:
        G = np.atleast_2d(np.asarray(G, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if G.shape != (n, u.size):
            raise ConfigurationError("input matrix is not conformable with the control vector")
        mean = mean + G @ u
    P = F @ state.covariance @ F.T + Q
    return GaussianState(mean, symmetrize(P))


def _gain(P: np.ndarray, H: np.ndarray, R: float):
    PHt = P @ H
    S = float(H @ PHt) + R
    if not S > 0:
        raise NumericalDegeneracyError(f"innovation variance S={S} is not positive")
    return PHt / S, S


def update_scalar(
    state: GaussianState,
    z: float,
    predicted: float,
    H,
    noise: NoiseConfig,
    gate: GateConfig | None = None,
    joseph: bool = False,
) -> tuple[GaussianState, UpdateRecord]:
    """Scalar EKF measurement update with optional chi-square innovation gate."""
    H = np.asarray(H, dtype=float).reshape(-1)
    if H.size != state.dim:
        raise ConfigurationError("measurement Jacobian length does not match state")
    R = float(noise.measurement_variance)
    P = state.covariance
    K, S = _gain(P, H, R)
    nu = float(z) - float(predicted)
    nis = nu * nu / S
    if gate is not None and gate.active and nis > gate.threshold:
        return state, UpdateRecord(nu, S, nis, True, K)
    mean = state.mean + K * nu
    if joseph:
        IKH = np.eye(state.dim) - np.outer(K, H)
        P_new = IKH @ P @ IKH.T + R * np.outer(K, K)
    else:
        P_new = P - np.outer(K, H @ P)
    return GaussianState(mean, symmetrize(P_new)), UpdateRecord(nu, S, nis, False, K)


def apply_decoupling(covariance, level: DecouplingLevel) -> np.ndarray:
    P = np.asarray(covariance, dtype=float)
    if P.shape != (level.dim, level.dim):
        raise ConfigurationError(
            f"block specification covers {level.dim} states, covariance is {P.shape}"
        )
    if level.level == Level.FULLY_COUPLED:
        return P
    return symmetrize(np.where(level.mask(), P, 0.0))


def _posterior_cov(P, H, R):
    K, _ = _gain(P, H, R)
    return K, symmetrize(P - np.outer(K, H @ P))


def ng_identity_residual(state_prior: GaussianState, H, noise: NoiseConfig) -> float:
    """Relative norm of ``K R - P_post H^T`` (zero when ``P_post H^T`` vanishes)."""
    H = np.asarray(H, dtype=float).reshape(-1)
    R = float(noise.measurement_variance)
    K, P_post = _posterior_cov(state_prior.covariance, H, R)
    rhs = P_post @ H
    denom = np.linalg.norm(rhs)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(K * R - rhs) / denom)


def nll_gradient(H, z: float, predicted: float, R: float) -> np.ndarray:
    """Gradient of the Gaussian negative log-likelihood of one scalar observation."""
    H = np.asarray(H, dtype=float).reshape(-1)
    return -H * (float(z) - float(predicted)) / R


def update_as_preconditioned_gradient(state_prior: GaussianState, z, predicted, H, noise: NoiseConfig) -> np.ndarray:
    """State increment computed as ``-P_post @ grad(NLL)``."""
    H = np.asarray(H, dtype=float).reshape(-1)
    R = float(noise.measurement_variance)
    _, P_post = _posterior_cov(state_prior.covariance, H, R)
    return -P_post @ nll_gradient(H, z, predicted, R)


def isotropic_learning_rate(p: float, H, R: float) -> float:
    """Scalar multiplier ``eta`` with ``K = eta * H^T`` when ``P = p I``."""
    H = np.asarray(H, dtype=float).reshape(-1)
    return p / (p * float(H @ H) + R)


def steady_state_variance(q: float, r: float, h: float = 1.0) -> float:
    """Posterior fixed point of the scalar random-walk filter.

    Solves ``1/P = 1/(P + q) + h^2/r`` for the positive root.
    """
    if q < 0 or r <= 0:
        raise ConfigurationError("need q >= 0 and r > 0")
    if q == 0:
        return 0.0
    a = h * h / r
    # a P^2 + a q P - q = 0
    return (-a * q + np.sqrt((a * q) ** 2 + 4 * a * q)) / (2 * a)
