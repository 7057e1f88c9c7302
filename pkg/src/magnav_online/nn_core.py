"""Shallow feed-forward network used as an online-trainable interference model.

One hidden layer, scalar linear output. Parameters live in a flat vector so
they can be carried as filter states:

    [vec(W1), b1, vec(W2), (b2)]

``vec`` stacks columns (column-major), W1 has shape (n_hidden, n_inputs) and
W2 has shape (1, n_hidden). The network output is multiplied by
``output_scale`` and inputs are mapped through a fixed affine normalization.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


class Activation(enum.Enum):
    TANH = "tanh"

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self is Activation.TANH:
            return np.tanh(z)
        raise NotImplementedError(self)  # pragma: no cover

    def derivative_from_output(self, a: np.ndarray) -> np.ndarray:
        """Derivative expressed through the activation value ``a``."""
        if self is Activation.TANH:
            return 1.0 - a * a
        raise NotImplementedError(self)  # pragma: no cover


@dataclass(frozen=True)
class NetworkConfig:
    n_inputs: int
    n_hidden: int
    use_output_bias: bool = True
    output_scale: float = 1.0
    input_offsets: tuple[float, ...] | None = None
    input_scales: tuple[float, ...] | None = None
    activation: Activation = Activation.TANH
    _offsets: np.ndarray = field(init=False, repr=False, compare=False)
    _scales: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_inputs < 1 or self.n_hidden < 1:
            raise ConfigurationError("n_inputs and n_hidden must be >= 1")
        if not self.output_scale > 0:
            raise ConfigurationError("output_scale must be > 0")
        offsets = np.zeros(self.n_inputs) if self.input_offsets is None else np.asarray(self.input_offsets, float)
        scales = np.ones(self.n_inputs) if self.input_scales is None else np.asarray(self.input_scales, float)
        if offsets.shape != (self.n_inputs,) or scales.shape != (self.n_inputs,):
            raise ConfigurationError(
                f"input_offsets/input_scales must have length {self.n_inputs}"
            )
        if np.any(scales <= 0):
            raise ConfigurationError("input_scales must be strictly positive")
        object.__setattr__(self, "input_offsets", tuple(float(v) for v in offsets))
        object.__setattr__(self, "input_scales", tuple(float(v) for v in scales))
        offsets.flags.writeable = False
        scales.flags.writeable = False
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "_scales", scales)

    @property
    def n_params(self) -> int:
        h, n = self.n_hidden, self.n_inputs
        return h * n + h + h + (1 if self.use_output_bias else 0)

    def layer_slices(self) -> dict[str, slice]:
        """Index ranges of each weight/bias block inside the flat vector."""
        h, n = self.n_hidden, self.n_inputs
        out = {
            "W1": slice(0, h * n),
            "b1": slice(h * n, h * n + h),
            "W2": slice(h * n + h, h * n + 2 * h),
        }
        if self.use_output_bias:
            out["b2"] = slice(h * n + 2 * h, h * n + 2 * h + 1)
        return out

    def normalize(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        if raw.shape != (self.n_inputs,):
            raise ConfigurationError(
                f"expected {self.n_inputs} features, got shape {raw.shape}"
            )
        return (raw - self._offsets) / self._scales

    @property
    def scales(self) -> np.ndarray:
        return self._scales


def unpack(params, config: NetworkConfig):
    """Split a flat parameter vector into ``(W1, b1, W2, b2)``.

    ``b2`` is 0.0 when the configuration has no output bias.
    """
    params = np.asarray(params, dtype=float)
    if params.shape != (config.n_params,):
        raise ConfigurationError(
            f"parameter vector must have length {config.n_params}, got {params.shape}"
        )
    s = config.layer_slices()
    W1 = params[s["W1"]].reshape((config.n_hidden, config.n_inputs), order="F")
    b1 = params[s["b1"]]
    W2 = params[s["W2"]]
    b2 = float(params[s["b2"]][0]) if config.use_output_bias else 0.0
    return W1, b1, W2, b2


def pack(W1, b1, W2, b2, config: NetworkConfig) -> np.ndarray:
    W1 = np.asarray(W1, dtype=float)
    if W1.shape != (config.n_hidden, config.n_inputs):
        raise ConfigurationError(f"W1 must have shape {(config.n_hidden, config.n_inputs)}")
    parts = [W1.reshape(-1, order="F"), np.ravel(b1), np.ravel(W2)]
    if config.use_output_bias:
        parts.append(np.atleast_1d(float(b2)))
    out = np.concatenate(parts).astype(float)
    if out.shape != (config.n_params,):
        raise ConfigurationError("bias or output weight lengths do not match n_hidden")
    return out


def glorot_init(config: NetworkConfig, gain: float, seed) -> np.ndarray:
    """Glorot-normal weights scaled by ``gain``; all biases zero.

    Layer standard deviation is ``gain * sqrt(2 / (fan_in + fan_out))``.
    """
    if gain < 0:
        raise ConfigurationError("gain must be non-negative")
    rng = np.random.default_rng(seed)
    h, n = config.n_hidden, config.n_inputs
    sigma1 = gain * np.sqrt(2.0 / (n + h))
    sigma2 = gain * np.sqrt(2.0 / (h + 1))
    W1 = rng.normal(0.0, 1.0, size=(h, n)) * sigma1
    W2 = rng.normal(0.0, 1.0, size=h) * sigma2
    return pack(W1, np.zeros(h), W2, 0.0, config)


def _hidden(params, features, config):
    W1, b1, W2, b2 = unpack(params, config)
    x = config.normalize(features)
    a = config.activation(W1 @ x + b1)
    return W1, W2, b2, x, a


def forward(params, features, config: NetworkConfig) -> float:
    """Network output in physical units (already multiplied by output_scale)."""
    _, W2, b2, _, a = _hidden(params, features, config)
    return config.output_scale * (float(W2 @ a) + b2)


def jacobian_params(params, features, config: NetworkConfig) -> np.ndarray:
    """d(forward)/d(params), ordered like the flat parameter vector."""
    _, W2, _, x, a = _hidden(params, features, config)
    delta = W2 * config.activation.derivative_from_output(a)
    # d/dW1[i, k] = delta_i * x_k, column-major flattening -> outer(delta, x) in F order
    dW1 = np.outer(delta, x).reshape(-1, order="F")
    parts = [dW1, delta, a]
    if config.use_output_bias:
        parts.append(np.ones(1))
    return config.output_scale * np.concatenate(parts)


def jacobian_inputs(params, features, config: NetworkConfig) -> np.ndarray:
    """d(forward)/d(raw features), including the normalization chain factor."""
    W1, W2, _, _, a = _hidden(params, features, config)
    delta = W2 * config.activation.derivative_from_output(a)
    return config.output_scale * (delta @ W1) / config.scales
