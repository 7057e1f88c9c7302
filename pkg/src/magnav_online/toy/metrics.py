"""Position and model-fit error metrics."""

import numpy as np

from ..errors import ConfigurationError


def drms(estimated, truth) -> float:
    """Root mean squared horizontal distance between two position series."""
    est = np.asarray(estimated, dtype=float).reshape(-1, 2)
    tru = np.asarray(truth, dtype=float).reshape(-1, 2)
    if est.shape != tru.shape:
        raise ConfigurationError("position series must have equal length")
    if est.size == 0:
        raise ConfigurationError("empty position series")
    return float(np.sqrt(np.mean(np.sum((est - tru) ** 2, axis=1))))


def model_rmse(truth, model) -> float:
    truth = np.asarray(truth, dtype=float).reshape(-1)
    model = np.asarray(model, dtype=float).reshape(-1)
    if truth.shape != model.shape:
        raise ConfigurationError("series must have equal length")
    if truth.size == 0:
        raise ConfigurationError("empty series")
    return float(np.sqrt(np.mean((truth - model) ** 2)))
