"""Recursive Fisher information and Cramer-Rao bounds along a recorded run.

Prediction ``J' = (F J^-1 F^T + Q)^-1`` and update ``J += H^T R^-1 H``. When a
matrix to be inverted is not numerically positive definite, a jitter of
``1e-12 * trace / n`` is added to its diagonal (escalated by 100x while
still singular) and the step is flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .ekf_core import symmetrize
from .errors import ConfigurationError, NumericalDegeneracyError

JITTER = 1e-12


def _inv_pd(M: np.ndarray, regularize: bool = True):
    """Inverse of a symmetric PSD matrix; returns ``(inverse, jittered)``."""
    M = symmetrize(np.atleast_2d(np.asarray(M, dtype=float)))
    try:
        c = linalg.cho_factor(M)
        return symmetrize(linalg.cho_solve(c, np.eye(M.shape[0]))), False
    except linalg.LinAlgError:
        if not regularize:
            raise NumericalDegeneracyError("information matrix is singular and regularization is off")
    n = M.shape[0]
    tr = float(np.trace(M))
    eps = JITTER * tr / n if tr > 0 else JITTER
    for _ in range(8):
        try:
            c = linalg.cho_factor(M + eps * np.eye(n))
            return symmetrize(linalg.cho_solve(c, np.eye(n))), True
        except linalg.LinAlgError:
            eps *= 100.0
    raise NumericalDegeneracyError("information matrix could not be regularized")


def _fim_predict(J, F, Q, regularize=True):
    J = np.atleast_2d(np.asarray(J, dtype=float))
    n = J.shape[0]
    F = np.atleast_2d(np.asarray(F, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if F.shape != (n, n) or Q.shape != (n, n):
        raise ConfigurationError("F and Q must match the information matrix dimension")
    Jinv, j1 = _inv_pd(J, regularize)
    out, j2 = _inv_pd(F @ Jinv @ F.T + Q, regularize)
    return out, j1 or j2


def fim_predict(J, F, Q, regularize: bool = True) -> np.ndarray:
    return _fim_predict(J, F, Q, regularize)[0]


def fim_update(J, H, R) -> np.ndarray:
    """Add the information of one measurement; ``H`` is a row (scalar z) or a matrix."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if H.shape[1] != J.shape[0] or R.shape != (H.shape[0], H.shape[0]):
        raise ConfigurationError("H and R are not conformable with the information matrix")
    return symmetrize(J + H.T @ np.linalg.solve(R, H))


@dataclass(frozen=True)
class CrlbTrace:
    bound: np.ndarray       # (T,) sqrt(trace of the position block of J^-1) [m]
    jittered: np.ndarray    # (T,) flags
    final_information: np.ndarray


def crlb_trace(H_seq, F, Q, R, J0, n_position: int = 2, regularize: bool = True) -> CrlbTrace:
    """Position bound per step from a recorded Jacobian sequence.

    Row ``k`` of ``H_seq`` is the Jacobian used at step ``k``; a row containing
    non-finite values (e.g. step 0, or gated steps) contributes no information.
    Step 0 reports the prior bound.
    """
    H_seq = np.atleast_2d(np.asarray(H_seq, dtype=float))
    J = symmetrize(np.atleast_2d(np.asarray(J0, dtype=float)))
    n = J.shape[0]
    if H_seq.shape[1] != n:
        raise ConfigurationError(f"Jacobian rows have {H_seq.shape[1]} entries, state has {n}")
    if not 1 <= n_position <= n:
        raise ConfigurationError("invalid position block size")
    T = H_seq.shape[0]
    bound = np.empty(T)
    flags = np.zeros(T, dtype=bool)
    cov, flags[0] = _inv_pd(J, regularize)
    bound[0] = np.sqrt(np.trace(cov[:n_position, :n_position]))
    for k in range(1, T):
        J, jit = _fim_predict(J, F, Q, regularize)
        if np.all(np.isfinite(H_seq[k])):
            J = fim_update(J, H_seq[k], R)
        cov, jit2 = _inv_pd(J, regularize)
        flags[k] = jit or jit2
        bound[k] = np.sqrt(np.trace(cov[:n_position, :n_position]))
    return CrlbTrace(bound, flags, J)
