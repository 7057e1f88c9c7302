"""Tolles-Lawson platform-field model and offline calibration.

Coefficient order is ``[a1..a3, b1..b6, c1..c9]``. A single A-row is::

    [Bx^, By^, Bz^,
     Bt Bx^Bx^, Bt Bx^By^, Bt Bx^Bz^, Bt By^By^, Bt By^Bz^, Bt Bz^Bz^,
     dBx Bx^, dBx By^, dBx Bz^, dBy Bx^, ..., dBz Bz^]

so the eddy coefficient for ``dB_j * B^_i`` sits at index ``9 + 3 j + i``.
Direction cosines come from the vector magnetometer, the induced block is
referenced to the scalar reading ``Bt``, and ``dB`` is the finite-difference
rate of the vector reading.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, DomainError, IllConditionedError

N_COEFFS = 18
LABELS = tuple([f"a{i}" for i in range(1, 4)] + [f"b{i}" for i in range(1, 7)]
               + [f"c{i}" for i in range(1, 10)])

# (i, j) pairs of the six induced terms, upper triangle in row order
_INDUCED_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))

# condition number (after column equilibration) above which plain least squares refuses
MAX_CONDITION = 1e10


@dataclass(frozen=True)
class TLCoefficients:
    beta: tuple[float, ...]

    def __post_init__(self):
        beta = tuple(float(v) for v in np.asarray(self.beta, dtype=float).reshape(-1))
        if len(beta) != N_COEFFS:
            raise ConfigurationError(f"Tolles-Lawson coefficients need exactly {N_COEFFS} entries")
        object.__setattr__(self, "beta", beta)

    @classmethod
    def from_parts(cls, a=(0.0,) * 3, b=(0.0,) * 6, c=(0.0,) * 9) -> "TLCoefficients":
        return cls(tuple(a) + tuple(b) + tuple(c))

    @classmethod
    def zeros(cls) -> "TLCoefficients":
        return cls((0.0,) * N_COEFFS)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.beta)

    @property
    def a(self) -> np.ndarray:
        return np.array(self.beta[0:3])

    @property
    def b(self) -> np.ndarray:
        return np.array(self.beta[3:9])

    @property
    def c(self) -> np.ndarray:
        return np.array(self.beta[9:18])


@dataclass(frozen=True)
class MagSample:
    """One epoch: vector reading (nT, body), scalar reading (nT), rate (nT/s)."""

    m_vec: tuple[float, float, float]
    m_scalar: float
    m_dot: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dt: float = 1.0

    def __post_init__(self):
        m_vec = tuple(float(v) for v in self.m_vec)
        m_dot = tuple(float(v) for v in self.m_dot)
        if len(m_vec) != 3 or len(m_dot) != 3:
            raise ConfigurationError("vector reading and rate must have 3 components")
        if not math.hypot(*m_vec) > 0:
            raise DomainError("zero vector-magnetometer reading has no direction")
        if not self.m_scalar > 0:
            raise DomainError("scalar reading must be > 0")
        if not self.dt > 0:
            raise ConfigurationError("dt must be > 0")
        object.__setattr__(self, "m_vec", m_vec)
        object.__setattr__(self, "m_dot", m_dot)
        object.__setattr__(self, "m_scalar", float(self.m_scalar))


def finite_diff_mdot(m_vec_t, m_vec_prev, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ConfigurationError("dt must be > 0")
    return (np.asarray(m_vec_t, dtype=float) - np.asarray(m_vec_prev, dtype=float)) / dt


def samples_from_series(t, m_vec, m_scalar) -> list[MagSample]:
    """Samples for epochs ``1..N-1``; the first epoch only seeds the rate."""
    t = np.asarray(t, dtype=float).reshape(-1)
    m_vec = np.asarray(m_vec, dtype=float).reshape(-1, 3)
    m_scalar = np.asarray(m_scalar, dtype=float).reshape(-1)
    if not (t.size == m_vec.shape[0] == m_scalar.size):
        raise ConfigurationError("series lengths differ")
    if t.size < 2:
        raise ConfigurationError("need at least two epochs to form rates")
    dts = np.diff(t)
    if np.any(dts <= 0):
        raise ConfigurationError("time stamps must be strictly increasing")
    return [MagSample(tuple(m_vec[k]), m_scalar[k], tuple(finite_diff_mdot(m_vec[k], m_vec[k - 1], dts[k - 1])),
                      float(dts[k - 1]))
            for k in range(1, t.size)]


def _stack(samples):
    samples = list(samples)
    if not samples:
        raise ConfigurationError("no samples")
    m_vec = np.array([s.m_vec for s in samples])
    m_scalar = np.array([s.m_scalar for s in samples])
    m_dot = np.array([s.m_dot for s in samples])
    return m_vec, m_scalar, m_dot


def build_a_matrix(m_vec, m_scalar, m_dot, cosines: str = "vector") -> np.ndarray:
    """A-rows for arrays of epochs, shapes ``(N,3)``, ``(N,)``, ``(N,3)``.

    ``cosines="vector"`` normalizes by the vector-reading norm (the model);
    ``cosines="scalar"`` divides by the scalar reading instead, which is the
    convention under which :func:`jacobian_vector_mag` is the exact derivative.
    """
    m_vec = np.atleast_2d(np.asarray(m_vec, dtype=float))
    m_scalar = np.atleast_1d(np.asarray(m_scalar, dtype=float))
    m_dot = np.atleast_2d(np.asarray(m_dot, dtype=float))
    if cosines == "vector":
        norm = np.linalg.norm(m_vec, axis=1)
    elif cosines == "scalar":
        norm = m_scalar
    else:
        raise ConfigurationError(f"unknown cosine convention {cosines!r}")
    if np.any(norm <= 0):
        raise DomainError("zero vector-magnetometer reading has no direction")
    u = m_vec / norm[:, None]
    induced = np.column_stack([m_scalar * u[:, i] * u[:, j] for i, j in _INDUCED_PAIRS])
    # eddy column 3*j + i holds dB_j * u_i
    eddy = (m_dot[:, :, None] * u[:, None, :]).reshape(-1, 9)
    return np.hstack([u, induced, eddy])


def build_a_row(sample: MagSample, cosines: str = "vector") -> np.ndarray:
    return build_a_matrix(sample.m_vec, sample.m_scalar, sample.m_dot, cosines)[0]


def tl_predict(sample: MagSample, coeffs: TLCoefficients, cosines: str = "vector") -> float:
    """Platform field ``A_row @ beta`` (nT)."""
    return float(build_a_row(sample, cosines) @ coeffs.vector)


def jacobian_vector_mag(sample: MagSample, coeffs: TLCoefficients) -> np.ndarray:
    """Partials of the platform field with respect to the three vector readings.

    Holds the scalar reading and the rate fixed and treats the direction
    cosines as ``m_vec / Bt``; this is the derivative of
    ``tl_predict(..., cosines="scalar")``.
    """
    Bt = sample.m_scalar
    u = np.asarray(sample.m_vec) / Bt
    d = np.asarray(sample.m_dot)
    a1, a2, a3, b1, b2, b3, b4, b5, b6, c1, c2, c3, c4, c5, c6, c7, c8, c9 = coeffs.beta
    ux, uy, uz = u
    dx, dy, dz = d
    return np.array([
        a1 / Bt + (2 * ux * b1 + uy * b2 + uz * b3) + (dx * c1 + dy * c4 + dz * c7) / Bt,
        a2 / Bt + (ux * b2 + 2 * uy * b4 + uz * b5) + (dx * c2 + dy * c5 + dz * c8) / Bt,
        a3 / Bt + (ux * b3 + uy * b5 + 2 * uz * b6) + (dx * c3 + dy * c6 + dz * c9) / Bt,
    ])


# --- calibration ------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationResult:
    coeffs: TLCoefficients
    residual_rms: float
    condition_number: float
    method: str
    ridge: float
    raw_induced: tuple[float, ...] | None = None   # accurate-vector only: full 3x3, row-major
    raw_eddy: tuple[float, ...] | None = None      # accurate-vector only: full 3x3, row-major


def _solve(A: np.ndarray, y: np.ndarray, ridge: float):
    """Ridge least squares with column equilibration; returns (beta, residual rms, cond)."""
    if ridge < 0:
        raise ConfigurationError("ridge must be >= 0")
    n_rows, n_cols = A.shape
    if n_rows < n_cols and ridge == 0:
        raise IllConditionedError(
            f"{n_rows} equations for {n_cols} unknowns; supply more data or a ridge > 0"
        )
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    As = A / scale
    sv = np.linalg.svd(As, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if ridge == 0 and cond > MAX_CONDITION:
        raise IllConditionedError(
            f"design matrix is ill-conditioned (condition number {cond:.3g}); "
            "the data does not determine every coefficient; add attitude excitation or use a ridge > 0"
        )
    if ridge > 0:
        As = np.vstack([As, math.sqrt(ridge) * np.diag(1.0 / scale)])
        y_aug = np.concatenate([y, np.zeros(n_cols)])
    else:
        y_aug = y
    gamma = np.linalg.lstsq(As, y_aug, rcond=None)[0]
    beta = gamma / scale
    resid = y - A @ beta
    return beta, float(np.sqrt(np.mean(resid ** 2))), cond


def calibrate_map_based(samples, B_e_known, ridge: float = 0.0) -> CalibrationResult:
    """Solve ``Bt - Be = A beta`` with the external field known per sample."""
    m_vec, m_scalar, m_dot = _stack(samples)
    B_e = np.asarray(B_e_known, dtype=float).reshape(-1)
    if B_e.size != m_scalar.size:
        raise ConfigurationError("need one external-field value per sample")
    A = build_a_matrix(m_vec, m_scalar, m_dot)
    beta, rms, cond = _solve(A, m_scalar - B_e, ridge)
    return CalibrationResult(TLCoefficients(beta), rms, cond, "map", ridge)


def bandpass_sos(passband, sample_rate: float, order: int = 4) -> np.ndarray:
    lo, hi = (float(v) for v in passband)
    nyq = sample_rate / 2.0
    if not (0 < lo < hi < nyq):
        raise ConfigurationError(
            f"passband {passband} must satisfy 0 < low < high < Nyquist ({nyq} Hz)"
        )
    return signal.butter(order, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")


def bandpass(x, passband, sample_rate: float, order: int = 4) -> np.ndarray:
    """Zero-phase (forward-backward) Butterworth band-pass along axis 0."""
    sos = bandpass_sos(passband, sample_rate, order)
    return signal.sosfiltfilt(sos, np.asarray(x, dtype=float), axis=0)


def calibrate_bandpass(samples, passband=(0.002, 1.0), sample_rate: float | None = None,
                       ridge: float = 0.0, order: int = 4, trim: int = 0) -> CalibrationResult:
    """Map-less calibration: the same band-pass applied to ``Bt`` and every A column.

    ``trim`` drops that many filtered samples at each end before solving.
    """
    samples = list(samples)
    m_vec, m_scalar, m_dot = _stack(samples)
    if sample_rate is None:
        sample_rate = 1.0 / samples[0].dt
    A = build_a_matrix(m_vec, m_scalar, m_dot)
    Af = bandpass(A, passband, sample_rate, order)
    yf = bandpass(m_scalar, passband, sample_rate, order)
    if trim:
        if 2 * trim >= len(yf):
            raise ConfigurationError("trim removes every sample")
        Af, yf = Af[trim:-trim], yf[trim:-trim]
    beta, rms, cond = _solve(Af, yf, ridge)
    return CalibrationResult(TLCoefficients(beta), rms, cond, "bandpass", ridge)


def vector_design(B_e_vec, B_e_dot) -> np.ndarray:
    """Rows of the 3N-equation system; unknowns ``[a (3), M row-major (9), C row-major (9)]``."""
    B = np.asarray(B_e_vec, dtype=float).reshape(-1, 3)
    D = np.asarray(B_e_dot, dtype=float).reshape(-1, 3)
    n = B.shape[0]
    X = np.zeros((3 * n, 21))
    for i in range(3):
        rows = slice(i, 3 * n, 3)
        X[rows, i] = 1.0
        X[rows, 3 + 3 * i:6 + 3 * i] = B
        X[rows, 12 + 3 * i:15 + 3 * i] = D
    return X


def symmetrized_induced(M) -> np.ndarray:
    """Six-term induced form ``b`` from a full 3x3 induced matrix."""
    M = np.asarray(M, dtype=float).reshape(3, 3)
    return np.array([M[0, 0], M[0, 1] + M[1, 0], M[0, 2] + M[2, 0],
                     M[1, 1], M[1, 2] + M[2, 1], M[2, 2]])


def calibrate_vector(m_vec_series, B_e_vec_series, dt: float, ridge: float = 0.0) -> CalibrationResult:
    """Accurate-vector calibration from body-frame series of the measured and external field.

    Solves ``m = Be + a + M Be + C dBe`` for the full ``M`` and ``C``; the
    first epoch only seeds the rate. The reported ``c`` is ``C`` in column-major
    order so that its projection matches the scalar A-row eddy ordering.
    """
    m = np.asarray(m_vec_series, dtype=float).reshape(-1, 3)
    Be = np.asarray(B_e_vec_series, dtype=float).reshape(-1, 3)
    if m.shape != Be.shape:
        raise ConfigurationError("measured and external vector series differ in length")
    if m.shape[0] < 8:
        raise ConfigurationError("need at least 8 epochs (7 after forming rates) for 21 unknowns")
    dBe = np.diff(Be, axis=0) / dt
    X = vector_design(Be[1:], dBe)
    y = (m[1:] - Be[1:]).reshape(-1)
    theta, rms, cond = _solve(X, y, ridge)
    a, M, C = theta[:3], theta[3:12].reshape(3, 3), theta[12:21].reshape(3, 3)
    coeffs = TLCoefficients.from_parts(a, symmetrized_induced(M), C.ravel(order="F"))
    return CalibrationResult(coeffs, rms, cond, "vector", ridge,
                             tuple(M.ravel()), tuple(C.ravel()))


def vector_platform_field(B_e_vec, B_e_dot, a, M, C) -> np.ndarray:
    """Platform field vectors ``a + M Be + C dBe`` for arrays of epochs."""
    B = np.asarray(B_e_vec, dtype=float).reshape(-1, 3)
    D = np.asarray(B_e_dot, dtype=float).reshape(-1, 3)
    return (np.asarray(a, dtype=float) + B @ np.asarray(M, dtype=float).reshape(3, 3).T
            + D @ np.asarray(C, dtype=float).reshape(3, 3).T)


# --- file formats -------------------------------------------------------------------

def save_coefficients(path, coeffs: TLCoefficients) -> None:
    with open(Path(path), "w") as fh:
        for label, v in zip(LABELS, coeffs.beta):
            fh.write(f"{label} {v!r}\n")


def load_coefficients(path) -> TLCoefficients:
    values = {}
    with open(Path(path)) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace("=", " ").replace(",", " ").split()
            if len(parts) != 2 or parts[0] not in LABELS:
                raise ConfigurationError(f"{path}:{n}: expected '<label> <value>' with label in a1..c9")
            try:
                values[parts[0]] = float(parts[1])
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{n}: {exc}") from exc
    missing = [lab for lab in LABELS if lab not in values]
    if missing:
        raise ConfigurationError(f"{path}: missing coefficients {', '.join(missing)}")
    return TLCoefficients(tuple(values[lab] for lab in LABELS))


CSV_COLUMNS = ("t", "mx", "my", "mz", "m_scalar")


@dataclass(frozen=True)
class CalibrationData:
    t: np.ndarray
    m_vec: np.ndarray
    m_scalar: np.ndarray
    B_e: np.ndarray | None = None       # scalar external field, optional
    B_e_vec: np.ndarray | None = None   # body-frame external vector, optional


def load_calibration_csv(path) -> CalibrationData:
    """Read columns ``t, mx, my, mz, m_scalar`` plus optional ``Be`` and ``Bex, Bey, Bez``."""
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigurationError(f"{path}: empty file")
        header = [h.strip() for h in reader.fieldnames]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise ConfigurationError(f"{path}: missing columns {', '.join(missing)}")
        reader.fieldnames = header
        cols = {h: [] for h in header}
        for n, row in enumerate(reader, 2):
            for h in header:
                try:
                    cols[h].append(float(row[h]))
                except (TypeError, ValueError) as exc:
                    raise ConfigurationError(f"{path}:{n}: bad value in column {h!r}") from exc
    if not cols["t"]:
        raise ConfigurationError(f"{path}: no data rows")
    arr = {h: np.array(v) for h, v in cols.items()}
    B_e_vec = None
    if all(c in arr for c in ("Bex", "Bey", "Bez")):
        B_e_vec = np.column_stack([arr["Bex"], arr["Bey"], arr["Bez"]])
    return CalibrationData(arr["t"], np.column_stack([arr["mx"], arr["my"], arr["mz"]]),
                           arr["m_scalar"], arr.get("Be"), B_e_vec)


def save_calibration_csv(path, data: CalibrationData) -> None:
    header = list(CSV_COLUMNS)
    cols = [data.t, data.m_vec[:, 0], data.m_vec[:, 1], data.m_vec[:, 2], data.m_scalar]
    if data.B_e is not None:
        header.append("Be")
        cols.append(data.B_e)
    if data.B_e_vec is not None:
        header += ["Bex", "Bey", "Bez"]
        cols += [data.B_e_vec[:, 0], data.B_e_vec[:, 1], data.B_e_vec[:, 2]]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


# --- synthetic calibration flight -----------------------------------------------------

def attitude_matrices(t, amplitudes=(0.35, 0.25, 0.6), periods=(23.0, 37.0, 61.0)) -> np.ndarray:
    """Body-from-navigation rotations for a roll/pitch/yaw sinusoid schedule (rad, s)."""
    t = np.asarray(t, dtype=float)
    angles = np.column_stack([a * np.sin(2 * np.pi * t / p + k)
                              for k, (a, p) in enumerate(zip(amplitudes, periods))])
    # scipy returns navigation-from-body for intrinsic roll/pitch/yaw; transpose for body frame
    return np.transpose(Rotation.from_euler("xyz", angles).as_matrix(), (0, 2, 1))


def synthetic_flight(coeffs: TLCoefficients, duration: float = 600.0, rate: float = 10.0,
                     B_nav=(20000.0, 2000.0, 45000.0), B_e_drift: float = 0.0,
                     amplitudes=(0.35, 0.25, 0.6), periods=(23.0, 37.0, 61.0)) -> CalibrationData:
    """Noiseless scalar-model flight: ``Bt = Be + A beta`` along a scripted attitude schedule.

    The vector reading is the external field rotated into the body frame, and
    ``B_e_drift`` (nT/s) adds a linear trend to the scalar external field.
    """
    n = int(round(duration * rate)) + 1
    t = np.arange(n) / rate
    R = attitude_matrices(t, amplitudes, periods)
    B_body = R @ np.asarray(B_nav, dtype=float)
    B_e = np.full(n, float(np.linalg.norm(B_nav))) + B_e_drift * t
    m_dot = np.vstack([np.zeros(3), np.diff(B_body, axis=0) * rate])
    # the scalar reading enters the A-row, so solve Bt = Be + A(Bt) beta by fixed point
    Bt = B_e.copy()
    for _ in range(100):
        A = build_a_matrix(B_body, Bt, m_dot)
        Bt_new = B_e + A @ coeffs.vector
        if np.max(np.abs(Bt_new - Bt)) <= 1e-15 * np.max(np.abs(Bt)):
            Bt = Bt_new
            break
        Bt = Bt_new
    return CalibrationData(t, B_body, Bt, B_e, None)


def synthetic_vector_flight(a, M, C, duration: float = 120.0, rate: float = 10.0,
                            B_nav=(20000.0, 2000.0, 45000.0),
                            amplitudes=(0.35, 0.25, 0.6), periods=(23.0, 37.0, 61.0)) -> CalibrationData:
    """Noiseless vector-model flight ``m = Be + a + M Be + C dBe`` in the body frame.

    Rates are backward differences, so epoch 0 has no eddy term.
    """
    n = int(round(duration * rate)) + 1
    t = np.arange(n) / rate
    B_body = attitude_matrices(t, amplitudes, periods) @ np.asarray(B_nav, dtype=float)
    dB = np.vstack([np.zeros(3), np.diff(B_body, axis=0) * rate])
    m = B_body + vector_platform_field(B_body, dB, a, M, C)
    return CalibrationData(t, m, np.linalg.norm(m, axis=1), np.linalg.norm(B_body, axis=1), B_body)
