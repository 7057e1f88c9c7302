"""Synthetic anomaly maps and the ground-truth platform interference function."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError


class MapKind(enum.Enum):
    GAUSSIAN_SUM = "gaussian_sum"
    GRID = "grid"


@dataclass(frozen=True)
class GaussianBump:
    center: tuple[float, float]
    amplitude: float
    width: float


@dataclass(frozen=True)
class AnomalyMap2D:
    """Scalar anomaly field over the plane (nT), either analytic or gridded.

    Grid values are stored row-major with shape ``(ny, nx)``; node ``(i, j)``
    sits at ``(origin_x + j*spacing, origin_y + i*spacing)``.
    """

    kind: MapKind
    bumps: tuple[GaussianBump, ...] = ()
    origin: tuple[float, float] = (0.0, 0.0)
    spacing: float = 1.0
    values: np.ndarray | None = None
    gradient_step: float = 1e-3
    bounds: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if not self.gradient_step > 0:
            raise ConfigurationError("gradient_step must be > 0")
        if self.kind is MapKind.GAUSSIAN_SUM:
            if any(b.width <= 0 for b in self.bumps):
                raise ConfigurationError("bump widths must be > 0")
        else:
            if not self.spacing > 0:
                raise ConfigurationError("grid spacing must be > 0")
            vals = np.array(self.values, dtype=float)
            if vals.ndim != 2 or min(vals.shape) < 2:
                raise ConfigurationError("grid values must be a 2-D array with at least 2x2 nodes")
            vals.flags.writeable = False
            object.__setattr__(self, "values", vals)

    @classmethod
    def gaussian_sum(cls, bumps, bounds=None, gradient_step: float = 1e-3) -> "AnomalyMap2D":
        return cls(MapKind.GAUSSIAN_SUM, bumps=tuple(bumps), bounds=bounds, gradient_step=gradient_step)

    @classmethod
    def grid(cls, values, origin, spacing: float, gradient_step: float = 1e-3) -> "AnomalyMap2D":
        return cls(MapKind.GRID, origin=tuple(origin), spacing=spacing, values=values,
                   gradient_step=gradient_step)

    @classmethod
    def random_bumps(cls, n_bumps: int = 12, extent: float = 2000.0, amp_range=(50.0, 300.0),
                     width_range=(80.0, 200.0), seed: int = 0,
                     gradient_step: float = 1e-3) -> "AnomalyMap2D":
        """Seeded sum of Gaussian bumps over ``[0, extent]^2``, amplitudes ``±U[amp_range]``."""
        rng = np.random.default_rng(seed)
        centers = rng.uniform(0.0, extent, size=(n_bumps, 2))
        amps = rng.uniform(*amp_range, size=n_bumps) * rng.choice([-1.0, 1.0], size=n_bumps)
        widths = rng.uniform(*width_range, size=n_bumps)
        bumps = [GaussianBump((float(c[0]), float(c[1])), float(a), float(w))
                 for c, a, w in zip(centers, amps, widths)]
        return cls.gaussian_sum(bumps, bounds=(0.0, extent, 0.0, extent), gradient_step=gradient_step)

    @property
    def domain(self) -> tuple[float, float, float, float]:
        """``(xmin, xmax, ymin, ymax)``; the analytic kind reports its nominal bounds."""
        if self.kind is MapKind.GRID:
            ny, nx = self.values.shape
            x0, y0 = self.origin
            return (x0, x0 + (nx - 1) * self.spacing, y0, y0 + (ny - 1) * self.spacing)
        if self.bounds is None:
            return (-math.inf, math.inf, -math.inf, math.inf)
        return self.bounds

    @property
    def diagonal(self) -> float:
        x0, x1, y0, y1 = self.domain
        return math.hypot(x1 - x0, y1 - y0)

    def contains(self, pos) -> bool:
        x0, x1, y0, y1 = self.domain
        return x0 <= pos[0] <= x1 and y0 <= pos[1] <= y1


def _gauss_value(m: AnomalyMap2D, x: float, y: float) -> float:
    total = 0.0
    for b in m.bumps:
        dx, dy = x - b.center[0], y - b.center[1]
        total += b.amplitude * math.exp(-0.5 * (dx * dx + dy * dy) / (b.width * b.width))
    return total


def gaussian_sum_gradient(m: AnomalyMap2D, pos) -> np.ndarray:
    """Closed-form gradient of the analytic map (nT/m)."""
    g = np.zeros(2)
    for b in m.bumps:
        d = np.asarray(pos, float) - b.center
        w2 = b.width * b.width
        g += -b.amplitude * math.exp(-0.5 * float(d @ d) / w2) * d / w2
    return g


def _lerp(a: float, b: float, t: float) -> float:
    # exact at both nodes and for equal endpoints
    return a + t * (b - a) if t < 0.5 else b - (1.0 - t) * (b - a)


def _grid_value(m: AnomalyMap2D, x: float, y: float) -> float:
    ny, nx = m.values.shape
    fx = (x - m.origin[0]) / m.spacing
    fy = (y - m.origin[1]) / m.spacing
    eps = 1e-9
    if not (-eps <= fx <= nx - 1 + eps and -eps <= fy <= ny - 1 + eps):
        raise DomainError(f"position ({x}, {y}) is outside the grid domain {m.domain}")
    j = min(max(int(math.floor(fx)), 0), nx - 2)
    i = min(max(int(math.floor(fy)), 0), ny - 2)
    tx, ty = fx - j, fy - i
    v = m.values
    lo = _lerp(v[i, j], v[i, j + 1], tx)
    hi = _lerp(v[i + 1, j], v[i + 1, j + 1], tx)
    return float(_lerp(lo, hi, ty))


def map_value(m: AnomalyMap2D, pos) -> float:
    x, y = float(pos[0]), float(pos[1])
    if m.kind is MapKind.GRID:
        return _grid_value(m, x, y)
    return _gauss_value(m, x, y)


def map_gradient(m: AnomalyMap2D, pos) -> np.ndarray:
    """Central finite-difference gradient with the map's ``gradient_step``."""
    x, y = float(pos[0]), float(pos[1])
    h = m.gradient_step
    return np.array([
        (map_value(m, (x + h, y)) - map_value(m, (x - h, y))) / (2 * h),
        (map_value(m, (x, y + h)) - map_value(m, (x, y - h))) / (2 * h),
    ])


def load_grid_csv(path, gradient_step: float = 1e-3) -> AnomalyMap2D:
    """Read a grid map: header line ``nx, ny, origin_x, origin_y, spacing`` then row-major values."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    try:
        header = [float(c) for c in rows[0]]
        nx, ny = int(header[0]), int(header[1])
        ox, oy, spacing = header[2], header[3], header[4]
        flat = [float(c) for r in rows[1:] for c in r if c.strip()]
    except (IndexError, ValueError) as exc:
        raise ConfigurationError(f"malformed grid map file {path}: {exc}") from exc
    if len(flat) != nx * ny:
        raise ConfigurationError(f"grid map {path}: expected {nx * ny} values, got {len(flat)}")
    return AnomalyMap2D.grid(np.array(flat).reshape(ny, nx), (ox, oy), spacing, gradient_step)


def save_grid_csv(m: AnomalyMap2D, path) -> None:
    ny, nx = m.values.shape
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([nx, ny, repr(m.origin[0]), repr(m.origin[1]), repr(m.spacing)])
        for row in m.values:
            w.writerow([repr(float(v)) for v in row])


# --- ground-truth interference ------------------------------------------------

FEATURE_NAMES = ("p_x", "p_y", "m", "psi", "s")


@dataclass(frozen=True)
class InterferenceTruth:
    """``g = b1 sin(b2 px) + b3 cos(b4 py) + b5 (m/c)^2 + b6 cos(psi) + b7 s^2``."""

    beta: tuple[float, ...]
    c: float = 100.0

    def __post_init__(self):
        beta = tuple(float(b) for b in self.beta)
        if len(beta) != 7:
            raise ConfigurationError("interference truth needs exactly 7 coefficients")
        if self.c == 0:
            raise ConfigurationError("normalizer c must be non-zero")
        object.__setattr__(self, "beta", beta)

    def with_beta(self, beta) -> "InterferenceTruth":
        return InterferenceTruth(tuple(beta), self.c)


def interference_value(beta, c: float, features) -> float:
    px, py, m, psi, s = (float(v) for v in features)
    b1, b2, b3, b4, b5, b6, b7 = (float(v) for v in beta)
    return (b1 * math.sin(b2 * px) + b3 * math.cos(b4 * py) + b5 * (m / c) ** 2
            + b6 * math.cos(psi) + b7 * s * s)


def interference_truth(truth: InterferenceTruth, features) -> float:
    features = np.asarray(features, dtype=float)
    if features.shape != (5,):
        raise ConfigurationError("interference features must be [p_x, p_y, m, psi, s]")
    return interference_value(truth.beta, truth.c, features)


def interference_jacobian_beta(truth: InterferenceTruth, features) -> np.ndarray:
    """Partials of the interference function with respect to the 7 coefficients."""
    px, py, m, psi, s = (float(v) for v in features)
    b1, b2, b3, b4, *_ = truth.beta
    return np.array([
        math.sin(b2 * px),
        b1 * px * math.cos(b2 * px),
        math.cos(b4 * py),
        -b3 * py * math.sin(b4 * py),
        (m / truth.c) ** 2,
        math.cos(psi),
        s * s,
    ])
