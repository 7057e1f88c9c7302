"""Planar trajectories for the anomaly-aided odometry experiment.

Every kind is generated the same way: a heading program (a function of arc
length, or a steering law for ``IRREGULAR``) and a smooth speed profile are
sampled at ``dt``; the velocity at step k is ``speed_k * (cos psi_k, sin psi_k)``
and positions are the cumulative sum of ``velocity * dt``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError


class TrajectoryKind(enum.Enum):
    LAWNMOWER = "lawnmower"
    FIGURE_EIGHT = "figure_eight"
    SPIRAL = "spiral"
    IRREGULAR = "irregular"
    STRAIGHT = "straight"


@dataclass(frozen=True)
class TrajectoryPlan:
    kind: TrajectoryKind = TrajectoryKind.LAWNMOWER
    duration: float = 3600.0
    dt: float = 1.0
    nominal_speed: float = 20.0
    speed_jitter: float = 0.1
    start: tuple[float, float] = (200.0, 150.0)
    start_heading: float = 0.0
    # lawnmower
    leg_length: float = 1600.0
    leg_spacing: float = 150.0
    legs_per_pass: int = 12
    # figure eight (two tangent circles)
    radius: float = 400.0
    # spiral
    spiral_r0: float = 100.0
    spiral_spacing: float = 120.0
    spiral_r_max: float = 750.0
    # irregular
    n_waypoints: int = 8
    waypoint_margin: float = 300.0
    min_turn_radius: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", TrajectoryKind(self.kind))
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        if not self.dt > 0:
            raise ConfigurationError("trajectory dt must be > 0")
        if not self.nominal_speed > 0:
            raise ConfigurationError("nominal_speed must be > 0")
        if not self.duration > 0:
            raise ConfigurationError("duration must be > 0")
        if not 0 <= self.speed_jitter < 1:
            raise ConfigurationError("speed_jitter must be in [0, 1)")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray         # (N+1,)
    position: np.ndarray  # (N+1, 2)
    velocity: np.ndarray  # (N+1, 2)
    heading: np.ndarray   # (N+1,)
    speed: np.ndarray     # (N+1,)
    dt: float

    def __len__(self):
        return self.t.size


def speed_profile(plan: TrajectoryPlan, n: int, rng) -> np.ndarray:
    """Nominal speed modulated by three slow sinusoids, bounded by the jitter fraction."""
    if plan.speed_jitter == 0:
        return np.full(n, plan.nominal_speed)
    t = np.arange(n) * plan.dt
    periods = rng.uniform(60.0, 300.0, size=3)
    phases = rng.uniform(0.0, 2 * np.pi, size=3)
    weights = rng.uniform(0.5, 1.0, size=3)
    wave = sum(w * np.sin(2 * np.pi * t / p + ph) for w, p, ph in zip(weights, periods, phases))
    wave = wave / weights.sum()
    return plan.nominal_speed * (1.0 + plan.speed_jitter * wave)


def _lawnmower_heading(plan: TrajectoryPlan):
    """Boustrophedon legs joined by semicircular turns; the stacking direction
    reverses every ``legs_per_pass`` legs so long runs retrace the survey."""
    r = plan.leg_spacing / 2.0
    L = plan.leg_length
    cycle = L + math.pi * r
    psi0 = plan.start_heading
    n_pass = max(int(plan.legs_per_pass), 2)

    def turn_sign(k: int) -> float:
        stack = 1.0 if (k // (n_pass - 1)) % 2 == 0 else -1.0
        return (1.0 if k % 2 == 0 else -1.0) * stack

    cache = [psi0]

    def heading(sigma: float) -> float:
        k, rem = divmod(sigma, cycle)
        k = int(k)
        while len(cache) <= k:
            j = len(cache) - 1
            cache.append(cache[j] + turn_sign(j) * math.pi)
        if rem <= L:
            return cache[k]
        return cache[k] + turn_sign(k) * (rem - L) / r

    return heading


def _figure_eight_heading(plan: TrajectoryPlan):
    R = plan.radius
    circ = 2 * math.pi * R
    psi0 = plan.start_heading

    def heading(sigma: float) -> float:
        rem = sigma % (2 * circ)
        if rem <= circ:
            return psi0 + rem / R
        return psi0 + 2 * math.pi - (rem - circ) / R

    return heading


def _spiral_heading(plan: TrajectoryPlan):
    """Archimedean spiral that winds out to ``spiral_r_max`` and back in, repeatedly.

    Along the spiral ``r^2 = r0^2 + b*sigma/pi`` and the heading advances by
    ``2*pi/b`` per metre of radial progress.
    """
    r0, b, r_max = plan.spiral_r0, plan.spiral_spacing, plan.spiral_r_max
    psi0 = plan.start_heading
    half = math.pi * (r_max * r_max - r0 * r0) / b

    def heading(sigma: float) -> float:
        n, rem = divmod(sigma, half)
        if int(n) % 2 == 0:
            r = math.sqrt(r0 * r0 + b * rem / math.pi)
            radial = n * (r_max - r0) + (r - r0)
        else:
            r = math.sqrt(r_max * r_max - b * rem / math.pi)
            radial = n * (r_max - r0) + (r_max - r)
        return psi0 + 2 * math.pi * radial / b

    return heading


def _wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def generate_trajectory(plan: TrajectoryPlan, seed=None, domain=None) -> Trajectory:
    """Sample a trajectory; raises if ``domain`` is given and the path leaves it."""
    rng = np.random.default_rng(plan.seed if seed is None else seed)
    n = plan.n_steps + 1
    dt = plan.dt
    speed = speed_profile(plan, n, rng)
    heading = np.empty(n)
    pos = np.empty((n, 2))
    pos[0] = plan.start

    if plan.kind is TrajectoryKind.IRREGULAR:
        lo = plan.waypoint_margin
        if domain is not None:
            x0, x1, y0, y1 = domain
        else:
            x0, x1, y0, y1 = 0.0, 2000.0, 0.0, 2000.0
        wps = np.column_stack([
            rng.uniform(x0 + lo, x1 - lo, plan.n_waypoints),
            rng.uniform(y0 + lo, y1 - lo, plan.n_waypoints),
        ])
        target = 0
        psi = plan.start_heading
        for k in range(n):
            heading[k] = psi
            if k + 1 < n:
                pos[k + 1] = pos[k] + speed[k] * dt * np.array([math.cos(psi), math.sin(psi)])
                d = wps[target] - pos[k + 1]
                if math.hypot(*d) < 2 * plan.nominal_speed * dt + 20.0:
                    target = (target + 1) % len(wps)
                    d = wps[target] - pos[k + 1]
                err = float(_wrap(math.atan2(d[1], d[0]) - psi))
                max_turn = speed[k] * dt / plan.min_turn_radius
                psi = psi + max(-max_turn, min(max_turn, err))
    else:
        if plan.kind is TrajectoryKind.LAWNMOWER:
            program = _lawnmower_heading(plan)
        elif plan.kind is TrajectoryKind.FIGURE_EIGHT:
            program = _figure_eight_heading(plan)
        elif plan.kind is TrajectoryKind.SPIRAL:
            program = _spiral_heading(plan)
        else:
            program = lambda sigma: plan.start_heading  # noqa: E731
        sigma = 0.0
        for k in range(n):
            heading[k] = program(sigma)
            sigma += speed[k] * dt
        steps = (speed * dt)[:-1, None] * np.column_stack([np.cos(heading), np.sin(heading)])[:-1]
        pos[1:] = pos[0] + np.cumsum(steps, axis=0)

    velocity = speed[:, None] * np.column_stack([np.cos(heading), np.sin(heading)])
    heading = np.arctan2(velocity[:, 1], velocity[:, 0])
    if domain is not None:
        x0, x1, y0, y1 = domain
        inside = (pos[:, 0] >= x0) & (pos[:, 0] <= x1) & (pos[:, 1] >= y0) & (pos[:, 1] <= y1)
        if not inside.all():
            k = int(np.argmin(inside))
            raise ConfigurationError(
                f"{plan.kind.value} trajectory leaves the map domain at step {k} (position {pos[k]})"
            )
    return Trajectory(np.arange(n) * dt, pos, velocity, heading, speed, dt)


def default_plan(kind, **overrides) -> TrajectoryPlan:
    """Plans that stay inside the default 2 km x 2 km map for 3600 s at 20 m/s."""
    kind = TrajectoryKind(kind)
    base = {
        TrajectoryKind.LAWNMOWER: dict(start=(200.0, 150.0), start_heading=0.0),
        TrajectoryKind.FIGURE_EIGHT: dict(start=(1000.0, 1000.0), start_heading=math.pi / 2),
        TrajectoryKind.SPIRAL: dict(start=(1100.0, 1000.0), start_heading=math.pi / 2),
        TrajectoryKind.IRREGULAR: dict(start=(1000.0, 1000.0), start_heading=0.0),
        TrajectoryKind.STRAIGHT: dict(start=(100.0, 1000.0), start_heading=0.0, duration=80.0),
    }[kind]
    base.update(overrides)
    return TrajectoryPlan(kind=kind, **base)
