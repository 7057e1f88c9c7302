"""Monte-Carlo harness over a grid of filter configurations.

Trial ``t`` of configuration ``i`` draws all of its randomness from
``SeedSequence([base_seed, i, t])``, so results do not depend on how trials
are scheduled across worker processes.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigurationError
from .simulation import FeatureSet, Scenario, SimConfig, run_filter


@dataclass(frozen=True)
class TrialRow:
    config_index: int
    trial: int
    mean_position_error: float
    final_odometry_drift: float
    model_rmse: float
    interference_std: float
    drms: float
    diverged: bool
    wall_time: float


@dataclass(frozen=True)
class McSummary:
    config_index: int
    label: str
    n_trials: int
    mean_position_error: float
    std_position_error: float
    median_position_error: float
    iqr_position_error: float
    mean_model_rmse: float
    std_model_rmse: float
    mean_final_drift: float
    mean_interference_std: float
    n_diverged: int
    mean_runtime: float

    @property
    def error_to_drift(self) -> float:
        return self.mean_position_error / self.mean_final_drift

    @property
    def rmse_to_std(self) -> float:
        return self.mean_model_rmse / self.mean_interference_std

    @property
    def diverged_fraction(self) -> float:
        return self.n_diverged / self.n_trials


def trial_seed(base_seed: int, config_index: int, trial: int) -> tuple[int, int, int]:
    """Entropy for one trial; fed to ``numpy.random.SeedSequence``."""
    return (int(base_seed), int(config_index), int(trial))


def config_label(config: SimConfig) -> str:
    if config.scenario is Scenario.KNOWN_STRUCTURE:
        return "known_structure"
    return f"nn_Nh{config.n_hidden}_{config.feature_set.value}"


def expand_grid(base: SimConfig, n_hidden=None, feature_sets=None) -> list[SimConfig]:
    """Cartesian product over hidden sizes and feature sets (neural scenario only)."""
    if base.scenario is Scenario.KNOWN_STRUCTURE:
        return [base]
    hs = list(n_hidden) if n_hidden else [base.n_hidden]
    fs = [FeatureSet(f) for f in feature_sets] if feature_sets else [base.feature_set]
    return [replace(base, n_hidden=int(h), feature_set=f) for h, f in itertools.product(hs, fs)]


def _run_trial(args) -> TrialRow:
    idx, t, config, traj, amap, truth, base_seed = args
    res = run_filter(config, traj, amap, truth, seed=trial_seed(base_seed, idx, t))
    return TrialRow(idx, t, res.mean_position_error, res.final_odometry_drift, res.model_rmse,
                    float(np.std(res.g_true)), res.drms, bool(res.diverged), res.wall_time)


def summarize(config_index: int, label: str, rows) -> McSummary:
    rows = list(rows)
    if not rows:
        raise ConfigurationError("cannot summarize zero trials")
    err = np.array([r.mean_position_error for r in rows])
    rmse = np.array([r.model_rmse for r in rows])
    ddof = 1 if len(rows) > 1 else 0
    q1, q3 = np.percentile(err, [25, 75])
    return McSummary(
        config_index=config_index,
        label=label,
        n_trials=len(rows),
        mean_position_error=float(err.mean()),
        std_position_error=float(err.std(ddof=ddof)),
        median_position_error=float(np.median(err)),
        iqr_position_error=float(q3 - q1),
        mean_model_rmse=float(rmse.mean()),
        std_model_rmse=float(rmse.std(ddof=ddof)),
        mean_final_drift=float(np.mean([r.final_odometry_drift for r in rows])),
        mean_interference_std=float(np.mean([r.interference_std for r in rows])),
        n_diverged=int(sum(r.diverged for r in rows)),
        mean_runtime=float(np.mean([r.wall_time for r in rows])),
    )


def monte_carlo(configs, n_trials: int, base_seed: int, traj, amap, truth, jobs: int = 1):
    """Run ``n_trials`` per configuration; returns ``(summaries, trial_rows)``.

    Trials are distributed over ``jobs`` worker processes. Row order is always
    (configuration, trial) regardless of ``jobs``.
    """
    configs = list(configs)
    if n_trials < 1:
        raise ConfigurationError("n_trials must be >= 1")
    if jobs < 1:
        raise ConfigurationError("jobs must be >= 1")
    tasks = [(i, t, c, traj, amap, truth, base_seed)
             for i, c in enumerate(configs) for t in range(n_trials)]
    if jobs == 1 or len(tasks) == 1:
        rows = [_run_trial(a) for a in tasks]
    else:
        chunk = max(1, len(tasks) // (4 * jobs))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_trial, tasks, chunksize=chunk))
    summaries = [summarize(i, config_label(c), rows[i * n_trials:(i + 1) * n_trials])
                 for i, c in enumerate(configs)]
    return summaries, rows
