"""Structured run configuration: defaults, YAML loading, overrides, validation, builders.

Sections mirror the library modules. Resolution order (later wins): built-in
defaults, config file, ``MAGNAV_*`` environment variables, ``--set`` overrides.
Environment variable names use ``__`` between path components, e.g.
``MAGNAV_TOY_ODOMETRY__NOISE__SIGMA_W=0.4``.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os
from pathlib import Path

import yaml

from . import hybrid as hy
from . import tolles_lawson as tl
from .errors import ConfigurationError
from .field_models import AnomalyMap2D, InterferenceTruth, load_grid_csv
from .toy.simulation import (
    DEFAULT_TRAJECTORY,
    DEFAULT_TRUTH_BETA,
    SCENARIO1_P0_PARAMS,
    SCENARIO1_Q_PARAMS,
    Scenario,
    SimConfig,
    scenario1_config,
    scenario2_config,
)
from .toy.trajectories import TrajectoryPlan, default_plan, generate_trajectory

ENV_PREFIX = "MAGNAV_"

# keys whose value may be either a scalar (applied to every entry) or a list
_SCALAR_OR_LIST = {"P0_params", "q_params"}
# mappings whose keys are validated by the consumer rather than against defaults
_FREE_FORM = {"toy_odometry.trajectory.geometry"}

DEFAULTS = {
    "seed": 0,
    "field_models": {
        "map": {
            "kind": "random_bumps",
            "n_bumps": 12,
            "extent": 2000.0,
            "amp_range": [50.0, 300.0],
            "width_range": [80.0, 200.0],
            "seed": 0,
            "grid_file": None,
            "gradient_step": 1e-3,
        },
        "truth": {"beta": [float(v) for v in DEFAULT_TRUTH_BETA], "c": 100.0},
    },
    "toy_odometry": {
        "scenario": "neural_network",
        "trajectory": {
            "kind": None,
            "duration": 3600.0,
            "dt": 1.0,
            "nominal_speed": 20.0,
            "speed_jitter": 0.1,
            "seed": 0,
            "geometry": {},
        },
        "noise": {"sigma_w": 0.3, "sigma_v": 0.1},
        "gate": {"active": False, "threshold": 6.0, "warmup": 60.0},
        "decoupling": 0,
        "joseph": False,
        "known_structure": {
            "P0_state": 1.0,
            "P0_params": list(SCENARIO1_P0_PARAMS),
            "q_params": list(SCENARIO1_Q_PARAMS),
            "q_state": None,
            "r_filter": None,
            "beta_init": None,
        },
        "neural_network": {
            "feature_set": "M",
            "n_hidden": 8,
            "use_output_bias": True,
            "output_scale": 1.0,
            "glorot_gain": 1.0,
            "P0_state": 1.0,
            "P0_params": 1000.0,
            "q_params": 0.5,
            "q_state": 20.0,
            "r_filter": 0.01,
        },
        "montecarlo": {"n_trials": 100, "n_hidden": [8], "feature_sets": ["M"]},
    },
    "tolles_lawson": {
        "method": "map",
        "passband": [0.002, 1.0],
        "sample_rate": None,
        "ridge": 0.0,
        "order": 4,
        "trim": 0,
    },
    "hybrid": {
        "scenario": {
            "duration": 600.0,
            "rate": 10.0,
            "B_nav": [20000.0, 2000.0, 45000.0],
            "attitude_amplitudes": [0.35, 0.25, 0.6],
            "attitude_periods": [23.0, 37.0, 61.0],
            "tl_truth": [float(v) for v in hy.DEFAULT_TL_TRUTH.vector],
            "residual_amplitude": 40.0,
            "bias_cb": 25.0,
            "noise_std": 1.0,
        },
        "filter": {
            "n_hidden": 5,
            "alpha": 400.0,
            "use_output_bias": False,
            "glorot_gain": 1e-2,
            "P0_tl": 1e5,
            "P0_cb": 1.0,
            "P0_nn": 1.0,
            "q_tl": 1.0,
            "q_cb": 1e-6,
            "q_nn": 1e-20,
            "R": 10.0,
            "gate_active": False,
            "gate_threshold": 6.0,
            "gate_warmup": 600.0,
            "joseph": False,
        },
    },
    "crlb": {"n_position": 2},
}


def defaults() -> dict:
    return copy.deepcopy(DEFAULTS)


def _type_name(v) -> str:
    return type(v).__name__


def _coerce(path: str, default, value):
    """Check ``value`` against the type of ``default``; ints are accepted for floats."""
    if value is None or default is None:
        return value
    key = path.rsplit(".", 1)[-1]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, (int, float)) and not isinstance(default, bool):
        if isinstance(value, list) and key in _SCALAR_OR_LIST:
            return [_coerce(path, 0.0, v) for v in value]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{path}: expected a number, got {value!r}")
        if isinstance(default, int):
            if float(value) != int(value):
                raise ConfigurationError(f"{path}: expected an integer, got {value!r}")
            return int(value)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if isinstance(value, (int, float)) and not isinstance(value, bool) and key in _SCALAR_OR_LIST:
            return float(value)
        if not isinstance(value, list):
            raise ConfigurationError(f"{path}: expected a list, got {value!r}")
        proto = default[0] if default else None
        return [_coerce(f"{path}[{i}]", proto, v) for i, v in enumerate(value)]
    raise ConfigurationError(f"{path}: unsupported default type {_type_name(default)}")


def merge(base: dict, update: dict, path: str = "") -> dict:
    """Deep-merge ``update`` into a copy of ``base``; unknown keys are errors."""
    if not isinstance(update, dict):
        raise ConfigurationError(f"{path or '<root>'}: expected a mapping, got {update!r}")
    out = copy.deepcopy(base)
    for k, v in update.items():
        p = f"{path}.{k}" if path else str(k)
        if k not in base:
            raise ConfigurationError(f"unknown configuration key '{p}'")
        if p in _FREE_FORM:
            if not isinstance(v, dict):
                raise ConfigurationError(f"{p}: expected a mapping")
            out[k] = {**out[k], **v}
        elif isinstance(base[k], dict):
            out[k] = merge(base[k], v if v is not None else {}, p)
        else:
            out[k] = _coerce(p, base[k], v)
    return out


def set_path(cfg: dict, dotted: str, value) -> dict:
    """Apply one ``a.b.c=value`` override (value already parsed)."""
    update = value
    for part in reversed(dotted.split(".")):
        update = {part: update}
    return merge(cfg, update)


def parse_assignment(text: str):
    if "=" not in text:
        raise ConfigurationError(f"override '{text}' must look like key.path=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def env_overrides(environ=None) -> list[tuple[str, object]]:
    environ = os.environ if environ is None else environ
    out = []
    for name in sorted(environ):
        if name.startswith(ENV_PREFIX):
            path = name[len(ENV_PREFIX):].lower().replace("__", ".")
            out.append((path, yaml.safe_load(environ[name])))
    return out


def load(path=None, overrides=(), environ=None) -> dict:
    cfg = defaults()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config file {path} is not valid YAML: {exc}") from exc
        cfg = merge(cfg, data or {})
    for key, value in env_overrides(environ):
        cfg = set_path(cfg, key, value)
    for item in overrides:
        key, value = parse_assignment(item) if isinstance(item, str) else item
        cfg = set_path(cfg, key, value)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    """Cross-field checks; building every object surfaces the remaining errors."""
    build_truth(cfg)
    build_sim_config(cfg)
    build_plan(cfg)
    build_hybrid(cfg)
    if cfg["tolles_lawson"]["method"] not in ("map", "bandpass", "vector"):
        raise ConfigurationError("tolles_lawson.method: expected one of map, bandpass, vector")
    if cfg["toy_odometry"]["montecarlo"]["n_trials"] < 1:
        raise ConfigurationError("toy_odometry.montecarlo.n_trials must be >= 1")


def config_hash(cfg: dict, exclude=("seed",)) -> str:
    """Short digest of the resolved configuration, used in output file names."""
    body = {k: v for k, v in cfg.items() if k not in exclude}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:10]


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False)


# --- builders ----------------------------------------------------------------------

def build_map(cfg: dict) -> AnomalyMap2D:
    m = cfg["field_models"]["map"]
    if m["kind"] == "random_bumps":
        return AnomalyMap2D.random_bumps(
            n_bumps=m["n_bumps"], extent=m["extent"], amp_range=tuple(m["amp_range"]),
            width_range=tuple(m["width_range"]), seed=m["seed"], gradient_step=m["gradient_step"],
        )
    if m["kind"] == "grid":
        if not m["grid_file"]:
            raise ConfigurationError("field_models.map.grid_file is required for kind 'grid'")
        return load_grid_csv(m["grid_file"], m["gradient_step"])
    raise ConfigurationError("field_models.map.kind: expected random_bumps or grid")


def build_truth(cfg: dict) -> InterferenceTruth:
    t = cfg["field_models"]["truth"]
    return InterferenceTruth(tuple(t["beta"]), t["c"])


def scenario_of(cfg: dict) -> Scenario:
    try:
        return Scenario(cfg["toy_odometry"]["scenario"])
    except ValueError:
        raise ConfigurationError("toy_odometry.scenario: expected known_structure or neural_network") from None


def build_sim_config(cfg: dict) -> SimConfig:
    toy = cfg["toy_odometry"]
    scenario = scenario_of(cfg)
    common = dict(
        sigma_w=toy["noise"]["sigma_w"],
        sigma_v=toy["noise"]["sigma_v"],
        gate_active=toy["gate"]["active"],
        gate_threshold=toy["gate"]["threshold"],
        gate_warmup=toy["gate"]["warmup"],
        decoupling=toy["decoupling"],
        joseph=toy["joseph"],
        seed=cfg["seed"],
    )
    try:
        if scenario is Scenario.KNOWN_STRUCTURE:
            ks = {k: (tuple(v) if isinstance(v, list) else v) for k, v in toy["known_structure"].items()}
            if ks["beta_init"] is None:
                ks.pop("beta_init")
            return scenario1_config(truth=build_truth(cfg), **ks, **common)
        nn_cfg = {k: (tuple(v) if isinstance(v, list) else v) for k, v in toy["neural_network"].items()}
        return scenario2_config(**nn_cfg, **common)
    except ValueError as exc:
        raise ConfigurationError(f"toy_odometry: {exc}") from exc


def build_plan(cfg: dict) -> TrajectoryPlan:
    tr = cfg["toy_odometry"]["trajectory"]
    kind = tr["kind"] or DEFAULT_TRAJECTORY[scenario_of(cfg)]
    names = {f.name for f in dataclasses.fields(TrajectoryPlan)}
    for k in tr["geometry"]:
        if k not in names or k in ("kind",):
            raise ConfigurationError(f"unknown configuration key 'toy_odometry.trajectory.geometry.{k}'")
    geometry = {k: (tuple(v) if isinstance(v, list) else v) for k, v in tr["geometry"].items()}
    try:
        return default_plan(kind, duration=tr["duration"], dt=tr["dt"], nominal_speed=tr["nominal_speed"],
                            speed_jitter=tr["speed_jitter"], seed=tr["seed"], **geometry)
    except ValueError as exc:
        raise ConfigurationError(f"toy_odometry.trajectory: {exc}") from exc


def build_experiment(cfg: dict):
    """``(SimConfig, Trajectory, AnomalyMap2D, InterferenceTruth)`` for the toy model."""
    amap = build_map(cfg)
    traj = generate_trajectory(build_plan(cfg), domain=amap.domain)
    return build_sim_config(cfg), traj, amap, build_truth(cfg)


def build_hybrid(cfg: dict):
    h = cfg["hybrid"]
    sc = dict(h["scenario"])
    sc["tl_truth"] = tl.TLCoefficients(tuple(sc["tl_truth"]))
    for k in ("B_nav", "attitude_amplitudes", "attitude_periods"):
        sc[k] = tuple(sc[k])
    try:
        scenario = hy.HybridScenario(**sc, seed=cfg["seed"])
        fcfg = hy.HybridConfig(**h["filter"], seed=cfg["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"hybrid: {exc}") from exc
    return scenario, fcfg
