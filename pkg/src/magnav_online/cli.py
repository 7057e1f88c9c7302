"""Command-line front end.

Subcommands ``simulate``, ``montecarlo``, ``calibrate``, ``hybrid`` and ``crlb``.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Data files are CSV (or the labeled coefficient / calibration-state text
formats); timestamps and runtimes appear only in ``manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import crlb as crlbmod
from . import hybrid as hy
from . import tolles_lawson as tl
from .errors import ConfigurationError, DomainError, NumericalDegeneracyError
from .toy.montecarlo import expand_grid, monte_carlo, trial_seed
from .toy.simulation import filter_covariances, run_filter

ARTIFACT_VERSION = 1
MANIFEST = "manifest.json"
TRIAL_COLUMNS = ("t", "truth_x", "truth_y", "odo_x", "odo_y", "est_x", "est_y", "g_true", "g_model", "nis", "gated")

log = logging.getLogger("magnav_online")


class UsageError(Exception):
    """Bad invocation detected after argument parsing (exit status 2)."""


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: dict, seed, files, started: float, extra=None) -> Path:
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "tool_version": tool_version(),
        "seed": seed,
        "config": cfg,
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "files": {Path(f).name: sha256(f) for f in files},
    }
    if extra:
        manifest.update(extra)
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _resolve(args) -> dict:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(("seed", args.seed))
    return cfgmod.load(args.config, overrides)


def _out_dir(args) -> Path:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- simulate -----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    started = time.time()
    cfg = _resolve(args)
    sim, traj, amap, truth = cfgmod.build_experiment(cfg)
    if args.record_jacobians:
        sim = replace(sim, record_jacobians=True)
    seed = cfg["seed"]
    res = run_filter(sim, traj, amap, truth, seed=trial_seed(seed, 0, 0))
    out = _out_dir(args)
    tag = f"{cfgmod.config_hash(cfg)}_seed{seed}"
    files = []
    trial_path = out / f"trial_{tag}.csv"
    write_csv(trial_path, TRIAL_COLUMNS, zip(
        res.t, res.truth[:, 0], res.truth[:, 1], res.odometry[:, 0], res.odometry[:, 1],
        res.estimate[:, 0], res.estimate[:, 1], res.g_true, res.g_model, res.nis, res.gated))
    files.append(trial_path)
    metrics = res.metrics()
    metrics["interference_std"] = float(np.std(res.g_true))
    metrics_path = out / f"metrics_{tag}.csv"
    keys = ("mean_position_error", "final_odometry_drift", "model_rmse", "interference_std", "drms", "diverged")
    write_csv(metrics_path, keys, [[metrics[k] for k in keys]])
    files.append(metrics_path)
    if res.jacobians is not None:
        n_p = res.jacobians.shape[1] - 2
        jac_path = out / f"jacobians_{tag}.csv"
        header = ["t", "dm_dpx", "dm_dpy"] + [f"dg_dparam_{i}" for i in range(n_p)]
        write_csv(jac_path, header, (np.concatenate([[t], row]) for t, row in zip(res.t, res.jacobians)))
        files.append(jac_path)
    write_manifest(out, cfg, seed, files, started,
                   {"command": "simulate", "tag": tag, "runtime_s": res.wall_time})
    log.info("mean position error %.3f m, final odometry drift %.3f m, model RMSE %.4f nT",
             metrics["mean_position_error"], metrics["final_odometry_drift"], metrics["model_rmse"])
    return 0


# --- montecarlo ---------------------------------------------------------------------

SUMMARY_COLUMNS = ("config_index", "label", "scenario", "feature_set", "n_hidden", "n_trials",
                   "mean_position_error", "std_position_error", "median_position_error",
                   "iqr_position_error", "mean_model_rmse", "std_model_rmse", "mean_final_drift",
                   "mean_interference_std", "n_diverged")
TRIALS_COLUMNS = ("config_index", "trial", "mean_position_error", "final_odometry_drift", "model_rmse",
                  "interference_std", "drms", "diverged")


def cmd_montecarlo(args) -> int:
    started = time.time()
    cfg = _resolve(args)
    if args.trials is not None:
        cfg = cfgmod.set_path(cfg, "toy_odometry.montecarlo.n_trials", args.trials)
    if args.n_hidden:
        cfg = cfgmod.set_path(cfg, "toy_odometry.montecarlo.n_hidden", args.n_hidden)
    if args.feature_sets:
        cfg = cfgmod.set_path(cfg, "toy_odometry.montecarlo.feature_sets", args.feature_sets)
    cfgmod.validate(cfg)
    mc = cfg["toy_odometry"]["montecarlo"]
    sim, traj, amap, truth = cfgmod.build_experiment(cfg)
    try:
        configs = expand_grid(sim, mc["n_hidden"], mc["feature_sets"])
    except ValueError as exc:
        raise ConfigurationError(f"toy_odometry.montecarlo: {exc}") from exc
    seed = cfg["seed"]
    summaries, rows = monte_carlo(configs, mc["n_trials"], seed, traj, amap, truth, jobs=args.jobs)
    out = _out_dir(args)
    tag = f"{cfgmod.config_hash(cfg)}_seed{seed}"
    summary_path = out / f"mc_summary_{tag}.csv"
    write_csv(summary_path, SUMMARY_COLUMNS, (
        [s.config_index, s.label, c.scenario.value, c.feature_set.value, c.n_hidden, s.n_trials,
         s.mean_position_error, s.std_position_error, s.median_position_error, s.iqr_position_error,
         s.mean_model_rmse, s.std_model_rmse, s.mean_final_drift, s.mean_interference_std, s.n_diverged]
        for s, c in zip(summaries, configs)))
    trials_path = out / f"mc_trials_{tag}.csv"
    write_csv(trials_path, TRIALS_COLUMNS, (
        [r.config_index, r.trial, r.mean_position_error, r.final_odometry_drift, r.model_rmse,
         r.interference_std, r.drms, r.diverged] for r in rows))
    runtimes = {s.label: s.mean_runtime for s in summaries}
    write_manifest(out, cfg, seed, [summary_path, trials_path], started,
                   {"command": "montecarlo", "tag": tag, "jobs": args.jobs, "mean_runtime_s": runtimes})
    for s in summaries:
        log.info("%s: position error %.3f +- %.3f m (drift %.2f m), model RMSE %.4f nT, diverged %d/%d",
                 s.label, s.mean_position_error, s.std_position_error, s.mean_final_drift,
                 s.mean_model_rmse, s.n_diverged, s.n_trials)
    return 0


# --- calibrate ----------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    started = time.time()
    cfg = _resolve(args)
    if args.method:
        cfg = cfgmod.set_path(cfg, "tolles_lawson.method", args.method)
    if args.ridge is not None:
        cfg = cfgmod.set_path(cfg, "tolles_lawson.ridge", args.ridge)
    cfgmod.validate(cfg)
    opts = cfg["tolles_lawson"]
    if not Path(args.input).is_file():
        raise UsageError(f"input file {args.input} does not exist")
    data = tl.load_calibration_csv(args.input)
    method, ridge = opts["method"], opts["ridge"]
    if method == "vector":
        if data.B_e_vec is None:
            raise ConfigurationError(f"{args.input}: the vector method needs columns Bex, Bey, Bez")
        dts = np.diff(data.t)
        if dts.size == 0 or not np.allclose(dts, dts[0]):
            raise ConfigurationError(f"{args.input}: the vector method needs uniformly spaced samples")
        result = tl.calibrate_vector(data.m_vec, data.B_e_vec, float(dts[0]), ridge)
    else:
        samples = tl.samples_from_series(data.t, data.m_vec, data.m_scalar)
        if method == "map":
            if data.B_e is None:
                raise ConfigurationError(f"{args.input}: the map method needs a Be column")
            result = tl.calibrate_map_based(samples, data.B_e[1:], ridge)
        else:
            result = tl.calibrate_bandpass(samples, tuple(opts["passband"]), opts["sample_rate"], ridge,
                                           opts["order"], opts["trim"])
    out = _out_dir(args)
    tag = cfgmod.config_hash(cfg)
    beta_path = out / f"beta_{method}_{tag}.txt"
    tl.save_coefficients(beta_path, result.coeffs)
    files = [beta_path]
    extra = {"command": "calibrate", "method": method, "ridge": ridge, "input": str(args.input),
             "input_sha256": sha256(args.input), "residual_rms": result.residual_rms,
             "condition_number": result.condition_number}
    if result.raw_induced is not None:
        extra["raw_induced"] = list(result.raw_induced)
        extra["raw_eddy"] = list(result.raw_eddy)
    write_manifest(out, cfg, cfg["seed"], files, started, extra)
    log.info("%s calibration: residual RMS %.3g nT, condition number %.3g", method,
             result.residual_rms, result.condition_number)
    return 0


# --- hybrid -------------------------------------------------------------------------

HYBRID_COLUMNS = ("t", "platform", "tl", "nn", "bias", "predicted", "nis")


def cmd_hybrid(args) -> int:
    started = time.time()
    cfg = _resolve(args)
    scenario, fcfg = cfgmod.build_hybrid(cfg)
    if args.start == "warm":
        if not args.state_in:
            raise UsageError("--start warm needs --state-in PATH (a calibration state written by a previous run)")
        start = hy.StartMode.warm(hy.load_payload(args.state_in))
    else:
        start = hy.StartMode.cold()
    data = hy.simulate_hybrid(scenario)
    res = hy.run_hybrid_coldstart(data, start, fcfg)
    out = _out_dir(args)
    tag = f"{cfgmod.config_hash(cfg)}_seed{cfg['seed']}_{args.start}"
    series = out / f"hybrid_{tag}.csv"
    write_csv(series, HYBRID_COLUMNS, zip(res.t, res.platform, res.tl_out, res.nn_out, res.bias_out,
                                          res.predicted, res.nis))
    state_path = Path(args.state_out) if args.state_out else out / f"calib_state_{tag}.txt"
    hy.save_payload(state_path, res.payload)
    n = len(res.t)
    extra = {"command": "hybrid", "start": args.start, "runtime_s": res.wall_time,
             "rmse_first_10pct": res.rmse(0, max(n // 10, 1)), "rmse_last_10pct": res.rmse(-max(n // 10, 1)),
             "diverged": res.diverged}
    if args.state_in:
        extra["state_in_sha256"] = sha256(args.state_in)
    write_manifest(out, cfg, cfg["seed"], [series, state_path], started, extra)
    log.info("calibration RMSE first/last 10%%: %.3f / %.3f nT", extra["rmse_first_10pct"], extra["rmse_last_10pct"])
    return 1 if res.diverged else 0


# --- crlb ---------------------------------------------------------------------------

def cmd_crlb(args) -> int:
    started = time.time()
    run_dir = Path(args.run_dir)
    mpath = run_dir / MANIFEST
    if not mpath.exists():
        raise UsageError(f"{run_dir} has no {MANIFEST}; point crlb at a directory written by 'simulate'")
    manifest = json.loads(mpath.read_text())
    if manifest.get("command") != "simulate":
        raise UsageError(f"{run_dir} was not written by 'simulate'")
    tag = manifest["tag"]
    jac_path = run_dir / f"jacobians_{tag}.csv"
    if not jac_path.exists():
        raise UsageError(f"{jac_path.name} not found; rerun 'simulate' with --record-jacobians")
    cfg = cfgmod.merge(cfgmod.defaults(), manifest["config"])
    sim = cfgmod.build_sim_config(cfg)
    data = np.genfromtxt(jac_path, delimiter=",", skip_header=1, ndmin=2)
    t, H = data[:, 0], data[:, 1:]
    if H.shape[1] != sim.n_params + 2:
        raise UsageError(f"{jac_path.name} has {H.shape[1]} Jacobian columns, the configuration implies "
                         f"{sim.n_params + 2}")
    P0, Q, R = filter_covariances(sim, cfg["toy_odometry"]["trajectory"]["dt"])
    J0 = np.linalg.inv(P0)
    trace = crlbmod.crlb_trace(H, np.eye(H.shape[1]), Q, R, J0, cfg["crlb"]["n_position"])
    out = Path(args.out) if args.out else run_dir / "crlb"
    out.mkdir(parents=True, exist_ok=True)
    bound_path = out / f"crlb_{tag}.csv"
    write_csv(bound_path, ("t", "position_bound", "jittered"), zip(t, trace.bound, trace.jittered))
    extra = {"command": "crlb", "run_dir": str(run_dir), "jacobians_sha256": sha256(jac_path),
             "n_jittered": int(trace.jittered.sum())}
    write_manifest(out, cfg, manifest.get("seed"), [bound_path], started, extra)
    log.info("final position bound %.4f m (%d jittered steps)", trace.bound[-1], extra["n_jittered"])
    return 0


# --- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--out", help="output directory (default: ./out; for crlb, RUN_DIR/crlb)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value, e.g. toy_odometry.noise.sigma_w=0.4")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="magnav-online", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="one toy-odometry run")
    s.add_argument("--record-jacobians", action="store_true", help="write the measurement Jacobian side-file")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("montecarlo", parents=[common], help="Monte-Carlo sweep over a configuration grid")
    m.add_argument("--trials", type=int)
    m.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    m.add_argument("--n-hidden", type=int, nargs="+")
    m.add_argument("--feature-sets", nargs="+", choices=["M", "MV", "ALL"])
    m.set_defaults(func=cmd_montecarlo)

    c = sub.add_parser("calibrate", parents=[common], help="offline Tolles-Lawson calibration")
    c.add_argument("--input", required=True, help="CSV with t, mx, my, mz, m_scalar[, Be][, Bex, Bey, Bez]")
    c.add_argument("--method", choices=["map", "bandpass", "vector"])
    c.add_argument("--ridge", type=float)
    c.set_defaults(func=cmd_calibrate)

    h = sub.add_parser("hybrid", parents=[common], help="synthetic TL + network online calibration")
    h.add_argument("--start", choices=["cold", "warm"], default="cold")
    h.add_argument("--state-in", help="calibration state for a warm start")
    h.add_argument("--state-out", help="where to write the final calibration state")
    h.set_defaults(func=cmd_hybrid)

    b = sub.add_parser("crlb", parents=[common], help="Cramer-Rao bound from a recorded simulate run")
    b.add_argument("run_dir")
    b.set_defaults(func=cmd_crlb)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except (ConfigurationError, DomainError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalDegeneracyError, OSError, ArithmeticError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
