"""Command-line entry point: ``loadreconf <command> ...``.

Exit codes: 0 success, 1 input error, 2 solver non-convergence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .admm import ADMMSettings, solve_opf
from .bfm import OPFProblem, check_limits, objective_loss, to_kw
from .forecast import (
    ForecastResult,
    SeriesError,
    WindowSpec,
    assert_no_leakage,
    build_windows,
    chronological_split,
    error_distribution,
    evaluate,
    read_load_csv,
    sliding_forecast,
)
from .hyperopt import GridSpec, ParamRange, PSOSettings, optimize_hyperparams
from .netmodel import (
    NetworkError,
    SwitchConfiguration,
    configuration_by_opened,
    enumerate_radial_configurations,
    is_radial,
    load_network,
)
from .parallel import WORKERS_ENV
from .reconfig import BaselineNotSolvedError, ReconfigurationError, reconfigure
from .svr import EpsilonSVR, SVRConvergenceError

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2

MODEL_FORMAT = "loadreconf-svr/1"


class InputError(Exception):
    pass


class SolverError(Exception):
    pass


# ---------------------------------------------------------------- run config

@dataclass
class RunConfig:
    workers: int = 1
    seed: int = 0
    out: Path = Path("out")
    admm: ADMMSettings = field(default_factory=ADMMSettings)
    grid: GridSpec = field(default_factory=GridSpec)
    pso: PSOSettings = field(default_factory=PSOSettings)
    regions: int = 2
    lead: str = "1h"
    lags: int = 12
    downsample: int = 1


def _read_ini(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is None:
        return cp
    if not Path(path).is_file():
        raise InputError(f"config file not found: {path}")
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from exc
    return cp


def _grid_range(text: str, default: ParamRange) -> ParamRange:
    # "lower, upper, steps[, log|linear]"
    parts = [p.strip() for p in text.split(",")]
    if len(parts) not in (3, 4):
        raise InputError(f"grid range must be 'lower, upper, steps[, scale]', got {text!r}")
    scale = parts[3] if len(parts) == 4 else default.scale
    return ParamRange(float(parts[0]), float(parts[1]), int(parts[2]), scale)


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Command-line flags win over the config file; the worker variable fills in last."""
    cp = _read_ini(args.config)
    try:
        run = cp["run"] if cp.has_section("run") else {}
        admm = cp["admm"] if cp.has_section("admm") else {}
        grid = cp["grid"] if cp.has_section("grid") else {}
        pso = cp["pso"] if cp.has_section("pso") else {}
        fc = cp["forecast"] if cp.has_section("forecast") else {}

        workers = args.workers
        if workers is None and "workers" in run:
            workers = int(run["workers"])
        if workers is None:
            workers = int(os.environ.get(WORKERS_ENV, "1"))
        if workers < 1:
            raise InputError("worker count must be >= 1")
        seed = args.seed if args.seed is not None else int(run.get("seed", 0))
        out = Path(args.out or run.get("out", "out"))

        tol = args.tolerance if args.tolerance is not None else admm.get("tolerance")
        admm_kw = {}
        if tol is not None:
            admm_kw["eps_abs"] = admm_kw["eps_rel"] = float(tol)
        max_iter = args.max_iter if args.max_iter is not None else admm.get("max_iter")
        if max_iter is not None:
            admm_kw["max_iter"] = int(max_iter)
        rho = args.rho if args.rho is not None else admm.get("rho")
        if rho is not None:
            admm_kw["rho"] = float(rho)
        if "over_relaxation" in admm:
            admm_kw["over_relaxation"] = float(admm["over_relaxation"])
        if "adaptive_rho" in admm:
            admm_kw["adaptive_rho"] = cp.getboolean("admm", "adaptive_rho")

        default_grid = GridSpec()
        grid_spec = GridSpec(*(
            _grid_range(grid[name], rng) if name in grid else rng
            for name, rng in zip(("gamma", "c", "epsilon"), default_grid.ranges)
        ))
        pso_settings = PSOSettings(
            n_particles=int(pso.get("particles", 10)),
            phi1=float(pso.get("phi1", 2.0)),
            phi2=float(pso.get("phi2", 2.0)),
            max_iter=int(pso.get("iterations", 15)),
            velocity_fraction=float(pso.get("velocity_fraction", 0.2)),
            seed=seed,
        )
        return RunConfig(
            workers=workers,
            seed=seed,
            out=out,
            admm=ADMMSettings(**admm_kw),
            grid=grid_spec,
            pso=pso_settings,
            regions=int(pso.get("regions", 2)),
            lead=fc.get("lead", "1h"),
            lags=int(fc.get("lags", 12)),
            downsample=int(fc.get("downsample", 1)),
        )
    except ValueError as exc:
        raise InputError(f"bad configuration: {exc}") from exc


# ---------------------------------------------------------------- helpers

def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def read_loads_json(path) -> dict[int, tuple[float, float]]:
    """``{"loads": {"<bus>": {"p": .., "q": ..}}}`` in per-unit."""
    data = _read_json(path)
    try:
        return {int(k): (float(v["p"]), float(v["q"])) for k, v in data["loads"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: expected {{'loads': {{bus: {{'p', 'q'}}}}}}: {exc}") from exc


def loads_from_forecast(pred_csv, mapping_path) -> dict[int, tuple[float, float]]:
    """Turn one forecast row into per-bus per-unit loads through a mapping file.

    The mapping holds ``{"timestamp": optional, "buses": {"<bus>": {"p_per_kw": ..,
    "q_per_kw": ..}}}``; the last forecast row is used when no timestamp is given.
    """
    mapping = _read_json(mapping_path)
    path = Path(pred_csv)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    frame = pd.read_csv(path)
    if not {"timestamp", "predicted_kw"} <= set(frame.columns):
        raise InputError(f"{path}: forecast CSV needs timestamp and predicted_kw columns")
    if frame.empty:
        raise InputError(f"{path}: forecast is empty")
    stamp = mapping.get("timestamp")
    if stamp is None:
        kw = float(frame["predicted_kw"].iloc[-1])
    else:
        hit = frame.loc[frame["timestamp"] == stamp, "predicted_kw"]
        if hit.empty:
            raise InputError(f"{path}: no forecast for timestamp {stamp}")
        kw = float(hit.iloc[0])
    try:
        return {int(b): (kw * float(m["p_per_kw"]), kw * float(m.get("q_per_kw", 0.0)))
                for b, m in mapping["buses"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{mapping_path}: bad bus mapping: {exc}") from exc


def _loads_arg(args) -> dict[int, tuple[float, float]] | None:
    if args.loads and args.forecast:
        raise InputError("give either --loads or --forecast, not both")
    if args.forecast:
        if not args.mapping:
            raise InputError("--forecast needs --mapping")
        return loads_from_forecast(args.forecast, args.mapping)
    if args.loads:
        return read_loads_json(args.loads)
    return None


def _config_arg(net, args) -> SwitchConfiguration:
    if args.switches is not None and args.open is not None:
        raise InputError("give either --switches or --open, not both")
    if args.switches is not None:
        cfg = SwitchConfiguration.from_bits(args.switches)
        if len(cfg) != net.n_switchable:
            raise InputError(f"--switches needs {net.n_switchable} bits, got {len(cfg)}")
        return cfg
    if args.open is not None:
        labels = [s.strip() for s in args.open.split(",") if s.strip()]
        return configuration_by_opened(net, labels)
    return net.baseline_configuration()


def _read_series(path, downsample: int):
    if not Path(path).is_file():
        raise InputError(f"file not found: {path}")
    series = read_load_csv(path)
    return series.downsample(downsample) if downsample > 1 else series


# ---------------------------------------------------------------- commands

def cmd_validate(args, rc: RunConfig) -> int:
    net = load_network(args.network)
    base = net.baseline_configuration()
    radial = is_radial(net, base)
    print(f"buses: {net.n_buses}")
    print(f"branches: {len(net.branches)}")
    print(f"switchables: {net.n_switchable}")
    print(f"baseline open: {', '.join(net.opened_switches(base)) or 'none'}")
    print(f"baseline radial: {'yes' if radial else 'no'}")
    n_radial = len(enumerate_radial_configurations(net, n_jobs=rc.workers))
    print(f"radial configurations: {n_radial} of {2 ** net.n_switchable}")
    if not radial:
        print("warning: baseline configuration is not radial", file=sys.stderr)
    return EXIT_OK


def cmd_tune(args, rc: RunConfig) -> int:
    series = _read_series(args.loads, rc.downsample)
    spec = WindowSpec.for_lead_time(series, rc.lead, lag_count=rc.lags)
    ds = build_windows(series, spec)
    assert_no_leakage(ds)
    train, test = chronological_split(ds)
    report = optimize_hyperparams(train.X, train.y, grid=rc.grid, pso=rc.pso, k=rc.regions,
                                  n_jobs=rc.workers)
    try:
        model = EpsilonSVR(**report.best.as_params()).fit(train.X, train.y)
    except SVRConvergenceError as exc:
        raise SolverError(f"final training at {report.best}: {exc}") from exc
    metrics = evaluate(test.y, model.predict(test.X))
    rc.out.mkdir(parents=True, exist_ok=True)
    _write_json(rc.out / "model.json", {
        "format": MODEL_FORMAT,
        "window": {"lag_count": spec.lag_count, "horizon": spec.horizon, "stride": spec.stride,
                   "resolution_seconds": int(series.resolution / np.timedelta64(1, "s"))},
        "svr": model.to_dict(),
    })
    out = report.to_dict()
    out["seed"] = rc.seed
    out["samples"] = {"train": len(train), "test": len(test)}
    out["test_metrics"] = {"mape": metrics.mape, "nrmse": metrics.nrmse}
    _write_json(rc.out / "tuning_report.json", out)
    print(f"grid evaluations: {report.n_grid_evaluations}")
    print(f"best: gamma={report.best.gamma:.6g} C={report.best.c:.6g} "
          f"epsilon={report.best.epsilon:.6g} (validation MAPE {report.best_score:.4f}%)")
    print(f"test MAPE {metrics.mape:.4f}%  NRMSE {metrics.nrmse:.4f}%")
    return EXIT_OK


def _load_model(path):
    data = _read_json(path)
    if data.get("format") != MODEL_FORMAT:
        raise InputError(f"{path}: not a {MODEL_FORMAT} model file")
    return EpsilonSVR.from_dict(data["svr"]), data["window"]


def cmd_forecast(args, rc: RunConfig) -> int:
    model, window = _load_model(args.model)
    series = _read_series(args.loads, rc.downsample)
    res_s = int(series.resolution / np.timedelta64(1, "s"))
    if res_s != window["resolution_seconds"]:
        raise InputError(
            f"series resolution {res_s}s differs from the model's {window['resolution_seconds']}s")
    lags = args.lags if args.lags is not None else window["lag_count"]
    spec = WindowSpec(lag_count=lags, horizon=window["horizon"], stride=window["stride"])
    if args.test_only:
        _, ds = chronological_split(build_windows(series, spec))
        assert_no_leakage(ds)
        if model.n_features_in_ != spec.lag_count:
            raise InputError(f"model expects {model.n_features_in_} lags, got {spec.lag_count}")
        result = ForecastResult(ds.y, model.predict(ds.X), ds.target_times)
    else:
        try:
            result = sliding_forecast(series, model, spec)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
    metrics = evaluate(result.actual, result.predicted)
    rc.out.mkdir(parents=True, exist_ok=True)
    result.to_csv(rc.out / "predictions.csv")
    error_distribution(result.actual, result.predicted).to_csv(rc.out / "error_histogram.csv")
    (rc.out / "metrics.json").write_text(metrics.to_json() + "\n")
    print(f"samples: {metrics.n_samples}")
    print(f"MAPE {metrics.mape:.4f}%  NRMSE {metrics.nrmse:.4f}%  "
          f"within ±{metrics.band}%: {100 * metrics.coverage_band:.1f}%")
    return EXIT_OK


def cmd_reconfigure(args, rc: RunConfig) -> int:
    net = load_network(args.network)
    loads = _loads_arg(args)
    baseline = _config_arg(net, args)
    try:
        result = reconfigure(net, loads, baseline, rc.admm, n_jobs=rc.workers)
    except BaselineNotSolvedError as exc:
        raise SolverError(str(exc)) from exc
    except ReconfigurationError as exc:
        raise InputError(str(exc)) from exc
    _write_json(rc.out / "reconfiguration.json", result.to_dict())
    print(result.table(args.scenario or Path(args.network).stem))
    return EXIT_OK


def cmd_solve_opf(args, rc: RunConfig) -> int:
    net = load_network(args.network)
    loads = _loads_arg(args)
    cfg = _config_arg(net, args)
    try:
        prob = OPFProblem(net, cfg, loads)
    except NetworkError as exc:
        raise InputError(str(exc)) from exc
    settings = rc.admm
    if args.residual_log:
        settings = ADMMSettings(**{**vars(settings), "record_history": True})
    sol = solve_opf(prob, settings)
    if args.residual_log:
        path = Path(args.residual_log)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "primal_residual", "dual_residual", "objective"])
            for k, pr, du, obj in sol.history:
                w.writerow([k, f"{pr:.10e}", f"{du:.10e}", f"{obj:.10e}"])
    out = {
        "config": cfg.as_bits(),
        "opened": net.opened_switches(cfg),
        "loss_kw": to_kw(prob, objective_loss(prob, sol.state)),
        "solution": sol.summary(),
        "violations": [str(v) for v in check_limits(prob, sol.state)],
        "state": sol.state.to_dict(),
    }
    _write_json(rc.out / "opf.json", out)
    print(f"status: {sol.status.value} after {sol.iterations} iterations")
    print(f"loss: {out['loss_kw']:.6f} kW  max SOC gap: {sol.max_socp_gap:.3e}")
    return EXIT_OK if sol.converged else EXIT_SOLVER


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    common.add_argument("--seed", type=int, help="random seed for the particle swarm")
    common.add_argument("--config", help="INI file with [run], [admm], [grid], [pso], [forecast]")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("--tolerance", type=float, help="ADMM absolute and relative tolerance")
    common.add_argument("--max-iter", type=int, help="ADMM iteration cap")
    common.add_argument("--rho", type=float, help="initial ADMM penalty")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="loadreconf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a network file")
    p.add_argument("network")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("tune", parents=[common], help="tune and train the load forecaster")
    p.add_argument("loads", help="timestamp,kw CSV")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("forecast", parents=[common], help="sliding-window forecast with a model")
    p.add_argument("model")
    p.add_argument("loads", help="timestamp,kw CSV")
    p.add_argument("--lags", type=int, help="override the model's lag count")
    p.add_argument("--test-only", action="store_true",
                   help="only forecast the held-out chronological test block")
    p.set_defaults(func=cmd_forecast)

    for name, func, help_ in (
        ("reconfigure", cmd_reconfigure, "find the minimum-loss radial configuration"),
        ("solve-opf", cmd_solve_opf, "solve the OPF for one configuration"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("network")
        p.add_argument("--loads", help='JSON {"loads": {bus: {"p", "q"}}} in per-unit')
        p.add_argument("--forecast", help="predictions CSV from the forecast command")
        p.add_argument("--mapping", help="JSON mapping forecast kW to per-bus per-unit loads")
        p.add_argument("--switches", help="switch states as bits, 1 = closed")
        p.add_argument("--open", help="comma-separated labels of open switches")
        if name == "reconfigure":
            p.add_argument("--scenario", help="row label for the summary table")
        else:
            p.add_argument("--residual-log", help="write per-iteration residuals to this CSV")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = build_run_config(args)
        return args.func(args, rc)
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InputError, NetworkError, SeriesError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
