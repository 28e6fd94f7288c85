"""Command-line interface: ``freezerid <subcommand> [options]``.

Exit codes: 0 success, 1 internal error, 2 usage error, 3 configuration
error, 4 input/output or data validation error, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, ekf, estimate, io, profile, simulate
from .config import ConfigError, RunConfig, load_config
from .model import ValidationError, hypothetical_evaporator_temperature, sigmoid

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERICAL = 5

NUMERICAL_ERRORS = (
    estimate.EstimationFailedError,
    ekf.NumericalInstabilityError,
    simulate.SimulationUnstableError,
    diagnostics.UndefinedStatisticError,
)

log = logging.getLogger("freezerid")


class UsageError(Exception):
    pass


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_table(path, header, columns):
    rows = ([_fmt(c[k]) for c in columns] for k in range(len(columns[0])))
    io.atomic_write_text(path, io.rows_to_csv(header, rows))


def _write_json(path, obj):
    io.atomic_write_text(path, json.dumps(obj, indent=2, allow_nan=False, default=_json_default) + "\n")


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(type(v).__name__)


def _require(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise UsageError(f"{args.command} requires --{n}")


def _load_params(path):
    """Parameters from either a fit report or a parameter file."""
    obj = io._load(path)
    if isinstance(obj, dict) and obj.get("format") == io.PARAMS_FORMAT:
        return io.read_params(path), None
    report = io.fit_report_from_obj(obj)
    return report.estimates, report


def _train_window(cfg: RunConfig, data):
    stop = cfg.fit.train_stop if cfg.fit.train_stop is not None else len(data)
    start = cfg.fit.train_start
    if not 0 <= start < stop <= len(data):
        raise ConfigError(f"[fit] train_start/train_stop ({start}, {stop}) outside the dataset (length {len(data)})")
    return data.segment(start, stop)


# --- subcommands -------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args, out: Path):
    sim = simulate.simulate_sde(cfg.truth, cfg.sim_config())
    io.write_dataset(sim.dataset, out / "data.csv")
    io.write_params(cfg.truth, out / "truth.json")
    s = sim.true_states
    _write_table(out / "states.csv", ("t_min", "T_c", "T_w", "T_e"), (sim.inputs.t, s[:, 0], s[:, 1], s[:, 2]))
    periods = simulate.duty_cycle_periods(sim.inputs.m)
    print(f"simulated {len(sim.inputs)} samples; mean duty cycle "
          f"{np.mean(periods) if periods.size else float('nan'):.1f} min")


def cmd_fit(cfg: RunConfig, args, out: Path):
    _require(args, "data")
    data = _train_window(cfg, io.ingest(args.data))
    report = estimate.fit(cfg.fit_spec(), data)
    io.write_fit_report(report, out / "fit_report.json")
    print(f"fit: NLL {report.neg_log_lik:.4f}, converged {report.converged}, "
          f"Hessian PD {report.hessian_pd}, {report.n_evals} evaluations")
    for w in report.warnings:
        print(f"warning: {w}")


def cmd_predict(cfg: RunConfig, args, out: Path):
    _require(args, "data", "report")
    data = io.ingest(args.data)
    p, _ = _load_params(args.report)
    start = cfg.predict.warmup
    if not 0 <= start < len(data):
        raise ConfigError(f"[predict] warmup {start} must be in [0, {len(data)})")
    pred = ekf.predict_from(p, data, start)
    u = data.inputs.window(start, len(data))
    y = data.y[start:]
    S = sigmoid(p.alpha, p.beta, u.M_ac)
    hyp = hypothetical_evaporator_temperature(p, u.T_e_out, u.T_e_in)
    _write_table(
        out / "predict.csv",
        ("t_min", "observed", "predicted", "lo95", "hi95", "S", "T_e_hypothetical", "T_e_estimated"),
        (u.t, y, pred.T_c, pred.lo95, pred.hi95, S, hyp, pred.means[:, 2]),
    )
    rmse = diagnostics.rmse(pred.T_c, y)
    _write_json(out / "predict_summary.json", {
        "rmse_observed": rmse, "mean_residual": float(np.mean(y - pred.T_c)),
        "start": start, "n": int(y.size),
    })
    print(f"predict: RMSE {rmse:.4f} degC over {y.size} samples")


def cmd_profile(cfg: RunConfig, args, out: Path):
    _require(args, "data", "report")
    data = _train_window(cfg, io.ingest(args.data))
    base = io.read_fit_report(args.report)
    pc = cfg.profile
    for n in (pc.param,) + pc.pinned + pc.partners:
        if n not in base.free_names:
            raise ConfigError(f"[profile] parameter {n} is not free in the base fit")
    pinned = [(n, getattr(base.estimates, n)) for n in pc.pinned]
    grid = profile.default_grid(pc.param, getattr(base.estimates, pc.param), pc.points, pc.factor)
    settings = estimate.OptimizerSettings(restarts=pc.restarts, max_iters=pc.max_iters, seed=cfg.run.seed)
    res = profile.profile_likelihood(data, pc.param, grid, base, pinned=pinned, settings=settings,
                                     cold_start=pc.cold_start, threads=cfg.run.threads)
    traces = [res.trace(n) for n in pc.partners]
    _write_table(
        out / f"profile_{pc.param}.csv",
        ("grid", "profile_nll", "delta_nll", "in_ci", "failed") + pc.partners,
        [res.grid, res.profile_nll, res.profile_nll - res.mle_nll, res.in_ci, res.failed] + traces,
    )
    lo, hi = res.ci_interval
    _write_json(out / f"profile_{pc.param}.json", {
        "param": pc.param, "pinned": [[n, v] for n, v in res.pinned], "mle_nll": res.mle_nll,
        "threshold": res.threshold, "ci": [lo, hi], "ci_open": [bool(res.ci_open[0]), bool(res.ci_open[1])],
        "n_failed": int(res.failed.sum()),
    })
    tag = " (open-ended)" if any(res.ci_open) else ""
    print(f"profile {pc.param}: 95% region [{lo:.6g}, {hi:.6g}]{tag}")


def cmd_diagnose(cfg: RunConfig, args, out: Path):
    _require(args, "data", "report")
    data = io.ingest(args.data)
    p, _ = _load_params(args.report)
    dc = cfg.diagnose
    rep = diagnostics.diagnose(p, data, max_lag=dc.max_lag, burn_in=dc.burn_in)
    t = data.inputs.t[dc.burn_in:]
    _write_table(out / "diagnostics_residuals.csv", ("t_min", "standardized_residual"),
                 (t, rep.standardized_residuals))
    lags = np.arange(rep.acf.size)
    _write_table(out / "diagnostics_acf.csv", ("lag", "acf", "band"),
                 (lags, rep.acf, np.full(lags.size, rep.acf_band)))
    diag = np.arange(1, rep.cumulated_periodogram.size + 1) / rep.cumulated_periodogram.size
    _write_table(out / "diagnostics_cp.csv", ("frequency", "cumulated", "lower", "upper"),
                 (rep.cp_frequencies, rep.cumulated_periodogram, diag - rep.cp_band, diag + rep.cp_band))
    _write_json(out / "diagnostics_summary.json", rep.summary())
    print(f"diagnose: RMSE {rep.rmse:.4f}, ACF lags inside band {rep.whiteness_summary:.2%}, "
          f"CP inside band {rep.cp_inside}")


def cmd_retune(cfg: RunConfig, args, out: Path):
    _require(args, "data", "report")
    data = _train_window(cfg, io.ingest(args.data))
    base = io.read_fit_report(args.report)
    rc = cfg.retune
    opt = estimate.OptimizerSettings(restarts=rc.restarts, max_iters=rc.max_iters, seed=cfg.run.seed,
                                     threads=cfg.run.threads)
    report = estimate.retune(base, data, free_set=rc.free, optimizer=opt)
    io.write_fit_report(report, out / "retune_report.json")
    names = list(report.relative_changes)
    _write_table(out / "relative_changes.csv", ("param", "old", "new", "relative_change"), (
        names, [getattr(base.estimates, n) for n in names], [getattr(report.estimates, n) for n in names],
        [report.relative_changes[n] for n in names],
    ))
    for n in names:
        print(f"retune {n}: {getattr(base.estimates, n):.6g} -> {getattr(report.estimates, n):.6g} "
              f"({report.relative_changes[n]:+.1%})")


COMMANDS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
    "profile": cmd_profile, "diagnose": cmd_diagnose, "retune": cmd_retune,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freezerid", description="Grey-box ULT freezer identification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name in COMMANDS:
        sp = sub.add_parser(name, help=COMMANDS[name].__name__.replace("cmd_", ""))
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--data", help="dataset CSV (t_min,T_c,T_e_in,T_e_out,T_a,m)")
        sp.add_argument("--report", help="fit report JSON (or parameter JSON for predict/diagnose)")
        sp.add_argument("--out", help="output directory (overrides [run] out)")
        sp.add_argument("--seed", type=int, help="random seed (overrides [run] seed)")
        sp.add_argument("--threads", type=int, help="worker threads (overrides [run] threads)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None and args.seed < 0:
            raise UsageError("--seed must be >= 0")
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = cfg.with_overrides(seed=args.seed, threads=args.threads, out=args.out)
        out = Path(cfg.run.out)
        COMMANDS[args.command](cfg, args, out)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"freezerid: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"freezerid: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as e:
        print(f"freezerid: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, OSError) as e:
        print(f"freezerid: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
