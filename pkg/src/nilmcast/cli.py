"""Command-line front end.

Each subcommand reads its inputs from and writes its artifacts to one run
directory.  ``manifest.json`` at the root of that directory records, per
subcommand, the config hash, the seed and SHA-256 digests of every input and
output file.  Nothing time-dependent is written, so reruns are byte-identical.

Exit codes: 0 success, 1 usage, 2 config, 3 data, 4 missing upstream artifact.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, default_toml, load_config
from .core import PowerSeries, StateChangesMatrix, load_profiles, save_profiles
from .disaggregation import pso_disaggregate
from .errors import ConfigError, DependencyError, NilmError
from .evaluation import BASELINES, daily_metrics, metrics, summarize, write_plot_data, write_report, write_rows
from .events import detect_events
from .extraction import extract_profiles
from .forecasting import DAY, HORIZON, Forecaster, forecast_at, train_forecaster, workday_starts
from .ingestion import derivative, ingest, write_series
from .synthetic import default_scenario, generate, large_building_scenario, write_truth

log = logging.getLogger("nilmcast")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_DEPENDENCY = 0, 1, 2, 3, 4

# artifact names inside the run directory
SYNTH_CSV = "series.csv"
TRUTH_DIR = "truth"
INGESTED = "ingested.npy"
INGEST_REPORT = "ingest_report.json"
PROFILES = "profiles.json"
EXTRACTION_DIAG = "extraction_diagnostics.json"
STATES = "state_changes.csv"
MODEL = "model.bin"
LAYOUT = "feature_layout.json"
TRAIN_LOG = "training_log.csv"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- run directory helpers ---------------------------------------------------

class Run:
    """The run directory plus the bookkeeping for one subcommand."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.dir = Path(cfg.run_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}

    def path(self, name: str) -> Path:
        return self.dir / name

    def require(self, name: str, producer: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise DependencyError(p, producer)
        self.inputs[name] = _sha256(p)
        return p

    def wrote(self, *names: str) -> None:
        for n in names:
            self.outputs[n] = _sha256(self.path(n))

    def finish(self) -> None:
        man_path = self.path("manifest.json")
        doc = {"steps": {}}
        if man_path.exists():
            try:
                doc = json.loads(man_path.read_text())
            except json.JSONDecodeError:
                doc = {"steps": {}}
        doc["version"] = __version__
        doc["config_hash"] = self.cfg.digest()
        doc["seed"] = self.cfg.seed
        doc["config"] = json.loads(self.cfg.canonical())
        doc.setdefault("steps", {})[self.command] = {
            "config_hash": self.cfg.digest(),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
        }
        doc["steps"] = dict(sorted(doc["steps"].items()))
        man_path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_ingested(run: Run) -> PowerSeries:
    values = np.load(run.require(INGESTED, "ingest"))
    meta = json.loads(run.require(INGEST_REPORT, "ingest").read_text())
    return PowerSeries(values, int(meta["start_timestamp"]))


def _load_profiles(run: Run):
    return load_profiles(run.require(PROFILES, "extract-profiles"))


def _load_states(run: Run, T: int, M: int) -> StateChangesMatrix:
    if run.cfg.forecast.states == "truth":
        p = run.require(f"{TRUTH_DIR}/truth_state_changes.csv", "synth-gen")
    else:
        p = run.require(STATES, "disaggregate")
    return StateChangesMatrix.from_csv(p, T=T, M=M)


def _profiles_for_states(run: Run):
    if run.cfg.forecast.states == "truth":
        return load_profiles(run.require(f"{TRUTH_DIR}/truth_profiles.json", "synth-gen"))
    return _load_profiles(run)


def _train_end(cfg: RunConfig, T: int) -> int:
    end = T - int(round(cfg.forecast.test_days * DAY))
    if end <= 0:
        raise ConfigError(f"forecast.test_days: leaves no training data in a {T / DAY:.2f}-day series")
    return end


# -- subcommands -------------------------------------------------------------

def cmd_synth_gen(run: Run, args) -> None:
    cfg = run.cfg
    if cfg.synthetic.scenario == "large-building":
        sc = large_building_scenario(days=cfg.synthetic.days, seed=cfg.seed)
    else:
        sc = default_scenario(days=cfg.synthetic.days, n_devices=cfg.synthetic.devices, seed=cfg.seed)
    data = generate(sc)
    write_series(data.series, run.path(SYNTH_CSV))
    write_truth(data, sc, run.path(TRUTH_DIR))
    run.wrote(SYNTH_CSV, f"{TRUTH_DIR}/truth_profiles.json", f"{TRUTH_DIR}/truth_state_changes.csv", f"{TRUTH_DIR}/scenario.json")
    log.info("generated %d samples of %d devices", data.series.T, len(data.profiles))


def cmd_ingest(run: Run, args) -> None:
    source = args.input or run.cfg.ingest.input
    if source:
        path = Path(source)
        run.inputs[str(path)] = _sha256(path) if path.exists() else ""
    else:
        path = run.require(SYNTH_CSV, "synth-gen")
    series, report = ingest(path)
    np.save(run.path(INGESTED), series.values)
    doc = {"start_timestamp": series.start_timestamp, "source": str(source or SYNTH_CSV), **report.to_dict()}
    run.path(INGEST_REPORT).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    run.wrote(INGESTED, INGEST_REPORT)
    log.info("ingested %d samples, %.3f%% filled", series.T, report.missing_percent)


def cmd_extract(run: Run, args) -> None:
    series = _load_ingested(run)
    res = extract_profiles(series, run.cfg.extraction_config())
    save_profiles(res.profiles, run.path(PROFILES))
    res.write_diagnostics(run.path(EXTRACTION_DIAG))
    run.wrote(PROFILES, EXTRACTION_DIAG)
    if run.cfg.evaluate.plots:
        from . import plotting

        plotting.plot_profiles(res.profiles, run.path("profiles.png"))
        run.wrote("profiles.png")
    log.info("extracted %d profiles", len(res.profiles))


def cmd_disaggregate(run: Run, args) -> None:
    series = _load_ingested(run)
    profiles = _load_profiles(run)
    events = detect_events(derivative(series), run.cfg.extraction.threshold)
    res = pso_disaggregate(series, profiles, events, run.cfg.disagg_config())
    res.matrix.to_csv(run.path(STATES))
    days = daily_metrics(series, res.reconstruction)
    write_rows(days, list(range(len(days))), run.path("disaggregation_daily.csv"), label_name="day")
    write_report([summarize("pso", days, spread="sem")], run.path("disaggregation_report.csv"))
    n = min(series.T, DAY)
    write_plot_data(series.values[:n], res.reconstruction.values[:n], run.path("disaggregation_plot.csv"))
    run.wrote(STATES, "disaggregation_daily.csv", "disaggregation_report.csv", "disaggregation_plot.csv")
    if run.cfg.evaluate.plots:
        from . import plotting

        plotting.plot_series(
            np.arange(n), series.total_active()[:n], res.reconstruction.total_active()[:n],
            run.path("disaggregation.png"), "disaggregation, first day", "reconstruction",
        )
        run.wrote("disaggregation.png")
    log.info("disaggregation error %.4g (empty matrix %.4g)", res.total_error, res.empty_error)


def cmd_train(run: Run, args) -> None:
    series = _load_ingested(run)
    profiles = _profiles_for_states(run)
    S = _load_states(run, series.T, len(profiles))
    fc = train_forecaster(S, series.start_timestamp, run.cfg.forecast_config(), train_end=_train_end(run.cfg, series.T))
    fc.save(run.path(MODEL), run.path(LAYOUT), run.path(TRAIN_LOG))
    run.wrote(MODEL, LAYOUT, TRAIN_LOG)
    log.info("trained %d epochs, best %d", len(fc.log.rows) - 1, fc.log.best_epoch)


def _load_forecaster(run: Run) -> Forecaster:
    return Forecaster.load(run.require(MODEL, "train-forecast"))


def _test_starts(cfg: RunConfig, series: PowerSeries) -> np.ndarray:
    return workday_starts(series.T, series.start_timestamp, _train_end(cfg, series.T), series.T, cfg.evaluate.stride)


def cmd_predict(run: Run, args) -> None:
    fc = _load_forecaster(run)
    series = _load_ingested(run)
    profiles = _profiles_for_states(run)
    S = _load_states(run, series.T, len(profiles))
    if args.at is None:
        starts = _test_starts(run.cfg, series)
        if starts.size == 0:
            raise ConfigError("forecast.test_days: no workday forecast start in the test range; pass --at")
        t0 = int(starts[0])
    else:
        t0 = int(args.at) - series.start_timestamp
    if not 1 <= t0 <= series.T:
        raise ConfigError(f"--at {args.at}: outside the measured series")
    res = forecast_at(fc, S, series, profiles, t0, run.cfg.forecast.threshold)
    name = f"forecast_{series.start_timestamp + t0}"
    write_series(res.series, run.path(f"{name}.csv"))
    res.changes.to_csv(run.path(f"{name}_changes.csv"))
    run.wrote(f"{name}.csv", f"{name}_changes.csv")
    print(run.path(f"{name}.csv"))


def cmd_evaluate(run: Run, args) -> None:
    fc = _load_forecaster(run)
    series = _load_ingested(run)
    profiles = _profiles_for_states(run)
    S = _load_states(run, series.T, len(profiles))
    baselines = args.baseline or list(run.cfg.evaluate.baselines)
    starts = [int(t) for t in _test_starts(run.cfg, series) if t - 7 * DAY >= 0 and t + HORIZON <= series.T]
    if not starts:
        raise ConfigError("forecast.test_days: no complete workday forecast window in the test range")
    rows = {"model": [], **{b: [] for b in baselines}}
    first = None
    for t0 in starts:
        meas = series.values[t0 : t0 + HORIZON]
        pred = forecast_at(fc, S, series, profiles, t0, run.cfg.forecast.threshold).series.values
        rows["model"].append(metrics(meas, pred))
        for b in baselines:
            rows[b].append(metrics(meas, BASELINES[b](series, t0)))
        if first is None:
            first = (t0, meas, pred)
    summaries = [summarize(name, r, spread="std") for name, r in rows.items()]
    write_report(summaries, run.path("forecast_report.csv"))
    labels = [series.start_timestamp + t for t in starts]
    for name, r in rows.items():
        write_rows(r, labels, run.path(f"forecast_windows_{name}.csv"), label_name="start")
    t0, meas, pred = first
    write_plot_data(meas, pred, run.path("forecast_plot.csv"), start=t0)
    run.wrote("forecast_report.csv", "forecast_plot.csv", *[f"forecast_windows_{n}.csv" for n in rows])
    if run.cfg.evaluate.plots:
        from . import plotting

        plotting.plot_method_bars(
            [s.name for s in summaries], [s.mean["rmse"] for s in summaries], [s.spread["rmse"] for s in summaries],
            run.path("forecast_rmse.png"),
        )
        tot = lambda v: v[:, :3].sum(axis=1)  # noqa: E731
        plotting.plot_series(np.arange(t0, t0 + HORIZON), tot(meas), tot(pred), run.path("forecast_example.png"), "first test window")
        run.wrote("forecast_rmse.png", "forecast_example.png")
    for s in summaries:
        print(f"{s.name:18s} windows {s.n:4d}  RMSE {s.mean['rmse']:9.1f} W  MAE {s.mean['mae']:9.1f} W  "
              f"MAPE {s.mean['mape']:6.2f} %  Energy_E {s.mean['energy_e']:7.2f} %")


def cmd_pipeline(run: Run, args) -> None:
    steps = [("synth-gen", cmd_synth_gen), ("ingest", cmd_ingest), ("extract-profiles", cmd_extract),
             ("disaggregate", cmd_disaggregate), ("train-forecast", cmd_train), ("predict", cmd_predict),
             ("evaluate", cmd_evaluate)]
    for name, fn in steps:
        log.info("pipeline: %s", name)
        step = Run(run.cfg, name)
        fn(step, args)
        step.finish()
        run.outputs.update(step.outputs)


COMMANDS = {
    "synth-gen": (cmd_synth_gen, "generate a labelled synthetic building"),
    "ingest": (cmd_ingest, "load a six-channel CSV, fill gaps, store it for later steps"),
    "extract-profiles": (cmd_extract, "detect events, cluster them and build device profiles"),
    "disaggregate": (cmd_disaggregate, "estimate the state-changes matrix with PSO"),
    "train-forecast": (cmd_train, "train the 15-minute forecaster on state histories"),
    "predict": (cmd_predict, "forecast the 900 s after a given timestamp"),
    "evaluate": (cmd_evaluate, "score forecasts against persistence baselines"),
    "pipeline": (cmd_pipeline, "run every step end to end"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="TOML config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key, e.g. forecast.epochs=20")
    common.add_argument("--run-dir", help="run directory (overrides run_dir)")
    common.add_argument("--seed", type=int, help="global seed (overrides seed)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="nilmcast", description="Device profiles, disaggregation and 15-minute load forecasts.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--print-config", action="store_true", help="print the default config and exit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "ingest":
            p.add_argument("--input", help="CSV file to ingest (overrides ingest.input)")
        if name in ("predict", "pipeline"):
            p.add_argument("--at", type=int, help="forecast start as a Unix timestamp (default: first test window)")
        if name in ("evaluate", "pipeline"):
            p.add_argument("--baseline", action="append", choices=sorted(BASELINES), help="baseline(s) to report; repeatable")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        sys.stdout.write(default_toml())
        return EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if args.run_dir:
        overrides.append(f"run_dir={json.dumps(args.run_dir)}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    for attr in ("input", "at", "baseline"):
        if not hasattr(args, attr):
            setattr(args, attr, None)
    try:
        cfg = load_config(args.config, overrides)
        run = Run(cfg, args.command)
        COMMANDS[args.command][0](run, args)
        if args.command != "pipeline":
            run.finish()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (NilmError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
