"""Command-line entry point: ``streamsap {eval,simulate,ksweep,selfcheck}``.

Settings come from built-in defaults, then an optional flat ``key = value``
config file (``--config``), then command-line flags.

Exit codes: 0 success, 1 self-check failure, 2 input/configuration error,
3 invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import report as rpt
from .detectors import make_detector
from .ingest import ParseError, generate_scenario, load_coco_stream, load_results, load_scenario_specs, save_results
from .model import DEFAULT_FRAME_PERIOD, InvariantError, ResultTimeline, StreamScenario, WindowSpec
from .selfcheck import format_table, run_checks
from .sim import LatencyModel, SimConfig, SimConfigError, cell_window, parse_grid, run_all, sweep_window
from .streaming import StreamMode, StreamPolicy, streaming_ap

log = logging.getLogger("streamsap")

EXIT_OK, EXIT_SELFCHECK, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2, 3

DEFAULTS: dict[str, Any] = {
    "annotations": None,
    "results": None,
    "scenario_spec": None,
    "detector": "delayed",
    "policy": "real_time",
    "latency_mean": None,
    "latency_std": 0.0,
    "latency_floor": 1e-4,
    "frame_period": None,
    "k": 1,
    "n_support": 0,
    "step": 1,
    "grid": None,
    "warmup": None,
    "seed": 0,
    "out": "out",
    "format": "csv,json,svg",
    "jobs": 1,
    "jitter_std": 0.0,
    "score_std": 0.0,
    "drop_rate": 0.0,
    "spurious_rate": 0.0,
    "max_dets": None,
    "sequence_key": "sid",
    "frame_key": "fid",
    "tolerance": None,
}

HELP = {
    "annotations": "COCO-style stream annotations (JSON)",
    "results": "emitted-results JSON for offline eval",
    "scenario_spec": "synthetic scenario spec (JSON object or list)",
    "detector": "perfect | delayed | cv; ksweep accepts a comma list",
    "policy": "real_time | non_real_time",
    "latency_mean": "per-frame latency in seconds (default: half a frame period)",
    "latency_std": "latency std in seconds; > 0 switches to clamped gaussian",
    "latency_floor": "lower clamp for gaussian latency, seconds",
    "frame_period": "frame period in seconds (default: from input, else 1/30)",
    "k": "forecast horizon K (sAP_1..sAP_K)",
    "n_support": "support frames N",
    "step": "support-frame step (frames)",
    "grid": "ksweep (N:step) cells, e.g. '0:-,1:1,2:1'",
    "warmup": "leading frames excluded from scoring (default: N*step; eval: 0)",
    "seed": "master seed; substreams are derived per component",
    "out": "output directory",
    "format": "comma list of csv,json,svg",
    "jobs": "sequences simulated in parallel",
    "jitter_std": "NoisyWrapper box jitter std (px)",
    "score_std": "NoisyWrapper score noise std",
    "drop_rate": "NoisyWrapper drop probability",
    "spurious_rate": "NoisyWrapper spurious-box probability per horizon",
    "max_dets": "per-frame detection cap (COCO uses 100)",
    "sequence_key": "image field naming the sequence in COCO input",
    "frame_key": "image field naming the frame index in COCO input",
    "tolerance": "selfcheck: override every tolerance with this value",
}

INT_KEYS = {"k", "n_support", "step", "seed", "jobs", "warmup", "max_dets"}
FLOAT_KEYS = {
    "latency_mean",
    "latency_std",
    "latency_floor",
    "frame_period",
    "jitter_std",
    "score_std",
    "drop_rate",
    "spurious_rate",
    "tolerance",
}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in DEFAULTS:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value' with a known key, got {raw!r}")
        out[key] = _coerce(key, value.strip())
    return out


def _coerce(key: str, value):
    if value is None or value == "":
        return None
    try:
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return value


@dataclass
class RunConfig:
    subcommand: str
    values: dict[str, Any] = field(default_factory=dict)

    def __getattr__(self, name: str):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def formats(self) -> list[str]:
        return [f.strip() for f in str(self.values["format"]).split(",") if f.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamsap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, desc in (
        ("eval", "score an emitted-results file against annotations"),
        ("simulate", "simulate a detector on a stream and score it"),
        ("ksweep", "sAP_1..sAP_K table over detectors and (N, step) cells"),
        ("selfcheck", "run kernel equivalence and gradient checks"),
    ):
        p = sub.add_parser(name, help=desc, description=desc)
        p.add_argument("--config", help="flat key = value config file")
        for key, default in DEFAULTS.items():
            p.add_argument(
                "--" + key.replace("_", "-"),
                dest=key,
                default=argparse.SUPPRESS,
                help=HELP[key] if "(default:" in HELP[key] else f"{HELP[key]} (default: {default})",
            )
    return parser


def resolve_config(argv: Sequence[str] | None) -> tuple[RunConfig, bool]:
    args = build_parser().parse_args(argv)
    values = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{args.config}: {exc.strerror}") from None
        values.update(parse_config_text(text, args.config))
    for key in DEFAULTS:
        if hasattr(args, key):
            values[key] = _coerce(key, getattr(args, key))
    return RunConfig(args.subcommand, values), args.verbose


# -- helpers ---------------------------------------------------------------


def load_scenarios(cfg: RunConfig) -> list[StreamScenario]:
    if cfg.scenario_spec:
        scenarios = []
        for spec in load_scenario_specs(cfg.scenario_spec):
            sc = generate_scenario(spec)
            if cfg.frame_period:
                sc = _with_period(sc, cfg.frame_period)
            scenarios.append(sc)
        return scenarios
    if cfg.annotations:
        return load_coco_stream(cfg.annotations, cfg.sequence_key, cfg.frame_key, cfg.frame_period)
    raise ConfigError("need --scenario-spec or --annotations")


def _with_period(sc: StreamScenario, period: float) -> StreamScenario:
    from dataclasses import replace

    frames = tuple(replace(f, timestamp=f.frame_index * period) for f in sc.frames)
    return replace(sc, frame_period=period, frames=frames)


def make_policy(cfg: RunConfig, warmup: int) -> StreamPolicy:
    try:
        mode = StreamMode(cfg.policy)
    except ValueError:
        raise ConfigError(f"unknown policy {cfg.policy!r}") from None
    return StreamPolicy(mode, int(cfg.k), warmup)


def make_sim_config(cfg: RunConfig, period: float, window: WindowSpec, warmup: int) -> SimConfig:
    mean = cfg.latency_mean if cfg.latency_mean is not None else 0.5 * period
    if cfg.latency_std and cfg.latency_std > 0:
        latency = LatencyModel("gaussian_clamped", mean, cfg.latency_std, cfg.latency_floor)
    else:
        latency = LatencyModel("constant", mean)
    return SimConfig(make_policy(cfg, warmup), window, latency, int(cfg.seed))


def detector_for(cfg: RunConfig, name: str):
    return make_detector(
        name,
        seed=int(cfg.seed),
        jitter_std=cfg.jitter_std,
        score_std=cfg.score_std,
        drop_rate=cfg.drop_rate,
        spurious_rate=cfg.spurious_rate,
    )


def print_table(report, title: str) -> None:
    print(title)
    print("  " + "  ".join(f"{c:>7}" for c in rpt.CSV_COLUMNS))
    for row in rpt.report_rows(report):
        print("  " + "  ".join(f"{v or '-':>7}" for v in row))


# -- subcommands -----------------------------------------------------------


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg.annotations or not cfg.results:
        raise ConfigError("eval needs --annotations and --results")
    scenarios = load_coco_stream(cfg.annotations, cfg.sequence_key, cfg.frame_key, cfg.frame_period)
    period = scenarios[0].frame_period if scenarios else DEFAULT_FRAME_PERIOD
    timelines = load_results(cfg.results, frame_period=period)
    if "" in timelines:
        if len(scenarios) != 1:
            raise ParseError("records without sequence_id need a single-sequence annotation file")
        timelines = {scenarios[0].sequence_id: ResultTimeline(scenarios[0].sequence_id, timelines[""].results)}
    policy = make_policy(cfg, cfg.warmup or 0)
    report = streaming_ap(list(timelines.values()), scenarios, policy, cfg.max_dets)
    rpt.write_report(report, cfg.out, cfg.formats)
    print_table(report, f"eval: {len(scenarios)} sequence(s), policy {policy.mode.value}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    scenarios = load_scenarios(cfg)
    window = WindowSpec(int(cfg.n_support), int(cfg.step))
    warmup = cfg.warmup if cfg.warmup is not None else window.span
    sim_cfg = make_sim_config(cfg, scenarios[0].frame_period, window, warmup)
    detector = detector_for(cfg, cfg.detector)
    timelines = run_all(scenarios, detector, sim_cfg, int(cfg.jobs))
    report = streaming_ap(timelines, scenarios, sim_cfg.policy, cfg.max_dets)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_results(timelines, out / "results.json")
    rpt.write_report(report, out, cfg.formats, label=detector.name)
    misses = sum(len(t.deadline_misses) for t in timelines)
    if misses:
        log.warning("%d frame(s) missed the real-time deadline", misses)
    print_table(report, f"simulate: detector {detector.name}, N={window.n_support}, step={window.step}")
    return EXIT_OK


def cmd_ksweep(cfg: RunConfig) -> int:
    scenarios = load_scenarios(cfg)
    grid = parse_grid(cfg.grid) if cfg.grid else [(int(cfg.n_support), int(cfg.step))]
    warmup = cfg.warmup if cfg.warmup is not None else 0
    # sweep_window raises the warm-up to the longest span in the grid
    base = make_sim_config(cfg, scenarios[0].frame_period, cell_window(grid[0]), warmup)
    names = [n.strip() for n in str(cfg.detector).split(",") if n.strip()]
    rows, series, payload = [], {}, []
    for name in names:
        table = sweep_window(scenarios, detector_for(cfg, name), base, grid, int(cfg.jobs))
        for (n, step), report in table.items():
            cell = f"({n}, {'-' if step is None else step})"
            series[f"{name} {cell}"] = report.curve()
            payload.append({"detector": name, "n_support": n, "step": step, "report": report.to_dict()})
            for row in rpt.report_rows(report):
                rows.append([name, str(n), "-" if step is None else str(step)] + row)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.formats:
        rpt.write_csv(out / "ksweep.csv", ["detector", "n_support", "step"] + rpt.CSV_COLUMNS, rows)
    if "json" in cfg.formats:
        rpt.write_json(out / "ksweep.json", payload)
    if "svg" in cfg.formats:
        rpt.plot_curves(series, out / "ksweep.svg", title="K-step sAP")
    width = max([len("detector (N, step)")] + [len(label) for label in series])
    print("detector (N, step)".ljust(width) + "".join(f"{f'sAP_{k}':>10}" for k in range(1, int(cfg.k) + 1)))
    for label, curve in series.items():
        print(label.ljust(width) + "".join(f"{rpt.fmt(v) or '-':>10}" for v in curve))
    return EXIT_OK


def cmd_selfcheck(cfg: RunConfig) -> int:
    results = run_checks(cfg.tolerance)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("self-check FAILED: " + "; ".join(failed), file=sys.stderr)
        return EXIT_SELFCHECK
    return EXIT_OK


COMMANDS = {"eval": cmd_eval, "simulate": cmd_simulate, "ksweep": cmd_ksweep, "selfcheck": cmd_selfcheck}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg, verbose = resolve_config(argv)
    except ConfigError as exc:
        print(f"streamsap: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[cfg.subcommand](cfg)
    except InvariantError as exc:
        print(f"streamsap: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ParseError, ConfigError, SimConfigError, OSError) as exc:
        print(f"streamsap: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"streamsap: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
