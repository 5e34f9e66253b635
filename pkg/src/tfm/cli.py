"""Command-line entry point: ``tfm <command> [--config PATH] [--out DIR] [--seed N] ...``.

Commands
    gen-data    run the micro-world oracle and write an event log
    import-fcd  convert SUMO floating-car data into an event log
    train       fit a model to an event log
    simulate    roll a trained model forward from a reference log
    eval        MFD points, summary metrics and an optional SVG
    gradcheck   finite-difference check of every parameter gradient
    plot        render an MFD metrics CSV as SVG

Every command writes ``manifest.json`` to its output directory.

Exit codes: 0 ok, 2 bad arguments or config, 3 bad input data,
4 numeric failure, 5 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .config import GeneratorConfig, ModelConfig, SchemaViolation, TrainConfig, from_dict, to_dict
from .evaluation import (
    InsufficientData,
    NoVehicleData,
    compute_mfd,
    mfd_spearman,
    mfd_svg,
    next_state_mse,
    read_mfd_csv,
    trace_correlations,
    write_mfd_csv,
)
from .graph import (
    GraphError,
    LogFormatError,
    dumps_log,
    read_log,
    replay_steps,
    validate_log,
)
from .microworld import (
    SCENARIOS,
    DemandSchedule,
    FcdError,
    InfeasibleDemand,
    NetworkError,
    OracleConfig,
    RoadNetwork,
    convert,
    import_fcd,
    run_oracle,
)
from .model import TFM
from .numeric.checkpoint import CorruptCheckpoint, VersionMismatch
from .numeric.gradcheck import grad_check
from .rollout import ReferenceDemand, RolloutConfig, simulate
from .toy import toy_loss, toy_problem
from .training import NonFiniteLoss, train, write_history
from .updater import NonFiniteState

EXIT_OK, EXIT_ARGS, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5


class MissingFile(FileNotFoundError):
    pass


class UsageError(ValueError):
    pass


# ------------------------------------------------------------------- config


@dataclass
class ScenarioConfig:
    name: str = "ring"
    params: dict = field(default_factory=dict)  # keyword arguments of the scenario builder

    def validate(self) -> None:
        if not isinstance(self.params, dict):
            raise ValueError("params must be an object")
        if self.name not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.name!r}; choose from {sorted(SCENARIOS)}")


@dataclass
class RolloutSection:
    steps: int = 100
    start_step: int = 0
    record_states: bool = True
    signals: bool = True  # take signal states from the reference log

    def validate(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.start_step < 0:
            raise ValueError("start_step must be >= 0")


@dataclass
class EvaluationConfig:
    bin_seconds: float = 60.0
    svg: bool = False
    held_out_from: float = 0.8  # next-state metrics use transitions after this fraction of the log

    def validate(self) -> None:
        if not self.bin_seconds > 0:
            raise ValueError("bin_seconds must be positive")
        if not 0 <= self.held_out_from < 1:
            raise ValueError("held_out_from must be in [0, 1)")


@dataclass
class GradcheckConfig:
    d_model: int = 8
    layers: int = 2
    k: int = 4
    h: float = 1e-5
    tol: float = 1e-4

    def validate(self) -> None:
        if min(self.d_model, self.layers, self.k) < 1:
            raise ValueError("d_model, layers and k must be >= 1")
        if not (self.h > 0 and self.tol > 0):
            raise ValueError("h and tol must be positive")


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    rollout: RolloutSection = field(default_factory=RolloutSection)
    oracle: Optional[OracleConfig] = None  # None: the scenario's own
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)


def parse_config(path: str | Path | None) -> RunConfig:
    """Load and validate a run config; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"config file {p} does not exist")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation("", f"{p} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise SchemaViolation("", "a config must be a JSON object")
    return from_dict(RunConfig, data)


def effective_config(cfg: RunConfig) -> dict[str, Any]:
    return to_dict(cfg)


# ----------------------------------------------------------------- helpers


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: Optional[str], what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"{what} {p} does not exist")
    return p


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


class Run:
    """Collects inputs and artifacts and writes the manifest."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.inputs: dict[str, str] = {}
        self.artifacts: dict[str, str] = {}
        self.extra: dict[str, Any] = {}
        out.mkdir(parents=True, exist_ok=True)

    def input(self, path: Path) -> Path:
        self.inputs[str(path)] = sha256_file(path)
        return path

    def artifact(self, name: str) -> Path:
        return self.out / name

    def done(self, name: str) -> None:
        self.artifacts[name] = sha256_file(self.out / name)

    def write_manifest(self) -> None:
        doc = {
            "command": self.command,
            "version": __version__,
            "seed": self.cfg.seed,
            "config": effective_config(self.cfg),
            "inputs": self.inputs,
            "artifacts": self.artifacts,
        }
        doc.update(self.extra)
        _write_text(self.out / "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _scenario(cfg: RunConfig):
    try:
        params = dict(cfg.scenario.params)
        params.setdefault("seed", cfg.seed)
        sc = SCENARIOS[cfg.scenario.name](**params)
    except TypeError as exc:
        raise SchemaViolation("scenario.params", str(exc)) from None
    if cfg.oracle is not None:
        sc.oracle = cfg.oracle
    return sc


def _load_log(run: Run, path: Path, cfg: RunConfig):
    log = read_log(run.input(path), cfg.model.step_duration)
    report = validate_log(log, cfg.model.window)
    if not report.ok:
        raise GraphError(f"{path} does not validate:\n{report}")
    return log


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, cfg: RunConfig, run: Run) -> None:
    if args.network or args.demand:
        net_path = _require(args.network, "--network")
        dem_path = _require(args.demand, "--demand")
        network = RoadNetwork.load(run.input(net_path))
        demand = DemandSchedule.load(run.input(dem_path))
        steps = args.steps or cfg.rollout.steps
        traj = run_oracle(network, demand, steps, cfg.oracle)
    else:
        sc = _scenario(cfg)
        network, demand = sc.network, sc.demand
        traj = run_oracle(network, demand, args.steps or sc.steps, sc.oracle)
    log, _ = convert(traj, network)
    _write_text(run.artifact("events.jsonl"), dumps_log(log))
    network.save(run.artifact("network.json"))
    demand.save(run.artifact("demand.json"))
    for name in ("events.jsonl", "network.json", "demand.json"):
        run.done(name)
    run.extra["oracle"] = {"delayed": len(traj.delayed), "interventions": traj.interventions,
                           "vehicles": len(traj.vehicles)}
    print(f"wrote {len(log)} events for {len(traj.vehicles)} vehicles to {run.artifact('events.jsonl')}")


def cmd_import_fcd(args, cfg: RunConfig, run: Run) -> None:
    src = _require(args.input, "--input (FCD XML file)")
    traj = import_fcd(run.input(src))
    network = RoadNetwork.load(run.input(Path(args.network))) if args.network else None
    log, _ = convert(traj, network)
    _write_text(run.artifact("events.jsonl"), dumps_log(log))
    run.done("events.jsonl")
    print(f"wrote {len(log)} events for {len(traj.vehicles)} vehicles to {run.artifact('events.jsonl')}")


def cmd_train(args, cfg: RunConfig, run: Run) -> None:
    log = _load_log(run, _require(args.input, "--input (event log)"), cfg)
    cfg.training.seed = cfg.seed
    model = TFM.init(cfg.model, cfg.seed)

    def report(rec) -> None:
        print(f"epoch {rec.epoch:3d} struct {rec.struct_loss:.4f} state {rec.state_loss:.4f} "
              f"total {rec.total:.4f} val {rec.val_total:.4f}", flush=True)

    result = train(log, model, cfg.training, on_epoch=report)
    model.save(run.artifact("model.ckpt"), step=result.steps,
               extra={"training": to_dict(cfg.training), "best_epoch": result.best_epoch})
    write_history(run.artifact("history.csv"), result.history)
    run.done("model.ckpt")
    run.done("history.csv")
    run.extra["training"] = {"best_epoch": result.best_epoch, "steps": result.steps,
                             "train_transitions": result.train_size, "val_transitions": result.val_size,
                             "lambda_state": cfg.training.lambda_state}


def _checkpoint(args, run: Run) -> TFM:
    path = _require(args.checkpoint, "--checkpoint")
    model, _ = TFM.load(run.input(path))
    return model


def cmd_simulate(args, cfg: RunConfig, run: Run) -> None:
    if args.checkpoint is None:
        raise UsageError("simulate needs --checkpoint PATH")
    model = _checkpoint(args, run)
    if args.input:
        log = _load_log(run, _require(args.input, "--input (reference log)"), cfg)
    else:
        sc = _scenario(cfg)
        log, _ = convert(run_oracle(sc.network, sc.demand, sc.steps, sc.oracle), sc.network)
    snaps = replay_steps(log, model.config.window)
    start = cfg.rollout.start_step
    if start >= len(snaps):
        raise InsufficientData(f"reference log has {len(snaps)} steps; start_step is {start}")
    rcfg = RolloutConfig(cfg.rollout.steps, cfg.generator, cfg.seed, cfg.rollout.record_states)
    prefix = log.until(snaps[start].time)
    result = simulate(snaps[start], model, rcfg, ReferenceDemand(log, cfg.rollout.signals), prefix)
    _write_text(run.artifact("rollout.jsonl"), dumps_log(result.log))
    run.done("rollout.jsonl")
    run.extra["checkpoint_sha256"] = sha256_file(args.checkpoint)
    print(f"simulated {cfg.rollout.steps} steps; {len(result.events)} events")


SUMMARY_FIELDS = ("metric", "value")


def cmd_eval(args, cfg: RunConfig, run: Run) -> None:
    log = _load_log(run, _require(args.input, "--input (event log)"), cfg)
    if args.network:
        network: RoadNetwork | float = RoadNetwork.load(run.input(Path(args.network)))
    elif args.lane_km:
        network = float(args.lane_km)
    else:
        raise UsageError("eval needs --network PATH or --lane-km X to compute densities")
    series = {"log": compute_mfd(log, network, cfg.evaluation.bin_seconds)}
    summary: list[tuple[str, float]] = [("spearman_log", mfd_spearman(series["log"]))]
    truth = log
    if args.reference:
        ref = truth = _load_log(run, _require(args.reference, "--reference"), cfg)
        series["reference"] = compute_mfd(ref, network, cfg.evaluation.bin_seconds)
        summary.append(("spearman_reference", mfd_spearman(series["reference"])))
        corr = trace_correlations(ref, log)
        summary.append(("trace_pearson_median", float(np.median(list(corr.values()))) if corr else math.nan))
        summary.append(("trace_vehicles", float(len(corr))))
    if args.checkpoint:
        model = _checkpoint(args, run)
        # scored against the observed log: a model reproduces its own rollout exactly
        steps = len(replay_steps(truth, model.config.window))
        rep = next_state_mse(model, truth, start_step=int(cfg.evaluation.held_out_from * (steps - 1)),
                             decoding=cfg.generator)
        summary += [("mse_model", rep.model), ("mse_persistence", rep.baseline),
                    ("mse_improvement", rep.improvement), ("mse_model_all", rep.model_all),
                    ("mse_persistence_all", rep.baseline_all)]
    write_mfd_csv(run.artifact("metrics.csv"), series)
    with open(run.artifact("summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for name, value in summary:
            w.writerow([name, repr(float(value))])
    run.done("metrics.csv")
    run.done("summary.csv")
    if cfg.evaluation.svg:
        _write_text(run.artifact("mfd.svg"), mfd_svg(series))
        run.done("mfd.svg")
    for name, value in summary:
        print(f"{name}: {value:.6g}")


def cmd_gradcheck(args, cfg: RunConfig, run: Run) -> int:
    g = cfg.gradcheck
    model, tr = toy_problem(cfg.seed, g.d_model, g.layers, g.k)
    report = grad_check(toy_loss(model, tr, cfg.training.lambda_state), model.store, h=g.h)
    lines = report.lines()
    text = "\n".join(lines) + f"\nmax_rel_error {report.max_rel_error:.6e}\n"
    _write_text(run.artifact("gradcheck.txt"), text)
    run.done("gradcheck.txt")
    run.extra["gradcheck"] = {"max_rel_error": report.max_rel_error, "tol": g.tol}
    bad = report.failures(g.tol)
    for c in bad:
        print(f"FAIL {c.name}: relative error {c.max_rel_error:.3e} >= {g.tol}", file=sys.stderr)
    print(f"max relative error {report.max_rel_error:.3e} over {len(lines)} parameters")
    return EXIT_NUMERIC if bad else EXIT_OK


def cmd_plot(args, cfg: RunConfig, run: Run) -> None:
    src = _require(args.input, "--input (metrics CSV)")
    try:
        series = read_mfd_csv(run.input(src))
    except (KeyError, ValueError) as exc:
        raise LogFormatError(f"{src}: {exc}") from None
    _write_text(run.artifact("mfd.svg"), mfd_svg(series))
    run.done("mfd.svg")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "import-fcd": cmd_import_fcd,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfm", description="Generative dynamic-graph traffic model.")
    parser.add_argument("--version", action="version", version=f"tfm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "gen-data": "run the oracle on a scenario (or --network/--demand) and write events.jsonl",
        "import-fcd": "convert SUMO FCD XML (--input) into events.jsonl",
        "train": "train on an event log (--input); writes model.ckpt and history.csv",
        "simulate": "roll a checkpoint forward from a reference log; writes rollout.jsonl",
        "eval": "MFD and summary metrics for a log; writes metrics.csv and summary.csv",
        "gradcheck": "finite-difference gradient check on the toy transition",
        "plot": "render metrics.csv (--input) as mfd.svg",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--out", default=".", help="output directory (default: current directory)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--checkpoint", help="model checkpoint")
        p.add_argument("--input", help="input file (event log, FCD XML or metrics CSV)")
        if name in ("gen-data", "import-fcd", "eval"):
            p.add_argument("--network", help="network JSON")
        if name == "gen-data":
            p.add_argument("--demand", help="demand JSON (with --network)")
            p.add_argument("--steps", type=int, help="number of oracle ticks")
        if name == "eval":
            p.add_argument("--reference", help="reference log for trace and MFD comparison")
            p.add_argument("--lane-km", type=float, help="total lane length when no network is given")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        run = Run(args.command, cfg, Path(args.out))
        status = COMMANDS[args.command](args, cfg, run)
        run.write_manifest()
        return EXIT_OK if status is None else status
    except (SchemaViolation, UsageError) as exc:
        print(f"tfm {args.command}: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except MissingFile as exc:
        print(f"tfm {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (LogFormatError, GraphError, FcdError, NetworkError, CorruptCheckpoint, VersionMismatch,
            InsufficientData, NoVehicleData, InfeasibleDemand) as exc:
        print(f"tfm {args.command}: bad input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLoss, NonFiniteState, FloatingPointError) as exc:
        print(f"tfm {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"tfm {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
