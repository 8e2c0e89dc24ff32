"""Command-line entry point: ``hvac-gp <subcommand> [options]``.

Every subcommand accepts ``--config`` (YAML or JSON), ``--seed`` and
``--out-dir``, writes its artifacts under the output directory and leaves a
``manifest.json`` next to them. A bad config or a missing input exits with
status 1; a failure while running exits with status 2.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__, harness, learning, sim
from .errors import ConfigError, HvacGpError, ValidationError
from .harness import EpisodeConfig

log = logging.getLogger("hvac_gp")


@dataclass
class DataSection:
    target_days: int = 30
    source_count: int = 8
    source_days: int = 7
    explore_prob: float = 0.2
    max_task_rows: int = 300


@dataclass
class LearnSection:
    config: learning.LearnConfig = field(default_factory=learning.LearnConfig)
    fine_tune_iterations: int = 200
    fine_tune_days: int = 7


@dataclass
class StudySection:
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    fine_tune_days: list = field(default_factory=lambda: [0, 1, 3, 7, 14, 30])
    epsilons: list = field(default_factory=lambda: [0.3, 0.8, 1.1])
    e_star: float = 1.0


@dataclass
class RunConfig:
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    data: DataSection = field(default_factory=DataSection)
    learn: LearnSection = field(default_factory=LearnSection)
    study: StudySection = field(default_factory=StudySection)


def _strict(cls, values, where: str):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(values).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValidationError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(raw: dict | None) -> RunConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    unknown = sorted(set(raw) - {"episode", "data", "learn", "study"})
    if unknown:
        raise ConfigError(f"config: unknown section(s) {', '.join(unknown)}")
    try:
        episode = EpisodeConfig.from_dict(raw.get("episode") or {})
    except ConfigError as exc:
        raise ConfigError(f"episode: {exc}") from None
    learn_raw = dict(raw.get("learn") or {})
    extra = {k: learn_raw.pop(k) for k in ("fine_tune_iterations", "fine_tune_days") if k in learn_raw}
    if "adam_betas" in learn_raw:
        learn_raw["adam_betas"] = tuple(learn_raw["adam_betas"])
    learn = LearnSection(_strict(learning.LearnConfig, learn_raw, "learn"), **extra)
    return RunConfig(episode, _strict(DataSection, raw.get("data"), "data"), learn,
                     _strict(StudySection, raw.get("study"), "study"))


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse ({exc})") from None
    return parse_config(raw)


def _require(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"{what}: no path given")
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _episode(cfg: RunConfig, args) -> EpisodeConfig:
    ep = cfg.episode
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "controller", None):
        changes["controller"] = args.controller
    if getattr(args, "days", None):
        changes["days"] = args.days
    if getattr(args, "model", None):
        changes["model_path"] = args.model
    if getattr(args, "history", None):
        changes["history_path"] = args.history
    if getattr(args, "epsilon", None) is not None:
        changes["mppi"] = dataclasses.replace(ep.mppi, flag_threshold=args.epsilon)
    try:
        return dataclasses.replace(ep, **changes)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def _seed(cfg: RunConfig, args) -> int:
    return cfg.episode.seed if args.seed is None else args.seed


# -- subcommands ---------------------------------------------------------------

def cmd_synth_data(cfg: RunConfig, args, out: Path) -> dict:
    seed = _seed(cfg, args)
    ep, data = cfg.episode, cfg.data
    weather = sim.synth_weather(seed, data.target_days, ep.weather_profile, ep.season, timestep=ep.zone.timestep)
    sim.save_weather(weather, out / "weather.csv")
    history = harness.collect_history(ep.zone, weather, ep.season, seed=seed + 1, explore_prob=data.explore_prob)
    sim.save_transitions(history, out / "history.csv")
    src = out / "sources"
    src.mkdir(exist_ok=True)
    zones = harness.zone_family(data.source_count, seed)
    for i, zp in enumerate(zones):
        rows = harness.synth_history(zp, data.source_days, ep.season, ep.weather_profile,
                                     seed=seed * 1000 + 10 * i, explore_prob=data.explore_prob)
        sim.save_transitions(rows, src / f"zone{i:02d}.csv")
    (src / "zones.json").write_text(json.dumps([dataclasses.asdict(z) for z in zones], indent=1))
    return {"weather": out / "weather.csv", "history": out / "history.csv", "sources": src}


def _load_sources(path, max_rows: int, seed: int) -> learning.TaskSet:
    src = _require(path, "source data directory")
    files = sorted(src.glob("*.csv"))
    if len(files) < 2:
        raise ConfigError(f"{src}: need at least 2 source transition logs, found {len(files)}")
    tasks = [harness.task_from_rows(sim.load_transitions(f), f.stem, max_rows) for f in files]
    return learning.TaskSet(tuple(tasks), seed)


def cmd_meta_learn(cfg: RunConfig, args, out: Path) -> dict:
    tasks = _load_sources(args.sources, cfg.data.max_task_rows, _seed(cfg, args))
    losses: list = []
    params = learning.meta_learn(tasks, cfg.learn.config, history=losses)
    harness.save_kernel(params, out / "meta_init.json")
    np.savetxt(out / "meta_loss.csv", np.asarray(losses), delimiter=",", header="outer_loss", comments="")
    return {"meta_init": out / "meta_init.json", "loss_curve": out / "meta_loss.csv"}


def cmd_fine_tune(cfg: RunConfig, args, out: Path) -> dict:
    init = harness.load_kernel(_require(args.init, "meta-init artifact"))
    history = sim.load_transitions(_require(args.history, "history artifact"))
    days = cfg.learn.fine_tune_days if args.days is None else args.days
    params = harness.fine_tune_on_days(init, history, days, cfg.learn.config, cfg.learn.fine_tune_iterations,
                                       cfg.data.max_task_rows)
    harness.save_kernel(params, out / "kernel.json")
    return {"kernel": out / "kernel.json"}


def cmd_translate(cfg: RunConfig, args, out: Path) -> dict:
    kernel = harness.load_kernel(_require(args.model, "model artifact"))
    history = sim.load_transitions(_require(args.history, "history artifact"))
    e_star = cfg.study.e_star if args.e_star is None else args.e_star
    if not e_star > 0:
        raise ConfigError(f"e_star must be positive, got {e_star}")
    ep = cfg.episode
    result = harness.translate_from_history(kernel, history, e_star, ep.fit_size, ep.calibrate_scale,
                                            ep.fit_filter, ep.season)
    text = result.to_json()
    (out / "translation.json").write_text(text + "\n")
    print(text)
    return {"translation": out / "translation.json"}


def cmd_run(cfg: RunConfig, args, out: Path) -> dict:
    ep = _episode(cfg, args)
    if ep.controller != "rule_based":
        _require(ep.model_path, "model artifact")
        _require(ep.history_path, "history artifact")
    result = harness.run_episode(ep, out_dir=out)
    record = {"controller": ep.controller, "seed": ep.seed, "config_hash": ep.config_hash(), **result.summary()}
    harness.append_jsonl(out / "results.jsonl", record)
    print(json.dumps(result.summary(), default=str))
    return {"transitions": out / "transitions.csv", "decisions": out / "decisions.csv",
            "results": out / "results.jsonl"}


def _study_inputs(cfg: RunConfig, args, model_attr: str):
    kernel = harness.load_kernel(_require(getattr(args, model_attr), "model artifact"))
    history = sim.load_transitions(_require(args.history, "history artifact"))
    return kernel, history


def cmd_study_efficiency(cfg: RunConfig, args, out: Path) -> dict:
    meta_init, history = _study_inputs(cfg, args, "init")
    ep = dataclasses.replace(_episode(cfg, args), controller=cfg.episode.controller)
    seeds = cfg.study.seeds if args.seed is None else [args.seed]
    rows = harness.data_efficiency_study(cfg.study.fine_tune_days, ep, meta_init, history, seeds,
                                         cfg.learn.fine_tune_iterations, cfg.learn.config,
                                         cfg.data.max_task_rows, out / "efficiency.jsonl")
    harness.write_table_csv(harness.summarize(rows, "fine_tune_days"), out / "efficiency_table.csv")
    return {"results": out / "efficiency.jsonl", "table": out / "efficiency_table.csv"}


def cmd_study_knob(cfg: RunConfig, args, out: Path) -> dict:
    kernel, history = _study_inputs(cfg, args, "model")
    seeds = cfg.study.seeds if args.seed is None else [args.seed]
    rows = harness.threshold_knob_study(cfg.study.epsilons, _episode(cfg, args), kernel, history, seeds,
                                        out / "knob.jsonl")
    harness.write_table_csv(harness.summarize(rows, "epsilon"), out / "knob_table.csv")
    return {"results": out / "knob.jsonl", "table": out / "knob_table.csv"}


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return rows


def cmd_report(cfg: RunConfig, args, out: Path) -> dict:
    src = _require(args.results, "results directory")
    artifacts = {}
    groups = {"results.jsonl": "controller", "efficiency.jsonl": "fine_tune_days", "knob.jsonl": "epsilon"}
    found = False
    for name, key in groups.items():
        for path in sorted(src.rglob(name)):
            found = True
            rows = _read_jsonl(path)
            table = harness.summarize(rows, key)
            target = out / f"{path.parent.name}_{path.stem}_table.csv"
            harness.write_table_csv(table, target)
            artifacts[str(path.relative_to(src))] = target
            print(f"# {path.relative_to(src)} grouped by {key}")
            for row in table:
                stats = ", ".join(f"{m}={row[f'{m}_mean']:.4g}+-{row[f'{m}_std']:.2g}"
                                  for m in ("cumulative_reward", "violation_rate", "energy_kwh",
                                            "fallback_rate", "mean_decision_time"))
                print(f"{key}={row[key]} (n={row['n']}): {stats}")
    if not found:
        raise ConfigError(f"{src}: no results.jsonl, efficiency.jsonl or knob.jsonl found")
    return artifacts


COMMANDS = {
    "synth-data": cmd_synth_data,
    "meta-learn": cmd_meta_learn,
    "fine-tune": cmd_fine_tune,
    "translate": cmd_translate,
    "run": cmd_run,
    "study-efficiency": cmd_study_efficiency,
    "study-knob": cmd_study_knob,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hvac-gp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out-dir", default="out", help="artifact directory (default: out)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    add("synth-data", "generate weather, a target history and source-zone histories")
    p = add("meta-learn", "meta-learn a kernel initialization from source histories")
    p.add_argument("--sources", required=True, help="directory of source transition CSVs")
    p = add("fine-tune", "fine-tune a kernel on recent target history")
    p.add_argument("--init", required=True, help="meta-init kernel JSON")
    p.add_argument("--history", required=True, help="target transition CSV")
    p.add_argument("--days", type=int, help="days of history to fine-tune on")
    p = add("translate", "translate a model-error bound into a flag threshold")
    p.add_argument("--model", required=True, help="kernel JSON")
    p.add_argument("--history", required=True, help="transition CSV")
    p.add_argument("--e-star", type=float, help="model-error bound in degC")
    p = add("run", "run one closed-loop episode")
    p.add_argument("--model", help="kernel JSON (GP controllers)")
    p.add_argument("--history", help="transition CSV to fit on (GP controllers)")
    p.add_argument("--controller", choices=harness.CONTROLLERS)
    p.add_argument("--days", type=int)
    p.add_argument("--epsilon", type=float, help="flag threshold for the clue controller")
    p = add("study-efficiency", "reward versus days of fine-tuning data")
    p.add_argument("--init", required=True, help="meta-init kernel JSON")
    p.add_argument("--history", required=True, help="target transition CSV")
    p.add_argument("--days", type=int, help="episode length in days")
    p = add("study-knob", "violation rate and energy versus the flag threshold")
    p.add_argument("--model", required=True, help="kernel JSON")
    p.add_argument("--history", required=True, help="transition CSV to fit on")
    p.add_argument("--days", type=int, help="episode length in days")
    p = add("report", "summarize results into tables and plot-ready CSV")
    p.add_argument("--results", required=True, help="directory containing result JSONL files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.time()
    try:
        cfg = load_config(args.config)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        artifacts = COMMANDS[args.command](cfg, args, out)
        episode = _episode(cfg, args) if args.command in ("run", "study-efficiency", "study-knob") else cfg.episode
        seeds = [_seed(cfg, args)] if args.seed is not None or args.command not in (
            "study-efficiency", "study-knob") else cfg.study.seeds
        harness.write_manifest(out, episode, seeds, artifacts, {
            "command": args.command,
            "argv": list(sys.argv[1:] if argv is None else argv),
            "elapsed_s": round(time.time() - start, 3),
        })
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (HvacGpError, OSError, ArithmeticError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
