"""Command line entry point.

    pbcs run --size 2 --seed 0 --mode pbcs --out runs/n2
    pbcs explore --size 5 --out runs/n5
    pbcs robustify --out runs/n5
    pbcs evaluate --out runs/n5
    pbcs render --out runs/n5

Exit status: 0 on success, 1 when the experiment fails by its mode's
criterion, 2 on usage or input errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from . import artifacts
from .experiment import (MODES, ExperimentConfig, RunReport, SkillRecord, evaluate_phase,
                         explore_phase, make_maze, new_counter, robustify_phase, run_cell)
from .explore import ExplorationFailure
from .maze_env import FormatError
from .render import render_svg

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

# flag name -> config field; --budget is resolved per mode
_FLAGS = {"size": "size", "seed": "seed", "mode": "mode", "gamma": "gamma", "eps": "eps"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _convert(name: str, raw: str):
    kind = ExperimentConfig.field_types()[name]
    kind = kind if isinstance(kind, str) else kind.__name__
    if "None" in kind and raw.strip().lower() in ("", "none"):
        return None
    for t in (int, float):
        if kind.startswith(t.__name__):
            return t(raw)
    return raw


def read_config_file(path: str | Path) -> dict[str, object]:
    """UTF-8 ``key=value`` lines; ``#`` starts a comment."""
    out: dict[str, object] = {}
    known = ExperimentConfig.field_types()
    text = Path(path).read_text(encoding="utf-8")
    for i, ln in enumerate(text.splitlines(), start=1):
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        key, sep, value = ln.partition("=")
        key, value = key.strip().replace("-", "_"), value.strip()
        if not sep:
            raise FormatError(f"expected key=value, got {ln!r}", i, path)
        if key == "budget":
            out["budget"] = int(value)
            continue
        if key not in known:
            raise FormatError(f"unknown config key {key!r}", i, path)
        try:
            out[key] = _convert(key, value)
        except ValueError as exc:
            raise FormatError(str(exc), i, path) from None
    return out


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    values: dict[str, object] = {}
    if args.config:
        values.update(read_config_file(args.config))
    for flag, name in _FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            values[name] = v
    if args.budget is not None:
        values["budget"] = args.budget
    if args.out is not None:
        values["out"] = args.out
    budget = values.pop("budget", None)
    if budget is not None:
        key = "vanilla_budget" if str(values.get("mode", "pbcs")).startswith("vanilla") else "phase2_budget"
        values[key] = budget
    return ExperimentConfig(**values)  # type: ignore[arg-type]


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--size", type=int, help="maze size N")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--gamma", type=float, help="discount factor")
    common.add_argument("--eps", type=float, help="skill ball radius")
    common.add_argument("--budget", type=int,
                        help="training budget in steps (vanilla budget or phase-2 budget, by mode)")
    common.add_argument("--out", help="run directory")
    common.add_argument("--config", help="key=value config file; flags override it")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="pbcs", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("explore", parents=[common], help="phase 1: find a trajectory to the target")
    sub.add_parser("robustify", parents=[common], help="phase 2: turn a saved trajectory into skills")
    sub.add_parser("run", parents=[common], help="run one experiment cell end to end")
    sub.add_parser("evaluate", parents=[common], help="re-evaluate a saved skill chain")
    sub.add_parser("render", parents=[common], help="write an SVG of a run directory")
    return parser


def _need_out(cfg: ExperimentConfig) -> Path:
    if not cfg.out:
        raise UsageError("--out is required")
    return Path(cfg.out)


def _load(out: Path) -> artifacts.Artifacts:
    if not (out / artifacts.MANIFEST_FILE).exists():
        raise UsageError(f"{out} holds no saved run (missing {artifacts.MANIFEST_FILE})")
    return artifacts.load_artifacts(out)


def cmd_run(cfg: ExperimentConfig) -> int:
    cell = run_cell(cfg)
    if cfg.out:
        artifacts.save_cell(cfg.out, cell)
    print(cell.report.to_text(), end="")
    return EXIT_OK if cell.report.success else EXIT_FAILED


def cmd_explore(cfg: ExperimentConfig) -> int:
    out = _need_out(cfg)
    spec = make_maze(cfg)
    counter = new_counter(cfg)
    report = RunReport(cfg.mode, cfg.size, cfg.seed)
    try:
        traj = explore_phase(cfg, spec, counter)
    except ExplorationFailure as exc:
        report.failure = f"phase 1: {exc}"
        traj = None
    report.steps, report.steps_total = dict(counter.buckets), counter.total
    if traj is not None:
        report.trajectory_length = len(traj)
    artifacts.save_artifacts(out, spec, report, traj)
    print(report.to_text(), end="")
    return EXIT_OK if traj is not None else EXIT_FAILED


def cmd_robustify(cfg: ExperimentConfig) -> int:
    out = _need_out(cfg)
    art = _load(out)
    if art.spec is None or art.trajectory is None:
        raise UsageError(f"{out} has no trajectory; run 'explore' first")
    if cfg.mode.startswith("vanilla"):
        raise UsageError("robustify needs --mode pbcs or pbcs-nochain")
    report = art.report or RunReport(cfg.mode, art.spec.size, cfg.seed)
    report.mode = cfg.mode
    counter = new_counter(cfg)
    for k, v in report.steps.items():
        counter.buckets[k] = v
    chain, failure = robustify_phase(cfg, art.spec, art.trajectory, counter)
    report.skills = [] if chain is None else [SkillRecord(s.K, s.T, s.steps, s.p) for s in chain.skills]
    report.failure = failure
    report.steps, report.steps_total = dict(counter.buckets), counter.total
    artifacts.save_artifacts(out, art.spec, report, art.trajectory, chain)
    print(report.to_text(), end="")
    return EXIT_FAILED if failure else EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    out = _need_out(cfg)
    art = _load(out)
    if art.spec is None or art.chain is None:
        raise UsageError(f"{out} has no skill chain to evaluate")
    if art.trajectory is None:
        raise UsageError(f"{out} has no trajectory")
    if art.chain.skills[0].K != 0:
        print(f"chain starts at trajectory index {art.chain.skills[0].K}, not 0")
        return EXIT_FAILED
    counter = new_counter(cfg)
    successes, trace = evaluate_phase(cfg, art.spec, art.chain, counter)
    report = art.report or RunReport(cfg.mode, art.spec.size, cfg.seed)
    for k, v in counter.buckets.items():
        report.steps[k] = report.steps.get(k, 0) + v
    report.steps_total = sum(report.steps.values())
    report.eval_successes, report.eval_episodes = successes, cfg.eval_episodes
    report.success = successes == cfg.eval_episodes
    report.failure = "" if report.success else (
        f"chain execution succeeded in {successes}/{cfg.eval_episodes} episodes")
    artifacts.save_artifacts(out, art.spec, report, art.trajectory, art.chain, trace)
    print(f"successes={successes}/{cfg.eval_episodes}")
    return EXIT_OK if report.success else EXIT_FAILED


def cmd_render(cfg: ExperimentConfig) -> int:
    out = _need_out(cfg)
    if (out / artifacts.MANIFEST_FILE).exists():
        art = artifacts.load_artifacts(out)
        spec = art.spec or make_maze(cfg)
        svg = render_svg(spec, None if art.trajectory is None else art.trajectory.states, art.chain,
                         None if art.trace is None else [art.trace])
    else:
        out.mkdir(parents=True, exist_ok=True)
        svg = render_svg(make_maze(cfg))
    path = out / artifacts.SVG_FILE
    path.write_text(svg, encoding="utf-8")
    print(path)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "explore": cmd_explore, "robustify": cmd_robustify,
            "evaluate": cmd_evaluate, "render": cmd_render}


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(asctime)s %(name)s %(message)s")
        try:
            cfg = build_config(args)
        except (ValueError, TypeError) as exc:
            raise UsageError(str(exc)) from None
        logging.getLogger(__name__).debug("config %s", asdict(cfg))
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"pbcs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"pbcs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def cli(args: Sequence[str] | None = None) -> int:
    return main(args)


if __name__ == "__main__":
    sys.exit(main())
