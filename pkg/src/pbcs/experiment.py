"""Experiment cells: vanilla DDPG/TD3 baselines, PBCS without chaining, full PBCS.

Every environment step taken in any phase goes through one ``StepCounter``.
A root seed fans out to named sub-seeds so that each component is
reproducible on its own.
"""

from __future__ import annotations

import logging
import time
import zlib
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .agents import AgentConfig, make_agent
from .backplay import (BackplayConfig, BackplayFailure, StepCounter, backplay, evaluate_skill,
                       train_epoch)
from .explore import ExplorationFailure, Trajectory, run_phase1
from .maze_env import START_STATE, MazeSpec, generate_maze, open_room, step, step_batch
from .skillchain import (ChainConstructionFailure, Skill, SkillChain, build_chain, evaluate_chain,
                         execute_chain)

log = logging.getLogger(__name__)

MODES = ("vanilla-ddpg", "vanilla-td3", "pbcs-nochain", "pbcs")
VANILLA_SUCCESS_RATE = 0.9


class BudgetExhausted(RuntimeError):
    pass


class BudgetedCounter(StepCounter):
    """StepCounter that raises once the buckets in ``limited`` exceed ``limit`` steps."""

    def __init__(self, limit: int | None = None, limited: tuple[str, ...] = ()):
        super().__init__()
        self.limit = limit
        self.limited = limited

    def add(self, bucket: str, n: int = 1) -> None:
        super().add(bucket, n)
        if self.limit is not None and bucket in self.limited:
            used = sum(self[b] for b in self.limited)
            if used > self.limit:
                raise BudgetExhausted(f"{'+'.join(self.limited)} steps {used} exceed budget {self.limit}")


def derive_seed(root: int, name: str) -> int:
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class ExperimentConfig:
    size: int = 2
    seed: int = 0
    mode: str = "pbcs"
    # None: 0.99 for the vanilla baselines, 0.9 for backplay training
    gamma: float | None = None
    eps: float = 0.1
    alpha: int = 10
    beta: int = 50
    phase1_budget: int = 10_000_000
    phase2_budget: int = 25_000_000
    vanilla_budget: int = 1_000_000
    eval_episodes: int = 50
    eval_interval: int = 10_000
    # None: 100 * size steps per vanilla episode
    vanilla_episode_steps: int | None = None
    out: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if min(self.phase1_budget, self.phase2_budget, self.vanilla_budget) <= 0:
            raise ValueError("budgets must be positive")
        if self.size < 1:
            raise ValueError("maze size must be >= 1")
        if self.gamma is None:
            self.gamma = 0.99 if self.mode.startswith("vanilla") else 0.9
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def episode_steps(self) -> int:
        return self.vanilla_episode_steps or 100 * self.size

    def backplay_config(self) -> BackplayConfig:
        return BackplayConfig(alpha=self.alpha, beta=self.beta, eps=self.eps,
                              agent=AgentConfig(gamma=self.gamma))

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: f.type for f in fields(cls)}


@dataclass
class SkillRecord:
    K: int
    T: int
    steps: int
    p: float


@dataclass
class RunReport:
    mode: str
    size: int
    seed: int
    success: bool = False
    steps_total: int = 0
    steps: dict[str, int] = field(default_factory=dict)
    trajectory_length: int = 0
    eval_successes: int = 0
    eval_episodes: int = 0
    skills: list[SkillRecord] = field(default_factory=list)
    checkpoints: list[tuple[int, float]] = field(default_factory=list)
    failure: str = ""
    wall_clock: float = 0.0

    def without_timing(self) -> dict:
        d = dict(self.__dict__)
        d.pop("wall_clock")
        return d

    def to_text(self) -> str:
        lines = [f"mode={self.mode}", f"size={self.size}", f"seed={self.seed}",
                 f"success={'true' if self.success else 'false'}",
                 f"steps_total={self.steps_total}"]
        lines += [f"steps_{k}={v}" for k, v in sorted(self.steps.items())]
        lines += [f"trajectory_length={self.trajectory_length}",
                  f"eval_successes={self.eval_successes}", f"eval_episodes={self.eval_episodes}",
                  f"n_skills={len(self.skills)}"]
        for i, sk in enumerate(self.skills):
            lines.append(f"skill.{i}=K:{sk.K} T:{sk.T} steps:{sk.steps} p:{format(sk.p, '.17g')}")
        for i, (at, rate) in enumerate(self.checkpoints):
            lines.append(f"checkpoint.{i}=steps:{at} success_rate:{format(rate, '.17g')}")
        lines += [f"failure={self.failure}", f"wall_clock={self.wall_clock:.3f}"]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> RunReport:
        kv: dict[str, str] = {}
        for ln in text.splitlines():
            if ln.strip() and not ln.startswith("#"):
                key, _, value = ln.partition("=")
                kv[key.strip()] = value.strip()
        report = cls(kv["mode"], int(kv["size"]), int(kv["seed"]), kv["success"] == "true",
                     int(kv["steps_total"]))
        report.steps = {k[6:]: int(v) for k, v in kv.items() if k.startswith("steps_") and k != "steps_total"}
        report.trajectory_length = int(kv.get("trajectory_length", 0))
        report.eval_successes = int(kv.get("eval_successes", 0))
        report.eval_episodes = int(kv.get("eval_episodes", 0))
        for i in range(int(kv.get("n_skills", 0))):
            parts = dict(p.split(":", 1) for p in kv[f"skill.{i}"].split())
            report.skills.append(SkillRecord(int(parts["K"]), int(parts["T"]), int(parts["steps"]),
                                             float(parts["p"])))
        i = 0
        while f"checkpoint.{i}" in kv:
            parts = dict(p.split(":", 1) for p in kv[f"checkpoint.{i}"].split())
            report.checkpoints.append((int(parts["steps"]), float(parts["success_rate"])))
            i += 1
        report.failure = kv.get("failure", "")
        report.wall_clock = float(kv.get("wall_clock", 0.0))
        return report


@dataclass
class CellResult:
    report: RunReport
    spec: MazeSpec
    trajectory: Trajectory | None = None
    chain: SkillChain | None = None
    trace: list[tuple[float, float]] | None = None


def make_maze(config: ExperimentConfig) -> MazeSpec:
    return generate_maze(config.size, derive_seed(config.seed, "maze"))


def evaluate_policy_env(policy: Callable[[np.ndarray], np.ndarray], spec: MazeSpec, episodes: int,
                        max_steps: int, start=START_STATE) -> tuple[np.ndarray, int]:
    """Noise-free episodes from ``start`` on the true environment; success = reward +1."""
    s = np.tile(np.asarray(start, dtype=np.float64), (episodes, 1))
    done = np.zeros(episodes, dtype=bool)
    live = np.arange(episodes)
    steps = 0
    for _ in range(max_steps):
        if live.size == 0:
            break
        nxt, _, terminal, _ = step_batch(s[live], policy(s[live]), spec)
        steps += live.size
        s[live] = nxt
        done[live[terminal]] = True
        live = live[~terminal]
    return done, steps


def _run_vanilla(config: ExperimentConfig, spec: MazeSpec, report: RunReport,
                 counter: StepCounter) -> CellResult:
    kind = config.mode.split("-", 1)[1]
    agent = make_agent(kind, AgentConfig(gamma=config.gamma), origin=spec.target_center,
                       seed=derive_seed(config.seed, "agent"))
    noise = agent.config.noise
    s = START_STATE
    ep_steps = 0
    for t in range(1, config.vanilla_budget + 1):
        a = agent.act(s, noise)
        res = step(s, a, spec)
        counter.add("train")
        agent.observe(s, a, res.reward, res.next_state, res.terminal)
        agent.train_step()
        s = res.next_state
        ep_steps += 1
        if res.terminal or ep_steps >= config.episode_steps:
            s, ep_steps = START_STATE, 0
        if t % config.eval_interval == 0 or t == config.vanilla_budget:
            done, steps = evaluate_policy_env(agent.act_batch, spec, config.eval_episodes,
                                              config.episode_steps)
            counter.add("final_eval", steps)
            rate = float(done.mean())
            report.checkpoints.append((t, rate))
            log.info("%s N=%d step %d: success rate %.2f", config.mode, config.size, t, rate)
            if rate >= VANILLA_SUCCESS_RATE:
                report.success = True
                report.eval_successes = int(done.sum())
                report.eval_episodes = config.eval_episodes
                break
    if not report.success:
        report.failure = "no checkpoint reached the success threshold"
        report.eval_successes = int(round(report.checkpoints[-1][1] * config.eval_episodes))
        report.eval_episodes = config.eval_episodes
    _, trace = _vanilla_trace(agent.act_batch, spec, config.episode_steps)
    counter.add("final_eval", len(trace) - 1)
    return CellResult(report, spec, trace=trace)


def _vanilla_trace(policy, spec: MazeSpec, max_steps: int):
    s = np.array([START_STATE], dtype=np.float64)
    trace = [START_STATE]
    for _ in range(max_steps):
        s, _, terminal, _ = step_batch(s, policy(s), spec)
        trace.append((float(s[0, 0]), float(s[0, 1])))
        if terminal[0]:
            return True, trace
    return False, trace


def explore_phase(config: ExperimentConfig, spec: MazeSpec, counter: StepCounter) -> Trajectory:
    """Phase 1; raises ExplorationFailure after charging its steps to ``counter``."""
    try:
        p1 = run_phase1(spec, START_STATE, config.phase1_budget, seed=derive_seed(config.seed, "phase1"))
    except ExplorationFailure as exc:
        counter.add("phase1", exc.steps)
        raise
    counter.add("phase1", p1.steps)
    log.info("phase 1 found a %d-state trajectory in %d steps", len(p1.trajectory), p1.steps)
    return p1.trajectory


def robustify_phase(config: ExperimentConfig, spec: MazeSpec, traj: Trajectory,
                    counter: StepCounter) -> tuple[SkillChain | None, str]:
    """Phase 2: a full chain (pbcs) or one backplay call (pbcs-nochain).

    Returns (chain, failure message). pbcs-nochain returns its single skill as a
    chain even when it failed to reach index 0, so it can still be inspected.
    """
    bcfg = config.backplay_config()
    seed = derive_seed(config.seed, "phase2")
    try:
        if config.mode != "pbcs-nochain":
            chain = build_chain(traj.states, bcfg, spec, seed=seed, counter=counter, log=log.debug,
                                on_skill=lambda sk: log.info("skill K=%d T=%d (%d steps, total %d)",
                                                             sk.K, sk.T, sk.steps, counter.total))
            return chain, ""
        cand = backplay(traj.states, bcfg, spec, seed=seed, counter=counter, log=log.debug)
    except (BackplayFailure, ChainConstructionFailure, BudgetExhausted) as exc:
        return None, f"phase 2: {exc}"
    skill = Skill(cand.policy, tuple(traj.states[cand.K]), tuple(traj.states[cand.T]), bcfg.eps,
                  cand.K, cand.T, cand.p, cand.history, cand.steps)
    chain = SkillChain([skill], bcfg.eps, traj.states)
    if cand.K > 0:
        return chain, f"backplay stopped at K_s={cand.K} > 0 without skill chaining"
    return chain, ""


def evaluate_phase(config: ExperimentConfig, spec: MazeSpec, chain: SkillChain,
                   counter: StepCounter) -> tuple[int, list[tuple[float, float]]]:
    """Chain-execution successes over the evaluation episodes, plus one trace from tau_0."""
    rng = np.random.default_rng(derive_seed(config.seed, "evaluation"))
    successes, _ = evaluate_chain(chain, spec, config.eval_episodes, rng, counter=counter)
    _, trace = execute_chain(chain, spec, chain.skills[0].activation_center)
    counter.add("final_eval", len(trace) - 1)
    return successes, trace


def _run_pbcs(config: ExperimentConfig, spec: MazeSpec, report: RunReport,
              counter: StepCounter) -> CellResult:
    result = CellResult(report, spec)
    try:
        traj = explore_phase(config, spec, counter)
    except ExplorationFailure as exc:
        report.failure = f"phase 1: {exc}"
        return result
    result.trajectory = traj
    report.trajectory_length = len(traj)

    chain, failure = robustify_phase(config, spec, traj, counter)
    result.chain = chain
    if chain is not None:
        report.skills = [SkillRecord(sk.K, sk.T, sk.steps, sk.p) for sk in chain.skills]
    if failure:
        report.failure = failure
        return result

    successes, trace = evaluate_phase(config, spec, chain, counter)
    result.trace = trace
    report.eval_successes = successes
    report.eval_episodes = config.eval_episodes
    report.success = successes == config.eval_episodes
    if not report.success:
        report.failure = f"chain execution succeeded in {successes}/{config.eval_episodes} episodes"
    return result


def new_counter(config: ExperimentConfig) -> StepCounter:
    if config.mode.startswith("vanilla"):
        return StepCounter()
    return BudgetedCounter(config.phase2_budget, ("train", "eval"))


def run_cell(config: ExperimentConfig) -> CellResult:
    """Run one experiment cell and keep its artifacts (maze, trajectory, chain, trace)."""
    t0 = time.perf_counter()
    spec = make_maze(config)
    report = RunReport(config.mode, config.size, config.seed)
    counter = new_counter(config)
    if config.mode.startswith("vanilla"):
        result = _run_vanilla(config, spec, report, counter)
    else:
        result = _run_pbcs(config, spec, report, counter)
    report.steps = dict(counter.buckets)
    report.steps_total = counter.total
    report.wall_clock = time.perf_counter() - t0
    return result


def run_experiment(config: ExperimentConfig) -> RunReport:
    return run_cell(config).report


@dataclass
class SanityResult:
    success_rate: float
    steps: int
    epochs: int


def ddpg_sanity(seed: int = 0, budget: int = 200_000, distance: float = 1.0,
                threshold: float = VANILLA_SUCCESS_RATE, kind: str = "ddpg") -> SanityResult:
    """Shaped-reward DDPG in an empty 2x2 room, start ball ``distance`` away from the goal ball.

    Alternates one training epoch with one noise-free evaluation until the
    evaluation success rate reaches ``threshold`` or ``budget`` steps are used.
    """
    spec = open_room(2)
    start = np.array([1.0 - distance / 2, 1.0])
    goal = np.array([1.0 + distance / 2, 1.0])
    cfg = BackplayConfig()
    agent = make_agent(kind, cfg.agent, origin=goal, seed=derive_seed(seed, "sanity-agent"))
    train_rng = np.random.default_rng(derive_seed(seed, "sanity-train"))
    eval_rng = np.random.default_rng(derive_seed(seed, "sanity-eval"))
    max_steps = int(np.ceil(2 * distance / 0.1)) + 50
    counter = StepCounter()
    p, epochs = 0.0, 0
    while counter.total < budget:
        train_epoch(agent, start, goal, cfg, spec, train_rng, max_steps, counter)
        epochs += 1
        p = evaluate_skill(agent.act_batch, start, goal, cfg, spec, eval_rng, max_steps, counter)
        if p >= threshold:
            break
    return SanityResult(p, counter.total, epochs)
