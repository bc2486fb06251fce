"""Skill chaining: repeated Backplay on shrinking trajectory prefixes.

``build_chain`` calls Backplay on tau_0..tau_T, records the returned skill,
sets T to the skill's start index and repeats until T reaches 0. The skills
come out last-first and are reversed into execution order. ``execute_chain``
runs them as a switching controller: skill i is active until the state
enters the activation ball of a later skill, and the index never moves back.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .agents import Policy
from .backplay import (BackplayConfig, BackplayFailure, KRecord, StepCounter, backplay,
                       sample_ball)
from .maze_env import FormatError, MazeSpec, parse_header, step_batch


class ChainConstructionFailure(RuntimeError):
    def __init__(self, T: int, skills_built: int):
        super().__init__(f"backplay could not save any skill ending at trajectory index {T} "
                         f"({skills_built} skills built so far)")
        self.T = T
        self.skills_built = skills_built


@dataclass
class Skill:
    policy: Policy
    activation_center: tuple[float, float]
    target_center: tuple[float, float]
    eps: float
    K: int
    T: int
    p: float = 1.0
    history: list[KRecord] = field(default_factory=list, repr=False)
    steps: int = 0

    def __post_init__(self):
        if not self.K < self.T:
            raise ValueError(f"skill start index {self.K} must precede its target index {self.T}")


@dataclass
class SkillChain:
    skills: list[Skill]
    eps: float
    trajectory: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.skills)

    @property
    def activation_centers(self) -> np.ndarray:
        return np.array([sk.activation_center for sk in self.skills], dtype=np.float64).reshape(-1, 2)

    @property
    def final_target(self) -> tuple[float, float]:
        return self.skills[-1].target_center

    def check_contiguous(self) -> None:
        for a, b in zip(self.skills, self.skills[1:]):
            if a.T != b.K:
                raise ValueError(f"skill ending at {a.T} is followed by a skill starting at {b.K}")


def build_chain(states: np.ndarray, config: BackplayConfig, spec: MazeSpec, seed: int = 0,
                counter: StepCounter | None = None,
                log: Callable[[str], None] | None = None,
                on_skill: Callable[[Skill], None] | None = None) -> SkillChain:
    """Backplay from the end of the trajectory until some skill starts at index 0."""
    states = np.asarray(states, dtype=np.float64)
    if len(states) < 2:
        raise ValueError("a chain needs a trajectory of at least two states")
    counter = counter if counter is not None else StepCounter()
    built: list[Skill] = []
    T = len(states) - 1
    while T > 0:
        try:
            cand = backplay(states[:T + 1], config, spec, seed=seed, counter=counter, log=log)
        except BackplayFailure:
            raise ChainConstructionFailure(T, len(built)) from None
        skill = Skill(cand.policy, tuple(states[cand.K]), tuple(states[T]), config.eps,
                      cand.K, T, cand.p, cand.history, cand.steps)
        built.append(skill)
        if on_skill is not None:
            on_skill(skill)
        T = cand.K
    built.reverse()
    return SkillChain(built, config.eps, states)


def _advance(active: np.ndarray, states: np.ndarray, centers: np.ndarray, eps: float) -> np.ndarray:
    # highest-indexed activation ball containing each state; never move backwards
    d = np.hypot(states[:, None, 0] - centers[None, :, 0], states[:, None, 1] - centers[None, :, 1])
    idx = np.where(d <= eps, np.arange(len(centers))[None, :], -1).max(axis=1)
    return np.maximum(active, idx)


def run_chain_batch(chain: SkillChain, spec: MazeSpec, starts: np.ndarray, step_budget: int,
                    record: bool = False):
    """Execute the chain from every start in lock-step.

    Returns (success flags, steps taken, traces or None, active-index traces or None).
    """
    s = np.array(starts, dtype=np.float64).reshape(-1, 2)
    n = len(s)
    centers = chain.activation_centers
    goal = np.asarray(chain.final_target)
    eps = chain.eps
    active_idx = _advance(np.zeros(n, dtype=np.int64), s, centers, eps)
    done = np.hypot(*(s - goal).T) <= eps
    traces = [[tuple(p)] for p in s] if record else None
    index_traces = [[int(i)] for i in active_idx] if record else None
    steps = 0
    live = np.flatnonzero(~done)
    for _ in range(step_budget):
        if live.size == 0:
            break
        cur = s[live]
        actions = np.empty_like(cur)
        for k in np.unique(active_idx[live]):
            rows = active_idx[live] == k
            actions[rows] = chain.skills[k].policy(cur[rows])
        nxt, _, terminal, _ = step_batch(cur, actions, spec)
        steps += live.size
        s[live] = nxt
        active_idx[live] = _advance(active_idx[live], nxt, centers, eps)
        finished = terminal | (np.hypot(*(nxt - goal).T) <= eps)
        if record:
            for j, row in enumerate(live):
                traces[row].append(tuple(nxt[j]))
                index_traces[row].append(int(active_idx[row]))
        done[live[finished]] = True
        live = live[~finished]
    return done, steps, traces, index_traces


def execute_chain(chain: SkillChain, spec: MazeSpec, start: Sequence[float],
                  step_budget: int | None = None) -> tuple[bool, list[tuple[float, float]]]:
    """Run the switching controller once from ``start``; returns (success, visited states)."""
    if step_budget is None:
        step_budget = default_budget(chain)
    done, _, traces, _ = run_chain_batch(chain, spec, np.asarray(start)[None, :], step_budget, record=True)
    return bool(done[0]), traces[0]


def default_budget(chain: SkillChain) -> int:
    if chain.trajectory is not None:
        return 10 * len(chain.trajectory)
    return 10 * (chain.skills[-1].T + 1)


def evaluate_chain(chain: SkillChain, spec: MazeSpec, episodes: int, rng: np.random.Generator,
                   step_budget: int | None = None,
                   counter: StepCounter | None = None) -> tuple[int, int]:
    """Successes out of ``episodes`` runs started uniformly in the first activation ball."""
    if step_budget is None:
        step_budget = default_budget(chain)
    first = chain.skills[0].activation_center
    starts = sample_ball(first, chain.eps, rng, episodes)
    done, steps, _, _ = run_chain_batch(chain, spec, starts, step_budget)
    if counter is not None:
        counter.add("final_eval", steps)
    return int(done.sum()), steps


def _f(v: float) -> str:
    return format(float(v), ".17g")


def skill_to_lines(skill: Skill) -> list[str]:
    ax, ay = skill.activation_center
    tx, ty = skill.target_center
    return ([f"skill v1 K={skill.K} T={skill.T} eps={_f(skill.eps)}",
             f"activation {_f(ax)} {_f(ay)}",
             f"target {_f(tx)} {_f(ty)}"]
            + nn.mlp_to_lines(skill.policy.actor))


def chain_to_text(chain: SkillChain) -> str:
    lines = [f"chain v1 n={len(chain)} eps={_f(chain.eps)}"]
    for sk in chain.skills:
        lines += skill_to_lines(sk)
    return "\n".join(lines) + "\n"


def chain_from_text(text: str, path: str | Path | None = None) -> SkillChain:
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty chain file", 1, path)
    head = parse_header(lines[0], "chain", 1, path)
    n, eps = int(head["n"]), float(head["eps"])
    skills = []
    at = 1
    for _ in range(n):
        if at + 3 > len(lines):
            raise FormatError(f"truncated: expected {n} skills, found {len(skills)}", at + 1, path)
        sh = parse_header(lines[at], "skill", at + 1, path)
        centers = []
        for offset, tag in ((1, "activation"), (2, "target")):
            parts = lines[at + offset].split()
            if len(parts) != 3 or parts[0] != tag:
                raise FormatError(f"expected '{tag} <x> <y>', got {lines[at + offset]!r}", at + offset + 1, path)
            try:
                centers.append((float(parts[1]), float(parts[2])))
            except ValueError as exc:
                raise FormatError(str(exc), at + offset + 1, path) from None
        actor, used = nn.mlp_from_lines(lines[at + 3:], start=at + 4, path=path)
        policy = Policy(actor, np.asarray(centers[1], dtype=np.float64))
        skills.append(Skill(policy, centers[0], centers[1], float(sh["eps"]), int(sh["K"]), int(sh["T"])))
        at += 3 + used
    return SkillChain(skills, eps)
