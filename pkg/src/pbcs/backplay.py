"""Deterministic Backplay with potential-based shaping.

A skill is trained to drive the point mass from anywhere in the ball
B(tau_K, eps) into the ball B(tau_T, eps). The environment reward is replaced
by the shaped reward Phi(s') - Phi(s) with Phi(s) = 1 / |s - tau_T|, plus a
bonus of 10 (ending the episode) when s' enters the target ball. K starts at
T - 1 and walks backwards along the trajectory while the skill keeps
reaching a 100% success rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .agents import AgentConfig, DdpgAgent, Policy, make_agent
from .maze_env import MazeSpec, step, step_batch

POTENTIAL_FLOOR = 1e-6
REACH_BONUS = 10.0


class BackplayFailure(RuntimeError):
    def __init__(self, T: int, message: str | None = None):
        super().__init__(message or f"no skill reached 100% success for any start index below T={T}")
        self.T = T


class StepCounter:
    """Global environment-step accounting, split into named buckets."""

    def __init__(self):
        self.buckets: dict[str, int] = {}

    def add(self, bucket: str, n: int = 1) -> None:
        self.buckets[bucket] = self.buckets.get(bucket, 0) + int(n)

    @property
    def total(self) -> int:
        return sum(self.buckets.values())

    def __getitem__(self, bucket: str) -> int:
        return self.buckets.get(bucket, 0)


@dataclass(frozen=True)
class ShapingTarget:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("shaping radius must be positive")


def potential(s: Sequence[float], target: ShapingTarget) -> float:
    d = math.hypot(s[0] - target.center[0], s[1] - target.center[1])
    return 1.0 / max(d, POTENTIAL_FLOOR)


def shaped_reward(s: Sequence[float], s_next: Sequence[float],
                  target: ShapingTarget) -> tuple[float, bool]:
    """(reward, reached): the bonus if s_next is inside the closed ball, else Phi(s') - Phi(s)."""
    d_next = math.hypot(s_next[0] - target.center[0], s_next[1] - target.center[1])
    if d_next <= target.radius:
        return REACH_BONUS, True
    return 1.0 / max(d_next, POTENTIAL_FLOOR) - potential(s, target), False


def sample_ball(center: Sequence[float], eps: float, rng: np.random.Generator,
                n: int | None = None) -> np.ndarray:
    """Uniform sample(s) from the closed disc of radius eps; walls are not rejected."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    k = 1 if n is None else n
    r = eps * np.sqrt(rng.random(k))
    theta = rng.uniform(0.0, 2.0 * np.pi, k)
    pts = np.column_stack([center[0] + r * np.cos(theta), center[1] + r * np.sin(theta)])
    return pts[0] if n is None else pts


@dataclass
class BackplayConfig:
    alpha: int = 10
    beta: int = 50
    eps: float = 0.1
    # None: 2 * (T - K) + 50 steps per episode
    max_steps: int | None = None
    eval_noise: bool = False
    agent_kind: str = "ddpg"
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        if self.alpha < 1 or self.beta < 1:
            raise ValueError("alpha and beta must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def episode_steps(self, K: int, T: int) -> int:
        return self.max_steps if self.max_steps is not None else 2 * (T - K) + 50


def train_epoch(agent: DdpgAgent, tau_K: Sequence[float], tau_T: Sequence[float],
                config: BackplayConfig, spec: MazeSpec, rng: np.random.Generator,
                max_steps: int, counter: StepCounter | None = None) -> float:
    """Run beta noisy shaped-reward episodes, training after every step; returns successes / beta."""
    target = ShapingTarget((float(tau_T[0]), float(tau_T[1])), config.eps)
    noise = agent.config.noise
    successes = 0
    steps = 0
    for _ in range(config.beta):
        x, y = sample_ball(tau_K, config.eps, rng)
        s = (float(x), float(y))
        if math.hypot(s[0] - target.center[0], s[1] - target.center[1]) <= target.radius:
            successes += 1
            continue
        for _ in range(max_steps):
            a = agent.act(s, noise)
            s_next = step(s, a, spec).next_state
            steps += 1
            r, reached = shaped_reward(s, s_next, target)
            agent.observe(s, a, r, s_next, reached)
            agent.train_step()
            s = s_next
            if reached:
                successes += 1
                break
    if counter is not None:
        counter.add("train", steps)
    return successes / config.beta


def rollout_batch(policy: Callable[[np.ndarray], np.ndarray], starts: np.ndarray,
                  goal: Sequence[float], eps: float, spec: MazeSpec, max_steps: int,
                  noise: float = 0.0, rng: np.random.Generator | None = None) -> tuple[np.ndarray, int]:
    """Roll out all starts in lock-step until each enters B(goal, eps) or runs out of steps.

    Returns (reached flags, environment steps taken).
    """
    s = np.array(starts, dtype=np.float64)
    g = np.asarray(goal, dtype=np.float64)
    reached = np.hypot(*(s - g).T) <= eps
    active = np.flatnonzero(~reached)
    steps = 0
    for _ in range(max_steps):
        if active.size == 0:
            break
        cur = s[active]
        a = policy(cur)
        if noise > 0:
            a = a + rng.normal(0.0, noise, size=a.shape)
        nxt, _, _, _ = step_batch(cur, a, spec)
        steps += active.size
        s[active] = nxt
        hit = np.hypot(*(nxt - g).T) <= eps
        reached[active[hit]] = True
        active = active[~hit]
    return reached, steps


def evaluate_skill(policy: Callable[[np.ndarray], np.ndarray], tau_K: Sequence[float],
                   tau_T: Sequence[float], config: BackplayConfig, spec: MazeSpec,
                   rng: np.random.Generator, max_steps: int,
                   counter: StepCounter | None = None, noise: float = 0.0) -> float:
    """Success fraction of beta noise-free episodes from B(tau_K) to B(tau_T); no learning."""
    starts = sample_ball(tau_K, config.eps, rng, config.beta)
    reached, steps = rollout_batch(policy, starts, tau_T, config.eps, spec, max_steps,
                                   noise=noise, rng=rng)
    if counter is not None:
        counter.add("eval", steps)
    return int(reached.sum()) / config.beta


@dataclass
class KRecord:
    """What happened at one start index during a backplay call."""

    K: int
    p_before: float
    epochs: int
    p_after: float
    saved: bool
    steps: int


@dataclass
class SkillCandidate:
    policy: Policy
    K: int
    T: int
    p: float
    history: list[KRecord] = field(default_factory=list)
    steps: int = 0

    def __post_init__(self):
        if not 0 <= self.K < self.T:
            raise ValueError(f"invalid skill indices K={self.K}, T={self.T}")


def backplay(states: np.ndarray, config: BackplayConfig, spec: MazeSpec, seed: int = 0,
             counter: StepCounter | None = None,
             log: Callable[[str], None] | None = None) -> SkillCandidate:
    """Train one skill ending at tau_T = states[-1], starting as far back as possible.

    ``states`` is the trajectory prefix tau_0..tau_T. Returns the last policy
    that scored 100% together with its start index K_s.
    """
    states = np.asarray(states, dtype=np.float64)
    T = len(states) - 1
    if T < 1:
        raise ValueError("backplay needs at least two trajectory states")
    counter = counter if counter is not None else StepCounter()
    start_total = counter.total
    agent_ss, train_ss, eval_ss = np.random.SeedSequence([seed, T]).spawn(3)
    agent = make_agent(config.agent_kind, config.agent, origin=states[T],
                       seed=int(agent_ss.generate_state(1)[0]))
    train_rng = np.random.default_rng(train_ss)
    eval_rng = np.random.default_rng(eval_ss)
    tau_T = states[T]
    eval_noise = agent.config.noise if config.eval_noise else 0.0

    saved: SkillCandidate | None = None
    history: list[KRecord] = []

    def measure(K: int) -> float:
        return evaluate_skill(agent.act_batch, states[K], tau_T, config, spec, eval_rng,
                              config.episode_steps(K, T), counter, noise=eval_noise)

    K = T - 1
    while K >= 0:
        before = counter.total
        max_steps = config.episode_steps(K, T)
        p = measure(K)
        p_before, epochs = p, 0
        if p < 1.0:
            best, stale = -1.0, 0
            while stale < config.alpha:
                p_train = train_epoch(agent, states[K], tau_T, config, spec, train_rng, max_steps, counter)
                epochs += 1
                if p_train > best:
                    best, stale = p_train, 0
                else:
                    stale += 1
            p = measure(K)
        record = KRecord(K, p_before, epochs, p, p == 1.0, counter.total - before)
        history.append(record)
        if log is not None:
            log(f"T={T} K={K} p_before={p_before:.2f} epochs={epochs} p={p:.2f} "
                f"steps={record.steps} total={counter.total}")
        if p == 1.0:
            saved = SkillCandidate(agent.policy(), K, T, p)
        elif p == 0.0 and saved is not None:
            break
        K -= 1
    if saved is None:
        raise BackplayFailure(T)
    saved.history = history
    saved.steps = counter.total - start_total
    return saved
