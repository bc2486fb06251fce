"""Off-policy continuous-control agents on top of ``pbcs.nn``: DDPG and TD3.

Both agents see positions relative to a fixed ``origin`` (the skill's target
state, or the maze target for baselines); the critic sees actions rescaled to
[-1, 1]. Actor outputs are ``0.1 * tanh``, so actions never leave the box.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .maze_env import MAX_ACTION, FormatError, parse_header

# replay row layout: s(2) a(2) r s'(2) terminal
_S, _A, _R, _S2, _D = slice(0, 2), slice(2, 4), 4, slice(5, 7), 7


@dataclass
class AgentConfig:
    gamma: float = 0.99
    noise: float = 0.02
    batch_size: int = 64
    buffer_capacity: int = 1_000_000
    polyak: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    hidden: tuple[int, ...] = (64, 64)
    # TD3
    policy_delay: int = 2
    target_noise: float = 0.02
    target_noise_clip: float = 0.05
    # "dpg" (deterministic policy gradient) or "argmax" (regress onto sampled argmax)
    actor_update: str = "dpg"
    argmax_samples: int = 64
    # network precision; float32 roughly halves the cost of an update
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.actor_update not in ("dpg", "argmax"):
            raise ValueError(f"unknown actor update {self.actor_update!r}")


class ReplayBuffer:
    """Fixed-capacity ring of transitions, sampled uniformly with replacement."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.rng = rng
        self._data = np.empty((0, 8))
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r: float, s_next, terminal: bool) -> None:
        if self._next >= len(self._data):
            self._grow()
        row = self._data[self._next]
        row[0], row[1] = s[0], s[1]
        row[2], row[3] = a[0], a[1]
        row[4] = r
        row[5], row[6] = s_next[0], s_next[1]
        row[7] = 1.0 if terminal else 0.0
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _grow(self) -> None:
        # Allocate lazily so that short-lived per-skill agents stay cheap.
        new = min(self.capacity, max(1024, 2 * len(self._data)))
        data = np.empty((new, 8))
        data[:len(self._data)] = self._data
        self._data = data

    def sample_indices(self, n: int) -> np.ndarray:
        return self.rng.integers(0, self.size, size=n)

    def sample(self, n: int) -> np.ndarray:
        """(n, 8) rows: s_x, s_y, a_x, a_y, r, s'_x, s'_y, terminal."""
        return self._data[self.sample_indices(n)]

    def clear(self) -> None:
        self.size = 0
        self._next = 0


class DdpgAgent:
    kind = "ddpg"

    def __init__(self, config: AgentConfig | None = None, origin: Sequence[float] = (0.0, 0.0),
                 seed: int = 0):
        self.config = config or AgentConfig()
        self.origin = np.asarray(origin, dtype=np.float64).copy()
        init_ss, noise_ss, replay_ss = np.random.SeedSequence(seed).spawn(3)
        init_rng = np.random.default_rng(init_ss)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.buffer = ReplayBuffer(self.config.buffer_capacity, np.random.default_rng(replay_ss))
        h = tuple(self.config.hidden)
        self.dtype = np.dtype(self.config.dtype)
        self.actor = nn.init_mlp((2, *h, 2), init_rng, act="tanh", scale=MAX_ACTION, dtype=self.dtype)
        self.critic = nn.init_mlp((4, *h, 1), init_rng, dtype=self.dtype)
        self._init_extra(init_rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = nn.AdamState.for_params(self.actor, lr=self.config.actor_lr)
        self.critic_opt = nn.AdamState.for_params(self.critic, lr=self.config.critic_lr)
        self.updates = 0

    def _init_extra(self, rng: np.random.Generator) -> None:
        pass

    # -- acting -------------------------------------------------------------

    def obs(self, states: np.ndarray) -> np.ndarray:
        return (np.asarray(states, dtype=np.float64) - self.origin).astype(self.dtype, copy=False)

    def critic_input(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.concatenate([obs, (actions * (1.0 / MAX_ACTION)).astype(obs.dtype, copy=False)], axis=-1)

    def act(self, s: Sequence[float], noise_scale: float = 0.0) -> np.ndarray:
        """Actor output plus N(0, noise_scale^2) per component, clipped to the action box."""
        if noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        a = nn.forward_trace(self.actor, self.obs(s))[-1].astype(np.float64)
        if noise_scale > 0:
            a = a + self.noise_rng.normal(0.0, noise_scale, size=2)
        return np.clip(a, -MAX_ACTION, MAX_ACTION)

    def act_batch(self, states: np.ndarray) -> np.ndarray:
        a = nn.forward_trace(self.actor, self.obs(states))[-1].astype(np.float64)
        return np.clip(a, -MAX_ACTION, MAX_ACTION)

    def policy(self) -> "Policy":
        """Frozen deterministic copy of the current actor."""
        return Policy(self.actor.copy(), self.origin.copy())

    # -- learning -----------------------------------------------------------

    def observe(self, s, a, r: float, s_next, terminal: bool) -> None:
        self.buffer.add(s, a, r, s_next, terminal)

    def train_step(self) -> tuple[float, float] | None:
        """One gradient update from a replay batch; None while the buffer is too small."""
        if len(self.buffer) < self.config.batch_size:
            return None
        return self.update(self.buffer.sample(self.config.batch_size).astype(self.dtype))

    def critic_targets(self, batch: np.ndarray) -> np.ndarray:
        o2 = self.obs(batch[:, _S2])
        a2 = nn.forward_trace(self.actor_target, o2)[-1]
        q2 = nn.forward_trace(self.critic_target, self.critic_input(o2, a2))[-1][:, 0]
        return batch[:, _R] + self.config.gamma * (1.0 - batch[:, _D]) * q2

    def _fit_critic(self, critic: nn.MlpParams, opt: nn.AdamState, x: np.ndarray,
                    y: np.ndarray) -> float:
        trace = nn.forward_trace(critic, x)
        diff = trace[-1][:, 0] - y
        grad, _ = nn.backward(critic, trace, diff[:, None] * (1.0 / len(y)))
        nn.adam_step(critic, grad, opt)
        return 0.5 * float(diff @ diff) / len(y)

    def _actor_dpg_step(self, o: np.ndarray) -> float:
        atrace = nn.forward_trace(self.actor, o)
        pa = atrace[-1]
        ctrace = nn.forward_trace(self.critic, self.critic_input(o, pa))
        n = len(o)
        _, g_in = nn.backward(self.critic, ctrace, np.full((n, 1), -1.0 / n), want_params=False)
        grad, _ = nn.backward(self.actor, atrace, g_in[:, 2:] * (1.0 / MAX_ACTION))
        nn.adam_step(self.actor, grad, self.actor_opt)
        return float(ctrace[-1].mean())

    def update(self, batch: np.ndarray) -> tuple[float, float]:
        """DDPG update on a (B, 8) batch; returns (critic loss, actor objective)."""
        y = self.critic_targets(batch)
        o = self.obs(batch[:, _S])
        loss = self._fit_critic(self.critic, self.critic_opt, self.critic_input(o, batch[:, _A]), y)
        if self.config.actor_update == "argmax":
            objective = self.argmax_actor_update(batch, self.config.argmax_samples)
        else:
            objective = self._actor_dpg_step(o)
        nn.soft_update(self.actor_target, self.actor, self.config.polyak)
        nn.soft_update(self.critic_target, self.critic, self.config.polyak)
        self.updates += 1
        return loss, objective

    def argmax_actions(self, states: np.ndarray, samples_per_state: int) -> np.ndarray:
        """Best of ``samples_per_state`` uniform actions under the live critic, per state.

        Ties go to the first maximal sample.
        """
        if samples_per_state < 1:
            raise ValueError("samples_per_state must be >= 1")
        o = self.obs(states)
        n = len(o)
        cand = self.noise_rng.uniform(-MAX_ACTION, MAX_ACTION, size=(n, samples_per_state, 2)).astype(self.dtype)
        x = self.critic_input(np.repeat(o, samples_per_state, axis=0), cand.reshape(-1, 2))
        q = nn.forward_trace(self.critic, x)[-1].reshape(n, samples_per_state)
        return cand[np.arange(n), np.argmax(q, axis=1)]

    def argmax_actor_update(self, batch: np.ndarray, samples_per_state: int) -> float:
        """Regress the actor onto sampled critic maximisers; returns the regression loss."""
        best = self.argmax_actions(batch[:, _S], samples_per_state)
        o = self.obs(batch[:, _S])
        trace = nn.forward_trace(self.actor, o)
        diff = trace[-1] - best
        grad, _ = nn.backward(self.actor, trace, diff * (1.0 / len(o)))
        nn.adam_step(self.actor, grad, self.actor_opt)
        return 0.5 * float((diff * diff).sum()) / len(o)

    # -- persistence --------------------------------------------------------

    def networks(self) -> dict[str, nn.MlpParams]:
        return {"actor": self.actor, "critic": self.critic,
                "actor_target": self.actor_target, "critic_target": self.critic_target}

    def to_text(self) -> str:
        g = format(self.config.gamma, ".17g")
        ox, oy = (format(float(v), ".17g") for v in self.origin)
        lines = [f"agent v1 kind={self.kind} gamma={g} origin={ox},{oy}"]
        for name, net in self.networks().items():
            lines.append(f"# {name}")
            lines += nn.mlp_to_lines(net)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, config: AgentConfig | None = None,
                  path: str | Path | None = None) -> DdpgAgent:
        lines = text.splitlines()
        head = parse_header(lines[0] if lines else "", "agent", 1, path)
        kind = head.get("kind")
        agent_cls = {"ddpg": DdpgAgent, "td3": Td3Agent}.get(kind or "")
        if agent_cls is None:
            raise FormatError(f"unknown agent kind {kind!r}", 1, path)
        cfg = replace(config or AgentConfig(), gamma=float(head["gamma"]))
        origin = tuple(float(v) for v in head.get("origin", "0,0").split(","))
        agent = agent_cls(cfg, origin=origin)
        at = 1
        for name, net in agent.networks().items():
            if at >= len(lines) or lines[at].strip() != f"# {name}":
                raise FormatError(f"expected section '# {name}'", at + 1, path)
            loaded, used = nn.mlp_from_lines(lines[at + 1:], start=at + 2, path=path)
            if loaded.layer_sizes != net.layer_sizes:
                raise FormatError(f"{name} has layers {loaded.layer_sizes}, expected {net.layer_sizes}",
                                  at + 2, path)
            net.flat[...] = loaded.flat
            at += 1 + used
        return agent


class Td3Agent(DdpgAgent):
    """Twin critics, clipped target-policy smoothing and delayed actor updates."""

    kind = "td3"

    def _init_extra(self, rng: np.random.Generator) -> None:
        self.critic2 = nn.init_mlp(self.critic.layer_sizes, rng, dtype=self.dtype)
        self.critic2_target = self.critic2.copy()
        self.critic2_opt = nn.AdamState.for_params(self.critic2, lr=self.config.critic_lr)

    def networks(self) -> dict[str, nn.MlpParams]:
        nets = super().networks()
        nets["critic2"] = self.critic2
        nets["critic2_target"] = self.critic2_target
        return nets

    def critic_targets(self, batch: np.ndarray) -> np.ndarray:
        cfg = self.config
        o2 = self.obs(batch[:, _S2])
        a2 = nn.forward_trace(self.actor_target, o2)[-1]
        if cfg.target_noise > 0:
            eps = self.noise_rng.normal(0.0, cfg.target_noise, size=a2.shape).astype(self.dtype)
            a2 = a2 + np.clip(eps, -cfg.target_noise_clip, cfg.target_noise_clip)
        a2 = np.clip(a2, -MAX_ACTION, MAX_ACTION)
        x2 = self.critic_input(o2, a2)
        q1 = nn.forward_trace(self.critic_target, x2)[-1][:, 0]
        q2 = nn.forward_trace(self.critic2_target, x2)[-1][:, 0]
        return batch[:, _R] + cfg.gamma * (1.0 - batch[:, _D]) * np.minimum(q1, q2)

    def update(self, batch: np.ndarray) -> tuple[float, float]:
        """TD3 update; the actor and all targets move only every ``policy_delay`` calls."""
        y = self.critic_targets(batch)
        o = self.obs(batch[:, _S])
        x = self.critic_input(o, batch[:, _A])
        loss = self._fit_critic(self.critic, self.critic_opt, x, y)
        loss += self._fit_critic(self.critic2, self.critic2_opt, x, y)
        self.updates += 1
        objective = float("nan")
        if self.updates % self.config.policy_delay == 0:
            if self.config.actor_update == "argmax":
                objective = self.argmax_actor_update(batch, self.config.argmax_samples)
            else:
                objective = self._actor_dpg_step(o)
            p = self.config.polyak
            nn.soft_update(self.actor_target, self.actor, p)
            nn.soft_update(self.critic_target, self.critic, p)
            nn.soft_update(self.critic2_target, self.critic2, p)
        return loss, objective


@dataclass
class Policy:
    """A frozen deterministic actor together with its observation origin."""

    actor: nn.MlpParams
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __call__(self, states: np.ndarray) -> np.ndarray:
        x = (np.asarray(states, dtype=np.float64) - self.origin).astype(self.actor.flat.dtype, copy=False)
        a = nn.forward_trace(self.actor, x)[-1].astype(np.float64)
        return np.clip(a, -MAX_ACTION, MAX_ACTION)


def make_agent(kind: str, config: AgentConfig | None = None, origin: Sequence[float] = (0.0, 0.0),
               seed: int = 0) -> DdpgAgent:
    if kind == "ddpg":
        return DdpgAgent(config, origin, seed)
    if kind == "td3":
        return Td3Agent(config, origin, seed)
    raise ValueError(f"unknown agent kind {kind!r}")
