"""Phase 1: archive-based exploration with reset-anywhere random steps.

Visited states are grouped into square bins of side 0.05. Each iteration
picks the least-selected non-empty bin, then the least-selected state in it
(ties broken uniformly at random), resets the maze to that state, takes one
uniformly random action and stores the resulting state if it is new. The
first rewarded transition ends the search; parent links give the path back.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .maze_env import MAX_ACTION, FormatError, MazeSpec, StepResult, parse_header, step

BIN_SIZE = 0.05


class ExplorationFailure(RuntimeError):
    def __init__(self, archive_size: int, steps: int):
        super().__init__(f"no reward found after {steps} steps (archive holds {archive_size} states)")
        self.archive_size = archive_size
        self.steps = steps


def bin_of(s: Sequence[float]) -> tuple[int, int]:
    """Half-open bins: [k * 0.05, (k + 1) * 0.05) maps to k."""
    return (math.floor(s[0] / BIN_SIZE), math.floor(s[1] / BIN_SIZE))


class _TieSet:
    """Set with O(1) insert, remove and uniform random pick."""

    __slots__ = ("items", "pos")

    def __init__(self):
        self.items: list[int] = []
        self.pos: dict[int, int] = {}

    def add(self, x: int) -> None:
        self.pos[x] = len(self.items)
        self.items.append(x)

    def remove(self, x: int) -> None:
        i = self.pos.pop(x)
        last = self.items.pop()
        if last != x:
            self.items[i] = last
            self.pos[last] = i

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class ArchiveEntry:
    state: tuple[float, float]
    counter: int
    parent: int | None
    parent_action: tuple[float, float] | None
    id: int
    bin: int


class Archive:
    """Binned store of visited states with bin and state selection counters.

    Bins are kept in buckets keyed by their counter so that the least-chosen
    bin is found without scanning every bin.
    """

    def __init__(self, s0: Sequence[float], seed: int = 0):
        self.rng = random.Random(seed)
        self.entries: list[ArchiveEntry] = []
        self.bin_ids: dict[tuple[int, int], int] = {}
        self.bin_keys: list[tuple[int, int]] = []
        self.bin_counters: list[int] = []
        self.bin_members: list[list[int]] = []
        self._levels: dict[int, _TieSet] = {}
        self._min_level = 0
        self._index: dict[tuple[float, float], int] = {}
        self.insert((float(s0[0]), float(s0[1])), None, None)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, s: Sequence[float]) -> bool:
        return (float(s[0]), float(s[1])) in self._index

    @property
    def n_bins(self) -> int:
        return len(self.bin_keys)

    def insert(self, s: tuple[float, float], parent: int | None,
               action: tuple[float, float] | None) -> int | None:
        """Add ``s`` with a zero counter; returns its id, or None if already stored."""
        if s in self._index:
            return None
        key = bin_of(s)
        b = self.bin_ids.get(key)
        if b is None:
            b = len(self.bin_keys)
            self.bin_ids[key] = b
            self.bin_keys.append(key)
            self.bin_counters.append(0)
            self.bin_members.append([])
            self._levels.setdefault(0, _TieSet()).add(b)
            self._min_level = 0
        eid = len(self.entries)
        self.entries.append(ArchiveEntry(s, 0, parent, action, eid, b))
        self.bin_members[b].append(eid)
        self._index[s] = eid
        return eid

    def select_state(self, check: bool = False) -> int:
        """Pick a least-chosen state from a least-chosen bin and bump both counters."""
        if not self.entries:
            raise RuntimeError("cannot select from an empty archive")
        level = self._levels[self._min_level]
        b = level.items[self.rng.randrange(len(level))]
        if check:
            assert self.bin_counters[b] == min(self.bin_counters), "bin selection not minimal"
        members = self.bin_members[b]
        lowest = min(self.entries[e].counter for e in members)
        tied = [e for e in members if self.entries[e].counter == lowest]
        eid = tied[self.rng.randrange(len(tied))] if len(tied) > 1 else tied[0]

        c = self.bin_counters[b]
        level.remove(b)
        self._levels.setdefault(c + 1, _TieSet()).add(b)
        self.bin_counters[b] = c + 1
        if not level:
            del self._levels[c]
            if c == self._min_level:
                self._min_level = c + 1
        self.entries[eid].counter += 1
        return eid

    def random_action(self) -> tuple[float, float]:
        u = self.rng.uniform
        return (u(-MAX_ACTION, MAX_ACTION), u(-MAX_ACTION, MAX_ACTION))

    def path_to(self, eid: int) -> list[int]:
        """Entry ids from the root down to ``eid``."""
        chain = []
        cur: int | None = eid
        while cur is not None:
            chain.append(cur)
            cur = self.entries[cur].parent
        return chain[::-1]


def explore_iteration(archive: Archive, spec: MazeSpec,
                      check: bool = False) -> tuple[int | None, StepResult, int, tuple[float, float]]:
    """One select / reset / random step / insert cycle.

    Returns (new entry id or None, step result, selected entry id, action).
    """
    src = archive.select_state(check=check)
    s = archive.entries[src].state
    a = archive.random_action()
    result = step(s, a, spec)
    new = None
    if not result.terminal:
        new = archive.insert(result.next_state, src, a)
    return new, result, src, a


@dataclass
class Trajectory:
    """States tau_0..tau_n and the actions a_i with step(tau_i, a_i) = tau_{i+1}."""

    states: np.ndarray   # (n + 1, 2)
    actions: np.ndarray  # (n, 2)
    size: int = 0
    seed: int = 0

    def __len__(self) -> int:
        return len(self.states)

    @property
    def last(self) -> int:
        return len(self.states) - 1

    def to_text(self) -> str:
        f = lambda v: format(float(v), ".17g")  # noqa: E731
        lines = [f"pbcs-trajectory v1 N={self.size} seed={self.seed} len={len(self.states)}"]
        for i, (x, y) in enumerate(self.states):
            if i < len(self.actions):
                ax, ay = f(self.actions[i][0]), f(self.actions[i][1])
            else:
                ax = ay = "_"
            lines.append(f"{i} {f(x)} {f(y)} {ax} {ay}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, path: str | Path | None = None) -> Trajectory:
        lines = text.splitlines()
        if not lines:
            raise FormatError("empty trajectory file", 1, path)
        head = parse_header(lines[0], "pbcs-trajectory", 1, path)
        n = int(head["len"])
        states, actions = [], []
        for i in range(n):
            lineno = i + 2
            if lineno > len(lines):
                raise FormatError(f"truncated: expected {n} states, found {i}", lineno, path)
            parts = lines[lineno - 1].split()
            if len(parts) != 5 or parts[0] != str(i):
                raise FormatError(f"bad state record {lines[lineno - 1]!r}", lineno, path)
            try:
                states.append((float(parts[1]), float(parts[2])))
                if i < n - 1:
                    actions.append((float(parts[3]), float(parts[4])))
            except ValueError as exc:
                raise FormatError(str(exc), lineno, path) from None
        return cls(np.array(states, dtype=np.float64).reshape(-1, 2),
                   np.array(actions, dtype=np.float64).reshape(-1, 2),
                   size=int(head["N"]), seed=int(head["seed"]))


@dataclass
class Phase1Result:
    trajectory: Trajectory
    archive: Archive
    steps: int


def run_phase1(spec: MazeSpec, s0: Sequence[float], max_env_steps: int, seed: int,
               check: bool = False) -> Phase1Result:
    """Explore until the first rewarded step; reconstruct tau_0..tau_N.

    Raises ExplorationFailure when ``max_env_steps`` runs out first.
    """
    if max_env_steps <= 0:
        raise ValueError("max_env_steps must be positive")
    archive = Archive(s0, seed=seed)
    for used in range(1, max_env_steps + 1):
        _, result, src, a = explore_iteration(archive, spec, check=check)
        if result.terminal:
            ids = archive.path_to(src)
            states = [archive.entries[e].state for e in ids] + [result.next_state]
            actions = [archive.entries[e].parent_action for e in ids[1:]] + [a]
            traj = Trajectory(np.array(states, dtype=np.float64),
                              np.array(actions, dtype=np.float64).reshape(-1, 2),
                              size=spec.size, seed=seed)
            return Phase1Result(traj, archive, used)
    raise ExplorationFailure(len(archive), max_env_steps)
