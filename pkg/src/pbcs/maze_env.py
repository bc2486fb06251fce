"""Continuous 2D maze: a point mass in [0, N]^2 moving by bounded displacements.

Walls are closed axis-aligned rectangles of thickness 0.1 centred on the cell
borders of an N x N grid. A step whose segment touches a wall leaves the
state unchanged and costs -1; entering the target disc pays +1 and ends the
episode. The environment can be reset to any state.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

WALL_THICKNESS = 0.1
MAX_ACTION = 0.1
TARGET_RADIUS = 0.2
START_STATE = (0.5, 0.5)

# Candidate walls per cell are collected over the cell grown by this margin.
# Any segment with both endpoints inside the grown cell is convex-contained in
# it, so only those candidates need testing.
_CELL_MARGIN = 0.25

Rect = tuple[float, float, float, float]


class StepResult(NamedTuple):
    next_state: tuple[float, float]
    reward: float
    terminal: bool


@dataclass(frozen=True)
class MazeSpec:
    """Static maze geometry. Immutable and safe to share between environments."""

    size: int
    walls: tuple[Rect, ...]
    target_center: tuple[float, float]
    target_radius: float = TARGET_RADIUS
    seed: int = 0

    @cached_property
    def wall_array(self) -> np.ndarray:
        """Walls as a (W, 4) array of (xmin, ymin, xmax, ymax)."""
        return np.asarray(self.walls, dtype=np.float64).reshape(-1, 4)

    @cached_property
    def cell_candidates(self) -> list[list[Rect]]:
        n = self.size
        cells: list[list[Rect]] = []
        for cx in range(n):
            for cy in range(n):
                lo_x, lo_y = cx - _CELL_MARGIN, cy - _CELL_MARGIN
                hi_x, hi_y = cx + 1 + _CELL_MARGIN, cy + 1 + _CELL_MARGIN
                cells.append([w for w in self.walls
                              if w[0] <= hi_x and w[2] >= lo_x and w[1] <= hi_y and w[3] >= lo_y])
        return cells


def generate_maze(size: int, seed: int) -> MazeSpec:
    """Recursive-backtracker maze over the ``size`` x ``size`` cell grid.

    Carving starts at cell (0, 0). Every uncarved interior border becomes a
    wall rectangle, extended by half a thickness at both ends so that walls
    meeting at a grid corner leave no gap. Four boundary walls close the square.
    """
    if int(size) != size or size < 1:
        raise ValueError(f"maze size must be an integer >= 1, got {size!r}")
    size = int(size)
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    rng = random.Random(seed)

    # open_east[x][y]: border between (x, y) and (x+1, y) carved
    open_east = [[False] * size for _ in range(size)]
    open_north = [[False] * size for _ in range(size)]
    visited = [[False] * size for _ in range(size)]
    visited[0][0] = True
    stack = [(0, 0)]
    while stack:
        x, y = stack[-1]
        neighbours = [(nx, ny) for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1))
                      if 0 <= nx < size and 0 <= ny < size and not visited[nx][ny]]
        if not neighbours:
            stack.pop()
            continue
        nx, ny = neighbours[rng.randrange(len(neighbours))]
        if nx != x:
            open_east[min(x, nx)][y] = True
        else:
            open_north[x][min(y, ny)] = True
        visited[nx][ny] = True
        stack.append((nx, ny))

    h = WALL_THICKNESS / 2
    walls = _boundary_walls(size)
    for x in range(size - 1):
        for y in range(size):
            if not open_east[x][y]:
                walls.append((x + 1 - h, y - h, x + 1 + h, y + 1 + h))
    for x in range(size):
        for y in range(size - 1):
            if not open_north[x][y]:
                walls.append((x - h, y + 1 - h, x + 1 + h, y + 1 + h))
    return MazeSpec(size=size, walls=tuple(walls), target_center=target_for(size), seed=seed)


def _boundary_walls(size: int) -> list[Rect]:
    h = WALL_THICKNESS / 2
    return [
        (-h, -h, size + h, h),
        (-h, size - h, size + h, size + h),
        (-h, -h, h, size + h),
        (size - h, -h, size + h, size + h),
    ]


def open_room(size: int) -> MazeSpec:
    """Obstacle-free [0, size]^2 room: boundary walls only, usual target placement."""
    if int(size) != size or size < 1:
        raise ValueError(f"room size must be an integer >= 1, got {size!r}")
    return MazeSpec(size=int(size), walls=tuple(_boundary_walls(int(size))),
                    target_center=target_for(int(size)))


def target_for(size: int) -> tuple[float, float]:
    if size > 2:
        return (size - 0.5, size - 0.5)
    if size == 2:
        return (0.5, 1.5)
    # A single cell has nowhere else to put the target.
    return (0.5, 0.5)


def _segment_hits_rect(x0: float, y0: float, x1: float, y1: float, r: Rect) -> bool:
    # Liang-Barsky clip of the parametric segment against the closed box.
    t_lo, t_hi = 0.0, 1.0
    dx = x1 - x0
    if dx == 0.0:
        if x0 < r[0] or x0 > r[2]:
            return False
    else:
        ta, tb = (r[0] - x0) / dx, (r[2] - x0) / dx
        if ta > tb:
            ta, tb = tb, ta
        t_lo, t_hi = max(t_lo, ta), min(t_hi, tb)
        if t_lo > t_hi:
            return False
    dy = y1 - y0
    if dy == 0.0:
        return r[1] <= y0 <= r[3]
    ta, tb = (r[1] - y0) / dy, (r[3] - y0) / dy
    if ta > tb:
        ta, tb = tb, ta
    return max(t_lo, ta) <= min(t_hi, tb)


def segment_hits_wall(s: Sequence[float], s_next: Sequence[float], spec: MazeSpec) -> bool:
    """True iff the closed segment [s, s_next] touches any wall rectangle."""
    x0, y0 = float(s[0]), float(s[1])
    x1, y1 = float(s_next[0]), float(s_next[1])
    n = spec.size
    cx = min(max(math.floor(x0), 0), n - 1)
    cy = min(max(math.floor(y0), 0), n - 1)
    lo_x, hi_x = cx - _CELL_MARGIN, cx + 1 + _CELL_MARGIN
    lo_y, hi_y = cy - _CELL_MARGIN, cy + 1 + _CELL_MARGIN
    if lo_x <= min(x0, x1) and max(x0, x1) <= hi_x and lo_y <= min(y0, y1) and max(y0, y1) <= hi_y:
        candidates = spec.cell_candidates[cx * n + cy]
    else:
        candidates = spec.walls
    for r in candidates:
        if _segment_hits_rect(x0, y0, x1, y1, r):
            return True
    return False


def segments_hit_walls(starts: np.ndarray, ends: np.ndarray, spec: MazeSpec) -> np.ndarray:
    """Vectorised ``segment_hits_wall`` over (B, 2) arrays of endpoints."""
    w = spec.wall_array
    a = np.asarray(starts, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(ends, dtype=np.float64).reshape(-1, 2)
    lo_s, hi_s = np.minimum(a, b), np.maximum(a, b)
    # bounding-box prefilter; only overlapping (segment, wall) pairs get the clip test
    near = ((lo_s[:, None, 0] <= w[None, :, 2]) & (w[None, :, 0] <= hi_s[:, None, 0])
            & (lo_s[:, None, 1] <= w[None, :, 3]) & (w[None, :, 1] <= hi_s[:, None, 1]))
    seg, wall = np.nonzero(near)
    out = np.zeros(len(a), dtype=bool)
    if seg.size == 0:
        return out
    p0 = a[seg]
    d = b[seg] - p0
    lo, hi = w[wall, :2], w[wall, 2:]
    parallel = d == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - p0) / d
        tb = (hi - p0) / d
    t_enter = np.where(parallel, 0.0, np.minimum(ta, tb))
    t_exit = np.where(parallel, 1.0, np.maximum(ta, tb))
    t_lo = np.maximum(0.0, t_enter.max(axis=1))
    t_hi = np.minimum(1.0, t_exit.min(axis=1))
    # parallel axes already pass the slab test via the bounding-box overlap
    out[seg[t_lo <= t_hi]] = True
    return out


def clip_action(a: Sequence[float]) -> tuple[float, float]:
    return (min(max(float(a[0]), -MAX_ACTION), MAX_ACTION),
            min(max(float(a[1]), -MAX_ACTION), MAX_ACTION))


def step(s: Sequence[float], a: Sequence[float], spec: MazeSpec) -> StepResult:
    """One transition of the maze MDP. The action is clipped to the action box."""
    ax, ay = clip_action(a)
    x, y = float(s[0]), float(s[1])
    nxt = (x + ax, y + ay)
    if segment_hits_wall((x, y), nxt, spec):
        return StepResult((x, y), -1.0, False)
    tx, ty = spec.target_center
    if math.hypot(nxt[0] - tx, nxt[1] - ty) < spec.target_radius:
        return StepResult(nxt, 1.0, True)
    return StepResult(nxt, 0.0, False)


def step_batch(states: np.ndarray, actions: np.ndarray, spec: MazeSpec):
    """Vectorised ``step``. Returns (next_states, rewards, terminals, wall_hits)."""
    states = np.asarray(states, dtype=np.float64)
    actions = np.clip(np.asarray(actions, dtype=np.float64), -MAX_ACTION, MAX_ACTION)
    proposed = states + actions
    hits = segments_hit_walls(states, proposed, spec)
    nxt = np.where(hits[:, None], states, proposed)
    dist = np.hypot(nxt[:, 0] - spec.target_center[0], nxt[:, 1] - spec.target_center[1])
    terminal = ~hits & (dist < spec.target_radius)
    reward = np.where(hits, -1.0, np.where(terminal, 1.0, 0.0))
    return nxt, reward, terminal, hits


class MazeEnv:
    """Stateful wrapper with the reset-anywhere primitive."""

    def __init__(self, spec: MazeSpec, start: Sequence[float] = START_STATE):
        self.spec = spec
        self.state = (float(start[0]), float(start[1]))

    def reset_to(self, s: Sequence[float]) -> tuple[float, float]:
        self.state = (float(s[0]), float(s[1]))
        return self.state

    def step(self, a: Sequence[float]) -> StepResult:
        result = step(self.state, a, self.spec)
        self.state = result.next_state
        return result


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def maze_to_text(spec: MazeSpec) -> str:
    lines = [f"maze v1 N={spec.size} seed={spec.seed}"]
    lines += ["wall " + " ".join(_fmt(v) for v in w) for w in spec.walls]
    tx, ty = spec.target_center
    lines.append(f"target {_fmt(tx)} {_fmt(ty)} {_fmt(spec.target_radius)}")
    return "\n".join(lines) + "\n"


class FormatError(ValueError):
    """Malformed artifact file; carries the offending line number."""

    def __init__(self, message: str, line: int, path: str | Path | None = None):
        where = f"{path}:{line}" if path is not None else f"line {line}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.path = path


def parse_header(line: str, kind: str, lineno: int = 1,
                 path: str | Path | None = None) -> dict[str, str]:
    parts = line.split()
    if len(parts) < 2 or parts[0] != kind or parts[1] != "v1":
        raise FormatError(f"expected '{kind} v1' header, got {line.strip()!r}", lineno, path)
    fields = {}
    for p in parts[2:]:
        key, sep, value = p.partition("=")
        if not sep:
            raise FormatError(f"bad header field {p!r}", lineno, path)
        fields[key] = value
    return fields


def maze_from_text(text: str, path: str | Path | None = None) -> MazeSpec:
    numbered = [(i, ln) for i, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not numbered:
        raise FormatError("empty maze file", 1, path)
    first, header = numbered[0]
    head = parse_header(header, "maze", first, path)
    walls: list[Rect] = []
    target = None
    for i, ln in numbered[1:]:
        parts = ln.split()
        try:
            if parts[0] == "wall" and len(parts) == 5:
                walls.append(tuple(float(v) for v in parts[1:]))  # type: ignore[arg-type]
            elif parts[0] == "target" and len(parts) == 4:
                target = tuple(float(v) for v in parts[1:])
            else:
                raise FormatError(f"unexpected record {ln.strip()!r}", i, path)
        except ValueError as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(str(exc), i, path) from None
    if target is None:
        raise FormatError("missing target record", numbered[-1][0] + 1, path)
    try:
        return MazeSpec(size=int(head["N"]), walls=tuple(walls), target_center=(target[0], target[1]),
                        target_radius=target[2], seed=int(head["seed"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad maze header: {exc}", first, path) from None
