"""SVG pictures of a maze, its phase-1 trajectory and a skill chain."""

from __future__ import annotations

from typing import Iterable, Sequence
from xml.sax.saxutils import quoteattr

import numpy as np

from .maze_env import MazeSpec
from .skillchain import SkillChain

TRAJECTORY_COLOR = "red"
TRACE_COLOR = "green"
ACTIVATION_COLOR = "purple"
WALL_COLOR = "black"
TARGET_COLOR = "gold"


def _num(v: float) -> str:
    return format(float(v), ".6g")


def _points(path: Iterable[Sequence[float]]) -> str:
    return " ".join(f"{_num(x)},{_num(y)}" for x, y in path)


def render_svg(spec: MazeSpec, trajectory: np.ndarray | None = None,
               chain: SkillChain | None = None,
               traces: Sequence[Sequence[Sequence[float]]] | None = None,
               pixels_per_unit: int = 100) -> str:
    """SVG 1.1 document with world coordinates (y up) mapped onto a [0, N]^2 viewBox.

    Walls are filled rectangles, the phase-1 trajectory a red polyline, each
    chain-execution trace a green polyline and every skill's activation ball
    a purple circle of radius eps.
    """
    n = spec.size
    px = n * pixels_per_unit
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{px}" height="{px}" '
        f'viewBox="0 0 {n} {n}" style="background:white">',
        f'<g transform="translate(0,{n}) scale(1,-1)">',
    ]
    for xmin, ymin, xmax, ymax in spec.walls:
        out.append(f'<rect x="{_num(xmin)}" y="{_num(ymin)}" width="{_num(xmax - xmin)}" '
                   f'height="{_num(ymax - ymin)}" fill="{WALL_COLOR}"/>')
    tx, ty = spec.target_center
    out.append(f'<circle class="target" cx="{_num(tx)}" cy="{_num(ty)}" r="{_num(spec.target_radius)}" '
               f'fill="{TARGET_COLOR}" fill-opacity="0.6"/>')
    if chain is not None:
        for sk in chain.skills:
            cx, cy = sk.activation_center
            out.append(f'<circle class="activation" cx="{_num(cx)}" cy="{_num(cy)}" r="{_num(sk.eps)}" '
                       f'fill="none" stroke="{ACTIVATION_COLOR}" stroke-width="0.015"/>')
    if trajectory is not None and len(trajectory):
        out.append(f'<polyline class="trajectory" points={quoteattr(_points(trajectory))} fill="none" '
                   f'stroke="{TRAJECTORY_COLOR}" stroke-width="0.02"/>')
    for trace in traces or ():
        if len(trace):
            out.append(f'<polyline class="trace" points={quoteattr(_points(trace))} fill="none" '
                       f'stroke="{TRACE_COLOR}" stroke-width="0.02"/>')
    out += ["</g>", "</svg>"]
    return "\n".join(out) + "\n"
