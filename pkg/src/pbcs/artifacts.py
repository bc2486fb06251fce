"""Saving and loading the outputs of one experiment cell.

A run directory holds line-oriented text files plus an SVG picture and a
``manifest.txt`` listing them. Floats are written with 17 significant digits
so every numeric payload round-trips exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .experiment import CellResult, RunReport
from .explore import Trajectory
from .maze_env import FormatError, MazeSpec, maze_from_text, maze_to_text
from .render import render_svg
from .skillchain import SkillChain, chain_from_text, chain_to_text

MAZE_FILE = "maze.txt"
TRAJECTORY_FILE = "trajectory.txt"
CHAIN_FILE = "chain.txt"
REPORT_FILE = "report.txt"
TRACE_FILE = "trace.txt"
SVG_FILE = "maze.svg"
MANIFEST_FILE = "manifest.txt"


class ArtifactError(OSError):
    pass


@dataclass
class Artifacts:
    spec: MazeSpec | None = None
    trajectory: Trajectory | None = None
    chain: SkillChain | None = None
    report: RunReport | None = None
    trace: list[tuple[float, float]] | None = None


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ArtifactError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc.strerror or exc}") from exc


def trace_to_text(trace) -> str:
    f = lambda v: format(float(v), ".17g")  # noqa: E731
    return "".join(f"{f(x)} {f(y)}\n" for x, y in trace)


def trace_from_text(text: str, path: str | Path | None = None) -> list[tuple[float, float]]:
    out = []
    for i, ln in enumerate(text.splitlines(), start=1):
        if not ln.strip():
            continue
        parts = ln.split()
        try:
            if len(parts) != 2:
                raise ValueError(f"expected 'x y', got {ln.strip()!r}")
            out.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise FormatError(str(exc), i, path) from None
    return out


def save_artifacts(out_dir: str | Path, spec: MazeSpec, report: RunReport | None = None,
                   trajectory: Trajectory | None = None, chain: SkillChain | None = None,
                   trace=None) -> dict[str, Path]:
    """Write everything that is present and return the manifest {kind: path}."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactError(f"cannot create {out}: {exc.strerror or exc}") from exc
    files: dict[str, tuple[str, str]] = {"maze": (MAZE_FILE, maze_to_text(spec))}
    if trajectory is not None:
        files["trajectory"] = (TRAJECTORY_FILE, trajectory.to_text())
    if chain is not None:
        files["chain"] = (CHAIN_FILE, chain_to_text(chain))
    if trace is not None:
        files["trace"] = (TRACE_FILE, trace_to_text(trace))
    if report is not None:
        files["report"] = (REPORT_FILE, report.to_text())
    svg = render_svg(spec, None if trajectory is None else trajectory.states, chain,
                     None if trace is None else [trace])
    files["svg"] = (SVG_FILE, svg)
    manifest = {}
    for kind, (name, text) in files.items():
        _write(out / name, text)
        manifest[kind] = out / name
    _write(out / MANIFEST_FILE, "".join(f"{k}={p.name}\n" for k, p in manifest.items()))
    return manifest


def save_cell(out_dir: str | Path, cell: CellResult) -> dict[str, Path]:
    return save_artifacts(out_dir, cell.spec, cell.report, cell.trajectory, cell.chain, cell.trace)


def read_manifest(out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    path = out / MANIFEST_FILE
    manifest = {}
    for i, ln in enumerate(_read(path).splitlines(), start=1):
        if not ln.strip():
            continue
        kind, sep, name = ln.partition("=")
        if not sep or not name.strip():
            raise FormatError(f"expected 'kind=file', got {ln.strip()!r}", i, path)
        manifest[kind.strip()] = out / name.strip()
    return manifest


def load_artifacts(out_dir: str | Path) -> Artifacts:
    """Inverse of ``save_artifacts``; the SVG is not parsed back."""
    manifest = read_manifest(out_dir)
    art = Artifacts()
    if "maze" in manifest:
        art.spec = maze_from_text(_read(manifest["maze"]), manifest["maze"])
    if "trajectory" in manifest:
        art.trajectory = Trajectory.from_text(_read(manifest["trajectory"]), manifest["trajectory"])
    if "chain" in manifest:
        art.chain = chain_from_text(_read(manifest["chain"]), manifest["chain"])
        if art.trajectory is not None:
            art.chain.trajectory = np.asarray(art.trajectory.states)
    if "report" in manifest:
        try:
            art.report = RunReport.from_text(_read(manifest["report"]))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad report: {exc}", 1, manifest["report"]) from None
    if "trace" in manifest:
        art.trace = trace_from_text(_read(manifest["trace"]), manifest["trace"])
    return art
