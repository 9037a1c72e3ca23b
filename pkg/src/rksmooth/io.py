"""Trajectory CSV and JSON files, written atomically."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import InvalidData, Trajectory


class MalformedFile(InvalidData):
    pass


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x: float) -> str:
    return f"{x:.17g}"


def trajectory_csv(traj: Trajectory) -> str:
    header = ",".join(["t"] + [f"x{i}" for i in range(traj.n)])
    lines = [header]
    for t, row in zip(traj.times, traj.states):
        lines.append(",".join([fmt(t)] + [fmt(v) for v in row]))
    return "\n".join(lines) + "\n"


def write_trajectory(path: str | Path, traj: Trajectory) -> None:
    atomic_write_text(path, trajectory_csv(traj))


def read_trajectory(path: str | Path) -> Trajectory:
    """Parse a trajectory CSV; problems are reported with their 1-based line number."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise MalformedFile(f"cannot read {path}: {exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedFile(f"{path}: line 1: empty file")
    header = lines[0].rstrip("\r").split(",")
    n = len(header) - 1
    if n < 1 or header != ["t"] + [f"x{i}" for i in range(n)]:
        raise MalformedFile(f"{path}: line 1: header must be t,x0,...,x{{n-1}}")
    rows = np.empty((len(lines) - 1, n + 1))
    for k, line in enumerate(lines[1:], start=2):
        fields = line.rstrip("\r").split(",")
        if len(fields) != n + 1:
            raise MalformedFile(f"{path}: line {k}: expected {n + 1} fields, found {len(fields)}")
        try:
            rows[k - 2] = [float(f) for f in fields]
        except ValueError as exc:
            raise MalformedFile(f"{path}: line {k}: {exc}") from exc
        if not np.all(np.isfinite(rows[k - 2])):
            raise MalformedFile(f"{path}: line {k}: non-finite value")
    try:
        return Trajectory(rows[:, 0], rows[:, 1:])
    except InvalidData as exc:
        raise MalformedFile(f"{path}: {exc}") from exc


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, dumps_json(obj))


def table_csv(rows: list[dict], columns: list[str]) -> str:
    def cell(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return fmt(v)
        return str(v)

    out = [",".join(columns)]
    out += [",".join(cell(r.get(c)) for c in columns) for r in rows]
    return "\n".join(out) + "\n"


def write_table(path: str | Path, rows: list[dict], columns: list[str]) -> None:
    atomic_write_text(path, table_csv(rows, columns))
