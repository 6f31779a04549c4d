"""Trajectory CSV files and their JSON metadata sidecars."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .dynamics import Trajectory


class TrajectoryFileError(ValueError):
    pass


def sidecar_path(csv_path: str | Path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".meta.json")


def column_names(action_counts, with_scores: bool) -> list[str]:
    xs = [f"x_{k + 1}_{a + 1}" for k, n in enumerate(action_counts) for a in range(n)]
    cols = ["t"] + xs
    if with_scores:
        cols += [c.replace("x_", "y_", 1) for c in xs]
    return cols


def atomic_write(path: str | Path, writer) -> None:
    """Call ``writer(fh)`` on a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, dict):
        return {str(k): _jsonable(t) for k, t in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(t) for t in v]
    return v


def write_trajectory(path: str | Path, traj: Trajectory, extra_meta: dict | None = None) -> Path:
    """Write the CSV (17 significant digits) and its metadata sidecar."""
    cols = column_names(traj.action_counts, traj.y is not None)
    parts = [traj.times[:, None], traj.x]
    if traj.y is not None:
        parts.append(traj.y)
    data = np.hstack(parts)

    def write_csv(fh):
        fh.write(",".join(cols) + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")

    atomic_write(path, write_csv)
    meta = dict(traj.meta)
    meta["rows"] = int(data.shape[0])
    meta["columns"] = cols
    meta["events"] = list(traj.events)
    if traj.extras:
        meta["extras"] = {
            k: v for k, v in traj.extras.items() if k in ("identity_error",)
        }
        if "xbar" in traj.extras:
            meta["extras"]["final_xbar"] = traj.extras["xbar"][-1]
    if extra_meta:
        meta.update(extra_meta)
    text = json.dumps(_jsonable(meta), indent=2, sort_keys=True)
    atomic_write(sidecar_path(path), lambda fh: fh.write(text + "\n"))
    return Path(path)


def read_trajectory(path: str | Path) -> Trajectory:
    """Read a trajectory CSV together with its sidecar and cross-check them."""
    path = Path(path)
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise TrajectoryFileError(f"cannot read trajectory {path}: {exc}") from None
    except ValueError as exc:
        raise TrajectoryFileError(f"malformed trajectory {path}: {exc}") from None
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except OSError:
        raise TrajectoryFileError(f"metadata sidecar {side} is missing") from None
    except json.JSONDecodeError as exc:
        raise TrajectoryFileError(f"metadata sidecar {side} is not valid JSON: {exc}") from None
    counts = tuple(int(n) for n in meta.get("action_counts", ()))
    has_y = any(c.startswith("y_") for c in header)
    expected = column_names(counts, has_y)
    if header != expected:
        raise TrajectoryFileError("trajectory columns do not match the metadata action counts")
    if meta.get("rows") is not None and int(meta["rows"]) != data.shape[0]:
        raise TrajectoryFileError(
            f"metadata records {meta['rows']} rows, file has {data.shape[0]}"
        )
    D = sum(counts)
    x = data[:, 1 : 1 + D]
    y = data[:, 1 + D : 1 + 2 * D] if has_y else None
    events = tuple(meta.pop("events", ()))
    return Trajectory(data[:, 0].copy(), x.copy(), None if y is None else y.copy(), counts, meta, events=events)
