"""Deterministic CSV/JSON writers.

Every file is written to a temporary sibling and moved into place with
``os.replace`` so readers never observe a partial file. Floats are printed
with 17 significant digits, which round-trips IEEE doubles.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no NaN/inf; encode them as strings
        return x if math.isfinite(x) else str(x)
    return obj


def write_json(path, data) -> Path:
    text = json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n"
    return atomic_write_text(path, text)


def read_csv_columns(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def _space_columns(grid):
    names = ["x", "y"][: grid.dim]
    return names, grid.coords()


def write_trajectory(path, traj, stride: int = 1) -> Path:
    """Long-format CSV ``t, x[, y], mu, phi, sigma`` every ``stride`` levels.

    The final level is always written.
    """
    names, coords = _space_columns(traj.grid)
    levels = list(range(0, len(traj.times), max(1, int(stride))))
    if levels[-1] != len(traj.times) - 1:
        levels.append(len(traj.times) - 1)

    def rows():
        for k in levels:
            for i in range(traj.grid.size):
                yield ([traj.times[k]] + [c[i] for c in coords]
                       + [traj.mu[k, i], traj.phi[k, i], traj.sigma[k, i]])

    return write_csv(path, ["t", *names, "mu", "phi", "sigma"], rows())


def write_adjoint(path, adj, stride: int = 1) -> Path:
    names, coords = _space_columns(adj.grid)
    levels = list(range(0, len(adj.times), max(1, int(stride))))
    if levels[-1] != len(adj.times) - 1:
        levels.append(len(adj.times) - 1)

    def rows():
        for k in levels:
            for i in range(adj.grid.size):
                yield ([adj.times[k]] + [c[i] for c in coords]
                       + [adj.p[k, i], adj.q[k, i], adj.r[k, i]])

    return write_csv(path, ["t", *names, "p", "q", "r"], rows())


def write_control(path, grid, times, u) -> Path:
    names, coords = _space_columns(grid)

    def rows():
        for k in range(u.shape[0]):
            for i in range(grid.size):
                yield [times[k + 1]] + [c[i] for c in coords] + [u[k, i]]

    return write_csv(path, ["t", *names, "u"], rows())


HISTORY_COLUMNS = ("iter", "cost", "stationarity", "step", "newton_iters")


def write_history(path, history) -> Path:
    return write_csv(path, HISTORY_COLUMNS,
                     ([h[c] for c in HISTORY_COLUMNS] for h in history))
