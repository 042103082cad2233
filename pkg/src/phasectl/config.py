"""JSON run configuration (``"version": 1``) and field specifications.

A field spec is one of

* a number, or ``{"constant": c}``
* ``{"expr": "gaussian", "amplitude": a, "center": [..], "width": w}``
* ``{"expr": "cosine", "amplitude": a, "modes": [k1, k2], "offset": c}``,
  i.e. ``c + a * prod_i cos(k_i pi x_i / L_i)``
* ``{"expr": "tanh", "amplitude": a, "center": c, "width": w, "axis": 0}``
* ``{"sum": [spec, ...]}``
* ``{"file": path}``: CSV with a header; the last column holds one value per
  grid point in the grid's flattened order.

Targets additionally accept ``{"from_run": path}``, a trajectory CSV written
by ``simulate`` with ``save_stride = 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .control import ControlProblem
from .errors import ValidationError
from .export import read_csv_columns
from .grid import Grid, build_grid
from .potentials import potential_by_name
from .state import InitialData, ModelParams, compatible_initial_data, prolif_by_name

CONFIG_VERSION = 1


def _num(block: dict, key: str, default=None, kind=float):
    val = block.get(key, default)
    if val is None:
        raise ValidationError(f"missing required key {key!r}")
    try:
        out = kind(val)
    except (TypeError, ValueError):
        raise ValidationError(f"{key!r} must be a number, got {val!r}") from None
    if kind is float and math.isnan(out):
        raise ValidationError(f"{key!r} is NaN")
    return out


def _rel(path, base: Path | None) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base is None else base / p


def eval_field(spec: Any, grid: Grid, base: Path | None = None) -> np.ndarray:
    """Evaluate a field spec on the flattened grid."""
    x = grid.coords()
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return np.full(grid.size, float(spec))
    if not isinstance(spec, dict):
        raise ValidationError(f"invalid field spec {spec!r}")
    if "constant" in spec:
        return np.full(grid.size, _num(spec, "constant"))
    if "sum" in spec:
        parts = spec["sum"]
        if not isinstance(parts, list) or not parts:
            raise ValidationError("'sum' needs a non-empty list of field specs")
        return sum(eval_field(s, grid, base) for s in parts)
    if "file" in spec:
        path = _rel(spec["file"], base)
        try:
            cols = read_csv_columns(path)
        except (OSError, ValueError, StopIteration) as exc:
            raise ValidationError(f"cannot read field file {str(path)!r}: {exc}") from None
        vals = list(cols.values())[-1]
        if vals.shape != (grid.size,):
            raise ValidationError(
                f"field file {str(path)!r} has {vals.size} values, grid has {grid.size}")
        return vals
    kind = spec.get("expr")
    amp = _num(spec, "amplitude", 1.0)
    if kind == "gaussian":
        center = spec.get("center", [0.5 * L for L in grid.extent])
        center = [float(c) for c in np.atleast_1d(center)]
        if len(center) != grid.dim:
            raise ValidationError("gaussian center must have one entry per axis")
        width = _num(spec, "width")
        if width <= 0:
            raise ValidationError("gaussian width must be positive")
        r2 = sum((xi - c) ** 2 for xi, c in zip(x, center))
        return amp * np.exp(-r2 / (2.0 * width**2))
    if kind == "cosine":
        modes = [float(k) for k in np.atleast_1d(spec.get("modes", [1] * grid.dim))]
        if len(modes) != grid.dim:
            raise ValidationError("cosine modes must have one entry per axis")
        out = np.ones(grid.size)
        for xi, k, L in zip(x, modes, grid.extent):
            out = out * np.cos(k * np.pi * xi / L)
        return _num(spec, "offset", 0.0) + amp * out
    if kind == "tanh":
        axis = _num(spec, "axis", 0, int)
        if not 0 <= axis < grid.dim:
            raise ValidationError("tanh axis out of range")
        width = _num(spec, "width")
        if width <= 0:
            raise ValidationError("tanh width must be positive")
        center = _num(spec, "center", 0.5 * grid.extent[axis])
        return amp * np.tanh((x[axis] - center) / width)
    raise ValidationError(f"unknown field spec {spec!r}")


def load_run_levels(path, column: str, grid: Grid, n_levels: int) -> np.ndarray:
    """``(n_levels, size)`` array of one column of a trajectory CSV."""
    try:
        cols = read_csv_columns(path)
    except (OSError, ValueError, StopIteration) as exc:
        raise ValidationError(f"cannot read run file {str(path)!r}: {exc}") from None
    if column not in cols:
        raise ValidationError(f"run file {str(path)!r} has no column {column!r}")
    vals = cols[column]
    if vals.size != n_levels * grid.size:
        raise ValidationError(
            f"run file {str(path)!r} has {vals.size} rows, expected "
            f"{n_levels} levels x {grid.size} points (save_stride must be 1)")
    return vals.reshape(n_levels, grid.size)


def load_control(spec, grid: Grid, n_steps: int, base: Path | None = None) -> np.ndarray:
    """Control of shape ``(n_steps, size)``: a time-constant field or a control CSV."""
    if isinstance(spec, dict) and "control_file" in spec:
        path = _rel(spec["control_file"], base)
        try:
            cols = read_csv_columns(path)
        except (OSError, ValueError, StopIteration) as exc:
            raise ValidationError(f"cannot read control file {str(path)!r}: {exc}") from None
        if "u" not in cols or cols["u"].size != n_steps * grid.size:
            raise ValidationError(f"control file {str(path)!r} does not match the grid")
        return cols["u"].reshape(n_steps, grid.size)
    return np.broadcast_to(eval_field(spec, grid, base), (n_steps, grid.size)).copy()


@dataclass
class RunConfig:
    params: ModelParams
    raw: dict
    base: Path | None = None
    problem: ControlProblem | None = None
    command: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.params.grid

    def seed(self) -> int:
        return int(self.command.get("seed", 0))

    def options(self, name: str) -> dict:
        opts = self.command.get(name, {})
        if not isinstance(opts, dict):
            raise ValidationError(f"command.{name} must be an object")
        return opts

    def control(self) -> np.ndarray:
        return load_control(self.raw.get("control", 0.0), self.grid, self.params.n_steps,
                            self.base)

    def initial_data(self) -> InitialData:
        """Compatible initial data from ``phi0`` or by reconstruction from ``eta0``."""
        from .state import reconstruct_phi0

        block = self.raw.get("initial", {})
        g, pot = self.grid, self.params.potential
        sigma0 = eval_field(block.get("sigma0", 0.0), g, self.base)
        if "eta0" in block:
            eta0 = eval_field(block["eta0"], g, self.base)
            return reconstruct_phi0(eta0, self.params.alpha, pot, g, sigma0=sigma0)
        phi0 = eval_field(block.get("phi0", 0.0), g, self.base)
        return compatible_initial_data(g, pot, phi0, sigma0)


def _model(block: dict) -> ModelParams:
    if not isinstance(block, dict):
        raise ValidationError("'model' block is required")
    gb = block.get("grid", {})
    grid = build_grid(_num(gb, "dim", 1, int), _num(gb, "n", 65, int),
                      gb.get("extent", 1.0))
    pot_block = dict(block.get("potential", {"name": "regular_quartic"}))
    pot = potential_by_name(pot_block.pop("name", "regular_quartic"), **pot_block)
    pr_block = dict(block.get("proliferation", {"name": "zero"}))
    prolif = prolif_by_name(pr_block.pop("name", "zero"), **pr_block)
    params = ModelParams(
        alpha=_num(block, "alpha"),
        beta=_num(block, "beta", 0.0),
        potential=pot,
        prolif=prolif,
        grid=grid,
        t_final=_num(block, "t_final", 1.0),
        n_steps=_num(block, "n_steps", 100, int),
        newton_tol=_num(block, "newton_tol", 1e-8),
        linear_tol=_num(block, "linear_tol", 1e-10),
        yosida_eps=_num(block, "yosida_eps", 0.0),
        newton_max_iter=_num(block, "newton_max_iter", 50, int),
    )
    return params.validate()


def _target(spec, column, params, base, final=False):
    g, n_levels = params.grid, params.n_steps + 1
    if isinstance(spec, dict) and "from_run" in spec:
        levels = load_run_levels(_rel(spec["from_run"], base), column, g, n_levels)
        return levels[-1] if final else levels
    return eval_field(spec, g, base)


def _problem(block: dict, params: ModelParams, base) -> ControlProblem:
    w = block.get("weights", {})
    bounds = block.get("bounds", {})
    g = params.grid
    lo = eval_field(bounds["lo"], g, base) if "lo" in bounds else -np.inf
    hi = eval_field(bounds["hi"], g, base) if "hi" in bounds else np.inf
    return ControlProblem(
        b0=_num(w, "b0", 0.0), b1=_num(w, "b1", 0.0),
        b2=_num(w, "b2", 0.0), b3=_num(w, "b3", 0.0),
        phi_q=_target(block.get("phi_q", 0.0), "phi", params, base),
        sigma_q=_target(block.get("sigma_q", 0.0), "sigma", params, base),
        sigma_omega=_target(block.get("sigma_omega", 0.0), "sigma", params, base, final=True),
        u_lo=lo, u_hi=hi,
    )


def parse_config(raw: dict, base: Path | None = None) -> RunConfig:
    """Validate a config document; every gate runs before any solve."""
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    if raw.get("version") != CONFIG_VERSION:
        raise ValidationError(f"unsupported config version {raw.get('version')!r}")
    params = _model(raw.get("model"))
    problem = _problem(raw["problem"], params, base) if "problem" in raw else None
    command = raw.get("command", {})
    if not isinstance(command, dict):
        raise ValidationError("'command' must be an object")
    return RunConfig(params, raw, base, problem, dict(command))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read config {str(path)!r}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {str(path)!r} is not valid JSON: {exc}") from None
    return parse_config(raw, path.parent)
