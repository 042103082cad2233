"""Sweeps over the relaxation parameter ``beta`` towards the limit ``beta = 0``.

Each sweep runs the relaxed problem for a decreasing list of ``beta`` values
plus one limit run on the same discretization, tabulates discrete norms and
distances to the limit, and evaluates trend verdicts. Per-``beta`` runs are
independent; rows are keyed by ``beta`` so aggregation does not depend on the
order in which an executor finishes them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import export
from .adjoint import solve_adjoint
from .control import ControlProblem, evaluate_cost, optimize_projected_gradient
from .errors import PhasectlError, ValidationError
from .grid import l2q_norm, spacetime_norm
from .state import InitialData, ModelParams, solve_state

DEFAULT_BETAS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4)


def check_betas(betas) -> list[float]:
    out = [float(b) for b in betas]
    if not out:
        raise ValidationError("need at least one beta")
    if any(not (math.isfinite(b) and b > 0) for b in out):
        raise ValidationError("sweep betas must be positive and finite")
    if any(b1 <= b2 for b1, b2 in zip(out, out[1:])):
        raise ValidationError("sweep betas must be strictly decreasing")
    return out


def decreasing_trend(values, allowed: int = 1, rtol: float = 0.0) -> tuple[bool, int]:
    """``(passed, violations)`` for a sequence expected to decrease.

    A step counts as a violation when it grows by more than ``rtol`` relative
    to the previous value; at most ``allowed`` violations pass. Non-finite
    entries always fail.
    """
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        return False, len(v)
    bad = int(np.count_nonzero(v[1:] > v[:-1] * (1.0 + rtol)))
    return bad <= allowed, bad


@dataclass
class SweepReport:
    kind: str
    betas: list[float]
    columns: list[str]
    rows: dict[float, dict[str, float]]
    limit: dict[str, float] = field(default_factory=dict)
    verdicts: dict[str, bool] = field(default_factory=dict)
    details: dict[str, dict] = field(default_factory=dict)
    failures: dict[float, str] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([self.rows[b].get(name, np.nan) for b in self.betas])

    @property
    def passed(self) -> bool:
        return not self.failures and all(self.verdicts.values())

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "betas": self.betas,
            "limit": self.limit,
            "verdicts": self.verdicts,
            "details": self.details,
            "failures": {export.fmt(b): msg for b, msg in self.failures.items()},
            "passed": self.passed,
        }

    def write(self, csv_path, json_path=None):
        export.write_csv(csv_path, ["beta", *self.columns],
                         ([b] + [self.rows[b].get(c, np.nan) for c in self.columns]
                          for b in self.betas))
        if json_path is not None:
            export.write_json(json_path, self.summary())


def _map(fn, betas, executor):
    """Run ``fn`` per beta; failures become messages instead of exceptions."""

    def safe(b):
        try:
            return b, fn(b), None
        except PhasectlError as exc:
            return b, None, f"{type(exc).__name__}: {exc}"

    results = map(safe, betas) if executor is None else executor.map(safe, betas)
    return {b: (val, err) for b, val, err in results}


def _trend(report, name, column, **kw):
    ok, bad = decreasing_trend(report.column(column), **kw)
    report.verdicts[name] = ok
    report.details[name] = {"column": column, "violations": bad}


def _fill(report, results):
    for b, (row, err) in results.items():
        if err is not None:
            report.failures[b] = err
            report.rows[b] = {c: np.nan for c in report.columns}
        else:
            report.rows[b] = row


def _bounded(report, column, factor):
    vals = report.column(column)
    ref = vals[-1]
    ok = bool(np.all(np.isfinite(vals)) and np.max(vals) <= factor * ref)
    report.verdicts[f"{column}_bounded"] = ok
    report.details[f"{column}_bounded"] = {
        "max": float(np.max(vals)), "smallest_beta_value": float(ref), "factor": factor}


# ---------------------------------------------------------------------------
# state


STATE_COLUMNS = [
    "sqrt_beta_dt_phi_Linf_H", "phi_H1_V", "phi_Linf_W", "phi_Linf_Q",
    "mu_H1_H", "mu_Linf_V", "mu_L2_W",
    "sigma_H1_H", "sigma_Linf_V", "sigma_L2_W", "norm_total",
    "gap_phi_Linf_H", "gap_phi_L2_Q", "gap_mu_Linf_H", "gap_mu_L2_Q",
    "gap_sigma_Linf_H", "gap_sigma_L2_Q", "beta_phi_L2_Q", "newton_iters",
]


def _state_norms(g, tau, beta, traj) -> dict[str, float]:
    dphi = np.diff(traj.phi, axis=0) / tau
    row = {
        "sqrt_beta_dt_phi_Linf_H": math.sqrt(beta) * spacetime_norm(g, tau, dphi, "Linf(H)"),
        "phi_H1_V": spacetime_norm(g, tau, traj.phi, "H1(V)"),
        "phi_Linf_W": spacetime_norm(g, tau, traj.phi, "Linf(W)"),
        "phi_Linf_Q": spacetime_norm(g, tau, traj.phi, "Linf(Q)"),
    }
    for name in ("mu", "sigma"):
        v = getattr(traj, name)
        row[f"{name}_H1_H"] = spacetime_norm(g, tau, v, "H1(H)")
        row[f"{name}_Linf_V"] = spacetime_norm(g, tau, v, "Linf(V)")
        row[f"{name}_L2_W"] = spacetime_norm(g, tau, v, "L2(W)")
    row["norm_total"] = sum(row.values())
    return row


def _gaps(g, tau, a, b, names) -> dict[str, float]:
    row = {}
    for name in names:
        d = getattr(a, name) - getattr(b, name)
        row[f"gap_{name}_Linf_H"] = spacetime_norm(g, tau, d, "Linf(H)")
        row[f"gap_{name}_L2_Q"] = spacetime_norm(g, tau, d, "L2(Q)")
    return row


def sweep_state(params: ModelParams, betas=DEFAULT_BETAS, u=0.0, ics: InitialData = None,
                executor=None, norm_factor: float = 1.1) -> SweepReport:
    """Relaxed states for each ``beta`` against the limit state.

    Verdicts: the ``phi`` gap in ``C0(H)`` and the ``mu``/``sigma`` gaps in
    ``L2(Q)`` decrease (one non-monotone step allowed), and ``norm_total`` stays
    within ``norm_factor`` of its smallest-``beta`` value.
    """
    betas = check_betas(betas)
    if ics is None:
        raise ValidationError("sweep_state needs initial data")
    g, tau = params.grid, params.tau
    limit = solve_state(params.with_beta(0.0), u, ics)

    def run(b):
        traj = solve_state(params.with_beta(b), u, ics)
        row = _state_norms(g, tau, b, traj)
        row.update(_gaps(g, tau, traj, limit, ("phi", "mu", "sigma")))
        row["beta_phi_L2_Q"] = b * spacetime_norm(g, tau, traj.phi, "L2(Q)")
        row["newton_iters"] = int(sum(traj.newton_iters))
        return row

    report = SweepReport("state", betas, list(STATE_COLUMNS), {})
    report.limit = _state_norms(g, tau, 0.0, limit)
    _fill(report, _map(run, betas, executor))
    _trend(report, "gap_phi_C0H_decreasing", "gap_phi_Linf_H")
    _trend(report, "gap_mu_L2Q_decreasing", "gap_mu_L2_Q")
    _trend(report, "gap_sigma_L2Q_decreasing", "gap_sigma_L2_Q")
    _bounded(report, "norm_total", norm_factor)
    return report


# ---------------------------------------------------------------------------
# adjoint


ADJOINT_COLUMNS = [
    "beta_dt_q_L2_H", "sqrt_beta_q_Linf_V", "q_L2_W",
    "p_H1_H", "p_Linf_V", "p_L2_W", "r_H1_H", "r_Linf_V", "r_L2_W", "norm_total",
    "gap_p_Linf_H", "gap_p_L2_Q", "gap_q_Linf_H", "gap_q_L2_Q",
    "gap_r_Linf_H", "gap_r_L2_Q", "beta_q_L2_Q",
]


def _adjoint_norms(g, tau, beta, adj) -> dict[str, float]:
    dq = np.diff(adj.q, axis=0) / tau
    row = {
        "beta_dt_q_L2_H": beta * spacetime_norm(g, tau, dq, "L2(Q)"),
        "sqrt_beta_q_Linf_V": math.sqrt(beta) * spacetime_norm(g, tau, adj.q, "Linf(V)"),
        "q_L2_W": spacetime_norm(g, tau, adj.q, "L2(W)"),
    }
    for name in ("p", "r"):
        v = getattr(adj, name)
        row[f"{name}_H1_H"] = spacetime_norm(g, tau, v, "H1(H)")
        row[f"{name}_Linf_V"] = spacetime_norm(g, tau, v, "Linf(V)")
        row[f"{name}_L2_W"] = spacetime_norm(g, tau, v, "L2(W)")
    row["norm_total"] = sum(row.values())
    return row


def sweep_adjoint(params: ModelParams, betas=DEFAULT_BETAS, problem: ControlProblem = None,
                  u=0.0, ics: InitialData = None, final_layer: str = "continuous",
                  executor=None, decay: float = 1e-3) -> SweepReport:
    """Relaxed adjoints (each against its own relaxed state) versus the limit adjoint.

    Verdicts: ``beta ||q_beta||_{L2(Q)}`` at the smallest ``beta`` is at most
    ``decay`` times its value at the largest, and the ``p``/``r`` gaps in
    ``L2(Q)`` decrease (one non-monotone step allowed).
    """
    betas = check_betas(betas)
    if problem is None or ics is None:
        raise ValidationError("sweep_adjoint needs a control problem and initial data")
    g, tau = params.grid, params.tau
    lp = params.with_beta(0.0)
    limit = solve_adjoint(lp, solve_state(lp, u, ics), problem, final_layer)

    def run(b):
        pb = params.with_beta(b)
        adj = solve_adjoint(pb, solve_state(pb, u, ics), problem, final_layer)
        row = _adjoint_norms(g, tau, b, adj)
        row.update(_gaps(g, tau, adj, limit, ("p", "q", "r")))
        row["beta_q_L2_Q"] = b * spacetime_norm(g, tau, adj.q, "L2(Q)")
        return row

    report = SweepReport("adjoint", betas, list(ADJOINT_COLUMNS), {})
    report.limit = _adjoint_norms(g, tau, 0.0, limit)
    _fill(report, _map(run, betas, executor))
    bq = report.column("beta_q_L2_Q")
    ok = bool(np.all(np.isfinite(bq)) and bq[-1] <= decay * bq[0])
    report.verdicts["beta_q_decay"] = ok
    report.details["beta_q_decay"] = {
        "first": float(bq[0]), "last": float(bq[-1]),
        "ratio": float(bq[-1] / bq[0]) if bq[0] > 0 else 0.0, "required": decay}
    _trend(report, "gap_p_L2Q_decreasing", "gap_p_L2_Q")
    _trend(report, "gap_r_L2Q_decreasing", "gap_r_L2_Q")
    return report


# ---------------------------------------------------------------------------
# optimal controls


CONTROL_COLUMNS = [
    "gap_u_L2_Q", "adapted_cost", "cost", "cost_gap", "rel_cost_gap",
    "stationarity", "iterations", "converged",
]


def sweep_optimal_controls(problem: ControlProblem, params: ModelParams, betas=DEFAULT_BETAS,
                           u_bar=None, ics: InitialData = None, executor=None,
                           final_gap_ratio: float = 0.1, cost_rtol: float = 0.05,
                           **opt) -> SweepReport:
    """Minimize the adapted cost for each ``beta`` around a limit optimizer ``u_bar``.

    Each run starts from ``u_bar``. Verdicts: the control gap decreases, its
    last value is at most ``final_gap_ratio`` of its first, the adapted cost at
    the smallest ``beta`` is within ``cost_rtol`` of ``J(u_bar)``, and every
    run converged. ``opt`` is forwarded to the optimizer.
    """
    betas = check_betas(betas)
    if u_bar is None or ics is None:
        raise ValidationError("sweep_optimal_controls needs u_bar and initial data")
    g, tau = params.grid, params.tau
    u_bar = np.array(np.broadcast_to(np.asarray(u_bar, float),
                                     (params.n_steps, g.size)))
    lp = params.with_beta(0.0)
    ref_state = solve_state(lp, u_bar, ics)
    j_bar = evaluate_cost(ref_state, u_bar, problem)

    def run(b):
        pb = params.with_beta(b)
        rep = optimize_projected_gradient(problem, pb, u_bar, ics, adapted_ref=u_bar, **opt)
        cost = evaluate_cost(rep.state, rep.u, problem)
        return {
            "gap_u_L2_Q": l2q_norm(g, tau, rep.u - u_bar),
            "adapted_cost": rep.cost,
            "cost": cost,
            "cost_gap": abs(rep.cost - j_bar),
            "rel_cost_gap": abs(rep.cost - j_bar) / max(abs(j_bar), 1e-300),
            "stationarity": rep.stationarity,
            "iterations": len(rep.history) - 1,
            "converged": bool(rep.converged),
        }

    report = SweepReport("controls", betas, list(CONTROL_COLUMNS), {})
    report.limit = {"cost": j_bar}
    _fill(report, _map(run, betas, executor))
    _trend(report, "gap_u_decreasing", "gap_u_L2_Q")
    gaps = report.column("gap_u_L2_Q")
    ok = bool(np.all(np.isfinite(gaps)) and gaps[-1] <= final_gap_ratio * gaps[0])
    report.verdicts["gap_u_final_ratio"] = ok
    report.details["gap_u_final_ratio"] = {
        "first": float(gaps[0]), "last": float(gaps[-1]), "required": final_gap_ratio}
    rel = report.column("rel_cost_gap")
    report.verdicts["adapted_cost_converges"] = bool(np.isfinite(rel[-1]) and rel[-1] <= cost_rtol)
    report.details["adapted_cost_converges"] = {"rel_gap": float(rel[-1]), "required": cost_rtol}
    conv = report.column("converged")
    report.verdicts["all_converged"] = bool(np.all(conv == 1.0))
    return report
