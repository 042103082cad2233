"""Tracking-type cost, reduced gradient, box projection and projected-gradient descent.

Controls are arrays of shape ``(n_steps, size)``: row ``n - 1`` is the control
on ``(t_{n-1}, t_n]``, sampled at the implicit endpoint. The L2(Q) pairing is
the right-endpoint rectangle rule in time times the trapezoid rule in space,
shared by the cost, the gradient pairing and the variational-inequality check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import grid as gr
from .adjoint import AdjointTrajectory, solve_adjoint
from .errors import SolverError, ValidationError
from .state import InitialData, ModelParams, StateTrajectory, solve_state


def _levels(v, n_levels, size, name):
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0 or arr.shape == (size,):
        return np.broadcast_to(arr, (n_levels, size))
    if arr.shape != (n_levels, size):
        raise ValidationError(f"{name} has shape {arr.shape}, expected ({n_levels}, {size})")
    return arr


@dataclass
class ControlProblem:
    b0: float
    b1: float
    b2: float
    b3: float
    phi_q: np.ndarray | float = 0.0
    sigma_q: np.ndarray | float = 0.0
    sigma_omega: np.ndarray | float = 0.0
    u_lo: np.ndarray | float = -np.inf
    u_hi: np.ndarray | float = np.inf
    # weight of a final-time phi tracking term; only 0 is consistent with the
    # limit adjoint (its final data force p(T) = 0)
    k: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> "ControlProblem":
        ws = [self.b0, self.b1, self.b2, self.b3]
        if any(not (math.isfinite(b) and b >= 0) for b in ws):
            raise ValidationError("weights b0..b3 must be finite and nonnegative")
        if all(b == 0 for b in ws):
            raise ValidationError("weights b0..b3 must not all vanish")
        if self.k != 0:
            raise ValidationError("a final-time phi tracking weight is not supported (k must be 0)")
        lo, hi = np.asarray(self.u_lo, float), np.asarray(self.u_hi, float)
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValidationError("bounds contain NaN")
        if np.any(lo > hi):
            raise ValidationError("need u_lo <= u_hi everywhere")
        return self

    def phi_q_levels(self, n_levels, size):
        return _levels(self.phi_q, n_levels, size, "phi_Q")

    def sigma_q_levels(self, n_levels, size):
        return _levels(self.sigma_q, n_levels, size, "sigma_Q")

    def sigma_omega_field(self, size):
        return _levels(self.sigma_omega, 1, size, "sigma_Omega")[0]

    def bounds(self, n_steps, size):
        return (_levels(self.u_lo, n_steps, size, "u_lo"),
                _levels(self.u_hi, n_steps, size, "u_hi"))

    def has_finite_bounds(self) -> bool:
        return bool(np.all(np.isfinite(self.u_lo)) and np.all(np.isfinite(self.u_hi)))


def evaluate_cost(state: StateTrajectory, u, prob: ControlProblem) -> float:
    g, tau, n = state.grid, state.tau, state.n_steps
    u = _levels(u, n, g.size, "u")
    phi_q = prob.phi_q_levels(n + 1, g.size)
    sigma_q = prob.sigma_q_levels(n + 1, g.size)
    cost = 0.0
    if prob.b1:
        cost += 0.5 * prob.b1 * gr.l2q_norm(g, tau, state.phi[1:] - phi_q[1:]) ** 2
    if prob.b2:
        cost += 0.5 * prob.b2 * gr.l2q_norm(g, tau, state.sigma[1:] - sigma_q[1:]) ** 2
    if prob.b3:
        d = state.sigma[-1] - prob.sigma_omega_field(g.size)
        cost += 0.5 * prob.b3 * gr.inner_product(g, d, d)
    if prob.b0:
        cost += 0.5 * prob.b0 * gr.l2q_norm(g, tau, u) ** 2
    return cost


def evaluate_adapted_cost(state: StateTrajectory, u, prob: ControlProblem, u_ref) -> float:
    """Cost plus ``1/2 ||u - u_ref||^2`` in L2(Q)."""
    g, n = state.grid, state.n_steps
    u = _levels(u, n, g.size, "u")
    u_ref = _levels(u_ref, n, g.size, "u_ref")
    return evaluate_cost(state, u, prob) + 0.5 * gr.l2q_norm(g, state.tau, u - u_ref) ** 2


def reduced_gradient(adj: AdjointTrajectory, u, prob: ControlProblem, adapted_ref=None):
    """``r + b0 u`` (``+ (u - u_ref)`` for the adapted cost) at control levels."""
    n, size = len(adj.times) - 1, adj.grid.size
    u = _levels(u, n, size, "u")
    g = adj.r[1:] + prob.b0 * u
    if adapted_ref is not None:
        g = g + (u - _levels(adapted_ref, n, size, "u_ref"))
    return np.array(g)


def project_box(values, prob: ControlProblem):
    v = np.asarray(values, dtype=float)
    lo = np.asarray(prob.u_lo, float)
    hi = np.asarray(prob.u_hi, float)
    return np.maximum(lo, np.minimum(hi, v))


# ---------------------------------------------------------------------------


class ReducedProblem:
    """Control-to-cost map with its adjoint gradient.

    ``final_layer`` selects the adjoint's final-data placement; the default
    ``"discrete"`` makes the gradient exact for the discrete cost, which the
    Armijo search relies on near a minimizer.
    """

    def __init__(self, params: ModelParams, prob: ControlProblem, ics: InitialData,
                 adapted_ref=None, final_layer: str = "discrete"):
        self.params = params.validate()
        self.prob = prob
        self.ics = ics
        self.final_layer = final_layer
        self.shape = (params.n_steps, params.grid.size)
        self.adapted_ref = (None if adapted_ref is None
                            else np.array(_levels(adapted_ref, *self.shape, "u_ref")))
        self.n_state_solves = 0

    def state(self, u) -> StateTrajectory:
        self.n_state_solves += 1
        return solve_state(self.params, u, self.ics)

    def cost(self, u, state=None) -> float:
        state = self.state(u) if state is None else state
        if self.adapted_ref is None:
            return evaluate_cost(state, u, self.prob)
        return evaluate_adapted_cost(state, u, self.prob, self.adapted_ref)

    def adjoint(self, state) -> AdjointTrajectory:
        return solve_adjoint(self.params, state, self.prob, self.final_layer)

    def gradient(self, u, state=None):
        state = self.state(u) if state is None else state
        adj = self.adjoint(state)
        return reduced_gradient(adj, u, self.prob, self.adapted_ref), adj

    def inner(self, a, b):
        return gr.l2q_inner(self.params.grid, self.params.tau, a, b)

    def l2q(self, a):
        return gr.l2q_norm(self.params.grid, self.params.tau, a)


@dataclass
class OptimizeReport:
    history: list[dict]
    u: np.ndarray
    state: StateTrajectory
    adjoint: AdjointTrajectory
    gradient: np.ndarray
    converged: bool
    message: str
    n_state_solves: int = 0

    @property
    def cost(self) -> float:
        return self.history[-1]["cost"]

    @property
    def stationarity(self) -> float:
        return self.history[-1]["stationarity"]

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "message": self.message,
            "iterations": len(self.history) - 1,
            "final_cost": self.cost,
            "final_stationarity": self.stationarity,
            "state_solves": self.n_state_solves,
            "newton_iterations_total": int(sum(h["newton_iters"] for h in self.history)),
        }


def stationarity(red: ReducedProblem, u, g, ref_step: float = 1.0) -> float:
    return red.l2q(u - project_box(u - ref_step * g, red.prob)) / ref_step


def optimize_projected_gradient(prob: ControlProblem, params: ModelParams, u_init,
                                ics: InitialData, max_iter: int = 200,
                                tol: float = 1e-6, armijo: float = 1e-4,
                                adapted_ref=None, final_layer: str = "discrete",
                                max_halvings: int = 40) -> OptimizeReport:
    """Projected gradient with Armijo backtracking on the reduced cost.

    Trial steps start from the Barzilai-Borwein length of the last accepted
    move and are halved until ``J(u_s) <= J(u) + armijo <g, u_s - u>``.
    Stops when ``||u - P(u - g)|| <= tol``.
    """
    red = ReducedProblem(params, prob, ics, adapted_ref, final_layer)
    u = np.array(_levels(u_init, *red.shape, "u_init"))
    lo, hi = prob.bounds(*red.shape)
    if np.any(u < lo) or np.any(u > hi):
        raise ValidationError("initial control is not admissible")

    state = red.state(u)
    cost = red.cost(u, state)
    g, adj = red.gradient(u, state)
    history = []
    step = 1.0
    newton_iters = int(sum(state.newton_iters))
    best = None
    converged, message = False, "max-iterations"
    for it in range(max_iter + 1):
        stat = stationarity(red, u, g)
        history.append({"iter": it, "cost": cost, "stationarity": stat,
                        "step": step if it else 0.0, "newton_iters": newton_iters})
        best = (u, state, adj, g)
        if stat <= tol:
            converged, message = True, "converged"
            break
        if it == max_iter:
            break
        newton_iters = 0
        s = step
        for _ in range(max_halvings + 1):
            u_s = project_box(u - s * g, prob)
            d = u_s - u
            try:
                st_s = red.state(u_s)
            except SolverError:
                s *= 0.5
                continue
            newton_iters += int(sum(st_s.newton_iters))
            c_s = red.cost(u_s, st_s)
            if c_s <= cost + armijo * red.inner(g, d):
                break
            s *= 0.5
        else:
            message = "line-search-failure"
            break
        g_s, adj_s = red.gradient(u_s, st_s)
        du, dg = u_s - u, g_s - g
        curv = red.inner(du, dg)
        step = red.inner(du, du) / curv if curv > 0 else min(2.0 * s, 1e6)
        step = float(np.clip(step, 1e-8, 1e8))
        u, state, cost, g, adj = u_s, st_s, c_s, g_s, adj_s
    u, state, adj, g = best
    return OptimizeReport(history, u, state, adj, g, converged, message, red.n_state_solves)


# ---------------------------------------------------------------------------
# verification reports


@dataclass
class VIReport:
    min_value: float
    sampled_values: np.ndarray
    extreme_values: tuple[float, float]
    scale: float
    kkt_violations: int
    kkt_max_violation: float
    band: float

    def passed(self, rel_tol: float = 1e-6) -> bool:
        return self.min_value >= -rel_tol * self.scale and self.kkt_violations == 0

    def to_dict(self) -> dict:
        return {
            "min_value": self.min_value,
            "extreme_values": list(self.extreme_values),
            "n_samples": int(len(self.sampled_values)),
            "scale": self.scale,
            "kkt_violations": self.kkt_violations,
            "kkt_max_violation": self.kkt_max_violation,
            "kkt_band": self.band,
        }


def check_variational_inequality(u, adj: AdjointTrajectory, prob: ControlProblem,
                                 n_samples: int = 100, seed: int = 0,
                                 adapted_ref=None, u_tol: float = 1e-8) -> VIReport:
    """Evaluate ``int_Q (r + b0 u)(v - u)`` on sampled admissible ``v``.

    The KKT check flags points where ``g > band`` but ``u`` is off the lower
    bound, or ``g < -band`` but ``u`` is off the upper bound, with
    ``band = 1e-6 ||g||_inf``.
    """
    if not prob.has_finite_bounds():
        raise ValidationError("the VI check samples the box and needs finite bounds")
    g_grid = adj.grid
    tau = float(adj.times[1] - adj.times[0])
    shape = (len(adj.times) - 1, g_grid.size)
    u = np.array(_levels(u, *shape, "u"))
    lo, hi = prob.bounds(*shape)
    g = reduced_gradient(adj, u, prob, adapted_ref)
    rng = np.random.default_rng(seed)
    vals = np.empty(n_samples)
    for i in range(n_samples):
        v = lo + (hi - lo) * rng.uniform(size=shape)
        vals[i] = gr.l2q_inner(g_grid, tau, g, v - u)
    ext = (gr.l2q_inner(g_grid, tau, g, lo - u), gr.l2q_inner(g_grid, tau, g, hi - u))
    min_value = float(min(vals.min(initial=np.inf), *ext))
    scale = gr.l2q_norm(g_grid, tau, g) * gr.l2q_norm(g_grid, tau, hi - lo)
    band = 1e-6 * float(np.max(np.abs(g))) if g.size else 0.0
    off_lo = np.abs(u - lo) > u_tol * np.maximum(1.0, np.abs(lo))
    off_hi = np.abs(u - hi) > u_tol * np.maximum(1.0, np.abs(hi))
    bad = ((g > band) & off_lo) | ((g < -band) & off_hi)
    viol = float(np.max(np.abs(g[bad]))) if np.any(bad) else 0.0
    return VIReport(min_value, vals, ext, scale, int(np.count_nonzero(bad)), viol, band)


@dataclass
class GradientCheckReport:
    rel_errors: np.ndarray
    adjoint_derivatives: np.ndarray
    fd_derivatives: np.ndarray
    step: float
    final_layer: str
    extra: dict = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return float(np.max(self.rel_errors))

    @property
    def median_rel_error(self) -> float:
        return float(np.median(self.rel_errors))

    def to_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "median_rel_error": self.median_rel_error,
            "rel_errors": [float(e) for e in self.rel_errors],
            "adjoint_derivatives": [float(x) for x in self.adjoint_derivatives],
            "fd_derivatives": [float(x) for x in self.fd_derivatives],
            "step": self.step,
            "final_layer": self.final_layer,
            **self.extra,
        }


def smooth_directions(params: ModelParams, count: int, seed: int = 0,
                      modes: int = 4) -> list[np.ndarray]:
    """Seeded random directions built from low cosine modes in space and time.

    Each direction is normalized to unit L2(Q) norm.
    """
    g = params.grid
    rng = np.random.default_rng(seed)
    t = params.times[1:] / params.t_final
    x = [c / length for c, length in zip(g.coords(), g.extent)]
    k = np.arange(modes)
    time_basis = np.cos(np.pi * k[:, None] * t[None, :])
    out = []
    for _ in range(count):
        coef_t = rng.standard_normal(modes) / (1.0 + k)
        space = np.ones(g.size)
        for xi in x:
            coef_x = rng.standard_normal(modes) / (1.0 + k)
            space = space * (coef_x @ np.cos(np.pi * k[:, None] * xi[None, :]))
        v = np.outer(coef_t @ time_basis, space)
        out.append(v / gr.l2q_norm(g, params.tau, v))
    return out


def fd_gradient_check(prob: ControlProblem, params: ModelParams, u, ics: InitialData,
                      directions: int = 5, seed: int = 0, eta: float = 1e-4,
                      final_layer: str = "continuous", floor: float = 1e-12,
                      adapted_ref=None, executor=None) -> GradientCheckReport:
    """Compare ``<g, v>`` with central differences of the reduced cost.

    Directions come from :func:`smooth_directions`; the difference step is
    ``eta * max(1, |J(u)|)``.
    """
    red = ReducedProblem(params, prob, ics, adapted_ref, final_layer)
    u = np.array(_levels(u, *red.shape, "u"))
    grad, _ = red.gradient(u)
    dirs = smooth_directions(params, directions, seed)
    h = eta * max(1.0, abs(red.cost(u)))

    def one(v):
        return (red.cost(u + h * v) - red.cost(u - h * v)) / (2.0 * h)

    if executor is None:
        fd = np.array([one(v) for v in dirs])
    else:
        fd = np.array(list(executor.map(one, dirs)))
    adj = np.array([red.inner(grad, v) for v in dirs])
    rel = np.abs(adj - fd) / np.maximum(np.abs(fd), floor)
    return GradientCheckReport(rel, adj, fd, h, final_layer)
