"""Backward solvers for the adjoint systems of the relaxed and limit problems.

Each level ``n`` (from the final time backwards) solves the linear coupled
system, written here multiplied by ``tau``:

    beta (q+ - q) - (p+ - p) + tau (lap q - F''(phi) q + P'(phi)(sigma - mu)(r - p)) = tau b1 (phi - phi_Q)
    tau q - alpha (p+ - p) - tau lap p + tau P(phi)(p - r)                            = 0
    -(r+ - r) - tau lap r + tau P(phi)(r - p)                                         = tau b2 (sigma - sigma_Q)

with state coefficients frozen at level ``n``. ``beta = 0`` drops the first
time difference in ``q``, which then becomes an algebraic unknown per level.

Two placements of the final data are offered:

``"continuous"``
    ``p = q = 0`` (``p = 0`` for ``beta = 0``) and ``r = b3 (sigma(T) - sigma_Omega)``
    imposed at ``t_N``.
``"discrete"``
    the same data imposed one step past ``t_N``. The level equations above are
    then exactly the adjoint of the implicit Euler state scheme with the
    right-endpoint cost quadrature, so ``r + b0 u`` is the exact gradient of
    the discrete reduced cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import grid as gr
from .errors import SingularBlockError, ValidationError
from .state import ModelParams, StateTrajectory

FINAL_LAYERS = ("continuous", "discrete")


@dataclass
class AdjointTrajectory:
    grid: gr.Grid
    times: np.ndarray
    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    final_layer: str = "continuous"


@dataclass
class AdjointCoefficients:
    fpp: np.ndarray
    prolif: np.ndarray
    exchange: np.ndarray
    phi_forcing: np.ndarray
    sigma_forcing: np.ndarray
    final_r: np.ndarray


def adjoint_coefficients(params: ModelParams, state: StateTrajectory,
                         problem) -> AdjointCoefficients:
    if state.phi.shape != (params.n_steps + 1, params.grid.size):
        raise ValidationError("state trajectory does not match the model parameters")
    n_levels = params.n_steps + 1
    fpot = params.regularized()
    pr = params.prolif
    phi_q = problem.phi_q_levels(n_levels, params.grid.size)
    sigma_q = problem.sigma_q_levels(n_levels, params.grid.size)
    return AdjointCoefficients(
        fpp=fpot.fpp(state.phi),
        prolif=pr.p(state.phi),
        exchange=pr.p_prime(state.phi) * (state.sigma - state.mu),
        phi_forcing=problem.b1 * (state.phi - phi_q),
        sigma_forcing=problem.b2 * (state.sigma - sigma_q),
        final_r=problem.b3 * (state.sigma[-1] - problem.sigma_omega_field(params.grid.size)),
    )


def _level_pattern(params, beta, lap, eye):
    a, tau = params.alpha, params.tau
    base = sp.bmat([
        [eye, -beta * eye + tau * lap, None],
        [a * eye - tau * lap, tau * eye, None],
        [None, None, eye - tau * lap],
    ])
    return gr.PatternedMatrix(base, eye.shape[0], {
        "d00": (0, 0), "f01": (0, 1), "d02": (0, 2), "p10": (1, 0),
        "p12": (1, 2), "p20": (2, 0), "p22": (2, 2)})


def _level_matrix(pattern, tau, fpp, prolif, exchange):
    tp, td = tau * prolif, tau * exchange
    return pattern.assemble(d00=-td, f01=-tau * fpp, d02=td, p10=tp, p12=-tp,
                            p20=-tp, p22=tp)


def _solve_level(mat, rhs, level):
    try:
        x = spla.splu(mat).solve(rhs)
    except RuntimeError as exc:
        raise SingularBlockError(f"adjoint level {level}: {exc}", level) from exc
    if not np.all(np.isfinite(x)):
        raise SingularBlockError(f"adjoint level {level}: non-finite solution", level)
    return x


def _limit_final_q(params, lap, coef, r_final):
    # with p(T) = 0 the two p-equations give (lap - F'' - 1/alpha) q = rhs
    n = params.n_steps
    a = params.alpha
    mat = lap - sp.diags(coef.fpp[n] + 1.0 / a)
    rhs = (coef.phi_forcing[n] - coef.prolif[n] * r_final / a
           - coef.exchange[n] * r_final)
    return _solve_level(sp.csc_matrix(mat), rhs, n)


def _solve(params: ModelParams, state: StateTrajectory, problem,
           final_layer: str) -> AdjointTrajectory:
    if final_layer not in FINAL_LAYERS:
        raise ValidationError(f"final_layer must be one of {FINAL_LAYERS}")
    params.validate()
    g = params.grid
    size, n, tau, beta = g.size, params.n_steps, params.tau, params.beta
    coef = adjoint_coefficients(params, state, problem)
    lap = gr.laplacian_matrix(g)
    eye = sp.identity(size, format="csr")
    pattern = _level_pattern(params, beta, lap, eye)

    p = np.zeros((n + 1, size))
    q = np.zeros_like(p)
    r = np.zeros_like(p)
    if final_layer == "continuous":
        r[n] = coef.final_r
        if beta == 0:
            q[n] = _limit_final_q(params, lap, coef, r[n])
        p_next, q_next, r_next = p[n], q[n], r[n]
        levels = range(n - 1, -1, -1)
    else:
        p_next, q_next, r_next = np.zeros(size), np.zeros(size), coef.final_r
        levels = range(n, -1, -1)

    for k in levels:
        mat = _level_matrix(pattern, tau, coef.fpp[k], coef.prolif[k], coef.exchange[k])
        rhs = np.concatenate([
            tau * coef.phi_forcing[k] - beta * q_next + p_next,
            params.alpha * p_next,
            tau * coef.sigma_forcing[k] + r_next,
        ])
        x = _solve_level(mat, rhs, k)
        p[k], q[k], r[k] = x[:size], x[size:2 * size], x[2 * size:]
        p_next, q_next, r_next = p[k], q[k], r[k]
    return AdjointTrajectory(g, state.times.copy(), p, q, r, final_layer)


def solve_adjoint_beta(params: ModelParams, state: StateTrajectory, problem,
                       final_layer: str = "continuous") -> AdjointTrajectory:
    if params.beta <= 0:
        raise ValidationError("solve_adjoint_beta needs beta > 0")
    return _solve(params, state, problem, final_layer)


def solve_adjoint_limit(params: ModelParams, state: StateTrajectory, problem,
                        final_layer: str = "continuous") -> AdjointTrajectory:
    if params.beta != 0:
        raise ValidationError("solve_adjoint_limit needs beta = 0")
    return _solve(params, state, problem, final_layer)


def solve_adjoint(params: ModelParams, state: StateTrajectory, problem,
                  final_layer: str = "continuous") -> AdjointTrajectory:
    """Dispatch on ``params.beta``."""
    return _solve(params, state, problem, final_layer)
