"""Reference problem instances used by the CLI defaults and the test-suite."""

from __future__ import annotations

import numpy as np

from .control import ControlProblem
from .grid import build_grid
from .potentials import regular_potential
from .state import ModelParams, compatible_initial_data, sigmoid_prolif, solve_state


def coarse_tracking_instance(n: int = 33, n_steps: int = 50, beta: float = 0.0,
                             dim: int = 1, t_final: float = 1.0, alpha: float = 0.1,
                             newton_tol: float = 1e-10):
    """Smooth 1D/2D tracking problem with all four weights active.

    Returns ``(params, problem, ics, u)`` where ``u`` is an interior control.
    """
    g = build_grid(dim, n, 1.0)
    x = g.coords()
    pot = regular_potential()
    params = ModelParams(alpha=alpha, beta=beta, potential=pot,
                         prolif=sigmoid_prolif(1.0, 2.0), grid=g, t_final=t_final,
                         n_steps=n_steps, newton_tol=newton_tol)
    phi0 = 0.6 * np.cos(np.pi * x[0])
    if dim == 2:
        phi0 = phi0 * np.cos(np.pi * x[1])
    ics = compatible_initial_data(g, pot, phi0, 0.5 + 0.1 * np.cos(np.pi * x[0]))
    prob = ControlProblem(
        b0=1.0, b1=1.0, b2=0.5, b3=0.5,
        phi_q=0.5 * np.cos(np.pi * x[0]), sigma_q=0.4, sigma_omega=0.5,
        u_lo=-2.0, u_hi=2.0,
    )
    t = params.times[1:, None]
    u = 1.0 + 0.2 * np.sin(np.pi * x[0])[None, :] * np.cos(np.pi * t)
    return params, prob, ics, u


def synthetic_target_instance(n: int = 33, n_steps: int = 40, beta: float = 0.0,
                              b0: float = 0.5, u_lo: float = 0.2, u_hi: float = 1.0,
                              alpha: float = 0.1, newton_tol: float = 1e-12):
    """Targets produced by a forward run at a known admissible control ``u_dag``.

    Returns ``(params, problem, ics, u_dag)``.
    """
    g = build_grid(1, n, 1.0)
    x = g.coords()[0]
    pot = regular_potential()
    params = ModelParams(alpha=alpha, beta=beta, potential=pot,
                         prolif=sigmoid_prolif(1.0, 2.0), grid=g, t_final=1.0,
                         n_steps=n_steps, newton_tol=newton_tol)
    ics = compatible_initial_data(g, pot, 0.5 * np.cos(np.pi * x), 0.3)
    t = params.times[1:, None]
    u_dag = np.clip(0.6 * np.cos(np.pi * x)[None, :] * (1 + t) - 0.1, u_lo, u_hi)
    ref = solve_state(params, u_dag, ics)
    prob = ControlProblem(b0=b0, b1=1.0, b2=1.0, b3=1.0, phi_q=ref.phi,
                          sigma_q=ref.sigma, sigma_omega=ref.sigma[-1],
                          u_lo=u_lo, u_hi=u_hi)
    return params, prob, ics, u_dag
