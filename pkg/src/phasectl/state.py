"""Forward solvers for the relaxed (beta > 0) and limit (beta = 0) state systems.

Both systems are advanced with the same monolithic implicit Euler step,

    alpha (mu+ - mu) + (phi+ - phi) - tau lap mu+ - tau P(phi+)(sigma+ - mu+) = 0
    mu+ - beta (phi+ - phi) / tau + lap phi+ - F'(phi+)                    = 0
    (sigma+ - sigma) - tau lap sigma+ + tau P(phi+)(sigma+ - mu+) - tau u+ = 0

solved by Newton with a sparse direct inner solve. For ``beta = 0`` the
second row loses its time derivative and the first row advances
``alpha mu + phi``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import grid as gr
from .errors import NewtonError, SmallnessError, SolverError, ValidationError
from .grid import Grid, LinearOperatorSpec, newton_solve
from .potentials import Potential, RegularizedPotential, eval_fp, eval_fpp


@dataclass(frozen=True)
class ProliferationFn:
    p: Callable[[np.ndarray], np.ndarray]
    p_prime: Callable[[np.ndarray], np.ndarray]
    bound: float
    lip: float
    name: str = "custom"

    def check(self, samples=None, rtol=1e-12):
        r = np.linspace(-5, 5, 1001) if samples is None else np.asarray(samples, float)
        vals = self.p(r)
        if np.any(vals < -rtol) or np.any(vals > self.bound + rtol):
            raise ValidationError("P must satisfy 0 <= P <= bound")
        if np.any(np.abs(self.p_prime(r)) > self.lip + rtol):
            raise ValidationError("|P'| exceeds the declared Lipschitz constant")


def constant_prolif(c: float) -> ProliferationFn:
    if c < 0:
        raise ValidationError("proliferation rate must be nonnegative")
    return ProliferationFn(lambda r: np.full(np.shape(r), float(c)),
                           lambda r: np.zeros(np.shape(r)), bound=float(c), lip=0.0,
                           name="constant")


def zero_prolif() -> ProliferationFn:
    return constant_prolif(0.0)


def sigmoid_prolif(p0: float = 1.0, k: float = 1.0) -> ProliferationFn:
    """``P(r) = p0 (1 + tanh(k r)) / 2``: bounded, smooth, Lipschitz."""
    if p0 < 0 or k < 0:
        raise ValidationError("sigmoid proliferation needs p0 >= 0 and k >= 0")

    def p(r):
        return 0.5 * p0 * (1.0 + np.tanh(k * r))

    def p_prime(r):
        return 0.5 * p0 * k / np.cosh(k * r) ** 2

    return ProliferationFn(p, p_prime, bound=p0, lip=0.5 * p0 * k, name="sigmoid")


def prolif_by_name(name: str, **params) -> ProliferationFn:
    makers = {"zero": zero_prolif, "constant": constant_prolif, "sigmoid": sigmoid_prolif}
    if name not in makers:
        raise ValidationError(f"unknown proliferation function {name!r}")
    try:
        return makers[name](**params)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for proliferation {name!r}: {exc}") from None


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    beta: float
    potential: Potential
    prolif: ProliferationFn
    grid: Grid
    t_final: float = 1.0
    n_steps: int = 100
    newton_tol: float = 1e-8
    linear_tol: float = 1e-10
    yosida_eps: float = 0.0
    newton_max_iter: int = 50

    @property
    def tau(self) -> float:
        return self.t_final / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_steps + 1)

    def validate(self) -> "ModelParams":
        if not (0.0 < self.alpha < 1.0):
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if not (self.beta >= 0.0 and math.isfinite(self.beta)):
            raise ValidationError(f"beta must be >= 0, got {self.beta!r}")
        if self.alpha * self.potential.l_stab >= 1.0:
            raise SmallnessError(
                f"alpha * l_stab = {self.alpha * self.potential.l_stab:g} must be < 1")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValidationError("n_steps must be a positive integer")
        if not (self.t_final > 0.0 and math.isfinite(self.t_final)):
            raise ValidationError("t_final must be positive")
        if not (self.newton_tol > 0 and self.linear_tol > 0):
            raise ValidationError("tolerances must be positive")
        if self.yosida_eps != 0.0 and not 0.0 < self.yosida_eps < 1.0:
            raise ValidationError("yosida_eps must be 0 or lie in (0, 1)")
        if self.alpha >= 1.0 / (1.0 + self.potential.l_stab) ** 2:
            warnings.warn(
                "alpha >= 1/(1 + l_stab)^2: uniqueness of the limit system is not "
                "guaranteed by the known theory", RuntimeWarning, stacklevel=2)
        return self

    def with_beta(self, beta: float) -> "ModelParams":
        return replace(self, beta=beta)

    def regularized(self) -> RegularizedPotential:
        return RegularizedPotential(self.potential, self.yosida_eps if self.beta > 0 else 0.0)


@dataclass
class InitialData:
    phi0: np.ndarray
    mu0: np.ndarray
    sigma0: np.ndarray

    def compatibility_residual(self, grid: Grid, pot: Potential) -> float:
        target = -gr.laplacian_apply(grid, self.phi0) + eval_fp(pot, self.phi0)
        return gr.norm(grid, self.mu0 - target, "L2")


@dataclass
class StateTrajectory:
    grid: Grid
    times: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    sigma: np.ndarray
    newton_iters: list[int] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def tau(self) -> float:
        return float(self.times[1] - self.times[0])


def compatible_initial_data(grid: Grid, pot: Potential, phi0, sigma0=None) -> InitialData:
    """Initial data with ``mu0 = -lap phi0 + F'(phi0)``."""
    phi0 = _finite(grid, phi0, "phi0")
    sigma0 = np.zeros(grid.size) if sigma0 is None else _finite(grid, sigma0, "sigma0")
    mu0 = -gr.laplacian_apply(grid, phi0) + eval_fp(pot, phi0)
    return InitialData(phi0, mu0, sigma0)


def reconstruct_phi0(eta0, alpha: float, pot: Potential, grid: Grid,
                     tol: float = 1e-12, sigma0=None, max_iter: int = 50) -> InitialData:
    """Recover ``phi0`` from ``eta0 = alpha mu0 + phi0`` under compatibility.

    Solves ``-lap phi0 + (phi0 - eta0) / alpha + F'(phi0) = 0`` by Newton;
    the Jacobian ``-lap + 1/alpha + F''`` is SPD in the trapezoidal product
    whenever ``alpha * l_stab < 1``.
    """
    if alpha * pot.l_stab >= 1.0:
        raise SmallnessError(f"alpha * l_stab = {alpha * pot.l_stab:g} must be < 1")
    eta0 = _finite(grid, eta0, "eta0")
    lap = gr.laplacian_matrix(grid)
    w = gr.quadrature_weights(grid)
    diag_lap = lap.diagonal()

    def residual(phi):
        return -(lap @ phi) + (phi - eta0) / alpha + eval_fp(pot, phi)

    def jacobian(phi):
        d = 1.0 / alpha + eval_fpp(pot, phi)
        return LinearOperatorSpec(apply=lambda v: -(lap @ v) + d * v, spd=True,
                                  weights=w, diagonal=d - diag_lap)

    def wnorm(v):
        return math.sqrt(float(np.sum(w * v * v)))

    res = newton_solve(residual, jacobian, eta0.copy(), tol=tol, max_iter=max_iter,
                       norm=wnorm, linear_tol=min(1e-13, tol))
    data = compatible_initial_data(grid, pot, res.x, sigma0)
    return data


def _finite(grid: Grid, v, name: str) -> np.ndarray:
    v = np.asarray(v, float)
    v = grid.check(np.full(grid.size, float(v)) if v.ndim == 0 else v.copy())
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} contains non-finite values")
    return v


class _Stepper:
    """Holds the per-run operators for the implicit Euler step."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.grid = params.grid
        self.n = params.grid.size
        self.lap = gr.laplacian_matrix(params.grid)
        self.eye = sp.identity(self.n, format="csr")
        self.w3 = np.tile(gr.quadrature_weights(params.grid), 3)
        self.fpot = params.regularized()
        a, tau, eye, lap = params.alpha, params.tau, self.eye, self.lap
        base = sp.bmat([
            [a * eye - tau * lap, eye, None],
            [eye, lap, None],
            [None, None, eye - tau * lap],
        ])
        self.pattern = gr.PatternedMatrix(base, self.n, {
            "p00": (0, 0), "d01": (0, 1), "p02": (0, 2), "f11": (1, 1),
            "p20": (2, 0), "d21": (2, 1), "p22": (2, 2)})

    def norm(self, v):
        return math.sqrt(float(np.sum(self.w3 * v * v)))

    def residual(self, x, prev, u):
        n, a, b, tau = self.n, self.params.alpha, self.params.beta, self.params.tau
        mu, phi, sig = x[:n], x[n:2 * n], x[2 * n:]
        mu0, phi0, sig0 = prev
        lap = self.lap
        exch = self.params.prolif.p(phi) * (sig - mu)
        r1 = a * (mu - mu0) + (phi - phi0) - tau * (lap @ mu) - tau * exch
        r2 = mu + lap @ phi - self.fpot.fp(phi)
        if b > 0:
            r2 = r2 - b * (phi - phi0) / tau
        r3 = (sig - sig0) - tau * (lap @ sig) + tau * exch - tau * u
        return np.concatenate([r1, r2, r3])

    def jacobian(self, x):
        n, b, tau = self.n, self.params.beta, self.params.tau
        mu, phi, sig = x[:n], x[n:2 * n], x[2 * n:]
        pr = self.params.prolif
        tp = tau * pr.p(phi)
        tdp = tau * pr.p_prime(phi) * (sig - mu)
        return self.pattern.assemble(
            p00=tp, d01=-tdp, p02=-tp, f11=-(self.fpot.fpp(phi) + b / tau),
            p20=-tp, d21=tdp, p22=tp)

    def step(self, prev, u, index=None):
        guess = np.concatenate(prev)
        try:
            res = newton_solve(
                lambda x: self.residual(x, prev, u), self.jacobian, guess,
                tol=self.params.newton_tol, max_iter=self.params.newton_max_iter,
                norm=self.norm, linear_tol=self.params.linear_tol)
        except NewtonError as exc:
            exc.step_index = index
            raise type(exc)(f"step {index}: {exc}", exc.iterations, exc.residual,
                            index) from exc
        n = self.n
        x = res.x
        if not np.all(np.isfinite(x)):
            raise SolverError(f"step {index}: non-finite state")
        return (x[:n], x[n:2 * n], x[2 * n:]), res.iterations


def _check_control(params: ModelParams, u) -> np.ndarray:
    n, size = params.n_steps, params.grid.size
    u = np.asarray(u, dtype=float)
    if u.ndim == 0 or u.shape == (size,):
        u = np.broadcast_to(u, (n, size))
    if u.shape != (n, size):
        raise ValidationError(f"control must have shape ({n}, {size}), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValidationError("control contains non-finite values")
    return np.ascontiguousarray(u)


def step_state_beta(prev, u_next, params: ModelParams, tau: float | None = None):
    """One implicit Euler step of the relaxed system; returns ``(mu, phi, sigma)``."""
    if params.beta <= 0:
        raise ValidationError("step_state_beta needs beta > 0")
    if tau is not None and not math.isclose(tau, params.tau, rel_tol=1e-12):
        raise ValidationError("tau must equal t_final / n_steps")
    params.validate()
    stepper = _Stepper(params)
    prev = tuple(_finite(params.grid, v, "state") for v in prev)
    u_next = _finite(params.grid, u_next, "control")
    new, _ = stepper.step(prev, u_next)
    return new


def _solve(params: ModelParams, u, ics: InitialData) -> StateTrajectory:
    params.validate()
    u = _check_control(params, u)
    g = params.grid
    prev = (_finite(g, ics.mu0, "mu0"), _finite(g, ics.phi0, "phi0"),
            _finite(g, ics.sigma0, "sigma0"))
    stepper = _Stepper(params)
    n = params.n_steps
    mu = np.empty((n + 1, g.size))
    phi = np.empty_like(mu)
    sig = np.empty_like(mu)
    mu[0], phi[0], sig[0] = prev
    iters = []
    for k in range(1, n + 1):
        prev, it = stepper.step(prev, u[k - 1], index=k)
        mu[k], phi[k], sig[k] = prev
        iters.append(it)
    return StateTrajectory(g, params.times, mu, phi, sig, iters)


def solve_state_beta(params: ModelParams, u, ics: InitialData) -> StateTrajectory:
    if params.beta <= 0:
        raise ValidationError("solve_state_beta needs beta > 0")
    return _solve(params, u, ics)


def solve_state_limit(params: ModelParams, u, ics: InitialData) -> StateTrajectory:
    if params.beta != 0:
        raise ValidationError("solve_state_limit needs beta = 0")
    return _solve(params, u, ics)


def solve_state(params: ModelParams, u, ics: InitialData) -> StateTrajectory:
    """Dispatch on ``params.beta``."""
    return _solve(params, u, ics)


def mass_balance_residual(traj: StateTrajectory, u, alpha: float) -> float:
    """Max deviation from ``d/dt int(alpha mu + phi + sigma) = int u``."""
    g = traj.grid
    w = gr.quadrature_weights(g)
    u = np.asarray(u, float)
    if u.ndim == 0 or u.shape == (g.size,):
        u = np.broadcast_to(u, (traj.n_steps, g.size))
    mass = (alpha * traj.mu + traj.phi + traj.sigma) @ w
    supplied = np.concatenate([[0.0], np.cumsum(traj.tau * (u @ w))])
    dev = np.abs(mass - mass[0] - supplied)
    return float(np.max(dev) / max(1.0, abs(mass[0])))


def energy_series(traj: StateTrajectory, params: ModelParams) -> np.ndarray:
    """``alpha/2 |mu|^2 + 1/2 |grad phi|^2 + int F(phi) + 1/2 |sigma|^2`` per level."""
    g = traj.grid
    fpot = params.regularized()
    out = np.empty(len(traj.times))
    for k in range(len(traj.times)):
        out[k] = (0.5 * params.alpha * gr.inner_product(g, traj.mu[k], traj.mu[k])
                  + 0.5 * gr.gradient_norm_sq(g, traj.phi[k])
                  + gr.integrate(g, fpot.f(traj.phi[k]))
                  + 0.5 * gr.inner_product(g, traj.sigma[k], traj.sigma[k]))
    return out
