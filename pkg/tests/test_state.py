import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bisect, rel_linf, sigmoid, state_ode
from phasectl import grid as gr
from phasectl.errors import GridMismatchError, SmallnessError, ValidationError
from phasectl.potentials import Potential, regular_potential
from phasectl.state import (
    InitialData,
    ModelParams,
    compatible_initial_data,
    constant_prolif,
    energy_series,
    mass_balance_residual,
    prolif_by_name,
    reconstruct_phi0,
    sigmoid_prolif,
    solve_state,
    solve_state_beta,
    solve_state_limit,
    step_state_beta,
    zero_prolif,
)

POT = regular_potential()


def make_params(grid, beta=0.0, alpha=0.1, prolif=None, **kw):
    return ModelParams(alpha=alpha, beta=beta, potential=POT,
                       prolif=prolif or sigmoid_prolif(1.0, 2.0), grid=grid, **kw)


def test_validation_gates():
    g = gr.build_grid(1, 9)
    with pytest.raises(ValidationError):
        make_params(g, alpha=1.0).validate()
    with pytest.raises(ValidationError):
        make_params(g, beta=-0.1).validate()
    with pytest.raises(ValidationError):
        make_params(g, n_steps=0).validate()
    steep = Potential(POT.b_hat, POT.b, POT.b_prime, POT.pi_hat, POT.pi, POT.pi_prime,
                      l_stab=20.0, l_lip=2.0, c_growth=2.0)
    with pytest.raises(SmallnessError):
        ModelParams(alpha=0.1, beta=0.0, potential=steep, prolif=zero_prolif(),
                    grid=g).validate()
    with pytest.warns(RuntimeWarning):
        make_params(g, alpha=0.5).validate()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        make_params(g, alpha=0.1).validate()


def test_proliferation_functions():
    sig = sigmoid_prolif(2.0, 3.0)
    sig.check()
    assert sig.p(np.array([0.0]))[0] == pytest.approx(1.0)
    constant_prolif(0.7).check()
    with pytest.raises(ValidationError):
        prolif_by_name("exponential")
    with pytest.raises(ValidationError):
        prolif_by_name("sigmoid", rate=1.0)


def test_zero_data_gives_zero_trajectory():
    g = gr.build_grid(1, 9)
    params = make_params(g, n_steps=10)
    ics = compatible_initial_data(g, POT, np.zeros(g.size), np.zeros(g.size))
    traj = solve_state(params, 0.0, ics)
    for v in (traj.mu, traj.phi, traj.sigma):
        assert np.all(v == 0)


def test_compatible_initial_data():
    g = gr.build_grid(1, 17)
    x = g.coords()[0]
    ics = compatible_initial_data(g, POT, 0.5 * np.cos(np.pi * x), 0.2)
    assert ics.compatibility_residual(g, POT) < 1e-12


def test_reconstruct_constant_eta():
    # eta = alpha (phi^3 - phi) + phi with alpha = 0.1: phi^3 + 9 phi - 120 = 0
    g = gr.build_grid(1, 9)
    ics = reconstruct_phi0(np.full(g.size, 12.0), 0.1, POT, g)
    root = bisect(lambda p: p**3 + 9 * p - 120, 0.0, 10.0)
    assert root == pytest.approx(4.327657, abs=1e-6)
    np.testing.assert_allclose(ics.phi0, root, atol=1e-10)


def test_reconstruct_rejects_large_alpha():
    g = gr.build_grid(1, 9)
    with pytest.raises(SmallnessError):
        reconstruct_phi0(np.zeros(g.size), 1.0, POT, g)


@pytest.mark.parametrize("beta", [0.1, 0.0])
def test_constant_fields_match_ode(beta):
    g = gr.build_grid(1, 5)
    params = make_params(g, beta=beta, alpha=0.2, n_steps=200, newton_tol=1e-12)
    ics = compatible_initial_data(g, POT, np.full(g.size, 0.3), np.full(g.size, 0.8))
    traj = solve_state(params, 0.5, ics)
    ode = state_ode(0.2, beta, 0.3, 0.8, 0.5, sigmoid(1.0, 2.0))
    ref = np.array([ode(t) for t in traj.times])
    for i, name in enumerate(("mu", "phi", "sigma")):
        v = getattr(traj, name)
        assert np.ptp(v, axis=1).max() < 1e-12
        assert rel_linf(v[:, 0], ref[:, i]) <= 5 * params.tau


def test_first_order_in_time():
    g = gr.build_grid(1, 5)
    ode = state_ode(0.2, 0.05, 0.3, 0.8, 0.5, sigmoid(1.0, 2.0))
    errs = []
    for n in (50, 100, 200):
        params = make_params(g, beta=0.05, alpha=0.2, n_steps=n, newton_tol=1e-12)
        ics = compatible_initial_data(g, POT, np.full(g.size, 0.3), np.full(g.size, 0.8))
        traj = solve_state(params, 0.5, ics)
        errs.append(np.max(np.abs(traj.phi[-1, 0] - ode(1.0)[1])))
    assert 1.7 < errs[0] / errs[1] < 2.3 and 1.7 < errs[1] / errs[2] < 2.3


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.0, 0.05]))
def test_mass_balance_property(seed, beta):
    rng = np.random.default_rng(seed)
    g = gr.build_grid(1, 17)
    x = g.coords()[0]
    params = make_params(g, beta=beta, n_steps=10)
    phi0 = sum(rng.uniform(-0.3, 0.3) * np.cos(k * np.pi * x) for k in range(3))
    ics = compatible_initial_data(g, POT, phi0, rng.uniform(0, 1))
    u = rng.uniform(-1, 1, (10, g.size))
    traj = solve_state(params, u, ics)
    assert mass_balance_residual(traj, u, params.alpha) <= 10 * params.newton_tol


def test_energy_decreases_without_sources():
    g = gr.build_grid(1, 33)
    x = g.coords()[0]
    beta = 0.05
    params = ModelParams(alpha=0.1, beta=beta, potential=POT, prolif=zero_prolif(), grid=g,
                         n_steps=40)
    # tau <= 2 beta / l_stab keeps the implicit step dissipative
    assert params.tau <= 2 * beta / POT.l_stab
    ics = compatible_initial_data(g, POT, 0.8 * np.cos(2 * np.pi * x), 0.3 * np.cos(np.pi * x))
    e = energy_series(solve_state(params, 0.0, ics), params)
    assert np.all(np.diff(e) <= 1e-8)


def test_solver_dispatch_and_guards():
    g = gr.build_grid(1, 9)
    ics = compatible_initial_data(g, POT, np.zeros(g.size), np.zeros(g.size))
    with pytest.raises(ValidationError):
        solve_state_beta(make_params(g, n_steps=5), 0.0, ics)
    with pytest.raises(ValidationError):
        solve_state_limit(make_params(g, beta=0.1, n_steps=5), 0.0, ics)
    with pytest.raises(ValidationError):
        solve_state(make_params(g, n_steps=5), np.zeros((4, g.size)), ics)
    with pytest.raises(ValidationError):
        solve_state(make_params(g, n_steps=5), np.full((5, g.size), np.nan), ics)
    with pytest.raises(GridMismatchError):
        compatible_initial_data(g, POT, np.zeros(4), 0.0)


def test_single_step_matches_trajectory():
    g = gr.build_grid(1, 9)
    x = g.coords()[0]
    params = make_params(g, beta=0.1, n_steps=4)
    ics = compatible_initial_data(g, POT, 0.4 * np.cos(np.pi * x), 0.5)
    traj = solve_state(params, 0.2, ics)
    new = step_state_beta((ics.mu0, ics.phi0, ics.sigma0), np.full(g.size, 0.2), params)
    np.testing.assert_allclose(new[1], traj.phi[1], atol=1e-10)
    with pytest.raises(ValidationError):
        step_state_beta((ics.mu0, ics.phi0, ics.sigma0), np.zeros(g.size),
                        params, tau=0.5)


def test_two_dimensional_run_conserves_mass():
    g = gr.build_grid(2, 9)
    x, y = g.coords()
    params = make_params(g, beta=0.05, n_steps=5)
    ics = compatible_initial_data(g, POT, 0.5 * np.cos(np.pi * x) * np.cos(np.pi * y), 0.4)
    u = 0.3 * np.sin(np.pi * x)
    traj = solve_state(params, u, ics)
    assert mass_balance_residual(traj, u, params.alpha) < 1e-9


def test_initial_data_container():
    g = gr.build_grid(1, 5)
    ics = InitialData(np.zeros(5), np.ones(5), np.zeros(5))
    # mu0 = 1 is not -lap phi0 + F'(phi0) = 0
    assert ics.compatibility_residual(g, POT) == pytest.approx(1.0)
