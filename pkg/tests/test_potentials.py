import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phasectl import potentials as pt
from phasectl.errors import PotentialRangeError, ValidationError

POT = pt.regular_potential()
reals = st.floats(-3, 3, allow_nan=False)


def test_quartic_values():
    r = np.array([-1.0, 0.0, 1.0, 2.0])
    np.testing.assert_allclose(pt.eval_f(POT, r), [0, 0.25, 0, 2.25])
    np.testing.assert_allclose(pt.eval_fp(POT, r), r**3 - r)
    np.testing.assert_allclose(pt.eval_fpp(POT, r), 3 * r**2 - 1)


def test_structural_assumptions_hold():
    POT.check()
    assert POT.l_stab == 1.0
    assert np.min(pt.eval_fpp(POT, np.linspace(-3, 3, 601))) >= -POT.l_stab


@settings(max_examples=60, deadline=None)
@given(reals)
def test_derivatives_match_centered_differences(r):
    h = 1e-5
    fd1 = (pt.eval_f(POT, np.array([r + h])) - pt.eval_f(POT, np.array([r - h]))) / (2 * h)
    fd2 = (pt.eval_fp(POT, np.array([r + h])) - pt.eval_fp(POT, np.array([r - h]))) / (2 * h)
    assert fd1[0] == pytest.approx(pt.eval_fp(POT, np.array([r]))[0], abs=1e-8)
    assert fd2[0] == pytest.approx(pt.eval_fpp(POT, np.array([r]))[0], abs=1e-6)


def test_split_parts_are_consistent():
    r = np.linspace(-2, 2, 41)
    np.testing.assert_allclose(POT.b_hat(r) + POT.pi_hat(r), 0.25 * (r**2 - 1) ** 2)
    np.testing.assert_allclose(POT.b(r) + POT.pi(r), r**3 - r, atol=1e-14)


def test_named_lookup():
    assert pt.potential_by_name("regular_quartic").name == "regular_quartic"
    for bad in ("logarithmic", "double_obstacle"):
        with pytest.raises(ValidationError):
            pt.potential_by_name(bad)
    with pytest.raises(ValidationError):
        pt.potential_by_name("nope")


def test_range_guard():
    with pytest.raises(PotentialRangeError):
        pt.eval_f(POT, np.array([1e9]))
    with pytest.raises(PotentialRangeError):
        pt.eval_fp(POT, np.array([np.nan]))


def test_check_rejects_broken_potential():
    broken = pt.Potential(POT.b_hat, POT.b, POT.b_prime, POT.pi_hat, POT.pi, POT.pi_prime,
                          l_stab=0.5, l_lip=2.0, c_growth=2.0)
    with pytest.raises(ValidationError):
        broken.check()


@pytest.mark.parametrize("eps", [1e-1, 1e-3, 1e-5])
def test_resolvent_solves_its_equation(eps):
    r = np.linspace(-5, 5, 101)
    s = pt.yosida_resolvent(POT, eps, r)
    np.testing.assert_allclose(s + eps * POT.b(s), r, atol=1e-11)
    # the resolvent is a contraction towards zero
    assert np.all(np.abs(s) <= np.abs(r) + 1e-15)


def test_yosida_derivative_formulas():
    eps, h = 1e-2, 1e-6
    r = np.array([-2.5, -1.2, 0.3, 1.7, 3.0])
    fd_b = (pt.yosida_b(POT, eps, r + h) - pt.yosida_b(POT, eps, r - h)) / (2 * h)
    np.testing.assert_allclose(pt.yosida_b_prime(POT, eps, r), fd_b, rtol=1e-5, atol=1e-7)
    fd_hat = (pt.yosida_bhat(POT, eps, r + h) - pt.yosida_bhat(POT, eps, r - h)) / (2 * h)
    np.testing.assert_allclose(pt.yosida_b(POT, eps, r), fd_hat, rtol=1e-6, atol=1e-8)


def test_yosida_lipschitz_bound():
    eps = 1e-2
    r = np.linspace(-10, 10, 2001)
    assert np.max(pt.yosida_b_prime(POT, eps, r)) <= 1 / eps


def test_yosida_eps_validated():
    with pytest.raises(ValidationError):
        pt.yosida_b(POT, 0.0, np.array([1.0]))
    with pytest.raises(ValidationError):
        pt.RegularizedPotential(POT, 2.0)


def test_regularized_potential_reduces_to_f():
    r = np.linspace(-2, 2, 9)
    rp = pt.RegularizedPotential(POT)
    np.testing.assert_allclose(rp.f(r), pt.eval_f(POT, r))
    np.testing.assert_allclose(rp.fp(r), pt.eval_fp(POT, r))
    rp = pt.RegularizedPotential(POT, 1e-8)
    np.testing.assert_allclose(rp.fp(r), pt.eval_fp(POT, r), atol=1e-6)
