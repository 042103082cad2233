"""Double-well potentials split as ``F = B_hat + pi_hat`` and their Yosida regularization.

All callables are vectorized over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import PotentialRangeError, ValidationError

RANGE_LIMIT = 1e8
_REJECTED = {"logarithmic", "log", "double_obstacle", "obstacle"}

Fn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Potential:
    """Split potential with the constants the solvers need.

    ``l_stab`` bounds ``-F''`` from above (the smallness gate and the
    stabilization use it); ``l_lip`` is the Lipschitz constant of ``pi``.
    ``c_growth`` satisfies ``|B(r)| <= c_growth * (1 + B_hat(r))``.
    """

    b_hat: Fn
    b: Fn
    b_prime: Fn
    pi_hat: Fn
    pi: Fn
    pi_prime: Fn
    l_stab: float
    l_lip: float
    c_growth: float
    name: str = "custom"

    def check(self, samples: np.ndarray | None = None, rtol: float = 1e-10) -> None:
        """Validate the structural assumptions on sampled points."""
        r = np.linspace(-4.0, 4.0, 801) if samples is None else np.asarray(samples, float)
        zero = np.zeros(1)
        if abs(self.b_hat(zero)[0]) > rtol or abs(self.b(zero)[0]) > rtol:
            raise ValidationError("need B_hat(0) = 0 and B(0) = 0")
        if np.any(self.b_hat(r) < -rtol) or np.any(self.pi_hat(r) < -rtol):
            raise ValidationError("B_hat and pi_hat must be nonnegative")
        rng = np.random.default_rng(0)
        a, c = rng.choice(r, 200), rng.choice(r, 200)
        lam = rng.uniform(0, 1, 200)
        lhs = self.b_hat(lam * a + (1 - lam) * c)
        rhs = lam * self.b_hat(a) + (1 - lam) * self.b_hat(c)
        if np.any(lhs > rhs + rtol * (1 + np.abs(rhs))):
            raise ValidationError("B_hat is not convex on the samples")
        fpp = self.b_prime(r) + self.pi_prime(r)
        if np.any(fpp < -self.l_stab - rtol):
            raise ValidationError("F'' < -l_stab on the samples")
        if np.any(np.abs(self.pi_prime(r)) > self.l_lip + rtol):
            raise ValidationError("|pi'| exceeds l_lip on the samples")
        if np.any(np.abs(self.b(r)) > self.c_growth * (1 + self.b_hat(r)) + rtol):
            raise ValidationError("growth bound |B| <= C_B (1 + B_hat) fails")


def regular_potential() -> Potential:
    """``F(r) = (r^2 - 1)^2 / 4`` split at the wells ``|r| = 1``."""

    def b_hat(r):
        return 0.25 * np.maximum(r * r - 1.0, 0.0) ** 2

    def pi_hat(r):
        return 0.25 * np.maximum(1.0 - r * r, 0.0) ** 2

    def b(r):
        return np.where(np.abs(r) >= 1.0, r * (r * r - 1.0), 0.0)

    def pi(r):
        return np.where(np.abs(r) <= 1.0, r**3 - r, 0.0)

    def b_prime(r):
        return np.where(np.abs(r) >= 1.0, 3.0 * r * r - 1.0, 0.0)

    def pi_prime(r):
        return np.where(np.abs(r) < 1.0, 3.0 * r * r - 1.0, 0.0)

    # sup |B| / (1 + B_hat) is about 1.85
    return Potential(b_hat, b, b_prime, pi_hat, pi, pi_prime,
                     l_stab=1.0, l_lip=2.0, c_growth=2.0, name="regular_quartic")


def potential_by_name(name: str, **params) -> Potential:
    key = name.lower()
    if key in {"regular_quartic", "regular", "quartic"}:
        if params:
            raise ValidationError(f"regular_quartic takes no parameters, got {sorted(params)}")
        return regular_potential()
    if key in _REJECTED:
        raise ValidationError(
            f"potential {name!r} is singular; only smooth regular splits are supported")
    raise ValidationError(f"unknown potential {name!r}")


def _guard(r):
    r = np.asarray(r, dtype=float)
    if r.size and not np.all(np.abs(r) <= RANGE_LIMIT):
        raise PotentialRangeError(f"argument outside [-{RANGE_LIMIT:g}, {RANGE_LIMIT:g}]")
    return r


def eval_f(pot: Potential, r):
    r = _guard(r)
    return pot.b_hat(r) + pot.pi_hat(r)


def eval_fp(pot: Potential, r):
    r = _guard(r)
    return pot.b(r) + pot.pi(r)


def eval_fpp(pot: Potential, r):
    r = _guard(r)
    return pot.b_prime(r) + pot.pi_prime(r)


# ---------------------------------------------------------------------------
# Yosida regularization


def _check_eps(eps):
    if not 0.0 < eps < 1.0:
        raise ValidationError(f"Yosida parameter must lie in (0, 1), got {eps!r}")


def yosida_resolvent(pot: Potential, eps: float, r, tol: float = 1e-12,
                     max_iter: int = 200):
    """Solve ``s + eps * B(s) = r`` pointwise.

    Newton seeded at ``r``, falling back to bisection whenever a step leaves
    the bracket ``[min(r, 0) - |r|, max(r, 0) + |r|]``.
    """
    _check_eps(eps)
    r = _guard(r)
    scalar = r.ndim == 0
    r = np.atleast_1d(r).astype(float)
    lo = np.minimum(r, 0.0) - np.abs(r)
    hi = np.maximum(r, 0.0) + np.abs(r)
    s = r.copy()
    scale = np.maximum(1.0, np.abs(r))
    for _ in range(max_iter):
        g = s + eps * pot.b(s) - r
        done = np.abs(g) <= tol * scale
        if np.all(done):
            break
        lo = np.where(g < 0, s, lo)
        hi = np.where(g > 0, s, hi)
        dg = 1.0 + eps * pot.b_prime(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            trial = s - g / dg
        bad = ~np.isfinite(trial) | (trial <= lo) | (trial >= hi)
        trial = np.where(bad, 0.5 * (lo + hi), trial)
        s = np.where(done, s, trial)
    return s[0] if scalar else s


def yosida_b(pot: Potential, eps: float, r):
    s = yosida_resolvent(pot, eps, r)
    return (np.asarray(r, float) - s) / eps


def yosida_bhat(pot: Potential, eps: float, r):
    r = np.asarray(r, float)
    s = yosida_resolvent(pot, eps, r)
    return (r - s) ** 2 / (2.0 * eps) + pot.b_hat(s)


def yosida_b_prime(pot: Potential, eps: float, r):
    """Derivative of ``B_eps``: ``B'(s) / (1 + eps B'(s))`` at the resolvent."""
    s = yosida_resolvent(pot, eps, r)
    bp = pot.b_prime(s)
    return bp / (1.0 + eps * bp)


@dataclass(frozen=True)
class RegularizedPotential:
    """``F`` itself (``eps == 0``) or ``F_eps = B_hat_eps + pi_hat``."""

    pot: Potential
    eps: float = 0.0

    def __post_init__(self):
        if self.eps != 0.0:
            _check_eps(self.eps)

    def f(self, r):
        if self.eps == 0.0:
            return eval_f(self.pot, r)
        return yosida_bhat(self.pot, self.eps, r) + self.pot.pi_hat(_guard(r))

    def fp(self, r):
        if self.eps == 0.0:
            return eval_fp(self.pot, r)
        return yosida_b(self.pot, self.eps, r) + self.pot.pi(_guard(r))

    def fpp(self, r):
        if self.eps == 0.0:
            return eval_fpp(self.pot, r)
        return yosida_b_prime(self.pot, self.eps, r) + self.pot.pi_prime(_guard(r))
