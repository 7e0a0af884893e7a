"""Dispersion penalties and their convex-conjugate machinery.

A penalty is a strictly convex function ``f`` measuring the dispersion of a
weight vector.  The balancing solver never minimizes ``f`` directly: it works
on the conjugate side, where

    rho(t)  = t * g(t) - f(g(t)),    g = (f')^{-1},
    rho'(t) = g(t),

so ``rho_prime`` maps a dual score back to a primal weight.  ``zeta`` is the
reparameterization of the same transform used when the balancing group is
written with opposite sign conventions; for every strictly convex ``f`` it
collapses to ``zeta(y) = -rho(-y)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

__all__ = ["Penalty", "entropy", "quadratic", "custom_penalty"]


@dataclass(frozen=True)
class Penalty:
    """Strictly convex weight-dispersion penalty.

    Parameters
    ----------
    kind : str
        One of ``"entropy"``, ``"quadratic"`` or ``"custom"``.
    n_ref : int
        Sample-size reference.  For the quadratic penalty the default center
        is ``1/n_ref``; it also fixes the offset used when ``zeta`` is built
        numerically from its defining one-dimensional minimization.
    center : float or None
        Explicit quadratic center, overriding ``1/n_ref`` (``center=0`` gives
        the plain sum-of-squares penalty).  Ignored by the entropy penalty.
    f, f_prime, f_prime_inv : callables, optional
        Triple defining a custom penalty.  ``f`` must be strictly convex on
        its domain; this is checked by finite differences at construction.
    """

    kind: str
    n_ref: int = 1
    center: float | None = None
    f_fn: Callable | None = None
    f_prime_fn: Callable | None = None
    f_prime_inv_fn: Callable | None = None

    # -- primal side ---------------------------------------------------------

    @property
    def quad_center(self) -> float:
        if self.center is not None:
            return self.center
        return 1.0 / self.n_ref

    @property
    def domain(self) -> tuple[float, float]:
        """Open interval of admissible weights."""
        if self.kind == "entropy":
            return (0.0, np.inf)
        return (-np.inf, np.inf)

    def f(self, w):
        w = np.asarray(w, dtype=float)
        if self.kind == "entropy":
            # w log w -> 0 as w -> 0+; negative w is outside the domain.
            with np.errstate(divide="ignore", invalid="ignore"):
                val = np.where(w > 0, w * np.log(np.where(w > 0, w, 1.0)), 0.0)
            return np.where(w < 0, np.inf, val)
        if self.kind == "quadratic":
            return (w - self.quad_center) ** 2
        return np.vectorize(self.f_fn, otypes=[float])(w)

    def f_prime(self, w):
        w = np.asarray(w, dtype=float)
        if self.kind == "entropy":
            return np.log(w) + 1.0
        if self.kind == "quadratic":
            return 2.0 * (w - self.quad_center)
        return np.vectorize(self.f_prime_fn, otypes=[float])(w)

    # -- conjugate side ------------------------------------------------------

    def rho_prime(self, t):
        """Inverse marginal penalty (f')^{-1}; maps dual scores to weights."""
        t = np.asarray(t, dtype=float)
        if self.kind == "entropy":
            with np.errstate(over="ignore"):
                return np.exp(t - 1.0)
        if self.kind == "quadratic":
            return self.quad_center + t / 2.0
        return np.vectorize(self.f_prime_inv_fn, otypes=[float])(t)

    def rho(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "entropy":
            with np.errstate(over="ignore"):
                return np.exp(t - 1.0)
        if self.kind == "quadratic":
            return self.quad_center * t + t**2 / 4.0
        w = self.rho_prime(t)
        return t * w - self.f(w)

    def rho_second(self, t, fd_eps: float = 1e-6):
        t = np.asarray(t, dtype=float)
        if self.kind == "entropy":
            with np.errstate(over="ignore"):
                return np.exp(t - 1.0)
        if self.kind == "quadratic":
            return np.full_like(t, 0.5)
        return (self.rho_prime(t + fd_eps) - self.rho_prime(t - fd_eps)) / (2 * fd_eps)

    # -- first-step parameterization ------------------------------------------

    def zeta(self, y):
        """First-step dual transform; identical to ``-rho(-y)``."""
        return -self.rho(-np.asarray(y, dtype=float))

    def zeta_prime(self, y):
        return self.rho_prime(-np.asarray(y, dtype=float))

    # -- utilities -------------------------------------------------------------

    def with_n_ref(self, n: int) -> "Penalty":
        """Rebind the sample-size reference (quadratic centering 1/n)."""
        return replace(self, n_ref=int(n))

    def check_strict_convexity(self, points=None, fd_eps: float = 1e-5) -> None:
        """Verify f'' > 0 by central finite differences at sampled points."""
        if points is None:
            lo, hi = self.domain
            lo = max(lo, 1e-3)
            hi = min(hi, 10.0)
            points = np.linspace(lo + fd_eps, hi, 25)
        points = np.asarray(points, dtype=float)
        f2 = (self.f(points + fd_eps) - 2 * self.f(points) + self.f(points - fd_eps)) / fd_eps**2
        if not np.all(f2 > 0):
            bad = points[f2 <= 0]
            raise ValueError(f"penalty is not strictly convex near w={bad[:3]}")


def entropy(n_ref: int = 1) -> Penalty:
    """Entropy penalty f(w) = w log w; recovered weights are always positive."""
    return Penalty(kind="entropy", n_ref=n_ref)


def quadratic(n_ref: int | None = None, center: float | None = None) -> Penalty:
    """Quadratic penalty f(w) = (w - c)^2 with c = 1/n_ref (or explicit center)."""
    if n_ref is None and center is None:
        center = 0.0
    return Penalty(kind="quadratic", n_ref=n_ref or 1, center=center)


def custom_penalty(f, f_prime, f_prime_inv, n_ref: int = 1) -> Penalty:
    """Build a penalty from a user-supplied (f, f', (f')^{-1}) triple."""
    pen = Penalty(
        kind="custom",
        n_ref=n_ref,
        f_fn=f,
        f_prime_fn=f_prime,
        f_prime_inv_fn=f_prime_inv,
    )
    pen.check_strict_convexity()
    return pen
