"""Closed-form solutions on the slit disk (N = 2, straight crack).

Polar angle convention: ``theta`` in ``[0, 2 pi]`` with ``theta = 0`` the
upper side of the slit and ``theta = 2 pi`` the lower side.  The families

    CrackHarmonic:  a r^{k/2} cos(k theta / 2)                (-Lap u = 0)
    BesselMode:     a J_{k/2}(sqrt(lam) r) cos(k theta / 2)   (-Lap u = lam u)

have zero angular derivative on both slit sides, i.e. they satisfy the
homogeneous Neumann condition on the crack.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, special

from .errors import GradientSingular, HeightNotPositive

TWO_PI = 2 * np.pi


def _series_J(nu: float, x):
    """Power series of ``J_nu``; accurate where ``x`` is not large compared to ``nu``."""
    x = np.asarray(x, dtype=float)
    half = 0.5 * x
    term = half**nu / math.gamma(nu + 1)
    total = np.array(term, dtype=float)
    q = -(half * half)
    for m in range(1, 80):
        term = term * q / (m * (m + nu))
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return total


def _spherical_j_upward(n: int, x):
    x = np.asarray(x, dtype=float)
    s, c = np.sin(x), np.cos(x)
    j0 = s / x
    if n == 0:
        return j0
    j1 = s / (x * x) - c / x
    for m in range(1, n):
        j0, j1 = j1, (2 * m + 1) / x * j1 - j0
    return j1


def bessel_J_half_integer(order_twice: int, x):
    """``J_{order_twice/2}(x)`` for ``x >= 0``.

    Half-integer orders use the closed trigonometric forms
    ``J_{n+1/2}(x) = sqrt(2x/pi) j_n(x)`` (spherical Bessel functions by
    upward recurrence, stable for ``x > n``) and the power series below
    that.  Integer orders defer to ``scipy.special.jv``.
    """
    if order_twice < 0:
        raise ValueError("order_twice must be >= 0")
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("x must be >= 0")
    nu = order_twice / 2
    if order_twice % 2 == 0:
        out = special.jv(nu, xa)
        return float(out) if np.ndim(x) == 0 else out
    n = (order_twice - 1) // 2
    out = np.empty(xa.shape)
    small = xa <= n + 1.0
    if np.any(small):
        out[small] = _series_J(nu, xa[small])
    big = ~small
    if np.any(big):
        xb = xa[big]
        out[big] = np.sqrt(2 * xb / np.pi) * _spherical_j_upward(n, xb)
    return float(out) if np.ndim(x) == 0 else out


def _theta_from_side(x, y, side_tag):
    th = np.mod(np.arctan2(y, x), TWO_PI)
    if side_tag is not None:
        on_slit = (np.asarray(y) == 0) & (np.asarray(x) > 0)
        if side_tag == "lower":
            th = np.where(on_slit, TWO_PI, th)
        elif side_tag != "upper":
            raise ValueError("side_tag must be 'upper', 'lower' or None")
    return th


class _Solution:
    """Shared Cartesian plumbing; subclasses give polar value and derivatives."""

    lam: float = 0.0

    def value(self, x, y, theta=None):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        th = np.mod(np.arctan2(y, x), TWO_PI) if theta is None else np.asarray(theta, float)
        return self.value_polar(np.hypot(x, y), th)

    def gradient(self, x, y, theta=None):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        th = np.mod(np.arctan2(y, x), TWO_PI) if theta is None else np.asarray(theta, float)
        ur, ut = self.derivatives_polar(np.hypot(x, y), th)
        c, s = np.cos(th), np.sin(th)
        return np.stack([ur * c - ut * s, ur * s + ut * c], axis=-1)

    def eval(self, point, side_tag: Optional[str] = None):
        """``(value, gradient)`` at a single point; ``side_tag`` picks the slit side."""
        x, y = float(point[0]), float(point[1])
        th = float(_theta_from_side(x, y, side_tag))
        return float(self.value(x, y, th)), self.gradient(x, y, th)

    def potential(self, x, y):
        return np.full(np.shape(x), self.lam)


@dataclass(frozen=True)
class CrackHarmonic(_Solution):
    k: int
    amplitude: float = 1.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")

    @property
    def degree(self) -> float:
        return self.k / 2

    def value_polar(self, r, theta):
        nu = self.k / 2
        return self.amplitude * np.asarray(r, float) ** nu * np.cos(nu * np.asarray(theta, float))

    def derivatives_polar(self, r, theta):
        """``(du/dr, (1/r) du/dtheta)``."""
        r = np.asarray(r, float)
        theta = np.asarray(theta, float)
        nu = self.k / 2
        if self.k == 0:
            z = np.zeros(np.broadcast(r, theta).shape)
            return z, z
        if 0 < nu < 1 and np.any(r == 0):
            raise GradientSingular(f"gradient of the k={self.k} harmonic is singular at the tip")
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(r > 0, r ** (nu - 1), 0.0 if nu > 1 else 1.0)
        a = self.amplitude * nu * p
        return a * np.cos(nu * theta), -a * np.sin(nu * theta)


@dataclass(frozen=True)
class BesselMode(_Solution):
    k: int
    lam: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    @property
    def degree(self) -> float:
        return self.k / 2

    def _J(self, order_twice, x):
        return bessel_J_half_integer(order_twice, x)

    def value_polar(self, r, theta):
        nu = self.k / 2
        x = np.sqrt(self.lam) * np.asarray(r, float)
        return self.amplitude * self._J(self.k, x) * np.cos(nu * np.asarray(theta, float))

    def derivatives_polar(self, r, theta):
        r = np.asarray(r, float)
        theta = np.asarray(theta, float)
        nu = self.k / 2
        sl = np.sqrt(self.lam)
        if 0 < nu < 1 and np.any(r == 0):
            raise GradientSingular(f"gradient of the k={self.k} Bessel mode is singular at the tip")
        x = sl * r
        J = self._J(self.k, x)
        Jp1 = self._J(self.k + 2, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.k == 0:
                dJ = -Jp1
                J_over_r = np.zeros_like(x)
            else:
                # J_nu(x)/x -> x^{nu-1} / (2^nu Gamma(nu+1)) at x = 0
                lim = 0.5 if nu == 1 else 0.0
                J_over_x = np.where(x > 0, J / np.where(x > 0, x, 1.0), lim)
                dJ = nu * J_over_x - Jp1
                J_over_r = sl * J_over_x
        a = self.amplitude
        return a * sl * dJ * np.cos(nu * theta), -a * nu * J_over_r * np.sin(nu * theta)


@dataclass(frozen=True)
class Superposition(_Solution):
    """Sum of closed-form terms sharing one constant potential."""

    terms: tuple

    def __post_init__(self):
        lams = {t.lam for t in self.terms}
        if len(lams) > 1:
            raise ValueError("superposed terms must share the potential")
        object.__setattr__(self, "lam", lams.pop() if lams else 0.0)

    def value_polar(self, r, theta):
        return sum(t.value_polar(r, theta) for t in self.terms)

    def derivatives_polar(self, r, theta):
        parts = [t.derivatives_polar(r, theta) for t in self.terms]
        return sum(p[0] for p in parts), sum(p[1] for p in parts)


def _angular_constants(k: int):
    """``(int cos^2(k t/2), int sin^2(k t/2))`` over ``[0, 2 pi]``."""
    return (TWO_PI, 0.0) if k == 0 else (np.pi, np.pi)


def closed_form_HEN(solution, r: float):
    """``(H, E, N)`` at radius ``r`` for a single closed-form mode (``mu = 1``, ``A = Id``).

    The angular integrals are exact; the radial energy integral is adaptive.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    if not isinstance(solution, (CrackHarmonic, BesselMode)):
        raise TypeError("closed_form_HEN takes a single CrackHarmonic or BesselMode")
    cc, ss = _angular_constants(solution.k)
    a2 = solution.amplitude**2
    nu = solution.k / 2
    if isinstance(solution, CrackHarmonic):
        H = a2 * r**solution.k * cc

        def density(rho):
            return a2 * nu * nu * rho ** (solution.k - 2) * (cc + ss) * rho if solution.k else 0.0

    else:
        sl = np.sqrt(solution.lam)
        H = a2 * bessel_J_half_integer(solution.k, sl * r) ** 2 * cc
        lam = solution.lam

        def density(rho):
            x = sl * rho
            J = bessel_J_half_integer(solution.k, x)
            dJ = nu * J / x - bessel_J_half_integer(solution.k + 2, x)
            # |grad u|^2 - lam u^2 with the angular integrals split off
            return a2 * (lam * dJ * dJ * cc + (nu * J / rho) ** 2 * ss - lam * J * J * cc) * rho

    if H <= 0:
        raise HeightNotPositive("H(r) vanished for a closed-form solution")
    E, _ = integrate.quad(density, 0.0, r, epsabs=1e-14, epsrel=1e-13, limit=200)
    return H, E, E / H


def boundary_flux(solution, r: float, n_theta: int = 256) -> float:
    """``r^{2-N} oint u du/dnu dS`` for ``N = 2`` by angular Gauss quadrature."""
    from .numerics import angular_rule

    th, w = angular_rule(n_theta)
    u = solution.value_polar(r, th)
    ur, _ = solution.derivatives_polar(np.full_like(th, r), th)
    return float(r * np.sum(w * u * ur))
