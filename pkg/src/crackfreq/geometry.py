"""Crack-straightening geometry.

The curved crack ``{x_N = 0, x_{N-1} >= g(x')}`` is mapped onto the flat
half-hyperplane ``{y_N = 0, y_{N-1} >= 0}`` by the shear

    F(y', y_{N-1}, y_N) = (y', y_{N-1} + g(y'), y_N)

whose Jacobian has unit determinant.  Every coefficient field of the
straightened operator ``-div(A grad U)`` is derived from ``J_F``:

    A    = |det J_F| J_F^{-1} J_F^{-T}
    mu   = A y . y / |y|^2
    beta = A y / mu

All evaluators accept a single point of shape ``(N,)`` or a batch of shape
``(..., N)`` and are pure functions of their arguments.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidProfile

FD_STEP = 1e-6
ORIGIN_TOL = 1e-10


def _monomials_from_coefficients(dimension, coeffs):
    """Normalise the serialised ``g`` into ``((c, exponents), ...)``."""
    nv = dimension - 2
    terms = []
    for j, entry in enumerate(coeffs):
        if isinstance(entry, (list, tuple)):
            c, exps = entry
            exps = tuple(int(e) for e in exps)
            if len(exps) != nv or min(exps, default=0) < 0:
                raise InvalidProfile(f"bad monomial exponents {exps!r} for N={dimension}")
        else:
            if nv != 1:
                raise InvalidProfile(
                    "a plain coefficient list is only meaningful for N=3; "
                    "use [coefficient, [exponents]] monomials"
                )
            c, exps = entry, (j,)
        if float(c) != 0.0:
            terms.append((float(c), exps))
    return tuple(terms)


@dataclass(frozen=True)
class CrackProfile:
    """Crack edge ``x_{N-1} = g(x')`` for ``x'`` in ``R^{N-2}``.

    ``g`` is either a polynomial given as monomial ``terms`` (coefficient,
    exponent tuple) or an arbitrary callable ``func`` acting on arrays of
    shape ``(..., N-2)``.  For ``N = 2`` there is no ``g``: the crack is the
    half-line ``{x_1 >= 0}``.
    """

    dimension: int
    terms: tuple = ()
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lipschitz_grad_bound: float = 0.0

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 2:
            raise InvalidProfile("dimension must be an integer >= 2")
        if self.dimension == 2 and (self.terms or self.func is not None):
            raise InvalidProfile("N=2 admits only the trivial half-line profile")
        if self.terms and self.func is not None:
            raise InvalidProfile("give either polynomial terms or a callable, not both")
        if self.lipschitz_grad_bound < 0:
            raise InvalidProfile("lipschitz_grad_bound must be >= 0")
        for _, exps in self.terms:
            if len(exps) != self.dimension - 2:
                raise InvalidProfile("monomial exponent length must be N-2")

    @classmethod
    def flat(cls, dimension: int) -> "CrackProfile":
        return cls(dimension=dimension)

    @classmethod
    def from_coefficients(cls, dimension: int, coeffs: Sequence, lipschitz_grad_bound: float = 0.0):
        """Build from the serialised form.

        For ``N = 3`` ``coeffs`` may be a plain list ``[c0, c1, c2, ...]``
        (``g(t) = sum c_j t^j``); in general each entry is
        ``[c, [e_1, ..., e_{N-2}]]``.
        """
        if dimension == 2:
            if any(float(c[0] if isinstance(c, (list, tuple)) else c) for c in coeffs):
                raise InvalidProfile("N=2 admits only the trivial half-line profile")
            return cls(dimension=2, lipschitz_grad_bound=lipschitz_grad_bound)
        return cls(
            dimension=dimension,
            terms=_monomials_from_coefficients(dimension, coeffs),
            lipschitz_grad_bound=lipschitz_grad_bound,
        )

    @property
    def is_polynomial(self) -> bool:
        return self.func is None

    @property
    def nvars(self) -> int:
        return self.dimension - 2

    def g(self, yp):
        yp = np.asarray(yp, dtype=float)
        if self.func is not None:
            return np.asarray(self.func(yp), dtype=float)
        out = np.zeros(yp.shape[:-1])
        for c, exps in self.terms:
            out = out + c * np.prod(yp ** np.asarray(exps), axis=-1)
        return out

    def grad_g(self, yp):
        yp = np.asarray(yp, dtype=float)
        nv = self.nvars
        if self.func is not None:
            out = np.empty(yp.shape)
            for j in range(nv):
                e = np.zeros(nv)
                e[j] = FD_STEP
                out[..., j] = (self.g(yp + e) - self.g(yp - e)) / (2 * FD_STEP)
            return out
        out = np.zeros(yp.shape)
        for c, exps in self.terms:
            for j in range(nv):
                if exps[j] == 0:
                    continue
                d = list(exps)
                d[j] -= 1
                out[..., j] += c * exps[j] * np.prod(yp ** np.asarray(d), axis=-1)
        return out

    def hess_g(self, yp):
        yp = np.asarray(yp, dtype=float)
        nv = self.nvars
        out = np.zeros(yp.shape + (nv,))
        if self.func is not None:
            for j in range(nv):
                e = np.zeros(nv)
                e[j] = FD_STEP
                out[..., :, j] = (self.grad_g(yp + e) - self.grad_g(yp - e)) / (2 * FD_STEP)
            return out
        for c, exps in self.terms:
            for i in range(nv):
                for j in range(nv):
                    d = list(exps)
                    coef = c * d[i]
                    d[i] -= 1
                    coef *= d[j]
                    d[j] -= 1
                    if coef == 0:
                        continue
                    out[..., i, j] += coef * np.prod(yp ** np.asarray(d), axis=-1)
        return out

    def validate_origin(self):
        if self.dimension == 2:
            return
        z = np.zeros(self.nvars)
        g0 = float(self.g(z))
        if abs(g0) > ORIGIN_TOL:
            raise InvalidProfile(f"g(0) = {g0!r}, must vanish")
        # finite-difference gradient regardless of the representation
        grad = np.empty(self.nvars)
        for j in range(self.nvars):
            e = np.zeros(self.nvars)
            e[j] = FD_STEP
            grad[j] = (self.g(e) - self.g(-e)) / (2 * FD_STEP)
        if np.max(np.abs(grad)) > ORIGIN_TOL:
            raise InvalidProfile(f"grad g(0) = {grad!r}, must vanish")

    def to_dict(self) -> dict:
        if self.func is not None:
            raise InvalidProfile("callable profiles are not serialisable")
        if self.dimension == 3:
            deg = max((e[0] for _, e in self.terms), default=0)
            coeffs = [0.0] * (deg + 1)
            for c, (e,) in self.terms:
                coeffs[e] += c
            g = coeffs
        else:
            g = [[c, list(e)] for c, e in self.terms]
        return {"dimension": self.dimension, "g": g}


@dataclass(frozen=True)
class CrackGeometry:
    """Evaluators of the straightening map and its coefficient fields on ``B_{r1}``."""

    profile: CrackProfile
    r1: float
    analytic_jacobian: bool = False
    _eN1: int = field(init=False, repr=False, default=0)

    def __post_init__(self):
        object.__setattr__(self, "_eN1", self.profile.dimension - 2)

    @property
    def dimension(self) -> int:
        return self.profile.dimension

    def _check(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.dimension:
            raise ValueError(f"points must have last axis {self.dimension}, got {y.shape}")
        return y

    def _shear_vector(self, y):
        """Row ``N-1`` of ``J_F - Id``: ``(grad g(y'), 0, 0)``."""
        v = np.zeros(y.shape)
        if self.dimension > 2:
            v[..., : self.dimension - 2] = self.profile.grad_g(y[..., : self.dimension - 2])
        return v

    def F(self, y):
        y = self._check(y)
        x = np.array(y, copy=True)
        if self.dimension > 2:
            x[..., self._eN1] += self.profile.g(y[..., : self.dimension - 2])
        return x

    def F_inverse(self, x):
        x = self._check(x)
        y = np.array(x, copy=True)
        if self.dimension > 2:
            y[..., self._eN1] -= self.profile.g(x[..., : self.dimension - 2])
        return y

    def jacobian(self, y):
        y = self._check(y)
        n = self.dimension
        J = np.broadcast_to(np.eye(n), y.shape[:-1] + (n, n)).copy()
        if n > 2:
            J[..., self._eN1, :] += self._shear_vector(y)
        return J

    def det_jacobian(self, y):
        return np.linalg.det(self.jacobian(y))

    def A(self, y):
        J = self.jacobian(y)
        Jinv = np.linalg.inv(J)
        det = np.abs(np.linalg.det(J))
        return det[..., None, None] * Jinv @ np.swapaxes(Jinv, -1, -2)

    def A_jacobian(self, y, h: float = FD_STEP):
        """``out[..., i, k, l] = d a_kl / d y_i``.

        Central differences with step ``h`` unless the geometry was built with
        ``analytic_jacobian=True`` (polynomial profiles only).
        """
        y = self._check(y)
        n = self.dimension
        if n == 2:
            return np.zeros(y.shape[:-1] + (n, n, n))
        if self.analytic_jacobian:
            return self._A_jacobian_exact(y)
        out = np.empty(y.shape[:-1] + (n, n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            out[..., i, :, :] = (self.A(y + e) - self.A(y - e)) / (2 * h)
        return out

    def _A_jacobian_exact(self, y):
        # A = I - e v^T - v e^T + |v|^2 e e^T for the shear map (det J_F = 1)
        n = self.dimension
        nv = n - 2
        v = self._shear_vector(y)
        H = self.profile.hess_g(y[..., :nv])
        out = np.zeros(y.shape[:-1] + (n, n, n))
        k = self._eN1
        for i in range(nv):
            dv = np.zeros(y.shape)
            dv[..., :nv] = H[..., :, i]
            out[..., i, k, :] -= dv
            out[..., i, :, k] -= dv
            out[..., i, k, k] += 2 * np.sum(v * dv, axis=-1)
        return out


def build_geometry(profile: CrackProfile, r1: float, analytic_jacobian: bool = False) -> CrackGeometry:
    if not r1 > 0:
        raise InvalidProfile(f"r1 must be positive, got {r1!r}")
    profile.validate_origin()
    if analytic_jacobian and not profile.is_polynomial:
        raise InvalidProfile("analytic Jacobian of A requires a polynomial profile")
    return CrackGeometry(profile=profile, r1=float(r1), analytic_jacobian=analytic_jacobian)


def geometry_from_dict(data: dict) -> CrackGeometry:
    unknown = set(data) - {"dimension", "g", "r1", "lipschitz_grad_bound"}
    if unknown:
        raise InvalidProfile(f"unknown profile keys: {sorted(unknown)}")
    profile = CrackProfile.from_coefficients(
        int(data["dimension"]), data.get("g", []), float(data.get("lipschitz_grad_bound", 0.0))
    )
    return build_geometry(profile, float(data["r1"]))


def geometry_to_dict(geom: CrackGeometry) -> dict:
    d = geom.profile.to_dict()
    d["r1"] = geom.r1
    if geom.profile.lipschitz_grad_bound:
        d["lipschitz_grad_bound"] = geom.profile.lipschitz_grad_bound
    return d


def eval_mu_beta(geom: CrackGeometry, y):
    """Return ``(mu, beta)`` at ``y`` (single point or batch), ``0 < |y| < r1``."""
    y = geom._check(y)
    r2 = np.sum(y * y, axis=-1)
    if np.any(r2 == 0):
        raise ValueError("mu and beta are not evaluated at the origin")
    if np.any(np.sqrt(r2) >= geom.r1):
        raise ValueError("point outside the validity ball B_{r1}")
    Ay = np.einsum("...ij,...j->...i", geom.A(y), y)
    mu = np.sum(Ay * y, axis=-1) / r2
    return mu, Ay / mu[..., None]


def eval_dA(geom: CrackGeometry, y, z, jacobian: Optional[Callable] = None):
    """``(dA(y)zz)_i = sum_{h,k} d a_kh / d y_i z_h z_k``.

    ``jacobian`` overrides the geometry's own ``A_jacobian`` when given.
    """
    y = geom._check(y)
    z = np.asarray(z, dtype=float)
    if np.any(np.linalg.norm(y, axis=-1) >= geom.r1):
        raise ValueError("point outside the validity ball B_{r1}")
    dA = jacobian(y) if jacobian is not None else geom.A_jacobian(y)
    return np.einsum("...ikh,...h,...k->...i", dA, z, z)


def div_beta(geom: CrackGeometry, y, h: float = FD_STEP):
    """Divergence of ``beta`` by central differences."""
    y = geom._check(y)
    n = geom.dimension
    total = np.zeros(y.shape[:-1])
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        _, bp = eval_mu_beta(geom, y + e)
        _, bm = eval_mu_beta(geom, y - e)
        total = total + (bp[..., i] - bm[..., i]) / (2 * h)
    return total


def sample_ball(n: int, dimension: int, radius: float, rng: np.random.Generator):
    """Uniform samples in the open ball (origin excluded with probability one)."""
    d = rng.standard_normal((n, dimension))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    rad = radius * rng.random(n) ** (1.0 / dimension)
    return d * rad[:, None]


@dataclass
class InvariantReport:
    n_samples: int
    max_asymmetry: float
    min_quadratic: float
    max_quadratic: float
    min_mu: float
    max_mu: float
    max_block_defect: float
    violations: int
    largest_violating_radius: Optional[float]

    @property
    def ok(self) -> bool:
        return self.violations == 0


def check_invariants(geom: CrackGeometry, n_samples: int = 10_000, seed: int = 0, radius=None) -> InvariantReport:
    """Sample symmetry, ellipticity, ``mu`` bounds and block structure of ``A``.

    ``r1`` is never shrunk; the largest radius at which any sampled property
    fails is reported instead.
    """
    rng = np.random.default_rng(seed)
    n = geom.dimension
    radius = geom.r1 * (1 - 1e-12) if radius is None else radius
    y = sample_ball(n_samples, n, radius, rng)
    z = rng.standard_normal((n_samples, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    A = geom.A(y)
    asym = np.max(np.abs(A - np.swapaxes(A, -1, -2)), axis=(-1, -2))
    quad = np.einsum("nij,ni,nj->n", A, z, z)
    mu, _ = eval_mu_beta(geom, y)
    det = geom.det_jacobian(y)
    block = np.max(np.abs(A[:, :, n - 1] - det[:, None] * np.eye(n)[n - 1]), axis=-1)
    bad = (asym > 1e-12) | (quad < 0.5) | (quad > 2.0) | (mu < 0.5) | (mu > 2.0) | (block > 1e-12)
    radii = np.linalg.norm(y, axis=1)
    return InvariantReport(
        n_samples=n_samples,
        max_asymmetry=float(asym.max()),
        min_quadratic=float(quad.min()),
        max_quadratic=float(quad.max()),
        min_mu=float(mu.min()),
        max_mu=float(mu.max()),
        max_block_defect=float(block.max()),
        violations=int(bad.sum()),
        largest_violating_radius=float(radii[bad].max()) if bad.any() else None,
    )
