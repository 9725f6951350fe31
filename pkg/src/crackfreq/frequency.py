"""Almgren frequency of a solution near the crack tip.

For a solution ``U`` of the straightened problem and ``N = 2``:

    H(r) = r^{1-N} oint_{dB_r} mu U^2 dS
    E(r) = r^{2-N} int_{B_r} (A grad U . grad U - f~ U^2) dy
    N(r) = E(r) / H(r)

``H`` uses a closed trapezoid rule on ``theta in [0, 2 pi]`` whose two end
nodes sit on opposite slit sides.  ``E`` clips every triangle that crosses
``dB_r`` against the disk (arcs replaced by fine chords) and integrates the
P1 field exactly on the clipped pieces.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import HalfIntegerMismatch, HeightNotPositive, NonPositiveLimit, RadiusTooSmall
from .exact import closed_form_HEN
from .fem import BARY3, W3, ZERO, Field, Potential, flat_geometry, p1_gradients, _potential_tilde
from .geometry import CrackGeometry
from .numerics import extrapolate_to_zero, polar_rule, trapezoid_angles

MIN_LAYERS = 8
ARC_STEP = 2 * np.pi / 4096


def frequency_delta(epsilon: float, dimension: int = 2) -> float:
    """Exponent ``4 eps / (N + 2 eps)`` of the remainder terms."""
    return 4 * epsilon / (dimension + 2 * epsilon)


@dataclass(frozen=True)
class FrequencyTrace:
    radii: np.ndarray
    H_vals: np.ndarray
    E_vals: np.ndarray
    N_vals: np.ndarray
    delta: float
    domain_radius: float = 1.0
    gamma_estimate: float = float("nan")
    monotonicity_constant: float = float("nan")
    eta_vals: Optional[np.ndarray] = None

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if np.any(np.diff(r) <= 0):
            raise ValueError("radii must be strictly increasing")
        if np.any(~(np.asarray(self.H_vals) > 0)):
            raise HeightNotPositive("H(r) must be positive at every radius: the field is trivial")

    def __len__(self):
        return len(self.radii)

    @property
    def lower_bound_ok(self) -> Optional[bool]:
        """``N(r) >= -2 eta(r)`` with the relative gauge, when ``eta`` is known."""
        if self.eta_vals is None:
            return None
        return bool(np.all(self.N_vals >= -2 * self.eta_vals))

    def to_csv(self, gamma: Optional[float] = None) -> str:
        g = self.gamma_estimate if gamma is None else gamma
        ratio = self.H_vals / self.radii ** (2 * g) if np.isfinite(g) else np.full(len(self), np.nan)
        rows = ["r,H,E,N,H_over_r2gamma"]
        for row in zip(self.radii, self.H_vals, self.E_vals, self.N_vals, ratio):
            rows.append(",".join(repr(float(x)) for x in row))
        return "\n".join(rows) + "\n"

    def write(self, path, gamma=None) -> None:
        Path(path).write_text(self.to_csv(gamma))


def read_trace_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {"r": data[:, 0], "H": data[:, 1], "E": data[:, 2], "N": data[:, 3], "H_over_r2gamma": data[:, 4]}


# -- H -------------------------------------------------------------------

def height(source, r: float, geom: Optional[CrackGeometry] = None, n_angles: int = 256) -> float:
    """``H(r)`` for any source exposing ``value_polar(r, theta)`` (Field or closed form)."""
    geom = flat_geometry(max(1.0, 2 * r)) if geom is None else geom
    th, w = trapezoid_angles(n_angles)
    u = source.value_polar(np.full_like(th, r), th)
    pts = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    from .geometry import eval_mu_beta

    mu, _ = eval_mu_beta(geom, pts)
    return float(np.sum(w * mu * u * u))


# -- E -------------------------------------------------------------------

def _circle_roots(a, b, r):
    """Sorted parameters ``t`` where the line ``a + t (b - a)`` meets ``|x| = r``."""
    d = b - a
    A = d @ d
    B = 2 * (a @ d)
    C = a @ a - r * r
    disc = max(B * B - 4 * A * C, 0.0)
    s = math.sqrt(disc)
    return (-B - s) / (2 * A), (-B + s) / (2 * A)


def _clip_triangle(P, r):
    """Polygon (CCW) approximating ``triangle P  intersect  B_r``; arcs become fine chords.

    One Sutherland-Hodgman pass against the disk: exit and entry points
    alternate, and each exit is joined to the next entry along the circle.
    """
    r2 = r * r * (1 + 1e-12)
    inside = [p @ p <= r2 for p in P]
    pts, kinds = [], []
    for i in range(3):
        a, b = P[i], P[(i + 1) % 3]
        ia, ib = inside[i], inside[(i + 1) % 3]
        t0, t1 = _circle_roots(a, b, r)
        if ia and ib:
            pts.append(b)
            kinds.append("v")
        elif ia:
            pts.append(a + min(max(t1, 0.0), 1.0) * (b - a))
            kinds.append("out")
        elif ib:
            pts.append(a + min(max(t0, 0.0), 1.0) * (b - a))
            kinds.append("in")
            pts.append(b)
            kinds.append("v")
        elif 0.0 < t0 < t1 < 1.0:
            pts += [a + t0 * (b - a), a + t1 * (b - a)]
            kinds += ["in", "out"]
    if len(pts) < 2:
        return None
    out = []
    n = len(pts)
    for i in range(n):
        out.append(pts[i])
        if kinds[i] == "out":
            j = (i + 1) % n
            a0 = math.atan2(pts[i][1], pts[i][0])
            a1 = math.atan2(pts[j][1], pts[j][0])
            span = (a1 - a0) % (2 * np.pi)
            if span > np.pi:
                # entry coincides with the exit up to rounding
                span = 0.0
            m = max(1, int(math.ceil(span / ARC_STEP)))
            ang = a0 + span * np.arange(1, m) / m
            out.extend(np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1))
    return np.asarray(out)


def energy(field: Field, r: float, geom: Optional[CrackGeometry] = None, f: Potential = ZERO) -> float:
    """``E(r)`` for a P1 field by exact clipping of triangles against ``B_r``."""
    mesh = field.mesh
    geom = flat_geometry(mesh.radius) if geom is None else geom
    P = mesh.vertices[mesh.triangles]
    G, area = p1_gradients(mesh)
    grad = field.triangle_gradients
    inside = np.all(np.sum(P * P, axis=2) <= r * r, axis=1)

    def density(pts_q, tri_ids, sub_area, sub_bary=None):
        # pts_q: (m, q, 2) quadrature points, values from the parent triangle
        A = geom.A(pts_q).mean(axis=1)
        g = grad[tri_ids]
        stiff = sub_area * np.einsum("md,mde,me->m", g, A, g)
        if f.is_zero:
            return stiff
        U = field.values[mesh.triangles[tri_ids]][:, 0:1] + np.einsum(
            "md,mqd->mq", g, pts_q - P[tri_ids][:, 0:1, :]
        )
        ft = _potential_tilde(geom, f, pts_q)
        return stiff - sub_area * np.sum(W3 * ft * U * U, axis=1)

    ids = np.nonzero(inside)[0]
    qp = np.einsum("qi,mid->mqd", BARY3, P[ids])
    total = float(np.sum(density(qp, ids, area[ids])))

    # triangles that reach into B_r without lying inside it
    d_min = np.full(len(P), np.inf)
    for i in range(3):
        a, b = P[:, i], P[:, (i + 1) % 3]
        d = b - a
        t = np.clip(-np.sum(a * d, axis=1) / np.sum(d * d, axis=1), 0, 1)
        d_min = np.minimum(d_min, np.linalg.norm(a + t[:, None] * d, axis=1))
    cross = np.nonzero(~inside & (d_min < r))[0]
    for m in cross:
        poly = _clip_triangle(P[m], r)
        if poly is None or len(poly) < 3:
            continue
        tri = np.stack([np.repeat(poly[:1], len(poly) - 2, axis=0), poly[1:-1], poly[2:]], axis=1)
        d1, d2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
        sub_area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        q = np.einsum("qi,mid->mqd", BARY3, tri)
        total += float(np.sum(density(q, np.full(len(tri), m), sub_area)))
    return total / r ** (geom.dimension - 2)


# -- traces --------------------------------------------------------------

def compute_trace(
    field: Field,
    geom: Optional[CrackGeometry] = None,
    f: Potential = ZERO,
    radii: Sequence[float] = (),
    n_angles: int = 256,
    epsilon: Optional[float] = None,
    workers: int = 1,
) -> FrequencyTrace:
    """Sample ``H``, ``E`` and ``N`` of a FEM field at the given radii."""
    mesh = field.mesh
    geom = flat_geometry(mesh.radius) if geom is None else geom
    radii = np.asarray(sorted(radii), dtype=float)
    if len(radii) == 0:
        raise ValueError("at least one radius is required")
    if radii[-1] >= mesh.radius:
        raise ValueError("radii must lie strictly inside the mesh")
    for r in radii:
        if mesh.layers_inside(r) < MIN_LAYERS:
            raise RadiusTooSmall(
                f"only {mesh.layers_inside(r)} mesh layers inside r={r:g}; need {MIN_LAYERS}"
            )

    def one(r):
        return height(field, r, geom, n_angles), energy(field, r, geom, f)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            he = list(ex.map(one, radii))
    else:
        he = [one(r) for r in radii]
    H = np.array([x[0] for x in he])
    E = np.array([x[1] for x in he])
    if np.any(H <= 0):
        raise HeightNotPositive("H(r) vanished: the trivial solution has no frequency")
    eps = f.epsilon if epsilon is None else epsilon
    eta = np.array([eta_gauge(f, r, eps) for r in radii])
    return FrequencyTrace(radii, H, E, E / H, frequency_delta(eps), mesh.radius, eta_vals=eta)


def trace_from_solution(solution, radii, epsilon: float = 1.0, domain_radius: float = 1.0) -> FrequencyTrace:
    """Trace of a closed-form mode from ``closed_form_HEN``."""
    radii = np.asarray(sorted(radii), dtype=float)
    hen = np.array([closed_form_HEN(solution, r) for r in radii])
    return FrequencyTrace(radii, hen[:, 0], hen[:, 1], hen[:, 2], frequency_delta(epsilon), domain_radius)


def eta_gauge(f: Potential, r: float, epsilon: float, dimension: int = 2) -> float:
    """``||f||_{L^{N/2+eps}(B_r)} r^{4 eps/(N+2 eps)}`` (Sobolev constant taken as 1).

    Only meaningful relative to other gauge values: the true constant is not
    known explicitly.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    q = dimension / 2 + epsilon
    sphere = 2 * math.pi ** (dimension / 2) / math.gamma(dimension / 2)
    if f.kind == "constant":
        vol = sphere * r**dimension / dimension
        norm = abs(f.c) * vol ** (1 / q)
    elif f.kind == "radial_power":
        power = q * f.exponent + dimension
        if power <= 0:
            raise ValueError("potential is not in L^{N/2+eps}: gauge undefined")
        norm = (abs(f.c) ** q * sphere * r**power / power) ** (1 / q)
    else:
        if dimension != 2:
            raise ValueError("sampled gauge implemented for N = 2")
        rho, th, w = polar_rule(r)
        vals = np.abs(f(rho * np.cos(th), rho * np.sin(th))) ** q
        if not np.all(np.isfinite(vals)):
            raise ValueError("potential is not integrable on B_r")
        norm = float(np.sum(w * vals)) ** (1 / q)
    return float(norm * r ** frequency_delta(epsilon, dimension))


# -- audits --------------------------------------------------------------

def audit_monotonicity(trace: FrequencyTrace, slack: float = 1e-3, check_slack: Optional[float] = None):
    """Smallest ``C >= 0`` making ``r -> N(r) + C r^delta`` nondecreasing within ``slack``.

    ``C`` is fitted on consecutive samples.  ``violations`` lists the
    consecutive pairs ``(i, i + 1)`` whose corrected frequency drops by more
    than ``check_slack`` (default ``slack``; a rounding margin is allowed).
    With ``check_slack=0`` every pair that fixed ``C`` is reported.
    """
    if len(trace) < 10:
        raise ValueError("monotonicity audit needs at least 10 radii")
    check_slack = slack if check_slack is None else check_slack
    r = trace.radii
    N = trace.N_vals
    w = r**trace.delta
    drops = (N[:-1] - N[1:] - slack) / (w[1:] - w[:-1])
    C = max(0.0, float(np.max(drops)))
    step = np.diff(N + C * w)
    bad = np.nonzero(step < -check_slack * (1 + 1e-9) - 1e-14)[0]
    return C, [(int(i), int(i) + 1) for i in bad]


def monotonicity_drift(trace: FrequencyTrace, C: float) -> float:
    """Largest drop ``max_{i<j} (M_i - M_j)`` of ``M = N + C r^delta`` over all sample pairs.

    Diagnostic only: the slack lets ``C`` undershoot, and the shortfall adds
    up over distant pairs even for an exactly monotone model.
    """
    M = trace.N_vals + C * trace.radii**trace.delta
    running_max = np.maximum.accumulate(M)
    return float(max(0.0, np.max(running_max - M)))


def with_audit(trace: FrequencyTrace, slack: float = 1e-3) -> FrequencyTrace:
    C, _ = audit_monotonicity(trace, slack)
    return replace(trace, monotonicity_constant=C)


def estimate_gamma(trace: FrequencyTrace, tolerance: float = 0.1):
    """Extrapolated ``lim_{r->0} N(r)`` and the nearest half-integer ``k0 / 2``."""
    if trace.radii[0] > trace.domain_radius / 20:
        raise ValueError("trace must reach radii <= R/20 to extrapolate")
    gamma = extrapolate_to_zero(trace.radii[:3], trace.N_vals[:3], trace.delta)
    k0 = int(round(2 * gamma))
    if abs(2 * gamma - k0) > tolerance or k0 < 0:
        raise HalfIntegerMismatch(f"2*gamma = {2 * gamma:.4f} is not close to an integer")
    return gamma, k0


def audit_H_growth(trace: FrequencyTrace, gamma: float):
    """``(max H(r)/r^{2 gamma}, extrapolated limit of H(r)/r^{2 gamma})``.

    The limit is the intercept of a least-squares line in ``r^delta`` over
    the smaller half of the radii: interpolation noise in FEM heights is a
    few tenths of a percent, which a three-point Richardson step on closely
    spaced radii would amplify by an order of magnitude.
    """
    ratio = trace.H_vals / trace.radii ** (2 * gamma)
    m = max(3, len(trace) // 2)
    if m >= len(trace):
        limit = extrapolate_to_zero(trace.radii[:3], ratio[:3], trace.delta)
    else:
        _, limit = np.polyfit(trace.radii[:m] ** trace.delta, ratio[:m], 1)
    if not limit > 0:
        raise NonPositiveLimit(f"lim H(r)/r^(2 gamma) estimated as {limit!r}")
    return float(ratio.max()), float(limit)


def doubling_ratios(height_fn, lambdas, T: float = 2.0) -> np.ndarray:
    """``H(T lambda) / H(lambda)`` for each ``lambda``."""
    return np.array([height_fn(T * lam) / height_fn(lam) for lam in lambdas])


def doubling_constant(height_fn, lambdas, Ts=(1.0, 1.25, 1.5, 1.75, 2.0)) -> float:
    """Smallest ``C1`` with ``H(T lam)/C1 <= H(lam) <= C1 H(T lam)`` on the samples."""
    c1 = 1.0
    for T in Ts:
        q = doubling_ratios(height_fn, lambdas, T)
        c1 = max(c1, float(np.max(q)), float(np.max(1 / q)))
    return c1
