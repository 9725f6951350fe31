"""P1 finite elements for ``-div(A grad U) = f~ U`` on the slit disk.

Crack sides carry independent vertex ids, so the natural (Neumann)
condition on both sides of the slit needs no special treatment: the slit
is simply boundary where nothing is imposed.  Dirichlet data are imposed
on the outer circle by symmetric elimination.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import IndefiniteSystem
from .geometry import CrackGeometry, CrackProfile, build_geometry
from .slitmesh import SlitMesh

TWO_PI = 2 * np.pi

# edge-midpoint rule, exact for quadratics
BARY3 = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
W3 = np.full(3, 1.0 / 3.0)

# 7-point degree-5 rule (Dunavant)
_a1, _b1 = 0.059715871789770, 0.470142064105115
_a2, _b2 = 0.797426985353087, 0.101286507323456
BARY7 = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_a1, _b1, _b1],
        [_b1, _a1, _b1],
        [_b1, _b1, _a1],
        [_a2, _b2, _b2],
        [_b2, _a2, _b2],
        [_b2, _b2, _a2],
    ]
)
W7 = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)

# one uniform subdivision of the reference triangle, as barycentric maps
_SUB = np.array(
    [
        [[1, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5]],
        [[0.5, 0.5, 0], [0, 1, 0], [0, 0.5, 0.5]],
        [[0.5, 0, 0.5], [0, 0.5, 0.5], [0, 0, 1]],
        [[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]],
    ]
)


@dataclass(frozen=True)
class Potential:
    """Potential ``f`` of the equation ``-Lap u = f u``.

    ``constant``: ``f = c``; ``radial_power``: ``f = c |x|^{-2 + 2 epsilon}``;
    ``sampled``: ``f = func(x, y)`` for a vectorised callable.
    """

    kind: str = "constant"
    c: float = 0.0
    epsilon: float = 1.0
    func: Optional[Callable] = None
    hypothesis_class: str = "H1"

    def __post_init__(self):
        if self.kind not in ("constant", "radial_power", "sampled"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.hypothesis_class not in ("H1", "H2"):
            raise ValueError("hypothesis_class must be 'H1' or 'H2'")
        if self.kind == "radial_power" and not self.exponent > -2:
            raise ValueError("radial_power exponent must exceed -2 (epsilon > 0)")
        if self.kind == "sampled" and self.func is None:
            raise ValueError("sampled potential needs func")

    @property
    def exponent(self) -> float:
        return -2.0 + 2.0 * self.epsilon if self.kind == "radial_power" else 0.0

    @property
    def is_zero(self) -> bool:
        return self.kind == "constant" and self.c == 0.0

    def __call__(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if self.kind == "constant":
            return np.full(np.broadcast(x, y).shape, float(self.c))
        if self.kind == "radial_power":
            r = np.hypot(x, y)
            with np.errstate(divide="ignore"):
                return self.c * r**self.exponent
        return np.asarray(self.func(x, y), dtype=float)


ZERO = Potential()


def flat_geometry(radius: float = 1.0) -> CrackGeometry:
    return build_geometry(CrackProfile.flat(2), radius)


def p1_gradients(mesh: SlitMesh):
    """Per-triangle basis gradients ``(m, 3, 2)`` and areas ``(m,)``."""
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    g = np.empty(p.shape)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = (y[:, j] - y[:, k]) / area2
        g[:, i, 1] = (x[:, k] - x[:, j]) / area2
    return g, 0.5 * area2


def _scatter(mesh: SlitMesh, local):
    n = mesh.n_vertices
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    # coo -> csr sums duplicates in index order: deterministic
    return sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _potential_tilde(geom: CrackGeometry, f: Potential, pts):
    x = geom.F(pts)
    return np.abs(geom.det_jacobian(pts)) * f(x[..., 0], x[..., 1])


def assemble(mesh: SlitMesh, geom: Optional[CrackGeometry] = None, f: Potential = ZERO, tip_quadrature: bool = False):
    """Stiffness ``int A grad phi_i . grad phi_j`` and weighted mass ``int f~ phi_i phi_j``.

    ``f~ = |det J_F| (f o F)``.  Regular terms use the 3-point midpoint rule.
    Radial-power potentials with exponent ``<= -1.5`` need
    ``tip_quadrature=True``: tip-adjacent triangles are then subdivided once
    and integrated with a 7-point rule on each piece.
    """
    geom = flat_geometry(mesh.radius) if geom is None else geom
    if geom.dimension != 2 or mesh.kind != "disk":
        raise ValueError("volume assembly is implemented for N = 2 slit disks only")
    if f.kind == "radial_power" and f.exponent <= -1.5 and not tip_quadrature:
        raise ValueError("radial_power exponent <= -1.5 requires tip_quadrature=True")
    G, area = p1_gradients(mesh)
    P = mesh.vertices[mesh.triangles]
    qp = np.einsum("qi,mid->mqd", BARY3, P)
    A = geom.A(qp).mean(axis=1)
    Kloc = area[:, None, None] * np.einsum("mid,mde,mje->mij", G, A, G)
    K = _scatter(mesh, Kloc)

    if f.is_zero:
        M = sparse.csr_matrix((mesh.n_vertices, mesh.n_vertices))
        return K, M
    fq = _potential_tilde(geom, f, qp)
    Mloc = area[:, None, None] * np.einsum("q,mq,qi,qj->mij", W3, fq, BARY3, BARY3)
    if f.kind == "radial_power" and tip_quadrature:
        tip = np.nonzero(np.isin(mesh.triangles, mesh.tip_vertex_ids).any(axis=1))[0]
        Mloc[tip] = 0.0
        for sub in _SUB:
            bary = BARY7 @ sub  # barycentric coordinates in the parent triangle
            pts = np.einsum("qi,mid->mqd", bary, P[tip])
            fv = _potential_tilde(geom, f, pts)
            Mloc[tip] += 0.25 * area[tip, None, None] * np.einsum("q,mq,qi,qj->mij", W7, fv, bary, bary)
    M = _scatter(mesh, Mloc)
    return K, M


@dataclass
class SolveStats:
    method: str
    iterations: int
    residual: float
    rhs_norm: float

    def as_dict(self):
        return {"method": self.method, "iterations": self.iterations, "residual": self.residual, "rhs_norm": self.rhs_norm}


@dataclass(eq=False)
class Field:
    """Nodal values over a slit mesh; the two slit sides are independent."""

    mesh: SlitMesh
    values: np.ndarray
    stats: Optional[SolveStats] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValueError("one value per vertex id is required")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def scaled(self, a: float) -> "Field":
        return Field(self.mesh, a * self.values)

    @cached_property
    def triangle_gradients(self) -> np.ndarray:
        G, _ = p1_gradients(self.mesh)
        return np.einsum("mid,mi->md", G, self.values[self.mesh.triangles])

    @cached_property
    def recovered_gradients(self) -> np.ndarray:
        """Area-weighted average of triangle gradients at each vertex id.

        Slit vertices are duplicated, so the averaging never mixes sides.
        """
        _, area = p1_gradients(self.mesh)
        n = self.mesh.n_vertices
        acc = np.zeros((n, 2))
        wsum = np.zeros(n)
        for i in range(3):
            ids = self.mesh.triangles[:, i]
            np.add.at(acc, ids, area[:, None] * self.triangle_gradients)
            np.add.at(wsum, ids, area)
        return acc / wsum[:, None]

    def value(self, x, y, theta=None):
        pts = np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float)), axis=-1)
        shape = pts.shape[:-1]
        th = None if theta is None else np.broadcast_to(np.asarray(theta, float), shape).ravel()
        tri, bary = self.mesh.locate(pts.reshape(-1, 2), th)
        v = np.sum(bary * self.values[self.mesh.triangles[tri]], axis=1)
        return v.reshape(shape)

    def gradient(self, x, y, theta=None, recovered: bool = True):
        pts = np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float)), axis=-1)
        shape = pts.shape[:-1]
        th = None if theta is None else np.broadcast_to(np.asarray(theta, float), shape).ravel()
        tri, bary = self.mesh.locate(pts.reshape(-1, 2), th)
        if recovered:
            g = np.einsum("ni,nid->nd", bary, self.recovered_gradients[self.mesh.triangles[tri]])
        else:
            g = self.triangle_gradients[tri]
        return g.reshape(shape + (2,))

    def value_polar(self, r, theta):
        r, theta = np.broadcast_arrays(np.asarray(r, float), np.asarray(theta, float))
        return self.value(r * np.cos(theta), r * np.sin(theta), theta)

    def derivatives_polar(self, r, theta):
        r, theta = np.broadcast_arrays(np.asarray(r, float), np.asarray(theta, float))
        g = self.gradient(r * np.cos(theta), r * np.sin(theta), theta)
        c, s = np.cos(theta), np.sin(theta)
        return g[..., 0] * c + g[..., 1] * s, -g[..., 0] * s + g[..., 1] * c

    def crack_traces(self):
        """Values on the upper and lower slit sides, ordered by radius."""
        up, lo = self.mesh.crack_pairs[:, 0], self.mesh.crack_pairs[:, 1]
        return self.values[up], self.values[lo]

    def to_table(self) -> str:
        return "vertex_id,value\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(self.values))

    def write(self, path) -> None:
        Path(path).write_text(self.to_table())


def read_field(mesh: SlitMesh, path) -> Field:
    lines = Path(path).read_text().splitlines()[1:]
    vals = np.empty(len(lines))
    for line in lines:
        i, v = line.split(",")
        vals[int(i)] = float(v)
    return Field(mesh, vals)


def interpolate(mesh: SlitMesh, func) -> Field:
    """Nodal interpolant of ``func(x, y, theta)``; ``theta`` from the mesh (0 at the tip)."""
    th = np.where(np.isnan(mesh.angles), 0.0, mesh.angles)
    v = func(mesh.vertices[:, 0], mesh.vertices[:, 1], th)
    return Field(mesh, np.asarray(v, dtype=float))


def _spd_factor_solve(S, b):
    lu = splu(
        S.tocsc(),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options={"SymmetricMode": True},
    )
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise IndefiniteSystem("off-diagonal pivoting was needed: system not positive definite")
    d = lu.U.diagonal()
    if np.any(d <= 0):
        raise IndefiniteSystem(
            "non-positive pivot in symmetric factorisation; the potential is too large "
            "for the energy to be coercive on this disk"
        )
    return lu.solve(b), 1


def conjugate_gradient(S, b, rtol: float = 1e-12, maxiter: Optional[int] = None):
    """Jacobi-preconditioned CG that reports non-positive curvature."""
    n = len(b)
    maxiter = 10 * n if maxiter is None else maxiter
    dinv = 1.0 / S.diagonal()
    x = np.zeros(n)
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = r @ z
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x, 0
    for it in range(1, maxiter + 1):
        Sp = S @ p
        curv = p @ Sp
        if curv <= 0:
            raise IndefiniteSystem("conjugate gradient met non-positive curvature")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Sp
        if np.linalg.norm(r) <= rtol * bnorm:
            return x, it
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise IndefiniteSystem(f"conjugate gradient did not converge in {maxiter} iterations")


def solve_dirichlet(stiffness, mass_f, boundary_values: Mapping[int, float], mesh: SlitMesh, method: str = "direct") -> Field:
    """Solve ``(K - M) U = 0`` at free vertices with ``U`` prescribed on the outer circle."""
    S = (stiffness - mass_f).tocsr()
    n = S.shape[0]
    bids = np.array(sorted(boundary_values), dtype=np.int64)
    missing = set(map(int, mesh.outer_boundary_ids)) - set(map(int, bids))
    if missing:
        raise ValueError(f"boundary values missing for {len(missing)} outer vertices")
    u = np.zeros(n)
    u[bids] = [boundary_values[int(i)] for i in bids]
    free = np.setdiff1d(np.arange(n), bids)
    Sff = S[free][:, free]
    rhs = -(S[free][:, bids] @ u[bids])
    if method == "direct":
        uf, its = _spd_factor_solve(Sff, rhs)
    elif method == "cg":
        uf, its = conjugate_gradient(Sff, rhs)
    else:
        raise ValueError(f"unknown method {method!r}")
    u[free] = uf
    res = float(np.max(np.abs(Sff @ uf - rhs))) if len(free) else 0.0
    rn = float(np.max(np.abs(rhs))) if len(free) else 0.0
    return Field(mesh, u, SolveStats(method, its, res, rn))


def boundary_data(mesh: SlitMesh, func) -> dict:
    """``{vertex_id: func(x, y, theta)}`` on the outer circle."""
    ids = mesh.outer_boundary_ids
    v = func(mesh.vertices[ids, 0], mesh.vertices[ids, 1], mesh.angles[ids])
    return {int(i): float(x) for i, x in zip(ids, v)}


def solve_problem(mesh: SlitMesh, f: Potential, boundary_func, geom=None, method="direct", tip_quadrature=False) -> Field:
    K, M = assemble(mesh, geom, f, tip_quadrature=tip_quadrature)
    return solve_dirichlet(K, M, boundary_data(mesh, boundary_func), mesh, method=method)


def quadrature_points(mesh: SlitMesh, bary=BARY3):
    """Physical points and side-resolved polar angles of a triangle rule."""
    P = mesh.vertices[mesh.triangles]
    pts = np.einsum("qi,mid->mqd", bary, P)
    th = np.mod(np.arctan2(pts[..., 1], pts[..., 0]), TWO_PI)
    hint = mesh.triangle_hint[:, None]
    th = np.where(th - hint > np.pi, th - TWO_PI, th)
    th = np.where(hint - th > np.pi, th + TWO_PI, th)
    return pts, th


def l2_error(field: Field, reference) -> float:
    """``||field - reference||_{L^2}`` by the 3-point rule; ``reference(x, y, theta)``."""
    mesh = field.mesh
    pts, th = quadrature_points(mesh)
    _, area = p1_gradients(mesh)
    uh = np.einsum("qi,mi->mq", BARY3, field.values[mesh.triangles])
    ref = reference(pts[..., 0], pts[..., 1], th)
    return float(np.sqrt(np.sum(area[:, None] * W3[None, :] * (uh - ref) ** 2)))


def l2_norm(field: Field) -> float:
    return l2_error(field, lambda x, y, t: np.zeros_like(x))
