"""Spectrum of the Laplace-Beltrami operator on the sphere cut along a half-equator.

With natural (Neumann) conditions on both sides of the cut the eigenvalues
are ``mu_k = k (k + 2N - 4) / 4``.  For ``N = 2`` the eigenfunctions are
``cos(k t / 2)`` on ``[0, 2 pi]``; for ``N = 3`` they are computed with flat
P1 elements on the polyhedral slit sphere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import integrate, sparse
from scipy.sparse import linalg as spla

from .errors import SolverFail
from .fem import Field
from .slitmesh import SlitMesh

TWO_PI = 2 * np.pi


def mu_exact(k: int, dimension: int) -> float:
    if k < 0 or dimension < 2:
        raise ValueError("need k >= 0 and N >= 2")
    return k * (k + 2 * dimension - 4) / 4


@dataclass(frozen=True)
class CircleMode:
    """``Y_k(t) = cos(k t / 2)`` normalised in ``L^2(0, 2 pi)``."""

    k: int

    @property
    def norm_factor(self) -> float:
        return 1 / math.sqrt(TWO_PI) if self.k == 0 else 1 / math.sqrt(math.pi)

    def __call__(self, theta):
        return self.norm_factor * np.cos(0.5 * self.k * np.asarray(theta, float))

    def derivative(self, theta):
        return -0.5 * self.k * self.norm_factor * np.sin(0.5 * self.k * np.asarray(theta, float))

    def second_derivative(self, theta):
        return -0.25 * self.k**2 * self(theta)


@dataclass
class SpectralEntry:
    k: int
    mu: float
    functions: tuple
    computed: tuple = ()


@dataclass
class SpectralBasis:
    dimension: int
    entries: list
    normalization: str = "L2"
    eigenvalues: Optional[np.ndarray] = None
    mesh: Optional[SlitMesh] = None
    stiffness: Optional[sparse.spmatrix] = field(default=None, repr=False)
    mass: Optional[sparse.spmatrix] = field(default=None, repr=False)
    truncated_last_cluster: bool = False

    def entry(self, k: int) -> SpectralEntry:
        for e in self.entries:
            if e.k == k:
                return e
        raise KeyError(f"no entry for k={k}")

    def multiplicities(self) -> dict:
        return {e.k: len(e.functions) for e in self.entries}

    def eigen_table(self) -> str:
        rows = ["index,eigenvalue,cluster_k,mu_exact"]
        i = 0
        for e in self.entries:
            for lam in e.computed or (e.mu,) * len(e.functions):
                rows.append(f"{i},{float(lam)!r},{e.k},{mu_exact(e.k, self.dimension)!r}")
                i += 1
        return "\n".join(rows) + "\n"

    def write(self, directory) -> list:
        """Eigenvalue table plus one per-vertex file per FEM eigenvector."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / "eigenvalues.csv"]
        paths[0].write_text(self.eigen_table())
        j = 0
        for e in self.entries:
            for fn in e.functions:
                if isinstance(fn, Field):
                    p = d / f"eigenvector_{j:02d}_k{e.k}.csv"
                    fn.write(p)
                    paths.append(p)
                j += 1
        return paths


def basis_circle(k_max: int) -> SpectralBasis:
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    entries = [SpectralEntry(k, mu_exact(k, 2), (CircleMode(k),)) for k in range(k_max + 1)]
    return SpectralBasis(2, entries)


# -- surface FEM ---------------------------------------------------------

def assemble_surface(mesh: SlitMesh):
    """P1 Laplace-Beltrami stiffness and consistent mass on the polyhedral surface."""
    p = mesh.vertices[mesh.triangles]
    # edge opposite to local vertex i
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    area = 0.5 * np.linalg.norm(np.cross(e[:, 0], e[:, 1]), axis=1)
    Kloc = np.einsum("mid,mjd->mij", e, e) / (4 * area[:, None, None])
    Mloc = area[:, None, None] / 12 * (np.ones((3, 3)) + np.eye(3))
    n = mesh.n_vertices
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    K = sparse.coo_matrix((Kloc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M = sparse.coo_matrix((Mloc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return K, M


def _cluster(values, dimension):
    """Group sorted eigenvalues; a gap above 10% of the local formula gap opens a new cluster."""
    groups = [[0]]
    for i in range(1, len(values)):
        ref = float(np.mean(values[groups[-1]]))
        k = _nearest_k(ref, dimension)
        gap = mu_exact(k + 1, dimension) - mu_exact(k, dimension)
        if values[i] - values[i - 1] > 0.1 * gap:
            groups.append([i])
        else:
            groups[-1].append(i)
    return groups


def _nearest_k(value, dimension, k_max=200):
    mus = np.array([mu_exact(k, dimension) for k in range(k_max)])
    return int(np.argmin(np.abs(mus - value)))


def eigensolve_slit_sphere(mesh: SlitMesh, count: int = 12, tol: float = 1e-10, seed: int = 0) -> SpectralBasis:
    """Lowest ``count`` eigenpairs of the slit-sphere pencil, clustered by the formula values."""
    if mesh.kind != "sphere":
        raise ValueError("eigensolve_slit_sphere needs a slit-sphere mesh")
    if not 1 <= count <= 12:
        raise ValueError("count must be in 1..12")
    K, M = assemble_surface(mesh)
    v0 = np.random.default_rng(seed).standard_normal(mesh.n_vertices)
    try:
        # K is singular (constants); shift slightly below zero
        vals, vecs = spla.eigsh(K, k=count, M=M, sigma=-0.05, which="LM", v0=v0, tol=tol)
    except spla.ArpackNoConvergence as exc:
        raise SolverFail(f"eigensolver did not converge: {exc}") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    for j in range(count):
        v = vecs[:, j]
        v /= math.sqrt(v @ (M @ v))
        # fix the sign for reproducible exports
        if v[np.argmax(np.abs(v))] < 0:
            v *= -1
        rq = (v @ (K @ v)) / (v @ (M @ v))
        if abs(rq - vals[j]) > 1e-8 * max(1.0, abs(vals[j])):
            raise SolverFail(f"Rayleigh quotient {rq} disagrees with eigenvalue {vals[j]}")
        vals[j] = rq
    groups = _cluster(vals, 3)
    entries = []
    for g in groups:
        mean = float(np.mean(vals[g]))
        k = _nearest_k(mean, 3)
        funcs = tuple(Field(mesh, vecs[:, j].copy()) for j in g)
        entries.append(SpectralEntry(k, mean, funcs, tuple(float(vals[j]) for j in g)))
    return SpectralBasis(
        3, entries, eigenvalues=vals, mesh=mesh, stiffness=K, mass=M,
        truncated_last_cluster=True,
    )


def mass_gram(basis: SpectralBasis) -> np.ndarray:
    """Gram matrix of all FEM eigenvectors in the surface mass inner product."""
    V = np.stack([f.values for e in basis.entries for f in e.functions], axis=1)
    return V.T @ (basis.mass @ V)


def cluster_errors(basis: SpectralBasis, k_max: int = 4) -> dict:
    """Relative error of each cluster mean (absolute for ``k = 0``)."""
    out = {}
    for e in basis.entries:
        if e.k <= k_max:
            exact = mu_exact(e.k, basis.dimension)
            out[e.k] = abs(e.mu - exact) / (exact if exact else 1.0)
    return out


def _cut_traces(mesh: SlitMesh, values):
    """Arc-length parameter and values on the two sides of the cut, tips included."""
    s = mesh.ring_radii
    tip0, tip1 = mesh.tip_vertex_ids
    arc = np.concatenate([[0.0], s, [np.pi]])
    up = np.concatenate([[values[tip0]], values[mesh.crack_pairs[:, 0]], [values[tip1]]])
    lo = np.concatenate([[values[tip0]], values[mesh.crack_pairs[:, 1]], [values[tip1]]])
    return arc, up, lo


def trace_nonvanishing_check(entry_function: Field) -> float:
    """Minimum over the two cut sides of the L2 norm of the trace (trapezoid along the cut)."""
    arc, up, lo = _cut_traces(entry_function.mesh, entry_function.values)
    return float(min(math.sqrt(integrate.trapezoid(up**2, arc)), math.sqrt(integrate.trapezoid(lo**2, arc))))


def homogeneity_residual(basis: SpectralBasis, entry: SpectralEntry, index: int = 0) -> float:
    """Relative residual of ``Lap_S Y + mu_k Y = 0`` with the formula ``mu_k``.

    ``|y|^{k/2} Y(y/|y|)`` is harmonic off the crack exactly when the
    spherical part satisfies this equation, since
    ``k(k-2)/4 + k(N-1)/2 = k(k+2N-4)/4``.  The residual is measured in the
    dual norm induced by the lumped mass matrix.
    """
    Y = entry.functions[index].values
    mu = mu_exact(entry.k, basis.dimension)
    res = basis.stiffness @ Y - mu * (basis.mass @ Y)
    lumped = np.asarray(basis.mass.sum(axis=1)).ravel()
    num = math.sqrt(np.sum(res**2 / lumped))
    den = math.sqrt(Y @ (basis.mass @ Y))
    return num / (den * max(mu, 1.0))
