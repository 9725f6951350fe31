"""Triangulations of the slit disk and of the sphere with a cut.

Both domains are the image of a rectangle ``[s_min, s_max] x [0, 2 pi]`` under
a polar-type map whose angular coordinate ``t`` starts on one side of the
cut (``t = 0``) and ends on the other (``t = 2 pi``).  Meshes are built ring
by ring: concentric rings of vertices at fixed ``s`` joined by a zipper
triangulation, with an apex vertex (the crack tip) where ``s`` collapses.
Vertices at ``t = 0`` and ``t = 2 pi`` share coordinates but have distinct
ids, so the cut is simply part of the mesh boundary.

Angle convention: ``t = 0`` is the upper side of the slit (``x_2 > 0`` for
the disk, ``x_3 > 0`` for the sphere), ``t = 2 pi`` the lower side.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import MeshQualityError

MIN_ANGLE_DEG = 20.0
TWO_PI = 2 * np.pi


@dataclass(eq=False)
class SlitMesh:
    kind: str  # "disk" or "sphere"
    vertices: np.ndarray
    triangles: np.ndarray
    angles: np.ndarray  # unwrapped t per vertex in [0, 2 pi]; nan at tips
    crack_pairs: np.ndarray  # (upper_id, lower_id)
    tip_vertex_ids: tuple
    outer_boundary_ids: np.ndarray
    ring_radii: np.ndarray
    radius: float = 1.0
    grading_ratio: float = 0.5
    levels: int = 0

    @property
    def tip_vertex_id(self) -> int:
        return int(self.tip_vertex_ids[0])

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    # -- geometry -------------------------------------------------------
    @cached_property
    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def edge_triangle_counts(self):
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        keys, counts = np.unique(e, axis=0, return_counts=True)
        return keys, counts

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        if self.vertices.shape[1] == 2:
            return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        cr = np.cross(d1, d2)
        sign = np.sign(np.sum(cr * p.mean(axis=1), axis=1))
        return 0.5 * sign * np.linalg.norm(cr, axis=1)

    def spherical_areas(self) -> np.ndarray:
        """Spherical excess of each triangle (sphere meshes only)."""
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        num = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
        den = 1 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
        return 2 * np.arctan2(num, den)

    def triangle_angles(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        out = np.empty(self.triangles.shape)
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            cosang = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            out[:, i] = np.degrees(np.arccos(np.clip(cosang, -1, 1)))
        return out

    def min_angle(self) -> float:
        return float(self.triangle_angles().min())

    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return np.max(
            np.stack([np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)], axis=1), axis=1
        )

    def tip_element_diameter(self) -> float:
        mask = np.isin(self.triangles, self.tip_vertex_ids).any(axis=1)
        return float(self.diameters()[mask].max())

    def layers_inside(self, r: float) -> int:
        """Number of complete element layers in the closed ball ``B_r``.

        The tip fan is closed by the first ring and each further ring closes
        one annulus, so this is the number of rings with radius ``<= r``.
        """
        return int(np.sum((self.ring_radii > 0) & (self.ring_radii <= r * (1 + 1e-12))))

    @cached_property
    def triangle_hint(self) -> np.ndarray:
        """Mean unwrapped angle of each triangle's non-tip vertices."""
        a = self.angles[self.triangles]
        return np.nanmean(a, axis=1)

    def side_of_triangles(self) -> np.ndarray:
        """+1 for triangles on the upper side of the cut (``t < pi``), -1 otherwise."""
        return np.where(self.triangle_hint < np.pi, 1, -1)

    # -- point location (disk meshes) -----------------------------------
    @cached_property
    def _centroid_tree(self):
        c = self.vertices[self.triangles].mean(axis=1)
        return cKDTree(c)

    def polar_angle(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.mod(np.arctan2(pts[..., 1], pts[..., 0]), TWO_PI)

    def locate(self, points, theta=None, k: int = 24):
        """Containing triangle and barycentric coordinates for 2D points.

        ``theta`` (unwrapped angle in ``[0, 2 pi]``) selects the side of the
        slit for points lying on it; by default ``atan2`` is used, which puts
        slit points on the upper side.  Points outside the mesh polygon are
        assigned to the nearest compatible triangle (linear extrapolation).
        """
        if self.kind != "disk":
            raise ValueError("point location is implemented for disk meshes")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        th = self.polar_angle(pts) if theta is None else np.broadcast_to(np.asarray(theta, float), pts.shape[:1])
        k = min(k, len(self.triangles))
        tri_ids = np.full(len(pts), -1)
        bary = np.zeros((len(pts), 3))
        _, cand = self._centroid_tree.query(pts, k=k)
        cand = np.atleast_2d(cand).reshape(len(pts), k)
        b = self._barycentric(pts[:, None, :], cand)
        compat = np.abs(th[:, None] - self.triangle_hint[cand]) <= np.pi
        score = np.where(compat, b.min(axis=2), -np.inf)
        best = np.argmax(score, axis=1)
        best_score = score[np.arange(len(pts)), best]
        inside = best_score >= -1e-12
        tri_ids[inside] = cand[inside, best[inside]]
        bary[inside] = b[inside, best[inside]]
        for i in np.nonzero(~inside)[0]:
            allb = self._barycentric(pts[i][None, :], np.arange(len(self.triangles))[None, :])[0]
            ok = np.abs(th[i] - self.triangle_hint) <= np.pi
            sc = np.where(ok, allb.min(axis=1), -np.inf)
            j = int(np.argmax(sc))
            tri_ids[i] = j
            bary[i] = allb[j]
        return tri_ids, bary

    def _barycentric(self, pts, tri):
        p = self.vertices[self.triangles[tri]]  # (..., 3, 2)
        a, b_, c = p[..., 0, :], p[..., 1, :], p[..., 2, :]
        v0, v1 = b_ - a, c - a
        v2 = pts - a
        det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
        l1 = (v2[..., 0] * v1[..., 1] - v2[..., 1] * v1[..., 0]) / det
        l2 = (v0[..., 0] * v2[..., 1] - v0[..., 1] * v2[..., 0]) / det
        return np.stack([1 - l1 - l2, l1, l2], axis=-1)

    # -- validation -----------------------------------------------------
    def check(self, min_angle: float = MIN_ANGLE_DEG) -> None:
        """Raise ``MeshQualityError`` if any mesh invariant fails."""
        if np.any(self.triangle_areas() <= 0):
            raise MeshQualityError("triangle with non-positive orientation")
        ang = self.min_angle()
        if ang < min_angle:
            raise MeshQualityError(f"minimum angle {ang:.2f} deg below {min_angle} deg")
        keys, counts = self.edge_triangle_counts()
        if counts.max() > 2:
            raise MeshQualityError("edge shared by more than two triangles")
        boundary = set(map(int, self.outer_boundary_ids)) | set(map(int, self.crack_pairs.ravel()))
        boundary |= set(map(int, self.tip_vertex_ids))
        single = keys[counts == 1]
        for a, b in single:
            if int(a) not in boundary or int(b) not in boundary:
                raise MeshQualityError(f"interior edge ({a}, {b}) has a single triangle")
        up = np.isin(self.triangles, self.crack_pairs[:, 0]).any(axis=1)
        lo = np.isin(self.triangles, self.crack_pairs[:, 1]).any(axis=1)
        if np.any(up & lo):
            raise MeshQualityError("triangle touches both sides of the slit")


def _zipper(ring_a, ta, ring_b, tb):
    """Triangulate the strip between two rings ordered by angle."""
    tris = []
    i = j = 0
    na, nb = len(ring_a) - 1, len(ring_b) - 1
    while i < na or j < nb:
        if i == na:
            advance_a = False
        elif j == nb:
            advance_a = True
        else:
            advance_a = ta[i + 1] <= tb[j + 1]
        if advance_a:
            tris.append((ring_a[i], ring_b[j], ring_a[i + 1]))
            i += 1
        else:
            tris.append((ring_a[i], ring_b[j], ring_b[j + 1]))
            j += 1
    return tris


def _build_rings(params, counts, apex_start, apex_end):
    """Vertex ids/angles for rings at ``params`` with ``counts`` segments each."""
    verts_s, verts_t = [], []
    rings = []
    tips = []
    if apex_start is not None:
        tips.append(0)
        verts_s.append(apex_start)
        verts_t.append(np.nan)
    for s, n in zip(params, counts):
        t = np.linspace(0.0, TWO_PI, n + 1)
        ids = np.arange(len(verts_s), len(verts_s) + n + 1)
        verts_s.extend([s] * (n + 1))
        verts_t.extend(t)
        rings.append((ids, t))
    if apex_end is not None:
        tips.append(len(verts_s))
        verts_s.append(apex_end)
        verts_t.append(np.nan)
    tris = []
    if apex_start is not None:
        ids, _ = rings[0]
        tris += [(tips[0], ids[i], ids[i + 1]) for i in range(len(ids) - 1)]
    for (ia, ta), (ib, tb) in zip(rings[:-1], rings[1:]):
        tris += _zipper(ia, ta, ib, tb)
    if apex_end is not None:
        ids, _ = rings[-1]
        tris += [(tips[-1], ids[i + 1], ids[i]) for i in range(len(ids) - 1)]
    return np.array(verts_s), np.array(verts_t), rings, tips, np.array(tris, dtype=np.int64)


def _orient(vertices, tris, outward=False):
    p = vertices[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    if outward:
        s = np.sum(np.cross(d1, d2) * p.mean(axis=1), axis=1)
    else:
        s = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    tris = tris.copy()
    flip = s < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


def disk_ring_radii(radius: float, levels: int, grading_ratio: float, base_resolution: int):
    h = TWO_PI * radius / base_resolution
    m = max(1, int(round(radius / h)))
    uniform = radius * np.arange(1, m + 1) / m
    graded = uniform[0] * grading_ratio ** np.arange(levels, 0, -1)
    return np.concatenate([graded, uniform])


def _ring_counts(radii, base_resolution, n_min=8, n_tip=18, max_jump=1.5):
    """Angular segment counts giving roughly isotropic elements on each ring.

    Neighbouring counts differ by at most a factor ``max_jump`` (the smaller
    one is raised), and the innermost ring is capped at ``n_tip`` so that the
    tip fan keeps apex angles of at least 20 degrees.
    """
    gaps = np.diff(np.concatenate([[0.0], radii]))
    counts = []
    for j, r in enumerate(radii):
        inner = gaps[j]
        outer = gaps[j + 1] if j + 1 < len(radii) else inner
        s = 0.5 * (inner + outer)
        counts.append(max(n_min, int(np.ceil(TWO_PI * r / s))))
    counts[-1] = base_resolution
    counts[0] = min(counts[0], n_tip)
    changed = True
    while changed:
        changed = False
        for j in range(len(counts) - 1):
            a, b = counts[j], counts[j + 1]
            if a > max_jump * b and j + 1 < len(counts) - 1:
                counts[j + 1] = int(np.ceil(a / max_jump))
                changed = True
            elif b > max_jump * a and j > 0:
                counts[j] = int(np.ceil(b / max_jump))
                changed = True
    return counts


def make_slit_disk(radius: float = 1.0, levels: int = 0, grading_ratio: float = 0.5, base_resolution: int = 64) -> SlitMesh:
    """Disk of radius ``radius`` slit along ``{x_2 = 0, x_1 >= 0}``, graded toward the tip.

    ``base_resolution`` is the number of segments on the outer circle; the
    quasi-uniform part has rings spaced by about ``2 pi radius /
    base_resolution``.  ``levels`` extra rings at radii ``r_1 q^l`` (``q`` the
    grading ratio) shrink the tip elements by ``q`` per level.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if not 0.1 < grading_ratio < 0.9:
        raise ValueError("grading_ratio must lie in (0.1, 0.9)")
    if base_resolution < 8:
        raise ValueError("base_resolution must be >= 8")
    radii = disk_ring_radii(radius, levels, grading_ratio, base_resolution)
    counts = _ring_counts(radii, base_resolution)
    s, t, rings, tips, tris = _build_rings(radii, counts, apex_start=0.0, apex_end=None)
    st = np.where(np.isnan(t), 0.0, t)
    verts = np.stack([s * np.cos(st), s * np.sin(st)], axis=1)
    # exact slit coordinates: sin(2 pi) is not exactly zero
    on_cut = (t == 0.0) | (t == TWO_PI)
    verts[on_cut, 1] = 0.0
    verts[on_cut, 0] = s[on_cut]
    tris = _orient(verts, tris)
    pairs = np.array([(ids[0], ids[-1]) for ids, _ in rings], dtype=np.int64)
    mesh = SlitMesh(
        kind="disk",
        vertices=verts,
        triangles=tris,
        angles=t,
        crack_pairs=pairs,
        tip_vertex_ids=(tips[0],),
        outer_boundary_ids=np.asarray(rings[-1][0], dtype=np.int64),
        ring_radii=np.asarray(radii, dtype=float),
        radius=float(radius),
        grading_ratio=float(grading_ratio),
        levels=int(levels),
    )
    mesh.check()
    return mesh


def make_slit_sphere(resolution: int = 64, tip_levels: int = 4, grading_ratio: float = 0.5) -> SlitMesh:
    """Unit sphere cut along the half-equator ``{x_3 = 0, x_2 >= 0}``.

    Coordinates ``x = (cos s, sin s cos t, sin s sin t)``: the cut is
    ``t in {0, 2 pi}`` and its two end points ``(+-1, 0, 0)`` play the role
    of crack tips.  ``resolution`` is the number of segments on the great
    circle ``s = pi/2``; ``tip_levels`` geometric rings (ratio
    ``grading_ratio``) refine toward each tip, where eigenfunctions behave
    like ``dist^{1/2}``.
    """
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    if tip_levels < 0:
        raise ValueError("tip_levels must be >= 0")
    if not 0.1 < grading_ratio < 0.9:
        raise ValueError("grading_ratio must lie in (0.1, 0.9)")
    m = max(2, int(round(resolution / 2)))
    uniform = np.pi * np.arange(1, m) / m
    graded = (np.pi / m) * grading_ratio ** np.arange(tip_levels, 0, -1)
    params = np.concatenate([graded, uniform, np.pi - graded[::-1]])
    counts = [max(8, int(round(resolution * np.sin(p)))) for p in params]
    levels = tip_levels
    s, t, rings, tips, tris = _build_rings(params, counts, apex_start=0.0, apex_end=np.pi)
    st = np.where(np.isnan(t), 0.0, t)
    verts = np.stack([np.cos(s), np.sin(s) * np.cos(st), np.sin(s) * np.sin(st)], axis=1)
    on_cut = (t == 0.0) | (t == TWO_PI)
    verts[on_cut, 2] = 0.0
    verts[on_cut, 1] = np.sin(s[on_cut])
    verts[tips, :] = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    tris = _orient(verts, tris, outward=True)
    pairs = np.array([(ids[0], ids[-1]) for ids, _ in rings], dtype=np.int64)
    mesh = SlitMesh(
        kind="sphere",
        vertices=verts,
        triangles=tris,
        angles=t,
        crack_pairs=pairs,
        tip_vertex_ids=tuple(tips),
        outer_boundary_ids=np.zeros(0, dtype=np.int64),
        ring_radii=np.asarray(params, dtype=float),
        radius=1.0,
        grading_ratio=grading_ratio,
        levels=levels,
    )
    mesh.check()
    return mesh


# -- text format --------------------------------------------------------

def write_mesh(mesh: SlitMesh, path) -> None:
    """Line-based text export; floats are written with ``repr`` (exact round trip)."""
    lines = [
        "slitmesh 1",
        f"kind {mesh.kind}",
        f"dim {mesh.vertices.shape[1]}",
        f"radius {float(mesh.radius)!r}",
        f"grading_ratio {float(mesh.grading_ratio)!r}",
        f"levels {mesh.levels}",
        "tips " + " ".join(str(int(i)) for i in mesh.tip_vertex_ids),
        "rings " + " ".join(repr(float(r)) for r in mesh.ring_radii),
    ]
    for v, a in zip(mesh.vertices, mesh.angles):
        lines.append("v " + " ".join(repr(float(x)) for x in v) + f" {float(a)!r}")
    lines += [f"t {a} {b} {c}" for a, b, c in mesh.triangles]
    lines += [f"c {a} {b}" for a, b in mesh.crack_pairs]
    lines += [f"b {i}" for i in mesh.outer_boundary_ids]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> SlitMesh:
    meta, verts, angles, tris, pairs, bnd = {}, [], [], [], [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        tag, *rest = line.split()
        if tag == "v":
            vals = [float(x) for x in rest]
            verts.append(vals[:-1])
            angles.append(vals[-1])
        elif tag == "t":
            tris.append([int(x) for x in rest])
        elif tag == "c":
            pairs.append([int(x) for x in rest])
        elif tag == "b":
            bnd.append(int(rest[0]))
        else:
            meta[tag] = rest
    if meta.get("slitmesh") != ["1"]:
        raise ValueError(f"{path}: not a slitmesh v1 file")
    return SlitMesh(
        kind=meta["kind"][0],
        vertices=np.array(verts, dtype=float).reshape(-1, int(meta["dim"][0])),
        triangles=np.array(tris, dtype=np.int64).reshape(-1, 3),
        angles=np.array(angles, dtype=float),
        crack_pairs=np.array(pairs, dtype=np.int64).reshape(-1, 2),
        tip_vertex_ids=tuple(int(x) for x in meta["tips"]),
        outer_boundary_ids=np.array(bnd, dtype=np.int64),
        ring_radii=np.array([float(x) for x in meta.get("rings", [])]),
        radius=float(meta["radius"][0]),
        grading_ratio=float(meta["grading_ratio"][0]),
        levels=int(meta["levels"][0]),
    )
