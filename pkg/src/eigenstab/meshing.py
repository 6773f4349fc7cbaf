"""Conforming triangulation of polygonal domains and point location.

The mesher is a batched Delaunay-refinement loop: boundary edges are
pre-split to the target length, interior seeds come from a hexagonal grid
kept clear of the boundary, and rounds of global Delaunay triangulation
alternate with midpoint splits of non-conforming or encroached boundary
segments and circumcenter insertion for skinny or oversized triangles.
Free points falling inside the diametral disk of a freshly split segment are
removed, which keeps the refinement terminating.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import MeshingError, ValidationError
from .geometry import PolygonalDomain

_MAX_ROUNDS = 120


@dataclass(frozen=True)
class TriMesh:
    """Immutable triangulation with boundary tags.

    Triangles are positively oriented index triples into `vertices`;
    `boundary_vertex_flags` marks vertices lying on the source polygon
    boundary.  Derived structures (areas, gradients, the point-location bin
    grid) are cached lazily and never mutated afterwards.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertex_flags: np.ndarray
    h_target: float
    domain_ref: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def corners(self, tri_idx=slice(None)) -> np.ndarray:
        """Vertex coordinates per triangle, shape (nt, 3, 2)."""
        return self.vertices[self.triangles[tri_idx]]

    @property
    def areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            c = self.corners()
            e1 = c[:, 1] - c[:, 0]
            e2 = c[:, 2] - c[:, 0]
            self._cache["areas"] = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        return self._cache["areas"]

    @property
    def edge_lengths(self) -> np.ndarray:
        """Per-triangle edge lengths, shape (nt, 3)."""
        if "edge_lengths" not in self._cache:
            c = self.corners()
            e = np.stack(
                [c[:, 1] - c[:, 0], c[:, 2] - c[:, 1], c[:, 0] - c[:, 2]], axis=1
            )
            self._cache["edge_lengths"] = np.hypot(e[..., 0], e[..., 1])
        return self._cache["edge_lengths"]

    @property
    def min_angles(self) -> np.ndarray:
        """Smallest interior angle per triangle, radians."""
        if "min_angles" not in self._cache:
            L = self.edge_lengths
            a, b, c = L[:, 0], L[:, 1], L[:, 2]
            angles = np.empty((len(L), 3))
            # angle at vertex 0 is opposite edge between vertices 1,2 (index 1)
            for k, (opp, s1, s2) in enumerate(((1, 2, 0), (2, 0, 1), (0, 1, 2))):
                cosv = (L[:, s1] ** 2 + L[:, s2] ** 2 - L[:, opp] ** 2) / (
                    2.0 * L[:, s1] * L[:, s2]
                )
                angles[:, k] = np.arccos(np.clip(cosv, -1.0, 1.0))
            self._cache["min_angles"] = angles.min(axis=1)
        return self._cache["min_angles"]

    @property
    def grads(self) -> np.ndarray:
        """Constant gradients of the three hat functions per triangle, (nt, 3, 2)."""
        if "grads" not in self._cache:
            c = self.corners()
            g = np.empty((len(c), 3, 2))
            for k in range(3):
                p, q = c[:, (k + 1) % 3], c[:, (k + 2) % 3]
                g[:, k, 0] = p[:, 1] - q[:, 1]
                g[:, k, 1] = q[:, 0] - p[:, 0]
            g /= (2.0 * self.areas)[:, None, None]
            self._cache["grads"] = g
        return self._cache["grads"]

    def scaled(self, t: float) -> "TriMesh":
        """Same topology with vertices scaled by t about the origin."""
        return TriMesh(
            vertices=self.vertices * t,
            triangles=self.triangles,
            boundary_vertex_flags=self.boundary_vertex_flags,
            h_target=self.h_target * t,
            domain_ref=f"{self.domain_ref}*{t:g}",
        )

    def stretched(self, sx: float, sy: float, domain_ref: str = "") -> "TriMesh":
        """Same topology with axes scaled independently."""
        return TriMesh(
            vertices=self.vertices * np.array([sx, sy]),
            triangles=self.triangles,
            boundary_vertex_flags=self.boundary_vertex_flags,
            h_target=self.h_target * max(sx, sy),
            domain_ref=domain_ref or f"{self.domain_ref}*({sx:g},{sy:g})",
        )

    # -- point location -------------------------------------------------------

    def _bin_grid(self):
        if "bins" not in self._cache:
            c = self.corners()
            lo = self.vertices.min(axis=0)
            hi = self.vertices.max(axis=0)
            cell = float(np.mean(self.edge_lengths))
            nx = max(int(math.ceil((hi[0] - lo[0]) / cell)), 1)
            ny = max(int(math.ceil((hi[1] - lo[1]) / cell)), 1)
            tmin = np.floor((c.min(axis=1) - lo) / cell).astype(int)
            tmax = np.floor((c.max(axis=1) - lo) / cell).astype(int)
            tmin = np.clip(tmin, 0, [nx - 1, ny - 1])
            tmax = np.clip(tmax, 0, [nx - 1, ny - 1])
            buckets: dict = {}
            for t in range(len(c)):
                for ix in range(tmin[t, 0], tmax[t, 0] + 1):
                    for iy in range(tmin[t, 1], tmax[t, 1] + 1):
                        buckets.setdefault(ix * ny + iy, []).append(t)
            self._cache["bins"] = (lo, cell, nx, ny, buckets)
        return self._cache["bins"]

    def _tri_affine(self):
        """Per-triangle v0 and inverse edge matrix for barycentric coordinates."""
        if "affine" not in self._cache:
            c = self.corners()
            v0 = c[:, 0]
            M = np.stack([c[:, 1] - v0, c[:, 2] - v0], axis=-1)  # columns e1,e2
            det = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
            inv = np.empty_like(M)
            inv[:, 0, 0] = M[:, 1, 1] / det
            inv[:, 0, 1] = -M[:, 0, 1] / det
            inv[:, 1, 0] = -M[:, 1, 0] / det
            inv[:, 1, 1] = M[:, 0, 0] / det
            self._cache["affine"] = (v0, inv)
        return self._cache["affine"]

    def to_json(self) -> str:
        return json.dumps(
            {
                "vertices": self.vertices.tolist(),
                "triangles": self.triangles.tolist(),
                "boundary": self.boundary_vertex_flags.tolist(),
                "h_target": self.h_target,
                "domain_ref": self.domain_ref,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "TriMesh":
        doc = json.loads(text)
        return cls(
            vertices=np.asarray(doc["vertices"], dtype=float),
            triangles=np.asarray(doc["triangles"], dtype=np.int64),
            boundary_vertex_flags=np.asarray(doc["boundary"], dtype=bool),
            h_target=float(doc.get("h_target", 0.0)),
            domain_ref=doc.get("domain_ref", ""),
        )


def locate(m: TriMesh, points, tol: float = 1e-12):
    """Locate points in the mesh.

    Returns (tri_idx, bary): tri_idx is -1 for points outside, otherwise the
    lowest-index triangle containing the point (ties on shared edges break to
    the lower index), and bary holds barycentric coordinates summing to one.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lo, cell, nx, ny, buckets = m._bin_grid()
    v0, inv = m._tri_affine()
    idx = np.full(len(pts), -1, dtype=np.int64)
    bary = np.zeros((len(pts), 3))

    cells = np.floor((pts - lo) / cell).astype(int)
    inb = (
        (cells[:, 0] >= 0) & (cells[:, 0] < nx) & (cells[:, 1] >= 0) & (cells[:, 1] < ny)
    )
    keys = np.where(inb, cells[:, 0] * ny + cells[:, 1], -1)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    boundaries = np.flatnonzero(np.diff(sorted_keys)) + 1
    groups = np.split(order, boundaries)
    for grp in groups:
        key = keys[grp[0]]
        if key < 0:
            continue
        cand = buckets.get(int(key))
        if not cand:
            continue
        cand = np.asarray(cand)
        p = pts[grp]
        rel = p[:, None, :] - v0[cand][None, :, :]
        b12 = np.einsum("tij,ptj->pti", inv[cand], rel)
        b0 = 1.0 - b12[..., 0] - b12[..., 1]
        ok = (b12[..., 0] >= -tol) & (b12[..., 1] >= -tol) & (b0 >= -tol)
        # lowest triangle index among matches
        cand_sorted = np.argsort(cand, kind="stable")
        for pi in range(len(grp)):
            hits = cand_sorted[ok[pi][cand_sorted]]
            if len(hits):
                j = hits[0]
                t = int(cand[j])
                idx[grp[pi]] = t
                bary[grp[pi], 0] = b0[pi, j]
                bary[grp[pi], 1] = b12[pi, j, 0]
                bary[grp[pi], 2] = b12[pi, j, 1]
    return idx, bary


# ---------------------------------------------------------------------------
# Mesh generation
# ---------------------------------------------------------------------------


def _resample_rings(domain: PolygonalDomain, h: float):
    """Split every polygon edge into pieces of length <= h.

    Returns (points, segments, n_corners) where segments are consecutive
    index pairs per ring and the first len(vertices-per-ring) points of each
    ring block are the original polygon vertices.
    """
    pts = []
    segments = []
    for ring in domain.rings:
        start = len(pts)
        ring_idx = []
        for i in range(len(ring)):
            a, b = ring[i], ring[(i + 1) % len(ring)]
            ring_idx.append(len(pts))
            pts.append(a)
            n = max(1, int(math.ceil(np.hypot(*(b - a)) / h)))
            for k in range(1, n):
                pts.append(a + (b - a) * (k / n))
        m = len(pts) - start
        for k in range(m):
            segments.append((start + k, start + (k + 1) % m))
    return np.asarray(pts), segments


def _hex_seeds(domain: PolygonalDomain, h: float, clearance: float) -> np.ndarray:
    g = 0.9 * h
    x0, y0, x1, y1 = domain.bbox
    dy = g * math.sqrt(3.0) / 2.0
    rows = int(math.ceil((y1 - y0) / dy)) + 1
    cols = int(math.ceil((x1 - x0) / g)) + 1
    seeds = []
    for r in range(rows):
        off = 0.5 * g if r % 2 else 0.0
        xs = x0 + off + g * np.arange(cols)
        ys = np.full(cols, y0 + r * dy)
        seeds.append(np.column_stack([xs, ys]))
    seeds = np.vstack(seeds)
    inside = domain.contains(seeds)
    seeds = seeds[inside]
    if len(seeds):
        far = domain.distance_to_boundary(seeds) >= clearance
        seeds = seeds[far]
    return seeds


def _circumcenters(p0, p1, p2):
    """Circumcenters and circumradii of triangles given corner arrays."""
    ax, ay = p0[:, 0], p0[:, 1]
    bx, by = p1[:, 0], p1[:, 1]
    cx, cy = p2[:, 0], p2[:, 1]
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    d = np.where(np.abs(d) < 1e-300, np.sign(d) * 1e-300 + 1e-300, d)
    a2, b2, c2 = ax**2 + ay**2, bx**2 + by**2, cx**2 + cy**2
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    centers = np.column_stack([ux, uy])
    radii = np.hypot(ux - ax, uy - ay)
    return centers, radii


class _Builder:
    """Mutable state for the refinement loop."""

    def __init__(self, domain: PolygonalDomain, h: float, min_angle: float):
        self.domain = domain
        self.h = h
        self.min_angle = math.radians(min_angle)
        pts, segments = _resample_rings(domain, h)
        self.n_fixed = len(pts)  # ring sample points, never deleted
        seeds = _hex_seeds(domain, h, clearance=0.55 * h)
        self.points = np.vstack([pts, seeds]) if len(seeds) else pts
        self.is_boundary = np.zeros(len(self.points), dtype=bool)
        self.is_boundary[: self.n_fixed] = True
        self.segments = segments
        # interior angle at each original polygon vertex, for the exemption rule
        self.corner_angle = {}
        for ring in domain.rings:
            n = len(ring)
            for i in range(n):
                u = ring[(i - 1) % n] - ring[i]
                v = ring[(i + 1) % n] - ring[i]
                ang = math.atan2(np.cross(u, v), np.dot(u, v)) % (2 * math.pi)
                self.corner_angle[tuple(np.round(ring[i], 12))] = ang

    # -- segment operations --------------------------------------------------

    def _split_segments(self, seg_ids) -> bool:
        """Midpoint-split the given segments; drop free points in the new disks."""
        if not seg_ids:
            return False
        new_pts = []
        new_flags = []
        kill = np.zeros(len(self.points), dtype=bool)
        replacement = {}
        for sid in sorted(set(seg_ids)):
            i, j = self.segments[sid]
            mid = 0.5 * (self.points[i] + self.points[j])
            mid_idx = len(self.points) + len(new_pts)
            new_pts.append(mid)
            new_flags.append(True)
            replacement[sid] = [(i, mid_idx), (mid_idx, j)]
            # free points strictly inside the diametral disks of both halves
            for a, b in ((i, mid), (mid, j)):
                pa = self.points[a] if np.isscalar(a) else a
                pb = self.points[b] if np.isscalar(b) else b
                center = 0.5 * (pa + pb)
                rad = 0.5 * np.hypot(*(pb - pa))
                d = np.hypot(*(self.points - center[None, :]).T)
                kill |= (d < rad * (1 - 1e-12)) & ~self.is_boundary
        segments = []
        for sid, seg in enumerate(self.segments):
            segments.extend(replacement.get(sid, [seg]))
        self.segments = segments
        self.points = np.vstack([self.points, np.asarray(new_pts)])
        self.is_boundary = np.concatenate([self.is_boundary, np.asarray(new_flags)])
        kill = np.concatenate([kill, np.zeros(len(new_pts), dtype=bool)])
        if kill.any():
            keep = ~kill
            remap = np.cumsum(keep) - 1
            self.points = self.points[keep]
            self.is_boundary = self.is_boundary[keep]
            self.segments = [(remap[i], remap[j]) for i, j in self.segments]
        return True

    def _seg_midlengths(self):
        segs = np.asarray(self.segments)
        a = self.points[segs[:, 0]]
        b = self.points[segs[:, 1]]
        return 0.5 * (a + b), 0.5 * np.hypot(*(b - a).T)

    def _encroached_by(self, cand: np.ndarray):
        """Index of a boundary segment whose diametral disk holds cand, or -1."""
        mids, half = self._seg_midlengths()
        d = np.hypot(*(mids - cand[None, :]).T)
        hits = np.flatnonzero(d < half * (1 - 1e-12))
        return int(hits[0]) if len(hits) else -1

    def _crossed_segment(self, src: np.ndarray, dst: np.ndarray):
        """First boundary segment crossed walking src -> dst, or -1."""
        segs = np.asarray(self.segments)
        p, q = self.points[segs[:, 0]], self.points[segs[:, 1]]
        r = dst - src
        s = q - p
        denom = r[0] * s[:, 1] - r[1] * s[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((p - src)[:, 0] * s[:, 1] - (p - src)[:, 1] * s[:, 0]) / denom
            u = ((p - src)[:, 0] * r[1] - (p - src)[:, 1] * r[0]) / denom
        ok = (np.abs(denom) > 1e-300) & (t > 0) & (t <= 1) & (u >= 0) & (u <= 1)
        if not ok.any():
            return -1
        return int(np.flatnonzero(ok)[np.argmin(t[ok])])

    # -- main loop -------------------------------------------------------------

    def run(self):
        domain, h = self.domain, self.h
        tris = None
        for _ in range(_MAX_ROUNDS):
            delaunay = Delaunay(self.points)
            edge_set = set()
            for simplex in delaunay.simplices:
                for k in range(3):
                    a, b = simplex[k], simplex[(k + 1) % 3]
                    edge_set.add((a, b) if a < b else (b, a))
            missing = [
                sid
                for sid, (i, j) in enumerate(self.segments)
                if ((i, j) if i < j else (j, i)) not in edge_set
            ]
            if missing:
                self._split_segments(missing)
                continue

            simplices = delaunay.simplices
            corners = self.points[simplices]
            cent = corners.mean(axis=1)
            inside = domain.contains(cent)
            tris = simplices[inside]
            corners = corners[inside]

            e = np.stack(
                [
                    corners[:, 1] - corners[:, 0],
                    corners[:, 2] - corners[:, 1],
                    corners[:, 0] - corners[:, 2],
                ],
                axis=1,
            )
            lengths = np.hypot(e[..., 0], e[..., 1])
            min_ang = np.empty(len(tris))
            for k, (opp, s1, s2) in enumerate(((1, 2, 0), (2, 0, 1), (0, 1, 2))):
                cosv = (
                    lengths[:, s1] ** 2 + lengths[:, s2] ** 2 - lengths[:, opp] ** 2
                ) / (2.0 * lengths[:, s1] * lengths[:, s2])
                ang = np.arccos(np.clip(cosv, -1.0, 1.0))
                min_ang = ang if k == 0 else np.minimum(min_ang, ang)

            skinny = min_ang < self.min_angle
            if skinny.any():
                skinny &= ~self._corner_exempt(tris, corners)
            oversized = lengths.max(axis=1) > h * (1 + 1e-12)
            bad = np.flatnonzero(skinny | oversized)
            if len(bad) == 0:
                break

            cc, cr = _circumcenters(
                corners[bad, 0], corners[bad, 1], corners[bad, 2]
            )
            order = np.argsort(min_ang[bad])
            tree = cKDTree(self.points)
            accepted: list = []
            split_ids: set = set()
            for o in order:
                c, r = cc[o], cr[o]
                if not np.isfinite(c).all():
                    continue
                sid = self._encroached_by(c)
                if sid >= 0:
                    split_ids.add(sid)
                    continue
                if not domain.contains(c[None, :])[0]:
                    sid = self._crossed_segment(cent[bad[o]], c)
                    if sid >= 0:
                        split_ids.add(sid)
                    continue
                if tree.query(c)[0] < 0.35 * r:
                    continue
                if accepted and np.min(np.hypot(*(np.asarray(accepted) - c).T)) < 0.5 * r:
                    continue
                accepted.append(c)
            did_split = self._split_segments(list(split_ids))
            if accepted:
                self.points = np.vstack([self.points, np.asarray(accepted)])
                self.is_boundary = np.concatenate(
                    [self.is_boundary, np.zeros(len(accepted), dtype=bool)]
                )
            elif not did_split:
                raise MeshingError(
                    f"refinement stalled with {len(bad)} bad triangles "
                    f"(worst angle {math.degrees(min_ang.min()):.2f} deg)"
                )
        else:
            raise MeshingError("refinement did not converge within the round limit")

        # enforce positive orientation
        c = self.points[tris]
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        flip = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]) < 0
        tris[flip] = tris[flip][:, [0, 2, 1]]
        return self.points, tris, self.is_boundary

    def _corner_exempt(self, tris, corners) -> np.ndarray:
        """Triangles allowed to stay skinny: they touch a polygon corner whose
        own interior angle is below the quality target."""
        exempt = np.zeros(len(tris), dtype=bool)
        sharp = {
            k for k, ang in self.corner_angle.items() if ang < 2 * self.min_angle
        }
        if not sharp:
            return exempt
        for t in range(len(tris)):
            for v in range(3):
                if tuple(np.round(corners[t, v], 12)) in sharp:
                    exempt[t] = True
                    break
        return exempt


def triangulate(d: PolygonalDomain, h: float, min_angle: float = 20.0) -> TriMesh:
    """Conforming Delaunay-refined triangulation with max edge length <= h.

    Quality target: smallest angle >= min_angle degrees except next to polygon
    corners that are themselves sharper than twice the target.  The union of
    triangles reproduces the polygon area to 1e-10 relative, every polygon
    vertex appears as a mesh vertex, and boundary vertices are flagged.
    """
    if not (0 < h < d.diameter):
        raise ValidationError("h must be positive and below the domain diameter")
    points, tris, flags = _Builder(d, h, min_angle).run()
    mesh = TriMesh(
        vertices=points,
        triangles=np.asarray(tris, dtype=np.int64),
        boundary_vertex_flags=flags,
        h_target=float(h),
        domain_ref=d.name,
    )
    area = float(mesh.areas.sum())
    if abs(area - d.area) > 1e-10 * max(abs(d.area), 1.0):
        raise MeshingError(
            f"triangulation area {area!r} does not match polygon area {d.area!r}"
        )
    return mesh
