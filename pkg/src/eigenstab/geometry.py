"""Polygonal domains and the geometric quantities that drive the stability bounds.

Everything here is exact polygon arithmetic plus controlled sampling: point
membership and boundary distance are computed from the edges directly, the
two Hausdorff distances are estimated by branch-and-bound over the symmetric
difference (the distance field is 1-Lipschitz, so the error is certified by
the final cell radius), and the flatness / cone / covering checks follow
their defining constructions with declared sample densities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import shapely
from shapely.geometry import Polygon as _ShapelyPolygon

from .errors import ValidationError

_DEGENERACY_REL_TOL = 1e-12


def _as_ring(vertices) -> np.ndarray:
    ring = np.asarray(vertices, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2 or ring.shape[0] < 3:
        raise ValidationError("a ring needs at least 3 two-dimensional vertices")
    return ring


def _signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class PolygonalDomain:
    """A simple polygon (optionally with holes) standing for an open set.

    The outer ring is stored counterclockwise, holes clockwise; rings handed
    in reversed are reoriented.  Construction rejects self-intersections,
    repeated consecutive vertices and zero-length edges (tolerance
    1e-12 x diameter).
    """

    outer: np.ndarray
    holes: tuple = ()
    name: str = "domain"

    def __post_init__(self):
        outer = _as_ring(self.outer)
        if _signed_area(outer) < 0:
            outer = outer[::-1].copy()
        holes = []
        for h in self.holes:
            ring = _as_ring(h)
            if _signed_area(ring) > 0:
                ring = ring[::-1].copy()
            holes.append(ring)
        object.__setattr__(self, "outer", outer)
        object.__setattr__(self, "holes", tuple(holes))
        object.__setattr__(self, "_cache", {})
        self._validate()

    def _validate(self):
        diam = self.diameter
        tol = _DEGENERACY_REL_TOL * diam
        for ring in (self.outer, *self.holes):
            edge = np.roll(ring, -1, axis=0) - ring
            lengths = np.hypot(edge[:, 0], edge[:, 1])
            if np.any(lengths <= tol):
                raise ValidationError(
                    f"{self.name}: zero-length or near-duplicate edge (min {lengths.min():.3e})"
                )
        if abs(_signed_area(self.outer)) <= tol * diam:
            raise ValidationError(f"{self.name}: outer ring has vanishing area")
        poly = self.shapely
        if not poly.is_valid:
            raise ValidationError(
                f"{self.name}: invalid polygon ({shapely.is_valid_reason(poly)})"
            )

    # -- derived quantities ---------------------------------------------------

    @property
    def rings(self) -> tuple:
        return (self.outer, *self.holes)

    @property
    def diameter(self) -> float:
        if "diam" not in self._cache:
            pts = np.vstack(self.rings)
            # max pairwise distance; vertex counts stay small enough for O(m^2)
            d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
            self._cache["diam"] = float(np.sqrt(d2.max()))
        return self._cache["diam"]

    @property
    def area(self) -> float:
        return _signed_area(self.outer) + sum(_signed_area(h) for h in self.holes)

    @property
    def perimeter(self) -> float:
        total = 0.0
        for ring in self.rings:
            edge = np.roll(ring, -1, axis=0) - ring
            total += float(np.hypot(edge[:, 0], edge[:, 1]).sum())
        return total

    @property
    def bbox(self) -> tuple:
        pts = np.vstack(self.rings)
        return (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())

    @property
    def shapely(self) -> _ShapelyPolygon:
        if "shapely" not in self._cache:
            self._cache["shapely"] = _ShapelyPolygon(self.outer, list(self.holes))
        return self._cache["shapely"]

    def _edge_arrays(self):
        """Stacked edge start points and edge vectors over all rings."""
        if "edges" not in self._cache:
            starts = np.vstack(self.rings)
            ends = np.vstack([np.roll(ring, -1, axis=0) for ring in self.rings])
            self._cache["edges"] = (starts, ends - starts)
        return self._cache["edges"]

    # -- point queries ----------------------------------------------------------

    def contains(self, points) -> np.ndarray:
        """Even-odd crossing test over all rings; boundary points count as outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        px, py = pts[:, 0], pts[:, 1]
        starts, vecs = self._edge_arrays()
        x1, y1 = starts[:, 0], starts[:, 1]
        dx, dy = vecs[:, 0], vecs[:, 1]
        inside = np.zeros(len(pts), dtype=bool)
        chunk = max(1, int(4e6 / max(len(starts), 1)))
        for lo in range(0, len(pts), chunk):
            sl = slice(lo, lo + chunk)
            yy = py[sl][:, None]
            cond = (y1[None, :] > yy) != ((y1 + dy)[None, :] > yy)
            with np.errstate(divide="ignore", invalid="ignore"):
                xin = x1[None, :] + dx[None, :] * (yy - y1[None, :]) / dy[None, :]
            cross = cond & (px[sl][:, None] < xin)
            inside[sl] = np.sum(cross, axis=1) % 2 == 1
        return inside

    def distance_to_boundary(self, points) -> np.ndarray:
        """Exact unsigned distance to the union of all ring edges."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        starts, vecs = self._edge_arrays()
        vv = np.einsum("ij,ij->i", vecs, vecs)
        out = np.empty(len(pts))
        chunk = max(1, int(2e6 / max(len(starts), 1)))
        for lo in range(0, len(pts), chunk):
            p = pts[lo : lo + chunk]
            d = p[:, None, :] - starts[None, :, :]
            t = np.einsum("pni,ni->pn", d, vecs) / vv[None, :]
            np.clip(t, 0.0, 1.0, out=t)
            proj = d - t[:, :, None] * vecs[None, :, :]
            dist2 = np.einsum("pni,pni->pn", proj, proj)
            out[lo : lo + chunk] = np.sqrt(dist2.min(axis=1))
        return out

    def signed_distance(self, points) -> np.ndarray:
        """Negative inside the domain, positive outside."""
        d = self.distance_to_boundary(points)
        return np.where(self.contains(points), -d, d)

    # -- boundary parametrization -------------------------------------------------

    def boundary_arcs(self):
        """Per ring: (vertices, cumulative arc length including the closing edge)."""
        out = []
        for ring in self.rings:
            edge = np.roll(ring, -1, axis=0) - ring
            lengths = np.hypot(edge[:, 0], edge[:, 1])
            out.append((ring, np.concatenate([[0.0], np.cumsum(lengths)])))
        return out

    def boundary_points(self, step: float, include_vertices: bool = True) -> np.ndarray:
        """Points along every ring at arc spacing <= step (plus ring vertices)."""
        if step <= 0:
            raise ValidationError("step must be positive")
        out = []
        for ring, cum in self.boundary_arcs():
            total = cum[-1]
            n = max(int(math.ceil(total / step)), len(ring))
            s = np.linspace(0.0, total, n, endpoint=False)
            if include_vertices:
                s = np.unique(np.concatenate([s, cum[:-1]]))
            out.append(self.point_at_arc(ring, cum, s))
        return np.vstack(out)

    @staticmethod
    def point_at_arc(ring: np.ndarray, cum: np.ndarray, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float)) % cum[-1]
        idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(ring) - 1)
        nxt = (idx + 1) % len(ring)
        seg = cum[idx + 1] - cum[idx]
        t = np.where(seg > 0, (s - cum[idx]) / np.where(seg > 0, seg, 1.0), 0.0)
        return ring[idx] + t[:, None] * (ring[nxt] - ring[idx])

    # -- serialization ----------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "outer": self.outer.tolist(),
                "holes": [h.tolist() for h in self.holes],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PolygonalDomain":
        doc = json.loads(text)
        return cls(
            outer=np.asarray(doc["outer"], dtype=float),
            holes=tuple(np.asarray(h, dtype=float) for h in doc.get("holes", [])),
            name=doc.get("name", "domain"),
        )


# ---------------------------------------------------------------------------
# Hausdorff distances
# ---------------------------------------------------------------------------


def default_resolution(a: PolygonalDomain, b: PolygonalDomain) -> float:
    x0 = min(a.bbox[0], b.bbox[0])
    y0 = min(a.bbox[1], b.bbox[1])
    x1 = max(a.bbox[2], b.bbox[2])
    y1 = max(a.bbox[3], b.bbox[3])
    return 1e-3 * math.hypot(x1 - x0, y1 - y0)


def _directed_sup(
    inside_of: PolygonalDomain,
    outside_of: PolygonalDomain,
    target: PolygonalDomain,
    resolution: float,
) -> float:
    """sup of d(., boundary of target) over the region inside_of minus outside_of.

    Branch-and-bound on square cells: the objective is 1-Lipschitz and region
    membership is bracketed through signed distances, so a cell is discarded
    once value(center) + radius drops below the incumbent plus half the
    resolution, and the returned value is within the resolution of the sup.
    """
    x0 = min(inside_of.bbox[0], outside_of.bbox[0])
    y0 = min(inside_of.bbox[1], outside_of.bbox[1])
    x1 = max(inside_of.bbox[2], outside_of.bbox[2])
    y1 = max(inside_of.bbox[3], outside_of.bbox[3])
    if x1 <= x0 or y1 <= y0:
        return 0.0

    # square cells only: the quad split below tiles squares exactly
    cell = max(x1 - x0, y1 - y0) / 16.0
    nx = int(math.ceil((x1 - x0) / cell))
    ny = int(math.ceil((y1 - y0) / cell))
    cx, cy = np.meshgrid(
        x0 + cell * (np.arange(nx) + 0.5), y0 + cell * (np.arange(ny) + 0.5)
    )
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    radii = np.full(len(centers), cell / math.sqrt(2.0))

    best = 0.0
    floor = resolution / 4.0
    for _ in range(64):
        sd_in = inside_of.signed_distance(centers)
        sd_out = outside_of.signed_distance(centers)
        feasible = (sd_in < radii) & (sd_out > -radii)
        if not feasible.any():
            break
        centers, radii = centers[feasible], radii[feasible]
        sd_in, sd_out = sd_in[feasible], sd_out[feasible]

        val = target.distance_to_boundary(centers)
        in_region = (sd_in < 0) & (sd_out > 0)
        if in_region.any():
            best = max(best, float(val[in_region].max()))
        active = val + radii > best + 0.5 * resolution
        if not active.any():
            break
        centers, radii, val = centers[active], radii[active], val[active]
        if radii.max() <= floor:
            # sliver remainder: certified within radius of the residual bound
            best = max(best, float((val + radii).max()) - float(radii.max()))
            break
        r = radii / 2.0
        quad = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float) / math.sqrt(2)
        centers = (centers[:, None, :] + r[:, None, None] * quad[None, :, :]).reshape(-1, 2)
        radii = np.repeat(r, 4)
    return best


def _check_pair(a: PolygonalDomain, b: PolygonalDomain, resolution: float):
    if resolution <= 0:
        raise ValidationError("resolution must be positive")
    if a.area <= 0 or b.area <= 0:
        raise ValidationError("domains must be nonempty")


def hausdorff_distance_sets(
    a: PolygonalDomain, b: PolygonalDomain, resolution: float | None = None
) -> float:
    """Hausdorff distance between the two open sets, to within `resolution`.

    Only the symmetric difference contributes: for x in a minus b the distance
    to b equals the distance to b's boundary (and symmetrically), so the two
    directed sups run over a\\b against b's boundary and b\\a against a's.
    """
    if resolution is None:
        resolution = default_resolution(a, b)
    _check_pair(a, b, resolution)
    if a.shapely.symmetric_difference(b.shapely).area == 0.0:
        return 0.0
    return max(
        _directed_sup(a, b, target=b, resolution=resolution),
        _directed_sup(b, a, target=a, resolution=resolution),
    )


def hausdorff_distance_complements(
    a: PolygonalDomain, b: PolygonalDomain, resolution: float | None = None
) -> float:
    """Hausdorff distance between the complements, to within `resolution`.

    Points outside both domains contribute 0, so the sup reduces to
    d(., boundary of b) over b\\a and d(., boundary of a) over a\\b.
    """
    if resolution is None:
        resolution = default_resolution(a, b)
    _check_pair(a, b, resolution)
    if a.shapely.symmetric_difference(b.shapely).area == 0.0:
        return 0.0
    return max(
        _directed_sup(b, a, target=b, resolution=resolution),
        _directed_sup(a, b, target=a, resolution=resolution),
    )


def symmetric_difference_area(a: PolygonalDomain, b: PolygonalDomain) -> float:
    """Lebesgue measure of the symmetric difference, via polygon booleans."""
    return float(a.shapely.symmetric_difference(b.shapely).area)


# ---------------------------------------------------------------------------
# Reifenberg flatness
# ---------------------------------------------------------------------------


@dataclass
class FlatnessReport:
    """Estimated boundary flatness: sup over samples of the best-line deviation.

    separation_ok checks the two-sided separation condition at scale r0 with
    the flatness-minimizing line of each sample; separation_ok_any accepts any
    candidate line as the witness.  skipped counts (point, scale) pairs whose
    boundary arc inside the ball was shorter than the scale.
    """

    epsilon_hat: float
    r0: float
    worst_point: np.ndarray
    worst_scale: float
    separation_ok: bool
    separation_ok_any: bool = False
    skipped: int = 0


def _segments_in_ball(d: PolygonalDomain, x: np.ndarray, r: float):
    """Boundary edges clipped to the closed ball B(x, r) as (P, Q) endpoint arrays."""
    starts, vecs = d._edge_arrays()
    rel = starts - x[None, :]
    a = np.einsum("ij,ij->i", vecs, vecs)
    b = 2.0 * np.einsum("ij,ij->i", rel, vecs)
    c = np.einsum("ij,ij->i", rel, rel) - r * r
    disc = b * b - 4.0 * a * c
    hit = disc > 0
    if not hit.any():
        return np.empty((0, 2)), np.empty((0, 2))
    sq = np.sqrt(disc[hit])
    t1 = np.clip((-b[hit] - sq) / (2.0 * a[hit]), 0.0, 1.0)
    t2 = np.clip((-b[hit] + sq) / (2.0 * a[hit]), 0.0, 1.0)
    keep = t2 > t1
    s, v = starts[hit][keep], vecs[hit][keep]
    t1, t2 = t1[keep], t2[keep]
    return s + t1[:, None] * v, s + t2[:, None] * v


def _dist_to_segments(points: np.ndarray, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Exact distance from each point to the union of segments [P_i, Q_i]."""
    v = Q - P
    vv = np.einsum("ij,ij->i", v, v)
    vv = np.where(vv > 0, vv, 1.0)
    d = points[:, None, :] - P[None, :, :]
    t = np.clip(np.einsum("pni,ni->pn", d, v) / vv[None, :], 0.0, 1.0)
    proj = d - t[:, :, None] * v[None, :, :]
    return np.sqrt(np.einsum("pni,pni->pn", proj, proj).min(axis=1))


def _line_deviation_exact(P, Q, x, r, angle) -> float:
    """Two-sided deviation (normalized by r) for one line through x.

    The boundary-to-line sup is exact (the deviation is affine along each
    clipped segment, so endpoints suffice); the line-to-boundary sup runs over
    the chord clipped to the span of the boundary's projections, computed by a
    1D branch-and-bound on the 1-Lipschitz distance function.
    """
    direc = np.array([math.cos(angle), math.sin(angle)])
    normal = np.array([-direc[1], direc[0]])
    ends = np.vstack([P, Q]) - x[None, :]
    t = ends @ direc
    n = ends @ normal
    sup_b2l = float(np.abs(n).max())

    lo, hi = float(t.min()), float(t.max())
    if hi <= lo:
        return sup_b2l / r
    n = 16
    half = (hi - lo) / (2.0 * n)
    pts_t = lo + (hi - lo) * (np.arange(n) + 0.5) / n  # cell centers in [lo, hi]
    best = 0.0
    for _ in range(30):
        pts = x[None, :] + pts_t[:, None] * direc[None, :]
        dvals = _dist_to_segments(pts, P, Q)
        best = max(best, float(dvals.max()))
        keep = dvals + half > best + 1e-9 * r
        if not keep.any() or half <= 1e-6 * r:
            break
        if keep.sum() > 2000:  # flat stretches: keep the most promising cells
            keep_idx = np.argsort(dvals)[-2000:]
            mask = np.zeros(len(dvals), dtype=bool)
            mask[keep_idx] = True
            keep &= mask
        pts_t = np.concatenate([pts_t[keep] - half / 2.0, pts_t[keep] + half / 2.0])
        half /= 2.0
    return max(sup_b2l, best) / r


def _coarse_line_scan(P, Q, x, r, angles, n_chord: int = 9) -> np.ndarray:
    """Lower-accuracy deviation per angle, used only to rank candidates."""
    ends = np.vstack([P, Q]) - x[None, :]
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    nrm = np.column_stack([-dirs[:, 1], dirs[:, 0]])
    t = ends @ dirs.T
    n = ends @ nrm.T
    sup_b2l = np.abs(n).max(axis=0)
    tmin, tmax = t.min(axis=0), t.max(axis=0)
    frac = np.linspace(0.0, 1.0, n_chord)
    tt = tmin[:, None] + (tmax - tmin)[:, None] * frac[None, :]
    pts = x[None, None, :] + tt[:, :, None] * dirs[:, None, :]
    d = _dist_to_segments(pts.reshape(-1, 2), P, Q).reshape(len(angles), n_chord)
    return np.maximum(sup_b2l, d.max(axis=1)) / r


def _best_line(P, Q, x, r, n_angles: int, refine_steps: int = 18):
    """Min over lines through x of the normalized deviation: (value, angle)."""
    angles = np.linspace(0.0, math.pi, n_angles, endpoint=False)
    coarse = _coarse_line_scan(P, Q, x, r, angles)
    order = np.argsort(coarse)[: min(3, len(angles))]
    best_val, best_ang = math.inf, angles[order[0]]
    for j in order:
        v = _line_deviation_exact(P, Q, x, r, angles[j])
        if v < best_val:
            best_val, best_ang = v, angles[j]

    span = math.pi / n_angles
    lo, hi = best_ang - span, best_ang + span
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    g = lo + invphi * (hi - lo)
    fc = _line_deviation_exact(P, Q, x, r, c)
    fg = _line_deviation_exact(P, Q, x, r, g)
    for _ in range(refine_steps):
        if fc < fg:
            hi, g, fg = g, c, fc
            c = hi - invphi * (hi - lo)
            fc = _line_deviation_exact(P, Q, x, r, c)
        else:
            lo, c, fc = c, g, fg
            g = lo + invphi * (hi - lo)
            fg = _line_deviation_exact(P, Q, x, r, g)
        if fc < best_val:
            best_val, best_ang = fc, c
        if fg < best_val:
            best_val, best_ang = fg, g
    return float(best_val), float(best_ang % math.pi)


def line_fit_deviation(d: PolygonalDomain, x, r: float, n_angles: int = 64):
    """Best-line flatness contribution at one boundary point and one scale.

    Returns (deviation, angle), or (None, None) when the boundary carries less
    than r of arc inside the ball (the pair is then skipped with a warning
    count by the estimator).
    """
    x = np.asarray(x, dtype=float)
    P, Q = _segments_in_ball(d, x, r)
    if len(P) == 0:
        return None, None
    if float(np.hypot(*(Q - P).T).sum()) < r:
        return None, None
    return _best_line(P, Q, x, r, n_angles)


def separation_witnessed(
    d: PolygonalDomain, x, r0: float, angle: float, eps: float, n_side: int = 10
) -> bool:
    """Two-sided separation at scale r0 for a given line through x.

    Samples the two components of B(x, r0) cut at distance 2*eps*r0 from the
    line; witnesses separation when one side lies fully inside the domain and
    the other fully outside.  An empty band (eps >= 1/2) cannot witness.
    """
    x = np.asarray(x, dtype=float)
    band = 2.0 * eps * r0
    if band >= r0:
        return False
    direc = np.array([math.cos(angle), math.sin(angle)])
    normal = np.array([-direc[1], direc[0]])
    offsets = np.linspace(band, 0.95 * r0, n_side)
    sides = []
    for sgn in (1.0, -1.0):
        pts = []
        for off in offsets:
            half = 0.95 * math.sqrt(max(r0 * r0 - off * off, 0.0))
            ts = np.linspace(-half, half, n_side)
            pts.append(x + ts[:, None] * direc[None, :] + sgn * off * normal[None, :])
        inside = d.contains(np.vstack(pts))
        sides.append("in" if inside.all() else "out" if not inside.any() else "mixed")
    return ("in" in sides) and ("out" in sides)


def estimate_reifenberg_flatness(
    d: PolygonalDomain,
    r0: float,
    n_boundary: int = 256,
    n_scales: int = 16,
    n_angles: int = 64,
) -> FlatnessReport:
    """Estimate the flatness parameter by finite sampling.

    Boundary points are arc-length uniform (polygon vertices included),
    scales fall geometrically from r0 to r0/100, and each (point, scale) pair
    searches n_angles candidate lines through the point with golden-section
    refinement.  epsilon_hat is the sup over samples of the per-sample best
    line deviation; the separation condition is then checked at scale r0.
    """
    if not (0 < r0 < d.diameter):
        raise ValidationError("r0 must be positive and below the domain diameter")
    if min(n_boundary, n_scales, n_angles) < 8:
        raise ValidationError("sample counts must be at least 8")

    pts = d.boundary_points(d.perimeter / n_boundary, include_vertices=True)
    if len(pts) > 2 * n_boundary:
        pts = pts[:: len(pts) // n_boundary]
    scales = r0 * np.geomspace(1.0, 0.01, n_scales)

    eps_hat = 0.0
    worst_point, worst_scale = pts[0], float(scales[0])
    skipped = 0
    line_at_r0 = {}
    for x in pts:
        for k, r in enumerate(scales):
            dev, ang = line_fit_deviation(d, x, float(r), n_angles=n_angles)
            if dev is None:
                skipped += 1
                continue
            if k == 0:
                line_at_r0[tuple(x)] = ang
            if dev > eps_hat:
                eps_hat = dev
                worst_point, worst_scale = x, float(r)

    sep_min, sep_any = True, True
    fallback = np.linspace(0.0, math.pi, 16, endpoint=False)
    for x in pts:
        ang = line_at_r0.get(tuple(x))
        if ang is None:
            sep_min = sep_any = False
            continue
        if separation_witnessed(d, x, r0, ang, eps_hat):
            continue
        sep_min = False
        if not any(separation_witnessed(d, x, r0, a, eps_hat) for a in fallback):
            sep_any = False
    return FlatnessReport(
        epsilon_hat=float(eps_hat),
        r0=float(r0),
        worst_point=np.asarray(worst_point, dtype=float),
        worst_scale=worst_scale,
        separation_ok=bool(sep_min),
        separation_ok_any=bool(sep_any),
        skipped=skipped,
    )


# ---------------------------------------------------------------------------
# Cone condition
# ---------------------------------------------------------------------------


def _cone_offsets(rho: float, theta: float, n_r: int = 5, n_a: int = 9) -> np.ndarray:
    """Sample points of the cone of height rho and opening theta around +e1.

    Angles stay strictly inside the opening so a domain admitting the closed
    cone is not rejected for grazing contact.
    """
    radii = rho * np.linspace(0.2, 1.0, n_r)
    angs = theta * 0.999 * np.linspace(-1.0, 1.0, n_a)
    rr, aa = np.meshgrid(radii, angs)
    return np.column_stack([(rr * np.cos(aa)).ravel(), (rr * np.sin(aa)).ravel()])


def _local_direction_hints(d: PolygonalDomain, x: np.ndarray) -> list:
    """Inward direction candidates from the boundary features nearest to x."""
    hints = []
    for ring in d.rings:
        dist = np.hypot(*(ring - x[None, :]).T)
        j = int(np.argmin(dist))
        if dist[j] < 1e-9 * d.diameter:
            prev_v = ring[j - 1] - ring[j]
            next_v = ring[(j + 1) % len(ring)] - ring[j]
            bis = prev_v / np.linalg.norm(prev_v) + next_v / np.linalg.norm(next_v)
            if np.linalg.norm(bis) > 1e-12:
                a = math.atan2(bis[1], bis[0])
                hints.extend([a, a + math.pi])
    starts, vecs = d._edge_arrays()
    mid = starts + 0.5 * vecs
    j = int(np.argmin(np.hypot(*(mid - x[None, :]).T)))
    a = math.atan2(vecs[j, 0], -vecs[j, 1])  # edge normal
    hints.extend([a, a + math.pi])
    return hints


def check_cone_condition(
    d: PolygonalDomain,
    rho: float,
    theta: float,
    n_samples: int = 64,
    n_directions: int = 32,
):
    """Uniform cone condition check by direct sampling.

    For each sampled boundary point a direction is searched such that the
    cone, subtracted from every sampled point of B(x, 3 rho) inside the
    domain, stays inside, and added to every sampled point of the ball
    outside the domain stays outside.  Returns (ok, worst_margin, worst_point)
    where the margin is the smallest signed boundary distance over the tested
    points, positive when the condition holds with room.
    """
    if not (0 < theta <= math.pi):
        raise ValidationError("theta must lie in (0, pi]")
    if rho <= 0:
        raise ValidationError("rho must be positive")

    bpts = d.boundary_points(d.perimeter / n_samples, include_vertices=True)
    if len(bpts) > 2 * n_samples:
        bpts = bpts[:: len(bpts) // n_samples]

    radii = 3.0 * rho * np.linspace(0.15, 1.0, 6)
    angs = np.linspace(0.0, 2.0 * math.pi, 12, endpoint=False)
    rr, aa = np.meshgrid(radii, angs)
    ball = np.column_stack([(rr * np.cos(aa)).ravel(), (rr * np.sin(aa)).ravel()])

    base_cone = _cone_offsets(rho, theta)
    global_dirs = np.linspace(0.0, 2.0 * math.pi, n_directions, endpoint=False)
    tol = 1e-9 * d.diameter

    worst_margin = math.inf
    worst_point = bpts[0]
    ok = True
    for x in bpts:
        pts = ball + x[None, :]
        inside = d.contains(pts)
        pin = np.vstack([pts[inside], x[None, :]])
        pout = pts[~inside]
        best = -math.inf
        for phi in _local_direction_hints(d, x) + list(global_dirs):
            ca, sa = math.cos(phi), math.sin(phi)
            cone = base_cone @ np.array([[ca, sa], [-sa, ca]])
            probe_in = (pin[:, None, :] - cone[None, :, :]).reshape(-1, 2)
            m = float((-d.signed_distance(probe_in)).min())  # positive inside
            if m > -tol and len(pout):
                probe_out = (pout[:, None, :] + cone[None, :, :]).reshape(-1, 2)
                m = min(m, float(d.signed_distance(probe_out).min()))
            best = max(best, m)
            if best > 0.02 * rho:
                break  # comfortable margin, stop scanning directions
        if best < worst_margin:
            worst_margin = best
            worst_point = x
        if best < -tol:
            ok = False
    return ok, float(worst_margin), np.asarray(worst_point)


# ---------------------------------------------------------------------------
# Boundary covering and partition of unity
# ---------------------------------------------------------------------------


@dataclass
class Covering:
    """Boundary ball covering with 1/5-separated centers.

    Centers are pairwise at least radius/5 apart (equivalently the radius/10
    balls are disjoint) and every point within (4/5) radius of the boundary
    lies in some B(center, radius).  c_cov records count * radius / perimeter.
    """

    centers: np.ndarray
    radius: float
    count: int
    c_cov: float
    sample_step: float

    def __iter__(self):
        return iter(self.centers)


def build_covering(
    d: PolygonalDomain, r: float, sample_step: float | None = None
) -> Covering:
    """Greedy arc-order selection of boundary centers at separation r/5.

    Any rejected sample sits within r/5 of an accepted center, so every
    boundary point is within r/5 + sample_step/2 of a center, which gives the
    (4/5) r coverage property; the r/5 separation holds by construction with
    ties broken toward the earlier arc position.
    """
    if r <= 0 or r >= d.perimeter:
        raise ValidationError("covering radius must be positive and below the perimeter")
    if sample_step is None:
        sample_step = r / 100.0
    pts = d.boundary_points(sample_step, include_vertices=True)
    accepted: list = []
    thresh2 = (r / 5.0) ** 2
    for p in pts:
        if accepted:
            arr = np.asarray(accepted)
            if np.min(np.sum((arr - p[None, :]) ** 2, axis=1)) < thresh2:
                continue
        accepted.append(p)
    centers = np.asarray(accepted)
    return Covering(
        centers=centers,
        radius=float(r),
        count=len(centers),
        c_cov=len(centers) * r / d.perimeter,
        sample_step=float(sample_step),
    )


def _ell(t: np.ndarray) -> np.ndarray:
    # ramp: 0 on [0,1], linear on [1,3/2], 1 from 3/2 on
    return np.clip(2.0 * (t - 1.0), 0.0, 1.0)


def _plateau(t: np.ndarray) -> np.ndarray:
    # plateau: 1 on [0,3/2], linear on [3/2,2], 0 from 2 on
    return np.clip(-2.0 * (t - 2.0), 0.0, 1.0)


def partition_of_unity(cov: Covering, x) -> np.ndarray:
    """Cut-off family subordinate to the covering, summing to one.

    psi_0 multiplies ramp profiles of the scaled center distances, psi_i is
    the plateau profile of center i; normalizing by their sum (at least one
    everywhere) yields theta_0..theta_count with theta_0 = 0 on the union of
    the radius balls, theta_0 = 1 outside the doubled balls, and theta_i
    supported in the doubled ball of its center.

    Accepts one point (returns (count+1,)) or an (m, 2) array ((m, count+1)).
    """
    if cov.count == 0:
        raise ValidationError("covering is empty")
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    theta = np.empty((len(pts), cov.count + 1))
    chunk = max(1, int(2e6 / cov.count))
    for lo in range(0, len(pts), chunk):
        p = pts[lo : lo + chunk]
        diff = p[:, None, :] - cov.centers[None, :, :]
        t = np.sqrt(np.einsum("mki,mki->mk", diff, diff)) / cov.radius
        psi0 = np.prod(_ell(t), axis=1)
        psis = _plateau(t)
        total = psi0 + psis.sum(axis=1)
        theta[lo : lo + chunk, 0] = psi0 / total
        theta[lo : lo + chunk, 1:] = psis / total[:, None]
    return theta[0] if single else theta
