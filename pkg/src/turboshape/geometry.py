"""Regular-grid geometry with boundary-fitted adaptation.

A rectangular hold-all is triangulated once by a structured grid whose
connectivity never changes.  Shapes are described by a closed polygonal
boundary curve with tagged segments.  Fitting moves the grid nodes closest
to the curve onto curve/grid-edge intersections and classifies every
triangle by whether its centroid lies inside the polygon; re-fitting after
a boundary update only recomputes nodes near the old and new curves and
reproduces the from-scratch result exactly.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridError",
    "AdaptationError",
    "DegenerateTriangleError",
    "SegmentKind",
    "StructuredGrid",
    "BoundaryCurve",
    "AdaptParams",
    "BoundaryWalk",
    "AdaptedMesh",
    "ChangeSet",
    "build_grid",
    "adapt_to_boundary",
    "update_boundary",
    "reclassify",
    "polygon_area",
    "points_in_polygon",
    "polyline_distance",
    "triangle_areas",
    "triangle_min_angles",
]

# Node classification relative to a curve (reference coordinates).
_OUT, _IN, _ON = 0, 1, 2


def _cross2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """z component of the cross product of stacked 2D vectors."""
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


class GridError(ValueError):
    """Invalid structured-grid construction arguments."""


class AdaptationError(RuntimeError):
    """Boundary fitting failed (bad curve, empty shape, broken walk)."""


class DegenerateTriangleError(AdaptationError):
    """An inside triangle violates the minimum-angle bound."""

    def __init__(self, message: str, triangle: int, angle_deg: float):
        super().__init__(message)
        self.triangle = triangle
        self.angle_deg = angle_deg


class SegmentKind(enum.IntEnum):
    """Role of a boundary-curve segment."""

    DIRICHLET = 0       # clamped, never moves
    NEUMANN_FIXED = 1   # loaded, geometry fixed during optimization
    NEUMANN_FREE = 2    # traction-free, movable design boundary


# ---------------------------------------------------------------------------
# structured grid


@dataclass(frozen=True)
class StructuredGrid:
    """Regular triangulation of a rectangular hold-all.

    Every cell is split along its lower-left to upper-right diagonal into
    two positively oriented triangles.  Connectivity is immutable; `nodes`
    holds the reference (unsnapped) coordinates.
    """

    nx: int
    ny: int
    origin: tuple[float, float]
    corner: tuple[float, float]
    nodes: np.ndarray       # (n_nodes, 2)
    triangles: np.ndarray   # (n_tris, 3) int

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_triangles(self) -> int:
        return 2 * self.nx * self.ny

    @property
    def hx(self) -> float:
        return (self.corner[0] - self.origin[0]) / self.nx

    @property
    def hy(self) -> float:
        return (self.corner[1] - self.origin[1]) / self.ny

    @property
    def h(self) -> float:
        """Mesh size used for step-length limits."""
        return min(self.hx, self.hy)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (lo, hi) pairs, lexsorted."""
        t = self.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)


def build_grid(nx: int, ny: int, origin: tuple[float, float],
               corner: tuple[float, float]) -> StructuredGrid:
    """Build the regular hold-all triangulation.

    Raises GridError for non-positive cell counts or an empty rectangle.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise GridError(f"cell counts must be positive integers, got {nx}x{ny}")
    nx, ny = int(nx), int(ny)
    x0, y0 = float(origin[0]), float(origin[1])
    x1, y1 = float(corner[0]), float(corner[1])
    if not (x1 > x0 and y1 > y0):
        raise GridError(f"corner {corner} must exceed origin {origin} componentwise")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys)          # row-major: node id = j*(nx+1) + i
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    i = np.arange(nx)
    j = np.arange(ny)
    jj, ii = np.meshgrid(j, i, indexing="ij")
    n00 = (jj * (nx + 1) + ii).ravel()
    n10 = n00 + 1
    n01 = n00 + (nx + 1)
    n11 = n01 + 1
    # diagonal n00 -> n11; both triangles counterclockwise
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = lower
    tris[1::2] = upper
    return StructuredGrid(nx, ny, (x0, y0), (x1, y1), nodes, tris)


# ---------------------------------------------------------------------------
# polygon primitives


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area of a closed polygon (positive if CCW)."""
    x, y = vertices[:, 0], vertices[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def points_in_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd (crossing number) containment test, vectorized over points."""
    px = points[:, 0:1]
    py = points[:, 1:2]
    ax, ay = vertices[:, 0], vertices[:, 1]
    bx, by = np.roll(ax, -1), np.roll(ay, -1)
    straddle = (ay > py) != (by > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
        hit = straddle & (px < x_cross)
    return np.bitwise_xor.reduce(hit, axis=1)


def polyline_distance(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Distance from each point to a closed polygonal curve."""
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    d = b - a                                     # (S, 2)
    len2 = np.maximum(np.einsum("ij,ij->i", d, d), 1e-300)
    ap = points[:, None, :] - a[None, :, :]       # (P, S, 2)
    t = np.clip(np.einsum("psj,sj->ps", ap, d) / len2, 0.0, 1.0)
    closest = a[None, :, :] + t[:, :, None] * d[None, :, :]
    diff = points[:, None, :] - closest
    return np.sqrt(np.einsum("psj,psj->ps", diff, diff).min(axis=1))


def _has_proper_self_intersection(vertices: np.ndarray) -> bool:
    """True if any two non-adjacent polygon segments strictly cross."""
    n = len(vertices)
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    i, j = np.triu_indices(n, k=2)
    adjacent = ((j + 1) % n) == i          # wrap-around neighbors
    i, j = i[~adjacent], j[~adjacent]
    if len(i) == 0:
        return False
    pi, qi = a[i], b[i]
    pj, qj = a[j], b[j]
    d1 = _cross2(qi - pi, pj - pi)
    d2 = _cross2(qi - pi, qj - pi)
    d3 = _cross2(qj - pj, pi - pj)
    d4 = _cross2(qj - pj, qi - pj)
    strict = (np.sign(d1) * np.sign(d2) < 0) & (np.sign(d3) * np.sign(d4) < 0)
    return bool(np.any(strict))


# ---------------------------------------------------------------------------
# boundary curve


@dataclass(frozen=True)
class BoundaryCurve:
    """Closed polygonal boundary with one SegmentKind per segment.

    Segment i runs from vertices[i] to vertices[(i+1) % len].  The polygon
    must be simple and counterclockwise (positive area).
    """

    vertices: np.ndarray          # (K, 2)
    kinds: np.ndarray             # (K,) SegmentKind values

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        k = np.asarray(self.kinds, dtype=np.int8)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "kinds", k)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise AdaptationError("curve needs at least 3 vertices of shape (K, 2)")
        if len(k) != len(v):
            raise AdaptationError("one segment kind per vertex is required")
        seg = np.roll(v, -1, axis=0) - v
        if np.any(np.einsum("ij,ij->i", seg, seg) == 0.0):
            raise AdaptationError("curve has a zero-length segment")
        if polygon_area(v) <= 0.0:
            raise AdaptationError("curve must be counterclockwise (positive area)")
        if _has_proper_self_intersection(v):
            raise AdaptationError("curve is self-intersecting")

    @property
    def n_segments(self) -> int:
        return len(self.vertices)

    def segment_points(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    def area(self) -> float:
        return polygon_area(self.vertices)

    def nearest_segment(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Index of and distance to the nearest segment for each point."""
        idx, dist, _ = self.project(points)
        return idx, dist

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nearest segment index, distance, and closest point per point."""
        a, b = self.segment_points()
        d = b - a
        len2 = np.maximum(np.einsum("ij,ij->i", d, d), 1e-300)
        ap = points[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("psj,sj->ps", ap, d) / len2, 0.0, 1.0)
        closest = a[None, :, :] + t[:, :, None] * d[None, :, :]
        diff = points[:, None, :] - closest
        dist = np.sqrt(np.einsum("psj,psj->ps", diff, diff))
        idx = np.argmin(dist, axis=1)
        rows = np.arange(len(points))
        return idx, dist[rows, idx], closest[rows, idx]

    @staticmethod
    def rectangle(origin: tuple[float, float], corner: tuple[float, float],
                  bottom: SegmentKind = SegmentKind.NEUMANN_FREE,
                  right: SegmentKind = SegmentKind.NEUMANN_FIXED,
                  top: SegmentKind = SegmentKind.NEUMANN_FREE,
                  left: SegmentKind = SegmentKind.DIRICHLET) -> "BoundaryCurve":
        x0, y0 = origin
        x1, y1 = corner
        verts = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
        kinds = np.array([bottom, right, top, left], dtype=np.int8)
        return BoundaryCurve(verts, kinds)


# ---------------------------------------------------------------------------
# adaptation


@dataclass(frozen=True)
class AdaptParams:
    """Tolerances for boundary fitting.

    Nodes within `snap_band_rel * min(hx, hy)` of the curve count as lying on
    it and are projected onto it; this absorbs near-tangent crossings that
    would otherwise leave sliver triangles.  Nodes within `tol_snap` are
    already on the curve and keep their exact coordinates.
    """

    tol_snap_rel: float = 1e-9        # relative to the larger hold-all extent
    snap_band_rel: float = 0.2        # relative to min(hx, hy)
    min_angle_deg: float = 10.0       # inside-triangle quality bound for fits
    deform_angle_deg: float = 1.0     # validity floor for dragged meshes
    neighborhood_radius: float | None = None   # default: 2 * max(hx, hy)

    def tol_snap(self, grid: StructuredGrid) -> float:
        ex = grid.corner[0] - grid.origin[0]
        ey = grid.corner[1] - grid.origin[1]
        return self.tol_snap_rel * max(ex, ey)

    def snap_band(self, grid: StructuredGrid) -> float:
        return self.snap_band_rel * min(grid.hx, grid.hy)

    def radius(self, grid: StructuredGrid) -> float:
        if self.neighborhood_radius is not None:
            return self.neighborhood_radius
        return 2.0 * max(grid.hx, grid.hy)


@dataclass(frozen=True)
class BoundaryWalk:
    """Closed loop of the inside region's boundary, inside on the left.

    Edge i runs nodes[i] -> nodes[(i+1) % L]; `kinds` and `segments` give the
    SegmentKind and index of the nearest curve segment per edge.
    """

    nodes: np.ndarray      # (L,) node indices
    kinds: np.ndarray      # (L,) SegmentKind per edge
    segments: np.ndarray   # (L,) curve segment index per edge

    @property
    def edges(self) -> np.ndarray:
        return np.column_stack([self.nodes, np.roll(self.nodes, -1)])


@dataclass(frozen=True)
class AdaptedMesh:
    """Structured grid fitted to a boundary curve.

    coords equals the reference grid everywhere except at snapped nodes;
    `inside` flags triangles whose centroid lies in the curve polygon.
    Treat all arrays as immutable.
    """

    grid: StructuredGrid
    curve: BoundaryCurve
    params: AdaptParams
    coords: np.ndarray            # (n_nodes, 2)
    inside: np.ndarray            # (n_tris,) bool
    node_class: np.ndarray        # (n_nodes,) reference classification
    snap_nodes: np.ndarray        # sorted indices of boundary-fitted nodes
    walk: BoundaryWalk
    dirichlet_nodes: np.ndarray   # sorted node indices on clamped segments
    fixed_nodes: np.ndarray       # sorted: clamped + load-fixed segments
    movable: np.ndarray           # (n_nodes,) bool

    @property
    def inside_triangles(self) -> np.ndarray:
        return self.grid.triangles[self.inside]

    @property
    def h(self) -> float:
        return self.grid.h

    def inside_area(self) -> float:
        return float(np.sum(triangle_areas(self.coords, self.inside_triangles)))

    def implied_curve(self) -> BoundaryCurve:
        """Boundary polygon traced by the current walk coordinates."""
        return BoundaryCurve(self.coords[self.walk.nodes].copy(),
                             self.walk.kinds.copy())

    def with_coords(self, coords: np.ndarray, check_quality: bool = True) -> "AdaptedMesh":
        """Same topology and statuses with node positions replaced.

        The stored curve is left untouched; use `reclassify` when statuses
        may flip or the transported boundary should become the mesh's curve.
        """
        coords = np.asarray(coords, dtype=float)
        if coords.shape != self.coords.shape:
            raise AdaptationError("coordinate array shape mismatch")
        if check_quality:
            _check_quality(coords, self.grid.triangles, self.inside,
                           self.params.min_angle_deg)
        return dataclasses.replace(self, coords=coords)


@dataclass(frozen=True)
class ChangeSet:
    """Entities touched by a boundary update."""

    nodes: np.ndarray      # indices whose coordinates changed
    triangles: np.ndarray  # indices whose status or any vertex changed
    full: bool = False     # True when the update fell back to a full re-fit


# -- mesh quality -----------------------------------------------------------


def triangle_areas(coords: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Signed areas (positive for CCW node order)."""
    p0 = coords[tris[:, 0]]
    p1 = coords[tris[:, 1]]
    p2 = coords[tris[:, 2]]
    return 0.5 * _cross2(p1 - p0, p2 - p0)


def triangle_min_angles(coords: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Smallest interior angle per triangle, in degrees."""
    p = coords[tris]                       # (M, 3, 2)
    angles = np.empty((len(tris), 3))
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        nu = np.linalg.norm(u, axis=1)
        nv = np.linalg.norm(v, axis=1)
        denom = np.maximum(nu * nv, 1e-300)
        c = np.clip(np.einsum("ij,ij->i", u, v) / denom, -1.0, 1.0)
        angles[:, k] = np.degrees(np.arccos(c))
    return angles.min(axis=1)


def _check_quality(coords, tris, inside, min_angle_deg):
    idx = np.flatnonzero(inside)
    if len(idx) == 0:
        raise AdaptationError("no inside triangles: curve encloses no cells")
    sub = tris[idx]
    areas = triangle_areas(coords, sub)
    if np.any(areas <= 0.0):
        worst = int(idx[int(np.argmin(areas))])
        raise DegenerateTriangleError(
            f"inside triangle {worst} inverted or collapsed", worst, 0.0)
    angles = triangle_min_angles(coords, sub)
    k = int(np.argmin(angles))
    if angles[k] < min_angle_deg:
        raise DegenerateTriangleError(
            f"inside triangle {int(idx[k])} has min angle {angles[k]:.3f} deg "
            f"< {min_angle_deg} deg; move the curve or reduce the step",
            int(idx[k]), float(angles[k]))


# -- core fitting -----------------------------------------------------------


def _classify_nodes(points, curve: BoundaryCurve, band: float) -> np.ndarray:
    cls = np.full(len(points), _OUT, dtype=np.int8)
    cls[points_in_polygon(points, curve.vertices)] = _IN
    on = polyline_distance(points, curve.vertices) <= band
    cls[on] = _ON
    return cls


def _edge_curve_intersection(p, q, curve: BoundaryCurve):
    """First intersection of segment p->q with the curve, by parameter on p->q.

    Returns (s, point) or None.  Straddling edges always hit at least one
    segment; parallel segments are skipped (their endpoints classify as ON).
    """
    a, b = curve.segment_points()
    r = q - p
    d = b - a
    denom = r[0] * d[:, 1] - r[1] * d[:, 0]
    ok = np.abs(denom) > 1e-300
    ap = a - p
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (ap[:, 0] * d[:, 1] - ap[:, 1] * d[:, 0]) / denom
        t = (ap[:, 0] * r[1] - ap[:, 1] * r[0]) / denom
    eps = 1e-12
    valid = ok & (s >= -eps) & (s <= 1 + eps) & (t >= -eps) & (t <= 1 + eps)
    if not np.any(valid):
        return None
    idx = np.flatnonzero(valid)
    best = idx[np.argmin(s[idx])]
    sb = float(np.clip(s[best], 0.0, 1.0))
    return sb, p + sb * r


def _snap_candidates(grid, curve, cls, edges, ranks, tol):
    """Per-node snap targets from all straddling edges among `edges`.

    Each straddling edge proposes its nearer endpoint (tie: smaller node
    index); each node keeps the nearest proposed intersection point (tie:
    smaller global edge rank).  Returns (node_idx, targets).
    """
    ref = grid.nodes
    lo, hi = edges[:, 0], edges[:, 1]
    straddle = ((cls[lo] == _IN) & (cls[hi] == _OUT)) | \
               ((cls[lo] == _OUT) & (cls[hi] == _IN))
    cand_node, cand_dist, cand_pt, cand_rank = [], [], [], []
    for k in np.flatnonzero(straddle):
        n_lo, n_hi = int(lo[k]), int(hi[k])
        hit = _edge_curve_intersection(ref[n_lo], ref[n_hi], curve)
        if hit is None:                    # tolerance gap; treat as non-crossing
            continue
        _, point = hit
        d_lo = float(np.hypot(*(ref[n_lo] - point)))
        d_hi = float(np.hypot(*(ref[n_hi] - point)))
        if abs(d_lo - d_hi) <= tol or d_lo <= d_hi:
            node, dist = n_lo, d_lo
        else:
            node, dist = n_hi, d_hi
        cand_node.append(node)
        cand_dist.append(dist)
        cand_pt.append(point)
        cand_rank.append(int(ranks[k]))
    if not cand_node:
        return np.empty(0, dtype=np.int64), np.empty((0, 2))
    cand_node = np.asarray(cand_node)
    cand_dist = np.asarray(cand_dist)
    cand_pt = np.asarray(cand_pt)
    cand_rank = np.asarray(cand_rank)
    order = np.lexsort((cand_rank, cand_dist, cand_node))
    node_sorted = cand_node[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = node_sorted[1:] != node_sorted[:-1]
    keep = order[first]
    return cand_node[keep], cand_pt[keep]


def _repair_collisions(ref, edges, move_nodes, targets, gamma=0.5):
    """Indices into move_nodes to revert so no fitted edge collapses.

    When both endpoints of a grid edge have snap targets closer than
    gamma times the edge length, the endpoint that moved further keeps its
    reference position; the pair would otherwise form sliver triangles.
    Deterministic: pairs are handled by ascending separation ratio, then
    node indices.
    """
    pos = {int(n): targets[k] for k, n in enumerate(move_nodes)}
    slot = {int(n): k for k, n in enumerate(move_nodes)}
    both = np.isin(edges[:, 0], move_nodes) & np.isin(edges[:, 1], move_nodes)
    cand = []
    for a, b in edges[both]:
        a, b = int(a), int(b)
        elen = float(np.hypot(*(ref[a] - ref[b])))
        sep = float(np.hypot(*(pos[a] - pos[b])))
        if sep < gamma * elen:
            cand.append((sep / elen, a, b))
    cand.sort()
    reverted: set[int] = set()
    for _, a, b in cand:
        if a in reverted or b in reverted:
            continue
        move_a = float(np.hypot(*(pos[a] - ref[a])))
        move_b = float(np.hypot(*(pos[b] - ref[b])))
        if move_a > move_b or (move_a == move_b and a > b):
            reverted.add(a)
        else:
            reverted.add(b)
    return np.array(sorted(slot[n] for n in reverted), dtype=np.int64)


def _extract_walk(coords, tris, inside, curve) -> BoundaryWalk:
    """Trace the inside region's boundary loop, oriented with inside on left."""
    sub = tris[inside]
    if len(sub) == 0:
        raise AdaptationError("no inside triangles: curve encloses no cells")
    directed = np.concatenate([sub[:, [0, 1]], sub[:, [1, 2]], sub[:, [2, 0]]])
    key_fwd = directed[:, 0] * (1 << 32) + directed[:, 1]
    key_rev = directed[:, 1] * (1 << 32) + directed[:, 0]
    boundary = ~np.isin(key_fwd, key_rev)
    bdir = directed[boundary]
    if len(bdir) == 0:
        raise AdaptationError("inside region has no boundary edges")
    tails = bdir[:, 0]
    if len(np.unique(tails)) != len(tails):
        raise AdaptationError("inside region boundary is non-manifold")
    nxt = dict(zip(tails.tolist(), bdir[:, 1].tolist()))
    start = int(tails.min())
    loop = [start]
    node = nxt[start]
    while node != start:
        loop.append(node)
        node = nxt[node]
        if len(loop) > len(bdir):
            raise AdaptationError("boundary walk failed to close")
    if len(loop) != len(bdir):
        raise AdaptationError("inside region boundary has multiple loops")
    nodes = np.asarray(loop, dtype=np.int64)
    mids = 0.5 * (coords[nodes] + coords[np.roll(nodes, -1)])
    seg_idx, _ = curve.nearest_segment(mids)
    kinds = curve.kinds[seg_idx]
    return BoundaryWalk(nodes, kinds.astype(np.int8), seg_idx.astype(np.int64))


def _node_masks(grid, curve, coords, tris, inside, walk):
    """Dirichlet / fixed node sets and the movable mask."""
    ex = grid.corner[0] - grid.origin[0]
    ey = grid.corner[1] - grid.origin[1]
    tol_fix = 1e-6 * max(ex, ey)
    wnodes = walk.nodes
    a, b = curve.segment_points()

    def near(kind_mask):
        if not np.any(kind_mask):
            return np.empty(0, dtype=np.int64)
        av, bv = a[kind_mask], b[kind_mask]
        d = bv - av
        len2 = np.maximum(np.einsum("ij,ij->i", d, d), 1e-300)
        ap = coords[wnodes][:, None, :] - av[None, :, :]
        t = np.clip(np.einsum("psj,sj->ps", ap, d) / len2, 0.0, 1.0)
        closest = av[None, :, :] + t[:, :, None] * d[None, :, :]
        diff = coords[wnodes][:, None, :] - closest
        dist = np.sqrt(np.einsum("psj,psj->ps", diff, diff)).min(axis=1)
        return np.sort(wnodes[dist <= tol_fix])

    dirichlet = near(curve.kinds == SegmentKind.DIRICHLET)
    fixed = near((curve.kinds == SegmentKind.DIRICHLET)
                 | (curve.kinds == SegmentKind.NEUMANN_FIXED))
    movable = np.zeros(len(coords), dtype=bool)
    movable[np.unique(tris[inside])] = True
    movable[fixed] = False
    return dirichlet, fixed, movable


def _finalize(grid, curve, params, coords, inside, node_class, snap_nodes,
              min_angle_deg=None):
    if min_angle_deg is None:
        min_angle_deg = params.min_angle_deg
    _check_quality(coords, grid.triangles, inside, min_angle_deg)
    walk = _extract_walk(coords, grid.triangles, inside, curve)
    dirichlet, fixed, movable = _node_masks(
        grid, curve, coords, grid.triangles, inside, walk)
    return AdaptedMesh(grid, curve, params, coords, inside, node_class,
                       np.sort(np.asarray(snap_nodes, dtype=np.int64)), walk,
                       dirichlet, fixed, movable)


def _check_curve_in_holdall(grid, curve, tol):
    lo = np.array(grid.origin) - tol
    hi = np.array(grid.corner) + tol
    v = curve.vertices
    if np.any(v < lo) or np.any(v > hi):
        raise AdaptationError("curve leaves the hold-all rectangle")


def _adapt_core(grid: StructuredGrid, curve: BoundaryCurve, params: AdaptParams,
                active: np.ndarray | None, prev: AdaptedMesh | None):
    """Shared fitting kernel.

    `active` limits which nodes are recomputed; inactive nodes and the
    triangles without active vertices keep their state from `prev`.  With
    active=None everything is computed from the reference grid.
    """
    tol = params.tol_snap(grid)
    band = params.snap_band(grid)
    ref = grid.nodes
    tris = grid.triangles
    edges = grid.edges()
    all_ranks = np.arange(len(edges))

    if active is None:
        active = np.ones(len(ref), dtype=bool)
        node_class = _classify_nodes(ref, curve, band)
        coords = ref.copy()
        inside_prev = None
    else:
        node_class = prev.node_class.copy()
        node_class[active] = _classify_nodes(ref[active], curve, band)
        coords = prev.coords.copy()
        coords[active] = ref[active]
        inside_prev = prev.inside

    edge_active = active[edges[:, 0]] | active[edges[:, 1]]
    nodes_snap, targets = _snap_candidates(
        grid, curve, node_class, edges[edge_active], all_ranks[edge_active], tol)
    on_nodes = np.flatnonzero((node_class == _ON) & active)
    exact_on = on_nodes
    if len(on_nodes):
        # near-curve nodes project onto the curve; exact hits keep their coords
        _, dist, proj = curve.project(ref[on_nodes])
        move = dist > tol
        exact_on = on_nodes[~move]
        nodes_snap = np.concatenate([nodes_snap, on_nodes[move]])
        targets = np.concatenate([targets, proj[move]]) if len(targets) else proj[move]
    if len(nodes_snap):
        drop = _repair_collisions(ref, edges, nodes_snap, targets)
        if len(drop):
            keep_mask = np.ones(len(nodes_snap), dtype=bool)
            keep_mask[drop] = False
            nodes_snap, targets = nodes_snap[keep_mask], targets[keep_mask]
        coords[nodes_snap] = targets

    tri_active = active[tris[:, 0]] | active[tris[:, 1]] | active[tris[:, 2]]
    centroids = coords[tris[tri_active]].mean(axis=1)
    if inside_prev is None:
        inside = np.zeros(len(tris), dtype=bool)
    else:
        inside = inside_prev.copy()
    inside[tri_active] = points_in_polygon(centroids, curve.vertices)

    snap_all = np.union1d(nodes_snap, exact_on)
    if prev is not None:
        # fitted nodes outside the active band keep their state
        keep = prev.snap_nodes[~active[prev.snap_nodes]]
        snap_all = np.union1d(snap_all, keep)
    return coords, inside, node_class, snap_all


def adapt_to_boundary(grid: StructuredGrid | AdaptedMesh, curve: BoundaryCurve,
                      params: AdaptParams | None = None) -> AdaptedMesh:
    """Fit the reference grid to a boundary curve from scratch.

    Idempotent: fitting an already fitted mesh to the same curve restarts
    from its reference grid and reproduces it exactly.
    """
    if isinstance(grid, AdaptedMesh):
        params = params or grid.params
        grid = grid.grid
    params = params or AdaptParams()
    _check_curve_in_holdall(grid, curve, params.tol_snap(grid))
    coords, inside, node_class, snaps = _adapt_core(grid, curve, params, None, None)
    return _finalize(grid, curve, params, coords, inside, node_class, snaps)


def update_boundary(mesh: AdaptedMesh, new_curve: BoundaryCurve,
                    prev_curve: BoundaryCurve | None = None,
                    params: AdaptParams | None = None
                    ) -> tuple[AdaptedMesh, ChangeSet]:
    """Re-fit after a boundary update, recomputing only near the curves.

    `mesh` must be a fitting result (coordinates equal to the reference grid
    except at snapped nodes), not a freely deformed copy.  Produces exactly
    the same coordinates and statuses as a from-scratch fit of `new_curve`;
    falls back to the full fit (flagged in the ChangeSet) when the curve
    moved further than the neighborhood radius.
    """
    params = params or mesh.params
    prev_curve = prev_curve or mesh.curve
    grid = mesh.grid
    _check_curve_in_holdall(grid, new_curve, params.tol_snap(grid))

    shift = max(
        float(polyline_distance(new_curve.vertices, prev_curve.vertices).max()),
        float(polyline_distance(prev_curve.vertices, new_curve.vertices).max()),
    )
    hmax = max(grid.hx, grid.hy)

    # the banded shift bound needs a vertex correspondence between curves
    if new_curve.n_segments != prev_curve.n_segments or shift > params.radius(grid):
        new_mesh = adapt_to_boundary(grid, new_curve, params)
        full = True
    else:
        band = shift + 2.0 * hmax
        ref = grid.nodes
        near_new = polyline_distance(ref, new_curve.vertices) <= band
        near_prev = polyline_distance(ref, prev_curve.vertices) <= band
        active = near_new | near_prev
        coords, inside, node_class, snaps = _adapt_core(
            grid, new_curve, params, active, mesh)
        new_mesh = _finalize(grid, new_curve, params, coords, inside,
                             node_class, snaps)
        full = False

    changed_nodes = np.flatnonzero(np.any(mesh.coords != new_mesh.coords, axis=1))
    vertex_changed = np.zeros(len(mesh.coords), dtype=bool)
    vertex_changed[changed_nodes] = True
    tris = grid.triangles
    tri_changed = (mesh.inside != new_mesh.inside) | \
        vertex_changed[tris[:, 0]] | vertex_changed[tris[:, 1]] | vertex_changed[tris[:, 2]]
    return new_mesh, ChangeSet(changed_nodes, np.flatnonzero(tri_changed), full)


def reclassify(mesh: AdaptedMesh, coords: np.ndarray) -> tuple[AdaptedMesh, np.ndarray]:
    """Rebuild a mesh at deformed coordinates against its transported boundary.

    The polygon implied by the moved walk nodes becomes the mesh's curve;
    every centroid is re-tested against it and the walk and node masks are
    rebuilt.  Quality is gated at the deform validity floor, not the fit
    bound: dragged elements may stretch well past fit quality and callers
    restore it later by refitting the grid.  Returns the new mesh and the
    indices of flipped triangles.
    """
    coords = np.asarray(coords, dtype=float)
    poly = coords[mesh.walk.nodes]
    if polygon_area(poly) <= 0.0:
        raise AdaptationError("deformed boundary polygon is inverted")
    curve = BoundaryCurve(poly.copy(), mesh.walk.kinds.copy())
    centroids = coords[mesh.grid.triangles].mean(axis=1)
    inside = points_in_polygon(centroids, curve.vertices)
    flipped = np.flatnonzero(inside != mesh.inside)
    new_mesh = _finalize(mesh.grid, curve, mesh.params, coords, inside,
                         mesh.node_class, mesh.snap_nodes,
                         mesh.params.deform_angle_deg)
    return new_mesh, flipped
