import numpy as np
import pytest

from turboshape.geometry import (
    AdaptationError,
    AdaptParams,
    BoundaryCurve,
    DegenerateTriangleError,
    GridError,
    SegmentKind,
    adapt_to_boundary,
    build_grid,
    points_in_polygon,
    polygon_area,
    polyline_distance,
    reclassify,
    triangle_areas,
    triangle_min_angles,
    update_boundary,
)


def hump_curve(amp, n_side=24):
    """Bar [0.1, 0.9] x [0.15, 0.35] with a cosine hump of height amp on top."""
    xs = np.linspace(0.1, 0.9, n_side)
    top_y = 0.35 + amp * 0.5 * (1 - np.cos(2 * np.pi * (xs - 0.1) / 0.8))
    verts = [(0.1, 0.15), (0.9, 0.15), (0.9, 0.35)]
    kinds = [SegmentKind.NEUMANN_FREE, SegmentKind.NEUMANN_FIXED]
    for x, y in zip(xs[::-1][1:], top_y[::-1][1:]):
        verts.append((x, y))
        kinds.append(SegmentKind.NEUMANN_FREE)
    kinds.append(SegmentKind.NEUMANN_FREE)   # segment closing back to start
    # replace the first left-going segment kind: last vertex is (0.1, 0.15)?
    verts = np.array(verts)
    kinds = np.array(kinds, dtype=np.int8)
    # left wall from (0.1, top) back down to (0.1, 0.15) is the closing segment
    kinds[-1] = SegmentKind.DIRICHLET
    return BoundaryCurve(verts, kinds)


class TestGrid:
    def test_counts_fine(self):
        g = build_grid(45, 25, (0.0, 0.0), (0.9, 0.5))
        assert g.n_nodes == 46 * 26
        assert g.n_triangles == 2250
        assert g.nodes.shape == (1196, 2)
        assert g.hx == pytest.approx(0.02)
        assert g.hy == pytest.approx(0.02)

    def test_counts_tiny(self):
        g = build_grid(2, 2, (0.0, 0.0), (1.0, 1.0))
        assert g.n_nodes == 9
        assert g.n_triangles == 8
        areas = triangle_areas(g.nodes, g.triangles)
        assert np.allclose(areas, 0.125)

    def test_counts_rect(self):
        g = build_grid(10, 6, (0.0, 0.0), (1.0, 0.6))
        assert g.n_nodes == 77
        assert g.n_triangles == 120
        areas = triangle_areas(g.nodes, g.triangles)
        assert np.allclose(areas, 0.005)
        assert np.all(areas > 0)

    def test_node_ordering(self):
        g = build_grid(3, 2, (0.0, 0.0), (3.0, 2.0))
        # row-major: node j*(nx+1)+i at (i*hx, j*hy)
        assert np.allclose(g.nodes[0], [0, 0])
        assert np.allclose(g.nodes[3], [3, 0])
        assert np.allclose(g.nodes[4], [0, 1])
        assert np.allclose(g.nodes[-1], [3, 2])

    def test_edge_count(self):
        g = build_grid(2, 2, (0.0, 0.0), (1.0, 1.0))
        e = g.edges()
        # horizontal + vertical + diagonal
        assert len(e) == 2 * 3 + 3 * 2 + 4
        assert np.all(e[:, 0] < e[:, 1])

    def test_bad_args(self):
        with pytest.raises(GridError):
            build_grid(0, 4, (0, 0), (1, 1))
        with pytest.raises(GridError):
            build_grid(4, 4, (0, 0), (0, 1))


class TestPolygonPrimitives:
    def test_area_square(self):
        sq = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], dtype=float)
        assert polygon_area(sq) == pytest.approx(4.0)
        assert polygon_area(sq[::-1]) == pytest.approx(-4.0)

    def test_containment(self):
        sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        pts = np.array([[0.5, 0.5], [1.5, 0.5], [-0.1, 0.2], [0.99, 0.01]])
        assert points_in_polygon(pts, sq).tolist() == [True, False, False, True]

    def test_distance(self):
        sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        pts = np.array([[0.5, 0.5], [2.0, 0.5], [0.5, -0.25]])
        d = polyline_distance(pts, sq)
        assert d == pytest.approx([0.5, 1.0, 0.25])

    def test_min_angles(self):
        coords = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
        tris = np.array([[0, 1, 2]])
        assert triangle_min_angles(coords, tris)[0] == pytest.approx(45.0)


class TestCurveValidation:
    def test_clockwise_rejected(self):
        verts = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=float)
        with pytest.raises(AdaptationError):
            BoundaryCurve(verts, np.zeros(4, dtype=np.int8))

    def test_bowtie_rejected(self):
        verts = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float)
        with pytest.raises(AdaptationError):
            BoundaryCurve(verts, np.zeros(4, dtype=np.int8))

    def test_zero_segment_rejected(self):
        verts = np.array([[0, 0], [1, 0], [1, 0], [1, 1]], dtype=float)
        with pytest.raises(AdaptationError):
            BoundaryCurve(verts, np.zeros(4, dtype=np.int8))

    def test_curve_outside_holdall(self):
        g = build_grid(4, 4, (0, 0), (1, 1))
        c = BoundaryCurve.rectangle((0.2, 0.2), (1.3, 0.8))
        with pytest.raises(AdaptationError):
            adapt_to_boundary(g, c)


class TestAdaptation:
    def test_gridline_rectangle_exact(self):
        g = build_grid(10, 6, (0.0, 0.0), (1.0, 0.6))
        c = BoundaryCurve.rectangle((0.2, 0.1), (0.8, 0.5))
        m = adapt_to_boundary(g, c)
        # curve lies on grid lines: nothing moves
        assert np.array_equal(m.coords, g.nodes)
        assert m.inside_area() == pytest.approx(0.6 * 0.4, abs=1e-15)
        assert m.inside.sum() == 2 * 6 * 4
        assert len(m.walk.nodes) == 2 * (6 + 4)
        # left side is clamped by default
        assert len(m.dirichlet_nodes) == 5
        assert np.allclose(m.coords[m.dirichlet_nodes][:, 0], 0.2)
        # clamped plus loaded right side
        assert len(m.fixed_nodes) == 10
        assert not m.movable[m.fixed_nodes].any()
        assert m.movable.sum() > 0

    def test_walk_is_closed_and_ccw(self):
        g = build_grid(10, 6, (0.0, 0.0), (1.0, 0.6))
        c = BoundaryCurve.rectangle((0.2, 0.1), (0.8, 0.5))
        m = adapt_to_boundary(g, c)
        poly = m.coords[m.walk.nodes]
        assert polygon_area(poly) > 0
        assert len(np.unique(m.walk.nodes)) == len(m.walk.nodes)

    def test_offgrid_rectangle_snaps_onto_curve(self):
        g = build_grid(20, 12, (0.0, 0.0), (1.0, 0.6))
        c = BoundaryCurve.rectangle((0.23, 0.11), (0.77, 0.49))
        m = adapt_to_boundary(g, c)
        params = AdaptParams()
        tol = params.tol_snap(g)
        assert len(m.snap_nodes) > 0
        d = polyline_distance(m.coords[m.snap_nodes], c.vertices)
        assert np.all(d <= 10 * tol)
        target = 0.54 * 0.38
        assert abs(m.inside_area() - target) <= 2 * max(g.hx, g.hy) * 1.84

    def test_adapt_is_idempotent(self):
        g = build_grid(20, 12, (0.0, 0.0), (1.0, 0.6))
        c = BoundaryCurve.rectangle((0.23, 0.11), (0.77, 0.49))
        m1 = adapt_to_boundary(g, c)
        m2 = adapt_to_boundary(m1, c)
        assert np.array_equal(m1.coords, m2.coords)
        assert np.array_equal(m1.inside, m2.inside)
        assert np.array_equal(m1.snap_nodes, m2.snap_nodes)
        assert np.array_equal(m1.walk.nodes, m2.walk.nodes)

    def test_hump_bar_quality_and_tags(self):
        g = build_grid(45, 25, (0.0, 0.0), (0.9, 0.5))
        c = hump_curve(0.07)
        m = adapt_to_boundary(g, c)
        sub = m.inside_triangles
        assert np.all(triangle_areas(m.coords, sub) > 0)
        assert triangle_min_angles(m.coords, sub).min() >= m.params.min_angle_deg
        # every walk node sits close to the curve
        d = polyline_distance(m.coords[m.walk.nodes], c.vertices)
        assert d.max() <= np.hypot(g.hx, g.hy) + 1e-12
        assert abs(m.inside_area() - c.area()) <= 2 * max(g.hx, g.hy) * 2.0
        # all three tags present on the walk
        kinds = set(m.walk.kinds.tolist())
        assert SegmentKind.DIRICHLET in kinds
        assert SegmentKind.NEUMANN_FIXED in kinds
        assert SegmentKind.NEUMANN_FREE in kinds
        assert len(m.dirichlet_nodes) >= 2

    def test_circle_area_first_order(self):
        r = 0.3
        theta = np.linspace(0, 2 * np.pi, 257)[:-1]
        verts = np.column_stack([0.5 + r * np.cos(theta), 0.5 + r * np.sin(theta)])
        kinds = np.full(256, SegmentKind.NEUMANN_FREE, dtype=np.int8)
        c = BoundaryCurve(verts, kinds)
        target = polygon_area(verts)
        errs = []
        for n in (20, 40, 80):
            g = build_grid(n, n, (0.0, 0.0), (1.0, 1.0))
            m = adapt_to_boundary(g, c)
            errs.append(abs(m.inside_area() - target))
            assert errs[-1] <= 4.0 * (1.0 / n)
        assert errs[2] < errs[0]


class TestUpdateBoundary:
    def test_matches_scratch_exactly(self):
        g = build_grid(45, 25, (0.0, 0.0), (0.9, 0.5))
        mesh = adapt_to_boundary(g, hump_curve(0.0))
        for amp in (0.012, 0.025, 0.04):
            new_curve = hump_curve(amp)
            updated, ch = update_boundary(mesh, new_curve)
            scratch = adapt_to_boundary(g, new_curve)
            assert not ch.full
            assert np.array_equal(updated.coords, scratch.coords)
            assert np.array_equal(updated.inside, scratch.inside)
            assert np.array_equal(updated.snap_nodes, scratch.snap_nodes)
            assert np.array_equal(updated.walk.nodes, scratch.walk.nodes)
            assert np.array_equal(updated.node_class, scratch.node_class)
            mesh = updated

    def test_changeset_is_local(self):
        g = build_grid(40, 24, (0.0, 0.0), (1.0, 0.6))
        c0 = BoundaryCurve.rectangle((0.2, 0.1), (0.8, 0.5))
        m0 = adapt_to_boundary(g, c0)
        dy = g.hy / 4
        c1 = BoundaryCurve.rectangle((0.2, 0.1 + dy), (0.8, 0.5 + dy))
        m1, ch = update_boundary(m0, c1)
        assert not ch.full
        assert len(ch.nodes) > 0
        band = dy + 2 * max(g.hx, g.hy) + 1e-12
        moved = g.nodes[ch.nodes]
        d = np.minimum(polyline_distance(moved, c0.vertices),
                       polyline_distance(moved, c1.vertices))
        assert d.max() <= band
        # far interior nodes untouched
        assert len(ch.nodes) < m0.inside.sum()

    def test_large_shift_falls_back_to_full(self):
        g = build_grid(40, 24, (0.0, 0.0), (1.0, 0.6))
        c0 = BoundaryCurve.rectangle((0.2, 0.1), (0.8, 0.5))
        m0 = adapt_to_boundary(g, c0)
        shift = 3.5 * max(g.hx, g.hy)
        c1 = BoundaryCurve.rectangle((0.2 + shift, 0.1), (0.8 + shift, 0.5))
        m1, ch = update_boundary(m0, c1)
        assert ch.full
        scratch = adapt_to_boundary(g, c1)
        assert np.array_equal(m1.coords, scratch.coords)
        assert np.array_equal(m1.inside, scratch.inside)

    def test_vertex_count_change_falls_back(self):
        g = build_grid(45, 25, (0.0, 0.0), (0.9, 0.5))
        m0 = adapt_to_boundary(g, hump_curve(0.02, n_side=24))
        m1, ch = update_boundary(m0, hump_curve(0.02, n_side=30))
        assert ch.full


class TestDeformation:
    def test_with_coords_keeps_topology(self):
        g = build_grid(20, 12, (0.0, 0.0), (1.0, 0.6))
        c = BoundaryCurve.rectangle((0.2, 0.1), (0.8, 0.5))
        m = adapt_to_boundary(g, c)
        coords = m.coords.copy()
        coords[m.movable] += 0.1 * g.h
        m2 = m.with_coords(coords)
        assert np.array_equal(m2.inside, m.inside)
        assert m2.walk is m.walk

    def test_with_coords_rejects_inversion(self):
        g = build_grid(10, 6, (0.0, 0.0), (1.0, 0.6))
        c = BoundaryCurve.rectangle((0.2, 0.1), (0.8, 0.5))
        m = adapt_to_boundary(g, c)
        coords = m.coords.copy()
        inner = np.flatnonzero(m.movable)[0]
        coords[inner] += np.array([3 * g.hx, 0.0])
        with pytest.raises(DegenerateTriangleError):
            m.with_coords(coords)

    def test_reclassify_identity(self):
        g = build_grid(20, 12, (0.0, 0.0), (1.0, 0.6))
        c = BoundaryCurve.rectangle((0.2, 0.1), (0.8, 0.5))
        m = adapt_to_boundary(g, c)
        m2, flipped = reclassify(m, m.coords)
        assert len(flipped) == 0
        assert np.array_equal(m2.inside, m.inside)
        assert np.array_equal(m2.walk.nodes, m.walk.nodes)

    def test_reclassify_consistent_with_polygon(self):
        g = build_grid(20, 12, (0.0, 0.0), (1.0, 0.6))
        c = BoundaryCurve.rectangle((0.2, 0.1), (0.8, 0.5))
        m = adapt_to_boundary(g, c)
        rng = np.random.default_rng(7)
        coords = m.coords.copy()
        bump = 0.2 * g.h * rng.uniform(-1, 1, coords[m.movable].shape)
        coords[m.movable] += bump
        m2, flipped = reclassify(m, coords)
        poly = m2.curve.vertices
        centroids = coords[g.triangles].mean(axis=1)
        assert np.array_equal(m2.inside, points_in_polygon(centroids, poly))
        diff = np.flatnonzero(m2.inside != m.inside)
        assert np.array_equal(np.sort(flipped), diff)
        assert abs(m2.inside_area() - polygon_area(poly)) <= \
            2 * max(g.hx, g.hy) * 2.0
