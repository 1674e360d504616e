import functools

import numpy as np
import pytest

from turboshape.optimize import (
    DescentConfig,
    WeightVector,
    common_descent_direction,
    descent_loop,
    dominates,
    front_sweep,
    nondominated,
    uniform_weights,
    weighted_value,
)
from turboshape.geometry import triangle_min_angles
from turboshape.problem import ShapeProblem, make_bar_case
from turboshape.smoothing import inner_product, represent_gradient

CASE = dict(nx=30, ny=12)
FAST = DescentConfig(max_iterations=12, rel_tol=1e-8)


@pytest.fixture(scope="module")
def bar_problem():
    return make_bar_case(**CASE)


class TestWeights:
    def test_normalization(self):
        w = WeightVector(2.0, 6.0)
        assert w.failure == pytest.approx(0.25)
        assert w.volume == pytest.approx(0.75)

    def test_invalid(self):
        with pytest.raises(ValueError):
            WeightVector(-0.1, 1.0)
        with pytest.raises(ValueError):
            WeightVector(0.0, 0.0)

    def test_uniform_sweep(self):
        ws = uniform_weights(5)
        assert len(ws) == 5
        assert ws[0].failure == 0.0
        assert ws[-1].failure == 1.0
        fs = [w.failure for w in ws]
        assert fs == sorted(fs)


class TestPareto:
    def test_dominates(self):
        assert dominates((1.0, 2.0), (2.0, 3.0))
        assert dominates((1.0, 2.0), (1.0, 3.0))
        assert not dominates((1.0, 2.0), (1.0, 2.0))
        assert not dominates((1.0, 4.0), (2.0, 3.0))

    def test_nondominated_mask(self):
        pts = np.array([[1.0, 5.0], [2.0, 4.0], [3.0, 6.0], [0.5, 7.0]])
        mask = nondominated(pts)
        assert mask.tolist() == [True, True, False, True]


class TestCommonDirection:
    def test_opposing_gradients_stall(self, bar_problem):
        rng = np.random.default_rng(8)
        g1 = np.zeros_like(bar_problem.mesh.coords)
        movable = bar_problem.mesh.movable
        g1[movable] = rng.standard_normal((int(movable.sum()), 2))
        metric = bar_problem.metric()
        d, alpha = common_descent_direction(g1, -g1, metric)
        w1 = represent_gradient(g1, metric)
        assert alpha == pytest.approx(0.5)
        assert np.abs(d).max() <= 1e-12 * np.abs(w1).max()

    def test_identical_gradients_recover_single(self, bar_problem):
        rng = np.random.default_rng(9)
        g = np.zeros_like(bar_problem.mesh.coords)
        movable = bar_problem.mesh.movable
        g[movable] = rng.standard_normal((int(movable.sum()), 2))
        metric = bar_problem.metric()
        d, _ = common_descent_direction(g, g, metric)
        w = represent_gradient(g, metric)
        assert np.allclose(d, -w, atol=1e-12 * np.abs(w).max())

    def test_descent_for_both_objectives(self, bar_problem):
        metric = bar_problem.metric()
        mesh = bar_problem.mesh
        rng = np.random.default_rng(10)
        movable = mesh.movable
        for _ in range(20):
            g1 = np.zeros_like(mesh.coords)
            g2 = np.zeros_like(mesh.coords)
            g1[movable] = rng.standard_normal((int(movable.sum()), 2))
            g2[movable] = rng.standard_normal((int(movable.sum()), 2))
            d, alpha = common_descent_direction(g1, g2, metric)
            norm2 = inner_product(d, d, metric)
            assert 0.0 <= alpha <= 1.0
            tol = 1e-9 * max(norm2, 1.0)
            assert float(np.sum(g1 * d)) <= -norm2 + tol
            assert float(np.sum(g2 * d)) <= -norm2 + tol


class TestDescent:
    def test_pure_failure_weight_reduces_j1(self, bar_problem):
        result = descent_loop(bar_problem, WeightVector(1.0, 0.0), FAST)
        assert len(result.records) >= 3
        j1_start = bar_problem.objectives()[0]
        assert result.records[-1].j1 < j1_start
        weighted = [r.weighted for r in result.records]
        assert all(b < a for a, b in zip(weighted, weighted[1:]))

    def test_pure_volume_thins_deeply(self, bar_problem):
        result = descent_loop(bar_problem, WeightVector(0.0, 1.0),
                              DescentConfig(max_iterations=60))
        j2_start = bar_problem.objectives()[1]
        assert result.records[-1].j2 < 0.5 * j2_start
        weighted = [r.weighted for r in result.records]
        assert all(b < a for a, b in zip(weighted, weighted[1:]))

    def test_rechart_restores_quality(self, bar_problem):
        result = descent_loop(bar_problem, WeightVector(0.5, 0.5),
                              DescentConfig(max_iterations=25, rel_tol=1e-12))
        dragged = result.problem
        fresh = dragged.rechart()
        m0, m1 = dragged.mesh, fresh.mesh
        a0 = triangle_min_angles(m0.coords, m0.grid.triangles[m0.inside]).min()
        a1 = triangle_min_angles(m1.coords, m1.grid.triangles[m1.inside]).min()
        assert a1 > a0
        dj = dragged.objectives()
        fj = fresh.objectives()
        assert fj[1] == pytest.approx(dj[1], rel=0.02)
        assert fj[0] == pytest.approx(dj[0], rel=0.25)

    def test_weighted_descent_monotone(self, bar_problem):
        config = DescentConfig(max_iterations=12, rel_tol=1e-10)
        result = descent_loop(bar_problem, WeightVector(0.5, 0.5), config)
        weighted = [r.weighted for r in result.records]
        assert all(b < a for a, b in zip(weighted, weighted[1:]))
        start = weighted_value(*bar_problem.objectives(), WeightVector(0.5, 0.5),
                               result.scales)
        assert weighted[0] < start

    def test_deterministic(self, bar_problem):
        r1 = descent_loop(bar_problem, WeightVector(0.7, 0.3), FAST)
        r2 = descent_loop(make_bar_case(**CASE), WeightVector(0.7, 0.3), FAST)
        assert [rec.weighted for rec in r1.records] == \
            [rec.weighted for rec in r2.records]
        assert r1.objectives == r2.objectives


class TestFrontSweep:
    def test_sequential_three_weights(self):
        factory = functools.partial(make_bar_case, **CASE)
        results = front_sweep(factory, uniform_weights(3),
                              DescentConfig(max_iterations=80))
        assert len(results) == 3
        points = [(p.j1, p.j2) for p, _ in results]
        assert all(np.isfinite(points).ravel())
        mask = nondominated(np.array(points))
        assert mask.all()
        # more failure emphasis gives lower failure intensity, more volume
        assert points[2][0] < points[0][0]
        assert points[2][1] > points[0][1]

    def test_parallel_matches_sequential(self):
        factory = functools.partial(make_bar_case, **CASE)
        weights = uniform_weights(3)
        seq = front_sweep(factory, weights, FAST, threads=1)
        par = front_sweep(factory, weights, FAST, threads=2)
        for (p1, _), (p2, _) in zip(seq, par):
            assert p1.j1 == p2.j1
            assert p1.j2 == p2.j2
            assert p1.weights == p2.weights
