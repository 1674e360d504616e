import numpy as np
import pytest

from turboshape.elasticity import (
    ElasticMaterial,
    ElasticSystem,
    LoadCase,
    element_geometry,
    normal_stress,
    von_mises,
)
from turboshape.geometry import (
    BoundaryCurve,
    SegmentKind,
    adapt_to_boundary,
    build_grid,
)

STEEL = ElasticMaterial(young=200e9, poisson=0.3)


def full_width_bar(nx=20, ny=8, length=1.0, height=0.4):
    g = build_grid(nx, ny, (0.0, 0.0), (length, height))
    c = BoundaryCurve.rectangle((0.0, 0.0), (length, height))
    return adapt_to_boundary(g, c)


def offgrid_mesh():
    g = build_grid(24, 16, (0.0, 0.0), (1.2, 0.8))
    c = BoundaryCurve.rectangle((0.13, 0.11), (1.07, 0.69))
    return adapt_to_boundary(g, c)


class TestMaterial:
    def test_plane_stress_matrix(self):
        d = ElasticMaterial(1.0, 0.25).d_matrix()
        factor = 1.0 / (1 - 0.25**2)
        assert d[0, 0] == pytest.approx(factor)
        assert d[0, 1] == pytest.approx(0.25 * factor)
        assert d[2, 2] == pytest.approx(1.0 / (2 * 1.25))
        assert d[0, 2] == 0.0

    def test_zero_poisson(self):
        d = ElasticMaterial(1.0, 0.0).d_matrix()
        assert np.allclose(d, np.diag([1.0, 1.0, 0.5]))

    def test_metric_material(self):
        # lambda = 0, mu = 1 corresponds to E = 2, nu = 0
        lam, mu = ElasticMaterial(2.0, 0.0).lame()
        assert lam == pytest.approx(0.0)
        assert mu == pytest.approx(1.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            ElasticMaterial(-1.0, 0.3)
        with pytest.raises(ValueError):
            ElasticMaterial(1.0, 0.5)


def dense_element_stiffness(pts, d):
    """Reference stiffness via shape-function gradients from a 3x3 solve."""
    m = np.column_stack([np.ones(3), pts])
    grads = np.linalg.inv(m)[1:, :]          # (2, 3): rows d/dx, d/dy
    area = 0.5 * abs(np.linalg.det(np.column_stack([pts[1] - pts[0],
                                                    pts[2] - pts[0]])))
    b = np.zeros((3, 6))
    b[0, 0::2] = grads[0]
    b[1, 1::2] = grads[1]
    b[2, 0::2] = grads[1]
    b[2, 1::2] = grads[0]
    return area * b.T @ d @ b


class TestAssembly:
    def test_element_geometry_identities(self):
        pts = np.array([[0.2, 0.1], [0.9, 0.3], [0.4, 0.8]])
        tris = np.array([[0, 1, 2]])
        b, c, two_a = element_geometry(pts, tris)
        u, v = pts[1] - pts[0], pts[2] - pts[0]
        area = 0.5 * (u[0] * v[1] - u[1] * v[0])
        assert two_a[0] == pytest.approx(2 * area)
        assert b.sum() == pytest.approx(0.0, abs=1e-15)
        assert c.sum() == pytest.approx(0.0, abs=1e-15)

    def test_single_triangle_matches_dense(self):
        g = build_grid(1, 1, (0.0, 0.0), (1.0, 1.0))
        c = BoundaryCurve.rectangle((0.0, 0.0), (1.0, 1.0))
        m = adapt_to_boundary(g, c)
        mat = ElasticMaterial(7.0, 0.2)
        sys = ElasticSystem(m, mat)
        d = mat.d_matrix()
        for k, tri in enumerate(m.grid.triangles[sys.elements]):
            expected = dense_element_stiffness(m.coords[tri], d)
            assert np.allclose(sys.k_values[k].reshape(6, 6), expected,
                               rtol=1e-13, atol=1e-13)

    def test_stiffness_symmetric_and_psd(self):
        m = offgrid_mesh()
        sys = ElasticSystem(m, STEEL)
        k = sys.stiffness()
        asym = abs(k - k.T).max()
        assert asym <= 1e-6 * abs(k).max()
        rng = np.random.default_rng(3)
        for _ in range(5):
            v = rng.standard_normal(k.shape[0])
            assert v @ (k @ v) >= -1e-8 * (v @ v)

    def test_traction_resultant(self):
        m = full_width_bar()
        t = 2.5e6
        sys = ElasticSystem(m, STEEL, LoadCase(
            tractions={SegmentKind.NEUMANN_FIXED: (t, 0.0)}))
        f = sys.force.reshape(-1, 2)
        assert f[:, 0].sum() == pytest.approx(t * 0.4, rel=1e-14)
        assert f[:, 1].sum() == pytest.approx(0.0, abs=1e-9)
        # load sits only on the right edge, halved at the corners
        right = np.flatnonzero(np.abs(m.coords[:, 0] - 1.0) < 1e-12)
        loaded = np.flatnonzero(f[:, 0] != 0.0)
        assert set(loaded) <= set(right)
        ys = m.coords[loaded, 1]
        hy = 0.4 / 8
        corner = (np.abs(ys) < 1e-12) | (np.abs(ys - 0.4) < 1e-12)
        assert np.allclose(f[loaded, 0][corner], t * hy / 2)
        assert np.allclose(f[loaded, 0][~corner], t * hy)

    def test_volume_force_resultant(self):
        m = offgrid_mesh()
        sys = ElasticSystem(m, STEEL, LoadCase(volume_force=(0.0, -9e3)))
        f = sys.force.reshape(-1, 2)
        assert f[:, 1].sum() == pytest.approx(-9e3 * m.inside_area(), rel=1e-12)
        assert np.all(f[:, 0] == 0.0)


class TestSolve:
    def test_patch_linear_field(self):
        m = offgrid_mesh()
        grad_u = np.array([[3e-4, 7e-4], [2e-4, -4e-4]])
        exact = m.coords @ grad_u.T
        sys = ElasticSystem(m, ElasticMaterial(10.0, 0.3),
                            constrained_nodes=m.walk.nodes)
        u = sys.solve(prescribed=exact)
        scale = np.abs(exact).max()
        active = np.unique(m.inside_triangles)
        err = np.abs(u[active] - exact[active]).max()
        assert err <= 1e-12 * scale
        sig = sys.stresses(u)
        spread = np.abs(sig - sig[0]).max()
        assert spread <= 1e-10 * np.abs(sig[0]).max()

    def test_uniaxial_zero_poisson_exact(self):
        m = full_width_bar()
        e, t = 200e9, 1e6
        sys = ElasticSystem(m, ElasticMaterial(e, 0.0), LoadCase(
            tractions={SegmentKind.NEUMANN_FIXED: (t, 0.0)}))
        u = sys.solve()
        exact_x = t * m.coords[:, 0] / e
        assert np.abs(u[:, 0] - exact_x).max() <= 1e-10 * exact_x.max()
        assert np.abs(u[:, 1]).max() <= 1e-10 * exact_x.max()
        sig = sys.stresses(u)
        assert np.allclose(sig[:, 0], t, rtol=1e-9)
        assert np.abs(sig[:, 1:]).max() <= 1e-9 * t

    def test_energy_identity(self):
        m = offgrid_mesh()
        sys = ElasticSystem(m, STEEL, LoadCase(
            tractions={SegmentKind.NEUMANN_FIXED: (3e6, 1e6)},
            volume_force=(0.0, -7e4)))
        u = sys.solve().reshape(-1)
        lhs = u @ (sys.stiffness() @ u)
        rhs = sys.force @ u
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_cg_matches_direct(self):
        m = full_width_bar(nx=10, ny=4)
        sys = ElasticSystem(m, STEEL, LoadCase(
            tractions={SegmentKind.NEUMANN_FIXED: (1e6, 5e5)}))
        ud = sys.solve(method="direct")
        uc = sys.solve(method="cg", tol=1e-12)
        assert np.abs(ud - uc).max() <= 1e-8 * np.abs(ud).max()


class TestIncrementalRefresh:
    def test_refresh_matches_rebuild(self):
        m = offgrid_mesh()
        load = LoadCase(tractions={SegmentKind.NEUMANN_FIXED: (2e6, 0.0)},
                        volume_force=(0.0, -5e4))
        sys = ElasticSystem(m, STEEL, load)
        rng = np.random.default_rng(11)
        mesh = m
        for _ in range(10):
            coords = mesh.coords.copy()
            inner = np.flatnonzero(mesh.movable)
            pick = rng.choice(inner, size=12, replace=False)
            coords[pick] += 0.1 * mesh.h * rng.uniform(-1, 1, (12, 2))
            mesh = mesh.with_coords(coords)
            touched = np.zeros(len(coords), dtype=bool)
            touched[pick] = True
            tris = mesh.grid.triangles
            changed = np.flatnonzero(touched[tris].any(axis=1))
            sys.refresh(mesh, changed)
            fresh = ElasticSystem(mesh, STEEL, load)
            assert np.array_equal(sys.k_values, fresh.k_values)
            assert np.array_equal(sys.force, fresh.force)
            assert np.array_equal(sys.stiffness().data, fresh.stiffness().data)
            u1 = sys.solve()
            u2 = fresh.solve()
            assert np.array_equal(u1, u2)

    def test_refresh_rejects_status_change(self):
        m = offgrid_mesh()
        sys = ElasticSystem(m, STEEL)
        g2 = BoundaryCurve.rectangle((0.13, 0.11), (1.07, 0.59))
        other = adapt_to_boundary(m.grid, g2)
        with pytest.raises(Exception):
            sys.refresh(other)


class TestStressHelpers:
    def test_normal_stress_uniaxial(self):
        sig = np.array([[1.0, 0.0, 0.0]])
        n = np.array([[1.0, 0.0], [0.0, 1.0],
                      [np.sqrt(0.5), np.sqrt(0.5)]])
        ns = normal_stress(sig, n)
        assert ns[0] == pytest.approx([1.0, 0.0, 0.5])

    def test_von_mises_cases(self):
        sig = np.array([[5.0, 0.0, 0.0], [0.0, 0.0, 2.0], [3.0, 3.0, 0.0]])
        vm = von_mises(sig)
        assert vm[0] == pytest.approx(5.0)
        assert vm[1] == pytest.approx(2.0 * np.sqrt(3.0))
        assert vm[2] == pytest.approx(3.0)
