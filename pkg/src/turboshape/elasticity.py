"""Linear elasticity on boundary-fitted triangulations.

P1 displacement elements on the inside triangles of an adapted mesh.
The sparse stiffness layout is fixed by the connectivity, so coordinate
changes refresh only the affected element blocks and reassemble to the
bit-identical matrix a from-scratch build would produce.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import AdaptedMesh, SegmentKind

__all__ = [
    "ElasticMaterial",
    "LoadCase",
    "ElasticSystem",
    "SolverError",
]


class SolverError(RuntimeError):
    """The linear solve failed or did not converge."""


@dataclass(frozen=True)
class ElasticMaterial:
    """Isotropic material; plane stress unless stated otherwise."""

    young: float
    poisson: float
    plane_stress: bool = True

    def __post_init__(self):
        if self.young <= 0:
            raise ValueError(f"Young's modulus must be positive, got {self.young}")
        if not -1.0 < self.poisson < 0.5:
            raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {self.poisson}")

    def lame(self) -> tuple[float, float]:
        """Lame parameters (lambda, mu) of the 3D material."""
        e, nu = self.young, self.poisson
        lam = e * nu / ((1 + nu) * (1 - 2 * nu))
        mu = e / (2 * (1 + nu))
        return lam, mu

    def d_matrix(self) -> np.ndarray:
        """Constitutive matrix for engineering strain (exx, eyy, gxy)."""
        lam, mu = self.lame()
        if self.plane_stress:
            lam = 2 * lam * mu / (lam + 2 * mu)
        return np.array([
            [lam + 2 * mu, lam, 0.0],
            [lam, lam + 2 * mu, 0.0],
            [0.0, 0.0, mu],
        ])


@dataclass(frozen=True)
class LoadCase:
    """Boundary tractions per segment kind and a constant volume force.

    Tractions are forces per unit boundary length; the volume force is per
    unit area.  Segment kinds without an entry carry no traction.
    """

    tractions: Mapping[int, tuple[float, float]] = field(default_factory=dict)
    volume_force: tuple[float, float] = (0.0, 0.0)


def element_geometry(coords: np.ndarray, tris: np.ndarray):
    """Shape-gradient coefficients b, c and doubled areas for P1 triangles.

    b[i] = y[i+1] - y[i+2] and c[i] = x[i+2] - x[i+1] (indices mod 3), so
    2A = sum_i x[i] * b[i] and the strain matrix entries are b, c over 2A.
    """
    x = coords[tris, 0]
    y = coords[tris, 1]
    b = y[:, [1, 2, 0]] - y[:, [2, 0, 1]]
    c = x[:, [2, 0, 1]] - x[:, [1, 2, 0]]
    two_a = np.einsum("ei,ei->e", x, b)
    return b, c, two_a


def strain_matrices(b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Stacked matrices Bt with strain = Bt @ u_e / 2A, shape (n, 3, 6)."""
    n = len(b)
    bt = np.zeros((n, 3, 6))
    bt[:, 0, 0::2] = b
    bt[:, 1, 1::2] = c
    bt[:, 2, 0::2] = c
    bt[:, 2, 1::2] = b
    return bt


class ElasticSystem:
    """Assembled stiffness, load vector, and solver for one adapted mesh.

    The element order, sparse triplet layout, and summation order are fixed
    at construction; `refresh` recomputes only the requested element blocks
    and yields exactly the arrays a full reassembly would.
    """

    def __init__(self, mesh: AdaptedMesh, material: ElasticMaterial,
                 load: LoadCase | None = None,
                 constrained_nodes: np.ndarray | None = None):
        self.material = material
        self.load = load or LoadCase()
        self.d = material.d_matrix()
        self.elements = np.flatnonzero(mesh.inside)
        self._slot = {int(t): k for k, t in enumerate(self.elements)}
        tris = mesh.grid.triangles[self.elements]
        dofs = np.empty((len(tris), 6), dtype=np.int64)
        dofs[:, 0::2] = 2 * tris
        dofs[:, 1::2] = 2 * tris + 1
        self.dofs = dofs
        self.rows = np.repeat(dofs, 6, axis=1).ravel()
        self.cols = np.tile(dofs, (1, 6)).ravel()
        self.n_dofs = 2 * len(mesh.coords)
        self.k_values = np.empty((len(tris), 36))
        self.f_volume = np.empty((len(tris), 6))
        if constrained_nodes is None:
            constrained_nodes = mesh.dirichlet_nodes
        # nodes without any inside element have empty stiffness rows and are
        # pinned at zero so the reduced system stays regular
        inactive = np.setdiff1d(np.arange(len(mesh.coords)), np.unique(tris))
        self.constrained = np.union1d(
            np.asarray(constrained_nodes, dtype=np.int64), inactive)
        cdofs = np.concatenate([2 * self.constrained, 2 * self.constrained + 1])
        self.constrained_dofs = np.sort(cdofs)
        free = np.ones(self.n_dofs, dtype=bool)
        free[self.constrained_dofs] = False
        self.free_dofs = np.flatnonzero(free)
        self._set_mesh(mesh, None)

    # -- assembly ----------------------------------------------------------

    def _set_mesh(self, mesh: AdaptedMesh, changed_tris: np.ndarray | None):
        self.mesh = mesh
        tris = mesh.grid.triangles[self.elements]
        if changed_tris is None:
            sel = slice(None)
            sub = tris
        else:
            local = [self._slot[int(t)] for t in changed_tris if int(t) in self._slot]
            sel = np.asarray(sorted(local), dtype=np.int64)
            sub = tris[sel]
        if len(sub):
            b, c, two_a = element_geometry(mesh.coords, sub)
            if np.any(two_a <= 0):
                raise SolverError("element with non-positive area in assembly")
            bt = strain_matrices(b, c)
            ke = np.einsum("eai,ab,ebj->eij", bt, self.d, bt) / (2 * two_a)[:, None, None]
            self.k_values[sel] = ke.reshape(len(sub), 36)
            fx, fy = self.load.volume_force
            fe = np.empty((len(sub), 6))
            fe[:, 0::2] = fx * (0.5 * two_a / 3)[:, None]
            fe[:, 1::2] = fy * (0.5 * two_a / 3)[:, None]
            self.f_volume[sel] = fe
        if changed_tris is None or len(sub):
            self._geom_cache = None
        self._assemble_force()
        self._matrix = None
        self._kff = None
        self._factor = None

    def _assemble_force(self):
        f = np.zeros(self.n_dofs)
        np.add.at(f, self.dofs.ravel(), self.f_volume.ravel())
        walk = self.mesh.walk
        coords = self.mesh.coords
        edges = walk.edges
        lengths = np.linalg.norm(coords[edges[:, 1]] - coords[edges[:, 0]], axis=1)
        for kind, g in sorted(self.load.tractions.items()):
            gx, gy = g
            on = walk.kinds == kind
            for (n1, n2), ell in zip(edges[on], lengths[on]):
                half = 0.5 * ell
                f[2 * n1] += gx * half
                f[2 * n1 + 1] += gy * half
                f[2 * n2] += gx * half
                f[2 * n2 + 1] += gy * half
        self.force = f

    def refresh(self, mesh: AdaptedMesh, changed_tris: np.ndarray | None = None):
        """Adopt new coordinates, recomputing only the changed element blocks.

        The mesh must have the same inside set and walk as the one the
        system was built for; pass changed_tris=None to recompute all blocks.
        """
        if not np.array_equal(np.flatnonzero(mesh.inside), self.elements):
            raise SolverError("inside set changed; build a new system")
        self._set_mesh(mesh, changed_tris)

    # -- linear algebra ----------------------------------------------------

    def stiffness(self) -> sp.csr_matrix:
        if self._matrix is None:
            coo = sp.coo_matrix(
                (self.k_values.ravel(), (self.rows, self.cols)),
                shape=(self.n_dofs, self.n_dofs))
            self._matrix = coo.tocsr()
        return self._matrix

    def _split(self):
        if self._matrix is None or self._kff is None:
            k = self.stiffness()
            free = self.free_dofs
            self._kff = k[free][:, free].tocsc()
            self._kfc = k[free][:, self.constrained_dofs].tocsr()
        return self._kff, self._kfc

    def _factorize(self):
        if self._factor is None:
            kff, _ = self._split()
            self._factor = spla.splu(kff)
        return self._factor

    def solve(self, prescribed: np.ndarray | None = None, method: str = "direct",
              tol: float = 1e-10) -> np.ndarray:
        """Displacement field (n_nodes, 2) under the stored loads.

        `prescribed` optionally gives nonzero values at the constrained
        nodes as an (n_nodes, 2) array; only constrained entries are read.
        """
        u = np.zeros(self.n_dofs)
        if prescribed is not None:
            pres = np.asarray(prescribed, dtype=float).ravel()
            u[self.constrained_dofs] = pres[self.constrained_dofs]
        rhs = self.force[self.free_dofs] - self._prescribed_term(u)
        u[self.free_dofs] = self.solve_free(rhs, method=method, tol=tol)
        return u.reshape(-1, 2)

    def _prescribed_term(self, u_full: np.ndarray) -> np.ndarray:
        uc = u_full[self.constrained_dofs]
        if np.any(uc != 0.0):
            _, kfc = self._split()
            return kfc @ uc
        return np.zeros(len(self.free_dofs))

    def solve_free(self, rhs_free: np.ndarray, method: str = "direct",
                   tol: float = 1e-10) -> np.ndarray:
        """Solve the constrained system for a right-hand side on free dofs."""
        if method == "direct":
            return self._factorize().solve(rhs_free)
        if method == "cg":
            kff, _ = self._split()
            diag = kff.diagonal()
            precond = spla.LinearOperator(kff.shape, lambda x: x / diag)
            x, info = spla.cg(kff, rhs_free, rtol=tol, atol=0.0, M=precond)
            if info != 0:
                raise SolverError(f"conjugate gradient failed with info={info}")
            return x
        raise ValueError(f"unknown solve method {method!r}")

    # -- derived fields ------------------------------------------------------

    def _geometry(self):
        if self._geom_cache is None:
            tris = self.mesh.grid.triangles[self.elements]
            b, c, two_a = element_geometry(self.mesh.coords, tris)
            self._geom_cache = (b, c, two_a, strain_matrices(b, c))
        return self._geom_cache

    @property
    def areas(self) -> np.ndarray:
        return 0.5 * self._geometry()[2]

    def stresses(self, u: np.ndarray) -> np.ndarray:
        """Constant element stress (sxx, syy, sxy) per inside triangle."""
        _, _, two_a, bt = self._geometry()
        ue = u.reshape(-1)[self.dofs]
        strain = np.einsum("eij,ej->ei", bt, ue) / two_a[:, None]
        return strain @ self.d.T

    def strain_energy(self, u: np.ndarray) -> float:
        uf = u.reshape(-1)
        return 0.5 * float(uf @ (self.stiffness() @ uf))


def normal_stress(sigma: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """n . sigma n for stress rows (sxx, syy, sxy) and unit normals.

    Broadcasts an (E, 3) stress array against (A, 2) normals to (E, A).
    """
    nx = normals[:, 0]
    ny = normals[:, 1]
    sxx = sigma[:, 0:1]
    syy = sigma[:, 1:2]
    sxy = sigma[:, 2:3]
    return sxx * nx**2 + 2 * sxy * nx * ny + syy * ny**2


def von_mises(sigma: np.ndarray) -> np.ndarray:
    """Plane-stress von Mises equivalent of (sxx, syy, sxy) rows."""
    sxx, syy, sxy = sigma[:, 0], sigma[:, 1], sigma[:, 2]
    return np.sqrt(sxx**2 - sxx * syy + syy**2 + 3 * sxy**2)
