"""Exact shape derivatives of the failure intensity and volume.

Node coordinates are the design variables.  The failure intensity depends
on them both explicitly (areas, strain matrices) and through the
displacement solve; the implicit part is folded in with one adjoint solve
against the already factorized stiffness.  All element derivatives are
assembled from closed-form expressions, so the only approximation in the
gradient is floating-point roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elasticity import ElasticSystem
from .failure import WeibullParams, weibull_density

__all__ = [
    "GradientResult",
    "volume_gradient",
    "objective_gradients",
    "directional_fd",
    "fd_check",
]


@dataclass(frozen=True)
class GradientResult:
    """Objectives and their coordinate gradients for one configuration."""

    j1: float                 # failure intensity
    j2: float                 # area
    grad1: np.ndarray         # (n_nodes, 2) d j1 / d coords
    grad2: np.ndarray         # (n_nodes, 2) d j2 / d coords
    displacement: np.ndarray  # (n_nodes, 2)
    stresses: np.ndarray      # (n_elements, 3)
    adjoint: np.ndarray       # (n_nodes, 2)


# local strain-matrix derivatives: row pattern of Bt with
# b = (y1-y2, y2-y0, y0-y1), c = (x2-x1, x0-x2, x1-x0)
_DB_DY = {0: np.array([0.0, -1.0, 1.0]),
          1: np.array([1.0, 0.0, -1.0]),
          2: np.array([-1.0, 1.0, 0.0])}
_DC_DX = {0: np.array([0.0, 1.0, -1.0]),
          1: np.array([-1.0, 0.0, 1.0]),
          2: np.array([1.0, -1.0, 0.0])}


def _dbt(local: int, comp: int) -> np.ndarray:
    """d Bt / d (coordinate comp of local vertex); a constant 3x6 matrix."""
    dbt = np.zeros((3, 6))
    if comp == 0:
        dc = _DC_DX[local]
        dbt[1, 1::2] = dc
        dbt[2, 0::2] = dc
    else:
        db = _DB_DY[local]
        dbt[0, 0::2] = db
        dbt[2, 1::2] = db
    return dbt


def volume_gradient(system: ElasticSystem) -> tuple[float, np.ndarray]:
    """Inside area and its exact derivative with respect to coordinates."""
    mesh = system.mesh
    tris = mesh.grid.triangles[system.elements]
    b, c, two_a = system._geometry()[:3]
    grad = np.zeros_like(mesh.coords)
    for local in range(3):
        np.add.at(grad[:, 0], tris[:, local], 0.5 * b[:, local])
        np.add.at(grad[:, 1], tris[:, local], 0.5 * c[:, local])
    return float(np.sum(0.5 * two_a)), grad


def objective_gradients(system: ElasticSystem, weibull: WeibullParams,
                        u: np.ndarray | None = None) -> GradientResult:
    """Failure intensity, area, and both coordinate gradients.

    Reuses the system's factorization for the adjoint solve; `u` may pass a
    precomputed displacement for the stored loads.
    """
    mesh = system.mesh
    if u is None:
        u = system.solve()
    sigma = system.stresses(u)
    b, c, two_a, bt = system._geometry()
    areas = 0.5 * two_a
    d = system.d
    tris = mesh.grid.triangles[system.elements]
    ue = u.reshape(-1)[system.dofs]

    density, dw = weibull_density(sigma, weibull)
    j1 = float(areas @ density)
    j2, grad2 = volume_gradient(system)

    # adjoint right-hand side dJ1/dU: per element 0.5 * dw . D Bt
    djdu_el = 0.5 * np.einsum("ea,ab,ebj->ej", dw, d, bt)
    djdu = np.zeros(system.n_dofs)
    np.add.at(djdu, system.dofs.ravel(), djdu_el.ravel())
    lam = np.zeros(system.n_dofs)
    lam[system.free_dofs] = system.solve_free(djdu[system.free_dofs])
    lam_e = lam[system.dofs]

    s_tilde = np.einsum("ab,ebj,ej->ea", d, bt, ue)       # 2A * sigma
    bt_s = np.einsum("eai,ea->ei", bt, s_tilde)           # Bt^T s, (E, 6)

    grad1 = np.zeros_like(mesh.coords)
    fx, fy = system.load.volume_force

    for local in range(3):
        for comp in range(2):
            dbt = _dbt(local, comp)
            d2a = b[:, local] if comp == 0 else c[:, local]
            t_tilde = ue @ (d @ dbt).T                    # D dBt u, (E, 3)
            dbt_s = s_tilde @ dbt                          # dBt^T s, (E, 6)
            # d(K_e u)/dq = (dBt^T s + Bt^T t)/(2 two_a) - Bt^T s d2a/(2 two_a^2)
            dku = (dbt_s + np.einsum("eai,ea->ei", bt, t_tilde)) / (2 * two_a)[:, None] \
                - bt_s * (d2a / (2 * two_a**2))[:, None]
            adj_k = np.einsum("ei,ei->e", lam_e, dku)
            # volume-force derivative: f * d2a/6 at each vertex component
            adj_f = (d2a / 6.0) * (fx * lam_e[:, 0::2].sum(axis=1)
                                   + fy * lam_e[:, 1::2].sum(axis=1))
            # explicit part: d(A w)/dq with dsigma = t/two_a - sigma d2a/two_a
            dsigma = t_tilde / two_a[:, None] \
                - s_tilde * (d2a / two_a**2)[:, None]
            explicit = 0.5 * d2a * density \
                + areas * np.einsum("ea,ea->e", dw, dsigma)
            total = explicit + adj_f - adj_k
            np.add.at(grad1[:, comp], tris[:, local], total)

    _add_traction_terms(system, lam, grad1)
    return GradientResult(j1, j2, grad1, grad2, u, sigma,
                          lam.reshape(-1, 2))


def _add_traction_terms(system: ElasticSystem, lam: np.ndarray,
                        grad: np.ndarray):
    """Derivative of the traction load through edge lengths: adds
    d(lam . F_traction)/d coords in place."""
    mesh = system.mesh
    walk = mesh.walk
    coords = mesh.coords
    lam2 = lam.reshape(-1, 2)
    for kind, g in sorted(system.load.tractions.items()):
        gvec = np.asarray(g, dtype=float)
        on = walk.kinds == kind
        for n1, n2 in walk.edges[on]:
            delta = coords[n2] - coords[n1]
            ell = float(np.hypot(*delta))
            if ell == 0.0:
                continue
            weight = 0.5 * float(gvec @ (lam2[n1] + lam2[n2]))
            grad[n1] += weight * (coords[n1] - coords[n2]) / ell
            grad[n2] += weight * (coords[n2] - coords[n1]) / ell


# ---------------------------------------------------------------------------
# finite-difference verification


def directional_fd(func, coords: np.ndarray, direction: np.ndarray,
                   steps) -> np.ndarray:
    """Central-difference directional derivatives of func at several steps."""
    out = []
    for h in steps:
        jp = func(coords + h * direction)
        jm = func(coords - h * direction)
        out.append((jp - jm) / (2.0 * h))
    return np.asarray(out)


def fd_check(func, coords: np.ndarray, direction: np.ndarray,
             analytic: float, base_step: float, n_decades: int = 5
             ) -> tuple[float, np.ndarray]:
    """Best relative agreement of FD slopes over a decade sweep.

    Sweeps steps base_step * 10^-k for k = 0..n_decades-1 and returns the
    smallest relative error against the analytic directional derivative,
    along with all errors.  A correct gradient shows a plateau several
    orders below any single-step agreement a wrong one could produce.
    """
    steps = base_step * 10.0 ** (-np.arange(n_decades, dtype=float))
    slopes = directional_fd(func, coords, direction, steps)
    scale = max(abs(analytic), 1e-300)
    errors = np.abs(slopes - analytic) / scale
    return float(errors.min()), errors
