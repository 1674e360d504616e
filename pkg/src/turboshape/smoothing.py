"""Descent directions from raw coordinate gradients.

Raw nodal gradients of a shape functional are rough along a fitted
boundary.  Solving an auxiliary elastic problem (lambda = 0) with the raw
gradient as load turns them into a smooth displacement field that vanishes
on clamped and load-carrying boundaries; stepping against that field is a
guaranteed descent direction in the induced inner product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elasticity import ElasticMaterial, ElasticSystem, LoadCase
from .geometry import AdaptationError, AdaptedMesh, reclassify

__all__ = [
    "MetricParams",
    "StepTooLargeError",
    "metric_system",
    "represent_gradient",
    "inner_product",
    "dtn_smooth",
    "deform_mesh",
    "max_admissible_step",
]


@dataclass(frozen=True)
class MetricParams:
    """Auxiliary-problem weight; the metric scales linearly with mu."""

    mu: float = 1.0

    def material(self) -> ElasticMaterial:
        # E = 2 mu with nu = 0 gives Lame parameters (0, mu)
        return ElasticMaterial(young=2.0 * self.mu, poisson=0.0,
                               plane_stress=False)


class StepTooLargeError(RuntimeError):
    """Deformation collapsed an element; retry with at most max_step."""

    def __init__(self, message: str, max_step: float):
        super().__init__(message)
        self.max_step = max_step


def metric_system(mesh: AdaptedMesh,
                  params: MetricParams | None = None) -> ElasticSystem:
    """Auxiliary stiffness whose solve maps raw gradients to directions.

    Clamped on the non-design boundary (Dirichlet and load-carrying
    segments); free elsewhere, including the design boundary.
    """
    params = params or MetricParams()
    return ElasticSystem(mesh, params.material(), LoadCase(),
                         constrained_nodes=mesh.fixed_nodes)


def represent_gradient(raw: np.ndarray, system: ElasticSystem) -> np.ndarray:
    """Smooth displacement field W with a(W, v) = (raw, v) for all v.

    W is zero on the clamped nodes and outside the component; the pairing
    sum(raw * W) equals a(W, W) >= 0, so -W is a descent direction for the
    functional whose coordinate gradient is raw.
    """
    raw = np.asarray(raw, dtype=float)
    rhs = raw.ravel()[system.free_dofs]
    w = np.zeros(system.n_dofs)
    w[system.free_dofs] = system.solve_free(rhs)
    return w.reshape(-1, 2)


def inner_product(w1: np.ndarray, w2: np.ndarray,
                  system: ElasticSystem) -> float:
    """Metric inner product a(w1, w2) of two displacement fields."""
    k = system.stiffness()
    return float(w1.ravel() @ (k @ w2.ravel()))


def dtn_smooth(raw: np.ndarray, system: ElasticSystem) -> np.ndarray:
    """Boundary trace of the smoothed field, one row per walk node."""
    w = represent_gradient(raw, system)
    return w[system.mesh.walk.nodes]


def deform_mesh(mesh: AdaptedMesh, direction: np.ndarray,
                step: float) -> tuple[AdaptedMesh, np.ndarray]:
    """Move movable nodes by step * direction and rebuild classifications.

    Returns the deformed mesh and the indices of triangles whose inside
    status flipped.  Raises StepTooLargeError (carrying the largest step
    that still produces a valid mesh) when an element collapses.
    """
    motion = np.zeros_like(mesh.coords)
    motion[mesh.movable] = direction[mesh.movable]
    coords = mesh.coords + step * motion
    try:
        return reclassify(mesh, coords)
    except AdaptationError as exc:
        safe = max_admissible_step(mesh, motion, step)
        raise StepTooLargeError(
            f"step {step:g} collapses the mesh; largest valid step is "
            f"{safe:g}", safe) from exc


def max_admissible_step(mesh: AdaptedMesh, motion: np.ndarray,
                        step: float, n_bisect: int = 30) -> float:
    """Largest multiple of `motion` (up to `step`) keeping the mesh valid."""
    lo, hi = 0.0, float(step)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        try:
            reclassify(mesh, mesh.coords + mid * motion)
        except AdaptationError:
            hi = mid
        else:
            lo = mid
    return lo
