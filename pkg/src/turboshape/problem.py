"""Shape-optimization problem state: mesh, physics, and objective plumbing.

A problem instance owns one fitted mesh plus the material, load, and
failure parameters, and lazily builds the solver and gradient data.  All
mesh-changing operations return new instances so descent histories stay
inspectable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .adjoint import GradientResult, objective_gradients
from .elasticity import ElasticMaterial, ElasticSystem, LoadCase
from .failure import WeibullParams, weibull_intensity
from .geometry import (
    AdaptedMesh,
    BoundaryCurve,
    SegmentKind,
    adapt_to_boundary,
    build_grid,
)
from .smoothing import MetricParams, deform_mesh, metric_system

__all__ = ["ShapeProblem", "make_bar_case"]


@dataclass
class ShapeProblem:
    """One design point of the failure/volume shape problem."""

    mesh: AdaptedMesh
    material: ElasticMaterial
    load: LoadCase
    weibull: WeibullParams
    metric_params: MetricParams = field(default_factory=MetricParams)
    reference_curve: BoundaryCurve | None = None

    def __post_init__(self):
        if self.reference_curve is None:
            self.reference_curve = self.mesh.curve
        self._system: ElasticSystem | None = None
        self._metric: ElasticSystem | None = None
        self._gradients: GradientResult | None = None

    # -- lazy solver state ---------------------------------------------------

    def system(self) -> ElasticSystem:
        if self._system is None:
            self._system = ElasticSystem(self.mesh, self.material, self.load)
        return self._system

    def metric(self) -> ElasticSystem:
        if self._metric is None:
            self._metric = metric_system(self.mesh, self.metric_params)
        return self._metric

    def gradients(self) -> GradientResult:
        if self._gradients is None:
            self._gradients = objective_gradients(self.system(), self.weibull)
        return self._gradients

    def objectives(self) -> tuple[float, float]:
        """(failure intensity, area) without gradient work."""
        if self._gradients is not None:
            return self._gradients.j1, self._gradients.j2
        sys = self.system()
        u = sys.solve()
        j1 = weibull_intensity(sys.stresses(u), sys.areas, self.weibull)
        return j1, float(np.sum(sys.areas))

    # -- design motion ---------------------------------------------------------

    def with_mesh(self, mesh: AdaptedMesh) -> "ShapeProblem":
        return ShapeProblem(mesh, self.material, self.load, self.weibull,
                            self.metric_params, self.reference_curve)

    def deform(self, direction: np.ndarray, step: float
               ) -> tuple["ShapeProblem", np.ndarray]:
        """Drag the movable nodes by step * direction.

        The boundary polygon travels with its nodes and nothing snaps, so
        objective values vary smoothly with the step; this is what makes
        backtracking line searches reliable.  Returns the new problem and
        the indices of triangles whose inside status flipped.  Raises
        StepTooLargeError when an element collapses, so callers can
        backtrack.
        """
        new_mesh, flipped = deform_mesh(self.mesh, direction, step)
        return self.with_mesh(new_mesh), flipped

    def rechart(self) -> "ShapeProblem":
        """Refit the pristine grid to the current boundary polygon.

        Dragging accumulates interior distortion that eventually blocks
        further steps; recharting rebuilds the mesh from the reference grid
        at the same boundary, restoring the quality headroom.  Vertices on
        Dirichlet or fixed-Neumann walls are first projected back onto the
        original wall lines so clamped geometry never erodes.  The fit is
        gated at the deform validity floor rather than the fit quality
        bound, because a dragged boundary polygon can force one sliver at
        an awkward grid offset and a mostly-fresh interior is still far
        better than the dragged one.  Raises AdaptationError when even
        that fails; the objective may jump by the change of interior
        discretization, so callers should keep the result only if it
        improves on the current value.
        """
        curve = self.mesh.implied_curve()
        verts = _anchor_clamped_vertices(curve.vertices, curve.kinds,
                                         self.reference_curve)
        params = replace(self.mesh.params,
                         min_angle_deg=self.mesh.params.deform_angle_deg)
        fitted = adapt_to_boundary(self.mesh.grid,
                                   BoundaryCurve(verts, curve.kinds.copy()),
                                   params)
        return self.with_mesh(fitted)


def _anchor_clamped_vertices(verts: np.ndarray, edge_kinds: np.ndarray,
                             reference: BoundaryCurve) -> np.ndarray:
    """Pin vertices of clamped segments back onto the original wall lines.

    Walk vertices on Dirichlet or fixed-Neumann parts come from snapping
    and band projection, so they can sit a hair off the wall; re-seeding a
    trial polygon from them would let the clamped geometry erode step by
    step.  Each vertex incident to a clamped segment is projected onto the
    line of the nearest clamped reference segment: walls stay exact while
    kind transitions still slide along them.
    """
    clamped_edge = edge_kinds != SegmentKind.NEUMANN_FREE
    touched = clamped_edge | np.roll(clamped_edge, 1)
    if not np.any(touched):
        return verts
    ref_clamped = reference.kinds != SegmentKind.NEUMANN_FREE
    a = reference.vertices[ref_clamped]
    b = np.roll(reference.vertices, -1, axis=0)[ref_clamped]
    ab = b - a
    length2 = np.einsum("ij,ij->i", ab, ab)
    p = verts[touched]
    t = np.einsum("kmj,mj->km", p[:, None, :] - a[None, :, :], ab) / length2
    foot = a[None, :, :] + np.clip(t, 0.0, 1.0)[:, :, None] * ab[None, :, :]
    dist2 = np.sum((p[:, None, :] - foot) ** 2, axis=2)
    nearest = np.argmin(dist2, axis=1)
    rows = np.arange(len(p))
    on_line = a[nearest] + t[rows, nearest, None] * ab[nearest]
    out = verts.copy()
    out[touched] = on_line
    return out


def make_bar_case(nx: int = 45, ny: int = 25,
                  volume_force: float = 1000.0,
                  tension: float = 2e4,
                  sigma0: float = 2e4,
                  weibull_exponent: float = 5.0,
                  young: float = 320e9, poisson: float = 0.25,
                  half_thickness: float = 0.05) -> ShapeProblem:
    """Ceramic bar in tension inside a rectangular hold-all.

    The bar spans the full hold-all width, clamped on the left wall and
    pulled by a tensile traction on the right wall; both walls keep their
    geometry while top and bottom are free design boundaries.  A transverse
    volume force adds bending.  Because the tensile force is fixed, thinning
    the midsection raises the stress there, so failure intensity genuinely
    trades off against material volume.  Elastic constants default to
    beryllium-oxide handbook values.  `half_thickness` sets the initial bar
    height about the y = 0.13 midline, which is the one-parameter design
    space the surrogate runs sample.
    """
    if not 0.0 < half_thickness < 0.12:
        raise ValueError("half_thickness must keep the bar inside the hold-all")
    grid = build_grid(nx, ny, (0.0, 0.0), (0.6, 0.25))
    curve = BoundaryCurve.rectangle(
        (0.0, 0.13 - half_thickness), (0.6, 0.13 + half_thickness),
        bottom=SegmentKind.NEUMANN_FREE,
        right=SegmentKind.NEUMANN_FIXED,
        top=SegmentKind.NEUMANN_FREE,
        left=SegmentKind.DIRICHLET)
    mesh = adapt_to_boundary(grid, curve)
    material = ElasticMaterial(young=young, poisson=poisson)
    load = LoadCase(
        tractions={SegmentKind.NEUMANN_FIXED: (float(tension), 0.0)},
        volume_force=(0.0, -float(volume_force)))
    weibull = WeibullParams(exponent=weibull_exponent, sigma0=sigma0)
    return ShapeProblem(mesh, material, load, weibull)
