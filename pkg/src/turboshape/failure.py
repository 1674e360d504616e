"""Probabilistic failure measures for loaded 2D components.

Two mechanisms are covered: brittle fracture driven by surface-normal
tensile stress (a Weibull-type intensity integrated over the component and
all crack orientations) and low-cycle fatigue of the boundary (strain-life
with a stress-gradient support factor, integrated along boundary edges).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .elasticity import von_mises

__all__ = [
    "WeibullParams",
    "StrainLifeParams",
    "SupportParams",
    "crack_normals",
    "weibull_density",
    "weibull_intensity",
    "failure_probability",
    "strain_amplitude",
    "deterministic_life",
    "support_factor",
    "element_patches",
    "least_squares_gradients",
    "relative_stress_gradient",
    "LcfResult",
    "lcf_intensity",
    "lcf_failure_probability",
    "von_mises",
]

_LIFE_MIN = 1e-3
_LIFE_MAX = 1e15


@dataclass(frozen=True)
class WeibullParams:
    """Brittle-failure intensity parameters."""

    exponent: float = 5.0      # Weibull modulus m
    sigma0: float = 1.0        # stress scale
    n_angles: int = 32         # trapezoid points over crack orientations

    def __post_init__(self):
        if self.exponent < 1:
            raise ValueError(f"Weibull exponent must be >= 1, got {self.exponent}")
        if self.sigma0 <= 0:
            raise ValueError(f"stress scale must be positive, got {self.sigma0}")
        if self.n_angles < 4:
            raise ValueError(f"need at least 4 angles, got {self.n_angles}")


@dataclass(frozen=True)
class StrainLifeParams:
    """Coefficients of the elastic plus plastic strain-life relation."""

    sigma_f: float   # fatigue strength coefficient
    b: float         # fatigue strength exponent, negative
    eps_f: float     # fatigue ductility coefficient
    c: float         # fatigue ductility exponent, negative
    young: float

    def __post_init__(self):
        if self.b >= 0 or self.c >= 0:
            raise ValueError("strain-life exponents must be negative")
        if self.sigma_f <= 0 or self.eps_f <= 0 or self.young <= 0:
            raise ValueError("strain-life coefficients must be positive")


@dataclass(frozen=True)
class SupportParams:
    """Stress-gradient support factor 1 + c1 * chi^c2."""

    c1: float = 0.5
    c2: float = 0.5


# ---------------------------------------------------------------------------
# brittle fracture


def crack_normals(n_angles: int) -> np.ndarray:
    """Unit normals at equispaced crack angles over the full circle."""
    theta = 2.0 * np.pi * np.arange(n_angles) / n_angles
    return np.column_stack([np.cos(theta), np.sin(theta)])


def weibull_density(sigma: np.ndarray, params: WeibullParams
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Per-area failure intensity and its stress derivative.

    For stress rows (sxx, syy, sxy) returns w with
    w = (2 pi)^-1 * integral over angles of (max(n.sigma n, 0)/sigma0)^m,
    evaluated by the trapezoid rule (exact once n_angles exceeds the
    polynomial degree m in the normal direction), and dw/dsigma of shape
    (n_elements, 3).
    """
    m = params.exponent
    normals = crack_normals(params.n_angles)
    nx, ny = normals[:, 0], normals[:, 1]
    # n.sigma n for every element and angle: (E, A)
    sn = (sigma[:, 0:1] * nx**2 + 2 * sigma[:, 2:3] * nx * ny
          + sigma[:, 1:2] * ny**2)
    pos = np.maximum(sn, 0.0) / params.sigma0
    w = pos**m
    density = w.mean(axis=1)
    # chain rule through max(., 0): derivative m * pos^(m-1) / sigma0
    dpos = m * np.where(sn > 0.0, pos**(m - 1), 0.0) / params.sigma0
    dsxx = (dpos * nx**2).mean(axis=1)
    dsyy = (dpos * ny**2).mean(axis=1)
    dsxy = (dpos * 2 * nx * ny).mean(axis=1)
    return density, np.column_stack([dsxx, dsyy, dsxy])


def weibull_intensity(sigma: np.ndarray, areas: np.ndarray,
                      params: WeibullParams) -> float:
    """Failure intensity: area-weighted sum of the per-area density."""
    density, _ = weibull_density(sigma, params)
    return float(areas @ density)


def failure_probability(intensity: float) -> float:
    """Probability of failure from an integrated intensity."""
    return -float(np.expm1(-intensity))


# ---------------------------------------------------------------------------
# low-cycle fatigue


def strain_amplitude(life: np.ndarray | float, p: StrainLifeParams):
    """Strain amplitude sustained for a given cycle count."""
    two_n = 2.0 * np.asarray(life, dtype=float)
    return (p.sigma_f / p.young) * two_n**p.b + p.eps_f * two_n**p.c


def deterministic_life(eps_a: float, p: StrainLifeParams,
                       support: float = 1.0) -> float:
    """Cycles to crack initiation at strain amplitude eps_a.

    The effective amplitude eps_a / support is inverted through the
    strain-life relation; lives clamp to [1e-3, 1e15] cycles outside the
    resolvable range.
    """
    target = eps_a / support
    if target <= 0:
        return _LIFE_MAX
    lo, hi = np.log(2 * _LIFE_MIN), np.log(2 * _LIFE_MAX)

    def g(t):
        two_n = np.exp(t)
        return (p.sigma_f / p.young) * two_n**p.b + p.eps_f * two_n**p.c - target

    if g(hi) >= 0.0:
        return _LIFE_MAX
    if g(lo) <= 0.0:
        return _LIFE_MIN
    t = brentq(g, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200)
    return 0.5 * float(np.exp(t))


def support_factor(chi: np.ndarray | float, p: SupportParams):
    """Life support from the relative stress gradient chi >= 0."""
    return 1.0 + p.c1 * np.maximum(chi, 0.0)**p.c2


# -- stress gradient recovery ------------------------------------------------


def element_patches(tris: np.ndarray, n_nodes: int) -> list[np.ndarray]:
    """For each element, the elements sharing at least one node (incl. self)."""
    node_to_el: list[list[int]] = [[] for _ in range(n_nodes)]
    for k, tri in enumerate(tris):
        for n in tri:
            node_to_el[n].append(k)
    patches = []
    for tri in tris:
        members = set()
        for n in tri:
            members.update(node_to_el[n])
        patches.append(np.fromiter(sorted(members), dtype=np.int64))
    return patches


def least_squares_gradients(centroids: np.ndarray, values: np.ndarray,
                            patches: list[np.ndarray]) -> np.ndarray:
    """Linear least-squares gradient of elementwise values at each element."""
    grads = np.zeros((len(patches), 2))
    for k, patch in enumerate(patches):
        d = centroids[patch] - centroids[k]
        a = np.column_stack([np.ones(len(patch)), d])
        coef, *_ = np.linalg.lstsq(a, values[patch], rcond=None)
        grads[k] = coef[1:]
    return grads


def relative_stress_gradient(centroids: np.ndarray, vm: np.ndarray,
                             patches: list[np.ndarray],
                             floor: float = 1e-12) -> np.ndarray:
    """chi = |grad sigma_vM| / sigma_vM, recovered patchwise."""
    grads = least_squares_gradients(centroids, vm, patches)
    return np.linalg.norm(grads, axis=1) / np.maximum(vm, floor)


# -- boundary fatigue functional ----------------------------------------------


@dataclass(frozen=True)
class LcfResult:
    """Low-cycle-fatigue intensity and its per-edge breakdown."""

    intensity: float            # J = sum |e| (1 / N_det)^m over boundary edges
    edge_lengths: np.ndarray
    lives: np.ndarray           # deterministic life per boundary edge
    chi: np.ndarray             # relative stress gradient per edge
    exponent: float


def _edge_elements(mesh) -> np.ndarray:
    """Inside element owning each walk edge."""
    owner = {}
    tris = mesh.grid.triangles
    for t in np.flatnonzero(mesh.inside):
        tri = tris[t]
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            owner[(min(a, b), max(a, b))] = t
    out = np.empty(len(mesh.walk.nodes), dtype=np.int64)
    for k, (a, b) in enumerate(mesh.walk.edges):
        key = (min(a, b), max(a, b))
        if key not in owner:
            raise ValueError("walk edge without an inside element")
        out[k] = owner[key]
    return out


def lcf_intensity(mesh, system, u: np.ndarray, strain_life: StrainLifeParams,
                  support: SupportParams, exponent: float = 3.0,
                  params: WeibullParams | None = None) -> LcfResult:
    """Fatigue intensity over the boundary from an elastic solution.

    Each boundary edge takes the von Mises stress and recovered stress
    gradient of its owning element; the strain amplitude sigma_vM / E and
    gradient-supported strain-life inversion give a deterministic life, and
    edges accumulate length * (1 / life)^exponent.
    """
    sigma = system.stresses(u)
    vm = von_mises(sigma)
    tris = mesh.grid.triangles[system.elements]
    centroids = mesh.coords[tris].mean(axis=1)
    patches = element_patches(tris, len(mesh.coords))
    chi_el = relative_stress_gradient(centroids, vm, patches)

    slot = {int(t): k for k, t in enumerate(system.elements)}
    owners = _edge_elements(mesh)
    local = np.array([slot[int(t)] for t in owners], dtype=np.int64)

    edges = mesh.walk.edges
    lengths = np.linalg.norm(mesh.coords[edges[:, 1]] - mesh.coords[edges[:, 0]],
                             axis=1)
    chi_edges = chi_el[local]
    sup = support_factor(chi_edges, support)
    lives = np.array([
        deterministic_life(vm[j] / strain_life.young, strain_life, s)
        for j, s in zip(local, sup)
    ])
    j = float(lengths @ (1.0 / lives)**exponent)
    return LcfResult(j, lengths, lives, chi_edges, exponent)


def lcf_failure_probability(result: LcfResult, n_cycles: float) -> float:
    """Probability that fatigue initiates a crack within n_cycles."""
    return -float(np.expm1(-(n_cycles**result.exponent) * result.intensity))
