"""Weighted-sum descent and Pareto-front machinery for two objectives.

Each weight vector gets its own backtracking descent run driven by the
smoothed gradient.  Trial steps drag the mesh nodes, which keeps the
objective smooth along the step; when progress inside the dragged mesh
stalls, the grid is refitted to the current boundary and the run
continues only if that strictly improves the weighted value.  A sweep
over weights produces the front, optionally in parallel processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .elasticity import SolverError
from .geometry import AdaptationError, GridError
from .problem import ShapeProblem
from .smoothing import StepTooLargeError, inner_product, represent_gradient

__all__ = [
    "WeightVector",
    "DescentConfig",
    "IterationRecord",
    "DescentResult",
    "FrontPoint",
    "weighted_value",
    "descent_loop",
    "front_sweep",
    "uniform_weights",
    "dominates",
    "nondominated",
    "common_descent_direction",
]


@dataclass(frozen=True)
class WeightVector:
    """Convex weights for (failure intensity, volume); normalized to sum 1."""

    failure: float
    volume: float

    def __post_init__(self):
        if self.failure < 0 or self.volume < 0:
            raise ValueError("weights must be nonnegative")
        total = self.failure + self.volume
        if total <= 0:
            raise ValueError("weights must not both vanish")
        object.__setattr__(self, "failure", self.failure / total)
        object.__setattr__(self, "volume", self.volume / total)


def uniform_weights(n: int) -> list[WeightVector]:
    """n weight vectors sweeping failure emphasis from low to high."""
    if n < 2:
        raise ValueError("need at least two weights for a front")
    return [WeightVector(k / (n - 1.0), 1.0 - k / (n - 1.0)) for k in range(n)]


@dataclass(frozen=True)
class DescentConfig:
    """Backtracking line-search policy."""

    max_iterations: int = 400
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    initial_step: float | None = None     # default: one cell size
    max_backtracks: int = 25
    rel_tol: float = 1e-7                 # stall: relative decrease over a
    stall_window: int = 8                 # window of accepted steps


@dataclass(frozen=True)
class IterationRecord:
    """One accepted descent step or grid refit."""

    iteration: int
    j1: float
    j2: float
    weighted: float
    step: float
    slope: float
    backtracks: int
    refit_full: bool          # True for a refit record, False for a drag step
    changed_triangles: int    # triangles whose inside status flipped


@dataclass
class DescentResult:
    problem: ShapeProblem
    records: list[IterationRecord]
    converged: bool
    message: str
    scales: tuple[float, float]

    @property
    def objectives(self) -> tuple[float, float]:
        return self.problem.objectives()


def weighted_value(j1: float, j2: float, weights: WeightVector,
                   scales: tuple[float, float]) -> float:
    """Convex combination of objectives scaled by their initial values."""
    return weights.failure * j1 / scales[0] + weights.volume * j2 / scales[1]


def descent_loop(problem: ShapeProblem, weights: WeightVector,
                 config: DescentConfig | None = None) -> DescentResult:
    """Armijo-backtracked steepest descent on the weighted objective.

    The direction is the metric-smoothed weighted gradient, normalized to
    unit maximum so the step is a length in coordinate units, one cell by
    default.  Trial steps drag the mesh nodes; collapsing elements just
    shorten the step.  A phase counts as stalled when the relative
    decrease over the last stall_window accepted steps drops below
    rel_tol, so one awkward backtracked step never ends a run.  When a
    drag phase stalls, the grid is refitted to the boundary reached so
    far, and the run continues if that strictly improved the weighted
    value.  Accepted values decrease strictly.
    """
    config = config or DescentConfig()
    current = problem
    j1, j2 = current.objectives()
    scales = (max(abs(j1), 1e-300), max(abs(j2), 1e-300))
    jw = weighted_value(j1, j2, weights, scales)
    records: list[IterationRecord] = []
    just_refitted = False
    window: list[float] = []    # recent accepted values, reset on refit

    it = 0
    while it < config.max_iterations:
        res = current.gradients()
        g = (weights.failure / scales[0]) * res.grad1 \
            + (weights.volume / scales[1]) * res.grad2
        w = represent_gradient(g, current.metric())
        slope = float(np.sum(g * w))
        wmax = float(np.abs(w).max())
        if wmax <= 0.0 or slope <= 0.0:
            return DescentResult(current, records, True,
                                 "stationary gradient", scales)
        direction = w / wmax
        slope_dir = slope / wmax
        step = config.initial_step or current.mesh.h
        accepted = False
        backtracks = 0
        for _ in range(config.max_backtracks):
            try:
                trial, flipped = current.deform(-direction, step)
                tj1, tj2 = trial.objectives()
            except (GridError, AdaptationError, StepTooLargeError,
                    SolverError):
                step *= config.backtrack
                backtracks += 1
                continue
            tjw = weighted_value(tj1, tj2, weights, scales)
            if tjw <= jw - config.armijo_c * step * slope_dir:
                current, j1, j2, jw = trial, tj1, tj2, tjw
                records.append(IterationRecord(
                    it, j1, j2, jw, step, slope, backtracks,
                    False, len(flipped)))
                accepted = True
                just_refitted = False
                break
            step *= config.backtrack
            backtracks += 1
        it += 1
        if accepted:
            window.append(jw)
            if len(window) > config.stall_window:
                window.pop(0)
            flat = (len(window) == config.stall_window
                    and window[0] - window[-1]
                    <= config.rel_tol * max(abs(window[0]), 1e-300))
            if not flat:
                continue
        # This drag phase is done.  Refit the grid to the boundary reached
        # so far and keep going only when that strictly improves the value;
        # a second stall right after a refit ends the run.
        stall = ("decrease below tolerance" if accepted
                 else "line search exhausted")
        if just_refitted or it >= config.max_iterations:
            return DescentResult(current, records, accepted, stall, scales)
        try:
            fresh = current.rechart()
            fj1, fj2 = fresh.objectives()
        except (GridError, AdaptationError, SolverError):
            return DescentResult(current, records, accepted, stall, scales)
        fjw = weighted_value(fj1, fj2, weights, scales)
        if not fjw < jw:
            return DescentResult(current, records, accepted, stall, scales)
        current, j1, j2, jw = fresh, fj1, fj2, fjw
        records.append(IterationRecord(it, j1, j2, jw, 0.0, slope, 0,
                                       True, 0))
        just_refitted = True
        window = []
        it += 1
    return DescentResult(current, records, True, "iteration budget", scales)


# ---------------------------------------------------------------------------
# front sweep


@dataclass(frozen=True)
class FrontPoint:
    """Outcome of one weighted descent run."""

    weights: WeightVector
    j1: float
    j2: float
    iterations: int
    converged: bool
    message: str


def _run_weight(factory: Callable[[], ShapeProblem], weights: WeightVector,
                config: DescentConfig) -> tuple[FrontPoint, list[IterationRecord]]:
    try:
        result = descent_loop(factory(), weights, config)
    except Exception as exc:   # keep the sweep alive, report the failure
        return FrontPoint(weights, float("nan"), float("nan"), 0, False,
                          f"failed: {exc}"), []
    j1, j2 = result.objectives
    point = FrontPoint(weights, j1, j2, len(result.records),
                       result.converged, result.message)
    return point, result.records


def front_sweep(factory: Callable[[], ShapeProblem],
                weight_list: Sequence[WeightVector],
                config: DescentConfig | None = None,
                threads: int = 1,
                on_point: Callable[[FrontPoint, list[IterationRecord]], None] | None = None,
                ) -> list[tuple[FrontPoint, list[IterationRecord]]]:
    """Run one descent per weight vector, in weight order.

    With threads > 1 the runs execute in worker processes and results merge
    back in the original weight order, so output is identical to the
    sequential sweep.
    """
    config = config or DescentConfig()
    out: list[tuple[FrontPoint, list[IterationRecord]]] = []
    if threads <= 1:
        for weights in weight_list:
            point, records = _run_weight(factory, weights, config)
            if on_point is not None:
                on_point(point, records)
            out.append((point, records))
        return out
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_run_weight, factory, w, config)
                   for w in weight_list]
        for fut in futures:
            point, records = fut.result()
            if on_point is not None:
                on_point(point, records)
            out.append((point, records))
    return out


# ---------------------------------------------------------------------------
# Pareto utilities


def dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """True if a is at least as good in both objectives and better in one."""
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def nondominated(points: np.ndarray) -> np.ndarray:
    """Boolean mask of points not dominated by any other point."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        for j in range(n):
            if i != j and dominates(tuple(pts[j]), tuple(pts[i])):
                keep[i] = False
                break
    return keep


def common_descent_direction(grad1: np.ndarray, grad2: np.ndarray,
                             metric) -> tuple[np.ndarray, float]:
    """Minimum-norm convex combination of the two smoothed gradients.

    Returns (direction, alpha) with direction = -(alpha W1 + (1-alpha) W2)
    where W_i represents grad_i in the metric.  The direction satisfies
    <grad_i, direction> <= -a(direction, direction) for both objectives, and
    vanishes exactly when the smoothed gradients oppose each other.
    """
    w1 = represent_gradient(grad1, metric)
    w2 = represent_gradient(grad2, metric)
    diff = w1 - w2
    denom = inner_product(diff, diff, metric)
    if denom <= 0.0:
        alpha = 0.5
    else:
        alpha = float(np.clip(-inner_product(w2, diff, metric) / denom, 0.0, 1.0))
    direction = -(alpha * w1 + (1.0 - alpha) * w2)
    return direction, alpha
