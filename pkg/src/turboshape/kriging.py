"""Gradient-enhanced Kriging surrogates with expected-improvement search.

The surrogate interpolates deterministic solver responses (and optionally
their design gradients) with an anisotropic squared-exponential kernel.  A
small diagonal nugget keeps the correlation factorization stable; because the
underlying responses carry no observation noise, queries that coincide with a
sample return the observed data exactly, with zero predictive spread.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.stats import norm, qmc

NUGGET_DEFAULT = 1e-10
NUGGET_CAP = 1e-4

_DUPLICATE_REL = 1e-12
_START_FACTORS = (0.1, 0.3, 1.0, 3.0)
_BOUND_LO = 1e-2
_BOUND_HI = 1e2


class SurrogateError(RuntimeError):
    """Covariance assembly failed in a way the nugget cannot repair."""


@dataclass(frozen=True)
class TrainingSet:
    """Design points with responses and optional response gradients."""

    points: np.ndarray
    values: np.ndarray
    gradients: np.ndarray | None = None

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        values = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "values", values)
        m, d = points.shape
        if values.shape != (m,):
            raise ValueError(
                f"got {values.size} values for {m} design points"
            )
        if self.gradients is not None:
            gradients = np.asarray(self.gradients, dtype=float)
            if gradients.shape != (m, d):
                raise ValueError(
                    f"gradient block has shape {gradients.shape}, "
                    f"expected {(m, d)}"
                )
            object.__setattr__(self, "gradients", gradients)
            if not np.all(np.isfinite(gradients)):
                raise ValueError("gradients must be finite")
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(values))):
            raise ValueError("design points and values must be finite")
        self._reject_duplicates(points)

    @staticmethod
    def _reject_duplicates(points):
        m = points.shape[0]
        if m < 2:
            return
        span = points.max(axis=0) - points.min(axis=0)
        threshold = _DUPLICATE_REL * max(1.0, float(span.max()))
        dist = np.abs(points[:, None, :] - points[None, :, :]).max(axis=2)
        iu = np.triu_indices(m, k=1)
        close = dist[iu] <= threshold
        if np.any(close):
            k = int(np.flatnonzero(close)[0])
            i, j = iu[0][k], iu[1][k]
            raise ValueError(f"duplicate design points at rows {i} and {j}")

    @property
    def n_samples(self) -> int:
        return self.points.shape[0]

    @property
    def n_dims(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class Prediction:
    """Predictive mean and standard deviation at query points."""

    mean: np.ndarray
    stddev: np.ndarray


@dataclass(frozen=True)
class KrigingModel:
    """Trained surrogate: hyperparameters plus the solved dual system."""

    training: TrainingSet
    use_gradients: bool
    length_scales: np.ndarray
    process_variance: float
    nugget: float
    mean: float
    _factor: tuple = field(repr=False, compare=False, default=None)
    _dual: np.ndarray = field(repr=False, compare=False, default=None)


def _kernel_blocks(xa, xb, length_scales):
    """Correlation of values at xa with values and gradients at xb.

    Returns the plain correlation matrix K and the value-gradient block
    K1[a, b, j] = d k(xa_a, xb_b) / d xb_{b,j}, plus the pairwise differences
    reused by second-derivative blocks.
    """
    diff = xa[:, None, :] - xb[None, :, :]
    k = np.exp(-0.5 * np.sum((diff / length_scales) ** 2, axis=2))
    k1 = k[:, :, None] * diff / length_scales**2
    return k, k1, diff


def _correlation_matrix(points, length_scales, with_gradients):
    m, d = points.shape
    k, k1, diff = _kernel_blocks(points, points, length_scales)
    if not with_gradients:
        return k
    n = m * (1 + d)
    corr = np.empty((n, n))
    corr[:m, :m] = k
    corr[:m, m:] = k1.reshape(m, m * d)
    corr[m:, :m] = corr[:m, m:].T
    ls2 = length_scales**2
    k2 = k[:, :, None, None] * (
        np.eye(d) / ls2
        - (diff[:, :, :, None] * diff[:, :, None, :]) / (ls2[:, None] * ls2[None, :])
    )
    corr[m:, m:] = k2.transpose(0, 2, 1, 3).reshape(m * d, m * d)
    return corr


def _factor_with_escalation(correlation, nugget):
    """Cholesky-factor correlation + nugget*I, growing the nugget on failure.

    Each escalation multiplies the nugget by ten and warns; past NUGGET_CAP
    the matrix is declared singular.
    """
    n = correlation.shape[0]
    tau = nugget
    while True:
        try:
            factor = cho_factor(correlation + tau * np.eye(n), lower=True)
            return factor, tau
        except np.linalg.LinAlgError:
            if tau >= NUGGET_CAP:
                raise SurrogateError(
                    f"correlation matrix still singular at nugget {tau:g}"
                ) from None
            tau *= 10.0
            warnings.warn(
                f"ill-conditioned correlation matrix, nugget raised to {tau:g}",
                RuntimeWarning,
                stacklevel=2,
            )


def _observation_vector(data, with_gradients):
    if with_gradients:
        z = np.concatenate([data.values, data.gradients.ravel()])
        f = np.concatenate(
            [np.ones(data.n_samples), np.zeros(data.n_samples * data.n_dims)]
        )
    else:
        z = data.values.copy()
        f = np.ones(data.n_samples)
    return z, f


def _span(points):
    width = points.max(axis=0) - points.min(axis=0)
    return np.where(width > 0.0, width, 1.0)


def _assemble(data, with_gradients, length_scales, nugget):
    """Solve the dual system for fixed hyperparameters and build the model."""
    z, f = _observation_vector(data, with_gradients)
    corr = _correlation_matrix(data.points, length_scales, with_gradients)
    factor, tau = _factor_with_escalation(corr, nugget)
    ci_z = cho_solve(factor, z)
    ci_f = cho_solve(factor, f)
    beta = float(f @ ci_z) / float(f @ ci_f)
    residual = z - beta * f
    dual = cho_solve(factor, residual)
    floor = nugget * (1.0 + beta * beta)
    variance = max(float(residual @ dual) / z.size, floor)
    return KrigingModel(
        training=data,
        use_gradients=with_gradients,
        length_scales=np.asarray(length_scales, dtype=float),
        process_variance=variance,
        nugget=tau,
        mean=beta,
        _factor=factor,
        _dual=dual,
    )


def fit_kriging(data, use_gradients=None, nugget=NUGGET_DEFAULT, length_scales=None):
    """Fit the surrogate, choosing length scales by marginal likelihood.

    With gradients enabled the correlation matrix is extended by kernel
    derivatives so slope observations are interpolated alongside values.
    The likelihood search is a bounded quasi-Newton descent from a fixed set
    of starting scales, so fits are deterministic.  `length_scales` skips the
    search and uses the given values directly.
    """
    if use_gradients is None:
        use_gradients = data.gradients is not None
    if use_gradients and data.gradients is None:
        raise ValueError("use_gradients requires gradient observations")
    if data.n_samples < 2:
        raise ValueError("need at least two samples to fit a surrogate")

    if length_scales is not None:
        ls = np.asarray(length_scales, dtype=float)
        if ls.shape != (data.n_dims,) or np.any(ls <= 0.0):
            raise ValueError("length_scales must be positive, one per dimension")
        return _assemble(data, use_gradients, ls, nugget)

    z, f = _observation_vector(data, use_gradients)
    n = z.size
    span = _span(data.points)

    def negative_log_likelihood(log_ls):
        corr = _correlation_matrix(data.points, np.exp(log_ls), use_gradients)
        try:
            factor = cho_factor(corr + nugget * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            return 1e30
        ci_z = cho_solve(factor, z)
        ci_f = cho_solve(factor, f)
        beta = float(f @ ci_z) / float(f @ ci_f)
        residual = z - beta * f
        variance = max(float(residual @ cho_solve(factor, residual)) / n, 1e-300)
        log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
        return 0.5 * n * np.log(variance) + 0.5 * log_det

    bounds = [(np.log(_BOUND_LO * s), np.log(_BOUND_HI * s)) for s in span]
    best = None
    for factor_start in _START_FACTORS:
        result = minimize(
            negative_log_likelihood,
            np.log(factor_start * span),
            method="L-BFGS-B",
            bounds=bounds,
        )
        if best is None or result.fun < best.fun:
            best = result
    return _assemble(data, use_gradients, np.exp(best.x), nugget)


def _query_points(model, points):
    q = np.atleast_2d(np.asarray(points, dtype=float))
    if q.shape[1] != model.training.n_dims:
        raise ValueError(
            f"query points have {q.shape[1]} coordinates, "
            f"model expects {model.training.n_dims}"
        )
    return q


def predict(model, points) -> Prediction:
    """Predictive mean and standard deviation of the response.

    Queries that coincide with a training point return the observed value
    with zero spread, matching a deterministic data source.
    """
    q = _query_points(model, points)
    x = model.training.points
    m = x.shape[0]
    k, k1, _ = _kernel_blocks(q, x, model.length_scales)
    if model.use_gradients:
        r = np.concatenate([k, k1.reshape(q.shape[0], -1)], axis=1)
    else:
        r = k
    hit = np.all(q[:, None, :] == x[None, :, :], axis=2)

    mean = model.mean + r @ model._dual
    ci_r = cho_solve(model._factor, r.T)
    variance = model.process_variance * (
        1.0 + model.nugget - np.sum(r * ci_r.T, axis=1)
    )
    variance = np.maximum(variance, 0.0)
    rows, cols = np.nonzero(hit)
    mean[rows] = model.training.values[cols]
    variance[rows] = 0.0
    return Prediction(mean=mean, stddev=np.sqrt(variance))


def predict_gradient(model, points) -> np.ndarray:
    """Gradient of the predictive mean at the query points.

    At gradient-observed training points the observed slopes are returned
    exactly, by the same coincidence rule as `predict`.
    """
    q = _query_points(model, points)
    x = model.training.points
    nq, d = q.shape
    m = x.shape[0]
    ls2 = model.length_scales**2
    k, k1, diff = _kernel_blocks(q, x, model.length_scales)
    out = np.empty((nq, d))
    if model.use_gradients:
        k2 = k[:, :, None, None] * (
            np.eye(d) / ls2
            - (diff[:, :, :, None] * diff[:, :, None, :])
            / (ls2[:, None] * ls2[None, :])
        )
    for i in range(d):
        if model.use_gradients:
            ri = np.concatenate([-k1[:, :, i], k2[:, :, i, :].reshape(nq, m * d)], axis=1)
        else:
            ri = -k1[:, :, i]
        out[:, i] = ri @ model._dual
    if model.use_gradients:
        rows, cols = np.nonzero(np.all(q[:, None, :] == x[None, :, :], axis=2))
        out[rows] = model.training.gradients[cols]
    return out


def expected_improvement(mean, stddev, best_so_far):
    """Expected improvement below `best_so_far` for a minimization search."""
    mean = np.asarray(mean, dtype=float)
    stddev = np.asarray(stddev, dtype=float)
    gap = best_so_far - mean
    spread = stddev > 0.0
    safe = np.where(spread, stddev, 1.0)
    u = gap / safe
    ei = np.where(
        spread,
        gap * norm.cdf(u) + stddev * norm.pdf(u),
        np.maximum(gap, 0.0),
    )
    return np.maximum(ei, 0.0)


def acquire(model, candidates, best_so_far):
    """Rank candidate points by expected improvement, best first.

    Returns (order, scores); `order` is stably sorted so ties keep candidate
    order.  Candidates that coincide with samples score zero and sort last.
    """
    pred = predict(model, candidates)
    scores = expected_improvement(pred.mean, pred.stddev, best_so_far)
    order = np.argsort(-scores, kind="stable")
    return order, scores


@dataclass(frozen=True)
class MinimizeResult:
    """Best point found by the acquisition loop, with the full history."""

    point: np.ndarray
    value: float
    points: np.ndarray
    values: np.ndarray


def _evaluate(func, x):
    value = float(np.asarray(func(x)).reshape(()))
    if not np.isfinite(value):
        raise ValueError(f"objective returned a non-finite value at {x}")
    return value


def ei_minimize(
    func,
    bounds,
    n_initial=5,
    n_iterations=10,
    n_candidates=1024,
    gradient=None,
):
    """Minimize `func` over a box by expected-improvement sampling.

    Starts from a Halton design of `n_initial` points, then repeatedly fits
    the surrogate and evaluates the candidate with the highest expected
    improvement.  Candidates come from a fixed Halton set, so runs are
    deterministic.  Stops early once no candidate promises improvement.
    When `gradient` is given it is evaluated alongside `func` and the
    surrogate interpolates the slopes too.
    """
    box = np.asarray(bounds, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 0] >= box[:, 1]):
        raise ValueError("bounds must be (lo, hi) pairs with lo < hi")
    if n_initial < 2:
        raise ValueError("need at least two initial samples")
    d = box.shape[0]
    lo, hi = box[:, 0], box[:, 1]

    unit = qmc.Halton(d, scramble=False).random(n_initial + n_candidates)
    x = lo + (hi - lo) * unit[:n_initial]
    candidates = lo + (hi - lo) * unit[n_initial:]
    y = np.array([_evaluate(func, xi) for xi in x])
    grads = np.array([gradient(xi) for xi in x]) if gradient else None

    for _ in range(n_iterations):
        model = fit_kriging(TrainingSet(x, y, grads))
        order, scores = acquire(model, candidates, y.min())
        pick = order[0]
        if scores[pick] <= 0.0:
            break
        x_new = candidates[pick]
        x = np.vstack([x, x_new[None, :]])
        y = np.append(y, _evaluate(func, x_new))
        if gradient:
            grads = np.vstack([grads, np.asarray(gradient(x_new))[None, :]])

    k = int(np.argmin(y))
    return MinimizeResult(point=x[k].copy(), value=float(y[k]), points=x, values=y)


def save_model(model, path):
    """Write the trained surrogate to a flat JSON file."""
    payload = {
        "model": "gradient-enhanced-kriging" if model.use_gradients else "kriging",
        "length_scales": model.length_scales.tolist(),
        "process_variance": model.process_variance,
        "nugget": model.nugget,
        "mean": model.mean,
        "points": model.training.points.tolist(),
        "values": model.training.values.tolist(),
        "gradients": (
            model.training.gradients.tolist()
            if model.training.gradients is not None
            else None
        ),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_model(path) -> KrigingModel:
    """Rebuild a surrogate saved by `save_model`.

    The stored hyperparameters are reused as-is; only the dual system is
    re-solved, so reloaded models reproduce the original predictions.
    """
    payload = json.loads(Path(path).read_text())
    kind = payload.get("model")
    if kind not in ("kriging", "gradient-enhanced-kriging"):
        raise ValueError(f"unrecognized model kind: {kind!r}")
    gradients = payload["gradients"]
    data = TrainingSet(
        np.asarray(payload["points"], dtype=float),
        np.asarray(payload["values"], dtype=float),
        np.asarray(gradients, dtype=float) if gradients is not None else None,
    )
    return _assemble(
        data,
        kind == "gradient-enhanced-kriging",
        np.asarray(payload["length_scales"], dtype=float),
        payload["nugget"],
    )
