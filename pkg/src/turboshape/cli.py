"""Batch command-line front end.

Reads one INI config, dispatches the requested subcommand, and writes every
artifact (CSV tables, VTK meshes, a run log, and a JSON manifest) under
output/run_id/.  Artifacts are deterministic: rerunning the same config
reproduces them byte for byte, with clocks and timings quarantined in the
manifest's timing block.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from functools import partial
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .adjoint import fd_check
from .config import ConfigError, RunConfig, parse_config
from .kriging import TrainingSet, ei_minimize, fit_kriging, predict, save_model
from .optimize import DescentConfig, WeightVector, descent_loop, front_sweep, nondominated
from .output import write_csv, write_vtk
from .problem import make_bar_case
from .thermal import (
    couple_iterate,
    energy_balance,
    reference_configuration,
    stability_frontier,
    stability_map,
)
from .elasticity import von_mises


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="turboshape",
        description="Shape-optimization and thermal-coupling batch runs.",
    )
    parser.add_argument("--config", required=True, help="INI run configuration")
    parser.add_argument("--output", help="artifact directory (overrides config)")
    parser.add_argument("--threads", type=int, help="worker count for sweeps")
    parser.add_argument("--verbose", action="store_true",
                        help="echo progress lines to stdout")
    return parser.parse_args(argv)


def _env_override(name, cast=str):
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return None
    try:
        return cast(raw)
    except ValueError:
        return None


def _error_line(kind, messages):
    print(json.dumps({"error": kind, "messages": list(messages)}),
          file=sys.stderr)


class _Log:
    """Collects deterministic event lines; optionally echoes them."""

    def __init__(self, verbose):
        self.lines = []
        self.verbose = verbose

    def __call__(self, message):
        self.lines.append(message)
        if self.verbose:
            print(message)


def _bar_kwargs(cfg: RunConfig) -> dict:
    bar = cfg.bar
    return dict(nx=bar.nx, ny=bar.ny, volume_force=bar.volume_force,
                tension=bar.tension, sigma0=bar.sigma0,
                weibull_exponent=bar.weibull_exponent,
                young=bar.young, poisson=bar.poisson)


def _descent_config(cfg: RunConfig) -> DescentConfig:
    d = cfg.descent
    return DescentConfig(max_iterations=d.max_iterations, rel_tol=d.rel_tol,
                         initial_step=d.initial_step,
                         max_backtracks=d.max_backtracks)


_HISTORY_HEADER = ["iteration", "j1", "j2", "weighted", "step", "slope",
                   "backtracks", "refit", "changed_triangles"]


def _history_rows(records, prefix=()):
    for r in records:
        yield (*prefix, r.iteration, r.j1, r.j2, r.weighted, r.step, r.slope,
               r.backtracks, r.refit_full, r.changed_triangles)


def _final_fields_vtk(path, problem):
    system = problem.system()
    u = system.solve()
    sigma = system.stresses(u)
    return write_vtk(path, problem.mesh,
                     point_data={"displacement": u},
                     cell_data={"von_mises": von_mises(sigma),
                                "stress": sigma},
                     title="optimized component fields")


def _cmd_optimize(cfg, run_dir, stages, log):
    weights = WeightVector(cfg.descent.weight_failure,
                           1.0 - cfg.descent.weight_failure)
    t0 = time.perf_counter()
    result = descent_loop(make_bar_case(**_bar_kwargs(cfg)), weights,
                          _descent_config(cfg))
    stages["descent"] = time.perf_counter() - t0
    j1, j2 = result.objectives
    log(f"optimize: {len(result.records)} accepted steps, "
        f"j1={j1:.8g} j2={j2:.8g} ({result.message})")
    t0 = time.perf_counter()
    artifacts = [
        write_csv(run_dir / "history.csv", _HISTORY_HEADER,
                  _history_rows(result.records)),
        _final_fields_vtk(run_dir / "mesh.vtk", result.problem),
    ]
    stages["artifacts"] = time.perf_counter() - t0
    summary = {
        "j1": j1,
        "j2": j2,
        "weight_failure": weights.failure,
        "iterations": len(result.records),
        "converged": result.converged,
        "message": result.message,
    }
    return summary, artifacts, 0


def _cmd_pareto(cfg, run_dir, stages, log):
    factory = partial(make_bar_case, **_bar_kwargs(cfg))
    t0 = time.perf_counter()
    outcomes = front_sweep(factory, list(cfg.weights), _descent_config(cfg),
                           threads=cfg.threads)
    stages["sweep"] = time.perf_counter() - t0
    front_rows = []
    history_rows = []
    for k, (point, records) in enumerate(outcomes):
        front_rows.append((point.weights.failure, point.weights.volume,
                           point.j1, point.j2, point.iterations,
                           point.converged, point.message))
        history_rows.extend(_history_rows(records, prefix=(k,)))
        log(f"pareto: w1={point.weights.failure:.3f} "
            f"j1={point.j1:.8g} j2={point.j2:.8g} ({point.message})")
    artifacts = [
        write_csv(run_dir / "front.csv",
                  ["weight_failure", "weight_volume", "j1", "j2",
                   "iterations", "converged", "message"], front_rows),
        write_csv(run_dir / "histories.csv", ["weight_index"] + _HISTORY_HEADER,
                  history_rows),
    ]
    objectives = np.array([[p.j1, p.j2] for p, _ in outcomes])
    clean = bool(np.all(np.isfinite(objectives)))
    summary = {
        "n_points": len(outcomes),
        "all_converged": all(p.converged for p, _ in outcomes),
        "mutually_nondominated": bool(nondominated(objectives).all()) if clean else False,
    }
    return summary, artifacts, 0


def _cmd_thermal(cfg, run_dir, stages, log):
    geom, prob = reference_configuration(cfg.thermal.conductivity,
                                         cfg.thermal.heat_transfer)
    t0 = time.perf_counter()
    result = couple_iterate(geom, prob, max_iter=cfg.thermal.max_iterations)
    stages["coupling"] = time.perf_counter() - t0
    state = result.state
    log(f"thermal: verdict={result.verdict} iterations={state.iterations} "
        f"rate={state.rate:.6g}")
    rows = zip(range(1, state.iterations + 1), state.outlet_history,
               state.error_history)
    artifacts = [
        write_csv(run_dir / "history.csv",
                  ["iteration", "outlet_temperature", "error"], rows),
    ]
    energy = None
    if result.verdict == "converged":
        energy = energy_balance(geom, result.channel, result.field, prob)
    summary = {
        "verdict": result.verdict,
        "iterations": state.iterations,
        "rate": state.rate,
        "energy_residual": energy,
        "outlet_temperature": float(result.channel.outlet_temperature),
        "conductivity": cfg.thermal.conductivity,
        "heat_transfer": cfg.thermal.heat_transfer,
    }
    return summary, artifacts, 0


def _cmd_stability_map(cfg, run_dir, stages, log):
    geom, prob = reference_configuration()
    t0 = time.perf_counter()
    verdicts = stability_map(geom, prob, cfg.thermal.h_values,
                             cfg.thermal.k_values,
                             max_iter=cfg.thermal.max_iterations)
    stages["map"] = time.perf_counter() - t0
    frontier = stability_frontier(verdicts)
    rows = []
    for i, h in enumerate(cfg.thermal.h_values):
        for j, k in enumerate(cfg.thermal.k_values):
            rows.append((h, k, verdicts[i, j]))
            log(f"stability-map: h={h:g} k={k:g} -> {verdicts[i, j]}")
    artifacts = [
        write_csv(run_dir / "map.csv",
                  ["heat_transfer", "conductivity", "verdict"], rows),
    ]
    summary = {
        "h_values": list(cfg.thermal.h_values),
        "k_values": list(cfg.thermal.k_values),
        "frontier": [int(v) for v in frontier],
    }
    return summary, artifacts, 0


def _cmd_surrogate(cfg, run_dir, stages, log):
    s = cfg.surrogate
    base = _bar_kwargs(cfg)
    w1 = s.weight_failure
    mid = 0.5 * (s.half_thickness_min + s.half_thickness_max)
    ref1, ref2 = make_bar_case(half_thickness=mid, **base).objectives()

    def objective(x):
        j1, j2 = make_bar_case(half_thickness=float(x[0]), **base).objectives()
        return w1 * j1 / ref1 + (1.0 - w1) * j2 / ref2

    t0 = time.perf_counter()
    result = ei_minimize(objective,
                         [(s.half_thickness_min, s.half_thickness_max)],
                         n_initial=s.n_initial, n_iterations=s.n_iterations,
                         n_candidates=s.n_candidates)
    stages["search"] = time.perf_counter() - t0
    log(f"surrogate: best half thickness {result.point[0]:.8g} "
        f"objective {result.value:.8g} after {len(result.values)} evaluations")
    t0 = time.perf_counter()
    model = fit_kriging(TrainingSet(result.points, result.values))
    grid = np.linspace(s.half_thickness_min, s.half_thickness_max, 201)
    pred = predict(model, grid[:, None])
    save_model(model, run_dir / "model.json")
    artifacts = [
        write_csv(run_dir / "samples.csv", ["half_thickness", "objective"],
                  zip(result.points[:, 0], result.values)),
        write_csv(run_dir / "predictions.csv",
                  ["half_thickness", "mean", "stddev"],
                  zip(grid, pred.mean, pred.stddev)),
        run_dir / "model.json",
    ]
    stages["artifacts"] = time.perf_counter() - t0
    summary = {
        "best_half_thickness": float(result.point[0]),
        "best_objective": result.value,
        "evaluations": len(result.values),
        "weight_failure": w1,
    }
    return summary, artifacts, 0


def _gradcheck_directions(mesh, rng, count):
    for trial in range(count):
        moves_boundary = trial % 2 == 1
        v = np.zeros_like(mesh.coords)
        mask = mesh.movable.copy()
        if moves_boundary:
            mask[mesh.walk.nodes] = True
            mask[mesh.fixed_nodes] = False
        v[mask] = rng.uniform(-1.0, 1.0, (int(mask.sum()), 2))
        peak = np.abs(v).max()
        if peak > 0:
            yield moves_boundary, v / peak


def _cmd_check_gradients(cfg, run_dir, stages, log):
    from .elasticity import ElasticSystem
    from .failure import weibull_intensity

    base = _bar_kwargs(cfg)
    tol = cfg.gradcheck.tolerance
    rows = []
    worst = 0.0
    t0 = time.perf_counter()
    for nx, ny in ((10, 6), (45, 25)):
        problem = make_bar_case(**{**base, "nx": nx, "ny": ny})
        mesh = problem.mesh
        grad = problem.gradients()

        def j1_of(coords, problem=problem, mesh=mesh):
            m2 = mesh.with_coords(coords, check_quality=False)
            system = ElasticSystem(m2, problem.material, problem.load)
            u = system.solve()
            return weibull_intensity(system.stresses(u), system.areas,
                                     problem.weibull)

        def j2_of(coords, mesh=mesh):
            return mesh.with_coords(coords, check_quality=False).inside_area()

        rng = np.random.default_rng(cfg.seed)
        for k, (moves_boundary, v) in enumerate(
                _gradcheck_directions(mesh, rng, cfg.gradcheck.directions)):
            for name, field, func in (("failure", grad.grad1, j1_of),
                                      ("volume", grad.grad2, j2_of)):
                if name == "volume" and not moves_boundary:
                    # the area only responds to boundary motion; interior
                    # directions would compare roundoff against roundoff
                    continue
                analytic = float(np.sum(field * v))
                if analytic == 0.0:
                    continue
                best, _ = fd_check(func, mesh.coords, v, analytic,
                                   base_step=1e-3 * mesh.h)
                rows.append((f"{nx}x{ny}", k, name, analytic, best))
                worst = max(worst, best)
        log(f"check-gradients: mesh {nx}x{ny} done, worst so far {worst:.3e}")
    stages["check"] = time.perf_counter() - t0
    artifacts = [
        write_csv(run_dir / "report.csv",
                  ["mesh", "direction", "objective", "directional_derivative",
                   "best_relative_error"], rows),
    ]
    passed = worst <= tol
    summary = {
        "worst_relative_error": worst,
        "tolerance": tol,
        "directions_per_mesh": cfg.gradcheck.directions,
        "passed": passed,
    }
    return summary, artifacts, 0 if passed else 1


_COMMANDS = {
    "optimize": _cmd_optimize,
    "pareto": _cmd_pareto,
    "thermal": _cmd_thermal,
    "stability-map": _cmd_stability_map,
    "surrogate": _cmd_surrogate,
    "check-gradients": _cmd_check_gradients,
}


def _config_echo(cfg: RunConfig) -> dict:
    echo = dataclasses.asdict(cfg)
    echo["output"] = str(cfg.output)
    echo.pop("source_text")
    return echo


def _artifact_records(run_dir, paths):
    records = []
    for path in paths:
        data = Path(path).read_bytes()
        records.append({
            "path": str(Path(path).relative_to(run_dir)),
            "bytes": len(data),
            "sha256": hashlib.sha256(data).hexdigest(),
        })
    return sorted(records, key=lambda r: r["path"])


def run(cfg: RunConfig, verbose: bool = False) -> int:
    """Execute one validated configuration; returns the process exit code."""
    run_dir = cfg.output / cfg.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    log = _Log(verbose)
    stages: dict[str, float] = {}
    started = time.perf_counter()
    status, summary, exit_code, failure = "ok", {}, 0, None
    artifacts: list[Path] = []
    try:
        summary, artifacts, exit_code = _COMMANDS[cfg.command](
            cfg, run_dir, stages, log)
        if exit_code != 0:
            status = "failed"
            failure = {"error": cfg.command, "messages": ["criteria not met"]}
    except Exception as exc:
        status = "failed"
        exit_code = 1
        failure = {"error": type(exc).__name__, "messages": [str(exc)]}
        log(f"{cfg.command}: failed with {type(exc).__name__}: {exc}")
    log_path = run_dir / "run.log"
    log_path.write_text("".join(line + "\n" for line in log.lines))
    manifest = {
        "run": {
            "run_id": cfg.run_id,
            "command": cfg.command,
            "status": status,
            "error": failure,
            "config": _config_echo(cfg),
            "result": summary,
            "versions": {
                "turboshape": __version__,
                "python": ".".join(str(v) for v in sys.version_info[:3]),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "artifacts": _artifact_records(run_dir, list(artifacts) + [log_path]),
        },
        "timing": {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "wall_clock_seconds": time.perf_counter() - started,
            "stage_seconds": stages,
        },
    }
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if failure is not None:
        _error_line(failure["error"], failure["messages"])
    return exit_code


def main(argv=None) -> int:
    args = _parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        _error_line("config", exc.errors)
        return 1
    output = args.output or _env_override("TURBOSHAPE_OUTPUT")
    threads = args.threads or _env_override("TURBOSHAPE_THREADS", int)
    env_verbose = (os.environ.get("TURBOSHAPE_VERBOSE", "").lower()
                   not in ("", "0", "false"))
    verbose = args.verbose or env_verbose
    updates = {}
    if output is not None:
        updates["output"] = Path(output)
    if threads is not None:
        updates["threads"] = max(1, threads)
    if verbose:
        updates["verbose"] = True
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    return run(cfg, verbose=cfg.verbose)


if __name__ == "__main__":
    sys.exit(main())
