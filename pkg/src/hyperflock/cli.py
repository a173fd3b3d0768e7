"""Command-line entry point.

    hyperflock simulate|basin|check|classify|equivalence --config run.json [--out DIR] [--seed N]

Exit codes: 0 pass, 1 condition violated, 2 configuration error,
3 numerical failure, 4 supplied state is not an equilibrium.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import analysis, flow
from .config import ConfigError, build_flow, build_graph, build_surface, load_config, resolve
from .errors import HyperflockError, NotEquilibrium, NotOnSurface, NumericalFailure
from .manifold import TOL_SURFACE, ImplicitSurface, retract, sample_points, sphere

log = logging.getLogger("hyperflock")

EXIT_OK, EXIT_VIOLATED, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_NOT_EQUILIBRIUM = 0, 1, 2, 3, 4
EQUIVALENCE_THRESHOLD = 1e-5


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(out: Path, name: str, obj: Any) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(dump_json(obj), encoding="utf-8")
    return path


def _read_points(path: Path) -> np.ndarray:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read state file {path}: {exc}") from exc
    pts = doc["points"] if isinstance(doc, dict) else doc
    arr = np.asarray(pts, dtype=float)
    if arr.ndim != 2:
        raise ConfigError(f"{path}: points must be a list of coordinate lists")
    return arr


def splay_state(surface: ImplicitSurface, n_agents: int, twist: int = 1) -> np.ndarray:
    """Agents evenly spaced (``twist`` windings) in the plane of the first two axes."""
    theta = 2 * np.pi * twist * np.arange(n_agents) / n_agents
    x = np.zeros((n_agents, surface.ambient_dim))
    x[:, 0], x[:, 1] = np.cos(theta), np.sin(theta)
    # push the circle onto the surface along rays from the origin first
    scale = np.ones(n_agents)
    for _ in range(200):
        val = surface.c(scale[:, None] * x)
        if np.all(np.abs(val) <= TOL_SURFACE):
            break
        grad = np.sum(surface.grad_c(scale[:, None] * x) * x, axis=-1)
        scale -= val / grad
    return retract(surface, scale[:, None] * x, tol=1e-13)


def initial_state(doc: dict, surface: ImplicitSurface, n_agents: int, rng: np.random.Generator) -> np.ndarray:
    exp = doc["experiment"]
    init = exp.get("init", "random")
    if init == "random":
        x = sample_points(surface, rng, n_agents)
    elif init == "consensus":
        x = np.repeat(sample_points(surface, rng, 1), n_agents, axis=0)
    elif init == "splay":
        x = splay_state(surface, n_agents, exp.get("twist", 1))
    else:
        if "init_file" not in exp:
            raise ConfigError("experiment.init_file: required when experiment.init is 'file'")
        x = _read_points(resolve(doc, exp["init_file"]))
        if x.shape != (n_agents, surface.ambient_dim):
            raise ConfigError(
                f"experiment.init_file: expected {n_agents} points in R^{surface.ambient_dim}, got {x.shape}"
            )
        flow.check_on_surface(surface, x)
    eps = exp.get("perturbation", 0.0)
    if eps > 0:
        x = retract(surface, x + eps * rng.standard_normal(x.shape), tol=1e-13)
    return x


def _header(doc: dict, command: str, seed: int) -> dict:
    return {
        "command": command,
        "seed": seed,
        "surface": build_surface(doc["surface"]).describe(),
        "graph": doc.get("graph"),
        "flow": doc.get("flow", {}),
        "experiment": doc.get("experiment", {}),
    }


def cmd_simulate(doc: dict, out: Path, seed: int) -> int:
    surface = build_surface(doc["surface"])
    g = build_graph(doc.get("graph"))
    params, field = build_flow(doc["flow"])
    x0 = initial_state(doc, surface, g.n_agents, np.random.default_rng(seed))
    traj = flow.integrate(surface, g, x0, params, field)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trajectory.csv", "w", encoding="utf-8", newline="") as fh:
        flow.write_trajectory_csv(traj, fh)
    summary = _header(doc, "simulate", seed)
    summary.update(traj.summary())
    summary["thresholds"] = {"v_tol": params.v_tol, "field_tol": params.field_tol}
    _write(out, "summary.json", summary)
    print(dump_json(traj.summary()), end="")
    return EXIT_OK


def _basin_trials(doc, surface, g, params, field, seeds):
    """Initial states per trial, integrated as one batch; falls back per trial on failure."""
    x0s, failures = {}, {}
    for k, s in enumerate(seeds):
        try:
            x0s[k] = initial_state(doc, surface, g.n_agents, np.random.default_rng(s))
        except NumericalFailure as exc:
            failures[k] = f"{type(exc).__name__}: {exc}"
    ok = sorted(x0s)
    results: dict[int, dict] = {}
    if ok:
        try:
            batch = flow.integrate_batch(surface, g, np.stack([x0s[k] for k in ok]), params, field)
            for pos, k in enumerate(ok):
                results[k] = {
                    "final_V": float(batch.final_V[pos]),
                    "t_final": float(batch.t_final[pos]),
                    "stop_reason": batch.stop_reason[pos],
                    "max_constraint_drift": float(batch.max_constraint_drift[pos]),
                    "max_surface_residual": float(batch.max_surface_residual[pos]),
                    "max_V_increase": float(batch.max_v_increase[pos]),
                }
        except NumericalFailure:
            log.info("batch integration failed, isolating trials")
            for k in ok:
                try:
                    tr = flow.integrate(surface, g, x0s[k], params, field)
                except NumericalFailure as exc:
                    failures[k] = f"{type(exc).__name__}: {exc}"
                    continue
                s = tr.summary()
                keys = ("final_V", "t_final", "stop_reason", "max_constraint_drift",
                        "max_surface_residual", "max_V_increase")
                results[k] = {key: s[key] for key in keys}
    return results, failures


def cmd_basin(doc: dict, out: Path, seed: int) -> int:
    surface = build_surface(doc["surface"])
    g = build_graph(doc.get("graph"))
    params, field = build_flow(doc["flow"])
    exp = doc["experiment"]
    T = exp.get("trials", 100)
    seeds = [seed + k for k in range(T)]
    results, errors = _basin_trials(doc, surface, g, params, field, seeds)

    trials, failures = [], []
    for k, s in enumerate(seeds):
        if k in errors:
            failures.append({"trial": k, "seed": s, "reason": errors[k]})
            trials.append({"trial": k, "seed": s, "converged": False, "error": errors[k]})
            continue
        r = results[k]
        conv = r["final_V"] < params.v_tol
        trials.append({"trial": k, "seed": s, "converged": conv, **r})
        if not conv:
            failures.append({"trial": k, "seed": s, "reason": r["stop_reason"], "final_V": r["final_V"]})
    n_conv = sum(t["converged"] for t in trials)
    done = [t for t in trials if "error" not in t]
    report = _header(doc, "basin", seed)
    report.update(
        {
            "n_trials": T,
            "n_converged": n_conv,
            "fraction": n_conv / T,
            "failures": failures,
            "trials": trials,
            "diagnostics": {
                "max_constraint_drift": max((t["max_constraint_drift"] for t in done), default=0.0),
                "max_surface_residual": max((t["max_surface_residual"] for t in done), default=0.0),
                "max_V_increase": max((t["max_V_increase"] for t in done), default=0.0),
            },
        }
    )
    _write(out, "basin.json", report)
    print(dump_json({k: report[k] for k in ("n_trials", "n_converged", "fraction")}), end="")
    min_fraction = exp.get("min_fraction")
    if min_fraction is not None and report["fraction"] < min_fraction:
        return EXIT_VIOLATED
    return EXIT_OK


def cmd_check(doc: dict, out: Path, seed: int, which: str | None = None) -> int:
    surface = build_surface(doc["surface"])
    exp = doc["experiment"]
    which = which or exp.get("which", "assumption1")
    rng = np.random.default_rng(seed)
    if which == "assumption1":
        rep = analysis.check_assumption1(surface, exp.get("n_pairs", 1000), rng)
        body, ok = rep.to_dict(), not rep.violated
    elif which == "convexity":
        rep = analysis.check_convexity(surface, exp.get("n_pairs", 1000), rng)
        body, ok = rep.to_dict(), not rep.violated
    elif which == "alpha":
        rep = analysis.strong_convexity_alpha(surface, exp.get("n_samples", 10000), rng)
        body, ok = rep.to_dict(), rep.passes
    else:
        raise ConfigError(f"unknown check {which!r}")
    report = _header(doc, "check", seed)
    report.update({"which": which, "report": body, "passes": ok})
    _write(out, f"check_{which}.json", report)
    print(dump_json(body), end="")
    return EXIT_OK if ok else EXIT_VIOLATED


def cmd_classify(doc: dict, out: Path, seed: int, state: str | None = None) -> int:
    surface = build_surface(doc["surface"])
    g = build_graph(doc.get("graph"))
    if state is not None:
        path = Path(state)
    elif "state_file" in doc["experiment"]:
        path = resolve(doc, doc["experiment"]["state_file"])
    else:
        raise ConfigError("experiment.state_file: required (or pass --state)")
    x = _read_points(path)
    if x.shape != (g.n_agents, surface.ambient_dim):
        raise ConfigError(f"state: expected {g.n_agents} points in R^{surface.ambient_dim}, got {x.shape}")
    flow.check_on_surface(surface, x)
    rep = analysis.classify_equilibrium(surface, g, x)
    report = _header(doc, "classify", seed)
    report.update(rep.to_dict())
    report["equilibrium"] = x.tolist()
    _write(out, "classify.json", report)
    print(dump_json({"classification": rep.classification, "trace_M": rep.trace_M,
                     "min_eig": rep.min_eig}), end="")
    return EXIT_OK


def cmd_equivalence(doc: dict, out: Path, seed: int) -> int:
    sblock = doc["surface"]
    if sblock["kind"] != "ellipsoid":
        raise ConfigError("surface.kind: equivalence needs an ellipsoid")
    surface = build_surface(sblock)
    g = build_graph(doc.get("graph"))
    params, _ = build_flow(doc["flow"])
    params = flow.FlowParams(**{**params.__dict__, "stop_early": False})
    threshold = doc["experiment"].get("threshold", EQUIVALENCE_THRESHOLD)
    rep = equivalence_run(surface, g, params, np.random.default_rng(seed), threshold)
    report = _header(doc, "equivalence", seed)
    report.update(rep)
    _write(out, "equivalence.json", report)
    print(dump_json(rep), end="")
    return EXIT_OK if rep["passes"] else EXIT_VIOLATED


def equivalence_run(surface: ImplicitSurface, g, params, rng, threshold=EQUIVALENCE_THRESHOLD) -> dict:
    """Oblique protocol on the ellipsoid vs gradient flow on the unit sphere from the pulled-back start."""
    A = np.asarray(surface.params["A"])
    level = surface.params["level"]
    y0 = sample_points(surface, rng, g.n_agents)
    z0 = flow.cholesky_pullback(A, y0, level)
    ty = flow.integrate(surface, g, y0, params, "zhu")
    tz = flow.integrate(sphere(surface.ambient_dim), g, z0, params, "gradient")
    mapped = flow.cholesky_pullback(A, ty.states, level, tol=np.inf)
    dev = float(np.max(np.linalg.norm(mapped - tz.states, axis=-1)))
    return {
        "max_deviation": dev,
        "dt": params.dt,
        "t_end": params.t_end,
        "threshold": threshold,
        "passes": dev <= threshold,
        "condition_number": float(np.linalg.cond(A)),
        "sphere_final_V": float(tz.disagreement[-1]),
        "sphere_max_V_increase": tz.max_v_increase,
        "max_surface_residual": max(ty.max_surface_residual, tz.max_surface_residual),
    }


COMMANDS = ("simulate", "basin", "check", "classify", "equivalence")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperflock", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="run configuration (JSON)")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--seed", type=int, default=None, help="master seed; overrides experiment.seed")
    p.add_argument("--which", choices=["assumption1", "convexity", "alpha"], help="check to run")
    p.add_argument("--state", help="equilibrium state file for classify")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        doc = load_config(args.config)
        seed = args.seed if args.seed is not None else doc["experiment"].get("seed", 0)
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        if args.command == "simulate":
            return cmd_simulate(doc, out, seed)
        if args.command == "basin":
            return cmd_basin(doc, out, seed)
        if args.command == "check":
            return cmd_check(doc, out, seed, args.which)
        if args.command == "classify":
            return cmd_classify(doc, out, seed, args.state)
        return cmd_equivalence(doc, out, seed)
    except NotEquilibrium as exc:
        print(f"not an equilibrium: {exc} (residual {exc.residual:.6e})", file=sys.stderr)
        return EXIT_NOT_EQUILIBRIUM
    except (ConfigError, NotOnSurface) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except HyperflockError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
