"""Consensus vector fields on hypersurfaces and a projected RK4 integrator.

A configuration is an array of shape ``(N, d)``: row ``i`` is agent ``i``.
The fields and the step routine also accept a batch ``(T, N, d)`` of
independent configurations, which is how Monte Carlo runs are vectorized.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidParameter,
    NotOnSurface,
    NotSPD,
    SingularPoint,
    TransversalityViolated,
)
from .graph import Graph, is_connected
from .manifold import EPS_SING, TOL_SURFACE, ImplicitSurface, gauss_map, retract

FieldName = Literal["gradient", "zhu"]

ZHU_TRANSVERSALITY = 1e-6


@dataclass(frozen=True)
class FlowParams:
    """Integration settings.

    The run stops early (when ``stop_early``) once the disagreement drops
    below ``v_tol`` or the largest agent speed drops below ``field_tol``.
    """

    dt: float = 1e-2
    t_end: float = 10.0
    record_every: int = 1
    retract_tol: float = 1e-12
    stop_early: bool = True
    v_tol: float = 1e-8
    field_tol: float = 1e-10

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameter("dt must be positive")
        if not self.t_end > 0:
            raise InvalidParameter("t_end must be positive")
        if self.record_every < 1:
            raise InvalidParameter("record_every must be >= 1")
        if not 0 < self.retract_tol <= TOL_SURFACE:
            raise InvalidParameter(f"retract_tol must lie in (0, {TOL_SURFACE:g}]")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    disagreement: np.ndarray
    max_constraint_drift: float
    max_surface_residual: float
    max_v_increase: float
    converged: bool
    stop_reason: str
    final_field_norm: float
    field: str = "gradient"

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def summary(self) -> dict:
        return {
            "field": self.field,
            "t_final": float(self.times[-1]),
            "initial_V": float(np.max(self.disagreement[0])),
            "final_V": float(np.max(self.disagreement[-1])),
            "converged": bool(self.converged),
            "stop_reason": self.stop_reason,
            "final_field_norm": float(self.final_field_norm),
            "max_constraint_drift": float(self.max_constraint_drift),
            "max_surface_residual": float(self.max_surface_residual),
            "max_V_increase": float(self.max_v_increase),
            "n_samples": int(len(self.times)),
        }


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(traj: Trajectory, fh) -> None:
    """Write ``t,agent,coord0..coord{d-1},V``, one row per (sample, agent)."""
    d = traj.states.shape[-1]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "agent"] + [f"coord{k}" for k in range(d)] + ["V"])
    for t, state, v in zip(traj.times, traj.states, traj.disagreement):
        for i, row in enumerate(state):
            writer.writerow([_fmt(t), i] + [_fmt(u) for u in row] + [_fmt(v)])


def _check_shape(graph: Graph, x, d: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-2] != graph.n_agents:
        raise DimensionMismatch(
            f"configuration shape {x.shape} does not match {graph.n_agents} agents"
        )
    if d is not None and x.shape[-1] != d:
        raise DimensionMismatch(f"agents live in R^{x.shape[-1]}, surface in R^{d}")
    return x


def check_on_surface(surface: ImplicitSurface, x, tol: float = TOL_SURFACE) -> None:
    resid = np.max(np.abs(surface.c(x)))
    if resid > tol:
        raise NotOnSurface(f"max |c(x_i)| = {resid:.3e} exceeds {tol:g}")


def disagreement(graph: Graph, x) -> np.ndarray | float:
    """``V(x) = 1/2 sum_{ij in E} a_ij |x_j - x_i|^2`` (batched over leading axes)."""
    x = _check_shape(graph, x)
    i, j, w = graph.edge_arrays
    diff = x[..., j, :] - x[..., i, :]
    v = 0.5 * np.einsum("...ed,...ed,e->...", diff, diff, w)
    return float(v) if np.ndim(v) == 0 else v


def _coupling(graph: Graph, x: np.ndarray) -> np.ndarray:
    # sum_j a_ij (x_j - x_i)
    return -(graph.laplacian @ x)


def gradient_field(surface: ImplicitSurface, graph: Graph, x, eps_sing: float = EPS_SING) -> np.ndarray:
    """Consensus gradient descent: ``(I - n_i n_i^T) sum_j a_ij (x_j - x_i)``."""
    x = _check_shape(graph, x, surface.ambient_dim)
    s = _coupling(graph, x)
    n = gauss_map(surface, x, eps_sing)
    return s - np.einsum("...i,...i->...", s, n)[..., None] * n


def zhu_field(
    surface: ImplicitSurface,
    graph: Graph,
    x,
    eps_sing: float = EPS_SING,
    transversality: float = ZHU_TRANSVERSALITY,
) -> np.ndarray:
    """Oblique-projector protocol ``(I - x_i g_i^T / <x_i, g_i>) sum_j a_ij (x_j - x_i)``.

    ``g_i = grad c(x_i)``. Needs ``<x_i, g_i>`` bounded away from zero,
    relative to ``|x_i| |g_i|``.
    """
    x = _check_shape(graph, x, surface.ambient_dim)
    g = surface.grad_c(x)
    gn2 = np.einsum("...i,...i->...", g, g)
    if gn2.min() < eps_sing**2:
        raise SingularPoint(f"|grad c| = {np.sqrt(gn2.min()):.3e} below {eps_sing:g}")
    xg = np.einsum("...i,...i->...", x, g)
    guard2 = np.maximum(transversality**2 * np.einsum("...i,...i->...", x, x) * gn2, eps_sing**2)
    if (xg * xg - guard2).min() < 0:
        raise TransversalityViolated("<x, grad c(x)> is too close to zero")
    s = _coupling(graph, x)
    return s - x * (np.einsum("...i,...i->...", g, s) / xg)[..., None]


FIELDS: dict[str, Callable] = {"gradient": gradient_field, "zhu": zhu_field}


def _field_fn(name: str) -> Callable:
    try:
        return FIELDS[name]
    except KeyError:
        raise InvalidParameter(f"unknown field {name!r}; choose from {sorted(FIELDS)}") from None


def is_equilibrium(surface: ImplicitSurface, graph: Graph, x, tol: float = 1e-8, field: FieldName = "gradient") -> bool:
    return field_norm(surface, graph, x, field) <= tol


def field_norm(surface: ImplicitSurface, graph: Graph, x, field: FieldName = "gradient") -> float:
    """Largest agent speed ``max_i |xdot_i|``."""
    v = _field_fn(field)(surface, graph, x)
    return float(np.max(np.linalg.norm(v, axis=-1)))


def projected_rk4_step(surface, graph, x, dt, field_fn, k1=None, tol=1e-12):
    """One classical RK4 step in ambient coordinates, then nearest-point retraction.

    Returns ``(x_next, drift)`` where ``drift`` is ``|c|`` per agent before
    retraction.
    """
    if k1 is None:
        k1 = field_fn(surface, graph, x)
    k2 = field_fn(surface, graph, x + 0.5 * dt * k1)
    k3 = field_fn(surface, graph, x + 0.5 * dt * k2)
    k4 = field_fn(surface, graph, x + dt * k3)
    x_pred = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    drift = np.abs(surface.c(x_pred))
    return retract(surface, x_pred, tol=tol), drift


def _validate_run(surface, graph, x0):
    if not is_connected(graph):
        raise InvalidParameter("the interaction graph must be connected")
    x0 = _check_shape(graph, x0, surface.ambient_dim)
    check_on_surface(surface, x0)
    return x0.copy()


def integrate(
    surface: ImplicitSurface,
    graph: Graph,
    x0,
    params: FlowParams = FlowParams(),
    field: FieldName = "gradient",
) -> Trajectory:
    """Integrate a configuration and record every ``record_every`` steps.

    ``x0`` may also be a stack ``(..., N, d)`` of configurations that share
    one clock; recorded states then have shape ``(K, ..., N, d)`` and the
    scalar diagnostics are worst cases over the stack. Early stopping waits
    until every member meets a stopping rule.
    """
    fn = _field_fn(field)
    x = _validate_run(surface, graph, x0)
    dt = params.dt
    times, states, values = [], [], []
    max_drift = 0.0
    max_resid = float(np.max(np.abs(surface.c(x))))
    max_increase = -np.inf
    v_prev = disagreement(graph, x)
    stop_reason = "t_end"
    n_steps = params.n_steps
    k = 0
    while True:
        k1 = fn(surface, graph, x)
        fnorm = float(np.sqrt(np.einsum("...i,...i->...", k1, k1).max()))
        v = v_prev
        done = k == n_steps
        if params.stop_early and not done:
            if np.max(v) < params.v_tol:
                stop_reason, done = "consensus", True
            elif fnorm < params.field_tol:
                stop_reason, done = "equilibrium", True
        if done or k % params.record_every == 0:
            times.append(k * dt)
            states.append(x.copy())
            values.append(v)
        if done:
            break
        x, drift = projected_rk4_step(surface, graph, x, dt, fn, k1=k1, tol=params.retract_tol)
        max_drift = max(max_drift, float(drift.max()))
        max_resid = max(max_resid, float(np.max(np.abs(surface.c(x)))))
        v_new = disagreement(graph, x)
        max_increase = max(max_increase, float(np.max(v_new - v_prev)))
        v_prev = v_new
        k += 1

    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        disagreement=np.array(values),
        max_constraint_drift=max_drift,
        max_surface_residual=max_resid,
        max_v_increase=float(max_increase) if k else 0.0,
        converged=bool(np.all(values[-1] < params.v_tol)),
        stop_reason=stop_reason,
        final_field_norm=fnorm,
        field=field,
    )


@dataclass
class BatchResult:
    """Per-trial outcome of :func:`integrate_batch` (arrays indexed by trial)."""

    final_states: np.ndarray
    final_V: np.ndarray
    t_final: np.ndarray
    final_field_norm: np.ndarray
    stop_reason: list[str]
    max_constraint_drift: np.ndarray
    max_surface_residual: np.ndarray
    max_v_increase: np.ndarray
    v_tol: float = field(default=1e-8)

    @property
    def converged(self) -> np.ndarray:
        return self.final_V < self.v_tol


def integrate_batch(
    surface: ImplicitSurface,
    graph: Graph,
    x0s,
    params: FlowParams = FlowParams(),
    field: FieldName = "gradient",
) -> BatchResult:
    """Integrate ``T`` independent configurations ``x0s[t]`` side by side.

    Trials leave the batch as soon as they meet a stopping rule, so the cost
    is set by the slowest trial. No trajectory samples are kept.
    """
    fn = _field_fn(field)
    x0s = np.asarray(x0s, dtype=float)
    if x0s.ndim != 3:
        raise DimensionMismatch("x0s must have shape (T, N, d)")
    if not is_connected(graph):
        raise InvalidParameter("the interaction graph must be connected")
    _check_shape(graph, x0s, surface.ambient_dim)
    check_on_surface(surface, x0s)
    T = x0s.shape[0]
    final_states = x0s.copy()
    final_V = np.zeros(T)
    t_final = np.zeros(T)
    final_fnorm = np.zeros(T)
    reasons = ["t_end"] * T
    max_drift = np.zeros(T)
    max_resid = np.max(np.abs(surface.c(x0s)), axis=-1)
    max_inc = np.full(T, -np.inf)

    active = np.arange(T)
    x = x0s.copy()
    v_prev = disagreement(graph, x)
    n_steps = params.n_steps
    for k in range(n_steps + 1):
        k1 = fn(surface, graph, x)
        fnorm = np.max(np.linalg.norm(k1, axis=-1), axis=-1)
        stop = np.zeros(len(active), dtype=bool)
        if k == n_steps:
            stop[:] = True
        elif params.stop_early:
            conv = v_prev < params.v_tol
            equi = ~conv & (fnorm < params.field_tol)
            for idx in np.flatnonzero(conv):
                reasons[active[idx]] = "consensus"
            for idx in np.flatnonzero(equi):
                reasons[active[idx]] = "equilibrium"
            stop = conv | equi
        if stop.any():
            done = active[stop]
            final_states[done] = x[stop]
            final_V[done] = v_prev[stop]
            t_final[done] = k * params.dt
            final_fnorm[done] = fnorm[stop]
            keep = ~stop
            active, x, k1, v_prev = active[keep], x[keep], k1[keep], v_prev[keep]
        if not len(active):
            break
        x, drift = projected_rk4_step(surface, graph, x, params.dt, fn, k1=k1, tol=params.retract_tol)
        max_drift[active] = np.maximum(max_drift[active], drift.max(axis=-1))
        max_resid[active] = np.maximum(max_resid[active], np.max(np.abs(surface.c(x)), axis=-1))
        v_new = disagreement(graph, x)
        max_inc[active] = np.maximum(max_inc[active], v_new - v_prev)
        v_prev = v_new

    max_inc[~np.isfinite(max_inc)] = 0.0
    return BatchResult(
        final_states=final_states,
        final_V=final_V,
        t_final=t_final,
        final_field_norm=final_fnorm,
        stop_reason=reasons,
        max_constraint_drift=max_drift,
        max_surface_residual=max_resid,
        max_v_increase=max_inc,
        v_tol=params.v_tol,
    )


def cholesky_factor(A) -> np.ndarray:
    """Lower-triangular ``L`` with ``A = L L^T``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NotSPD(f"A must be square, got shape {A.shape}")
    if not np.allclose(A, A.T, rtol=1e-12, atol=1e-12 * np.abs(A).max()):
        raise NotSPD("A is not symmetric")
    try:
        return np.linalg.cholesky(0.5 * (A + A.T))
    except np.linalg.LinAlgError as exc:
        raise NotSPD("A is not positive definite") from exc


def cholesky_pullback(A, x, level: float = 1.0, tol: float = TOL_SURFACE) -> np.ndarray:
    """Map agents on ``{<y, A y> = level}`` to the unit sphere by ``z = L^T y / sqrt(level)``.

    The oblique-projector protocol on that ellipsoid is carried to the
    gradient flow on the unit sphere by this map, for any ``level`` (the
    sphere field is homogeneous of degree one).
    """
    L = cholesky_factor(A)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != L.shape[0]:
        raise DimensionMismatch(f"points in R^{x.shape[-1]}, A is {L.shape[0]}x{L.shape[0]}")
    quad = np.einsum("...i,ij,...j->...", x, L @ L.T, x)
    # the ellipsoid constraint is (quad - level) / 2
    resid = 0.5 * np.max(np.abs(quad - level))
    if resid > tol:
        raise NotOnSurface(f"max |<y, A y> - level| / 2 = {resid:.3e} exceeds {tol:g}")
    return (x @ L) / np.sqrt(level)
