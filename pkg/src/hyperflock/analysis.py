"""Second-order stability analysis of consensus equilibria and geometric checkers.

At an equilibrium ``x`` of the gradient flow the constrained problem
``min V(x)  s.t.  c(x_i) = 0`` has Lagrange multipliers ``lambda_i`` and the
Riemannian Hessian of ``V`` is ``H = Z (hess L) Z`` with ``Z`` the
block-diagonal tangent projector. The linearization of the flow is ``-H``, so
a negative tangent eigenvalue of ``H`` means the equilibrium is
exponentially unstable.

The checkers relax "for all pairs of surface points" to Monte Carlo samples
drawn by :func:`hyperflock.manifold.sample_points`; a pass is evidence, a
violation is a certificate (the offending pair is returned).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DimensionMismatch, NotEquilibrium, SingularPoint
from .flow import disagreement, field_norm
from .graph import Graph
from .manifold import EPS_SING, ImplicitSurface, assumption1_margin, gauss_map, retract, sample_points

TOL_EIG = 1e-7
TOL_MARGIN = 1e-10
TOL_EQUILIBRIUM = 1e-8
CONSENSUS_V = 1e-12
ALPHA_TARGET = 2.0
ALPHA_TOL = 1e-6


def _floats(a) -> list[float]:
    return [float(v) for v in np.ravel(a)]


@dataclass
class StabilityReport:
    lambdas: np.ndarray
    hessian_eigs: np.ndarray
    trace_M: float
    classification: str
    disagreement: float
    field_norm: float
    edge_margins: list[tuple[int, int, float, float]] = field(default_factory=list)
    tol_eig: float = TOL_EIG

    @property
    def min_eig(self) -> float:
        return float(self.hessian_eigs[0])

    @property
    def spectral_abscissa(self) -> float:
        """Largest eigenvalue of the linearization ``-H`` on the tangent bundle."""
        return -self.min_eig

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambdas": _floats(self.lambdas),
            "eigs": _floats(self.hessian_eigs),
            "min_eig": self.min_eig,
            "spectral_abscissa": self.spectral_abscissa,
            "trace_M": float(self.trace_M),
            "classification": self.classification,
            "V": float(self.disagreement),
            "field_norm": float(self.field_norm),
            "tol_eig": self.tol_eig,
            "margins": [
                {"i": i, "j": j, "weight": w, "margin": float(m)} for i, j, w, m in self.edge_margins
            ],
        }


@dataclass
class AssumptionReport:
    check: str
    n_pairs: int
    min_margin: float
    argmin_pair: tuple[np.ndarray, np.ndarray]
    violated: bool
    tol: float
    min_distinct_margin: float
    n_negative: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "check": self.check,
            "n_pairs": self.n_pairs,
            "min_margin": float(self.min_margin),
            "min_distinct_margin": float(self.min_distinct_margin),
            "argmin_pair": [_floats(self.argmin_pair[0]), _floats(self.argmin_pair[1])],
            "n_negative": int(self.n_negative),
            "violated": bool(self.violated),
            "tol": self.tol,
            "sampler": "gaussian ray from interior anchor, bisected and retracted (not uniform)",
        }


@dataclass
class AlphaReport:
    """Sampled constants of the strong-convexity sufficient condition.

    ``L`` is a sampled lower estimate of the Gauss-map Lipschitz constant, so
    ``alpha`` is optimistic; ``L_exact``/``alpha_exact`` are filled in when the
    surface knows its constant in closed form.
    """

    m: float
    M: float
    L: float
    K: float
    n: int
    alpha: float
    passes: bool
    n_samples: int
    L_exact: float | None = None
    alpha_exact: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "m": self.m,
            "M": self.M,
            "L": self.L,
            "K": self.K,
            "n": self.n,
            "alpha": self.alpha,
            "passes": bool(self.passes),
            "n_samples": self.n_samples,
            "L_exact": self.L_exact,
            "alpha_exact": self.alpha_exact,
            "heuristic": "L is a sampled lower estimate; alpha is an optimistic estimate",
        }


# -- Lagrangian machinery ---------------------------------------------------


def _require_equilibrium(surface, graph, x, tol):
    res = field_norm(surface, graph, x)
    if res > tol:
        raise NotEquilibrium(f"max field norm {res:.3e} exceeds {tol:g}", res)


def lagrange_multipliers(
    surface: ImplicitSurface,
    graph: Graph,
    x,
    check: bool = True,
    tol: float = TOL_EQUILIBRIUM,
) -> np.ndarray:
    """``lambda_i = <grad c(x_i), sum_j a_ij (x_j - x_i)> / |grad c(x_i)|^2``."""
    x = np.asarray(x, dtype=float)
    if check:
        _require_equilibrium(surface, graph, x, tol)
    g = surface.grad_c(x)
    gn2 = np.sum(g * g, axis=-1)
    if np.any(gn2 < EPS_SING**2):
        raise SingularPoint("singular point in configuration")
    s = -(graph.laplacian @ x)
    return np.sum(g * s, axis=-1) / gn2


def lagrangian_residual(surface: ImplicitSurface, graph: Graph, x, lambdas) -> np.ndarray:
    """Per-agent ``|sum_j a_ij (x_i - x_j) + lambda_i grad c(x_i)|``."""
    x = np.asarray(x, dtype=float)
    r = graph.laplacian @ x + np.asarray(lambdas)[:, None] * surface.grad_c(x)
    return np.linalg.norm(r, axis=-1)


def lagrangian_hessian(surface: ImplicitSurface, graph: Graph, x, lambdas) -> np.ndarray:
    """Euclidean Hessian of the Lagrangian, ``(N d) x (N d)``.

    Diagonal blocks ``deg_i I + lambda_i hess c(x_i)``, off-diagonal ``-a_ik I``.
    """
    x = np.asarray(x, dtype=float)
    N, d = x.shape
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.shape != (N,):
        raise DimensionMismatch(f"{lambdas.shape[0]} multipliers for {N} agents")
    out = np.kron(graph.laplacian, np.eye(d))
    hc = surface.hess_c(x)
    for i in range(N):
        out[i * d : (i + 1) * d, i * d : (i + 1) * d] += lambdas[i] * hc[i]
    return out


def tangent_projectors(surface: ImplicitSurface, x) -> np.ndarray:
    """Block-diagonal ``Z`` with ``Z_i = I - n_i n_i^T``."""
    n = gauss_map(surface, x)
    N, d = n.shape
    Z = np.zeros((N * d, N * d))
    for i in range(N):
        Z[i * d : (i + 1) * d, i * d : (i + 1) * d] = np.eye(d) - np.outer(n[i], n[i])
    return Z


def hessian_blocks(surface: ImplicitSurface, graph: Graph, x, lambdas) -> np.ndarray:
    """Projected Hessian ``H = Z (hess L) Z``; symmetric and zero on normals."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != graph.n_agents or x.shape[1] != surface.ambient_dim:
        raise DimensionMismatch(f"configuration shape {x.shape} does not fit the graph/surface")
    if graph.n_agents < 2 or not graph.edges:
        raise DimensionMismatch("stability analysis needs at least two connected agents")
    Z = tangent_projectors(surface, x)
    H = Z @ lagrangian_hessian(surface, graph, x, lambdas) @ Z
    return 0.5 * (H + H.T)


def tangent_basis(surface: ImplicitSurface, y) -> np.ndarray:
    """Orthonormal basis of the tangent space(s), shape ``(..., d, n)``.

    Deterministic: QR of ``[n | I]``, dropping the first column.
    """
    n = gauss_map(surface, y)
    d = n.shape[-1]
    flat = n.reshape(-1, d)
    out = np.empty((flat.shape[0], d, d - 1))
    for k, nk in enumerate(flat):
        q, _ = np.linalg.qr(np.column_stack([nk, np.eye(d)]))
        out[k] = q[:, 1:]
    return out.reshape(n.shape[:-1] + (d, d - 1))


def stacked_tangent_basis(surface: ImplicitSurface, x) -> np.ndarray:
    """Block-diagonal ``B`` of per-agent bases, ``(N d) x (N n)``."""
    bases = tangent_basis(surface, x)
    N, d, n = bases.shape
    B = np.zeros((N * d, N * n))
    for i in range(N):
        B[i * d : (i + 1) * d, i * n : (i + 1) * n] = bases[i]
    return B


def tangent_restricted_eigs(surface: ImplicitSurface, x, H, basis: np.ndarray | None = None) -> np.ndarray:
    """Sorted eigenvalues of ``B^T H B`` (``N n`` values)."""
    B = stacked_tangent_basis(surface, x) if basis is None else basis
    R = B.T @ H @ B
    return np.linalg.eigvalsh(0.5 * (R + R.T))


def common_direction_quotient(surface: ImplicitSurface, x, H, u) -> float:
    """Rayleigh quotient ``<v, H v> / <v, v>`` for ``v = (Z_1 u, ..., Z_N u)``."""
    n = gauss_map(surface, x)
    u = np.asarray(u, dtype=float)
    v = (u - (n @ u)[:, None] * n).ravel()
    return float(v @ H @ v / (v @ v))


def directed_edge_margins(surface: ImplicitSurface, graph: Graph, x) -> list[tuple[int, int, float, float]]:
    """``(i, j, a_ij, margin(x_i, x_j))`` for both orientations of every edge."""
    x = np.asarray(x, dtype=float)
    i, j, w = graph.edge_arrays
    src = np.concatenate([i, j])
    dst = np.concatenate([j, i])
    ww = np.concatenate([w, w])
    m = assumption1_margin(surface, x[src], x[dst])
    return [(int(a), int(b), float(c), float(v)) for a, b, c, v in zip(src, dst, ww, m)]


def trace_M(surface: ImplicitSurface, graph: Graph, x) -> float:
    """``sum_i sum_{j in N_i} a_ij [-1 + <n_i, n_j>^2 + <x_i - x_j, g_i>(lap c - <n_i, hess c n_i>)/|g_i|^2]``.

    Each bracket is the pairwise curvature margin of ``(x_i, x_j)``, so the
    sum is positive whenever the pairwise inequality holds strictly.
    """
    return float(sum(w * m for _, _, w, m in directed_edge_margins(surface, graph, x)))


def certificate_matrix(surface: ImplicitSurface, graph: Graph, x, lambdas) -> np.ndarray:
    """``d x d`` matrix ``M`` with ``<u, M u> = -<v, H v>`` for ``v = (Z_i u)_i``.

    ``M = -sum_i [lambda_i Z_i hess c(x_i) Z_i + sum_{j in N_i} a_ij (Z_i - Z_i Z_j)]``.
    Its trace equals :func:`trace_M` at equilibria.
    """
    x = np.asarray(x, dtype=float)
    n = gauss_map(surface, x)
    N, d = x.shape
    Z = np.eye(d) - n[:, :, None] * n[:, None, :]
    hc = surface.hess_c(x)
    A = graph.adjacency
    M = np.zeros((d, d))
    for i in range(N):
        M -= lambdas[i] * Z[i] @ hc[i] @ Z[i]
        for k in np.flatnonzero(A[i]):
            M -= A[i, k] * (Z[i] - Z[i] @ Z[k])
    return M


def classify_equilibrium(
    surface: ImplicitSurface,
    graph: Graph,
    x,
    eq_tol: float = TOL_EQUILIBRIUM,
    tol_eig: float = TOL_EIG,
) -> StabilityReport:
    """Eigen-analysis of an equilibrium.

    ``consensus`` when ``V <= 1e-12``; ``exponentially_unstable`` when the
    projected Hessian has a tangent eigenvalue below ``-tol_eig``;
    ``inconclusive`` otherwise (no sign information beyond second order).
    """
    x = np.asarray(x, dtype=float)
    res = field_norm(surface, graph, x)
    if res > eq_tol:
        raise NotEquilibrium(f"max field norm {res:.3e} exceeds {eq_tol:g}", res)
    lam = lagrange_multipliers(surface, graph, x, check=False)
    H = hessian_blocks(surface, graph, x, lam)
    eigs = tangent_restricted_eigs(surface, x, H)
    margins = directed_edge_margins(surface, graph, x)
    v = disagreement(graph, x)
    if v <= CONSENSUS_V:
        label = "consensus"
    elif eigs[0] < -tol_eig:
        label = "exponentially_unstable"
    else:
        label = "inconclusive"
    return StabilityReport(
        lambdas=lam,
        hessian_eigs=eigs,
        trace_M=float(sum(w * m for _, _, w, m in margins)),
        classification=label,
        disagreement=v,
        field_norm=res,
        edge_margins=margins,
        tol_eig=tol_eig,
    )


# -- geometric condition checkers ---------------------------------------------


def _pairs(surface, n_pairs, rng):
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    pts = sample_points(surface, rng, 2 * n_pairs)
    return pts[:n_pairs], pts[n_pairs:]


def _pair_report(check, values, y_all, z_all, coincident, n_pairs, tol):
    k = int(np.argmin(values))
    distinct = float(values[k])
    kc = int(np.argmin(coincident))
    if coincident[kc] < distinct:
        min_margin, pair = float(coincident[kc]), (y_all[kc], y_all[kc])
    else:
        min_margin, pair = distinct, (y_all[k], z_all[k])
    return AssumptionReport(
        check=check,
        n_pairs=n_pairs,
        min_margin=min_margin,
        argmin_pair=pair,
        violated=min_margin < -tol,
        tol=tol,
        min_distinct_margin=distinct,
        n_negative=int(np.sum(values < -tol)),
    )


def check_assumption1(
    surface: ImplicitSurface, n_pairs: int, rng: np.random.Generator, tol: float = TOL_MARGIN
) -> AssumptionReport:
    """Minimum pairwise curvature margin over sampled pairs, both orders.

    Coincident pairs ``(y, y)`` are included; they evaluate to zero.
    """
    y, z = _pairs(surface, n_pairs, rng)
    y_all = np.concatenate([y, z])
    z_all = np.concatenate([z, y])
    values = assumption1_margin(surface, y_all, z_all)
    coincident = assumption1_margin(surface, y_all, y_all)
    return _pair_report("assumption1", values, y_all, z_all, coincident, n_pairs, tol)


def check_convexity(
    surface: ImplicitSurface, n_pairs: int, rng: np.random.Generator, tol: float = TOL_MARGIN
) -> AssumptionReport:
    """Minimum of ``<y - z, grad c(y)>`` over sampled pairs, both orders.

    Non-negative everywhere means every tangent plane supports the surface.
    """
    y, z = _pairs(surface, n_pairs, rng)
    y_all = np.concatenate([y, z])
    z_all = np.concatenate([z, y])
    values = np.sum((y_all - z_all) * surface.grad_c(y_all), axis=-1)
    coincident = np.zeros(len(y_all))
    return _pair_report("convexity", values, y_all, z_all, coincident, n_pairs, tol)


def strong_convexity_alpha(
    surface: ImplicitSurface,
    n_samples: int,
    rng: np.random.Generator,
    local_step: float = 1e-3,
) -> AlphaReport:
    """Estimate ``alpha = m ((n+1) m - M) / (L K)^2`` from surface samples.

    ``m, M`` bound the eigenvalues of ``hess c``; ``K`` is the largest
    ``|grad c|``; ``L`` is the largest Gauss-map difference quotient over
    random pairs and over short tangent steps (which probe the curvature).
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    y = sample_points(surface, rng, n_samples)
    eig = np.linalg.eigvalsh(surface.hess_c(y))
    m, M = float(eig.min()), float(eig.max())
    K = float(np.linalg.norm(surface.grad_c(y), axis=-1).max())
    ny = gauss_map(surface, y)

    z = np.roll(y, -1, axis=0)
    nz = np.roll(ny, -1, axis=0)
    quot = np.linalg.norm(ny - nz, axis=-1) / np.linalg.norm(y - z, axis=-1)

    # short steps along a random tangent direction
    t = rng.standard_normal(y.shape)
    t -= np.sum(t * ny, axis=-1, keepdims=True) * ny
    t *= local_step / np.linalg.norm(t, axis=-1, keepdims=True)
    w = retract(surface, y + t, tol=1e-13)
    local = np.linalg.norm(gauss_map(surface, w) - ny, axis=-1) / np.linalg.norm(w - y, axis=-1)
    L = float(max(quot[np.isfinite(quot)].max(initial=0.0), local.max()))

    n = surface.dim

    def _alpha(lip):
        return m * ((n + 1) * m - M) / (lip * K) ** 2

    alpha = _alpha(L)
    L_exact = surface.gauss_lipschitz
    return AlphaReport(
        m=m,
        M=M,
        L=L,
        K=K,
        n=n,
        alpha=float(alpha),
        passes=bool(alpha >= ALPHA_TARGET - ALPHA_TOL),
        n_samples=n_samples,
        L_exact=L_exact,
        alpha_exact=None if L_exact is None else float(_alpha(L_exact)),
    )


def g_theta(theta, alpha):
    """``cos^2(theta) + alpha (1 - cos(theta))``."""
    c = np.cos(theta)
    return c**2 + alpha * (1.0 - c)


def min_g_theta(alpha: float) -> float:
    """Minimum of :func:`g_theta` over ``theta in [0, pi]``.

    Candidates are the endpoints and the interior critical point
    ``cos(theta) = alpha / 2`` when it exists. The minimum is ``1`` exactly
    when ``alpha >= 2``.
    """
    cands = [1.0, 1.0 + 2.0 * alpha]
    if -2.0 <= alpha <= 2.0:
        cands.append(alpha - alpha**2 / 4.0)
    return float(min(cands))
