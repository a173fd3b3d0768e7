"""Closed implicit hypersurfaces ``{y in R^d : c(y) = 0}`` and their geometry.

Points are plain numpy arrays. Every routine here accepts a single point of
shape ``(d,)`` or a stack of points of shape ``(..., d)`` and broadcasts over
the leading axes, so a whole configuration (or a batch of configurations) can
be pushed through one call.

The ambient dimension is ``d`` and the manifold dimension is ``n = d - 1``.
The constraint ``c`` is oriented so that ``grad c`` points to the unbounded
side of the surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidParameter,
    NotSPD,
    OutsideCaptureRegion,
    RetractionDiverged,
    SamplingFailed,
    SingularPoint,
)

EPS_SING = 1e-8
TOL_SURFACE = 1e-9
MAX_RETRACT_ITER = 50
C_MAX = 2.0

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ImplicitSurface:
    """A closed hypersurface given by the zero set of ``c``.

    ``c``, ``grad_c`` and ``hess_c`` must broadcast over leading axes:
    ``(..., d) -> (...)``, ``(..., d) -> (..., d)`` and
    ``(..., d) -> (..., d, d)`` respectively.

    ``anchors`` holds one or more points strictly inside the bounded region;
    the sampler shoots rays from them. ``gauss_lipschitz`` is the exact
    Lipschitz constant of the Gauss map when it is known in closed form.
    """

    ambient_dim: int
    c: ArrayFn
    grad_c: ArrayFn
    hess_c: ArrayFn
    name: str
    anchors: np.ndarray
    params: dict[str, Any] = field(default_factory=dict)
    gauss_lipschitz: float | None = None

    @property
    def dim(self) -> int:
        """Manifold dimension ``n = d - 1``."""
        return self.ambient_dim - 1

    def laplacian(self, y: np.ndarray) -> np.ndarray:
        """``trace(hess c)`` at ``y``."""
        return np.trace(self.hess_c(y), axis1=-2, axis2=-1)

    def describe(self) -> dict[str, Any]:
        return {"name": self.name, "ambient_dim": self.ambient_dim, **self.params}


def _as_points(y, d: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[-1:] != (d,):
        raise DimensionMismatch(f"expected trailing dimension {d}, got shape {y.shape}")
    return y


def gauss_map(surface: ImplicitSurface, y, eps_sing: float = EPS_SING) -> np.ndarray:
    """Outward unit normal ``grad c / |grad c|``."""
    y = _as_points(y, surface.ambient_dim)
    g = surface.grad_c(y)
    norm = np.sqrt(np.einsum("...i,...i->...", g, g))[..., None]
    if norm.min() < eps_sing:
        raise SingularPoint(f"|grad c| = {norm.min():.3e} below {eps_sing:g}")
    return g / norm


def tangent_project(surface: ImplicitSurface, y, z, eps_sing: float = EPS_SING) -> np.ndarray:
    """Remove the normal component of ``z`` at ``y``: ``(I - n n^T) z``."""
    n = gauss_map(surface, y, eps_sing)
    z = np.asarray(z, dtype=float)
    return z - np.sum(z * n, axis=-1, keepdims=True) * n


def retract(
    surface: ImplicitSurface,
    y_off,
    tol: float = TOL_SURFACE,
    max_iter: int = MAX_RETRACT_ITER,
    c_max: float = C_MAX,
) -> np.ndarray:
    """Nearest surface point to ``y_off``.

    Solves the Lagrange system ``z - y_off + lam * grad c(z) = 0``,
    ``c(z) = 0`` by Newton's method in the unknowns ``(z, lam)``. The
    displacement ``y_off - z`` ends up parallel to the normal at ``z``.
    """
    d = surface.ambient_dim
    y = _as_points(y_off, d)
    c0 = surface.c(y)
    if np.any(np.abs(c0) > c_max):
        raise OutsideCaptureRegion(
            f"|c(y_off)| = {np.max(np.abs(c0)):.3e} exceeds capture bound {c_max:g}"
        )
    z = y.copy()
    lam = np.zeros(y.shape[:-1])
    stat_tol = max(tol, 1e-13) * (1.0 + np.sqrt(np.einsum("...i,...i->...", y, y)))
    eye = np.eye(d)
    cz = c0
    for it in range(max_iter + 1):
        if it:
            cz = surface.c(z)
        g = surface.grad_c(z)
        resid = z - y + lam[..., None] * g
        if np.abs(cz).max() <= tol and np.all(
            np.sqrt(np.einsum("...i,...i->...", resid, resid)) <= stat_tol
        ):
            return z
        if it == max_iter:
            break
        jac = np.zeros(y.shape[:-1] + (d + 1, d + 1))
        jac[..., :d, :d] = eye + lam[..., None, None] * surface.hess_c(z)
        jac[..., :d, d] = g
        jac[..., d, :d] = g
        rhs = np.concatenate([-resid, -cz[..., None]], axis=-1)
        try:
            step = np.linalg.solve(jac, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise RetractionDiverged(f"singular Newton system: {exc}") from exc
        z = z + step[..., :d]
        lam = lam + step[..., d]
        if not np.all(np.isfinite(z)):
            break
    raise RetractionDiverged(
        f"Newton projection did not reach |c| <= {tol:g} in {max_iter} iterations"
    )


def sample_points(
    surface: ImplicitSurface,
    rng: np.random.Generator,
    size: int,
    tol: float = 1e-12,
    max_extensions: int = 100,
) -> np.ndarray:
    """Draw ``size`` points on the surface.

    A standard Gaussian direction is drawn and the ray from an interior anchor
    along it is bisected to the first sign change of ``c``, then the point is
    polished with :func:`retract`. The resulting law is absolutely continuous
    but not uniform (except on spheres).
    """
    d = surface.ambient_dim
    u = rng.standard_normal((size, d))
    anchors = surface.anchors
    if len(anchors) > 1:
        base = anchors[rng.integers(len(anchors), size=size)]
    else:
        base = np.broadcast_to(anchors[0], (size, d))

    t_hi = np.ones(size)
    outside = surface.c(base + t_hi[:, None] * u) > 0
    for _ in range(max_extensions):
        if outside.all():
            break
        t_hi = np.where(outside, t_hi, 2.0 * t_hi)
        outside = surface.c(base + t_hi[:, None] * u) > 0
    if not outside.all():
        raise SamplingFailed(f"no sign change of c after {max_extensions} ray extensions")

    t_lo = np.where(t_hi > 1.0, 0.5 * t_hi, 0.0)
    for _ in range(60):
        mid = 0.5 * (t_lo + t_hi)
        pos = surface.c(base + mid[:, None] * u) > 0
        t_hi = np.where(pos, mid, t_hi)
        t_lo = np.where(pos, t_lo, mid)
    return retract(surface, base + t_hi[:, None] * u, tol=tol)


def sample_point(surface: ImplicitSurface, rng: np.random.Generator, tol: float = 1e-12) -> np.ndarray:
    return sample_points(surface, rng, 1, tol=tol)[0]


def assumption1_margin(surface: ImplicitSurface, y, z, eps_sing: float = EPS_SING) -> np.ndarray:
    """Left-hand side of the pairwise curvature inequality, minus one.

    ``<n(y), n(z)>^2 + <y - z, grad c(y)> (lap c(y) - <n, hess c(y) n>) / |grad c(y)|^2 - 1``

    Non-negative on every pair, vanishing only at ``y = z``, is the condition
    under which every non-consensus equilibrium is unstable.
    """
    d = surface.ambient_dim
    y = _as_points(y, d)
    z = _as_points(z, d)
    g = surface.grad_c(y)
    gn2 = np.sum(g * g, axis=-1)
    if np.any(gn2 < eps_sing**2):
        raise SingularPoint("singular point in margin evaluation")
    n = g / np.sqrt(gn2)[..., None]
    nz = gauss_map(surface, z, eps_sing)
    hess = surface.hess_c(y)
    lap = np.trace(hess, axis1=-2, axis2=-1)
    nhn = np.einsum("...i,...ij,...j->...", n, hess, n)
    cos = np.sum(n * nz, axis=-1)
    return cos**2 + np.sum((y - z) * g, axis=-1) * (lap - nhn) / gn2 - 1.0


def finite_difference_errors(surface: ImplicitSurface, y, step: float = 1e-5) -> tuple[float, float]:
    """Relative errors of ``grad_c`` and ``hess_c`` against central differences."""
    d = surface.ambient_dim
    y = _as_points(y, d)
    eye = np.eye(d)
    fd_grad = np.array(
        [(surface.c(y + step * e) - surface.c(y - step * e)) / (2 * step) for e in eye]
    )
    fd_hess = np.array(
        [(surface.grad_c(y + step * e) - surface.grad_c(y - step * e)) / (2 * step) for e in eye]
    )
    g = surface.grad_c(y)
    h = surface.hess_c(y)
    grad_err = np.linalg.norm(fd_grad - g) / max(np.linalg.norm(g), np.finfo(float).tiny)
    hess_err = np.linalg.norm(fd_hess - h) / max(np.linalg.norm(h), np.finfo(float).tiny)
    return float(grad_err), float(hess_err)


# -- built-in surfaces ------------------------------------------------------


def _const_hessian(mat: np.ndarray) -> ArrayFn:
    def hess(y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(mat, y.shape[:-1] + mat.shape).copy()

    return hess


def sphere(d: int, radius: float = 1.0) -> ImplicitSurface:
    """``c(y) = (|y|^2 - radius^2) / 2``."""
    if d < 2:
        raise InvalidParameter("sphere needs ambient dimension >= 2")
    if radius <= 0:
        raise InvalidParameter("sphere radius must be positive")
    r2 = float(radius) ** 2

    def c(y):
        y = np.asarray(y, dtype=float)
        return 0.5 * (np.sum(y * y, axis=-1) - r2)

    def grad_c(y):
        return np.array(y, dtype=float)

    return ImplicitSurface(
        ambient_dim=d,
        c=c,
        grad_c=grad_c,
        hess_c=_const_hessian(np.eye(d)),
        name=f"sphere(d={d})",
        anchors=np.zeros((1, d)),
        params={"kind": "sphere", "dim": d, "radius": float(radius)},
        gauss_lipschitz=1.0 / radius,
    )


def ellipsoid(A, level: float = 2.0) -> ImplicitSurface:
    """``c(y) = (<y, A y> - level) / 2``; the default ``level=2`` gives ``<y,Ay>/2 - 1``."""
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 2:
        raise InvalidParameter(f"A must be a square matrix of size >= 2, got {A.shape}")
    if not np.allclose(A, A.T, rtol=1e-12, atol=1e-12 * np.abs(A).max()):
        raise NotSPD("A is not symmetric")
    if level <= 0:
        raise InvalidParameter("ellipsoid level must be positive")
    A = 0.5 * (A + A.T)
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotSPD("A is not positive definite") from exc
    eig = np.linalg.eigvalsh(A)
    d = A.shape[0]

    def c(y):
        y = np.asarray(y, dtype=float)
        return 0.5 * (np.einsum("...i,ij,...j->...", y, A, y) - level)

    def grad_c(y):
        return np.asarray(y, dtype=float) @ A

    return ImplicitSurface(
        ambient_dim=d,
        c=c,
        grad_c=grad_c,
        hess_c=_const_hessian(A),
        name=f"ellipsoid(d={d})",
        anchors=np.zeros((1, d)),
        params={"kind": "ellipsoid", "dim": d, "A": A.tolist(), "level": float(level)},
        gauss_lipschitz=float(eig[-1] / np.sqrt(level * eig[0])),
    )


def quartic(d: int) -> ImplicitSurface:
    """``c(y) = sum(y_i^4) - 1``, a rounded cube with flat points on the axes."""
    if d < 2:
        raise InvalidParameter("quartic needs ambient dimension >= 2")

    def c(y):
        y = np.asarray(y, dtype=float)
        return np.sum(y**4, axis=-1) - 1.0

    def grad_c(y):
        return 4.0 * np.asarray(y, dtype=float) ** 3

    def hess_c(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape + (d,))
        idx = np.arange(d)
        out[..., idx, idx] = 12.0 * y**2
        return out

    return ImplicitSurface(
        ambient_dim=d,
        c=c,
        grad_c=grad_c,
        hess_c=hess_c,
        name=f"quartic(d={d})",
        anchors=np.zeros((1, d)),
        params={"kind": "quartic", "dim": d},
    )


def torus(R: float = 2.0, r: float = 0.5, n_anchors: int = 64) -> ImplicitSurface:
    """Polynomial torus ``(|y|^2 + R^2 - r^2)^2 - 4 R^2 (y1^2 + y2^2)`` in R^3."""
    if not 0 < r < R:
        raise InvalidParameter(f"torus needs 0 < r < R, got R={R}, r={r}")
    R2, r2 = float(R) ** 2, float(r) ** 2
    mask = np.array([1.0, 1.0, 0.0])

    def c(y):
        y = np.asarray(y, dtype=float)
        s = np.sum(y * y, axis=-1) + R2 - r2
        return s**2 - 4.0 * R2 * (y[..., 0] ** 2 + y[..., 1] ** 2)

    def grad_c(y):
        y = np.asarray(y, dtype=float)
        s = np.sum(y * y, axis=-1, keepdims=True) + R2 - r2
        return 4.0 * s * y - 8.0 * R2 * y * mask

    def hess_c(y):
        y = np.asarray(y, dtype=float)
        s = np.sum(y * y, axis=-1) + R2 - r2
        out = 8.0 * y[..., :, None] * y[..., None, :]
        out += (4.0 * s)[..., None, None] * np.eye(3)
        out -= 8.0 * R2 * np.diag(mask)
        return out

    # points on the core circle, inside the solid torus
    phi = 2 * np.pi * np.arange(n_anchors) / n_anchors
    anchors = np.stack([R * np.cos(phi), R * np.sin(phi), np.zeros_like(phi)], axis=1)
    return ImplicitSurface(
        ambient_dim=3,
        c=c,
        grad_c=grad_c,
        hess_c=hess_c,
        name=f"torus(R={R:g}, r={r:g})",
        anchors=anchors,
        params={"kind": "torus", "dim": 3, "R": float(R), "r": float(r)},
    )


def builtin_surface(kind: str, dim: int | None = None, **params) -> ImplicitSurface:
    """Construct a built-in surface by name.

    ``kind`` is one of ``sphere``, ``ellipsoid``, ``quartic``, ``torus``.
    ``dim`` is the ambient dimension ``d``; it is inferred from ``A`` for
    ellipsoids and fixed to 3 for the torus.
    """
    if kind == "sphere":
        return sphere(3 if dim is None else dim, radius=params.get("radius", 1.0))
    if kind == "ellipsoid":
        if "A" not in params:
            raise InvalidParameter("ellipsoid needs a matrix A")
        A = np.asarray(params["A"], dtype=float)
        if A.ndim == 1:
            k = int(round(np.sqrt(A.size)))
            if k * k != A.size:
                raise InvalidParameter(f"A has {A.size} entries, not a square matrix")
            A = A.reshape(k, k)
        surf = ellipsoid(A, level=params.get("level", 2.0))
        if dim is not None and dim != surf.ambient_dim:
            raise InvalidParameter(f"dim={dim} does not match A of size {surf.ambient_dim}")
        return surf
    if kind == "quartic":
        return quartic(3 if dim is None else dim)
    if kind == "torus":
        if dim not in (None, 3):
            raise InvalidParameter("torus is only defined in R^3")
        return torus(params.get("R", 2.0), params.get("r", 0.5))
    raise InvalidParameter(f"unknown surface kind {kind!r}")
