"""Grids, potentials and cone-aligned space-time fields.

Geometry conventions used throughout the package:

* space is R^3, the scattering region is the closed unit ball B,
* a solve is anchored at an apex point ``a`` (a source location, usually
  on the unit sphere, or the origin for plain cone problems),
* fields are stored in retarded coordinates ``(rho, direction, xi)`` with
  ``rho = |x - a|`` and ``xi = t - rho``, so the forward light cone
  ``t = |x - a|`` is the coordinate plane ``xi = 0``.

Spherical quadrature is a Gauss-Legendre (polar) x uniform (azimuth)
product rule; its weights sum to 4*pi exactly up to rounding.

Symmetry tiers: a field may be stored as ``spherical`` (values depend on
(rho, xi) only), ``axisymmetric`` (no azimuth dependence in a frame whose
third axis is the symmetry axis) or ``general``. All evaluation helpers
accept world coordinates and hide the tier.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

FOUR_PI = 4.0 * math.pi

SPHERICAL = "spherical"
AXISYMMETRIC = "axisymmetric"
GENERAL = "general"

_TIERS = (SPHERICAL, AXISYMMETRIC, GENERAL)


class SolverError(RuntimeError):
    """A numerical stage could not deliver its contract."""


def gauss_legendre_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights mapped to (0, 1)."""
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def rotation_to_axis(axis: np.ndarray) -> np.ndarray:
    """Rotation matrix R with R @ e3 = axis (axis need not be normalized)."""
    a = np.asarray(axis, dtype=float)
    n = np.linalg.norm(a)
    if n == 0.0:
        return np.eye(3)
    a = a / n
    e3 = np.array([0.0, 0.0, 1.0])
    v = np.cross(e3, a)
    s2 = v @ v
    c = e3 @ a
    if s2 < 1e-28:
        if c > 0:
            return np.eye(3)
        return np.diag([1.0, -1.0, -1.0])
    vx = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return np.eye(3) + vx + vx @ vx * ((1.0 - c) / s2)


# ---------------------------------------------------------------------------
# Spherical quadrature grid
# ---------------------------------------------------------------------------
class SphereGrid:
    """Product quadrature on the unit sphere.

    Gauss-Legendre nodes in the polar cosine ``mu`` times a uniform,
    periodic azimuth rule. Exact for spherical polynomials up to degree
    ``n_polar - 1`` in mu and full trigonometric accuracy in azimuth.
    """

    def __init__(self, n_polar: int = 16, n_azimuth: int = 32):
        if n_polar < 2 or n_azimuth < 4 or n_azimuth % 2:
            raise ValueError("need n_polar >= 2 and even n_azimuth >= 4")
        self.n_polar = int(n_polar)
        self.n_azimuth = int(n_azimuth)
        mu, wmu = leggauss(self.n_polar)
        self.mu = mu                      # ascending in (-1, 1)
        self.polar_weights = wmu          # sums to 2
        self.azimuth = 2.0 * math.pi * np.arange(self.n_azimuth) / self.n_azimuth
        self.az_weight = 2.0 * math.pi / self.n_azimuth
        sin_t = np.sqrt(1.0 - mu**2)
        cp, sp = np.cos(self.azimuth), np.sin(self.azimuth)
        nodes = np.empty((self.n_polar, self.n_azimuth, 3))
        nodes[:, :, 0] = sin_t[:, None] * cp[None, :]
        nodes[:, :, 1] = sin_t[:, None] * sp[None, :]
        nodes[:, :, 2] = mu[:, None]
        self.nodes = nodes.reshape(-1, 3)
        self.weights = np.repeat(wmu, self.n_azimuth) * self.az_weight

    @property
    def n_nodes(self) -> int:
        return self.n_polar * self.n_azimuth

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_polar, self.n_azimuth)

    def integrate(self, values: np.ndarray) -> float | np.ndarray:
        """Quadrature of node values over the unit sphere (last axis = nodes)."""
        values = np.asarray(values)
        if values.shape[-1] != self.n_nodes:
            raise ValueError("node-value array does not match the grid")
        return values @ self.weights


def sphere_integral(f: Callable[[np.ndarray], np.ndarray], center, radius: float,
                    grid: SphereGrid) -> float:
    """Quadrature of ``f`` over the sphere |x - center| = radius."""
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=float)
    pts = center[None, :] + radius * grid.nodes
    vals = np.asarray(f(pts), dtype=float)
    return float(radius**2 * grid.integrate(vals))


# ---------------------------------------------------------------------------
# Cone polynomial basis
# ---------------------------------------------------------------------------
def gamma_eval(k: int, x, t) -> np.ndarray | float:
    """(t^2 - |x|^2)^k / k! for k >= 0, identically 0 for k < 0."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    r2 = np.sum(x * x, axis=-1) if x.shape[-1:] == (3,) and x.ndim >= 1 else x**2
    if k < 0:
        out = np.zeros(np.broadcast(r2, t).shape)
        return out if out.ndim else 0.0
    val = (t**2 - r2) ** k / math.factorial(k)
    return val if np.ndim(val) else float(val)


def gamma_from_retarded(k: int, rho, xi) -> np.ndarray:
    """Same basis in retarded coordinates, t^2 - rho^2 = xi*(xi + 2*rho)."""
    if k < 0:
        return np.zeros(np.broadcast(np.asarray(rho), np.asarray(xi)).shape)
    z = np.asarray(xi, dtype=float) * (np.asarray(xi, dtype=float) + 2.0 * np.asarray(rho, dtype=float))
    return z**k / math.factorial(k)


@dataclass(frozen=True)
class GammaBasis:
    """Cone power basis of one order; callable on space-time points."""

    order: int

    def __call__(self, x, t):
        return gamma_eval(self.order, x, t)


# ---------------------------------------------------------------------------
# Pointwise stencil operations on evaluable scalar fields
# ---------------------------------------------------------------------------
_LAP4 = np.array([-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0])
_D1C4 = np.array([1.0 / 12.0, -2.0 / 3.0, 2.0 / 3.0, -1.0 / 12.0])


def laplacian(f: Callable[[np.ndarray], np.ndarray], x, step: float) -> np.ndarray | float:
    """4th-order central finite-difference Laplacian of an evaluable field.

    ``x`` may be a single point (3,) or a batch (..., 3); one batched call
    to ``f`` evaluates the full 13-point stencil.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x.reshape(-1, 3)
    offs = np.zeros((13, 3))
    k = 1
    for ax in range(3):
        for j in (-2, -1, 1, 2):
            offs[k, ax] = j * step
            k += 1
    stencil = pts[:, None, :] + offs[None, :, :]
    vals = np.asarray(f(stencil.reshape(-1, 3)), dtype=float).reshape(len(pts), 13)
    acc = 3.0 * _LAP4[2] * vals[:, 0]
    k = 1
    for ax in range(3):
        for ci in (0, 1, 3, 4):
            acc = acc + _LAP4[ci] * vals[:, k]
            k += 1
    acc = acc / step**2
    if single:
        return float(acc[0])
    return acc.reshape(x.shape[:-1])


def radial_derivative(f: Callable[[np.ndarray], np.ndarray], x, center, step: float) -> float:
    """Central-difference directional derivative along (x - center)/|x - center|."""
    x = np.asarray(x, dtype=float)
    center = np.asarray(center, dtype=float)
    d = x - center
    r = np.linalg.norm(d)
    if r == 0.0:
        raise ValueError("radial derivative undefined at the center")
    u = d / r
    pts = x[None, :] + np.array([-2.0, -1.0, 1.0, 2.0])[:, None] * step * u[None, :]
    vals = np.asarray(f(pts), dtype=float)
    return float(vals @ _D1C4 / step)


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------
_BUMP_POWER = 8


def _bump_profile(s: np.ndarray) -> np.ndarray:
    """Polynomial plateau bump (1 - s^2)^8 on (-1, 1), peak value 1 at s = 0.

    C^7 with moderate derivative constants; the polynomial edge keeps the
    chord averages and their Laplacians resolvable on coarse shells,
    unlike exponential bumps whose edge layers sharpen without bound.
    """
    s = np.asarray(s, dtype=float)
    inner = np.maximum(1.0 - s**2, 0.0)
    return inner**_BUMP_POWER


@dataclass(frozen=True)
class Potential:
    """Smooth scalar potential with support and norm metadata.

    ``bound`` is the a-priori smoothness-norm budget used by coefficient
    growth checks; ``sup_bound`` the plain value-level sup used to size
    the Neumann truncation. ``support_radius=None`` marks potentials
    without compact support (the constant family used by oracles).
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    support_radius: Optional[float]
    margin_h: float
    bound: float
    symmetry: str = "general"           # "radial" | "general"
    smoothness_order: int = 7
    sup_bound: Optional[float] = None
    constant_value: Optional[float] = None
    spec: Optional[dict] = None

    def __post_init__(self):
        if self.support_radius is not None:
            if not (0.0 < self.margin_h < 1.0):
                raise ValueError("margin h must lie in (0, 1)")
            if self.support_radius > 1.0 - self.margin_h + 1e-12:
                raise ValueError("support must stay a distance h from the unit sphere")
        if self.symmetry not in ("radial", "general"):
            raise ValueError("symmetry must be 'radial' or 'general'")

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.constant_value is not None:
            return np.full(pts.shape[:-1], self.constant_value)
        return np.asarray(self.evaluator(pts), dtype=float)

    @property
    def value_sup(self) -> float:
        return self.sup_bound if self.sup_bound is not None else self.bound

    @property
    def is_constant(self) -> bool:
        return self.constant_value is not None

    @property
    def is_zero(self) -> bool:
        return self.constant_value == 0.0

    def with_bound(self, bound: float) -> "Potential":
        return replace(self, bound=bound)

    # -- constructors ------------------------------------------------------
    @staticmethod
    def zero() -> "Potential":
        return Potential(lambda p: np.zeros(np.asarray(p).shape[:-1]), None, 0.5,
                         bound=0.0, symmetry="radial", sup_bound=0.0, constant_value=0.0)

    @staticmethod
    def constant(value: float) -> "Potential":
        v = float(value)
        return Potential(lambda p, v=v: np.full(np.asarray(p).shape[:-1], v), None, 0.5,
                         bound=abs(v), symmetry="radial", sup_bound=abs(v), constant_value=v)

    @staticmethod
    def radial_bump(amplitude: float, center_radius: float, width: float,
                    margin_h: float, bound: Optional[float] = None) -> "Potential":
        if width <= 0.0:
            raise ValueError("width must be positive")
        if center_radius < 0.0 or (0.0 < center_radius < width):
            raise ValueError("center_radius must be 0 or at least width")
        outer = center_radius + width
        if outer > 1.0 - margin_h:
            raise ValueError("bump support exceeds the allowed ball")

        def evaluator(pts, A=amplitude, c=center_radius, w=width):
            r = np.linalg.norm(np.asarray(pts, dtype=float), axis=-1)
            return A * _bump_profile((r - c) / w)

        spec = {"kind": "radial_bump", "amplitude": amplitude,
                "center_radius": center_radius, "width": width, "margin_h": margin_h}
        b = bound if bound is not None else _profile_norm_proxy(amplitude, width)
        return Potential(evaluator, outer, margin_h, bound=b, symmetry="radial",
                         sup_bound=abs(amplitude), spec=spec)

    @staticmethod
    def angular_bump(amplitude: float, center_radius: float, width: float,
                     margin_h: float, bound: Optional[float] = None) -> "Potential":
        radial = Potential.radial_bump(1.0, center_radius, width, margin_h)
        outer = center_radius + width

        def evaluator(pts, A=amplitude, base=radial.evaluator):
            pts = np.asarray(pts, dtype=float)
            return A * pts[..., 0] * base(pts)

        spec = {"kind": "angular_bump", "amplitude": amplitude,
                "center_radius": center_radius, "width": width, "margin_h": margin_h}
        b = bound if bound is not None else _profile_norm_proxy(amplitude, width) * (1.0 + outer)
        return Potential(evaluator, outer, margin_h, bound=b, symmetry="general",
                         sup_bound=abs(amplitude) * outer, spec=spec)

    @staticmethod
    def from_spec(spec: dict) -> "Potential":
        kind = spec.get("kind")
        kwargs = dict(amplitude=float(spec["amplitude"]),
                      center_radius=float(spec["center_radius"]),
                      width=float(spec["width"]),
                      margin_h=float(spec["margin_h"]))
        if "bound" in spec:
            kwargs["bound"] = float(spec["bound"])
        if kind == "radial_bump":
            return Potential.radial_bump(**kwargs)
        if kind == "angular_bump":
            return Potential.angular_bump(**kwargs)
        raise ValueError(f"unknown potential kind {kind!r}")

    def to_spec(self) -> dict:
        if self.spec is not None:
            return dict(self.spec)
        if self.is_constant:
            return {"kind": "constant", "value": self.constant_value}
        raise ValueError("potential has no serializable spec")


def _profile_norm_proxy(amplitude: float, width: float) -> float:
    # C^2-level proxy |p| + |p'|/w + |p''|/w^2 for the plateau bump
    # (unit-profile derivative maxima are ~1, ~3.2, ~16).
    return abs(amplitude) * (1.0 + 3.2 / width + 16.0 / width**2)


# ---------------------------------------------------------------------------
# Cone (Goursat) data
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ConeTrace:
    """Dirichlet data on the forward light cone t = |x - apex|.

    The evaluator is purely spatial: the trace value at the space-time
    point (x, |x - apex|). ``symmetry`` declares invariance about the
    apex ("spherical"), about ``axis`` through the apex ("axisymmetric")
    or none; solvers pick their storage tier from it.
    """

    apex: np.ndarray
    evaluator: Callable[[np.ndarray], np.ndarray]
    symmetry: str = GENERAL
    axis: Optional[np.ndarray] = None
    norm_budget: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "apex", np.asarray(self.apex, dtype=float))
        if self.symmetry not in _TIERS:
            raise ValueError(f"unknown symmetry {self.symmetry!r}")
        if self.axis is not None:
            ax = np.asarray(self.axis, dtype=float)
            object.__setattr__(self, "axis", ax / np.linalg.norm(ax))

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluator(np.asarray(pts, dtype=float)), dtype=float)

    @staticmethod
    def constant(value: float, apex=(0.0, 0.0, 0.0)) -> "ConeTrace":
        return ConeTrace(np.asarray(apex, float),
                         lambda p, v=float(value): np.full(np.asarray(p).shape[:-1], v),
                         symmetry=SPHERICAL, norm_budget=abs(value))


# ---------------------------------------------------------------------------
# Discretization spec
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GridSpec:
    """Resolution bundle for cone-aligned solves.

    ``n_shells`` spheres plus the apex node span [0, r_max]; ``n_xi_steps``
    uniform steps span the retarded-time window [0, xi_max]. The kq_*
    orders control the retarded-potential quadrature (radial Gauss nodes
    and the polar x azimuth direction rule).
    """

    n_shells: int = 48
    r_max: float = 2.0
    n_polar: int = 16
    n_azimuth: int = 32
    n_xi_steps: int = 96
    xi_max: float = 2.0
    kq_radial: int = 10
    kq_polar: int = 12
    kq_azimuth: int = 24

    def rho_axis(self) -> np.ndarray:
        return np.linspace(0.0, self.r_max, self.n_shells + 1)

    def xi_axis(self) -> np.ndarray:
        return np.linspace(0.0, self.xi_max, self.n_xi_steps + 1)

    @property
    def d_rho(self) -> float:
        return self.r_max / self.n_shells

    @property
    def d_xi(self) -> float:
        return self.xi_max / self.n_xi_steps

    def sphere(self) -> SphereGrid:
        return SphereGrid(self.n_polar, self.n_azimuth)

    def refined(self, factor: float = 2.0, angular: bool = False) -> "GridSpec":
        """Space-time (and quadrature-order) refinement; angular grid optional."""
        f = min(factor, 2.0)
        kwargs = dict(n_shells=int(round(self.n_shells * factor)),
                      n_xi_steps=int(round(self.n_xi_steps * factor)),
                      kq_radial=int(round(self.kq_radial * f)),
                      kq_polar=int(round(self.kq_polar * f)),
                      kq_azimuth=2 * int(round(self.kq_azimuth * f / 2)))
        if angular:
            kwargs.update(n_polar=int(round(self.n_polar * factor)),
                          n_azimuth=2 * int(round(self.n_azimuth * factor / 2)))
        return replace(self, **kwargs)


def cubic_lagrange_weights(u: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """4-point Lagrange interpolation on a uniform index axis.

    ``u`` is the query in index units; returns window starts (clipped so
    the window stays in range, which makes the boundary stencils one
    sided) and the (len(u), 4) weight table. Falls back to the linear
    pair when the axis has fewer than 4 nodes.
    """
    u = np.asarray(u, dtype=float)
    if n < 4:
        j = np.clip(u.astype(int), 0, n - 2)
        f = u - j
        w = np.zeros(u.shape + (4,))
        w[:, 0] = 1.0 - f
        w[:, 1] = f
        return j, w
    j0 = np.clip(np.floor(u).astype(int) - 1, 0, n - 4)
    t = u - j0
    w = np.empty(u.shape + (4,))
    w[..., 0] = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0
    w[..., 1] = t * (t - 2.0) * (t - 3.0) / 2.0
    w[..., 2] = -t * (t - 1.0) * (t - 3.0) / 2.0
    w[..., 3] = t * (t - 1.0) * (t - 2.0) / 6.0
    return j0, w


# ---------------------------------------------------------------------------
# Space-time fields in retarded coordinates
# ---------------------------------------------------------------------------
class SpaceTimeField:
    """Scalar field sampled on (shells x sphere x retarded time) around an apex.

    ``values`` shape depends on the tier:
      spherical      (n_rho, n_xi)
      axisymmetric   (n_rho, n_polar, n_xi)
      general        (n_rho, n_polar, n_azimuth, n_xi)

    Fields vanish outside the cone (xi < 0). ``reach_limit`` marks the
    causal-complete region rho + xi/2 <= reach_limit on which the values
    are trustworthy; evaluation outside is not an error but diagnostics
    restrict themselves to the valid part.
    """

    def __init__(self, apex, frame, rho: np.ndarray, sphere: SphereGrid,
                 xi: np.ndarray, values: np.ndarray, tier: str,
                 reach_limit: float = math.inf):
        if tier not in _TIERS:
            raise ValueError(f"unknown tier {tier!r}")
        self.apex = np.asarray(apex, dtype=float)
        self.frame = np.asarray(frame, dtype=float)
        self.rho = np.asarray(rho, dtype=float)
        self.sphere = sphere
        self.xi = np.asarray(xi, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.tier = tier
        self.reach_limit = float(reach_limit)
        expected = self._expected_shape()
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != {expected} for tier {tier}")
        self._mu_ext = None
        self._vals_ext = None

    def _expected_shape(self):
        n_r, n_x = len(self.rho), len(self.xi)
        if self.tier == SPHERICAL:
            return (n_r, n_x)
        if self.tier == AXISYMMETRIC:
            return (n_r, self.sphere.n_polar, n_x)
        return (n_r, self.sphere.n_polar, self.sphere.n_azimuth, n_x)

    # -- constructors ------------------------------------------------------
    @staticmethod
    def zeros_like(other: "SpaceTimeField") -> "SpaceTimeField":
        return SpaceTimeField(other.apex, other.frame, other.rho, other.sphere,
                              other.xi, np.zeros_like(other.values), other.tier,
                              other.reach_limit)

    def copy_with(self, values: np.ndarray, reach_limit: Optional[float] = None) -> "SpaceTimeField":
        return SpaceTimeField(self.apex, self.frame, self.rho, self.sphere, self.xi,
                              values, self.tier,
                              self.reach_limit if reach_limit is None else reach_limit)

    # -- masks / norms -----------------------------------------------------
    def valid_mask(self, margin: float = 0.0) -> np.ndarray:
        """Boolean mask over the value array: rho + xi/2 <= reach_limit - margin."""
        reach = self.rho[:, None] + 0.5 * self.xi[None, :]
        ok = reach <= self.reach_limit - margin + 1e-12
        if self.tier == SPHERICAL:
            return ok
        if self.tier == AXISYMMETRIC:
            return np.broadcast_to(ok[:, None, :], self.values.shape)
        return np.broadcast_to(ok[:, None, None, :], self.values.shape)

    def max_abs(self, margin: float = 0.0) -> float:
        m = self.valid_mask(margin)
        if not m.any():
            return 0.0
        return float(np.max(np.abs(self.values[m])))

    # -- coordinate helpers -------------------------------------------------
    def to_canonical(self, pts_world: np.ndarray) -> np.ndarray:
        return (np.asarray(pts_world, dtype=float) - self.apex) @ self.frame

    def to_world(self, pts_canonical: np.ndarray) -> np.ndarray:
        return np.asarray(pts_canonical, dtype=float) @ self.frame.T + self.apex

    # -- interpolation -------------------------------------------------------
    def _ensure_polar_table(self):
        """Resample the polar axis onto uniform theta with pole ghosts.

        The table is spectrally consistent with the stored band-limited
        representation, includes the poles exactly, and carries one
        reflected ghost row past each pole so that cubic windows never
        leave the axis. Skipped for the spherical tier.
        """
        if self._vals_ext is not None or self.tier == SPHERICAL:
            return
        from . import sphharm
        n_p = self.sphere.n_polar
        n_u = 2 * n_p + 1
        if self.tier == AXISYMMETRIC:
            tab = sphharm.resample_polar_axisym(self.values, n_p, n_u, axis=1)
            pre = tab[:, 1:2, ...]
            post = tab[:, -2:-1, ...]
        else:
            tab = sphharm.resample_polar_general(self.values, n_p,
                                                 self.sphere.n_azimuth, n_u,
                                                 polar_axis=1, az_axis=2)
            half = self.sphere.n_azimuth // 2
            pre = np.roll(tab[:, 1:2, ...], half, axis=2)
            post = np.roll(tab[:, -2:-1, ...], half, axis=2)
        self._vals_ext = np.concatenate([pre, tab, post], axis=1)
        self._mu_ext = math.pi / (n_u - 1)        # uniform theta spacing

    def evaluate(self, pts_world: np.ndarray, times: np.ndarray) -> np.ndarray:
        """Field values at world points and absolute times (0 outside the cone)."""
        return self.evaluate_canonical(self.to_canonical(pts_world), times)

    def evaluate_canonical(self, pts: np.ndarray, times: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        times = np.asarray(times, dtype=float)
        flat = pts.reshape(-1, 3)
        t = np.broadcast_to(times, pts.shape[:-1]).reshape(-1)
        rho = np.linalg.norm(flat, axis=1)
        xi = t - rho
        out = self._interp(rho, flat, xi)
        return out.reshape(pts.shape[:-1])

    def _interp(self, rho: np.ndarray, pts: np.ndarray, xi: np.ndarray) -> np.ndarray:
        n_r, n_x = len(self.rho), len(self.xi)
        d_rho = self.rho[1] - self.rho[0]
        d_xi = self.xi[1] - self.xi[0]
        inside = (xi > -1e-12) & (rho <= self.rho[-1] + 1e-12)
        xi_c = np.clip(xi, 0.0, self.xi[-1])
        rho_c = np.clip(rho, 0.0, self.rho[-1])

        jr, wr = cubic_lagrange_weights(rho_c / d_rho, n_r)
        jx, wx = cubic_lagrange_weights(xi_c / d_xi, n_x)

        if self.tier == SPHERICAL:
            v = self.values
            val = np.zeros_like(rho_c)
            for i in range(4):
                row = np.zeros_like(rho_c)
                for j in range(4):
                    row += wx[:, j] * v[jr + i, jx + j]
                val += wr[:, i] * row
            return np.where(inside, val, 0.0)

        self._ensure_polar_table()
        v = self._vals_ext
        d_ang = self._mu_ext
        with np.errstate(invalid="ignore", divide="ignore"):
            mu = np.where(rho_c > 1e-14, pts[:, 2] / np.maximum(rho_c, 1e-300), 0.0)
        theta = np.arccos(np.clip(mu, -1.0, 1.0))
        jp, wp = cubic_lagrange_weights(theta / d_ang + 1.0, v.shape[1])

        if self.tier == AXISYMMETRIC:
            val = np.zeros_like(rho_c)
            for i in range(4):
                plane = np.zeros_like(rho_c)
                for p in range(4):
                    row = np.zeros_like(rho_c)
                    for j in range(4):
                        row += wx[:, j] * v[jr + i, jp + p, jx + j]
                    plane += wp[:, p] * row
                val += wr[:, i] * plane
            return np.where(inside, val, 0.0)

        n_az = self.sphere.n_azimuth
        phi = np.arctan2(pts[:, 1], pts[:, 0]) % (2.0 * math.pi)
        fa_full = phi / self.sphere.az_weight
        ia = fa_full.astype(int) % n_az
        fa = fa_full - np.floor(fa_full)
        ia1 = (ia + 1) % n_az
        val = np.zeros_like(rho_c)
        for ja, wa in ((ia, 1 - fa), (ia1, fa)):
            for i in range(4):
                plane = np.zeros_like(rho_c)
                for p in range(4):
                    row = np.zeros_like(rho_c)
                    for j in range(4):
                        row += wx[:, j] * v[jr + i, jp + p, ja, jx + j]
                    plane += wp[:, p] * row
                val += wa * wr[:, i] * plane
        return np.where(inside, val, 0.0)

    # -- views ---------------------------------------------------------------
    def values_general(self) -> np.ndarray:
        """Broadcast the stored tier into the full (rho, polar, az, xi) array."""
        n_p, n_a = self.sphere.shape
        if self.tier == SPHERICAL:
            return np.broadcast_to(self.values[:, None, None, :],
                                   (len(self.rho), n_p, n_a, len(self.xi))).copy()
        if self.tier == AXISYMMETRIC:
            return np.broadcast_to(self.values[:, :, None, :],
                                   (len(self.rho), n_p, n_a, len(self.xi))).copy()
        return self.values.copy()

    def cone_trace(self) -> np.ndarray:
        """Values on the cone plane xi = 0 (tier-shaped)."""
        return self.values[..., 0]

    def to_csv(self, path: str) -> None:
        """Dump as rows (r, polar, azimuth, tau_retarded, u)."""
        theta = np.arccos(np.clip(self.sphere.mu, -1.0, 1.0))
        full = self.values_general()
        with open(path, "w", newline="") as fh:
            fh.write("r,polar,azimuth,tau_retarded,u\n")
            for i, r in enumerate(self.rho):
                for p, th in enumerate(theta):
                    for q, ph in enumerate(self.sphere.azimuth):
                        for j, x in enumerate(self.xi):
                            fh.write(f"{r:.17g},{th:.17g},{ph:.17g},{x:.17g},{full[i, p, q, j]:.17g}\n")


def tier_zeros(tier: str, grid: GridSpec) -> np.ndarray:
    n_r, n_x = grid.n_shells + 1, grid.n_xi_steps + 1
    if tier == SPHERICAL:
        return np.zeros((n_r, n_x))
    if tier == AXISYMMETRIC:
        return np.zeros((n_r, grid.n_polar, n_x))
    return np.zeros((n_r, grid.n_polar, grid.n_azimuth, n_x))


def spatial_tier_shape(tier: str, grid: GridSpec) -> tuple:
    if tier == SPHERICAL:
        return (grid.n_shells + 1,)
    if tier == AXISYMMETRIC:
        return (grid.n_shells + 1, grid.n_polar)
    return (grid.n_shells + 1, grid.n_polar, grid.n_azimuth)


def spatial_points(tier: str, grid: GridSpec, sphere: SphereGrid) -> np.ndarray:
    """Canonical-frame coordinates of all spatial grid points, tier-shaped (..., 3)."""
    rho = grid.rho_axis()
    if tier == SPHERICAL:
        pts = np.zeros((len(rho), 3))
        pts[:, 2] = rho
        return pts
    mu = sphere.mu
    sin_t = np.sqrt(1.0 - mu**2)
    if tier == AXISYMMETRIC:
        dirs = np.stack([sin_t, np.zeros_like(mu), mu], axis=-1)
        return rho[:, None, None] * dirs[None, :, :]
    dirs = sphere.nodes.reshape(sphere.n_polar, sphere.n_azimuth, 3)
    return rho[:, None, None, None] * dirs[None, :, :, :]


class SpatialField:
    """Purely spatial shell data with the same tier conventions as fields."""

    def __init__(self, apex, frame, rho: np.ndarray, sphere: SphereGrid,
                 values: np.ndarray, tier: str):
        self.apex = np.asarray(apex, dtype=float)
        self.frame = np.asarray(frame, dtype=float)
        self.rho = np.asarray(rho, dtype=float)
        self.sphere = sphere
        self.values = np.asarray(values, dtype=float)
        self.tier = tier
        self._mu_ext = None
        self._vals_ext = None

    def _ensure_polar_table(self):
        if self._vals_ext is not None or self.tier == SPHERICAL:
            return
        from . import sphharm
        n_p = self.sphere.n_polar
        n_u = 2 * n_p + 1
        if self.tier == AXISYMMETRIC:
            tab = sphharm.resample_polar_axisym(self.values, n_p, n_u, axis=1)
            pre = tab[:, 1:2, ...]
            post = tab[:, -2:-1, ...]
        else:
            tab = sphharm.resample_polar_general(self.values, n_p,
                                                 self.sphere.n_azimuth, n_u,
                                                 polar_axis=1, az_axis=2)
            half = self.sphere.n_azimuth // 2
            pre = np.roll(tab[:, 1:2, ...], half, axis=2)
            post = np.roll(tab[:, -2:-1, ...], half, axis=2)
        self._vals_ext = np.concatenate([pre, tab, post], axis=1)
        self._mu_ext = math.pi / (n_u - 1)

    def evaluate_canonical(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 3)
        rho = np.linalg.norm(flat, axis=1)
        n_r = len(self.rho)
        d_rho = self.rho[1] - self.rho[0]
        rho_c = np.clip(rho, 0.0, self.rho[-1])
        jr, wr = cubic_lagrange_weights(rho_c / d_rho, n_r)
        if self.tier == SPHERICAL:
            v = self.values
            out = np.zeros_like(rho_c)
            for i in range(4):
                out += wr[:, i] * v[jr + i]
            return out.reshape(pts.shape[:-1])
        self._ensure_polar_table()
        v = self._vals_ext
        with np.errstate(invalid="ignore"):
            mu = np.where(rho_c > 1e-14, flat[:, 2] / np.maximum(rho_c, 1e-300), 0.0)
        theta = np.arccos(np.clip(mu, -1.0, 1.0))
        jp, wp = cubic_lagrange_weights(theta / self._mu_ext + 1.0, v.shape[1])
        if self.tier == AXISYMMETRIC:
            out = np.zeros_like(rho_c)
            for i in range(4):
                plane = np.zeros_like(rho_c)
                for p in range(4):
                    plane += wp[:, p] * v[jr + i, jp + p]
                out += wr[:, i] * plane
            return out.reshape(pts.shape[:-1])
        n_az = self.sphere.n_azimuth
        phi = np.arctan2(flat[:, 1], flat[:, 0]) % (2.0 * math.pi)
        fa_full = phi / self.sphere.az_weight
        ia = fa_full.astype(int) % n_az
        fa = fa_full - np.floor(fa_full)
        ia1 = (ia + 1) % n_az
        out = np.zeros_like(rho_c)
        for ja, wa in ((ia, 1 - fa), (ia1, fa)):
            for i in range(4):
                plane = np.zeros_like(rho_c)
                for p in range(4):
                    plane += wp[:, p] * v[jr + i, jp + p, ja]
                out += wa * wr[:, i] * plane
        return out.reshape(pts.shape[:-1])

    def evaluate(self, pts_world: np.ndarray) -> np.ndarray:
        pts = (np.asarray(pts_world, dtype=float) - self.apex) @ self.frame
        return self.evaluate_canonical(pts)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


_TIER_RANK = {SPHERICAL: 0, AXISYMMETRIC: 1, GENERAL: 2}


def resolve_tier(q: Potential, g: ConeTrace) -> tuple[str, np.ndarray]:
    """Storage tier and canonical frame for a solve anchored at g.apex.

    The tier is the weaker of the potential symmetry (seen from the apex)
    and the declared cone-data symmetry; axisymmetric frames align the
    canonical third axis with the apex-to-origin direction.
    """
    apex = g.apex
    apex_norm = np.linalg.norm(apex)
    if q.is_constant:
        q_tier, q_axis = SPHERICAL, None
    elif q.symmetry == "radial":
        if apex_norm < 1e-12:
            q_tier, q_axis = SPHERICAL, None
        else:
            q_tier, q_axis = AXISYMMETRIC, -apex / apex_norm
    else:
        q_tier, q_axis = GENERAL, None

    g_tier, g_axis = g.symmetry, g.axis
    tier = max(q_tier, g_tier, key=lambda t: _TIER_RANK[t])
    axis = None
    if tier == AXISYMMETRIC:
        axes = [ax for ax in (q_axis, g_axis) if ax is not None]
        if not axes:
            axis = np.array([0.0, 0.0, 1.0])
        else:
            axis = axes[0]
            for other in axes[1:]:
                if abs(abs(other @ axis) - 1.0) > 1e-10:
                    tier = GENERAL
                    axis = None
                    break
    frame = rotation_to_axis(axis) if (tier == AXISYMMETRIC and axis is not None) else np.eye(3)
    return tier, frame


def json_dumps_deterministic(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      allow_nan=False, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")
