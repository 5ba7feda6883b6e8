"""Free-space retarded potential and the Neumann-series remainder solver.

The operator

    K f(x, t) = int_R3 f(x - y, t - |y|) / (4 pi |y|) dy

inverts d_t^2 - lap with zero initial data. For sources supported in the
forward cone the integration region is the ellipsoid |y| + |x - y| <= t;
in spherical coordinates about y = 0 the 1/|y| singularity cancels
against the Jacobian, leaving per-direction line integrals

    K f(x, t) = (1/4pi) int_S2 int_0^{rmax(w)} r f(x - r w, t - r) dr dw,
    rmax(w) = (t^2 - |x|^2) / (2 (t - x.w)),

which Gauss rules handle well because smooth cone-supported sources
vanish at the upper limit. Sources of the special Lorentz-invariant form
f(y, s) = p(s^2 - |y|^2) reduce to a single radial integral, which gives
an independent cross-check of the full quadrature.

The perturbed problem (d_t^2 - lap - q) w = F is solved by w_0 = K F,
w_{m+1} = K(q w_m), each level materialized on the shell grid; level m
obeys |w_m| <= C_m M^m ||F|| (t^2-|x|^2)^{m+1} with
C_m = 1/(4^{m+1} (m+1)! (m+2)!), whose factorial decay sizes the
truncation order at run time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .fieldcore import (AXISYMMETRIC, GENERAL, SPHERICAL, GridSpec, Potential,
                        SpaceTimeField, SphereGrid, gauss_legendre_01,
                        json_dumps_deterministic, tier_zeros)
from .progressive import ResidualSource

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi


class TruncationError(RuntimeError):
    """The requested Neumann truncation cannot meet the tail tolerance."""


@dataclass(frozen=True)
class KernelEvaluation:
    """Pointwise retarded-potential value with quadrature diagnostics."""

    x: np.ndarray
    t: float
    value: float
    node_count: int
    est_error: float


# ---------------------------------------------------------------------------
# Pointwise evaluation
# ---------------------------------------------------------------------------
@lru_cache(maxsize=32)
def _direction_rule(n_polar: int, n_azimuth: int):
    grid = SphereGrid(n_polar, n_azimuth)
    return grid.nodes, grid.weights


def _k_direct_value(f, x, t, n_polar, n_azimuth, n_radial) -> float:
    x = np.asarray(x, dtype=float)
    r2 = t * t - x @ x
    if r2 <= 0.0:
        return 0.0
    dirs, wdir = _direction_rule(n_polar, n_azimuth)
    u, v = gauss_legendre_01(n_radial)
    denom = t - dirs @ x                         # >= t - |x| > 0
    rmax = r2 / (2.0 * denom)                    # (n_dir,)
    radii = rmax[:, None] * u[None, :]           # (n_dir, n_rad)
    pts = x[None, None, :] - radii[:, :, None] * dirs[:, None, :]
    s = t - radii
    vals = np.asarray(f(pts.reshape(-1, 3), s.reshape(-1)), dtype=float)
    vals = vals.reshape(len(dirs), n_radial)
    line = rmax**2 * (vals @ (v * u))
    return float((wdir @ line) / FOUR_PI)


def k_apply_direct(f, x, t: float, resolution: int = 24,
                   details: bool = False):
    """Retarded potential of a cone-supported source at one space-time point.

    ``f(points, times)`` must be vectorized and vanish for times < |points|.
    ``resolution`` sets the polar order; azimuth and radial orders scale
    with it. Returns 0 for t <= |x|.
    """
    n_polar = max(6, int(resolution))
    n_azimuth = max(8, 2 * n_polar)
    n_radial = max(6, n_polar // 2 + 4)
    val = _k_direct_value(f, x, t, n_polar, n_azimuth, n_radial)
    if not details:
        return val
    n_half = max(6, n_polar // 2)
    coarse = _k_direct_value(f, x, t, n_half, max(8, 2 * n_half), max(6, n_half // 2 + 4))
    count = n_polar * n_azimuth * n_radial
    return KernelEvaluation(np.asarray(x, float), float(t), val, count, abs(val - coarse))


def k_apply_lorentz(p, x, t: float, resolution: int = 64) -> float:
    """Retarded potential of a source f(y, s) = p(s^2 - |y|^2), cone-supported.

    Lorentz reduction to one radial integral:
    K = int_0^{R/2} p(R (R - 2 r)) r dr with R^2 = t^2 - |x|^2.
    """
    x = np.asarray(x, dtype=float)
    r2 = t * t - x @ x
    if r2 < 0.0:
        raise ValueError("k_apply_lorentz requires t >= |x|")
    if r2 == 0.0:
        return 0.0
    u, w = gauss_legendre_01(max(4, resolution))
    vals = np.asarray(p(r2 * (1.0 - u)), dtype=float)
    return float(0.25 * r2 * np.sum(w * u * vals))


# ---------------------------------------------------------------------------
# Grid engine
# ---------------------------------------------------------------------------
def _omega_rule(tier: str, kq_polar: int, kq_azimuth: int):
    """Direction quadrature for the K integrals, exploiting target symmetry."""
    mu, wmu = leggauss(kq_polar)
    sin_t = np.sqrt(1.0 - mu**2)
    if tier == SPHERICAL:
        dirs = np.stack([sin_t, np.zeros_like(mu), mu], axis=-1)
        return dirs, 2.0 * math.pi * wmu
    n_az = kq_azimuth if tier == GENERAL else max(2, kq_azimuth // 2)
    if tier == GENERAL:
        psi = 2.0 * math.pi * (np.arange(n_az) + 0.5) / n_az
        w_az = 2.0 * math.pi / n_az
    else:
        # targets sit in the phi = 0 half-plane; integrand is even in psi
        psi = math.pi * (np.arange(n_az) + 0.5) / n_az
        w_az = 2.0 * math.pi / n_az
    dirs = np.empty((kq_polar, n_az, 3))
    dirs[:, :, 0] = sin_t[:, None] * np.cos(psi)[None, :]
    dirs[:, :, 1] = sin_t[:, None] * np.sin(psi)[None, :]
    dirs[:, :, 2] = mu[:, None]
    weights = np.repeat(wmu, n_az) * w_az
    return dirs.reshape(-1, 3), weights


def _targets(tier: str, grid: GridSpec, reach: float):
    """Grid targets inside the causal-complete region rho + xi/2 <= reach."""
    rho = grid.rho_axis()
    xi = grid.xi_axis()
    ok = (rho[:, None] + 0.5 * xi[None, :] <= reach + 1e-12) & (xi[None, :] > 0.0)
    i_r, i_x = np.nonzero(ok)
    if tier == SPHERICAL:
        pts = np.zeros((len(i_r), 3))
        pts[:, 2] = rho[i_r]
        return pts, rho[i_r] + xi[i_x], (i_r, i_x)
    mu = SphereGrid(grid.n_polar, grid.n_azimuth).mu
    sin_t = np.sqrt(1.0 - mu**2)
    if tier == AXISYMMETRIC:
        n_p = grid.n_polar
        ii_r = np.repeat(i_r, n_p)
        ii_x = np.repeat(i_x, n_p)
        ii_p = np.tile(np.arange(n_p), len(i_r))
        pts = np.stack([rho[ii_r] * sin_t[ii_p], np.zeros(len(ii_r)),
                        rho[ii_r] * mu[ii_p]], axis=-1)
        return pts, rho[ii_r] + xi[ii_x], (ii_r, ii_p, ii_x)
    n_p, n_a = grid.n_polar, grid.n_azimuth
    phi = 2.0 * math.pi * np.arange(n_a) / n_a
    ii_r = np.repeat(i_r, n_p * n_a)
    ii_x = np.repeat(i_x, n_p * n_a)
    ii_p = np.tile(np.repeat(np.arange(n_p), n_a), len(i_r))
    ii_a = np.tile(np.arange(n_a), len(i_r) * n_p)
    sp = sin_t[ii_p]
    pts = np.stack([rho[ii_r] * sp * np.cos(phi[ii_a]),
                    rho[ii_r] * sp * np.sin(phi[ii_a]),
                    rho[ii_r] * mu[ii_p]], axis=-1)
    return pts, rho[ii_r] + xi[ii_x], (ii_r, ii_p, ii_a, ii_x)


def apply_k_to_grid(source_fn, grid: GridSpec, tier: str, reach: float,
                    chunk: int = 1024, orders: tuple[int, int, int] | None = None,
                    window: tuple[np.ndarray, float] | None = None,
                    mask_fn=None) -> np.ndarray:
    """Evaluate K[source] on all valid grid targets (canonical frame).

    ``source_fn(points, times)`` takes canonical coordinates. Returns the
    tier-shaped value array; entries outside the valid region stay zero.
    Targets extend a couple of cells beyond the requested reach so that
    interpolation stencils touching the valid region never see the
    uncomputed zeros outside it.

    ``window=(center, radius)`` restricts the per-direction radial
    integration to the chord meeting the ball |x' - center| <= radius
    (sources supported there, e.g. q * w levels); ``mask_fn`` marks the
    points where the source can be nonzero, letting the engine skip the
    interpolation gathers elsewhere.
    """
    out = tier_zeros(tier, grid)
    pad = 2.0 * max(grid.d_rho, grid.d_xi)
    pts_all, t_all, idx = _targets(tier, grid, min(reach + pad, grid.r_max + pad))
    kq_r, kq_p, kq_a = orders or (grid.kq_radial, grid.kq_polar, grid.kq_azimuth)
    dirs, wdir = _omega_rule(tier, kq_p, kq_a)
    u, v = gauss_legendre_01(kq_r)
    n_dir, n_rad = len(dirs), len(u)
    n_t = len(t_all)
    res = np.empty(n_t)
    for lo in range(0, n_t, chunk):
        hi = min(lo + chunk, n_t)
        x = pts_all[lo:hi]
        t = t_all[lo:hi]
        r2 = t**2 - np.sum(x * x, axis=1)
        denom = t[:, None] - x @ dirs.T
        rmax = r2[:, None] / (2.0 * np.maximum(denom, 1e-300))
        if window is None:
            r_in = np.zeros_like(rmax)
            r_out = rmax
        else:
            center, radius = window
            p = x - center[None, :]
            pw = p @ dirs.T
            disc = pw**2 - (np.sum(p * p, axis=1)[:, None] - radius**2)
            sq = np.sqrt(np.maximum(disc, 0.0))
            r_in = np.clip(pw - sq, 0.0, rmax)
            r_out = np.clip(pw + sq, 0.0, rmax)
        span = r_out - r_in
        radii = r_in[:, :, None] + span[:, :, None] * u[None, None, :]
        pts = x[:, None, None, :] - radii[..., None] * dirs[None, :, None, :]
        s = t[:, None, None] - radii
        flat_pts = pts.reshape(-1, 3)
        flat_s = s.reshape(-1)
        if mask_fn is not None:
            mk = mask_fn(flat_pts) & (np.repeat(span, n_rad).reshape(-1) > 0.0)
            vals = np.zeros(len(flat_pts))
            if mk.any():
                vals[mk] = source_fn(flat_pts[mk], flat_s[mk])
        else:
            vals = source_fn(flat_pts, flat_s)
        vals = vals.reshape(hi - lo, n_dir, n_rad)
        line = span * np.einsum("bok,k->bo", vals * radii, v)
        res[lo:hi] = line @ wdir / FOUR_PI
    out[idx] = res
    return out


@dataclass
class NeumannSolution:
    """Partial sum of the remainder series with its truncation certificate."""

    terms: list[SpaceTimeField]
    w: SpaceTimeField
    truncation_order: int
    tail_bound: float
    level_sups: list[float]
    envelope_ratios: list[float]
    envelope_ok: bool
    source_sup: float
    m_value: float                   # value-level sup of the potential

    def diagnostics(self) -> dict:
        return {
            "truncation_order": self.truncation_order,
            "tail_bound": self.tail_bound,
            "level_sup_norms": self.level_sups,
            "envelope_ratios": self.envelope_ratios,
            "envelope_ok": self.envelope_ok,
            "source_sup": self.source_sup,
        }

    def diagnostics_json(self) -> str:
        return json_dumps_deterministic(self.diagnostics())


def neumann_constant(m: int) -> float:
    """Envelope constant C_m = 1 / (4^{m+1} (m+1)! (m+2)!)."""
    return 1.0 / (4.0 ** (m + 1) * math.factorial(m + 1) * math.factorial(m + 2))


def _tail_terms(m_value: float, g_max: float, f_sup: float, up_to: int = 80):
    m_idx = np.arange(up_to)
    terms = np.array([neumann_constant(m) * m_value**m * f_sup * g_max ** (m + 1)
                      for m in m_idx])
    return terms


def neumann_solve(q: Potential, F: ResidualSource, grid: GridSpec | None = None,
                  M: int | None = None, tol: float = 1e-6,
                  tier: str | None = None, reach: float | None = None) -> NeumannSolution:
    """Solve (d_t^2 - lap - q) w = F with w = 0 before the cone.

    ``tol`` is the tail tolerance relative to the leading-level envelope;
    with ``M=None`` the truncation order is chosen from the factorial
    envelope, otherwise the requested order is certified or rejected.
    """
    grid = grid or GridSpec()
    tier = tier or F.density.tier
    reach = grid.r_max if reach is None else float(reach)
    rho = grid.rho_axis()
    xi = grid.xi_axis()
    sphere = F.density.sphere

    f_grid = F.grid_values(grid)
    gam1 = xi[None, :] * (xi[None, :] + 2.0 * rho[:, None])
    valid = rho[:, None] + 0.5 * xi[None, :] <= reach + 1e-12
    extra = f_grid.ndim - 2
    gam1_b = gam1.reshape((len(rho),) + (1,) * extra + (len(xi),))
    valid_b = np.broadcast_to(valid.reshape(gam1_b.shape[: 1] + (1,) * extra + (len(xi),)),
                              f_grid.shape)
    f_sup = float(np.max(np.abs(np.where(valid_b, f_grid, 0.0))))
    g_max = float(np.max(np.where(valid, gam1, 0.0)))
    m_value = 0.0 if q.is_zero else float(q.value_sup)

    terms_env = _tail_terms(m_value, g_max, f_sup)
    scale = max(terms_env[0], 1e-300)
    if q.is_zero or f_sup == 0.0:
        m_order = 0
        tail = 0.0
    elif M is None:
        csum = np.cumsum(terms_env[::-1])[::-1]
        ok = np.nonzero(csum[1:] <= tol * scale)[0]
        if len(ok) == 0:
            raise TruncationError("factorial envelope will not reach the tolerance")
        m_order = int(ok[0])
        tail = float(csum[m_order + 1])
    else:
        m_order = int(M)
        tail = float(np.sum(terms_env[m_order + 1:]))
        if tail > tol * scale:
            raise TruncationError(
                f"truncation insufficient: M={m_order} leaves tail {tail:.3e} "
                f"above tolerance {tol * scale:.3e}")

    apex, frame = F.apex, F.frame

    def source_level0(pts, times):
        return F.evaluate_canonical(pts, times)

    q_const = q.constant_value

    def q_canonical(pts):
        if q_const is not None:
            return np.full(pts.shape[:-1], q_const)
        return q(pts @ frame.T + apex)

    # nested levels integrate q * w, supported in the potential ball;
    # restricting the radial chords there and skipping the zero region
    # is what keeps deep truncation orders affordable
    window = None
    mask_fn = None
    if q.support_radius is not None and not q.is_zero:
        support_center = -(frame.T @ apex)
        b_rad = float(q.support_radius)
        window = (support_center, b_rad)

        def mask_fn(pts, c=support_center, b=b_rad):
            d2 = np.sum((pts - c[None, :]) ** 2, axis=1)
            return d2 <= (b + 1e-12) ** 2

    full_orders = (grid.kq_radial, grid.kq_polar, grid.kq_azimuth)
    slim_orders = (max(6, grid.kq_radial * 2 // 3),
                   max(8, grid.kq_polar * 2 // 3),
                   max(8, grid.kq_azimuth * 2 // 3))

    terms: list[SpaceTimeField] = []
    level_sups: list[float] = []
    ratios: list[float] = []
    # absolute floor for the envelope check: pointwise values below this
    # are numerically indistinguishable from zero at the scheme accuracy
    env_floor = 1e-7 * max(terms_env[0], 1e-300)
    source = source_level0
    for m in range(m_order + 1):
        slim = m > 0 and terms_env[m] < 1e-2 * scale
        vals = apply_k_to_grid(source, grid, tier, reach,
                               orders=slim_orders if slim else full_orders,
                               window=window if m > 0 else None,
                               mask_fn=mask_fn if m > 0 else None)
        fld = SpaceTimeField(apex, frame, rho, sphere, xi, vals, tier, reach_limit=reach)
        terms.append(fld)
        sup = fld.max_abs()
        level_sups.append(sup)
        env = neumann_constant(m) * m_value**m * f_sup * gam1_b ** (m + 1) + env_floor
        ratio = np.where(valid_b, np.abs(vals) / env, 0.0)
        ratios.append(float(np.max(ratio)))
        if m < m_order:
            prev = fld

            def source(pts, times, prev=prev):
                return q_canonical(pts) * prev.evaluate_canonical(pts, times)

        logger.debug("neumann level %d: sup=%.3e envelope ratio=%.3f", m, sup, ratios[-1])

    total = terms[0].values.copy()
    for fld in terms[1:]:
        total += fld.values
    w = SpaceTimeField(apex, frame, rho, sphere, xi, total, tier, reach_limit=reach)
    envelope_ok = all(r <= 1.0 + 1e-6 for r in ratios)
    return NeumannSolution(terms, w, m_order, tail, level_sups, ratios,
                           envelope_ok, f_sup, m_value)
