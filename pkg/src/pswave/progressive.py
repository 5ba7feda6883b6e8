"""Progressive-wave expansion: transport coefficients and the smooth ansatz.

The ansatz v(x,t) = sum_k a_k(x) gamma^k(x-a, t) reproduces cone data
exactly on t = |x-a| and leaves the residual (d_t^2 - lap - q) v =
-(q + lap) a_m gamma^m. Coefficients obey the ray recursion

    a_0 = g,
    a_{k+1}(x) = (1/4) int_0^1 s^{k+1} ((q + lap) a_k)(a + s(x-a)) ds,

integrated here with a fixed 32-point Gauss rule along each ray; the
Laplacian of each level comes from the shell-grid operators, so each
level consumes two radial orders of smoothness (the budget that caps m).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .fieldcore import (AXISYMMETRIC, GENERAL, SPHERICAL, ConeTrace, GridSpec,
                        Potential, SolverError, SpaceTimeField, SpatialField,
                        SphereGrid, gamma_from_retarded, gauss_legendre_01,
                        resolve_tier, spatial_points)
from .gridops import grid_laplacian

logger = logging.getLogger(__name__)

_S_NODES, _S_WEIGHTS = gauss_legendre_01(32)


@dataclass
class CoefficientSequence:
    """Expansion coefficients a_0..a_m on the spatial shell grid."""

    apex: np.ndarray
    frame: np.ndarray
    tier: str
    grid: GridSpec
    sphere: SphereGrid
    coeffs: list[np.ndarray]
    b_last: np.ndarray              # (q + lap) a_m, source density for the remainder
    m: int
    sup_norms: list[float]
    growth_bounds: list[float]
    growth_ok: bool
    g_budget: float

    @property
    def rho(self) -> np.ndarray:
        return self.grid.rho_axis()

    def coefficient_field(self, k: int) -> SpatialField:
        return SpatialField(self.apex, self.frame, self.rho, self.sphere,
                            self.coeffs[k], self.tier)

    def source_density_field(self) -> SpatialField:
        return SpatialField(self.apex, self.frame, self.rho, self.sphere,
                            self.b_last, self.tier)

    def evaluate(self, k: int, pts_world: np.ndarray) -> np.ndarray:
        return self.coefficient_field(k).evaluate(pts_world)

    def to_csv(self, path: str) -> None:
        """Debug dump with rows (x1, x2, x3, k, value)."""
        pts = spatial_points(self.tier, self.grid, self.sphere)
        world = pts.reshape(-1, 3) @ self.frame.T + self.apex
        with open(path, "w", newline="") as fh:
            fh.write("x1,x2,x3,k,value\n")
            for k, arr in enumerate(self.coeffs):
                flat = arr.reshape(-1)
                for p, val in zip(world, flat):
                    fh.write(f"{p[0]:.17g},{p[1]:.17g},{p[2]:.17g},{k},{val:.17g}\n")


def _estimate_trace_budget(a0: np.ndarray, tier: str, grid: GridSpec,
                           sphere: SphereGrid) -> float:
    """Crude C^2-style budget for cone data from its grid samples."""
    from .gridops import diff_shells
    h = grid.d_rho
    d1 = diff_shells(a0, h, 1, tier)
    lap = grid_laplacian(a0, tier, grid.rho_axis(), sphere)
    return float(np.max(np.abs(a0)) + np.max(np.abs(d1)) + np.max(np.abs(lap)))


def compute_coefficients(q: Potential, g: ConeTrace, m: int,
                         grid: GridSpec | None = None,
                         tier: str | None = None,
                         frame: np.ndarray | None = None) -> CoefficientSequence:
    """Transport coefficients up to order m on the shell grid around g.apex."""
    if m < 1:
        raise ValueError("expansion order m must be at least 1")
    n = q.smoothness_order
    if 2 * m > n + 1:
        raise SolverError(
            f"expansion order m={m} exhausts the smoothness budget of a "
            f"C^{n} potential (need 2m <= n+1)")
    grid = grid or GridSpec()
    if tier is None or frame is None:
        tier, frame = resolve_tier(q, g)
    sphere = grid.sphere()
    rho = grid.rho_axis()

    pts_c = spatial_points(tier, grid, sphere)
    world = pts_c.reshape(-1, 3) @ frame.T + g.apex
    shape = pts_c.shape[:-1]
    a0 = g(world).reshape(shape)
    qvals = q(world).reshape(shape)

    budget = g.norm_budget if g.norm_budget is not None else _estimate_trace_budget(a0, tier, grid, sphere)
    explicit_budget = g.norm_budget is not None

    coeffs = [a0]
    sups = [float(np.max(np.abs(a0)))]
    bounds = [budget]
    ok = sups[0] <= budget * (1.0 + 1e-9) + 1e-12
    growth = (1.0 + q.bound) / 4.0

    query = np.outer(_S_NODES, rho).reshape(-1)
    b_k = None
    for k in range(m):
        b_k = qvals * coeffs[k] + grid_laplacian(coeffs[k], tier, rho, sphere)
        spline = CubicSpline(rho, b_k, axis=0)
        samples = spline(query).reshape((len(_S_NODES), len(rho)) + coeffs[k].shape[1:])
        w = _S_WEIGHTS * _S_NODES ** (k + 1)
        a_next = 0.25 * np.tensordot(w, samples, axes=(0, 0))
        a_next[0] = b_k[0] / (4.0 * (k + 2.0))     # ray integral collapses at the apex
        coeffs.append(a_next)
        sups.append(float(np.max(np.abs(a_next))))
        bounds.append(growth ** (k + 1) * budget)
        level_ok = sups[-1] <= bounds[-1] * (1.0 + 1e-9) + 1e-12
        ok = ok and level_ok
        if not level_ok:
            msg = (f"coefficient level {k + 1}: sup {sups[-1]:.3e} exceeds the "
                   f"growth bound {bounds[-1]:.3e}")
            if explicit_budget and sups[-1] > 1.5 * bounds[-1]:
                raise SolverError(msg)
            logger.warning(msg)

    b_last = qvals * coeffs[m] + grid_laplacian(coeffs[m], tier, rho, sphere)
    return CoefficientSequence(g.apex, frame, tier, grid, sphere, coeffs, b_last,
                               m, sups, bounds, ok, budget)


def assemble_v(coeffs: CoefficientSequence) -> SpaceTimeField:
    """Space-time ansatz from computed coefficients; exact cone trace."""
    grid = coeffs.grid
    rho = grid.rho_axis()
    xi = grid.xi_axis()
    n_extra = coeffs.coeffs[0].ndim - 1
    values = np.zeros(coeffs.coeffs[0].shape + (len(xi),))
    for k, a_k in enumerate(coeffs.coeffs):
        gam = gamma_from_retarded(k, rho[:, None], xi[None, :])
        gam = gam.reshape((len(rho),) + (1,) * n_extra + (len(xi),))
        values += a_k[..., None] * gam
    return SpaceTimeField(coeffs.apex, coeffs.frame, rho, coeffs.sphere, xi,
                          values, coeffs.tier, reach_limit=math.inf)


@dataclass
class ResidualSource:
    """Remainder source F = (q + lap) a_m gamma^m, zero outside the cone."""

    density: SpatialField            # (q + lap) a_m
    order: int                       # m
    apex: np.ndarray
    frame: np.ndarray

    def evaluate_canonical(self, pts: np.ndarray, times: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        t = np.asarray(times, dtype=float)
        rho = np.linalg.norm(pts, axis=-1)
        xi = t - rho
        dens = self.density.evaluate_canonical(pts)
        gam = gamma_from_retarded(self.order, rho, np.maximum(xi, 0.0))
        return np.where(xi > 0.0, dens * gam, 0.0)

    def evaluate(self, pts_world: np.ndarray, times: np.ndarray) -> np.ndarray:
        pts = (np.asarray(pts_world, dtype=float) - self.apex) @ self.frame
        return self.evaluate_canonical(pts, times)

    def grid_values(self, grid: GridSpec) -> np.ndarray:
        """Source values on the field grid (tier-shaped, xi axis last)."""
        rho = grid.rho_axis()
        xi = grid.xi_axis()
        gam = gamma_from_retarded(self.order, rho[:, None], xi[None, :])
        extra = self.density.values.ndim - 1
        gam = gam.reshape((len(rho),) + (1,) * extra + (len(xi),))
        return self.density.values[..., None] * gam


def residual_source(q: Potential, coeffs: CoefficientSequence) -> ResidualSource:
    """Source for the remainder problem; the remainder solve uses it with a
    plus sign so that ansatz plus remainder satisfies the homogeneous
    equation."""
    return ResidualSource(coeffs.source_density_field(), coeffs.m,
                          coeffs.apex, coeffs.frame)
