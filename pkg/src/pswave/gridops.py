"""Finite-difference operators on shell-aligned grids.

Radial stencils run along axis 0 (the shell axis, apex at index 0). The
left boundary is closed by the antipodal extension f(-rho, omega) =
f(rho, -omega), which is exact on the product sphere grid; the right
boundary uses one-sided stencils of matching order. Angular Laplacians
come from the spherical-harmonic transforms.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import sphharm
from .fieldcore import AXISYMMETRIC, GENERAL, SPHERICAL, SphereGrid


def fd_weights(offsets, deriv: int) -> np.ndarray:
    """Finite-difference weights for d^deriv/dx^deriv at 0 on integer offsets."""
    offsets = np.asarray(offsets, dtype=float)
    n = len(offsets)
    V = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[deriv] = math.factorial(deriv)
    return np.linalg.solve(V, rhs)


@lru_cache(maxsize=16)
def _stencils(deriv: int):
    core = fd_weights(range(-2, 3), deriv)
    if deriv == 1:
        edge1 = fd_weights(range(-3, 2), deriv)   # second-to-last row
        edge0 = fd_weights(range(-4, 1), deriv)   # last row
    else:
        edge1 = fd_weights(range(-4, 2), deriv)
        edge0 = fd_weights(range(-5, 1), deriv)
    return core, edge1, edge0


def antipode_rows(row: np.ndarray, tier: str) -> np.ndarray:
    """Value of a shell row at the antipodal directions.

    Row layout: () or trailing axes for spherical, (polar, ...) for
    axisymmetric, (polar, azimuth, ...) for general.
    """
    if tier == SPHERICAL:
        return row
    if tier == AXISYMMETRIC:
        return row[::-1, ...]
    n_az = row.shape[1]
    return np.roll(row[::-1, ...], n_az // 2, axis=1)


def diff_shells(values: np.ndarray, h: float, deriv: int, tier: str) -> np.ndarray:
    """4th-order radial derivative along axis 0 with antipodal apex closure."""
    core, edge1, edge0 = _stencils(deriv)
    n = values.shape[0]
    if n < 7:
        raise ValueError("need at least 7 shells for the radial stencils")
    ghost = np.stack([antipode_rows(values[2], tier), antipode_rows(values[1], tier)])
    ext = np.concatenate([ghost, values], axis=0)
    out = np.empty_like(values)
    m = n - 2
    acc = core[0] * ext[0:m]
    for k in range(1, 5):
        acc = acc + core[k] * ext[k:k + m]
    out[:m] = acc
    k1, k0 = len(edge1), len(edge0)
    out[n - 2] = np.tensordot(edge1, values[n - k1:n], axes=(0, 0))
    out[n - 1] = np.tensordot(edge0, values[n - k0:n], axes=(0, 0))
    return out / h**deriv


def shell_mean(row: np.ndarray, tier: str, sphere: SphereGrid) -> np.ndarray:
    """Average of a shell row over the sphere."""
    if tier == SPHERICAL:
        return row
    if tier == AXISYMMETRIC:
        return np.tensordot(sphere.polar_weights, row, axes=(0, 0)) / 2.0
    w = sphere.weights.reshape(sphere.shape)
    return np.tensordot(w, row, axes=([0, 1], [0, 1])) / (4.0 * math.pi)


def grid_laplacian(values: np.ndarray, tier: str, rho: np.ndarray,
                   sphere: SphereGrid) -> np.ndarray:
    """Full 3D Laplacian of spatial shell data (axis 0 = shells, apex first).

    Interior shells: radial stencils plus the spherical-harmonic angular
    term; the apex value uses the spherical-mean identity
    mean(f, rho) = f(0) + rho^2 lap f(0)/6 + O(rho^4), Richardson-corrected
    with the first two shells.
    """
    h = rho[1] - rho[0]
    d1 = diff_shells(values, h, 1, tier)
    d2 = diff_shells(values, h, 2, tier)
    lap = d2
    inv_r = np.zeros_like(rho)
    inv_r[1:] = 1.0 / rho[1:]
    shape = (slice(None),) + (None,) * (values.ndim - 1)
    lap = lap + 2.0 * inv_r[shape] * d1
    if tier == AXISYMMETRIC:
        ang = sphharm.laplace_beltrami_axisym(values, sphere.n_polar)
        lap = lap + inv_r[shape] ** 2 * ang
    elif tier == GENERAL:
        ang = sphharm.laplace_beltrami_general(values, sphere.n_polar, sphere.n_azimuth)
        lap = lap + inv_r[shape] ** 2 * ang
    f0 = shell_mean(values[0], tier, sphere)
    m1 = shell_mean(values[1], tier, sphere)
    m2 = shell_mean(values[2], tier, sphere)
    d_1 = 6.0 * (m1 - f0) / rho[1] ** 2
    d_2 = 6.0 * (m2 - f0) / rho[2] ** 2
    lap[0] = np.broadcast_to((4.0 * d_1 - d_2) / 3.0, values[0].shape)
    return lap


def fd1_uniform(y: np.ndarray, h: float, axis: int = -1) -> np.ndarray:
    """4th-order first derivative on a uniform axis, one-sided closures."""
    y = np.moveaxis(np.asarray(y, dtype=float), axis, 0)
    n = y.shape[0]
    if n < 6:
        raise ValueError("need at least 6 samples")
    out = np.empty_like(y)
    c = fd_weights(range(-2, 3), 1)
    acc = c[0] * y[0:n - 4]
    for k in range(1, 5):
        acc = acc + c[k] * y[k:k + n - 4]
    out[2:n - 2] = acc
    e0 = fd_weights(range(0, 5), 1)
    e1 = fd_weights(range(-1, 4), 1)
    out[0] = np.tensordot(e0, y[0:5], axes=(0, 0))
    out[1] = np.tensordot(e1, y[0:5], axes=(0, 0))
    out[n - 2] = -np.tensordot(e1, y[n - 5:n][::-1], axes=(0, 0))
    out[n - 1] = -np.tensordot(e0, y[n - 5:n][::-1], axes=(0, 0))
    return np.moveaxis(out / h, 0, axis)
