"""Point-source solutions and synthetic backscattering data.

A source firing at t = 0 from a point ``a`` on the unit sphere produces
the free spherical front plus a regular part behind it:

    U^a(x,t) = delta(t - |x-a|) / (4 pi |x-a|) + H(t - |x-a|) r^a(x,t).

The singular front is kept symbolic (it never reaches the sampled data,
which live strictly inside the cone); the regular part solves the cone
problem with trace

    g(x) = (1/8pi) int_0^1 q(a + s(x-a)) ds,

the line average of the potential along the chord from the source. On
the cone the regular part also satisfies the transport identity
(|x-a| d_t + 1 + (x-a).grad) r^a = q/8pi, monitored as a diagnostic.

Backscattering data are the samples (a, tau) -> U^a(a, 2tau) together
with the derivative channel d/dtau (tau * value); the measurement
distance between two data sets is the sup over tau of the spherical L2
norm of the derivative-channel difference over source points.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .fieldcore import (AXISYMMETRIC, GENERAL, SPHERICAL, ConeTrace, GridSpec,
                        Potential, SphereGrid, gauss_legendre_01,
                        json_dumps_deterministic)
from .goursat import GoursatSolution, goursat_solve, _cone_generator_derivative, _sample_directions
from .gridops import fd1_uniform

logger = logging.getLogger(__name__)

EIGHT_PI = 8.0 * math.pi

_S64 = gauss_legendre_01(64)
_S32 = gauss_legendre_01(32)
_S128 = gauss_legendre_01(128)


def cone_data_from_potential(q: Potential, a) -> ConeTrace:
    """Cone trace of the regular part: chord averages of the potential."""
    a = np.asarray(a, dtype=float)
    if abs(np.linalg.norm(a) - 1.0) > 1e-9:
        raise ValueError("source point must lie on the unit sphere")

    def evaluator(pts, nodes_weights=_S64):
        pts = np.asarray(pts, dtype=float)
        s, w = nodes_weights
        seg = a[None, None, :] + s[:, None, None] * (pts.reshape(-1, 3) - a)[None, :, :]
        vals = q(seg.reshape(-1, 3)).reshape(len(s), -1)
        out = (w @ vals) / EIGHT_PI
        return out.reshape(pts.shape[:-1])

    if q.is_constant:
        symmetry, axis = SPHERICAL, None
    elif q.symmetry == "radial":
        symmetry, axis = AXISYMMETRIC, -a
    else:
        symmetry, axis = GENERAL, None
    budget = None
    if q.is_constant:
        budget = abs(q.constant_value) / EIGHT_PI
    return ConeTrace(a, evaluator, symmetry=symmetry, axis=axis, norm_budget=budget)


@dataclass
class PointSourceSolution:
    """Regular part of a point-source solution plus the symbolic front."""

    apex: np.ndarray
    potential: Potential
    trace: ConeTrace
    solution: GoursatSolution
    transport_residual: float

    @property
    def regular(self):
        return self.solution.u

    def regular_at(self, pts_world, times):
        return self.solution.u.evaluate(pts_world, times)

    def data_values(self, taus) -> np.ndarray:
        """U^a(a, 2 tau): the regular part only, valid for tau > 0."""
        return self.solution.value_at_apex(2.0 * np.asarray(taus, dtype=float))


def transport_identity_residual(sol: GoursatSolution, q: Potential) -> float:
    """Max |(rho d_t + 1 + (x-a).grad) r - q/8pi| over interior cone samples."""
    idx, gen = _cone_generator_derivative(sol)
    rho = sol.grid.rho_axis()[idx]
    dirs = _sample_directions(sol)
    if sol.tier == SPHERICAL:
        pts = sol.apex[None, :] + rho[:, None] * dirs[None, :]
        qv = q(pts)
    else:
        pts = sol.apex + rho[(slice(None),) + (None,) * dirs.ndim] * dirs[None, ...]
        qv = q(pts.reshape(-1, 3)).reshape(pts.shape[:-1])
    u0 = sol.u.values[idx, ..., 0]
    shape = (len(rho),) + (1,) * (u0.ndim - 1)
    resid = rho.reshape(shape) * gen + u0 - qv / EIGHT_PI
    return float(np.max(np.abs(resid)))


def solve_point_source(q: Potential, a, m: int | None = None, M: int | None = None,
                       grid: GridSpec | None = None, reach: float | None = None,
                       tail_tol: float = 1e-6) -> PointSourceSolution:
    """Regular part r^a by a cone solve anchored at the source point."""
    if q.support_radius is None and not q.is_zero:
        raise ValueError("point-source solves need a compactly supported potential")
    g = cone_data_from_potential(q, a)
    sol = goursat_solve(q, g, m=m, M=M, grid=grid, reach=reach, tail_tol=tail_tol)
    resid = transport_identity_residual(sol, q)
    logger.info("point source at %s: transport identity residual %.3e", a, resid)
    return PointSourceSolution(np.asarray(a, dtype=float), q, g, sol, resid)


# ---------------------------------------------------------------------------
# Backscattering data
# ---------------------------------------------------------------------------
@dataclass
class BackscatterData:
    """Samples of (a, tau) -> U^a(a, 2 tau) with the derivative channel."""

    source_grid: SphereGrid
    taus: np.ndarray
    values: np.ndarray               # (n_sources, n_tau)
    dchannel: np.ndarray             # d/dtau (tau * value), same shape
    meta: dict = field(default_factory=dict)

    def matches(self, other: "BackscatterData") -> bool:
        return (self.source_grid.shape == other.source_grid.shape
                and len(self.taus) == len(other.taus)
                and np.allclose(self.taus, other.taus, atol=1e-12))

    def to_csv(self, path: str | Path, sidecar: bool = True) -> None:
        path = Path(path)
        theta = np.arccos(np.clip(self.source_grid.mu, -1.0, 1.0))
        with open(path, "w", newline="") as fh:
            fh.write("a_polar,a_azimuth,tau,value,dtau_tau_value\n")
            for i in range(self.source_grid.n_nodes):
                ip, ia = divmod(i, self.source_grid.n_azimuth)
                for j, tau in enumerate(self.taus):
                    fh.write(f"{theta[ip]:.17g},{self.source_grid.azimuth[ia]:.17g},"
                             f"{tau:.17g},{self.values[i, j]:.17g},{self.dchannel[i, j]:.17g}\n")
        if sidecar:
            side = {
                "n_polar": self.source_grid.n_polar,
                "n_azimuth": self.source_grid.n_azimuth,
                "taus": self.taus.tolist(),
                "meta": self.meta,
            }
            path.with_suffix(path.suffix + ".json").write_text(json_dumps_deterministic(side))

    @staticmethod
    def from_csv(path: str | Path) -> "BackscatterData":
        path = Path(path)
        side_path = path.with_suffix(path.suffix + ".json")
        if not side_path.exists():
            raise ValueError(f"missing sidecar {side_path}")
        side = json.loads(side_path.read_text())
        grid = SphereGrid(side["n_polar"], side["n_azimuth"])
        taus = np.asarray(side["taus"], dtype=float)
        n_src, n_tau = grid.n_nodes, len(taus)
        values = np.zeros((n_src, n_tau))
        dchannel = np.zeros((n_src, n_tau))
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["a_polar", "a_azimuth", "tau", "value", "dtau_tau_value"]:
                raise ValueError("unexpected data CSV header")
            count = 0
            for row in reader:
                if len(row) != 5:
                    raise ValueError("malformed data CSV row")
                i, j = divmod(count, n_tau)
                if i >= n_src:
                    raise ValueError("data CSV has extra rows")
                values[i, j] = float(row[3])
                dchannel[i, j] = float(row[4])
                count += 1
        if count != n_src * n_tau:
            raise ValueError("data CSV is truncated")
        return BackscatterData(grid, taus, values, dchannel, side.get("meta", {}))


def derivative_channel(taus: np.ndarray, values: np.ndarray) -> np.ndarray:
    """4th-order d/dtau (tau * value) on the uniform tau grid."""
    h = taus[1] - taus[0]
    return fd1_uniform(taus[None, :] * values, h, axis=-1)


def uniform_taus(n_tau: int) -> np.ndarray:
    """Midpoint tau grid strictly inside (0, 1)."""
    return (np.arange(n_tau) + 0.5) / n_tau


def sample_backscatter(q: Potential, sources: SphereGrid, taus: np.ndarray,
                       m: int | None = None, M: int | None = None,
                       grid: GridSpec | None = None, threads: int = 1,
                       tail_tol: float = 1e-6) -> BackscatterData:
    """Backscattering samples for every source node.

    Radial potentials use a single solve (rotational symmetry); general
    ones solve per source node, optionally across a thread pool, with
    results assembled in node order.
    """
    taus = np.asarray(taus, dtype=float)
    if np.any(taus <= 0.0) or np.any(taus >= 1.0):
        raise ValueError("tau samples must lie strictly inside (0, 1)")
    grid = grid or GridSpec()
    reach = min(grid.r_max, float(taus.max()) + 2.0 * grid.d_xi)
    meta = {"m": m, "M": M, "grid": {"n_shells": grid.n_shells, "r_max": grid.r_max,
                                     "n_polar": grid.n_polar, "n_azimuth": grid.n_azimuth,
                                     "n_xi_steps": grid.n_xi_steps, "xi_max": grid.xi_max},
            "radial": q.symmetry == "radial" or q.is_zero}
    n_src = sources.n_nodes
    values = np.zeros((n_src, len(taus)))
    if meta["radial"]:
        ps = solve_point_source(q, np.array([0.0, 0.0, 1.0]), m=m, M=M,
                                grid=grid, reach=reach, tail_tol=tail_tol)
        row = ps.data_values(taus)
        values[:] = row[None, :]
        meta["transport_residual"] = ps.transport_residual
    else:
        def solve_one(i):
            ps = solve_point_source(q, sources.nodes[i], m=m, M=M,
                                    grid=grid, reach=reach, tail_tol=tail_tol)
            return i, ps.data_values(taus), ps.transport_residual

        resids = np.zeros(n_src)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for i, row, res in pool.map(solve_one, range(n_src)):
                    values[i] = row
                    resids[i] = res
        else:
            for i in range(n_src):
                _, row, res = solve_one(i)
                values[i] = row
                resids[i] = res
        meta["transport_residual"] = float(resids.max())
    dch = derivative_channel(taus, values)
    return BackscatterData(sources, taus, values, dch, meta)


def measurement_norm(d1: BackscatterData, d2: BackscatterData) -> float:
    """sup over tau of the spherical L2 norm of the derivative-channel gap."""
    if not d1.matches(d2):
        raise ValueError("backscatter grids do not match")
    diff = d1.dchannel - d2.dchannel
    per_tau = d1.source_grid.integrate(diff.T**2)
    return float(np.sqrt(np.max(per_tau)))
