"""Integral-inequality utilities and the empirical stability harness.

Closed-form pieces: the explicit singular-kernel Gronwall bound
(1 + 2C sqrt(b-a)) sup d * exp(4 C^2 tau), the two-branch exponential
optimization for turning shell estimates into full-domain ones, and the
double-sphere coordinate-change identities used to aggregate source
points. The harness runs forward data generation, noise injection at a
prescribed measurement-norm level, reconstruction, and least-squares
fits of the shell-error envelopes (exp(c/r^4) generally, a power law in
the radial case).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

from .fieldcore import (GridSpec, Potential, SphereGrid, gauss_legendre_01,
                        json_dumps_deterministic, sphere_integral)
from .inverse import InverseConfig, layer_strip_reconstruct
from .pointsource import (BackscatterData, measurement_norm, sample_backscatter,
                          uniform_taus)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Closed-form utilities
# ---------------------------------------------------------------------------
def gronwall_bound(d_sup: float, C: float, a: float, b: float, tau: float) -> float:
    """Explicit bound for phi <= d + int C/sqrt(tau-s) phi ds on (a, b)."""
    if b <= a:
        raise ValueError("need b > a")
    if C < 0.0:
        raise ValueError("need C >= 0")
    return (1.0 + 2.0 * C * math.sqrt(b - a)) * d_sup * math.exp(4.0 * C**2 * tau)


def singular_convolution(phi_vals: np.ndarray, taus: np.ndarray, tau: float,
                         C: float, n_quad: int = 64) -> float:
    """C * int_a^tau phi(s)/sqrt(tau - s) ds, desingularized by u = sqrt(tau-s)."""
    a = taus[0]
    if tau <= a:
        return 0.0
    u, w = gauss_legendre_01(n_quad)
    umax = math.sqrt(tau - a)
    uu = umax * u
    s = tau - uu**2
    phi = np.interp(s, taus, phi_vals)
    return float(C * 2.0 * umax * np.sum(w * phi))


def inner_kernel_integral(s_prime: float, tau: float, n_quad: int = 256) -> float:
    """int_{s'}^{tau} ds / (sqrt(tau-s) sqrt(s-s')), exactly pi.

    Evaluated by splitting at the midpoint and desingularizing each half
    with a square-root substitution.
    """
    if tau <= s_prime:
        raise ValueError("need tau > s'")
    half = 0.5 * (tau - s_prime)
    u, w = gauss_legendre_01(n_quad)
    # left half: s = s' + u^2, u in (0, sqrt(half))
    ul = math.sqrt(half) * u
    left = 2.0 * math.sqrt(half) * np.sum(w / np.sqrt(tau - s_prime - ul**2))
    # right half mirrors it
    return float(2.0 * left)


def gronwall_verify(phi_vals, d_vals, C: float, taus=None,
                    rng: np.random.Generator | None = None) -> dict:
    """Check the explicit bound against sampled data.

    Returns a report with: whether the integral inequality holds at the
    samples, whether the bound then holds, the worst slack, and the inner
    double-kernel integral at random (s', tau) pairs (exact value pi,
    below the coarse estimate 4 used by the proof mechanism).
    """
    phi_vals = np.asarray(phi_vals, dtype=float)
    d_vals = np.asarray(d_vals, dtype=float)
    if taus is None:
        taus = np.linspace(0.0, 1.0, len(phi_vals))
    taus = np.asarray(taus, dtype=float)
    a, b = float(taus[0]), float(taus[-1])
    d_sup = float(np.max(d_vals))
    inequality_ok = True
    bound_ok = True
    slack = math.inf
    for i, tau in enumerate(taus):
        integral = singular_convolution(phi_vals, taus, tau, C)
        if phi_vals[i] > d_vals[i] + integral + 1e-9 * (1.0 + abs(d_vals[i])):
            inequality_ok = False
            continue
        bound = gronwall_bound(d_sup, C, a, b, tau)
        if phi_vals[i] > bound * (1.0 + 1e-12):
            bound_ok = False
        slack = min(slack, bound - phi_vals[i])
    rng = rng or np.random.default_rng(0)
    kernel_vals = []
    for _ in range(8):
        s_prime = rng.uniform(a, b - 1e-6)
        tau = rng.uniform(s_prime + 1e-6, b)
        kernel_vals.append(inner_kernel_integral(s_prime, tau))
    kernel_vals = np.asarray(kernel_vals)
    return {
        "inequality_ok": inequality_ok,
        "bound_ok": bound_ok and inequality_ok,
        "slack": slack,
        "kernel_integrals": kernel_vals,
        "kernel_max": float(kernel_vals.max()),
    }


def optimise_exponential(A: float, c: float, lam: float) -> tuple[float, float]:
    """Minimize A*l + lam*exp(c/l^4) over l; returns (bound, l0).

    Small-data branch (lam < 1/e): l0^4 = c / ln(1/sqrt(lam)) and
    bound = (A (2c)^{1/4} + 2) / ln(1/lam)^{1/4}; otherwise the linear
    branch l0^4 = c, bound = (A c^{1/4} + 1) e lam.
    """
    if c <= 0.0 or lam <= 0.0 or A < 0.0:
        raise ValueError("need A >= 0, c > 0, lam > 0")
    if lam < math.exp(-1.0):
        l0 = (c / math.log(1.0 / math.sqrt(lam))) ** 0.25
        bound = (A * (2.0 * c) ** 0.25 + 2.0) / math.log(1.0 / lam) ** 0.25
        return bound, l0
    l0 = c**0.25
    return (A * c**0.25 + 1.0) * math.e * lam, l0


# ---------------------------------------------------------------------------
# Coordinate-change identities
# ---------------------------------------------------------------------------
def coords_identity_check(f, tau: float, sphere_outer: SphereGrid | None = None,
                          sphere_inner: SphereGrid | None = None,
                          n_radial: int = 48) -> tuple[float, float, float, float]:
    """Both sides of the two double-integral identities over source spheres.

    lhs1 = int_{|a|=1} int_{|x-a|=tau} f dS dS(a),
    rhs1 = 2 pi tau int_{|x|>=1-tau} f/|x| dx,
    lhs2 = int_{|a|=1} int_{|x-a|<=tau} f dx dS(a),
    rhs2 = pi int_{|x|>=1-tau} f/|x| (tau^2 - (1-|x|)^2) dx,
    for f supported in the unit ball and 0 < tau < 1.
    """
    if not (0.0 < tau < 1.0):
        raise ValueError("tau must lie in (0, 1)")
    sphere_outer = sphere_outer or SphereGrid(24, 24)
    sphere_inner = sphere_inner or SphereGrid(24, 24)
    u, w = leggauss(n_radial)

    lhs1 = 0.0
    lhs2 = 0.0
    for node, wa in zip(sphere_outer.nodes, sphere_outer.weights):
        lhs1 += wa * sphere_integral(f, node, tau, sphere_inner)
        radii = 0.5 * tau * (u + 1.0)
        w_r = 0.5 * tau * w
        ball = 0.0
        for r, wr in zip(radii, w_r):
            pts = node[None, :] + r * sphere_inner.nodes
            ball += wr * r**2 * sphere_inner.integrate(np.asarray(f(pts)))
        lhs2 += wa * ball

    radii = 1.0 - tau + 0.5 * tau * (u + 1.0)
    w_r = 0.5 * tau * w
    rhs1 = 0.0
    rhs2 = 0.0
    for r, wr in zip(radii, w_r):
        pts = r * sphere_inner.nodes
        shell = sphere_inner.integrate(np.asarray(f(pts)))
        rhs1 += wr * r * shell                                # r^2 / r
        rhs2 += wr * r * shell * (tau**2 - (1.0 - r) ** 2)
    rhs1 *= 2.0 * math.pi * tau
    rhs2 *= math.pi
    return float(lhs1), float(rhs1), float(lhs2), float(rhs2)


def spherical_cap_height(tau: float, rho: float) -> float:
    """Height of the cap cut from the unit source sphere by |x-a| <= tau."""
    return (tau**2 - (1.0 - rho) ** 2) / (2.0 * rho)


# ---------------------------------------------------------------------------
# Stability harness
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class StabilityConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    n_sources_polar: int = 8
    n_sources_azimuth: int = 16
    n_tau: int = 64
    inverse: InverseConfig = field(default_factory=InverseConfig)
    seed: int = 0
    amplification_limit: Optional[float] = None


@dataclass
class StabilityReport:
    lam: float
    shell_radii: np.ndarray
    shell_errors: np.ndarray
    flagged: np.ndarray
    fit_kind: str                      # "exp_inverse_r4" | "holder" | "degenerate"
    fit_param: float
    fit_residual: float
    envelope_constant: float           # max over shells of r^4 ln(err / lam)
    envelope_ok: bool
    full_domain_error: float
    log_bound_coefficient: float       # err * ln(1/lam)^{1/4} when lam < 1/e
    degenerate: bool

    def to_dict(self) -> dict:
        fit = {"residual": self.fit_residual}
        if self.fit_kind == "holder":
            fit["alpha_hat"] = self.fit_param
        else:
            fit["c_hat"] = self.fit_param
        fit["kind"] = self.fit_kind
        return {
            "lambda": self.lam,
            "shell_errors": [
                {"r": float(r), "err": float(e), "flagged": bool(fl)}
                for r, e, fl in zip(self.shell_radii, self.shell_errors, self.flagged)
            ],
            "fit": fit,
            "full_domain": {
                "err": self.full_domain_error,
                "log_bound_check": self.log_bound_coefficient,
                "envelope_constant": self.envelope_constant,
                "envelope_ok": self.envelope_ok,
            },
            "degenerate": self.degenerate,
        }

    def to_json(self) -> str:
        return json_dumps_deterministic(self.to_dict())


def make_noise(rng: np.random.Generator, data: BackscatterData, delta: float) -> BackscatterData:
    """Copy of the data with a smooth perturbation of the derivative channel,
    scaled so the measurement norm of the perturbation equals delta."""
    if delta == 0.0:
        return BackscatterData(data.source_grid, data.taus, data.values.copy(),
                               data.dchannel.copy(), dict(data.meta))
    t = 2.0 * data.taus - 1.0
    cheb = np.stack([np.ones_like(t), t, 2 * t**2 - 1, 4 * t**3 - 3 * t, 8 * t**4 - 8 * t**2 + 1])
    nodes = data.source_grid.nodes
    basis_a = np.stack([np.ones(len(nodes)), nodes[:, 0], nodes[:, 1], nodes[:, 2]])
    coeffs = rng.standard_normal((basis_a.shape[0], cheb.shape[0]))
    noise = basis_a.T @ coeffs @ cheb
    clean = BackscatterData(data.source_grid, data.taus, data.values,
                            np.zeros_like(data.dchannel), {})
    probe = BackscatterData(data.source_grid, data.taus, data.values, noise, {})
    scale = measurement_norm(probe, clean)
    noise *= delta / scale
    return BackscatterData(data.source_grid, data.taus, data.values.copy(),
                           data.dchannel + noise, dict(data.meta))


def shell_l2_errors(recon, q_true: Potential, sphere: SphereGrid | None = None) -> np.ndarray:
    """L2 norm of q_hat - q_true on each reconstructed sphere |x| = r.

    Radial reconstructions compare the scalar shell value against the
    true profile on any sphere; directional ones compare node-wise on
    the source grid that carries the reconstruction.
    """
    if not recon.radial:
        sphere = recon.source_grid
    else:
        sphere = sphere or SphereGrid(16, 32)
    errs = np.zeros(len(recon.radii))
    for j, r in enumerate(recon.radii):
        pts = r * sphere.nodes
        diff = recon.values[j] - q_true(pts)
        errs[j] = math.sqrt(max(0.0, r**2 * sphere.integrate(np.asarray(diff) ** 2)))
    return errs


def stability_experiment(q_true: Potential, noise: float,
                         config: StabilityConfig | None = None) -> StabilityReport:
    """Forward data, noise at measurement scale, reconstruction, envelope fits."""
    cfg = config or StabilityConfig()
    rng = np.random.default_rng(cfg.seed)
    sources = SphereGrid(cfg.n_sources_polar, cfg.n_sources_azimuth)
    taus = uniform_taus(cfg.n_tau)
    data = sample_backscatter(q_true, sources, taus, m=cfg.inverse.m,
                              M=cfg.inverse.M, grid=cfg.grid)
    noisy = make_noise(rng, data, noise)
    lam = measurement_norm(noisy, data)

    inv_cfg = cfg.inverse
    if cfg.amplification_limit is not None or noise > 0.0:
        inv_cfg = InverseConfig(
            **{**inv_cfg.__dict__,
               "noise_floor": noise / math.sqrt(4.0 * math.pi),
               "amplification_limit": cfg.amplification_limit})
    recon = layer_strip_reconstruct(noisy, config=inv_cfg)
    errs = shell_l2_errors(recon, q_true)
    radii = recon.radii
    flagged = recon.flagged

    keep = (~flagged) & (errs > 0.0)
    degenerate = lam <= 0.0 or keep.sum() < 3
    radial = recon.radial

    if degenerate:
        fit_kind, fit_param, fit_res = "degenerate", 0.0, 0.0
        env_c, env_ok = 0.0, True
        log_bound = 0.0
    else:
        logs = np.log(errs[keep])
        if radial:
            fit_kind = "holder"
            x = np.log(radii[keep])
        else:
            fit_kind = "exp_inverse_r4"
            x = 1.0 / radii[keep] ** 4
        A = np.stack([x, np.ones_like(x)], axis=1)
        sol_fit, res_, *_ = np.linalg.lstsq(A, logs, rcond=None)
        fit_param = float(sol_fit[0])
        fit_res = float(np.sqrt(np.mean((A @ sol_fit - logs) ** 2)))
        env_c = float(np.max(radii[keep] ** 4 * np.log(errs[keep] / lam)))
        env_ok = bool(np.all(errs[keep] <= np.exp(max(env_c, 0.0) / radii[keep] ** 4) * lam * (1 + 1e-9)))
        log_bound = 0.0

    trapz = getattr(np, "trapezoid", np.trapz)
    order = np.argsort(radii)
    full_err = math.sqrt(max(0.0, trapz(errs[order] ** 2, radii[order])))
    if not degenerate and lam < math.exp(-1.0):
        log_bound = full_err * math.log(1.0 / lam) ** 0.25
    elif not degenerate:
        log_bound = full_err / lam

    return StabilityReport(lam, radii, errs, flagged, fit_kind, fit_param, fit_res,
                           env_c if not degenerate else 0.0, env_ok, full_err,
                           log_bound, degenerate)
