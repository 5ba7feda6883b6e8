"""Named invariant suites for the verify subcommand.

Each suite is a callable returning (name, passed, detail) tuples; suites
are small enough to run in seconds and are meant as smoke-level guards,
not the full test suite.
"""

from __future__ import annotations

import math

import numpy as np

from . import retarded
from .fieldcore import ConeTrace, GridSpec, Potential, SphereGrid, gamma_eval
from .goursat import goursat_solve
from .inverse import spherical_mean_derivative
from .stability import (coords_identity_check, gronwall_bound,
                        inner_kernel_integral, spherical_cap_height)

Check = tuple[str, bool, str]


def _radial_test_bump() -> Potential:
    return Potential.radial_bump(2.0, 0.5, 0.3, 0.15)


def suite_gamma() -> list[Check]:
    checks: list[Check] = []
    rng = np.random.default_rng(7)
    x = rng.uniform(-1.0, 1.0, size=(16, 3))
    t = rng.uniform(0.2, 2.0, size=16)
    v0 = gamma_eval(0, x, t)
    checks.append(("order0_is_one", bool(np.allclose(v0, 1.0)), f"max dev {np.max(np.abs(v0 - 1)):.2e}"))
    neg = gamma_eval(-3, x, t)
    checks.append(("negative_order_zero", bool(np.all(neg == 0.0)), "identically zero"))
    h = 1e-5
    worst = 0.0
    for k in (1, 2, 3):
        dt = (gamma_eval(k, x, t + h) - gamma_eval(k, x, t - h)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(dt - 2 * t * gamma_eval(k - 1, x, t)))))
        grad0 = (gamma_eval(k, x + np.array([h, 0, 0]), t) - gamma_eval(k, x - np.array([h, 0, 0]), t)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(grad0 + 2 * x[:, 0] * gamma_eval(k - 1, x, t)))))
    checks.append(("derivative_recursion", worst < 1e-6, f"max residual {worst:.2e}"))
    q = _radial_test_bump()
    shell = SphereGrid(8, 16).nodes * (1.0 - q.margin_h / 2.0)
    vals = q(shell)
    checks.append(("potential_support", bool(np.all(vals == 0.0)),
                   f"max |q| on margin shell {np.max(np.abs(vals)):.2e}"))
    return checks


def suite_kernel() -> list[Check]:
    checks: list[Check] = []
    rng = np.random.default_rng(11)
    worst_eq = 0.0
    worst_closed = 0.0
    for _ in range(12):
        x = rng.uniform(-0.5, 0.5, size=3)
        t = np.linalg.norm(x) + rng.uniform(0.3, 1.2)
        r2 = t**2 - x @ x
        for k, closed in ((0, r2 / 8.0), (1, r2**2 / 24.0), (2, r2**3 / 48.0)):
            def src(pts, s, k=k):
                z = s**2 - np.sum(pts * pts, axis=-1)
                return np.where(z > 0.0, z**k, 0.0)
            direct = retarded.k_apply_direct(src, x, t, resolution=24)
            lorentz = retarded.k_apply_lorentz(lambda z, k=k: z**k, x, t)
            worst_eq = max(worst_eq, abs(direct - lorentz))
            worst_closed = max(worst_closed, abs(direct - closed), abs(lorentz - closed))
    checks.append(("lorentz_equivalence", worst_eq < 1e-8, f"max gap {worst_eq:.2e}"))
    checks.append(("closed_forms", worst_closed < 1e-8, f"max gap {worst_closed:.2e}"))
    pts = rng.uniform(-1.0, 1.0, size=(256, 3))
    ts = np.linalg.norm(pts, axis=1) + rng.uniform(0.0, 1.0, size=256)
    ys = rng.uniform(-1.0, 1.0, size=(256, 3))
    lhs = np.linalg.norm(ys, axis=1) + np.linalg.norm(pts - ys, axis=1) <= ts
    rhs = (ts - np.linalg.norm(ys, axis=1)) ** 2 - np.sum((pts - ys) ** 2, axis=1) >= 0
    rhs &= ts - np.linalg.norm(ys, axis=1) >= 0
    agree = bool(np.all(lhs == rhs))
    checks.append(("region_equivalence", agree, "ellipsoid matches the invariant sign"))
    return checks


def suite_goursat() -> list[Check]:
    checks: list[Check] = []
    grid = GridSpec(n_shells=20, r_max=1.6, n_polar=8, n_azimuth=16,
                    n_xi_steps=40, xi_max=1.6, kq_radial=8, kq_polar=8, kq_azimuth=16)
    q0 = 0.8
    sol = goursat_solve(Potential.constant(q0), ConeTrace.constant(1.0), grid=grid)
    rho = grid.rho_axis()[:, None]
    xi = grid.xi_axis()[None, :]
    z = q0 * xi * (xi + 2 * rho) / 4.0
    series = np.zeros_like(z)
    term = np.ones_like(z)
    for k in range(25):
        if k > 0:
            term = term * z / (k * (k + 1))
        series += term
    mask = sol.u.valid_mask()
    err = np.max(np.abs(sol.u.values - series)[mask]) / np.max(np.abs(series)[mask])
    checks.append(("constant_potential_series", err < 2e-3, f"relative error {err:.2e}"))
    checks.append(("cone_trace_exact", sol.cone_trace_error() == 0.0,
                   f"trace error {sol.cone_trace_error():.2e}"))
    zero = goursat_solve(Potential.constant(0.7), ConeTrace.constant(0.0), grid=grid)
    sup = zero.u.max_abs()
    checks.append(("zero_data_uniqueness", sup < 1e-12, f"sup |u| = {sup:.2e}"))
    return checks


def suite_identities() -> list[Check]:
    checks: list[Check] = []
    prof = Potential.radial_bump(1.0, 0.75, 0.2, 0.04)
    lhs1, rhs1, lhs2, rhs2 = coords_identity_check(prof, 0.5)
    rel1 = abs(lhs1 - rhs1) / max(abs(rhs1), 1e-300)
    rel2 = abs(lhs2 - rhs2) / max(abs(rhs2), 1e-300)
    checks.append(("double_integral_sphere", rel1 < 1e-4, f"relative gap {rel1:.2e}"))
    checks.append(("double_integral_ball", rel2 < 1e-4, f"relative gap {rel2:.2e}"))
    rng = np.random.default_rng(3)
    worst = 0.0
    sphere = SphereGrid(24, 24)
    for _ in range(6):
        rho = rng.uniform(0.55, 0.95)
        tau = rng.uniform(1.0 - rho + 0.02, 1.0)
        direct = sphere.integrate(
            np.where(np.sum((sphere.nodes - np.array([0, 0, rho])) ** 2, axis=1) <= tau**2, 1.0, 0.0))
        closed = 2.0 * math.pi * spherical_cap_height(tau, rho)
        worst = max(worst, abs(direct - closed) / max(abs(closed), 1e-300))
    checks.append(("cap_height", worst < 0.05, f"relative gap {worst:.2e} (indicator quadrature)"))
    a = np.array([0.0, 0.0, 1.0])
    q = _radial_test_bump()
    lhs, leading = spherical_mean_derivative(q, a, 0.45, SphereGrid(48, 8))
    gap = abs(lhs - leading)
    checks.append(("radial_mean_derivative", gap < 1e-6, f"|E| = {gap:.2e}"))
    return checks


def suite_gronwall() -> list[Check]:
    checks: list[Check] = []
    val = gronwall_bound(1.0, 1.0, 0.0, 1.0, 1.0)
    expected = 3.0 * math.exp(4.0)
    checks.append(("explicit_bound", abs(val - expected) < 1e-12, f"value {val:.6f}"))
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(10):
        s0 = rng.uniform(0.0, 0.8)
        tau = rng.uniform(s0 + 0.05, 1.0)
        I = inner_kernel_integral(s0, tau)
        worst = max(worst, abs(I - math.pi))
        if I > 4.0:
            checks.append(("inner_kernel_cap", False, f"{I:.4f} exceeds 4"))
    checks.append(("inner_kernel_pi", worst < 1e-6, f"max |I - pi| = {worst:.2e}"))
    checks.append(("inner_kernel_cap", True, "all sampled values below 4"))
    return checks


SUITES = {
    "gamma": suite_gamma,
    "kernel": suite_kernel,
    "goursat": suite_goursat,
    "identities": suite_identities,
    "gronwall": suite_gronwall,
}
