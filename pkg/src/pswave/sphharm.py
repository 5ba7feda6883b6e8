"""Spherical-harmonic transforms on Gauss-Legendre x uniform grids.

Fully normalized associated Legendre functions P_l^m (orthonormal in mu
on [-1, 1]) combined with e^{i m phi}/sqrt(2 pi) give an orthonormal
basis; on an (n_polar, n_azimuth) product grid the analysis/synthesis
pair is exact for band limits l <= n_polar - 1, |m| <= n_azimuth/2 - 1.

Used for the Laplace-Beltrami operator (angular part of the Laplacian on
radial shells) and for Parseval evaluation of tangential gradient norms.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss


def normalized_legendre(l_max: int, m_max: int, mu: np.ndarray) -> np.ndarray:
    """Table P[l, m, i] of orthonormal associated Legendre values at mu[i].

    Entries with m > l are zero. Recurrences are the standard stable ones
    for the fully normalized functions.
    """
    mu = np.asarray(mu, dtype=float)
    n = len(mu)
    sin_t = np.sqrt(np.clip(1.0 - mu**2, 0.0, None))
    P = np.zeros((l_max + 1, m_max + 1, n))
    P[0, 0] = math.sqrt(0.5)
    for m in range(1, m_max + 1):
        P[m, m] = -math.sqrt((2.0 * m + 1.0) / (2.0 * m)) * sin_t * P[m - 1, m - 1]
    for m in range(0, m_max + 1):
        if m + 1 <= l_max:
            P[m + 1, m] = math.sqrt(2.0 * m + 3.0) * mu * P[m, m]
        for l in range(m + 2, l_max + 1):
            a = math.sqrt((4.0 * l**2 - 1.0) / (l**2 - m**2))
            b = math.sqrt(((l - 1.0) ** 2 - m**2) / (4.0 * (l - 1.0) ** 2 - 1.0))
            P[l, m] = a * (mu * P[l - 1, m] - b * P[l - 2, m])
    return P


@lru_cache(maxsize=8)
def _axisym_setup(n_polar: int):
    mu, w = leggauss(n_polar)
    l_max = n_polar - 1
    P = normalized_legendre(l_max, 0, mu)[:, 0, :]       # (l_max+1, n_polar)
    analysis = P * w[None, :]                            # c_l = analysis @ f
    eig = -np.arange(l_max + 1) * (np.arange(l_max + 1) + 1.0)
    return P, analysis, eig


@lru_cache(maxsize=8)
def _general_setup(n_polar: int, n_azimuth: int):
    mu, w = leggauss(n_polar)
    l_max = n_polar - 1
    m_max = min(l_max, n_azimuth // 2 - 1)
    P = normalized_legendre(l_max, m_max, mu)            # (L, M, n_polar)
    analysis = P * w[None, None, :]
    ls = np.arange(l_max + 1)
    eig = -ls * (ls + 1.0)
    return P, analysis, eig, m_max


def axisym_analysis(values: np.ndarray, n_polar: int) -> np.ndarray:
    """Legendre coefficients of axisymmetric data; polar axis must be axis -1."""
    _, analysis, _ = _axisym_setup(n_polar)
    return values @ analysis.T


def axisym_synthesis(coeffs: np.ndarray, n_polar: int) -> np.ndarray:
    P, _, _ = _axisym_setup(n_polar)
    return coeffs @ P


def laplace_beltrami_axisym(values: np.ndarray, n_polar: int) -> np.ndarray:
    """Angular Laplacian of axisymmetric shell data (polar axis last)."""
    P, analysis, eig = _axisym_setup(n_polar)
    return (values @ analysis.T) * eig @ P


def laplace_beltrami_general(values: np.ndarray, n_polar: int, n_azimuth: int) -> np.ndarray:
    """Angular Laplacian of general shell data, axes (..., polar, azimuth).

    Azimuthal modes beyond min(n_polar - 1, n_azimuth/2 - 1) are outside
    the representable band and are dropped.
    """
    P, analysis, eig, m_max = _general_setup(n_polar, n_azimuth)
    F = np.fft.fft(values, axis=-1) / n_azimuth          # f_m(theta) at azimuth index m
    out = np.zeros_like(F)
    for m in range(m_max + 1):
        A = analysis[:, m, :]                            # (L, polar)
        S = P[:, m, :]
        c = np.einsum("...p,lp->...l", F[..., :, m], A) * eig
        out[..., :, m] = np.einsum("...l,lp->...p", c, S)
        if m > 0:
            c = np.einsum("...p,lp->...l", F[..., :, -m], A) * eig
            out[..., :, -m] = np.einsum("...l,lp->...p", c, S)
    res = np.fft.ifft(out * n_azimuth, axis=-1)
    return res.real if np.isrealobj(values) else res


@lru_cache(maxsize=8)
def _resample_matrix_axisym(n_polar: int, n_uniform: int) -> np.ndarray:
    """Band-limited resampling GL polar nodes -> uniform theta nodes."""
    _, analysis, _ = _axisym_setup(n_polar)
    theta = np.linspace(0.0, math.pi, n_uniform)
    P_uni = normalized_legendre(n_polar - 1, 0, np.cos(theta))[:, 0, :]
    return P_uni.T @ analysis                      # (n_uniform, n_polar)


@lru_cache(maxsize=8)
def _resample_matrices_general(n_polar: int, n_azimuth: int, n_uniform: int):
    _, analysis, _, m_max = _general_setup(n_polar, n_azimuth)
    theta = np.linspace(0.0, math.pi, n_uniform)
    P_uni = normalized_legendre(n_polar - 1, m_max, np.cos(theta))
    mats = [P_uni[:, m, :].T @ analysis[:, m, :] for m in range(m_max + 1)]
    return mats, m_max


def resample_polar_axisym(values: np.ndarray, n_polar: int, n_uniform: int,
                          axis: int) -> np.ndarray:
    """Resample the polar axis of axisymmetric data onto uniform theta."""
    S = _resample_matrix_axisym(n_polar, n_uniform)
    moved = np.moveaxis(values, axis, -1)
    out = moved @ S.T
    return np.moveaxis(out, -1, axis)


def resample_polar_general(values: np.ndarray, n_polar: int, n_azimuth: int,
                           n_uniform: int, polar_axis: int, az_axis: int) -> np.ndarray:
    """Resample the polar axis of general data (keeps the azimuth grid)."""
    mats, m_max = _resample_matrices_general(n_polar, n_azimuth, n_uniform)
    moved = np.moveaxis(values, (polar_axis, az_axis), (-2, -1))
    F = np.fft.fft(moved, axis=-1) / n_azimuth
    out_shape = moved.shape[:-2] + (n_uniform, moved.shape[-1])
    out = np.zeros(out_shape, dtype=complex)
    for m in range(m_max + 1):
        out[..., :, m] = np.einsum("up,...p->...u", mats[m], F[..., :, m])
        if m > 0:
            out[..., :, -m] = np.einsum("up,...p->...u", mats[m], F[..., :, -m])
    res = np.fft.ifft(out * n_azimuth, axis=-1).real
    return np.moveaxis(res, (-2, -1), (polar_axis, az_axis))


def gradient_norm_integral_axisym(values: np.ndarray, n_polar: int) -> np.ndarray:
    """Integral over the unit sphere of |grad_S f|^2 for axisymmetric f.

    Parseval: 2*pi * sum_l l(l+1) c_l^2 with c_l the orthonormal-Legendre
    coefficients (2*pi from the trivial azimuth integral).
    """
    _, analysis, eig = _axisym_setup(n_polar)
    c = values @ analysis.T
    return 2.0 * math.pi * np.sum((-eig) * c**2, axis=-1)


def gradient_norm_integral_general(values: np.ndarray, n_polar: int, n_azimuth: int) -> np.ndarray:
    """Integral over the unit sphere of |grad_S f|^2, axes (..., polar, azimuth)."""
    P, analysis, eig, m_max = _general_setup(n_polar, n_azimuth)
    F = np.fft.fft(values, axis=-1) / n_azimuth
    total = np.zeros(values.shape[:-2])
    for m in range(-m_max, m_max + 1):
        A = analysis[:, abs(m), :]
        c = np.einsum("...p,lp->...l", F[..., :, m], A)
        total = total + 2.0 * math.pi * np.sum((-eig) * np.abs(c) ** 2, axis=-1)
    return total
