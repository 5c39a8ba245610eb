"""Momentum-space algebra of the field: mode vectors of a path, the K inner
product, closed-form Wick-exponential pairings and the conditional Gaussian
field given a particle path.

Conventions: ``<f, g>_K = int f^(k) conj(g^(k)) / (2 omega(k)) dk``; probe
functions are radial, given as callables of ``|k|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import ModelSpec
from .quadrature import angular_kernel, radial_quadrature

__all__ = [
    "ModeGrid",
    "ModeVector",
    "FieldProbe",
    "FieldProbeMoments",
    "mode_grid",
    "compute_fpm",
    "k_inner",
    "k_norm2",
    "wick_pair",
    "gamma_pair",
    "conditional_field_moments",
    "sample_conditional_field",
    "GridMismatch",
]


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ModeGrid:
    """Quadrature nodes ``k`` (n, d) and positive weights for ``int dk``.

    The node set is closed under ``k -> -k``; ``partner[i]`` is the index
    of ``-k_i``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    partner: np.ndarray
    radius: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]


def mode_grid(model: ModelSpec, n_radial_panels: int = 6, radial_order: int = 8,
              n_polar: int = 24, n_azimuth: int = 32, lo: float | None = None,
              hi: float | None = None) -> ModeGrid:
    """Radial Gauss panels x (d=3) Gauss-Legendre in cos(theta) x trapezoid in phi.

    Defaults to the support of the form factor.  ``n_azimuth`` must be even
    so that the grid is closed under ``k -> -k``.
    """
    s_lo, s_hi = model.form_factor.support(1e-12)
    lo = s_lo if lo is None else lo
    hi = s_hi if hi is None else hi
    d = model.dimension
    edges = np.linspace(lo, hi, n_radial_panels + 1)
    x, w = np.polynomial.legendre.leggauss(radial_order)
    r = (0.5 * (edges[:-1, None] + edges[1:, None]) + 0.5 * np.diff(edges)[:, None] * x[None, :]).ravel()
    wr = (0.5 * np.diff(edges)[:, None] * w[None, :]).ravel()
    if d == 1:
        nodes = np.concatenate([r, -r])[:, None]
        weights = np.concatenate([wr, wr])
        n = r.size
        partner = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
        return ModeGrid(nodes, weights, partner, np.abs(nodes[:, 0]))
    if n_azimuth % 2:
        raise ValueError("n_azimuth must be even")
    ct, wct = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * math.pi * np.arange(n_azimuth) / n_azimuth
    wphi = np.full(n_azimuth, 2.0 * math.pi / n_azimuth)
    R, C, P = np.meshgrid(r, ct, phi, indexing="ij")
    st = np.sqrt(1.0 - C * C)
    nodes = np.stack([R * st * np.cos(P), R * st * np.sin(P), R * C], axis=-1).reshape(-1, 3)
    weights = (wr[:, None, None] * r[:, None, None] ** 2 * wct[None, :, None] * wphi[None, None, :]).ravel()
    ir, ic, ip = np.meshgrid(np.arange(r.size), np.arange(n_polar), np.arange(n_azimuth), indexing="ij")
    # -k: same radius, cos -> -cos (Gauss nodes are symmetric), phi -> phi + pi
    jc = n_polar - 1 - ic
    jp = (ip + n_azimuth // 2) % n_azimuth
    partner = (ir * n_polar * n_azimuth + jc * n_azimuth + jp).ravel()
    return ModeGrid(nodes, weights, partner, np.repeat(r, n_polar * n_azimuth))


@dataclass(frozen=True, eq=False)
class ModeVector:
    values: np.ndarray
    grid: ModeGrid

    def __add__(self, other):
        _same_grid(self, other)
        return ModeVector(self.values + other.values, self.grid)

    def scaled(self, a) -> "ModeVector":
        return ModeVector(a * self.values, self.grid)

    @classmethod
    def from_radial(cls, func: Callable, grid: ModeGrid) -> "ModeVector":
        return cls(np.asarray(func(grid.radius), dtype=complex), grid)


def _same_grid(f: ModeVector, g: ModeVector):
    if f.grid is not g.grid:
        raise GridMismatch("mode vectors live on different grids")


def _half_line_sum(q_half, weights_t, times, k_nodes, omega, rho):
    # -rho(k) sum_s w_s e^{i k.q_s} e^{-omega |s|}
    phase = np.exp(1j * (q_half @ k_nodes.T))  # (S, n)
    decay = np.exp(-np.outer(np.abs(times), omega))  # (S, n)
    return -rho * np.einsum("s,sn->n", weights_t, phase * decay)


def compute_fpm(path, model: ModelSpec, grid: ModeGrid, bulk_half_width: float | None = None,
                chunk: int = 4096):
    """Mode vectors ``f^-`` and ``f^+`` of a path on the grid.

    ``f^+(k) = -rho(k) sum_{b=0}^{A} w_b dt e^{i k.q_b} e^{-omega b dt}`` with
    ``w_0 = 1/2`` (trapezoid), and the mirror sum over negative times.
    """
    q = np.asarray(path.positions, dtype=float)
    dt = float(path.dt)
    L = q.shape[0]
    if L % 2 != 1:
        raise ValueError("path grid must contain t = 0")
    c = L // 2
    A = c if bulk_half_width is None else int(round(bulk_half_width / dt))
    wt = np.full(A + 1, dt)
    wt[0] = 0.5 * dt
    times = dt * np.arange(A + 1)
    q_plus = q[c:c + A + 1]
    q_minus = q[c - A:c + 1][::-1]
    omega = model.omega(grid.radius)
    rho = model.rho(grid.radius)
    fp = np.empty(grid.size, dtype=complex)
    fm = np.empty(grid.size, dtype=complex)
    for s in range(0, grid.size, chunk):
        sl = slice(s, s + chunk)
        fp[sl] = _half_line_sum(q_plus, wt, times, grid.nodes[sl], omega[sl], rho[sl])
        fm[sl] = _half_line_sum(q_minus, wt, times, grid.nodes[sl], omega[sl], rho[sl])
    return ModeVector(fm, grid), ModeVector(fp, grid)


def k_inner(f: ModeVector, g: ModeVector, model: ModelSpec, grid: ModeGrid | None = None) -> complex:
    """``sum_k w_k f(k) conj(g(k)) / (2 omega(k))``."""
    _same_grid(f, g)
    grid = f.grid if grid is None else grid
    if grid is not f.grid:
        raise GridMismatch("grid argument does not match the vectors' grid")
    om = model.omega(grid.radius)
    return complex(np.sum(grid.weights * f.values * np.conj(g.values) / (2.0 * om)))


def k_norm2(f: ModeVector, model: ModelSpec) -> float:
    return k_inner(f, f, model).real


def wick_pair(f: ModeVector, g: ModeVector, model: ModelSpec) -> complex:
    """Overlap of two Wick exponentials: ``exp(<f, g>_K)``."""
    return np.exp(k_inner(f, g, model))


def gamma_pair(f: ModeVector, A, g: ModeVector, model: ModelSpec):
    """Pairings with second quantization of a multiplier ``A`` on momentum space.

    Returns ``(exp(<f, A g>_K), <f, A g>_K exp(<f, g>_K))``.  ``A`` is an
    array of values on the grid nodes or a callable of ``|k|``.
    """
    _same_grid(f, g)
    a = A(g.grid.radius) if callable(A) else np.asarray(A)
    if a.shape == ():
        a = np.full(g.grid.size, float(a))
    Ag = ModeVector(a * g.values, g.grid)
    fag = k_inner(f, Ag, model)
    return np.exp(fag), fag * np.exp(k_inner(f, g, model))


@dataclass(frozen=True)
class FieldProbe:
    """Field smeared with a radial test function ``g^(|k|)`` at time ``t``."""

    t: float
    ghat: Callable


@dataclass(frozen=True, eq=False)
class FieldProbeMoments:
    probes: tuple
    mean: np.ndarray
    cov: np.ndarray
    regularized: bool = False


def conditional_field_moments(path, model: ModelSpec, probes: Sequence[FieldProbe],
                              tol: float = 1e-10, probe_support: tuple | None = None) -> FieldProbeMoments:
    """Mean and covariance of the field given the particle path.

    ``mean_j = -sum_s w_s dt int g_j rho / (2 omega) K_d(|k||q_s|) e^{-omega|t_j - s|} dk``
    over the whole path grid (trapezoid in s), and
    ``cov_jl = int g_j conj(g_l) e^{-omega |t_j - t_l|} / (2 omega) dk``.
    Probe functions are assumed to vanish outside ``probe_support``
    (default: the form-factor support).
    """
    probes = tuple(probes)
    q = np.asarray(path.positions, dtype=float)
    dt = float(path.dt)
    L = q.shape[0]
    times = -float(path.T) + dt * np.arange(L)
    w = np.full(L, dt)
    w[0] = w[-1] = 0.5 * dt
    radii = np.sqrt(np.sum(q * q, axis=1))
    lo, hi = model.form_factor.support(tol) if probe_support is None else probe_support
    d = model.dimension
    mean = np.zeros(len(probes))
    if model.form_factor.amplitude > 0.0:
        for j, p in enumerate(probes):
            def f(k, p=p):
                om = model.omega(k)
                base = np.real(p.ghat(k)) * model.rho(k) / (2.0 * om)
                dec = np.exp(-np.outer(om, np.abs(p.t - times)))  # (n_k, L)
                ker = angular_kernel(d, np.outer(k, radii))
                return base * ((dec * ker) @ w)

            mean[j] = -radial_quadrature(f, lo, hi, d, tol)
    cov = _probe_cov_support(model, probes, tol, lo, hi)
    return FieldProbeMoments(probes, mean, cov)


def _probe_cov_support(model, probes, tol, lo, hi):
    n = len(probes)
    cov = np.zeros((n, n))
    for j in range(n):
        for l in range(j, n):
            tau = abs(probes[j].t - probes[l].t)
            gj, gl = probes[j].ghat, probes[l].ghat

            def f(k, gj=gj, gl=gl, tau=tau):
                om = model.omega(k)
                return np.real(gj(k) * np.conj(gl(k))) * np.exp(-om * tau) / (2.0 * om)

            cov[j, l] = cov[l, j] = radial_quadrature(f, lo, hi, model.dimension, tol)
    return cov


def sample_conditional_field(path, model: ModelSpec, probes: Sequence[FieldProbe], rng,
                             n: int, moments: FieldProbeMoments | None = None, jitter: float = 1e-12):
    """``n`` Gaussian draws of the probed field given the path.

    Returns ``(draws (n, m), moments)``; ``moments.regularized`` is set when
    the covariance needed clipping of negative eigenvalues (tolerance
    ``jitter`` times the largest eigenvalue).
    """
    if moments is None:
        moments = conditional_field_moments(path, model, probes)
    cov = moments.cov
    m = cov.shape[0]
    z = rng.standard_normal((n, m))
    try:
        factor = np.linalg.cholesky(cov)
        regularized = False
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        floor = -jitter * max(vals.max(), 0.0)
        if vals.min() < floor:
            raise ValueError("conditional covariance is not positive semidefinite")
        vals = np.clip(vals, 0.0, None)
        factor = vecs * np.sqrt(vals)[None, :]
        regularized = True
    draws = moments.mean[None, :] + z @ factor.T
    if regularized:
        moments = FieldProbeMoments(moments.probes, moments.mean, moments.cov, True)
    return draws, moments
