"""Pair potential W(q, t) obtained by integrating out the field, and the
interaction functionals of discretized paths built from it.

    W(q, t) = -1/2 int |rho(k)|^2 / (2 omega(k)) cos(k.q) exp(-omega(k)|t|) dk

For radial profiles the direction average of ``cos(k.q)`` is
``angular_kernel(d, |k||q|)``, so W depends on ``r = |q|`` and ``|t|`` only.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import ModelSpec
from .quadrature import QuadratureError, angular_kernel, radial_quadrature, radial_rule

__all__ = [
    "WTable",
    "w_exact",
    "w_envelope",
    "build_w_table",
    "w_interp",
    "half_line_tail_bound",
    "strip_tail_bound",
    "choose_tau_max",
    "cross_half_line_energy",
    "window_interaction",
    "square_interaction",
    "pinned_cross_energy",
    "write_table_csv",
    "read_table_csv",
]

log = logging.getLogger(__name__)


def _w_prefactor(model: ModelSpec, r):
    return -0.25 * model.rho(r) ** 2 / model.omega(r)


def w_envelope(model: ModelSpec, tau, tol: float = 1e-12):
    """``|W(0, tau)|``; dominates ``|W(r, tau)|`` for every r."""
    return np.abs(w_exact(model, 0.0, tau, tol))


def w_exact(model: ModelSpec, r, tau, tol: float = 1e-12):
    """Pair potential by adaptive radial quadrature.

    ``r`` and ``tau`` broadcast against each other.  Convergence is judged
    relative to the envelope ``|W(0, tau)|`` so that zero crossings in r do
    not stall the refinement.
    """
    r_arr, t_arr = np.broadcast_arrays(np.asarray(r, dtype=float), np.abs(np.asarray(tau, dtype=float)))
    if np.any(r_arr < 0):
        raise ValueError("distance r must be >= 0")
    ff = model.form_factor
    scalar = r_arr.ndim == 0
    r_flat = r_arr.reshape(-1)
    t_flat = t_arr.reshape(-1)
    if ff.amplitude == 0.0:
        out = np.zeros(r_flat.shape)
        return float(out[0]) if scalar else out.reshape(r_arr.shape)
    lo, hi = ff.support(tol)
    d = model.dimension

    def envelope_integrand(k):
        return _w_prefactor(model, k)[:, None] * np.exp(-model.omega(k)[:, None] * t_flat[None, :])

    env = np.abs(radial_quadrature(envelope_integrand, lo, hi, d, tol))

    def integrand(k):
        kern = angular_kernel(d, k[:, None] * r_flat[None, :])
        return envelope_integrand(k) * kern

    out = radial_quadrature(integrand, lo, hi, d, tol, scale=env)
    out = np.atleast_1d(out)
    return float(out[0]) if scalar else out.reshape(r_arr.shape)


def half_line_tail_bound(model: ModelSpec, tau: float, tol: float = 1e-10) -> float:
    """Bound on the part of the cross half-line energy with lag ``t - s > tau``.

    ``2 int_tau^inf u |W(0,u)| du = int |rho|^2/(2 omega^3) e^{-omega tau}(1 + omega tau) dk``;
    it holds for every path since ``|W(r, u)| <= |W(0, u)|``.  Equality for
    the pinned path.
    """
    ff = model.form_factor
    if ff.amplitude == 0.0:
        return 0.0
    lo, hi = ff.support(tol)

    def f(k):
        w = model.omega(k)
        return model.rho(k) ** 2 / (2.0 * w**3) * np.exp(-w * tau) * (1.0 + w * tau)

    return float(radial_quadrature(f, lo, hi, model.dimension, tol))


def strip_tail_bound(model: ModelSpec, S: float, tau: float, tol: float = 1e-10) -> float:
    """``8 S int e^{-omega tau} |rho|^2 / (2 omega^2) dk``.

    Bounds the interaction between a window of half-width ``S`` and times
    further than ``tau`` from it; used for energy-window truncation.
    """
    ff = model.form_factor
    if ff.amplitude == 0.0:
        return 0.0
    lo, hi = ff.support(tol)

    def f(k):
        w = model.omega(k)
        return np.exp(-w * tau) * model.rho(k) ** 2 / (2.0 * w**2)

    return float(8.0 * S * radial_quadrature(f, lo, hi, model.dimension, tol))


def choose_tau_max(model: ModelSpec, eps_tail: float, dt: float | None = None, tau_cap: float = 1e4) -> float:
    """Smallest lag cutoff (a multiple of ``dt`` when given) whose half-line tail is <= eps_tail."""
    if eps_tail <= 0:
        raise ValueError("eps_tail must be > 0")
    step = dt if dt is not None else 1e-3
    if half_line_tail_bound(model, 0.0) <= eps_tail:
        return step
    lo, hi = 0.0, 1.0
    while half_line_tail_bound(model, hi) > eps_tail:
        lo, hi = hi, 2.0 * hi
        if hi > tau_cap:
            raise ValueError(f"tail budget {eps_tail} needs tau_max > {tau_cap}; is the infrared condition violated?")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if half_line_tail_bound(model, mid) > eps_tail:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-3 * step:
            break
    return math.ceil(hi / step - 1e-9) * step


@dataclass(frozen=True, eq=False)
class WTable:
    """Uniform (r, tau) table of W.

    ``values[j, i]`` holds ``W(r_grid[i], tau_grid[j])``; rows are lags so
    that the sampler can index one row per time separation.
    """

    r_grid: np.ndarray
    tau_grid: np.ndarray
    values: np.ndarray
    fingerprint: str
    tol: float
    interp_error: float = 0.0
    model: ModelSpec | None = field(default=None, repr=False)

    @property
    def r_max(self) -> float:
        return float(self.r_grid[-1])

    @property
    def tau_max(self) -> float:
        return float(self.tau_grid[-1])

    @property
    def dr(self) -> float:
        return float(self.r_grid[1] - self.r_grid[0])

    @property
    def dtau(self) -> float:
        return float(self.tau_grid[1] - self.tau_grid[0])

    @property
    def w_negative_everywhere(self) -> bool:
        return bool(np.all(self.values < 0.0))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    def lag_table(self, dt: float) -> np.ndarray:
        """Rows at lags ``m * dt``, m = 0..M; requires dt to be a multiple of the tau step."""
        stride = dt / self.dtau
        k = int(round(stride))
        if k < 1 or abs(stride - k) > 1e-9 * max(1.0, stride):
            raise ValueError(f"time step {dt} is not a multiple of the table tau step {self.dtau}")
        return np.ascontiguousarray(self.values[::k])

    def same_as(self, other: "WTable") -> bool:
        return (
            self.fingerprint == other.fingerprint
            and np.array_equal(self.r_grid, other.r_grid)
            and np.array_equal(self.tau_grid, other.tau_grid)
            and np.array_equal(self.values, other.values)
        )


def _table_values(model, r_grid, tau_grid, quad_tol, min_panels=8, max_panels=1024, order=16):
    ff = model.form_factor
    lo, hi = ff.support(quad_tol)
    d = model.dimension

    def evaluate(n):
        k, w = radial_rule(lo, hi, d, n, order)
        c = w * _w_prefactor(model, k)
        ang = angular_kernel(d, r_grid[:, None] * k[None, :])  # (n_r, n_k)
        dec = np.exp(-np.outer(model.omega(k), tau_grid))  # (n_k, n_tau)
        return (ang * c[None, :]) @ dec  # (n_r, n_tau)

    n = min_panels
    prev = evaluate(n)
    while n < max_panels:
        n *= 2
        cur = evaluate(n)
        env = np.maximum(np.abs(cur[0]), 1e-300)
        if r_grid[0] != 0.0:
            env = np.maximum(env, np.max(np.abs(cur), axis=0))
        if np.max(np.abs(cur - prev) / env[None, :]) <= quad_tol:
            return cur.T.copy()
        prev = cur
    raise QuadratureError("W table quadrature did not converge; reduce r_max or loosen the tolerance")


def build_w_table(
    model: ModelSpec,
    r_max: float,
    tau_max: float,
    n_r: int,
    n_tau: int,
    tol: float = 1e-3,
    n_probes: int = 100,
    probe_seed: int = 0,
) -> WTable:
    """Tabulate W on a uniform grid and audit bilinear interpolation.

    Entries are computed to ``min(tol * 1e-3, 1e-9)`` relative to the
    envelope ``|W(0, tau)|``.  Interpolation is audited against
    :func:`w_exact` on ``n_probes`` random off-grid points; the error,
    measured relative to the envelope at the probe's tau, must stay below
    ``10 * tol``.
    """
    if not (r_max > 0 and tau_max > 0):
        raise ValueError("r_max and tau_max must be > 0")
    if n_r < 2 or n_tau < 2:
        raise ValueError("tables need at least two points per axis")
    r_grid = np.linspace(0.0, r_max, n_r)
    tau_grid = np.linspace(0.0, tau_max, n_tau)
    fp = model.fingerprint(field_only=True)
    if model.form_factor.amplitude == 0.0:
        return WTable(r_grid, tau_grid, np.zeros((n_tau, n_r)), fp, tol, 0.0, model)
    quad_tol = min(tol * 1e-3, 1e-9)
    values = _table_values(model, r_grid, tau_grid, quad_tol)
    table = WTable(r_grid, tau_grid, values, fp, tol, 0.0, model)
    err = 0.0
    if n_probes > 0:
        rng = np.random.default_rng(probe_seed)
        # interior of random cells, away from the nodes
        ir = rng.integers(0, n_r - 1, n_probes)
        it = rng.integers(0, n_tau - 1, n_probes)
        fr = rng.uniform(0.1, 0.9, n_probes)
        ft = rng.uniform(0.1, 0.9, n_probes)
        pr = r_grid[ir] + fr * (r_grid[1] - r_grid[0])
        pt = tau_grid[it] + ft * (tau_grid[1] - tau_grid[0])
        exact = w_exact(model, pr, pt, quad_tol)
        env = w_envelope(model, pt, quad_tol)
        approx = _bilinear(table, pr, pt)
        err = float(np.max(np.abs(approx - exact) / env))
        if err > 10.0 * tol:
            raise ValueError(
                f"W table interpolation error {err:.3e} exceeds 10*tol={10 * tol:.1e}; refine the grid"
            )
    return WTable(r_grid, tau_grid, values, fp, tol, err, model)


def default_r_step(model: ModelSpec, tol: float) -> float:
    """Grid step in r that keeps the bilinear error near ``tol`` of the envelope."""
    lo, hi = model.form_factor.support(1e-8)
    # second r-derivative of the angular kernel is at most k^2/3 (d=3) or k^2 (d=1)
    curv = hi**2 / (3.0 if model.dimension == 3 else 1.0)
    return math.sqrt(8.0 * tol / curv)


def _bilinear(table: WTable, r, tau):
    r = np.asarray(r, dtype=float)
    tau = np.abs(np.asarray(tau, dtype=float))
    xr = r / table.dr
    xt = tau / table.dtau
    n_tau, n_r = table.values.shape
    i = np.clip(np.floor(xr).astype(np.int64), 0, n_r - 2)
    j = np.clip(np.floor(xt).astype(np.int64), 0, n_tau - 2)
    fr = xr - i
    ft = xt - j
    v = table.values
    return (
        (1 - ft) * ((1 - fr) * v[j, i] + fr * v[j, i + 1])
        + ft * ((1 - fr) * v[j + 1, i] + fr * v[j + 1, i + 1])
    )


def w_interp(table: WTable, r, tau):
    """Bilinear table lookup in ``(r, |tau|)``.

    Lags beyond ``tau_max`` are truncated to 0.  Distances beyond ``r_max``
    are evaluated exactly (needs the table's model) and logged.
    """
    r_arr, t_arr = np.broadcast_arrays(np.asarray(r, dtype=float), np.abs(np.asarray(tau, dtype=float)))
    out = _bilinear(table, r_arr, t_arr)
    out = np.where(t_arr > table.tau_max, 0.0, out)
    far = (r_arr > table.r_max) & (t_arr <= table.tau_max)
    if np.any(far):
        if table.model is None:
            raise ValueError("table has no model attached; cannot evaluate beyond r_max")
        log.info("w_interp: %d point(s) beyond r_max=%g, using exact evaluation", int(np.sum(far)), table.r_max)
        out = np.array(out, dtype=float)
        out[far] = w_exact(table.model, r_arr[far], t_arr[far], min(table.tol * 1e-3, 1e-9))
    return float(out) if out.ndim == 0 else out


def _positions(path) -> np.ndarray:
    q = np.asarray(getattr(path, "positions", path), dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    return np.ascontiguousarray(q)


def _check_center(L: int):
    if L % 2 != 1:
        raise ValueError("path grid must contain t = 0 as a node (odd number of beads)")


def cross_half_line_energy(path, table: WTable, bulk_half_width: float | None = None) -> float:
    """Interaction energy D between the negative and positive half-lines.

    ``D = -2 sum_{a,b>=0} w_a w_b dt^2 W(|q_b - q_{-a}|, (a+b) dt)`` with
    ``w_0 = 1/2`` (tensor trapezoid rule on the quadrant), restricted to
    ``a, b <= bulk_half_width/dt`` and ``(a+b) dt <= tau_max``.
    """
    q = _positions(path)
    dt = float(path.dt)
    L = q.shape[0]
    _check_center(L)
    center = L // 2
    A = center if bulk_half_width is None else int(round(bulk_half_width / dt))
    if A > center:
        raise ValueError("bulk half-width exceeds the path half-width")
    lag = table.lag_table(dt)
    M = lag.shape[0] - 1
    value, far = _kernels.cross_energy(q, center, A, M, lag, 1.0 / table.dr, dt)
    if far:
        raise ValueError(f"path separation exceeds table r_max={table.r_max}; rebuild with a larger r_max")
    return value


def pinned_cross_energy(table: WTable, dt: float, bulk_half_width: float) -> float:
    """D of the constant path on the given grid (the pathwise maximum of D)."""
    A = int(round(bulk_half_width / dt))
    q = np.zeros((2 * A + 1, 1))
    lag = table.lag_table(dt)
    value, _ = _kernels.cross_energy(q, A, A, lag.shape[0] - 1, lag, 1.0 / table.dr, dt)
    return value


def _pair_weights(L: int):
    w = np.ones(L)
    w[0] = w[-1] = 0.5
    return w


def _region_energy(path, table: WTable, mask_fn) -> float:
    q = _positions(path)
    dt = float(path.dt)
    L = q.shape[0]
    t = -float(path.T) + dt * np.arange(L)
    w = _pair_weights(L)
    lag = table.lag_table(dt)
    M = lag.shape[0] - 1
    total = 0.0
    for i in range(L):
        j = np.arange(max(0, i - M), min(L, i + M + 1))
        keep = mask_fn(t[i], t[j])
        if not np.any(keep):
            continue
        j = j[keep]
        r = np.sqrt(np.sum((q[j] - q[i]) ** 2, axis=1))
        m = np.abs(j - i)
        x = r / table.dr
        k = np.floor(x).astype(np.int64)
        if np.any(k >= lag.shape[1] - 1):
            raise ValueError(f"path separation exceeds table r_max={table.r_max}")
        f = x - k
        vals = (1 - f) * lag[m, k] + f * lag[m, k + 1]
        total += float(np.sum(w[i] * w[j] * vals))
    return total * dt * dt


def square_interaction(path, table: WTable, T: float | None = None) -> float:
    """Double Riemann sum of W over ``[-T, T]^2`` (whole path when T is None)."""
    T = float(path.T) if T is None else float(T)
    eps = 1e-9 * float(path.dt)
    return _region_energy(path, table, lambda ti, tj: (abs(ti) <= T + eps) & (np.abs(tj) <= T + eps))


def window_interaction(path, table: WTable, S: float | None, T: float) -> float:
    """Double sum of W over ``Lambda_T`` minus ``Lambda_S`` on the path grid.

    ``Lambda_T = ([-T,T] x R) u (R x [-T,T])`` restricted to the path's
    time range; ``S = None`` gives ``Lambda_T`` itself.
    """
    if S is not None and S > T:
        raise ValueError("need S <= T")
    if T > float(path.T) + 1e-12:
        raise ValueError("T exceeds the path half-width")
    eps = 1e-9 * float(path.dt)

    def inside(T_, ti, tj):
        return (abs(ti) <= T_ + eps) | (np.abs(tj) <= T_ + eps)

    if S is None:
        return _region_energy(path, table, lambda ti, tj: inside(T, ti, tj))
    return _region_energy(path, table, lambda ti, tj: inside(T, ti, tj) & ~inside(S, ti, tj))


def write_table_csv(table: WTable, dest) -> None:
    """CSV with ``#`` header lines and one ``r,tau,W`` row per node.

    Floats use 17 significant digits, so reading back is bit-exact.
    """
    buf = io.StringIO()
    buf.write(f"# fingerprint={table.fingerprint}\n")
    buf.write(f"# tol={table.tol!r}\n")
    buf.write(f"# interp_error={table.interp_error!r}\n")
    buf.write(f"# r_grid={table.r_grid[0]!r},{table.r_grid[-1]!r},{table.r_grid.size}\n")
    buf.write(f"# tau_grid={table.tau_grid[0]!r},{table.tau_grid[-1]!r},{table.tau_grid.size}\n")
    buf.write("r,tau,W\n")
    rr, tt = np.meshgrid(table.r_grid, table.tau_grid)
    rows = np.column_stack([rr.ravel(), tt.ravel(), table.values.ravel()])
    np.savetxt(buf, rows, fmt="%.17g", delimiter=",")
    text = buf.getvalue()
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", newline="\n") as fh:
            fh.write(text)


def read_table_csv(source, model: ModelSpec | None = None) -> WTable:
    """Inverse of :func:`write_table_csv`; checks the fingerprint against ``model`` when given."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source) as fh:
            text = fh.read()
    header = {}
    lines = text.splitlines()
    n_head = 0
    for line in lines:
        if not line.startswith("#"):
            break
        key, _, val = line[1:].strip().partition("=")
        header[key] = val
        n_head += 1
    if lines[n_head].strip() != "r,tau,W":
        raise ValueError("missing 'r,tau,W' column header")
    data = np.loadtxt(io.StringIO("\n".join(lines[n_head + 1:])), delimiter=",", ndmin=2)
    n_r = int(header["r_grid"].split(",")[2])
    n_tau = int(header["tau_grid"].split(",")[2])
    if data.shape[0] != n_r * n_tau:
        raise ValueError("row count does not match the grid sizes in the header")
    r_grid = data[:n_r, 0].copy()
    tau_grid = data[::n_r, 1].copy()
    values = data[:, 2].reshape(n_tau, n_r).copy()
    fp = header["fingerprint"]
    if model is not None and model.fingerprint(field_only=True) != fp:
        raise ValueError("table fingerprint does not match the model")
    return WTable(r_grid, tau_grid, values, fp, float(header["tol"]), float(header["interp_error"]), model)


def discretization_slack(table: WTable, dt: float, bulk_half_width: float, c_rho: float) -> float:
    """``eps_disc`` with ``D(q) <= C_rho (1 + eps_disc)`` for every path on this grid."""
    if c_rho <= 0.0:
        return 0.0
    return max(0.0, pinned_cross_energy(table, dt, bulk_half_width) / c_rho - 1.0)


def table_for_model(model: ModelSpec, tau_max: float, dt: float, r_max: float,
                    tol: float = 1e-3, tau_substeps: int = 2, n_probes: int = 100) -> WTable:
    """Table whose tau nodes include every multiple of ``dt`` up to ``tau_max``."""
    M = int(round(tau_max / dt))
    n_tau = M * tau_substeps + 1
    h = default_r_step(model, tol)
    n_r = max(2, int(math.ceil(r_max / h)) + 1)
    return build_w_table(model, r_max, M * dt, n_r, n_tau, tol, n_probes=n_probes)


__all__ += ["discretization_slack", "table_for_model", "default_r_step"]
