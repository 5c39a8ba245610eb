"""Monte Carlo estimators of ground-state observables as Gibbs averages over
sampled particle paths, with the analytic bounds they must respect.

Every estimator is a mean of a per-sample path functional; standard errors
are ESS-corrected per chain (see :func:`nelson_gibbs.diagnostics.mean_se`).
Bounds are computed from model constants, never from the samples, except
the particle second moment entering the lower momentum band.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import curve_fit
from scipy.special import gammaln

from . import _kernels
from .diagnostics import mean_se
from .io import jsonable
from .field_modes import compute_fpm, mode_grid
from .model import ModelConstants, ModelSpec
from .pair_potential import WTable
from .quadrature import angular_kernel, radial_rule, sphere_area
from .sampler import SampleSet

__all__ = [
    "BoundCheck",
    "ObservableReport",
    "DensityHistogram",
    "DecayFit",
    "InsufficientData",
    "FingerprintMismatch",
    "LatticeBudgetExceeded",
    "WholeSpace",
    "Ball",
    "cross_energies",
    "estimate_pn",
    "estimate_mean_boson_number",
    "estimate_momentum_density",
    "estimate_field_mean",
    "estimate_field_variance",
    "estimate_mgf",
    "mgf_derivatives",
    "estimate_position_boson_density",
    "estimate_particle_density",
    "fit_decay",
    "verify_bounds",
]

Z_THRESHOLD = 3.0


class InsufficientData(ValueError):
    pass


class FingerprintMismatch(ValueError):
    pass


class LatticeBudgetExceeded(ValueError):
    pass


@dataclass
class BoundCheck:
    """``estimates[key][index]`` compared against ``limit``.

    ``kind='upper'`` requires observed <= limit, ``'lower'`` observed >= limit,
    ``'equal'`` |observed - limit| small; the tolerance is
    ``z * se + atol``.  The observed value is re-read from the report each
    time, so editing a report's estimates changes the verdict.
    """

    name: str
    kind: str
    key: str
    limit: float
    se: float = 0.0
    atol: float = 0.0
    index: Optional[int] = None

    def observed(self, report: "ObservableReport") -> float:
        v = report.estimates[self.key]
        if self.index is not None:
            v = np.asarray(v)[self.index]
        return float(v)

    def evaluate(self, report: "ObservableReport", z: float = Z_THRESHOLD) -> dict:
        obs = self.observed(report)
        if self.kind == "upper":
            violation = obs - self.limit
        elif self.kind == "lower":
            violation = self.limit - obs
        elif self.kind == "equal":
            violation = abs(obs - self.limit)
        else:
            raise ValueError(f"unknown bound kind {self.kind!r}")
        zscore = violation / self.se if self.se > 0 else (0.0 if violation <= self.atol else math.inf)
        passed = bool(violation <= z * self.se + self.atol)
        return {
            "name": self.name,
            "kind": self.kind,
            "observed": obs,
            "limit": self.limit,
            "se": self.se,
            "atol": self.atol,
            "z": zscore,
            "passed": passed,
        }

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("name", "kind", "key", "limit", "se", "atol", "index")}


@dataclass
class ObservableReport:
    name: str
    estimates: dict
    se: dict
    n_samples: int
    ess: float
    fingerprint: str = ""
    bounds: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    per_sample: dict = field(default_factory=dict, repr=False)

    def check_bounds(self, z: float = Z_THRESHOLD) -> list:
        return [b.evaluate(self, z) for b in self.bounds]

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.check_bounds())

    def to_dict(self) -> dict:
        return jsonable({
            "name": self.name,
            "fingerprint": self.fingerprint,
            "n_samples": self.n_samples,
            "ess": self.ess,
            "estimates": self.estimates,
            "se": self.se,
            "bounds": [b.to_dict() for b in self.bounds],
            "checks": self.check_bounds(),
            "meta": self.meta,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ObservableReport":
        bounds = []
        for b in data.get("bounds", []):
            b = dict(b)
            for key in ("limit", "se", "atol"):
                b[key] = _num(b[key])
            bounds.append(BoundCheck(**b))
        return cls(
            name=data["name"],
            estimates=data["estimates"],
            se=data.get("se", {}),
            n_samples=data.get("n_samples", 0),
            ess=data.get("ess", 0.0),
            fingerprint=data.get("fingerprint", ""),
            bounds=bounds,
            meta=data.get("meta", {}),
        )

    def table_csv(self, name: str) -> str:
        header, rows = self.tables[name]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
        return buf.getvalue()


def _num(v):
    if v is None:
        return math.nan
    return float(v)


# ---------------------------------------------------------------- boson numbers


def cross_energies(samples: SampleSet, table: WTable) -> np.ndarray:
    """Per-sample cross half-line energy D on the bulk window (cached)."""
    key = ("D", id(table))
    if key in samples.cache:
        return samples.cache[key]
    if table.is_zero:
        D = np.zeros(samples.n)
    else:
        lag = table.lag_table(samples.dt)
        M = lag.shape[0] - 1
        A = int(round(samples.bulk_half_width / samples.dt))
        c = samples.center
        inv_dr = 1.0 / table.dr
        D = np.empty(samples.n)
        for i in range(samples.n):
            D[i], far = _kernels.cross_energy(samples.paths[i], c, A, M, lag, inv_dr, samples.dt)
            if far:
                raise ValueError(f"sample {i} has separations beyond the table r_max={table.r_max}")
    samples.cache[key] = D
    return D


def _poisson_terms(D: np.ndarray, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logD = np.where(D[:, None] > 0, np.log(np.maximum(D[:, None], 1e-300)), -np.inf)
        out = np.exp(n[None, :] * logD - D[:, None] - gammaln(n + 1)[None, :])
    out[:, 0] = np.exp(-D)
    return out


def estimate_pn(samples: SampleSet, table: WTable, n_max: int, constants: ModelConstants,
                eps_disc: float = 0.0) -> ObservableReport:
    """Boson number distribution ``p_n = E[D^n e^{-D} / n!]``.

    Bounds: the superexponential bound per sample (deterministic), the
    pathwise bound ``D <= C_rho (1 + eps_disc)``, normalization, and, when the
    table certifies ``W < 0`` everywhere, ``p_n >= E[D]^n e^{-C_rho} / n!``.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    D = cross_energies(samples, table)
    terms = _poisson_terms(D, n_max)
    p, se, ess_ = mean_se(terms, samples.chain_ids)
    c = constants.c_rho
    n = np.arange(n_max + 1)
    upper = np.exp(n * math.log(c) + c - gammaln(n + 1)) if c > 0 else np.where(n == 0, 1.0, 0.0)
    max_term = terms.max(axis=0)
    mean_D, se_D, _ = mean_se(D, samples.chain_ids)
    total, se_total, _ = mean_se(terms.sum(axis=1), samples.chain_ids)
    estimates = {
        "p_n": p,
        "max_sample_term": max_term,
        "superexp_upper": upper,
        "max_D": float(D.max()),
        "mean_D": mean_D,
        "sum_p": total,
    }
    bounds = []
    for k in range(n_max + 1):
        bounds.append(BoundCheck(f"superexp[n={k}]", "upper", "max_sample_term", float(upper[k]),
                                 0.0, 1e-12 * upper[k], k))
    bounds.append(BoundCheck("pathwise D <= C_rho(1+eps_disc)", "upper", "max_D",
                             c * (1.0 + eps_disc), 0.0, 1e-12 * max(c, 1.0)))
    bounds.append(BoundCheck("normalization", "upper", "sum_p", 1.0, se_total, 1e-12))
    meta = {"c_rho": c, "eps_disc": eps_disc, "w_negative_everywhere": table.w_negative_everywhere,
            "lower_bound_enabled": bool(table.w_negative_everywhere and not table.is_zero)}
    if meta["lower_bound_enabled"]:
        lower = np.exp(n * math.log(max(mean_D, 1e-300)) - c - gammaln(n + 1))
        lower[0] = math.exp(-c)
        estimates["fockcomp_lower"] = lower
        for k in range(n_max + 1):
            bounds.append(BoundCheck(f"fockcomp_lower[n={k}]", "lower", "p_n", float(lower[k]),
                                     float(se[k]), 0.0, k))
    rows = [[k, p[k], se[k], upper[k]] for k in range(n_max + 1)]
    return ObservableReport(
        name="boson_number_distribution",
        estimates=estimates,
        se={"p_n": se, "mean_D": se_D, "sum_p": se_total},
        n_samples=samples.n,
        ess=float(np.min(ess_)) if np.ndim(ess_) else float(ess_),
        fingerprint=samples.fingerprint,
        bounds=bounds,
        meta=meta,
        tables={"p_n": (["n", "p_n", "se", "superexp_upper"], rows)},
        per_sample={"D": D, "terms": terms},
    )


# ------------------------------------------------------------ momentum density


def _bin_rule(edges, nodes_per_bin, dim):
    x, w = np.polynomial.legendre.leggauss(nodes_per_bin)
    a = np.asarray(edges[:-1])[:, None]
    b = np.asarray(edges[1:])[:, None]
    k = (0.5 * (a + b) + 0.5 * (b - a) * x[None, :])
    wk = 0.5 * (b - a) * w[None, :] * sphere_area(dim) * k ** (dim - 1)
    return k, wk  # (n_bins, n_nodes)


def _pair_kernel_sums(samples: SampleSet, table: WTable, k_flat: np.ndarray, omega: np.ndarray,
                      A: int, M: int) -> np.ndarray:
    out = np.zeros((samples.n, k_flat.size))
    c = samples.center
    for i in range(samples.n):
        _kernels.momentum_accumulate(samples.paths[i], c, A, M, k_flat, omega, samples.dt, samples.dim, out[i])
    return out


def estimate_momentum_density(samples: SampleSet, table: WTable, model: ModelSpec, k_edges,
                              nodes_per_bin: int = 6) -> ObservableReport:
    """Expected boson number density at momentum ``|k|``, averaged over radial bins.

    Per sample: ``|rho|^2/(2 omega) sum_{a,b} w_a w_b dt^2 e^{-omega (a+b) dt}
    K_d(|k| |q_b - q_{-a}|)`` over the bulk quadrant ``0 <= a, b <= A``.  The
    table only supplies provenance (its lag cutoff is recorded).  The band
    ``(1 - C k^2) u(k) <= n(k) <= u(k)`` is evaluated with the same
    discrete time weights (``u`` is the constant-path value) and, for
    reference, with the continuum ``u(k) = |rho|^2 / (2 omega^3)``; ``C`` is
    the sampled ``E|q_0|^2``.
    """
    k_edges = np.asarray(k_edges, dtype=float)
    if np.any(np.diff(k_edges) <= 0) or k_edges[0] < 0:
        raise ValueError("k bin edges must be increasing and >= 0")
    d = model.dimension
    kk, wk = _bin_rule(k_edges, nodes_per_bin, d)
    k_flat = kk.ravel()
    om = model.omega(k_flat)
    rho2 = model.rho(k_flat) ** 2
    pref = rho2 / (2.0 * om)
    A = int(round(samples.bulk_half_width / samples.dt))
    # each mode decays at its own rate, so the time sums run over the whole bulk quadrant
    M = 2 * A
    n_bins = k_edges.size - 1
    vol = (wk.sum(axis=1))
    key = ("kernel_sums", id(table), k_edges.tobytes(), nodes_per_bin)
    if key in samples.cache:
        S = samples.cache[key]
    else:
        S = _pair_kernel_sums(samples, table, k_flat, om, A, M)
        samples.cache[key] = S
    # constant-path sums: same lag set with K_d = 1
    S0 = np.zeros(k_flat.size)
    _kernels.momentum_accumulate(np.zeros((2 * A + 1, d)), A, A, M, k_flat, om, samples.dt, d, S0)
    if model.form_factor.amplitude == 0.0:
        per_node = np.zeros_like(S)
    else:
        per_node = S * pref[None, :]
    upper_node = pref * S0
    cont_node = rho2 / (2.0 * om**3)
    # bin averages (density) and bin integrals
    per_bin_int = (per_node.reshape(samples.n, n_bins, -1) * wk[None]).sum(axis=2)
    per_bin = per_bin_int / vol[None, :]
    upper_bin = (upper_node.reshape(n_bins, -1) * wk).sum(axis=1) / vol
    cont_bin = (cont_node.reshape(n_bins, -1) * wk).sum(axis=1) / vol
    k2_upper_bin = ((k_flat**2 * upper_node).reshape(n_bins, -1) * wk).sum(axis=1) / vol
    k2_cont_bin = ((k_flat**2 * cont_node).reshape(n_bins, -1) * wk).sum(axis=1) / vol
    q2 = np.sum(samples.q0**2, axis=1)
    C, C_se, _ = mean_se(q2, samples.chain_ids)
    lower_bin = upper_bin - C * k2_upper_bin
    lower_cont = cont_bin - C * k2_cont_bin
    ids = samples.chain_ids
    nbar, nse, ness = mean_se(per_bin, ids)
    # per-sample slack series so the lower check carries the uncertainty of C
    slack_lower = per_bin - (upper_bin[None, :] - q2[:, None] * k2_upper_bin[None, :])
    _, slack_se, _ = mean_se(slack_lower, ids)
    integral_series = per_bin_int.sum(axis=1)
    total, total_se, _ = mean_se(integral_series, ids)
    estimates = {
        "k_lo": k_edges[:-1],
        "k_hi": k_edges[1:],
        "n_k": nbar,
        "upper": upper_bin,
        "lower": lower_bin,
        "upper_continuum": cont_bin,
        "lower_continuum": lower_cont,
        "bin_integral": (per_bin_int.mean(axis=0)),
        "integral": total,
        "C_q2": C,
    }
    se = {"n_k": nse, "lower_slack": slack_se, "integral": total_se, "C_q2": C_se}
    bounds = []
    for b in range(n_bins):
        tol_b = 1e-9 * abs(upper_bin[b])
        bounds.append(BoundCheck(f"n_k upper[bin={b}]", "upper", "n_k", float(upper_bin[b]),
                                 float(nse[b]), tol_b, b))
        bounds.append(BoundCheck(f"n_k lower[bin={b}]", "lower", "n_k", float(lower_bin[b]),
                                 float(slack_se[b]), tol_b, b))
    rows = [[k_edges[b], k_edges[b + 1], nbar[b], nse[b], lower_bin[b], upper_bin[b], lower_cont[b], cont_bin[b]]
            for b in range(n_bins)]
    return ObservableReport(
        name="momentum_density",
        estimates=estimates,
        se=se,
        n_samples=samples.n,
        ess=float(np.min(ness)),
        fingerprint=samples.fingerprint,
        bounds=bounds,
        meta={"nodes_per_bin": nodes_per_bin, "bulk_steps": A, "table_tau_max": table.tau_max},
        tables={"n_k": (["k_lo", "k_hi", "n_k", "se", "lower", "upper", "lower_continuum",
                         "upper_continuum"], rows)},
        per_sample={"integral": integral_series, "per_bin": per_bin},
    )


def estimate_mean_boson_number(samples: SampleSet, table: WTable, momentum: ObservableReport | None = None,
                               pn: ObservableReport | None = None, n_max: int = 60,
                               constants: ModelConstants | None = None,
                               atol: float | None = None) -> ObservableReport:
    """Three estimators of the mean boson number and their pairwise z-scores.

    ``E[D]``; ``sum_n n p_n`` (truncated at ``n_max``); and the momentum
    density integrated over its bins (when a momentum report covering the
    support is given).  ``atol`` is the deterministic allowance between
    routes (lag truncation of D plus time discretization); the default is
    ``1e-6`` relative.
    """
    ids = samples.chain_ids
    D = cross_energies(samples, table)
    routes = {"mean_D": D}
    if pn is not None and pn.per_sample.get("terms", np.empty((0, 0))).shape[1] > n_max:
        terms = pn.per_sample["terms"]
    else:
        terms = _poisson_terms(D, n_max)
    routes["sum_n_pn"] = terms @ np.arange(terms.shape[1])
    if momentum is not None:
        routes["momentum_integral"] = momentum.per_sample["integral"]
    est, se = {}, {}
    for k, v in routes.items():
        m, s, _ = mean_se(v, ids)
        est[k] = m
        se[k] = s
    names = list(routes)
    bounds = []
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            a, b = names[i], names[j]
            key = f"diff[{a},{b}]"
            est[key] = est[a] - est[b]
            comb = math.hypot(se[a], se[b])
            se[key] = comb
            tol = atol if atol is not None else 1e-6 * max(abs(est[a]), abs(est[b]), 1e-12) + 1e-12
            bounds.append(BoundCheck(f"agree {a} vs {b}", "equal", key, 0.0, comb, tol))
    if constants is not None:
        est["c_rho"] = constants.c_rho
    _, _, ess_ = mean_se(D, ids)
    return ObservableReport("mean_boson_number", est, se, samples.n, float(ess_), samples.fingerprint,
                            bounds, meta={"n_max": int(terms.shape[1] - 1)})


# ------------------------------------------------------------------ field


def _radial_nodes(model: ModelSpec, n_panels: int = 12, order: int = 12, support=None):
    lo, hi = model.form_factor.support(1e-12) if support is None else support
    return radial_rule(lo, hi, model.dimension, n_panels, order)


def path_field_functional(samples: SampleSet, model: ModelSpec, ghat: Callable, n_panels: int = 12,
                          order: int = 12) -> np.ndarray:
    """Per-sample ``Phi_g = sum_s w_s dt int rho g / (2 omega) e^{-omega|s|} K_d(|k||q_s|) dk``.

    The s-sum runs over the bulk window with trapezoid weights.
    """
    key = ("Phi", id(ghat), n_panels, order)
    if key in samples.cache:
        return samples.cache[key]
    k, wk = _radial_nodes(model, n_panels, order)
    om = model.omega(k)
    coef = wk * model.rho(k) * np.real(ghat(k)) / (2.0 * om)
    A = int(round(samples.bulk_half_width / samples.dt))
    c = samples.center
    s = samples.dt * np.arange(-A, A + 1)
    wt = np.full(s.size, samples.dt)
    wt[0] = wt[-1] = 0.5 * samples.dt
    decay = np.exp(-np.outer(np.abs(s), om))
    out = np.empty(samples.n)
    if not np.any(coef):
        out[:] = 0.0
    else:
        for i in range(samples.n):
            q = samples.paths[i, c - A:c + A + 1]
            radii = np.sqrt(np.sum(q * q, axis=1))
            out[i] = _kernels.radial_time_functional(radii, wt, decay, k, coef, samples.dim)
    samples.cache[key] = out
    return out


def free_fluct(model: ModelSpec, ghat: Callable, support=None, n_panels: int = 12, order: int = 12) -> float:
    """``int |g|^2 / (2 omega) dk`` over the probe support."""
    k, wk = _radial_nodes(model, n_panels, order, support)
    return float(np.sum(wk * np.abs(ghat(k)) ** 2 / (2.0 * model.omega(k))))


def estimate_field_mean(samples: SampleSet, model: ModelSpec, probe_k=None, ghat: Callable | None = None,
                        n_panels: int = 12, order: int = 12) -> ObservableReport:
    """Mean field per momentum mode and/or smeared with a radial test function.

    Per mode: ``-rho(k) phi(k) / ((2 pi)^{d/2} omega^2)`` with
    ``phi(k) = E[K_d(|k||q_0|)]`` the empirical characteristic function.
    Smeared: the path functional ``-E[Phi_g]`` and, for comparison, the
    stationary reduction ``-int rho g phi / omega^2 dk``.
    """
    d = model.dimension
    ids = samples.chain_ids
    r0 = np.sqrt(np.sum(samples.q0**2, axis=1))
    est, se = {}, {}
    bounds = []
    ess_val = float(samples.n)
    if probe_k is not None:
        kp = np.atleast_1d(np.asarray(probe_k, dtype=float))
        phi_s = angular_kernel(d, np.outer(r0, kp))
        pref = -model.rho(kp) / ((2.0 * math.pi) ** (d / 2) * model.omega(kp) ** 2)
        vals = phi_s * pref[None, :]
        m, s, e = mean_se(vals, ids)
        phi, phi_se, _ = mean_se(phi_s, ids)
        est.update({"k": kp, "xi_k": m, "char_fn": phi})
        se.update({"xi_k": s, "char_fn": phi_se})
        ess_val = float(np.min(e))
    if ghat is not None:
        Phi = path_field_functional(samples, model, ghat, n_panels, order)
        m, s, e = mean_se(-Phi, ids)
        k, wk = _radial_nodes(model, n_panels, order)
        coef = wk * model.rho(k) * np.real(ghat(k)) / model.omega(k) ** 2
        stat = -(angular_kernel(d, np.outer(r0, k)) @ coef)
        m2, s2, _ = mean_se(stat, ids)
        diff = m - m2
        comb = math.hypot(s, s2)
        est.update({"xi_g_path": m, "xi_g_stationary": m2, "diff_path_stationary": diff})
        se.update({"xi_g_path": s, "xi_g_stationary": s2, "diff_path_stationary": comb})
        bounds.append(BoundCheck("path vs stationary field mean", "equal", "diff_path_stationary", 0.0, comb,
                                 _window_atol(model, samples, ghat, n_panels, order)))
        ess_val = float(e)
    return ObservableReport("field_mean", est, se, samples.n, ess_val, samples.fingerprint, bounds)


def _window_atol(model, samples, ghat, n_panels, order):
    # e^{-omega |s|} truncated at the bulk edge plus O(dt^2) time discretization of the s-integral
    k, wk = _radial_nodes(model, n_panels, order)
    om = model.omega(k)
    base = np.abs(wk * model.rho(k) * np.real(ghat(k))) / om**2
    T = samples.bulk_half_width
    dt = samples.dt
    return float(np.sum(base * (np.exp(-om * T) + (om * dt) ** 2 / 12.0))) + 1e-12


def estimate_field_variance(samples: SampleSet, model: ModelSpec, ghat: Callable, n_panels: int = 12,
                            order: int = 12) -> ObservableReport:
    """``Var = int |g|^2/(2 omega) dk + Var(Phi_g)``, checked against the free baseline."""
    ids = samples.chain_ids
    Phi = path_field_functional(samples, model, ghat, n_panels, order)
    F = free_fluct(model, ghat, None, n_panels, order)
    mPhi, _, _ = mean_se(Phi, ids)
    second, second_se, _ = mean_se(F + Phi**2, ids)
    centred = (Phi - mPhi) ** 2
    excess, excess_se, e = mean_se(centred, ids)
    n = Phi.size
    var_phi = excess * n / (n - 1) if n > 1 else 0.0
    var = F + var_phi
    est = {"variance": var, "free_baseline": F, "second_moment": second, "mean": -mPhi, "excess": var_phi}
    se = {"variance": excess_se, "second_moment": second_se, "excess": excess_se}
    bounds = [BoundCheck("variance >= free baseline", "lower", "variance", F, excess_se, 1e-12 * max(F, 1.0))]
    return ObservableReport("field_variance", est, se, samples.n, float(e), samples.fingerprint, bounds)


def estimate_mgf(samples: SampleSet, model: ModelSpec, ghat: Callable, betas: Sequence[float],
                 n_panels: int = 12, order: int = 12) -> ObservableReport:
    """``M(beta) = E[exp(beta^2 F / 2 - beta Phi_g)]`` with ``F`` the free fluctuation."""
    ids = samples.chain_ids
    Phi = path_field_functional(samples, model, ghat, n_panels, order)
    F = free_fluct(model, ghat, None, n_panels, order)
    betas = np.asarray(betas, dtype=float)
    vals = np.exp(0.5 * betas[None, :] ** 2 * F - betas[None, :] * Phi[:, None])
    M, s, e = mean_se(vals, ids)
    M = np.where(betas == 0.0, 1.0, M)
    return ObservableReport("mgf", {"beta": betas, "M": M, "free_fluct": F}, {"M": s}, samples.n,
                            float(np.min(e)), samples.fingerprint)


def mgf_derivatives(samples: SampleSet, model: ModelSpec, ghat: Callable, h: float = 1e-3,
                    n_panels: int = 12, order: int = 12) -> dict:
    """Five-point central differences of M at 0 versus the direct moment estimators."""
    betas = h * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    M = estimate_mgf(samples, model, ghat, betas, n_panels, order).estimates["M"]
    d1 = (M[0] - 8 * M[1] + 8 * M[3] - M[4]) / (12 * h)
    d2 = (-M[0] + 16 * M[1] - 30 * M[2] + 16 * M[3] - M[4]) / (12 * h * h)
    mean = estimate_field_mean(samples, model, ghat=ghat, n_panels=n_panels, order=order)
    var = estimate_field_variance(samples, model, ghat, n_panels, order)
    return {
        "M0": float(M[2]),
        "d1": float(d1),
        "d2": float(d2),
        "mean": mean.estimates["xi_g_path"],
        "mean_se": mean.se["xi_g_path"],
        "second_moment": var.estimates["second_moment"],
        "second_moment_se": var.se["second_moment"],
        "variance_fd": float(d2 - d1 * d1),
        "variance": var.estimates["variance"],
        "variance_se": var.se["variance"],
    }


# ---------------------------------------------------------- position density


@dataclass(frozen=True)
class WholeSpace:
    """``g = 1``: the multiplier is the identity and the count is the total boson number."""

    def l1_norm(self, dim):
        return math.inf


@dataclass(frozen=True)
class Ball:
    """Indicator of the ball ``|x| < radius``."""

    radius: float

    def l1_norm(self, dim):
        R = self.radius
        return 2.0 * R if dim == 1 else 4.0 * math.pi * R**3 / 3.0

    def ghat(self, p, dim):
        """Symmetric-convention Fourier transform at ``|p|``."""
        p = np.asarray(p, dtype=float)
        R = self.radius
        x = p * R
        if dim == 1:
            with np.errstate(invalid="ignore", divide="ignore"):
                v = np.where(p > 0, 2.0 * np.sin(x) / np.where(p > 0, p, 1.0), 2.0 * R)
            return v / math.sqrt(2.0 * math.pi)
        with np.errstate(invalid="ignore", divide="ignore"):
            small = x < 1e-3
            xs = np.where(small, 1.0, x)
            big = 4.0 * math.pi * (np.sin(xs) - xs * np.cos(xs)) / np.where(small, 1.0, p) ** 3
            ser = 4.0 * math.pi * R**3 * (1.0 / 3.0 - x * x / 30.0)
            v = np.where(small, ser, big)
        return v / (2.0 * math.pi) ** 1.5


def estimate_position_boson_density(samples: SampleSet, model: ModelSpec, region, constants: ModelConstants,
                                    grid_kwargs: dict | None = None, max_samples: int = 200,
                                    budget: int = 2_000_000) -> ObservableReport:
    """Expected boson number in a region, ``E[<f^-, A_g f^+>_K]``.

    ``A_g`` multiplies by ``g`` in position space; on the mode grid it acts
    as ``(A f)(k_j) = (2 pi)^{-d/2} sum_l g^(k_j - k_l) f(k_l) w_l``.  The
    analytic bound ``C_1 C_2 ||g||_1 / (2 (2 pi)^d)`` is attached for finite
    regions.  ``budget`` caps the number of matrix entries (grid size squared).
    """
    d = model.dimension
    kw = {"n_radial_panels": 3, "radial_order": 4, "n_polar": 8, "n_azimuth": 12}
    if grid_kwargs:
        kw.update(grid_kwargs)
    grid = mode_grid(model, **kw)
    n = grid.size
    whole = isinstance(region, WholeSpace)
    if not whole and n * n > budget:
        raise LatticeBudgetExceeded(f"mode lattice of {n} nodes needs {n * n} matrix entries > budget {budget}")
    sub = samples.thinned(max_samples)
    om = model.omega(grid.radius)
    kinner_w = grid.weights / (2.0 * om)
    if not whole:
        diff = grid.nodes[:, None, :] - grid.nodes[None, :, :]
        p = np.sqrt(np.sum(diff * diff, axis=-1))
        Amat = region.ghat(p, d) * grid.weights[None, :] / (2.0 * math.pi) ** (d / 2)
    vals = np.empty(sub.n)
    for i in range(sub.n):
        fm, fp = compute_fpm(sub.path(i), model, grid, sub.bulk_half_width)
        Af = fp.values if whole else Amat @ fp.values
        vals[i] = float(np.real(np.sum(kinner_w * fm.values * np.conj(Af))))
    m, s, e = mean_se(vals, sub.chain_ids)
    est = {"value": m, "grid_size": n}
    bounds = []
    l1 = region.l1_norm(d)
    if math.isfinite(l1):
        bound = constants.c1 * constants.c2 * l1 / (2.0 * (2.0 * math.pi) ** d)
        est["bound"] = bound
        bounds.append(BoundCheck("position density bound", "upper", "value", bound, s, 0.0))
    return ObservableReport("position_boson_density", est, {"value": s}, sub.n, float(e), samples.fingerprint,
                            bounds, meta={"region": type(region).__name__, "grid": kw},
                            per_sample={"value": vals})


# ---------------------------------------------------------- particle density


@dataclass
class DensityHistogram:
    edges: np.ndarray
    counts: np.ndarray
    density: np.ndarray
    se: np.ndarray
    dim: int
    ess: float

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def shell_volume(self) -> np.ndarray:
        a, b = self.edges[:-1], self.edges[1:]
        if self.dim == 1:
            return 2.0 * (b - a)
        return 4.0 * math.pi / 3.0 * (b**3 - a**3)

    def normalization(self) -> float:
        return float(np.sum(self.density * self.shell_volume))


@dataclass
class DecayFit:
    amplitude: float
    delta: float
    power: float
    residual: float
    n_bins: int
    cov: np.ndarray = field(repr=False, default=None)

    @property
    def power_se(self) -> float:
        return float(math.sqrt(self.cov[2, 2])) if self.cov is not None else math.nan

    @property
    def delta_se(self) -> float:
        return float(math.sqrt(self.cov[1, 1])) if self.cov is not None else math.nan


def estimate_particle_density(samples: SampleSet, bins, min_ess: float = 1000.0) -> DensityHistogram:
    """Radial histogram of ``|q_0|`` normalized to a density in R^d."""
    edges = np.asarray(bins, dtype=float)
    r0 = np.sqrt(np.sum(samples.q0**2, axis=1))
    counts, _ = np.histogram(r0, edges)
    ind = (r0[:, None] >= edges[None, :-1]) & (r0[:, None] < edges[None, 1:])
    frac, se, e = mean_se(ind.astype(float), samples.chain_ids)
    ess_tot = float(np.max(e)) if np.size(e) else 0.0
    if samples.pinned or np.all(r0 == 0.0):
        ess_tot = 1.0
    if ess_tot < min_ess:
        raise InsufficientData(f"particle density needs >= {min_ess:g} effective samples, got {ess_tot:.0f}")
    hist = DensityHistogram(edges, counts, frac, se, samples.dim, ess_tot)
    vol = hist.shell_volume
    hist.density = frac / vol
    hist.se = se / vol
    return hist


def fit_decay(hist: DensityHistogram, r_min: float | None = None, min_count: int = 50) -> DecayFit:
    """Fit ``log chi(r) = log D - delta r^p`` on bins with at least ``min_count`` counts."""
    r = hist.centers
    ok = hist.counts >= min_count
    if r_min is not None:
        ok &= r >= r_min
    ok &= hist.density > 0
    if np.count_nonzero(ok) < 4:
        raise InsufficientData("not enough populated tail bins for a decay fit")
    x = r[ok]
    y = np.log(hist.density[ok])
    sy = hist.se[ok] / hist.density[ok]
    sy = np.where(sy > 0, sy, np.max(sy[sy > 0]) if np.any(sy > 0) else 1.0)

    def model(r, logD, delta, p):
        return logD - delta * r**p

    p0 = (y[0] + x[0] ** 2, 1.0, 2.0)
    try:
        popt, pcov = curve_fit(model, x, y, p0=p0, sigma=sy, absolute_sigma=True, maxfev=20000)
    except RuntimeError as exc:
        raise InsufficientData(f"decay fit did not converge: {exc}") from exc
    resid = float(np.sqrt(np.mean(((y - model(x, *popt)) / sy) ** 2)))
    if not np.all(np.isfinite(popt)):
        raise InsufficientData("decay fit returned non-finite parameters")
    return DecayFit(float(math.exp(popt[0])), float(popt[1]), float(popt[2]), resid, int(x.size), pcov)


# ----------------------------------------------------------------- ledger


def verify_bounds(reports: Sequence[ObservableReport], z: float = Z_THRESHOLD) -> dict:
    """Re-evaluate every attached bound; overall pass iff none is violated beyond ``z`` SE."""
    reports = list(reports)
    fps = {r.fingerprint for r in reports}
    if len(fps) > 1:
        raise FingerprintMismatch(f"reports carry different fingerprints: {sorted(fps)}")
    checks = []
    for r in reports:
        for c in r.check_bounds(z):
            c = dict(c)
            c["report"] = r.name
            checks.append(c)
    return jsonable({
        "fingerprint": fps.pop() if fps else "",
        "z_threshold": z,
        "passed": all(c["passed"] for c in checks),
        "n_checks": len(checks),
        "n_failed": sum(1 for c in checks if not c["passed"]),
        "checks": checks,
    })
