"""Closed-form reference values for degenerate limits of the engine.

The pinned particle (frozen at the origin) makes every boson statistic
exact: the number distribution is Poisson with mean C_rho.  Zero coupling
reduces the particle to the stationary Ornstein-Uhlenbeck process and the
field to the free Gaussian field.  For the massless shell form factor in
three dimensions the pair potential has an elementary antiderivative.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .model import ModelConstants, ModelSpec, compute_constants
from .quadrature import radial_quadrature

__all__ = [
    "OraclePrediction",
    "OutOfFamily",
    "pinned_predictions",
    "zero_coupling_predictions",
    "analytic_w",
    "ou_covariance",
    "ar1_tau_int",
    "poisson_pmf",
]


class OutOfFamily(ValueError):
    pass


@dataclass
class OraclePrediction:
    name: str
    values: dict
    applicability: str
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            return v

        return {"name": self.name, "applicability": self.applicability,
                "values": {k: conv(v) for k, v in self.values.items()}, "meta": self.meta}


def poisson_pmf(mean: float, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    if mean == 0.0:
        return (n == 0).astype(float)
    return np.exp(n * math.log(mean) - mean - gammaln(n + 1))


def ou_covariance(s: float, tau: float) -> float:
    """Stationary covariance per axis of ``dq = -sqrt(s) q dt + dB``.

    The ground state of ``-Delta/2 + s|q|^2/2`` has rate ``sqrt(s)``, so the
    covariance is ``exp(-sqrt(s)|tau|) / (2 sqrt(s))``; for ``s = 1`` this is
    ``exp(-|tau|)/2``.
    """
    if s <= 0:
        raise ValueError("stiffness must be positive")
    th = math.sqrt(s)
    return math.exp(-th * abs(tau)) / (2.0 * th)


def ar1_tau_int(rho: float) -> float:
    """Integrated autocorrelation time ``sum_{t>=1} rho^t`` of an AR(1) series."""
    if not -1.0 < rho < 1.0:
        raise ValueError("need |rho| < 1")
    return rho / (1.0 - rho)


def _probe_defaults(model: ModelSpec, probe_k):
    lo, hi = model.form_factor.support(1e-12)
    if probe_k is None:
        probe_k = [0.5 * (lo + hi)]
    return np.atleast_1d(np.asarray(probe_k, dtype=float))


def _field_integrals(model: ModelSpec, ghat, tol):
    lo, hi = model.form_factor.support(1e-12)
    d = model.dimension

    def mean_f(k):
        return np.real(ghat(k)) * model.rho(k) / model.omega(k) ** 2

    def var_f(k):
        return np.abs(ghat(k)) ** 2 / (2.0 * model.omega(k))

    return (-radial_quadrature(mean_f, lo, hi, d, tol),
            radial_quadrature(var_f, lo, hi, d, tol))


def pinned_predictions(model: ModelSpec, n_max: int = 10, probe_k=None, ghat=None,
                       constants: ModelConstants | None = None, tol: float = 1e-10) -> list:
    """Exact boson statistics for a particle frozen at the origin."""
    c = constants if constants is not None else compute_constants(model, tol)
    kp = _probe_defaults(model, probe_k)
    d = model.dimension
    om = model.omega(kp)
    rho = model.rho(kp)
    preds = [
        OraclePrediction("p_n", {"n": np.arange(n_max + 1), "p_n": poisson_pmf(c.c_rho, n_max)}, "pinned"),
        OraclePrediction("mean_boson_number", {"value": c.c_rho}, "pinned"),
        OraclePrediction("momentum_density", {"k": kp, "n_k": rho**2 / (2.0 * om**3)}, "pinned"),
        OraclePrediction("field_mean_mode",
                         {"k": kp, "xi_k": -rho / ((2.0 * math.pi) ** (d / 2) * om**2)}, "pinned"),
    ]
    if ghat is not None:
        mean, var = _field_integrals(model, ghat, tol)
        preds.append(OraclePrediction("field_mean", {"value": mean}, "pinned"))
        preds.append(OraclePrediction("field_variance", {"value": var, "free_baseline": var}, "pinned"))
    return preds


def zero_coupling_predictions(model: ModelSpec, n_max: int = 10, probe_k=None, ghat=None,
                              lags=(0.0, 0.5, 1.0, 2.0), tol: float = 1e-10) -> list:
    """Free field plus the uncoupled particle ground state."""
    if model.form_factor.amplitude != 0.0:
        raise OutOfFamily("zero-coupling predictions need amplitude 0")
    kp = _probe_defaults(model, probe_k)
    p = np.zeros(n_max + 1)
    p[0] = 1.0
    preds = [
        OraclePrediction("p_n", {"n": np.arange(n_max + 1), "p_n": p}, "zero-coupling"),
        OraclePrediction("mean_boson_number", {"value": 0.0}, "zero-coupling"),
        OraclePrediction("momentum_density", {"k": kp, "n_k": np.zeros_like(kp)}, "zero-coupling"),
        OraclePrediction("field_mean_mode", {"k": kp, "xi_k": np.zeros_like(kp)}, "zero-coupling"),
    ]
    if ghat is not None:
        d = model.dimension
        lo, hi = model.form_factor.support(1e-12)
        if not math.isfinite(hi):
            raise ValueError("probe support must be finite")
        var = radial_quadrature(lambda k: np.abs(ghat(k)) ** 2 / (2.0 * model.omega(k)), lo, hi, d, tol)
        preds.append(OraclePrediction("field_mean", {"value": 0.0}, "zero-coupling"))
        preds.append(OraclePrediction("field_variance", {"value": var, "free_baseline": var}, "zero-coupling"))
    if model.potential.kind == "harmonic":
        s = model.potential.stiffness
        preds.append(OraclePrediction(
            "ou_covariance",
            {"tau": list(lags), "cov": [ou_covariance(s, t) for t in lags]},
            "harmonic-reference",
            {"stationary_variance_per_axis": ou_covariance(s, 0.0)},
        ))
    return preds


def _check_family(model: ModelSpec):
    ff = model.form_factor
    if (model.dimension != 3 or model.dispersion.mass != 0.0 or ff.profile != "shell"
            or not math.isfinite(ff.uv_cutoff)):
        raise OutOfFamily("analytic W needs the massless d=3 shell form factor with a finite UV cutoff")


def _w_scalar(g, kap, K, r, tau):
    # below r K ~ 1e-7 the sinc correction is under 1e-14 relative; the Im/r form would cancel
    if r * K < 1e-7:
        if tau == 0.0:
            return -math.pi * g * g * (K * K - kap * kap) / 2.0
        def h(u):
            x = u * tau
            return math.exp(-x) * (1.0 + x)
        if K * tau < 1e-4:
            # (K^2 - kap^2)/2 - (K^3 - kap^3) tau / 3 + ...
            return -math.pi * g * g * ((K * K - kap * kap) / 2.0 - (K**3 - kap**3) * tau / 3.0)
        return -math.pi * g * g * (h(kap) - h(K)) / (tau * tau)
    z = complex(-tau, r)
    if abs(z) * K < 1e-6:
        integral = complex(K - kap, 0.0) + z * (K * K - kap * kap) / 2.0
    else:
        integral = (cmath.exp(z * K) - cmath.exp(z * kap)) / z
    return -(math.pi * g * g / r) * integral.imag


def analytic_w(model: ModelSpec, r, tau):
    """Closed-form pair potential for the massless three-dimensional shell.

    With ``rho = g`` on ``kappa <= |k| <= K`` the kernel is
    ``W(r, tau) = -(pi g^2 / r) Im int_kappa^K e^{(i r - tau) u} du`` and at
    ``r = 0`` the limit ``-pi g^2 [e^{-kappa tau}(1 + kappa tau) -
    e^{-K tau}(1 + K tau)] / tau^2``.
    """
    _check_family(model)
    g = model.form_factor.amplitude
    kap = model.form_factor.ir_cutoff
    K = model.form_factor.uv_cutoff
    r_arr, t_arr = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(tau, dtype=float))
    if np.any(r_arr < 0) or np.any(t_arr < 0):
        raise ValueError("need r >= 0 and tau >= 0")
    out = np.empty(r_arr.shape)
    for idx in np.ndindex(r_arr.shape):
        out[idx] = _w_scalar(g, kap, K, float(r_arr[idx]), float(t_arr[idx]))
    return out if out.ndim else float(out)
