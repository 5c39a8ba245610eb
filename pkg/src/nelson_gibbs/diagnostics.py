"""Autocorrelation, effective sample size and ESS-corrected standard errors."""

from __future__ import annotations

import numpy as np

__all__ = ["autocorrelation", "tau_int", "ess", "mean_se", "TooFewSamples"]


class TooFewSamples(ValueError):
    pass


def autocorrelation(x) -> np.ndarray:
    """Normalized autocorrelation function via FFT (biased estimator)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    y = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0.0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    return acov / acov[0]


def tau_int(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time ``sum_{t>=1} rho_t`` with Sokal's window.

    The window is the smallest M with ``M >= c (1 + 2 sum_{t<=M} rho_t)``.
    With this convention an AR(1) series has ``tau_int = rho / (1 - rho)``
    and ``ESS = N / (2 tau_int + 1)``.  A constant series returns ``inf``.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise TooFewSamples("need at least two samples")
    if np.all(x == x[0]):
        return float("inf")
    rho = autocorrelation(x)
    partial = np.cumsum(rho[1:])
    full = 1.0 + 2.0 * partial
    m = np.arange(1, x.size)
    ok = m >= c * full
    M = int(np.argmax(ok)) if np.any(ok) else x.size - 2
    return max(0.0, float(partial[M]))


def ess(x, c: float = 5.0) -> float:
    """``N / (2 tau_int + 1)``; 1 for a constant series."""
    x = np.asarray(x, dtype=float)
    t = tau_int(x, c)
    if not np.isfinite(t):
        return 1.0
    return min(float(x.size), x.size / (2.0 * t + 1.0))


def mean_se(x, chains=None):
    """Mean and ESS-corrected standard error of a (possibly multi-chain) series.

    ``x`` has samples on axis 0 (further axes are treated independently);
    ``chains`` labels the chain of each sample.  Each chain contributes its
    own autocorrelation correction; chains are pooled by sample count.
    Returns ``(mean, se, ess)``.
    """
    x = np.asarray(x, dtype=float)
    if chains is None:
        chains = np.zeros(x.shape[0], dtype=int)
    chains = np.asarray(chains)
    flat = x.reshape(x.shape[0], -1)
    N = flat.shape[0]
    mean = flat.mean(axis=0)
    var_of_mean = np.zeros(flat.shape[1])
    ess_tot = np.zeros(flat.shape[1])
    for c in np.unique(chains):
        sel = flat[chains == c]
        n = sel.shape[0]
        if n < 2:
            continue
        for j in range(flat.shape[1]):
            col = sel[:, j]
            v = col.var(ddof=1)
            if v == 0.0:
                ess_tot[j] += 1.0
                continue
            t = tau_int(col)
            var_of_mean[j] += (n / N) ** 2 * v * (2.0 * t + 1.0) / n
            ess_tot[j] += n / (2.0 * t + 1.0)
    se = np.sqrt(var_of_mean)
    shape = x.shape[1:]
    if shape == ():
        return float(mean[0]), float(se[0]), float(ess_tot[0])
    return mean.reshape(shape), se.reshape(shape), ess_tot.reshape(shape)
