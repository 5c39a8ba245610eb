"""Orchestration shared by the command line and the tests: table, sampling
and the configured set of observable reports."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import observables as obs
from .config import RunConfig
from .model import ModelConstants, compute_constants
from .pair_potential import WTable, half_line_tail_bound
from .quadrature import radial_quadrature
from .sampler import SampleSet, path_slack, prepare_table, run_chain

__all__ = ["Prepared", "prepare", "sample", "route_allowance", "make_probe", "default_k_edges", "particle_density_report",
           "estimate_all"]


@dataclass
class Prepared:
    config: RunConfig
    constants: ModelConstants
    table: WTable
    tau_max: float
    eps_disc: float


def prepare(cfg: RunConfig) -> Prepared:
    constants = compute_constants(cfg.model, cfg.tolerances["quad_tol"])
    if constants.ir_divergent:
        raise ValueError("the infrared integral diverges for this model; sampling is not meaningful")
    table, tau_max = prepare_table(cfg.model, cfg.sampler, constants.c_rho)
    eps = path_slack(table, cfg.sampler, constants.c_rho) if not table.is_zero else 0.0
    return Prepared(cfg, constants, table, tau_max, eps)


def route_allowance(prep: Prepared) -> float:
    """Deterministic gap allowed between the mean-boson-number routes.

    D drops lags beyond ``tau_max`` (at most the half-line tail bound) and
    carries the discretization slack; the momentum route drops times
    beyond the bulk edge.
    """
    c = prep.constants.c_rho
    if c == 0.0:
        return 1e-12
    model = prep.config.model
    tail = half_line_tail_bound(model, prep.tau_max)
    # pairs with a or b beyond the bulk edge B are missing from the momentum route
    B = prep.config.sampler.bulk_half_width
    lo, hi = model.form_factor.support(1e-12)
    edge = radial_quadrature(lambda k: model.rho(k) ** 2 / model.omega(k) ** 3 * np.exp(-model.omega(k) * B),
                             lo, hi, model.dimension, 1e-10)
    return tail + edge + prep.eps_disc * c + 1e-6 * c


def sample(prep: Prepared) -> SampleSet:
    return run_chain(prep.config.sampler, prep.config.model, prep.table, prep.config.fingerprint())


def make_probe(cfg: RunConfig):
    """Radial test function for the field observables."""
    model = cfg.model
    if cfg.observables["probe"] == "rho":
        def ghat(k):
            return model.rho(k)
    else:
        scale = cfg.observables["probe_scale"]

        def ghat(k):
            k = np.asarray(k, dtype=float)
            return np.exp(-k * k / (2.0 * scale * scale))
    return ghat


def default_k_edges(cfg: RunConfig, n_bins: int = 8) -> np.ndarray:
    if "k_edges" in cfg.observables:
        return np.asarray(cfg.observables["k_edges"], dtype=float)
    lo, hi = cfg.model.form_factor.support(1e-12)
    return np.linspace(lo, hi, n_bins + 1)


def particle_density_report(samples: SampleSet, cfg: RunConfig) -> obs.ObservableReport:
    """Radial particle density, its normalization and the tail decay fit."""
    o = cfg.observables
    pot = cfg.model.potential
    if "density_r_max" in o:
        r_max = o["density_r_max"]
    elif pot.kind == "harmonic":
        r_max = 5.0 / math.sqrt(2.0 * pot.ou_rate)
    else:
        r_max = 3.0
    edges = np.linspace(0.0, r_max, o["density_bins"] + 1)
    meta = {"r_max": r_max}
    try:
        hist = obs.estimate_particle_density(samples, edges, o["density_min_ess"])
    except obs.InsufficientData as exc:
        return obs.ObservableReport("particle_density", {}, {}, samples.n, 0.0, samples.fingerprint,
                                    meta={**meta, "skipped": str(exc)})
    est = {"r_lo": edges[:-1], "r_hi": edges[1:], "density": hist.density, "counts": hist.counts,
           "normalization": hist.normalization()}
    se_norm = float(np.sqrt(np.sum((hist.se * hist.shell_volume) ** 2)))
    se = {"density": hist.se, "normalization": se_norm}
    bounds = []
    # fraction of samples inside the histogram range
    est["captured_fraction"] = float(np.sum(hist.counts)) / samples.n
    try:
        fit = obs.fit_decay(hist)
        est.update({"decay_amplitude": fit.amplitude, "decay_delta": fit.delta, "decay_power": fit.power,
                    "decay_residual": fit.residual})
        se.update({"decay_delta": fit.delta_se, "decay_power": fit.power_se})
    except obs.InsufficientData as exc:
        meta["decay_fit"] = str(exc)
    rows = [[edges[i], edges[i + 1], hist.density[i], hist.se[i], int(hist.counts[i])]
            for i in range(edges.size - 1)]
    return obs.ObservableReport("particle_density", est, se, samples.n, hist.ess, samples.fingerprint, bounds,
                                meta, tables={"density": (["r_lo", "r_hi", "density", "se", "count"], rows)})


def estimate_all(prep: Prepared, samples: SampleSet) -> list:
    """Reports for every observable selected in the configuration, in a fixed order."""
    cfg = prep.config
    o = cfg.observables
    sel = set(o["select"])
    model = cfg.model
    ghat = make_probe(cfg)
    reports = []
    pn = mom = None
    if "pn" in sel or "mean_boson_number" in sel:
        pn = obs.estimate_pn(samples, prep.table, o["n_max"], prep.constants, prep.eps_disc)
        if "pn" in sel:
            reports.append(pn)
    if "momentum_density" in sel or "mean_boson_number" in sel:
        mom = obs.estimate_momentum_density(samples, prep.table, model, default_k_edges(cfg))
        if "momentum_density" in sel:
            reports.append(mom)
    if "mean_boson_number" in sel:
        lo, hi = model.form_factor.support(1e-12)
        edges = default_k_edges(cfg)
        covers = edges[0] <= lo + 1e-12 and edges[-1] >= hi - 1e-12
        reports.append(obs.estimate_mean_boson_number(samples, prep.table, mom if covers else None, pn,
                                                      constants=prep.constants, atol=route_allowance(prep)))
    if "field_mean" in sel:
        probe_k = o.get("probe_k")
        if probe_k is None:
            lo, hi = model.form_factor.support(1e-12)
            probe_k = list(np.linspace(lo, hi, 6)[1:-1])
        reports.append(obs.estimate_field_mean(samples, model, probe_k=probe_k, ghat=ghat))
    if "field_variance" in sel:
        reports.append(obs.estimate_field_variance(samples, model, ghat))
    if "mgf" in sel:
        rep = obs.estimate_mgf(samples, model, ghat, o["betas"])
        fd = obs.mgf_derivatives(samples, model, ghat)
        rep.estimates.update({"fd_d1": fd["d1"], "fd_d2": fd["d2"],
                              "diff_d1_mean": fd["d1"] - fd["mean"],
                              "diff_d2_second_moment": fd["d2"] - fd["second_moment"]})
        rep.bounds.append(obs.BoundCheck("mgf first derivative vs field mean", "equal", "diff_d1_mean", 0.0,
                                         fd["mean_se"], 1e-6))
        rep.bounds.append(obs.BoundCheck("mgf second derivative vs second moment", "equal",
                                         "diff_d2_second_moment", 0.0, fd["second_moment_se"], 1e-6))
        reports.append(rep)
    if "position_boson_density" in sel:
        reports.append(obs.estimate_position_boson_density(
            samples, model, obs.Ball(o["region_radius"]), prep.constants,
            max_samples=o["position_max_samples"]))
    if "particle_density" in sel:
        reports.append(particle_density_report(samples, cfg))
    for r in reports:
        r.meta.setdefault("config_fingerprint", cfg.fingerprint())
    return reports
