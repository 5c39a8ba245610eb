"""Run configuration: a TOML file with flat typed sections.

Sections and keys (all optional; absent keys take the defaults below)::

    [model]        dimension, mass
    [form_factor]  profile, amplitude | c_rho_target, ir_cutoff, uv_cutoff, scale
    [potential]    kind, stiffness, coefficients, carmona_m, carmona_gamma, spectral_gap
    [sampler]      T, dt, tau_max, p_bead, p_block, p_shift, block_len, n_chains,
                   burn_in, n_samples, thin, margin, step, shift_step
    [table]        r_max, tol, tau_substeps, n_probes
    [observables]  select, n_max, k_edges, probe_k, probe, probe_scale, betas,
                   region_radius, position_max_samples, density_bins, density_r_max,
                   density_min_ess
    [tolerances]   quad_tol, eps_tail, z_threshold
    [run]          seed, threads, out

Unknown sections or keys are rejected.  ``uv_cutoff = "inf"`` is allowed.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from .model import Dispersion, ExternalPotential, FormFactor, ModelSpec, with_c_rho
from .sampler import SamplerConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "loads_config", "dumps_config", "OBSERVABLES", "SCHEMA"]

OBSERVABLES = (
    "pn",
    "mean_boson_number",
    "momentum_density",
    "field_mean",
    "field_variance",
    "mgf",
    "position_boson_density",
    "particle_density",
)

_OPT = object()  # marks optional keys without a default

# section -> key -> (type, default); float keys accept ints, list keys hold floats unless noted
SCHEMA: dict[str, dict[str, tuple]] = {
    "model": {"dimension": (int, 3), "mass": (float, 0.0)},
    "form_factor": {
        "profile": (str, "shell"),
        "amplitude": (float, 1.0),
        "c_rho_target": (float, _OPT),
        "ir_cutoff": (float, 0.5),
        "uv_cutoff": (float, 5.0),
        "scale": (float, 1.0),
    },
    "potential": {
        "kind": (str, "harmonic"),
        "stiffness": (float, 1.0),
        "coefficients": (list, _OPT),
        "carmona_m": (float, _OPT),
        "carmona_gamma": (float, _OPT),
        "spectral_gap": (float, _OPT),
    },
    "sampler": {
        "T": (float, 20.0),
        "dt": (float, 0.05),
        "tau_max": (float, _OPT),
        "p_bead": (float, 0.70),
        "p_block": (float, 0.25),
        "p_shift": (float, 0.05),
        "block_len": (int, 16),
        "n_chains": (int, 8),
        "burn_in": (int, 200),
        "n_samples": (int, 500),
        "thin": (int, 5),
        "margin": (float, 8.0),
        "step": (float, _OPT),
        "shift_step": (float, _OPT),
    },
    "table": {
        "r_max": (float, _OPT),
        "tol": (float, 1e-3),
        "tau_substeps": (int, 2),
        "n_probes": (int, 100),
    },
    "observables": {
        "select": ("strlist", list(OBSERVABLES)),
        "n_max": (int, 10),
        "k_edges": (list, _OPT),
        "probe_k": (list, _OPT),
        "probe": (str, "rho"),
        "probe_scale": (float, 1.0),
        "betas": (list, [-0.5, -0.25, 0.0, 0.25, 0.5]),
        "region_radius": (float, 1.0),
        "position_max_samples": (int, 50),
        "density_bins": (int, 30),
        "density_r_max": (float, _OPT),
        "density_min_ess": (float, 1000.0),
    },
    "tolerances": {"quad_tol": (float, 1e-10), "eps_tail": (float, 1e-4), "z_threshold": (float, 3.0)},
    "run": {"seed": (int, 0), "threads": (int, 1), "out": (str, "out")},
}

# keys that do not change any output byte and so stay out of the fingerprint
_NOT_FINGERPRINTED = {("run", "threads"), ("run", "out")}


class ConfigError(ValueError):
    pass


def _coerce(section: str, key: str, typ, value):
    where = f"[{section}].{key}"
    if typ is float:
        if isinstance(value, str) and value.strip().lower() in ("inf", "+inf"):
            return math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if typ == "strlist":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{where} must be a list of strings")
        return list(value)
    if typ is list:
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"{where} must be a list of numbers")
        return [float(v) for v in value]
    raise AssertionError(typ)


def _normalize(raw: dict) -> dict:
    """Fill defaults, type-check and reject unknown keys; returns plain nested dicts."""
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    out: dict[str, dict[str, Any]] = {}
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{section}] must be a table")
        bad = set(given) - set(keys)
        if bad:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(bad))}")
        sec = {}
        for key, (typ, default) in keys.items():
            if key in given:
                sec[key] = _coerce(section, key, typ, given[key])
            elif default is not _OPT:
                sec[key] = list(default) if isinstance(default, list) else default
        out[section] = sec
    if "c_rho_target" in out["form_factor"] and "amplitude" in raw.get("form_factor", {}):
        raise ConfigError("[form_factor] give either amplitude or c_rho_target, not both")
    if "c_rho_target" in out["form_factor"]:
        out["form_factor"].pop("amplitude")
    bad_obs = set(out["observables"]["select"]) - set(OBSERVABLES)
    if bad_obs:
        raise ConfigError(f"[observables].select has unknown names: {', '.join(sorted(bad_obs))}")
    if out["observables"]["probe"] not in ("rho", "gaussian"):
        raise ConfigError("[observables].probe must be 'rho' or 'gaussian'")
    return out


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated configuration; ``data`` is the canonical nested dict."""

    data: dict
    model: ModelSpec = field(repr=False)
    sampler: SamplerConfig = field(repr=False)

    @property
    def seed(self) -> int:
        return self.data["run"]["seed"]

    @property
    def threads(self) -> int:
        return self.data["run"]["threads"]

    @property
    def out(self) -> Path:
        return Path(self.data["run"]["out"])

    @property
    def observables(self) -> dict:
        return self.data["observables"]

    @property
    def tolerances(self) -> dict:
        return self.data["tolerances"]

    @property
    def table(self) -> dict:
        return self.data["table"]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def fingerprint(self) -> str:
        canon = {s: {k: v for k, v in sec.items() if (s, k) not in _NOT_FINGERPRINTED}
                 for s, sec in self.data.items()}
        blob = json.dumps(canon, sort_keys=True, separators=(",", ":"), default=_json_default)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, seed: int | None = None, threads: int | None = None,
                       out: str | None = None) -> "RunConfig":
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["run"]["seed"] = int(seed)
        if threads is not None:
            data["run"]["threads"] = int(threads)
        if out is not None:
            data["run"]["out"] = str(out)
        return _build(data)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.fingerprint() == other.fingerprint() \
            and self.data["run"] == other.data["run"]


def _json_default(x):
    raise TypeError(f"not serializable: {x!r}")


def _build(data: dict) -> RunConfig:
    m, ff, pot = data["model"], data["form_factor"], data["potential"]
    try:
        form = FormFactor(ff.get("amplitude", 1.0), ff["ir_cutoff"], ff["uv_cutoff"], ff["profile"], ff["scale"])
        kind = pot["kind"]
        meta = {k: pot.get(k) for k in ("carmona_m", "carmona_gamma", "spectral_gap")}
        if kind == "harmonic":
            potential = ExternalPotential.harmonic(pot["stiffness"])
            potential = replace(potential, **{k: v for k, v in meta.items() if v is not None})
        elif kind == "pinned":
            potential = ExternalPotential.pinned()
        elif kind == "general":
            if "coefficients" not in pot:
                raise ConfigError("[potential] kind='general' needs coefficients (radial polynomial)")
            potential = ExternalPotential.radial_polynomial(pot["coefficients"], **meta)
        else:
            raise ConfigError(f"[potential].kind must be harmonic, pinned or general, got {kind!r}")
        model = ModelSpec(m["dimension"], Dispersion(m["mass"]), form, potential)
        if "c_rho_target" in ff:
            model = with_c_rho(model, ff["c_rho_target"])
        s = data["sampler"]
        sampler = SamplerConfig(
            T=s["T"], dt=s["dt"], tau_max=s.get("tau_max"), eps_tail=data["tolerances"]["eps_tail"],
            p_bead=s["p_bead"], p_block=s["p_block"], p_shift=s["p_shift"], block_len=s["block_len"],
            n_chains=s["n_chains"], burn_in=s["burn_in"], n_samples=s["n_samples"], thin=s["thin"],
            seed=data["run"]["seed"], margin=s["margin"], pinned=(kind == "pinned"), step=s.get("step"),
            shift_step=s.get("shift_step"), r_max=data["table"].get("r_max"), table_tol=data["table"]["tol"],
            threads=data["run"]["threads"],
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    if data["run"]["threads"] < 1:
        raise ConfigError("[run].threads must be >= 1")
    return RunConfig(data, model, sampler)


def loads_config(text: str) -> RunConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    return _build(_normalize(raw))


def parse_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return loads_config(p.read_text())


def dumps_config(cfg: RunConfig) -> str:
    """TOML text that parses back to an equal configuration."""
    data = {}
    for s, sec in cfg.data.items():
        data[s] = {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in sec.items()}
    return tomli_w.dumps(data)
