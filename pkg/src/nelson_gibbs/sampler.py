"""Metropolis sampler for the reference path measure and the Gibbs measure
``dN_T = Z^-1 exp(-E[q]) dN^0`` on a uniform time grid over ``[-T, T]``.

Reference measure ``N^0``:

* harmonic potential: the stationary discrete Ornstein-Uhlenbeck chain with
  rate ``theta = sqrt(stiffness)`` (exact);
* general potential: free Brownian ends weighted by ``exp(-sum w_i V(q_i) dt)``
  (trapezoid weights), i.e. the Feynman-Kac representation; observables are
  read only in the bulk window ``|t| <= T - margin``.

Moves: single-bead Gaussian steps, regeneration of a block of beads from
the reference measure conditioned on its neighbours, and rigid shifts of
the whole path.  Block regeneration leaves ``N^0`` invariant, so only the
interaction (and, in general mode, the potential) enters its acceptance.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numba
import numpy as np

from . import _kernels
from .diagnostics import TooFewSamples, ess, tau_int
from .model import ModelSpec, compute_constants
from .pair_potential import (
    WTable,
    choose_tau_max,
    discretization_slack,
    table_for_model,
)

__all__ = [
    "ParticlePath",
    "SamplerConfig",
    "SampleSet",
    "ChainState",
    "chain_generator",
    "sample_reference_harmonic",
    "reference_action",
    "gibbs_energy",
    "init_chain",
    "gibbs_step",
    "run_chain",
    "diagnostics",
    "prepare_table",
]


@dataclass(frozen=True, eq=False)
class ParticlePath:
    """Positions at ``t_i = -T + i dt``, i = 0..L-1, with L odd."""

    T: float
    dt: float
    positions: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.positions, dtype=float)
        if q.ndim != 2:
            raise ValueError("positions must have shape (L, d)")
        L = q.shape[0]
        if L % 2 != 1:
            raise ValueError("number of beads must be odd so that t = 0 is a node")
        if abs((L - 1) * self.dt - 2 * self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError("grid must satisfy L = 2T/dt + 1")
        if not np.all(np.isfinite(q)):
            raise ValueError("positions must be finite")
        object.__setattr__(self, "positions", q)

    @classmethod
    def constant(cls, T: float, dt: float, dim: int, point=None) -> "ParticlePath":
        L = grid_size(T, dt)
        q = np.zeros((L, dim))
        if point is not None:
            q[:] = np.asarray(point, dtype=float)
        return cls(T, dt, q)

    @property
    def L(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def center(self) -> int:
        return self.L // 2

    @property
    def times(self) -> np.ndarray:
        return -self.T + self.dt * np.arange(self.L)


def grid_size(T: float, dt: float) -> int:
    n = 2.0 * T / dt
    L = int(round(n))
    if abs(n - L) > 1e-9 * max(1.0, n):
        raise ValueError(f"2T/dt = {n} is not an integer")
    return L + 1


def trapezoid_weights(L: int) -> np.ndarray:
    w = np.ones(L)
    w[0] = w[-1] = 0.5
    return w


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    ``tau_max`` None means it is chosen from the tail budget
    ``eps_tail * C_rho``; ``margin`` is the boundary layer excluded from
    observables (bulk half-width ``T - margin``).
    """

    T: float = 20.0
    dt: float = 0.05
    tau_max: Optional[float] = None
    eps_tail: float = 1e-4
    p_bead: float = 0.70
    p_block: float = 0.25
    p_shift: float = 0.05
    block_len: int = 16
    n_chains: int = 8
    burn_in: int = 200
    n_samples: int = 500
    thin: int = 5
    seed: int = 0
    margin: float = 8.0
    pinned: bool = False
    step: Optional[float] = None
    shift_step: Optional[float] = None
    r_max: Optional[float] = None
    table_tol: float = 1e-3
    threads: int = 1

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0.0 <= self.margin < self.T:
            raise ValueError("need 0 <= margin < T")
        if self.n_chains < 1 or self.n_samples < 1:
            raise ValueError("need at least one chain and one sample")
        mix = (self.p_bead, self.p_block, self.p_shift)
        if min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-12:
            raise ValueError("proposal mix weights must be >= 0 and sum to 1")
        grid_size(self.T, self.dt)
        if self.p_block > 0 and not 1 <= self.block_len < grid_size(self.T, self.dt):
            raise ValueError("block length must be >= 1 and shorter than the path")

    @property
    def L(self) -> int:
        return grid_size(self.T, self.dt)

    @property
    def bulk_half_width(self) -> float:
        return self.T - self.margin

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


@dataclass(eq=False)
class SampleSet:
    """Thinned post-burn-in paths of all chains plus chain diagnostics."""

    T: float
    dt: float
    paths: np.ndarray  # (n, L, d)
    chain_ids: np.ndarray  # (n,)
    bulk_half_width: float
    chains: list = field(default_factory=list)
    fingerprint: str = ""
    pinned: bool = False
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.paths.shape[0]

    @property
    def L(self) -> int:
        return self.paths.shape[1]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    @property
    def center(self) -> int:
        return self.L // 2

    @property
    def q0(self) -> np.ndarray:
        return self.paths[:, self.center, :]

    @property
    def ess(self) -> float:
        return float(sum(c.get("ess", 0.0) for c in self.chains)) if self.chains else float(self.n)

    def path(self, i: int) -> ParticlePath:
        return ParticlePath(self.T, self.dt, self.paths[i])

    def __iter__(self):
        return (self.path(i) for i in range(self.n))

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return replace(self, paths=self.paths[idx], chain_ids=self.chain_ids[idx], cache={})

    def thinned(self, max_samples: int) -> "SampleSet":
        """Evenly spaced subset (per chain) of at most ``max_samples`` paths."""
        if self.n <= max_samples:
            return self
        keep = []
        ids = np.unique(self.chain_ids)
        per = max(1, max_samples // len(ids))
        for c in ids:
            sel = np.flatnonzero(self.chain_ids == c)
            stride = max(1, int(math.ceil(sel.size / per)))
            keep.append(sel[::stride])
        return self.subset(np.concatenate(keep))


def chain_generator(seed: int, chain: int) -> np.random.Generator:
    """Counter-based stream per (seed, chain); independent of the chain count."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chain)])))


def _ou_params(model: ModelSpec, dt: float):
    theta = model.potential.ou_rate
    a = math.exp(-theta * dt)
    v = 1.0 / (2.0 * theta)
    sig2 = v * (1.0 - a * a)
    return a, sig2, v


def sample_reference_harmonic(config: SamplerConfig, model: ModelSpec, rng) -> ParticlePath:
    """Exact draw from the stationary discrete OU chain (per component).

    ``q_{i+1} = a q_i + sqrt(v (1 - a^2)) xi`` with ``a = exp(-theta dt)``,
    ``v = 1/(2 theta)`` and ``q_0 ~ N(0, v)``.
    """
    if config.pinned:
        return ParticlePath.constant(config.T, config.dt, model.dimension)
    if model.potential.kind != "harmonic":
        raise ValueError("the exact reference sampler needs a harmonic potential")
    a, sig2, v = _ou_params(model, config.dt)
    L, d = config.L, model.dimension
    q = np.empty((L, d))
    q[0] = math.sqrt(v) * rng.standard_normal(d)
    noise = math.sqrt(sig2) * rng.standard_normal((L - 1, d))
    for i in range(L - 1):
        q[i + 1] = a * q[i] + noise[i]
    return ParticlePath(config.T, config.dt, q)


def reference_action(path: ParticlePath, model: ModelSpec) -> float:
    """``sum |q_{i+1} - q_i|^2 / (2 dt) + sum w_i V(q_i) dt`` (trapezoid weights w)."""
    q = path.positions
    kin = float(np.sum(np.diff(q, axis=0) ** 2)) / (2.0 * path.dt)
    pot = model.potential(q)
    w = trapezoid_weights(path.L)
    return kin + float(np.sum(w * pot)) * path.dt


def gibbs_energy(path: ParticlePath, model: ModelSpec, table: WTable) -> float:
    """Interaction over ``[-T, T]^2`` plus, in general-V mode, the reference action."""
    q = np.ascontiguousarray(path.positions)
    w = trapezoid_weights(path.L)
    if table.is_zero:
        e = 0.0
    else:
        lag = table.lag_table(path.dt)
        e, far = _kernels.full_energy(q, w, lag.shape[0] - 1, lag, 1.0 / table.dr, path.dt)
        if far:
            raise ValueError(f"path separation exceeds table r_max={table.r_max}")
    if model.potential.kind == "general":
        e += reference_action(path, model)
    return e


def _compiled_potential(model: ModelSpec):
    pot = model.potential
    if pot.kind != "general":
        return _kernels.zero_potential
    f = pot.func
    if isinstance(f, numba.core.registry.CPUDispatcher):
        return f
    try:
        jf = numba.njit(cache=False, nogil=True)(f)
        jf(np.zeros(model.dimension))
        return jf
    except Exception as exc:  # pragma: no cover - depends on user code
        raise TypeError("general potentials must be numba-compilable functions of a position vector") from exc


@dataclass(eq=False)
class ChainState:
    q: np.ndarray
    energy: float
    step: float
    shift_step: float
    counts: np.ndarray
    rng: np.random.Generator
    chain: int = 0


def _mode(model: ModelSpec) -> int:
    return _kernels.MODE_HARMONIC if model.potential.kind == "harmonic" else _kernels.MODE_GENERAL


def _interaction_energy(q, table: WTable, dt: float) -> float:
    if table.is_zero:
        return 0.0
    lag = table.lag_table(dt)
    e, far = _kernels.full_energy(q, trapezoid_weights(q.shape[0]), lag.shape[0] - 1, lag, 1.0 / table.dr, dt)
    if far:
        raise ValueError(f"initial path exceeds table r_max={table.r_max}")
    return e


def init_chain(config: SamplerConfig, model: ModelSpec, table: WTable, chain: int = 0) -> ChainState:
    """Chain started from an exact reference draw (harmonic) or the origin (general)."""
    rng = chain_generator(config.seed, chain)
    if model.potential.kind == "harmonic" or config.pinned:
        q = sample_reference_harmonic(config, model, rng).positions.copy()
    else:
        q = np.zeros((config.L, model.dimension))
    q = np.ascontiguousarray(q)
    step = config.step if config.step is not None else math.sqrt(config.dt)
    if config.shift_step is not None:
        shift = config.shift_step
    elif model.potential.kind == "harmonic":
        # rigid-shift action is ~ theta * shift^2 * T per component
        shift = 1.0 / math.sqrt(2.0 * model.potential.ou_rate * config.T)
    else:
        shift = 0.5 / math.sqrt(config.T)
    e = 0.0 if config.pinned else _interaction_energy(q, table, config.dt)
    return ChainState(q, e, step, shift, np.zeros(7, dtype=np.int64), rng, chain)


def _advance(state: ChainState, config: SamplerConfig, model: ModelSpec, table: WTable,
             n_sweeps: int, adapt: bool, record_every: int = 0, out=None) -> int:
    if config.pinned or n_sweeps == 0:
        if out is not None and record_every > 0:
            n_rec = n_sweeps // record_every
            out[:n_rec] = state.q
            return n_rec
        return 0
    mode = _mode(model)
    if mode == _kernels.MODE_HARMONIC:
        a, sig2, v = _ou_params(model, config.dt)
    else:
        a, sig2, v = 0.0, 1.0, 1.0
    use_w = not table.is_zero
    lag = table.lag_table(config.dt) if use_w else np.zeros((1, 2))
    M = lag.shape[0] - 1
    inv_dr = 1.0 / table.dr
    if out is None:
        out = np.empty((0, 1, 1))
        record_every = 0
    w = trapezoid_weights(config.L)
    vfunc = _compiled_potential(model)
    energy, step, pos = _kernels.sweeps(
        state.q, w, mode, a, sig2, v, config.dt, lag, inv_dr, M, use_w, vfunc,
        state.step, state.shift_step, config.p_bead, config.p_block, config.block_len,
        n_sweeps, adapt, record_every, out, 0, state.energy, state.counts, state.rng,
    )
    state.energy = energy
    state.step = step
    return pos


def gibbs_step(state: ChainState, model: ModelSpec, table: WTable, config: SamplerConfig) -> ChainState:
    """One Metropolis sweep (L proposals drawn from the move mix); no-op when pinned."""
    _advance(state, config, model, table, 1, adapt=False)
    return state


def prepare_table(model: ModelSpec, config: SamplerConfig, c_rho: float | None = None) -> tuple[WTable, float]:
    """W table covering the sampler's lags; returns (table, tau_max)."""
    if c_rho is None:
        c_rho = compute_constants(model).c_rho
    if config.tau_max is not None:
        tau_max = config.tau_max
    elif model.form_factor.amplitude == 0.0 or c_rho == 0.0:
        tau_max = config.dt
    else:
        tau_max = choose_tau_max(model, config.eps_tail * c_rho, config.dt)
    M = int(round(tau_max / config.dt))
    tau_max = M * config.dt
    if tau_max > config.bulk_half_width + 1e-12 and not config.pinned:
        raise ValueError(
            f"tau_max={tau_max:g} exceeds the bulk half-width {config.bulk_half_width:g}; increase T"
        )
    r_max = config.r_max if config.r_max is not None else default_r_max(model)
    table = table_for_model(model, tau_max, config.dt, r_max, config.table_tol)
    return table, tau_max


def default_r_max(model: ModelSpec) -> float:
    """Ten trap lengths ``sqrt(1/(2 theta))`` (harmonic) or 10 (otherwise)."""
    if model.potential.kind == "harmonic":
        return 10.0 * math.sqrt(1.0 / (2.0 * model.potential.ou_rate))
    if model.potential.kind == "pinned":
        return 1.0
    return 10.0


def _run_one(config, model, table, chain):
    state = init_chain(config, model, table, chain)
    _advance(state, config, model, table, config.burn_in, adapt=True)
    burn_counts = state.counts.copy()
    state.counts[:] = 0
    out = np.empty((config.n_samples, config.L, model.dimension))
    n_rec = _advance(state, config, model, table, config.n_samples * config.thin, adapt=False,
                     record_every=config.thin, out=out)
    assert n_rec == config.n_samples
    audit = 0.0
    if not config.pinned and not table.is_zero:
        full = _interaction_energy(state.q, table, config.dt)
        audit = abs(full - state.energy)
    c = state.counts
    rates = {}
    for name, k in (("bead", 0), ("block", 1), ("shift", 2)):
        rates[name] = float(c[3 + k] / c[k]) if c[k] > 0 else None
    q0 = out[:, config.L // 2, :]
    series = np.sum(q0 * q0, axis=1)
    if config.n_samples >= 2:
        t = tau_int(series)
        e = ess(series)
    else:
        t, e = float("nan"), 1.0
    info = {
        "chain": chain,
        "n_samples": int(config.n_samples),
        "acceptance": rates,
        "far_rejections": int(c[6]),
        "burn_in_far_rejections": int(burn_counts[6]),
        "tau_int_q0sq": None if not np.isfinite(t) else float(t),
        "ess": float(e),
        "bead_step": float(state.step),
        "energy_audit": float(audit),
    }
    return out, info


def run_chain(config: SamplerConfig, model: ModelSpec, table: WTable, fingerprint: str = "") -> SampleSet:
    """Run ``config.n_chains`` independent seeded chains and pool their samples.

    Deterministic for a fixed seed regardless of ``config.threads``.
    """
    if model.potential.kind == "pinned" and not config.pinned:
        config = replace(config, pinned=True)
    chains = range(config.n_chains)
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as ex:
            results = list(ex.map(lambda c: _run_one(config, model, table, c), chains))
    else:
        results = [_run_one(config, model, table, c) for c in chains]
    paths = np.concatenate([r[0] for r in results])
    ids = np.repeat(np.arange(config.n_chains), config.n_samples)
    return SampleSet(
        T=config.T,
        dt=config.dt,
        paths=paths,
        chain_ids=ids,
        bulk_half_width=config.bulk_half_width,
        chains=[r[1] for r in results],
        fingerprint=fingerprint,
        pinned=config.pinned,
    )


def diagnostics(samples: SampleSet, min_samples: int = 100) -> dict:
    """Acceptance rates, tau_int of |q_0|^2 and ESS per chain and in total."""
    if samples.n < min_samples:
        raise TooFewSamples(f"diagnostics need >= {min_samples} samples, got {samples.n}")
    q0 = samples.q0
    series = np.sum(q0 * q0, axis=1)
    per_chain = []
    for c in np.unique(samples.chain_ids):
        x = series[samples.chain_ids == c]
        t = tau_int(x) if x.size >= 2 else float("nan")
        info = {"chain": int(c), "n": int(x.size), "tau_int_q0sq": None if not np.isfinite(t) else t,
                "ess": ess(x) if x.size >= 2 else 1.0}
        for extra in samples.chains:
            if extra.get("chain") == int(c):
                info["acceptance"] = extra.get("acceptance")
                info["far_rejections"] = extra.get("far_rejections")
                info["energy_audit"] = extra.get("energy_audit")
        per_chain.append(info)
    total_ess = float(sum(p["ess"] for p in per_chain))
    return {
        "n_samples": int(samples.n),
        "ess_total": min(total_ess, float(samples.n)),
        "chains": per_chain,
        "fingerprint": samples.fingerprint,
    }


def path_slack(table: WTable, config: SamplerConfig, c_rho: float) -> float:
    """Discretization slack eps_disc for the configured grid."""
    return discretization_slack(table, config.dt, config.bulk_half_width, c_rho)


__all__.append("path_slack")
__all__.append("grid_size")
__all__.append("trapezoid_weights")
__all__.append("default_r_max")
