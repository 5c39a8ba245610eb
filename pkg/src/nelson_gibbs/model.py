"""Physical configuration of the Nelson model and its scalar constants.

Momentum-space conventions: the Fourier transform is the symmetric one,
``f^(k) = (2 pi)^{-d/2} int f(x) e^{-ikx} dx``.  Every coupling profile is
radial, so all momentum integrals reduce to one-dimensional radial
quadratures (see :mod:`nelson_gibbs.quadrature`).

The boson mass is called ``mass`` (nu) and the infrared cutoff of the form
factor ``ir_cutoff`` (kappa_ir); the two are unrelated parameters.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .quadrature import QuadratureError, radial_quadrature

__all__ = [
    "Dispersion",
    "FormFactor",
    "ExternalPotential",
    "ModelSpec",
    "ModelConstants",
    "ConditionReport",
    "omega",
    "rho_hat",
    "compute_constants",
    "check_conditions",
    "with_c_rho",
]


@dataclass(frozen=True)
class Dispersion:
    """Boson dispersion ``omega(k) = sqrt(|k|^2 + mass^2)``."""

    mass: float = 0.0

    def __post_init__(self):
        if not (self.mass >= 0.0 and math.isfinite(self.mass)):
            raise ValueError(f"boson mass must be finite and >= 0, got {self.mass}")

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        return np.sqrt(r * r + self.mass**2)


@dataclass(frozen=True)
class FormFactor:
    """Radial coupling profile with infrared and ultraviolet cutoffs.

    ``shell``: ``g * 1{ir < |k| < uv}``.
    ``gaussian``: ``g * exp(-|k|^2 / (2 scale^2))``, also restricted to
    ``ir < |k| < uv`` (``uv`` may be infinite).
    """

    amplitude: float
    ir_cutoff: float = 0.0
    uv_cutoff: float = math.inf
    profile: str = "shell"
    scale: float = 1.0

    def __post_init__(self):
        if self.profile not in ("shell", "gaussian"):
            raise ValueError(f"unknown form-factor profile {self.profile!r}")
        if not self.amplitude >= 0.0:
            raise ValueError("form-factor amplitude must be >= 0")
        if not self.ir_cutoff >= 0.0:
            raise ValueError("infrared cutoff must be >= 0")
        if not self.uv_cutoff > self.ir_cutoff:
            raise ValueError(
                f"ultraviolet cutoff ({self.uv_cutoff}) must exceed the infrared cutoff ({self.ir_cutoff})"
            )
        if self.profile == "shell" and not math.isfinite(self.uv_cutoff):
            raise ValueError("the shell profile needs a finite ultraviolet cutoff")
        if self.profile == "gaussian" and not self.scale > 0.0:
            raise ValueError("gaussian scale must be > 0")

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        # without an IR cutoff the origin belongs to the support
        above = (r >= 0.0) if self.ir_cutoff == 0.0 else (r > self.ir_cutoff)
        inside = above & (r < self.uv_cutoff)
        if self.profile == "shell":
            return np.where(inside, self.amplitude, 0.0)
        return np.where(inside, self.amplitude * np.exp(-r * r / (2.0 * self.scale**2)), 0.0)

    def support(self, tol: float = 1e-12) -> tuple[float, float]:
        """Finite radial interval carrying the profile up to relative ``tol``."""
        if self.profile == "shell":
            return self.ir_cutoff, self.uv_cutoff
        # |rho|^1 tail exp(-c^2/2) times polynomial growth; 3 extra units cover the prefactors
        c = math.sqrt(2.0 * math.log(1.0 / tol)) + 3.0
        return self.ir_cutoff, min(self.uv_cutoff, self.scale * c)

    @property
    def value_at_zero(self) -> float:
        return 0.0 if self.ir_cutoff > 0.0 else self.amplitude


@dataclass(frozen=True)
class ExternalPotential:
    """External potential acting on the particle.

    ``harmonic``: ``V(q) = stiffness |q|^2 / 2``; its ground-state process is
    an Ornstein-Uhlenbeck process with rate ``sqrt(stiffness)``.
    ``pinned``: the particle is frozen at the origin.
    ``general``: an arbitrary ``V(q)`` evaluated on one position vector.
    ``coefficients`` describes the radial polynomial ``sum_n c_n |q|^n``
    (used by config files); Carmona exponents and the spectral gap
    ``Sigma - E_p`` are optional metadata.
    """

    kind: str
    stiffness: Optional[float] = None
    func: Optional[Callable] = field(default=None, compare=False)
    coefficients: Optional[tuple] = None
    carmona_m: Optional[float] = None
    carmona_gamma: Optional[float] = None
    spectral_gap: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("harmonic", "pinned", "general"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "harmonic" and not (self.stiffness is not None and self.stiffness > 0):
            raise ValueError("harmonic potential needs stiffness > 0")
        if self.kind == "general" and self.func is None:
            raise ValueError("general potential needs an evaluable V")

    @classmethod
    def harmonic(cls, stiffness: float = 1.0) -> "ExternalPotential":
        return cls("harmonic", stiffness=float(stiffness), carmona_m=1.0, carmona_gamma=0.5 * stiffness)

    @classmethod
    def pinned(cls) -> "ExternalPotential":
        return cls("pinned")

    @classmethod
    def general(cls, func, carmona_m=None, carmona_gamma=None, spectral_gap=None) -> "ExternalPotential":
        return cls("general", func=func, carmona_m=carmona_m, carmona_gamma=carmona_gamma,
                   spectral_gap=spectral_gap)

    @classmethod
    def radial_polynomial(cls, coefficients, carmona_m=None, carmona_gamma=None,
                          spectral_gap=None) -> "ExternalPotential":
        coeffs = tuple(float(c) for c in coefficients)

        def v(q):
            s = 0.0
            for c in range(q.shape[0]):
                s += q[c] * q[c]
            r = math.sqrt(s)
            total = 0.0
            power = 1.0
            for c in coeffs:
                total += c * power
                power *= r
            return total

        return cls("general", func=v, coefficients=coeffs, carmona_m=carmona_m,
                   carmona_gamma=carmona_gamma, spectral_gap=spectral_gap)

    @property
    def ou_rate(self) -> float:
        if self.kind != "harmonic":
            raise ValueError("only the harmonic potential has an Ornstein-Uhlenbeck reference")
        return math.sqrt(self.stiffness)

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "harmonic":
            return 0.5 * self.stiffness * np.sum(q * q, axis=-1)
        if self.kind == "pinned":
            return np.zeros(q.shape[:-1])
        flat = q.reshape(-1, q.shape[-1])
        return np.array([self.func(x) for x in flat]).reshape(q.shape[:-1])

    def psi0_squared(self, q):
        """Ground-state density of ``-Delta/2 + V`` (harmonic only)."""
        q = np.asarray(q, dtype=float)
        theta = self.ou_rate
        d = q.shape[-1]
        return (theta / math.pi) ** (d / 2) * np.exp(-theta * np.sum(q * q, axis=-1))

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "harmonic":
            out["stiffness"] = self.stiffness
        if self.kind == "general":
            out["coefficients"] = list(self.coefficients) if self.coefficients is not None else None
            if self.coefficients is None:
                out["func"] = getattr(self.func, "__qualname__", repr(self.func))
        for key in ("carmona_m", "carmona_gamma", "spectral_gap"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out


@dataclass(frozen=True)
class ModelSpec:
    dimension: int
    dispersion: Dispersion
    form_factor: FormFactor
    potential: ExternalPotential

    def __post_init__(self):
        if self.dimension not in (1, 3):
            raise ValueError(f"dimension must be 1 or 3, got {self.dimension}")

    def to_dict(self) -> dict:
        ff = self.form_factor
        return {
            "dimension": self.dimension,
            "mass": self.dispersion.mass,
            "form_factor": {
                "profile": ff.profile,
                "amplitude": ff.amplitude,
                "ir_cutoff": ff.ir_cutoff,
                "uv_cutoff": ff.uv_cutoff if math.isfinite(ff.uv_cutoff) else "inf",
                "scale": ff.scale,
            },
            "potential": self.potential.to_dict(),
        }

    def fingerprint(self, field_only: bool = False) -> str:
        """Stable hash; ``field_only`` drops the potential (what W depends on)."""
        data = self.to_dict()
        if field_only:
            data.pop("potential")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def omega(self, r):
        return self.dispersion.radial(r)

    def rho(self, r):
        return self.form_factor.radial(r)


def _radius(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.ndim == 0:
        return np.abs(k)
    return np.sqrt(np.sum(k * k, axis=-1))


def omega(model: ModelSpec, k):
    """Dispersion at momentum vector(s) ``k`` (last axis = components)."""
    return model.omega(_radius(k))


def rho_hat(model: ModelSpec, k):
    """Form factor at momentum vector(s) ``k``."""
    return model.rho(_radius(k))


@dataclass(frozen=True)
class ModelConstants:
    c_rho: float
    v_eff: float
    c1: float
    c2: float
    coupling_strength: float
    existence_integral: float
    model: ModelSpec = field(repr=False, compare=False)
    tol: float = 1e-10

    @property
    def ir_divergent(self) -> bool:
        return math.isinf(self.c_rho)

    def free_fluct(self, ghat) -> float:
        """``int |g^|^2 / (2 omega) dk`` for a radial test function ``ghat``."""
        lo, hi = self.model.form_factor.support(self.tol)
        lo = 0.0
        m = self.model

        def f(r):
            return np.abs(ghat(r)) ** 2 / (2.0 * m.omega(r))

        return _guarded_integral(m, f, 1, lo, hi, self.tol, probe_support=False)

    def to_dict(self) -> dict:
        return {
            "c_rho": self.c_rho,
            "v_eff": self.v_eff,
            "c1": self.c1,
            "c2": self.c2,
            "coupling_strength": self.coupling_strength,
            "existence_integral": self.existence_integral,
        }


def _diverges_at_zero(model: ModelSpec, omega_power: float, rho_nonzero_at_zero: bool) -> bool:
    """Small-|k| power counting for ``|rho|^a / omega^b`` with massless omega ~ |k|."""
    if model.dispersion.mass > 0.0 or not rho_nonzero_at_zero:
        return False
    return model.dimension - 1 - omega_power <= -1


def _guarded_integral(model, f, omega_power, lo, hi, tol, probe_support=True):
    ff = model.form_factor
    if probe_support:
        lo, hi = ff.support(tol)
    nonzero = lo == 0.0 and ff.value_at_zero > 0.0
    if _diverges_at_zero(model, omega_power, nonzero):
        return math.inf
    if ff.amplitude == 0.0:
        return 0.0
    return float(radial_quadrature(f, lo, hi, model.dimension, tol))


def compute_constants(model: ModelSpec, tol: float = 1e-10) -> ModelConstants:
    """All scalar integrals of the form factor used by the bounds.

    A constant whose integrand is not integrable at ``k = 0`` (massless
    bosons without infrared cutoff) is reported as ``inf``.
    """
    w = model.omega
    rho = model.rho

    def integral(f, omega_power):
        return _guarded_integral(model, f, omega_power, 0.0, 0.0, tol)

    c_rho = integral(lambda r: rho(r) ** 2 / (2.0 * w(r) ** 3), 3)
    v_eff = integral(lambda r: 0.5 * rho(r) ** 2 / w(r) ** 2, 2)
    c1 = integral(lambda r: np.abs(rho(r)) / w(r), 1)
    c2 = integral(lambda r: np.abs(rho(r)) / w(r) ** 2, 2)
    coupling = integral(lambda r: rho(r) ** 2 / w(r), 1)
    existence = integral(lambda r: rho(r) ** 2 * r * r / (w(r) * (2.0 * w(r) + r * r)), 0)
    return ModelConstants(c_rho, v_eff, c1, c2, coupling, existence, model=model, tol=tol)


@dataclass(frozen=True)
class ConditionReport:
    gc1: bool
    gc2: bool
    gc3: bool
    condition_i: bool
    condition_ii: bool
    existence_integral: float
    spectral_gap: float
    condition_iii: Optional[bool]
    constants: dict

    def to_dict(self) -> dict:
        return {
            "gc1_symmetry": self.gc1,
            "gc2_positive_dispersion": self.gc2,
            "gc3_square_integrability": self.gc3,
            "condition_i": self.condition_i,
            "condition_ii_infrared": self.condition_ii,
            "condition_iii_integral": self.existence_integral,
            "spectral_gap": "inf" if math.isinf(self.spectral_gap) else self.spectral_gap,
            "condition_iii": self.condition_iii,
            "constants": {k: ("inf" if math.isinf(v) else v) for k, v in self.constants.items()},
        }


def check_conditions(model: ModelSpec, tol: float = 1e-10) -> ConditionReport:
    """Evaluate the standing assumptions on (omega, rho, V) as diagnostics.

    Evenness and reality hold by construction (radial profiles); positivity
    of omega fails only at ``k = 0`` in the massless case, a null set.
    """
    consts = compute_constants(model, tol)
    gc3 = math.isfinite(consts.coupling_strength) and math.isfinite(2.0 * consts.v_eff)
    cond_ii = math.isfinite(consts.c_rho)
    pot = model.potential
    if pot.kind in ("harmonic", "pinned"):
        gap = math.inf
    elif pot.spectral_gap is not None:
        gap = float(pot.spectral_gap)
    else:
        gap = math.nan
    if math.isnan(gap):
        cond_iii = None
    elif math.isinf(gap):
        cond_iii = bool(gc3)
    else:
        cond_iii = bool(gap > consts.existence_integral)
    return ConditionReport(
        gc1=True,
        gc2=True,
        gc3=bool(gc3),
        condition_i=bool(gc3),
        condition_ii=bool(cond_ii),
        existence_integral=consts.existence_integral,
        spectral_gap=gap,
        condition_iii=cond_iii,
        constants=consts.to_dict(),
    )


def with_c_rho(model: ModelSpec, target: float, tol: float = 1e-12) -> ModelSpec:
    """Rescale the form-factor amplitude so that the infrared constant equals ``target``."""
    unit = replace(model, form_factor=replace(model.form_factor, amplitude=1.0))
    c = compute_constants(unit, tol).c_rho
    if not math.isfinite(c) or c <= 0.0:
        raise ValueError("cannot tune the amplitude of an infrared-divergent or empty form factor")
    g = math.sqrt(target / c)
    return replace(model, form_factor=replace(model.form_factor, amplitude=g))


def shell_model(dimension=3, mass=0.0, amplitude=1.0, ir_cutoff=0.5, uv_cutoff=5.0,
                potential: Optional[ExternalPotential] = None) -> ModelSpec:
    """Convenience constructor for the shell form factor."""
    return ModelSpec(
        dimension=dimension,
        dispersion=Dispersion(mass),
        form_factor=FormFactor(amplitude, ir_cutoff, uv_cutoff, "shell"),
        potential=potential if potential is not None else ExternalPotential.harmonic(1.0),
    )


__all__.append("shell_model")
__all__.append("QuadratureError")
