"""Path-integral Monte Carlo for the ground state of the Nelson model.

The particle path is sampled from the Gibbs measure obtained by integrating
out the Bose field; field and boson-number observables of the ground state
are then Monte Carlo averages of path functionals.
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    Dispersion,
    ExternalPotential,
    FormFactor,
    ModelConstants,
    ModelSpec,
    check_conditions,
    compute_constants,
    shell_model,
    with_c_rho,
)
from .pair_potential import WTable, build_w_table, cross_half_line_energy, w_exact  # noqa: E402
from .sampler import ParticlePath, SampleSet, SamplerConfig, prepare_table, run_chain  # noqa: E402

__all__ = [
    "__version__",
    "Dispersion",
    "ExternalPotential",
    "FormFactor",
    "ModelConstants",
    "ModelSpec",
    "check_conditions",
    "compute_constants",
    "shell_model",
    "with_c_rho",
    "WTable",
    "build_w_table",
    "cross_half_line_energy",
    "w_exact",
    "ParticlePath",
    "SampleSet",
    "SamplerConfig",
    "prepare_table",
    "run_chain",
]
