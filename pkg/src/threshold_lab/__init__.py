"""Numerical laboratory for three-body eigenvalue absorption at threshold.

The package builds the constructive side of a zero-energy threshold
experiment: two-body Birman-Schwinger operators with an independent
shooting oracle, Faddeev channel operators with certified norm bounds,
an explicit IMS partition of unity, and a correlated-Gaussian variational
solver for the three-body sweep.
"""

from .errors import (
    AccuracyError,
    BasisError,
    BracketError,
    ConfigError,
    DegenerateInputError,
    FitError,
    ThresholdLabError,
    ValidationError,
)
from .model import (
    JacobiFrame,
    PairPotential,
    ParticleSystem,
    jacobi_frame,
    potential_moment_c,
    separation_forms,
    sqrt_potential_fourier,
    system_from_text,
    system_to_text,
    uniform_system,
    validate_r6,
    zero_potential,
)
from .quadrature import QuadratureRule, gauss_legendre, semi_infinite_grid
from .twobody import (
    MarginReport,
    bs_max_eigenvalue,
    critical_coupling,
    shooting_oracle,
    subcriticality_margin,
    twobody_binding_energy,
    twobody_size,
)
from .faddeev_ops import (
    BoundConstants,
    a_fiber_norm,
    b_inverse,
    bound_constants,
    channel_contraction_norm,
    k2_hs_norm_squared,
    lemma6_uniformity_audit,
    t_multiplier,
)
from .ims import build_partition, gradient_decay_audit, ims_identity_check, verify_support_cone
from .threebody import (
    CorrelatedGaussianBasis,
    SweepRecord,
    critical_coupling_3body,
    grow_basis,
    ground_energy,
    matrix_elements,
    solve_ground,
    spreading_diagnostic,
)

__all__ = [
    "AccuracyError",
    "BasisError",
    "BoundConstants",
    "BracketError",
    "ConfigError",
    "CorrelatedGaussianBasis",
    "DegenerateInputError",
    "FitError",
    "JacobiFrame",
    "MarginReport",
    "PairPotential",
    "ParticleSystem",
    "QuadratureRule",
    "SweepRecord",
    "ThresholdLabError",
    "ValidationError",
    "a_fiber_norm",
    "b_inverse",
    "bound_constants",
    "bs_max_eigenvalue",
    "build_partition",
    "channel_contraction_norm",
    "critical_coupling",
    "critical_coupling_3body",
    "gauss_legendre",
    "gradient_decay_audit",
    "grow_basis",
    "ground_energy",
    "ims_identity_check",
    "jacobi_frame",
    "k2_hs_norm_squared",
    "lemma6_uniformity_audit",
    "matrix_elements",
    "potential_moment_c",
    "semi_infinite_grid",
    "separation_forms",
    "shooting_oracle",
    "solve_ground",
    "spreading_diagnostic",
    "sqrt_potential_fourier",
    "subcriticality_margin",
    "system_from_text",
    "system_to_text",
    "t_multiplier",
    "twobody_binding_energy",
    "twobody_size",
    "uniform_system",
    "validate_r6",
    "verify_support_cone",
    "zero_potential",
]

__version__ = "0.1.0"
