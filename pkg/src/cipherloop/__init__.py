"""Tracking control of a persistent reference over additively homomorphic
encryption with a finite plaintext modulus.

The package splits into an offline design pipeline (exact regulator solve,
integerization of the controller matrices, modulus sizing) and an online
closed-loop simulator in which the controller works only on ciphertext
residues while the actuator undoes the modular wraparound from local history.
Everything load-bearing is exact rational or integer arithmetic.
"""

__version__ = "0.1.0"

from .design import (
    CayleyCoefficients,
    DesignArtifacts,
    DesignError,
    DivergentEmpiricalBoundError,
    IntegerizationError,
    ModulusBound,
    PlantSpec,
    RegulatorSolution,
    StabilityMarginError,
    compute_modulus_bound,
    integerize,
    solve_regulator,
    validate_design,
)
from .exactmath import centered_lift, char_poly_coeffs, frac, solve_linear_exact
from .he import HEParams, cipher_add, decrypt, encrypt, keygen, plain_mul
from .quantizer import ZoomSchedule, quantize_scalar, quantize_vector
from .simloop import (
    LoopConfig,
    RunResult,
    TraceRecord,
    run_closed_loop,
    run_plaintext_loop,
)

__all__ = [
    "__version__",
    "CayleyCoefficients",
    "DesignArtifacts",
    "DesignError",
    "DivergentEmpiricalBoundError",
    "IntegerizationError",
    "ModulusBound",
    "PlantSpec",
    "RegulatorSolution",
    "StabilityMarginError",
    "compute_modulus_bound",
    "integerize",
    "solve_regulator",
    "validate_design",
    "centered_lift",
    "char_poly_coeffs",
    "frac",
    "solve_linear_exact",
    "HEParams",
    "cipher_add",
    "decrypt",
    "encrypt",
    "keygen",
    "plain_mul",
    "ZoomSchedule",
    "quantize_scalar",
    "quantize_vector",
    "LoopConfig",
    "RunResult",
    "TraceRecord",
    "run_closed_loop",
    "run_plaintext_loop",
]
