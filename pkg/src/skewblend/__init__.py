"""Certificates for blenders, cycles and tangencies of symbolic skew-products.

``SKEWBLEND_THREADS`` caps the BLAS thread pool; it must be set before
numpy is first imported.
"""

import os as _os

if "SKEWBLEND_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["SKEWBLEND_THREADS"])

from .blending import (  # noqa: E402
    CoveringCertificate,
    build_translation_family,
    verify_conley_moser,
    verify_covering,
)
from .cones import Cone, verify_stable_cone, verify_unstable_cone  # noqa: E402
from .cycles import (  # noqa: E402
    BlenderSpec,
    CycleCertificate,
    TangencyCertificate,
    TangentDirectionReport,
    TransitionWitness,
    build_cycle_scenario,
    build_tangency_scenario,
    detect_tangent_directions,
    find_transition,
    robustness_probe,
    tangency_codimension,
    verify_cycle,
)
from .errors import CertificateInvalid, InputError, ResourceError, VerificationFailure  # noqa: E402
from .grassmann import Plane, PlaneBall, lift_system, plane_distance  # noqa: E402
from .intersect import HorizontalDisc, refine_intersection, verify_lambda_u  # noqa: E402
from .regions import Ball, Box, Region  # noqa: E402
from .shift_space import TruncatedSequence  # noqa: E402
from .skewproduct import FiberMap, SkewSystem, one_step_system  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "Ball", "BlenderSpec", "Box", "CertificateInvalid", "Cone", "CoveringCertificate", "CycleCertificate",
    "FiberMap", "HorizontalDisc", "InputError", "Plane", "PlaneBall", "Region", "ResourceError",
    "SkewSystem", "TangencyCertificate", "TangentDirectionReport", "TransitionWitness", "TruncatedSequence",
    "VerificationFailure", "build_cycle_scenario", "build_tangency_scenario", "build_translation_family",
    "detect_tangent_directions", "find_transition", "lift_system", "one_step_system", "plane_distance",
    "refine_intersection", "robustness_probe", "tangency_codimension", "verify_conley_moser",
    "verify_covering", "verify_cycle", "verify_lambda_u", "verify_stable_cone", "verify_unstable_cone",
]
