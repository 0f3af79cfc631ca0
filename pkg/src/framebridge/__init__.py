"""Bridge models for image-to-video generation on a desk-scale toy world.

Submodules:

* :mod:`~framebridge.schedule`: VP and Bridge-gmax noise schedules, SNR inversion;
* :mod:`~framebridge.bridge_kernel`: closed-form bridge kernel, score and target conversions;
* :mod:`~framebridge.saf`: SNR-aligned inputs for fine-tuning from a diffusion teacher;
* :mod:`~framebridge.toy_world`: moving-blob clips with exact conditional means;
* :mod:`~framebridge.denoiser`: dense tanh networks with hand-written gradients;
* :mod:`~framebridge.train`, :mod:`~framebridge.sampler`, :mod:`~framebridge.evalkit`;
* :mod:`~framebridge.cli`: the ``framebridge`` command.
"""

from .bridge_kernel import (BridgeCoefficients, BridgeSingularityError, analytic_gaussian_score, bridge_coeffs,
                            bridge_marginal, eps_target, h_term, sample_bridge_state, score_from_eps)
from .saf import AlignmentError, AlignmentMap, OutputMode
from .schedule import BridgeGmaxSchedule, SNRRangeError, SNRTable, ScheduleDomainError, VPSchedule

__version__ = "0.1.0"

__all__ = [
    "BridgeCoefficients",
    "BridgeSingularityError",
    "analytic_gaussian_score",
    "bridge_coeffs",
    "bridge_marginal",
    "eps_target",
    "h_term",
    "sample_bridge_state",
    "score_from_eps",
    "AlignmentError",
    "AlignmentMap",
    "OutputMode",
    "BridgeGmaxSchedule",
    "SNRRangeError",
    "SNRTable",
    "ScheduleDomainError",
    "VPSchedule",
]
