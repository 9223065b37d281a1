"""Grant-free massive-access simulation over OFDM with AMP-based activity detection.

Modules: ``model`` (scenario generation), ``denoiser`` (Bernoulli-Gaussian
MMSE), ``amp_ec`` and ``amp_ac`` (the two detectors), ``se`` (state evolution
and closed-form predictions), ``metrics`` and ``harness`` (experiments).
"""

from ._common import AmpResult, NumericalAbort
from .amp_ac import ac_run
from .amp_ec import ec_run
from .model import ConfigError, ScenarioInstance, SystemConfig, make_scenario

__version__ = "0.1.0"

__all__ = [
    "AmpResult",
    "ConfigError",
    "NumericalAbort",
    "ScenarioInstance",
    "SystemConfig",
    "ac_run",
    "ec_run",
    "make_scenario",
]
