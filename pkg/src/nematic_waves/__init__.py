"""Conservative solutions and a Finsler transport metric for the nematic
liquid-crystal variational wave system.

The solver works in characteristic coordinates, where the system is
semilinear and stays smooth through cusp singularities; physical snapshots,
energy measures and metric quantities are pulled back from there.
"""

from .model import ModelParams, validate_params, wave_speed

__all__ = ["ModelParams", "validate_params", "wave_speed"]
__version__ = "0.1.0"
