"""Data-driven fixed-order controller synthesis for dual-stage servos.

Design from frequency-response measurements alone: closed-loop shaping
constraints and output-variance constraints are assembled into second-order
cone programs and solved by a built-in interior-point method; the resulting
controllers are certified, evaluated and stochastically simulated against
the same measurement data.
"""

__version__ = "0.1.0"

from .freqdata import (ComplexResponse, FreqDataError, FrequencyGrid,
                       PlantCase, PlantSet, WeightCurve, load_plant_set,
                       load_spectrum, load_weight, resample, save_plant_set,
                       save_spectrum, save_weight)
from .polysys import (ClosedLoopChannel, Controller, LoopConfig, PolySysError,
                      closed_loop, eval_controller, load_controller,
                      positivity_margin, save_controller, winding_number)

__all__ = [
    "__version__",
    "ComplexResponse", "FreqDataError", "FrequencyGrid", "PlantCase",
    "PlantSet", "WeightCurve", "load_plant_set", "load_spectrum",
    "load_weight", "resample", "save_plant_set", "save_spectrum",
    "save_weight",
    "ClosedLoopChannel", "Controller", "LoopConfig", "PolySysError",
    "closed_loop", "eval_controller", "load_controller", "positivity_margin",
    "save_controller", "winding_number",
]
