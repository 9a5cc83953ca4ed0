"""Dense conic programming: problem model and interior-point solver."""
from .ipm import solve
from .model import (ConeBlock, ConeKind, ConicError, ConicProblem,
                    ConicSolution, SolveStatus, ToleranceSet, dump_problem,
                    in_cone, in_rsoc, in_soc, rsoc_rotation, rsoc_to_soc)

__all__ = [
    "ConeBlock", "ConeKind", "ConicError", "ConicProblem", "ConicSolution",
    "SolveStatus", "ToleranceSet", "dump_problem", "in_cone", "in_rsoc",
    "in_soc", "rsoc_rotation", "rsoc_to_soc", "solve",
]
