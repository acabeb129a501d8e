"""kdvlab: a numerical laboratory for averaging in perturbed KdV.

Layered as: fields (spectral representation) -> dynamics (flows) ->
hill (spectral actions) / measures (invariant measures and conservation
laws) -> averaging (experiments) -> experiments/cli (orchestration).
"""

__version__ = "0.1.0"

from .fields import ActionVector, BirkhoffPoint, Field  # noqa: F401
from .dynamics import EvolveParams, PerturbationSpec, Trajectory  # noqa: F401
