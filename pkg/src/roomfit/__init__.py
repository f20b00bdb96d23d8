"""roomfit: floor-plan reconstruction from density maps and room segments.

Selects polygonal room proposals with a Monte Carlo tree search and jointly
refines their shapes by gradient descent through a differentiable
winding-number rasterizer.
"""

__version__ = "0.1.0"

from .geometry import Polygon, SegmentMask  # noqa: F401
from .objective import Solution, Weights  # noqa: F401
from .proposals import ProposalSet, RoomSegment  # noqa: F401
from .scene import DensityMap, GroundTruthPlan, SyntheticSceneSpec  # noqa: F401
from .search import SearchConfig, SearchResult  # noqa: F401
