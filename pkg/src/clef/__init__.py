"""Controllable sequence editing with temporal concepts.

A temporal concept is the per-variable rate of change between two time
steps. The core model learns concepts from history, condition, and target
time, and applies them multiplicatively to the last observation, which
makes single-jump forecasts at arbitrary future times and direct user
edits of the generation possible.
"""

from .conditions import ConditionRegistry
from .errors import ClefError
from .model import ClefConfig, ClefModel, ConceptEdit, ConceptVector, intervene, oracle_concept
from .timeenc import Timestamp, step_to_timestamp
from .trajectory import CounterfactualPair, Trajectory

__version__ = "0.1.0"

__all__ = [
    "ClefConfig",
    "ClefModel",
    "ClefError",
    "ConceptEdit",
    "ConceptVector",
    "ConditionRegistry",
    "CounterfactualPair",
    "Timestamp",
    "Trajectory",
    "intervene",
    "oracle_concept",
    "step_to_timestamp",
    "__version__",
]
