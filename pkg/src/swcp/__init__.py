"""Contact process and branching random walk on small-world graphs and their big-world covers."""

from .errors import BracketError, DomainError, InvalidArgument, InvalidParameter, ResourceGuardError
from .rng import Stream
from .topology import BigWorldAddress, KMAddress, ModelParams, SmallWorldGraph, make_small_world

__version__ = "0.1.0"

__all__ = [
    "BigWorldAddress",
    "BracketError",
    "DomainError",
    "InvalidArgument",
    "InvalidParameter",
    "KMAddress",
    "ModelParams",
    "ResourceGuardError",
    "SmallWorldGraph",
    "Stream",
    "make_small_world",
]
