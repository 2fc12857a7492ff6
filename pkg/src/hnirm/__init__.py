"""Hierarchical network item response model."""
from .data import (
    BinarySchoolMatrix,
    MultiplexNetworks,
    ResponseDataset,
    build_multiplex,
    dichotomize,
    load_responses,
)
from .exceptions import HnirmError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "BinarySchoolMatrix",
    "MultiplexNetworks",
    "ResponseDataset",
    "build_multiplex",
    "dichotomize",
    "load_responses",
    "HnirmError",
    "ValidationError",
    "__version__",
]
