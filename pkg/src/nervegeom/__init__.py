"""Riemannian simplicial complexes from partition-based models."""

__version__ = "0.1.0"

from .complex import Chain, Cochain, SimplicialComplex, boundary, coboundary, simplex
from .errors import EmbeddingError, InputError, InvariantError, NerveGeomError, ParseError
from .metric import RiemannianStructure, simplex_volume_cayley_menger
from .partition import Box, Domain, GeometryConfig, HPolytope, Partition, PartitionCell, Predictor, build_nerve

__all__ = [
    "Box", "Chain", "Cochain", "Domain", "EmbeddingError", "GeometryConfig", "HPolytope",
    "InputError", "InvariantError", "NerveGeomError", "ParseError", "Partition", "PartitionCell",
    "Predictor", "RiemannianStructure", "SimplicialComplex", "boundary", "build_nerve", "coboundary",
    "simplex", "simplex_volume_cayley_menger",
]
