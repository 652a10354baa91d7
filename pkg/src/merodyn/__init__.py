"""Thermodynamic formalism for meromorphic maps with constant Schwarzian derivative."""
from .family import MapSpec, TruncationPolicy, classify_regime, preimages
from .sphere import INF, MobiusMap, chordal_dist, spherical_derivative

__version__ = "0.1.0"

__all__ = ["INF", "MapSpec", "MobiusMap", "TruncationPolicy", "chordal_dist", "classify_regime",
           "preimages", "spherical_derivative", "__version__"]
