"""Numerical laboratory for approximate weak factorisation of Hilbert
transforms along monomial curves."""

from .curve import MonomialCurve, NormalizedCurve, eval_curve, normalize
from .geometry import AwfGeometry, GammaRect, make_geometry

__version__ = "0.1.0"

__all__ = ["MonomialCurve", "NormalizedCurve", "eval_curve", "normalize",
           "AwfGeometry", "GammaRect", "make_geometry"]
