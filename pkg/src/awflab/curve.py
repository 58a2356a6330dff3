"""Monomial curves t -> (+-|t|^b1, +-|t|^b2) and their normalised form.

Downstream modules only ever see :class:`NormalizedCurve`, i.e. the odd curve
with first exponent 1 and second exponent ``beta = beta2 / beta1``; the
Hilbert transform picks up the factor ``scale = 1 / beta1``.
"""

from dataclasses import dataclass, field

import numpy as np

ODD_EPS = (1, 1)
ODD_DELTA = (-1, -1)


class CurveError(ValueError):
    pass


@dataclass(frozen=True)
class MonomialCurve:
    beta1: float
    beta2: float
    eps: tuple = ODD_EPS
    delta: tuple = ODD_DELTA

    def __post_init__(self):
        if not (self.beta2 > self.beta1 > 0):
            raise CurveError(f"need beta2 > beta1 > 0, got {self.beta1}, {self.beta2}")
        for pair in (self.eps, self.delta):
            if len(pair) != 2 or any(s not in (1, -1) for s in pair):
                raise CurveError(f"sign pairs must hold +-1, got {pair}")
        if tuple(self.eps) == tuple(self.delta):
            raise CurveError("eps and delta must differ in at least one coordinate")
        object.__setattr__(self, "eps", tuple(int(s) for s in self.eps))
        object.__setattr__(self, "delta", tuple(int(s) for s in self.delta))

    @property
    def is_odd(self):
        return self.eps == ODD_EPS and self.delta == ODD_DELTA

    def to_record(self):
        return {"beta1": self.beta1, "beta2": self.beta2,
                "signs": {"eps": list(self.eps), "delta": list(self.delta)}}

    @classmethod
    def from_record(cls, rec):
        signs = rec.get("signs", {})
        return cls(float(rec["beta1"]), float(rec["beta2"]),
                   tuple(signs.get("eps", ODD_EPS)), tuple(signs.get("delta", ODD_DELTA)))


@dataclass(frozen=True)
class NormalizedCurve:
    """gamma(t) = (t, |t|^beta sgn t) with beta > 1."""

    beta: float
    scale: float = 1.0
    source: MonomialCurve | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.beta > 1:
            raise CurveError(f"normalised exponent must exceed 1, got {self.beta}")
        if not self.scale > 0:
            raise CurveError("scale must be positive")

    def __call__(self, t):
        return eval_curve(self, t)


def _power(t, b):
    # exp/log form for real exponents; t == 0 handled by the caller
    return np.exp(b * np.log(t))


def eval_curve(curve, t):
    """Point(s) on the curve; ``t`` may be a scalar or an array.

    Returns a tuple ``(x1, x2)`` of floats or arrays.
    """
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    pos = t > 0
    with np.errstate(divide="ignore"):
        if isinstance(curve, NormalizedCurve):
            x1 = t.copy()
            x2 = np.where(a > 0, np.sign(t) * _power(np.where(a > 0, a, 1.0), curve.beta), 0.0)
        else:
            safe = np.where(a > 0, a, 1.0)
            p1 = np.where(a > 0, _power(safe, curve.beta1), 0.0)
            p2 = np.where(a > 0, _power(safe, curve.beta2), 0.0)
            x1 = np.where(pos, curve.eps[0], curve.delta[0]) * p1
            x2 = np.where(pos, curve.eps[1], curve.delta[1]) * p2
    x1 = np.where(a > 0, x1, 0.0)
    x2 = np.where(a > 0, x2, 0.0)
    if x1.ndim == 0:
        return float(x1), float(x2)
    return x1, x2


def normalize(curve):
    """Reparametrise u = t^beta1, giving H_gamma = (1/beta1) H_normalised."""
    if isinstance(curve, NormalizedCurve):
        return curve
    if not curve.is_odd:
        raise CurveError("normalisation is only defined for the odd sign pattern")
    return NormalizedCurve(beta=curve.beta2 / curve.beta1, scale=1.0 / curve.beta1, source=curve)
