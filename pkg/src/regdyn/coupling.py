"""Bregman divergence and Fenchel coupling between strategies and scores."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import penalty as pen
from .choice import conjugate_value
from .penalty import PenaltySpec


class CouplingError(ValueError):
    pass


@dataclass(frozen=True, order=False)
class ExtendedReal:
    """A real number or +infinity, kept apart from float arithmetic."""

    finite_value: float = 0.0
    infinite: bool = False

    @classmethod
    def inf(cls) -> "ExtendedReal":
        return cls(0.0, True)

    @property
    def is_finite(self) -> bool:
        return not self.infinite

    def __float__(self) -> float:
        return math.inf if self.infinite else self.finite_value

    def _cmp(self, other) -> float:
        o = float(other)
        if self.infinite:
            return 0.0 if o == math.inf else 1.0
        return self.finite_value - o

    def __ge__(self, other) -> bool:
        return self._cmp(other) >= 0

    def __gt__(self, other) -> bool:
        return self._cmp(other) > 0

    def __le__(self, other) -> bool:
        return self._cmp(other) <= 0

    def __lt__(self, other) -> bool:
        return self._cmp(other) < 0

    def __repr__(self) -> str:
        return "ExtendedReal(+inf)" if self.infinite else f"ExtendedReal({self.finite_value!r})"


@dataclass(frozen=True)
class FaceSet:
    """All simplex points whose support contains the support of ``base``."""

    base: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))

    def __contains__(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x[self.base > 0] > 0))


def _directional_derivative(h: PenaltySpec, x: np.ndarray, p: np.ndarray) -> float:
    """One-sided derivative h'(x; p - x), possibly -inf."""
    z = p - x
    on = x > 0
    entering = (~on) & (p > 0)
    if np.any(entering) and h.steep:
        return -math.inf
    if h.base == pen.RENYI:
        xq = x[on] ** h.q
        xi = h.q * xq / x[on] / xq.sum()
        return float(np.dot(xi, z[on]) / (h.q - 1.0))
    d = float(np.dot(pen.kernel_derivative(h, x[on]), z[on]))
    if np.any(entering):
        d += h.slope_at_zero * float(p[entering].sum())
    return d


def bregman(h: PenaltySpec, p, x) -> ExtendedReal:
    """D_h(p, x) = h(p) - h(x) - h'(x; p - x)."""
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    if p.shape != x.shape:
        raise CouplingError("p and x have different dimensions")
    hp = pen.value(h, p)
    hx = pen.value(h, x)
    if math.isinf(hp) or math.isinf(hx):
        return ExtendedReal.inf()
    d = _directional_derivative(h, x, p)
    if math.isinf(d):
        return ExtendedReal.inf()
    return ExtendedReal(hp - hx - d)


def fenchel(h: PenaltySpec, p, y) -> float:
    """F_h(p, y) = h(p) + h*(y) - <y, p>."""
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if p.shape != y.shape:
        raise CouplingError("p and y have different dimensions")
    hp = pen.value(h, p)
    if math.isinf(hp):
        raise CouplingError("base point lies outside the domain of the penalty")
    return hp + conjugate_value(h, y) - float(y @ p)


def _split(parts, sizes):
    if isinstance(parts, np.ndarray) and parts.ndim == 1:
        off = np.cumsum([0, *sizes])
        if parts.size != off[-1]:
            raise CouplingError("flat profile does not match the player dimensions")
        return [parts[off[k] : off[k + 1]] for k in range(len(sizes))]
    return [np.asarray(v, dtype=float) for v in parts]


def fenchel_profile(penalties: Sequence[PenaltySpec], p, y) -> float:
    """Sum of the per-player Fenchel couplings."""
    p_parts = [np.asarray(v, dtype=float) for v in p]
    y_parts = _split(y, [v.size for v in p_parts])
    if len(penalties) != len(p_parts) or len(y_parts) != len(p_parts):
        raise CouplingError("need one penalty, base strategy and score vector per player")
    return float(sum(fenchel(h, pk, yk) for h, pk, yk in zip(penalties, p_parts, y_parts)))


def fenchel_series(penalties: Sequence[PenaltySpec], p, Y: np.ndarray, X: np.ndarray, offsets) -> np.ndarray:
    """Coupling along a stored trajectory, reusing the stored choices X = Q(Y).

    ``h*(y) = <y, Q(y)> - h(Q(y))``, so no choice map is re-solved.  Gibbs
    blocks use log-sum-exp directly for accuracy.
    """
    total = np.zeros(Y.shape[0])
    for k, h in enumerate(penalties):
        a, b = offsets[k], offsets[k + 1]
        yk, xk, pk = Y[:, a:b], X[:, a:b], np.asarray(p[k], dtype=float)
        hp = pen.value(h, pk)
        if h.base == pen.GIBBS:
            conj = logsumexp(yk, axis=1)
        else:
            conj = np.sum(yk * xk, axis=1) - pen.value_rows(h, xk)
        total += hp + conj - yk @ pk
    return total
