"""Penalty functions on the simplex and their one-dimensional kernels.

Decomposable penalties are sums ``sum_a theta(x_a)`` of a kernel ``theta``;
the Renyi penalty is the one non-decomposable member of the family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

GIBBS = "gibbs"
QUAD = "quad"
TSALLIS = "tsallis"
RENYI = "renyi"
LOGBAR = "logbar"

KINDS = (GIBBS, QUAD, TSALLIS, RENYI, LOGBAR)

# below this distance from q=1 the Tsallis kernel is evaluated as Gibbs
TSALLIS_GIBBS_BAND = 1e-8
SIMPLEX_SUM_TOL = 1e-9


class PenaltyError(ValueError):
    pass


class UnsupportedPenalty(PenaltyError):
    pass


@dataclass(frozen=True)
class PenaltySpec:
    """A penalty kind plus its parameter ``q`` (Tsallis and Renyi only).

    The dimension is not stored: every operation reads it off its input.
    """

    kind: str
    q: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PenaltyError(f"unknown penalty kind {self.kind!r}")
        if self.kind in (TSALLIS, RENYI):
            if self.q is None or not math.isfinite(self.q):
                raise PenaltyError(f"{self.kind} needs a finite parameter q")
            object.__setattr__(self, "q", float(self.q))
            if self.kind == TSALLIS and self.q <= 0:
                raise PenaltyError("Tsallis penalty needs q > 0")
            if self.kind == RENYI and not 0 < self.q < 1:
                raise PenaltyError("Renyi penalty needs q in (0, 1)")
        elif self.q is not None:
            raise PenaltyError(f"{self.kind} penalty takes no parameter")

    @property
    def base(self) -> str:
        """Kind used for evaluation (Tsallis near q=1 runs the Gibbs code)."""
        if self.kind == TSALLIS and abs(self.q - 1.0) < TSALLIS_GIBBS_BAND:
            return GIBBS
        return self.kind

    @property
    def decomposable(self) -> bool:
        return self.kind != RENYI

    @property
    def steep(self) -> bool:
        if self.kind == QUAD:
            return False
        if self.kind == TSALLIS:
            return self.q <= 1.0
        return True

    @property
    def slope_at_zero(self) -> float:
        """theta'(0+); ``-inf`` for steep kernels."""
        b = self.base
        if b in (GIBBS, LOGBAR, RENYI):
            return -math.inf
        if b == QUAD:
            return 0.0
        q = self.q
        return -math.inf if q < 1 else 1.0 / (q * (1.0 - q))

    @property
    def slope_at_one(self) -> float:
        """theta'(1-)."""
        b = self.base
        if b == GIBBS:
            return 1.0
        if b == QUAD:
            return 1.0
        if b == LOGBAR:
            return -1.0
        if b == TSALLIS:
            return 1.0 / self.q
        raise UnsupportedPenalty("Renyi penalty has no one-dimensional kernel")

    def label(self) -> str:
        return f"{self.kind}:{self.q:g}" if self.q is not None else self.kind

    def __str__(self) -> str:
        return self.label()


def parse_penalty(text: str) -> PenaltySpec:
    """Parse ``gibbs | quad | tsallis:<q> | renyi:<q> | logbar``."""
    name, _, arg = text.strip().lower().partition(":")
    if name in (TSALLIS, RENYI):
        if not arg:
            raise PenaltyError(f"{name} needs a parameter, e.g. {name}:0.5")
        try:
            q = float(arg)
        except ValueError:
            raise PenaltyError(f"bad parameter {arg!r} in penalty {text!r}") from None
        return PenaltySpec(name, q)
    if arg:
        raise PenaltyError(f"penalty {name!r} takes no parameter")
    return PenaltySpec(name)


def _check_simplex(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise PenaltyError("expected a nonempty vector")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise PenaltyError("simplex point has negative or non-finite entries")
    if abs(x.sum() - 1.0) > SIMPLEX_SUM_TOL:
        raise PenaltyError(f"simplex point sums to {x.sum()!r}")
    return x


def _require_kernel(h: PenaltySpec) -> str:
    if not h.decomposable:
        raise UnsupportedPenalty("operation needs a decomposable penalty")
    return h.base


def kernel(h: PenaltySpec, x):
    """theta(x), elementwise."""
    b = _require_kernel(h)
    x = np.asarray(x, dtype=float)
    if b == GIBBS:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)
    if b == QUAD:
        return 0.5 * x * x
    if b == LOGBAR:
        with np.errstate(divide="ignore"):
            return np.where(x > 0, -np.log(np.where(x > 0, x, 1.0)), np.inf)
    q = h.q
    return (x - x**q) / (q * (1.0 - q))


def kernel_derivative(h: PenaltySpec, x):
    """theta'(x) for x in (0, 1]."""
    b = _require_kernel(h)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        if b == GIBBS:
            return 1.0 + np.log(x)
        if b == QUAD:
            return x.copy() if x.ndim else x + 0.0
        if b == LOGBAR:
            return -1.0 / x
        q = h.q
        return (1.0 - q * x ** (q - 1.0)) / (q * (1.0 - q))


def kernel_second_derivative(h: PenaltySpec, x):
    b = _require_kernel(h)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        if b == GIBBS:
            return 1.0 / x
        if b == QUAD:
            return np.ones_like(x)
        if b == LOGBAR:
            return 1.0 / (x * x)
        return x ** (h.q - 2.0)


def kernel_weight(h: PenaltySpec, x):
    """1/theta''(x): the per-coordinate weight of the decomposable strategy field."""
    b = _require_kernel(h)
    x = np.asarray(x, dtype=float)
    if b == GIBBS:
        return x + 0.0
    if b == QUAD:
        return np.ones_like(x)
    if b == LOGBAR:
        return x * x
    return x ** (2.0 - h.q)


def inverse_kernel_derivative(h: PenaltySpec, z):
    """Inverse of theta' on its range, clamped to [0, 1] outside it."""
    b = _require_kernel(h)
    z = np.asarray(z, dtype=float)
    lo, hi = h.slope_at_zero, h.slope_at_one
    zc = np.clip(z, lo, hi) if math.isfinite(lo) else np.minimum(z, hi)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if b == GIBBS:
            out = np.exp(zc - 1.0)
        elif b == QUAD:
            out = zc + 0.0
        elif b == LOGBAR:
            out = -1.0 / zc
        else:
            q = h.q
            base = np.maximum(1.0 / q - (1.0 - q) * zc, 0.0)
            out = base ** (1.0 / (q - 1.0))
    out = np.where(z <= lo, 0.0, np.where(z >= hi, 1.0, out))
    return np.clip(out, 0.0, 1.0)


def rate_function(h: PenaltySpec, z):
    """Extinction-rate function: 0 below theta'(0+), 1 above theta'(1-), else (theta')^-1."""
    out = inverse_kernel_derivative(h, z)
    return float(out) if np.ndim(out) == 0 else out


def rate_function_inverse(h: PenaltySpec, x):
    """theta'(x) for x in (0, 1); used to pull envelope samples back to score units."""
    return kernel_derivative(h, x)


def _renyi_xi(q: float, x: np.ndarray) -> tuple[np.ndarray, float]:
    xq = np.where(x > 0, x, 0.0) ** q
    s = xq.sum()
    with np.errstate(divide="ignore"):
        xi = np.where(x > 0, q * xq / np.where(x > 0, x, 1.0) / s, np.inf)
    return xi, s


def value(h: PenaltySpec, x) -> float:
    """h(x).  Returns ``math.inf`` for the log-barrier on the boundary."""
    x = _check_simplex(x)
    if h.base == RENYI:
        return -math.log(float(np.sum(x**h.q))) / (1.0 - h.q)
    if h.base == LOGBAR and np.any(x == 0):
        return math.inf
    return float(np.sum(kernel(h, x)))


def value_rows(h: PenaltySpec, X: np.ndarray) -> np.ndarray:
    """h evaluated on each row of ``X`` without the simplex check."""
    X = np.asarray(X, dtype=float)
    if h.base == RENYI:
        return -np.log(np.sum(np.clip(X, 0, None) ** h.q, axis=-1)) / (1.0 - h.q)
    return np.sum(kernel(h, np.clip(X, 0, None)), axis=-1)


def _face_mask(x: np.ndarray, support) -> np.ndarray:
    mask = np.zeros(x.size, dtype=bool)
    if support is None:
        mask[x > 0] = True
    else:
        mask[np.asarray(list(support), dtype=int)] = True
    return mask


def face_gradient(h: PenaltySpec, x, support=None) -> np.ndarray:
    """Gradient of h restricted to the face spanned by ``support``.

    Returned in ambient coordinates with zeros off the face.  The default
    face is the exact support of ``x``.
    """
    x = np.asarray(x, dtype=float)
    mask = _face_mask(x, support)
    if np.any(x[~mask] > 0):
        raise PenaltyError("support must contain the support of x")
    if h.steep and np.any(x[mask] <= 0):
        raise PenaltyError("steep penalty has no gradient at a zero coordinate of the face")
    out = np.zeros_like(x)
    if h.base == RENYI:
        xi, _ = _renyi_xi(h.q, x)
        out[mask] = xi[mask] / (h.q - 1.0)
    else:
        out[mask] = kernel_derivative(h, x[mask])
    return out


def face_hessian(h: PenaltySpec, x, support=None) -> np.ndarray:
    """Hessian of h restricted to the face, as an ambient n x n matrix."""
    x = np.asarray(x, dtype=float)
    mask = _face_mask(x, support)
    if np.any(x[~mask] > 0):
        raise PenaltyError("support must contain the support of x")
    if h.steep and np.any(x[mask] <= 0):
        raise PenaltyError("steep penalty has no Hessian at a zero coordinate of the face")
    n = x.size
    H = np.zeros((n, n))
    idx = np.nonzero(mask)[0]
    if h.base == RENYI:
        xi, _ = _renyi_xi(h.q, x)
        xs = xi[idx]
        H[np.ix_(idx, idx)] = np.diag(xs / x[idx]) + np.outer(xs, xs) / (1.0 - h.q)
    else:
        H[idx, idx] = kernel_second_derivative(h, x[idx])
    return H


def renyi_inverse_hessian(q: float, x) -> np.ndarray:
    """Closed-form inverse of the Renyi Hessian on the interior: -x x^T + diag(x/xi)."""
    x = np.asarray(x, dtype=float)
    xi, _ = _renyi_xi(q, x)
    return -np.outer(x, x) + np.diag(x / xi)


def boundary_slopes(h: PenaltySpec, x, off) -> np.ndarray:
    """Partial derivatives of h in the coordinates ``off`` where x vanishes."""
    off = np.asarray(off, dtype=int)
    if h.steep:
        return np.full(off.size, -math.inf)
    return np.full(off.size, h.slope_at_zero)


def _tangent_min_eigenvalue(H: np.ndarray) -> float:
    m = H.shape[0]
    # orthonormal basis of {z : sum z = 0}
    basis = np.linalg.qr(np.eye(m) - 1.0 / m)[0][:, : m - 1]
    return float(np.linalg.eigvalsh(basis.T @ H @ basis)[0])


@lru_cache(maxsize=64)
def _estimated_constant(h: PenaltySpec, n: int, samples: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    best = math.inf
    for m in range(2, n + 1):
        pts = rng.dirichlet(np.ones(m), size=samples)
        pts = np.vstack([np.full(m, 1.0 / m), pts])
        for x in pts:
            x = np.clip(x, 1e-12, None)
            x = x / x.sum()
            with np.errstate(over="ignore", invalid="ignore"):
                H = face_hessian(h, x, range(m))
            if np.all(np.isfinite(H)):
                best = min(best, _tangent_min_eigenvalue(H))
    return best


def convexity_constant(h: PenaltySpec, n: int, samples: int = 10_000, seed: int = 0) -> float:
    """Lower bound K on the curvature of h along the simplex.

    Closed form (K = 1) for Gibbs, quadratic, log-barrier and Tsallis with
    q <= 2.  Tsallis with q > 2 and Renyi get a sampled estimate: the
    smallest tangent-space Hessian eigenvalue over Dirichlet samples of every
    face size, shrunk by 1% and floored at 1e-6.
    """
    if n < 1:
        raise PenaltyError("dimension must be positive")
    if h.base in (GIBBS, QUAD, LOGBAR) or (h.base == TSALLIS and h.q <= 2.0):
        return 1.0
    if n == 1:
        return 1.0
    est = _estimated_constant(h, int(n), int(samples), int(seed))
    return max(0.99 * est, 1e-6)
