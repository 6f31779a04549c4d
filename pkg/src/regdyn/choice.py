"""Regularized best responses: the choice map Q, its conjugate and inverses."""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np
from scipy.special import logsumexp

from . import penalty as pen
from .penalty import PenaltySpec

MU_TOL = 1e-13
NEWTON_MAX_ITER = 100
KKT_TOL = 1e-11
COMPLEMENTARITY_TOL = 1e-9


class ChoiceError(RuntimeError):
    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def _scores(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("score vector must be a nonempty 1-d array")
    if not np.all(np.isfinite(y)):
        raise ValueError("score vector has non-finite entries")
    return y


def logit(y: np.ndarray) -> np.ndarray:
    z = np.exp(y - y.max())
    return z / z.sum()


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the simplex (sort and threshold)."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    j = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / j > 0)[0][-1]
    mu = css[rho] / (rho + 1)
    return np.maximum(y - mu, 0.0)


def _kernel_choice(h: PenaltySpec, y: np.ndarray) -> np.ndarray:
    """Solve sum_a phi(y_a - mu) = 1 for the multiplier mu.

    phi is the clamped inverse of theta'; the sum is decreasing in mu.  A
    Newton step is taken when it stays inside the bracket, otherwise the
    bracket is bisected.
    """
    n = y.size
    top = y.max()
    lo = top - h.slope_at_one  # largest coordinate saturates at 1
    hi = top - float(pen.kernel_derivative(h, 1.0 / n))  # largest coordinate at 1/n
    mu = 0.5 * (lo + hi)
    for _ in range(200):
        x = pen.inverse_kernel_derivative(h, y - mu)
        f = x.sum() - 1.0
        if f > 0:
            lo = mu
        else:
            hi = mu
        if hi - lo <= MU_TOL * max(1.0, abs(mu)):
            break
        inner = (x > 0) & (x < 1)
        slope = -float(np.sum(pen.kernel_weight(h, x[inner])))
        step = mu - f / slope if slope < 0 else math.nan
        mu = step if lo < step < hi else 0.5 * (lo + hi)
    x = pen.inverse_kernel_derivative(h, y - mu)
    return x / x.sum()


def _face_newton(h: PenaltySpec, y: np.ndarray, face: np.ndarray):
    """Damped Newton on the equality-constrained problem over one face.

    Returns ``(x, mu, residual)`` or ``None`` when the iterate collapses
    onto the face boundary (the maximizer then lives on a smaller face).
    """
    n = y.size
    m = face.size
    x = np.zeros(n)
    x[face] = 1.0 / m
    g = pen.face_gradient(h, x, face)[face]
    mu = float(np.mean(y[face] - g))

    def residual(xf, muv):
        xx = np.zeros(n)
        xx[face] = xf
        r = y[face] - pen.face_gradient(h, xx, face)[face] - muv
        return np.concatenate([r, [1.0 - xf.sum()]])

    r = residual(x[face], mu)
    for _ in range(NEWTON_MAX_ITER):
        res = float(np.abs(r).max())
        norm = float(np.linalg.norm(r))
        if res <= KKT_TOL:
            return x, mu, res
        H = pen.face_hessian(h, x, face)[np.ix_(face, face)]
        K = np.zeros((m + 1, m + 1))
        K[:m, :m] = H
        K[:m, m] = 1.0
        K[m, :m] = 1.0
        try:
            d = np.linalg.solve(K, r)
        except np.linalg.LinAlgError:
            return None
        dx, dmu = d[:m], d[m]
        xf = x[face]
        # fraction-to-boundary keeps the iterate strictly inside the face
        t = 1.0
        neg = dx < 0
        if np.any(neg):
            t = min(1.0, 0.99 * float(np.min(-xf[neg] / dx[neg])))
        accepted = False
        while t > 1e-12:
            xn = xf + t * dx
            rn = residual(xn, mu + t * dmu)
            if np.linalg.norm(rn) <= (1.0 - 1e-4 * t) * norm:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return None
        x[face] = xn
        mu += t * dmu
        r = rn
        if xn.min() < 1e-13 and m > 1:
            return None
    res = float(np.abs(r).max())
    return (x, mu, res) if res <= KKT_TOL else None


def active_set_choice(h: PenaltySpec, y) -> np.ndarray:
    """Generic maximizer of <y, x> - h(x) over the simplex.

    Supports are tried from largest to smallest; on each face a damped
    Newton iteration solves the KKT system and the first candidate that also
    satisfies complementarity on the dropped coordinates is returned.  For a
    steep penalty only the full support can satisfy complementarity.
    """
    y = _scores(y)
    n = y.size
    best_res = math.inf
    sizes = [n] if h.steep else range(n, 0, -1)
    for m in sizes:
        for face in combinations(range(n), m):
            face = np.array(face)
            if m == 1:
                x = np.zeros(n)
                x[face[0]] = 1.0
                mu = y[face[0]] - pen.face_gradient(h, x, face)[face[0]]
                cand = (x, mu, 0.0)
            else:
                cand = _face_newton(h, y, face)
            if cand is None:
                continue
            x, mu, res = cand
            best_res = min(best_res, res)
            off = np.setdiff1d(np.arange(n), face)
            if off.size:
                bound = pen.boundary_slopes(h, x, off)
                if np.any(y[off] - mu > bound + COMPLEMENTARITY_TOL):
                    continue
            x = np.clip(x, 0.0, None)
            return x / x.sum()
    raise ChoiceError("active-set solver found no KKT point", best_res)


def choice_map(h: PenaltySpec, y) -> np.ndarray:
    """Q(y): the maximizer of <y, x> - h(x) over the simplex."""
    y = _scores(y)
    b = h.base
    if b == pen.GIBBS:
        return logit(y)
    if b == pen.QUAD:
        return project_simplex(y)
    if b == pen.RENYI:
        return active_set_choice(h, y)
    return _kernel_choice(h, y)


def conjugate_value(h: PenaltySpec, y) -> float:
    """h*(y) = max_x <y, x> - h(x)."""
    y = _scores(y)
    if h.base == pen.GIBBS:
        return float(logsumexp(y))
    x = choice_map(h, y)
    return float(y @ x) - pen.value(h, x)


def inverse_choice(h: PenaltySpec, x) -> np.ndarray:
    """A score vector y with Q(y) = x.

    On the support y is the face gradient shifted to sum to zero there;
    off the support (nonsteep penalties only) y sits one unit below the
    complementarity cutoff.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or abs(x.sum() - 1.0) > pen.SIMPLEX_SUM_TOL:
        raise ValueError("x must lie on the simplex")
    mask = x > 0
    if h.steep and not mask.all():
        raise ValueError("a steep penalty only reaches interior strategies")
    g = pen.face_gradient(h, x, np.nonzero(mask)[0])
    shift = g[mask].mean()
    y = np.where(mask, g - shift, 0.0)
    if not mask.all():
        # complementarity needs y_b - mu <= theta'(0+), and mu = -shift here
        y[~mask] = pen.boundary_slopes(h, x, np.nonzero(~mask)[0]) - shift - 1.0
    return y
