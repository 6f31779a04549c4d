"""Diagnostics over stored trajectories."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import penalty as pen
from .coupling import fenchel_series
from .dynamics import Trajectory
from .game import (
    Game,
    StrategyProfile,
    dominance_margins,
    is_nash,
    opponent_profiles,
    payoff_vectors,
)
from .penalty import PenaltySpec

EXTINCTION_THRESHOLD = 1e-9
ENVELOPE_SLACK = 1e-9
CONVERGED_TOL = 1e-6


class AnalysisError(ValueError):
    pass


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: dict = field(default_factory=dict)


@dataclass
class AnalysisReport:
    checks: list[Check] = field(default_factory=list)

    def add(self, check: Check) -> Check:
        self.checks.append(check)
        return check

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return str(v)
            if isinstance(v, np.generic):
                return clean(v.item())
            if isinstance(v, np.ndarray):
                return [clean(t) for t in v.tolist()]
            if isinstance(v, dict):
                return {k: clean(t) for k, t in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(t) for t in v]
            return v

        return {"passed": self.passed, "checks": [clean(asdict(c)) for c in self.checks]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def summary(self) -> str:
        rows = [("check", "result", "value", "tolerance")]
        for c in self.checks:
            rows.append((c.name, "pass" if c.passed else "FAIL", f"{c.value:.6g}", f"{c.tolerance:.3g}"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        return "\n".join("  ".join(s.ljust(w) for s, w in zip(r, widths)) for r in rows)


def _profile(traj: Trajectory, row: np.ndarray) -> StrategyProfile:
    off = traj.offsets
    parts = []
    for k in range(len(traj.action_counts)):
        b = np.clip(row[off[k] : off[k + 1]], 0.0, None)
        parts.append(b / b.sum())
    return StrategyProfile(tuple(parts))


def time_average(traj: Trajectory) -> Trajectory:
    """Running mean x_bar(t) = (1/t) int_0^t x(s) ds by the trapezoid rule."""
    if len(traj) == 0:
        raise AnalysisError("empty trajectory")
    t = traj.times - traj.times[0]
    integral = cumulative_trapezoid(traj.x, t, axis=0, initial=0.0)
    xbar = np.empty_like(traj.x)
    xbar[0] = traj.x[0]
    xbar[1:] = integral[1:] / t[1:, None]
    return Trajectory(traj.times, xbar, None, traj.action_counts, dict(traj.meta, derived="time_average"))


@dataclass(frozen=True)
class ExtinctionReport:
    extinct: bool
    first_time: float | None
    threshold: float


def extinction_report(traj: Trajectory, k: int, alpha: int, threshold: float = EXTINCTION_THRESHOLD) -> ExtinctionReport:
    """First time the share of (k, alpha) drops to the threshold and stays there."""
    xs = traj.player_x(k)[:, alpha]
    above = np.nonzero(xs > threshold)[0]
    if above.size == 0:
        return ExtinctionReport(True, float(traj.times[0]), threshold)
    last = above[-1]
    if last == xs.size - 1:
        return ExtinctionReport(False, None, threshold)
    return ExtinctionReport(True, float(traj.times[last + 1]), threshold)


def log_decay_slope(traj: Trajectory, k: int, alpha: int, t0: float, t1: float) -> float:
    """Least-squares slope of log x_{k alpha}(t) over [t0, t1]."""
    sel = (traj.times >= t0) & (traj.times <= t1)
    xs = traj.player_x(k)[sel, alpha]
    if np.any(xs <= 0):
        raise AnalysisError("log-slope fit needs positive shares")
    return float(np.polyfit(traj.times[sel], np.log(xs), 1)[0])


def _fit_offset(h: PenaltySpec, t: np.ndarray, xs: np.ndarray, slope: float, slack: float) -> float:
    """Smallest c with xs <= phi(c - slope t) + slack at every sample."""
    live = xs > slack
    if not np.any(live):
        return -math.inf
    xl = np.minimum(xs[live], 1.0)
    tl = t[live]
    z = np.where(xl >= 1.0, h.slope_at_one, pen.kernel_derivative(h, np.maximum(xl, 1e-300)))
    return float(np.max(z + slope * tl))


def _envelope_violations(h, t, xs, c, slope, slack) -> int:
    env = pen.rate_function(h, c - slope * t)
    return int(np.sum(xs > np.asarray(env) + slack))


@dataclass(frozen=True)
class EnvelopeReport:
    c_fit: float
    violations: int
    c_bound: float | None
    bound_violations: int | None
    slope: float

    @property
    def ok(self) -> bool:
        return self.violations == 0 and not self.bound_violations


def rate_envelope_check(
    traj: Trajectory,
    k: int,
    alpha: int,
    h: PenaltySpec,
    gamma: float,
    delta: float,
    dominator: int | None = None,
    slack: float = ENVELOPE_SLACK,
) -> EnvelopeReport:
    """Fit and check x_{k alpha}(t) <= phi(c - gamma delta t).

    ``c_fit`` is the smallest constant that works for every sample.  With
    a pure ``dominator`` and stored scores the envelope is also checked
    with the constant implied by the initial scores,
    y_alpha(0) - y_dominator(0) + theta'(1-), which must dominate ``c_fit``.
    """
    if not h.decomposable:
        raise AnalysisError("rate envelope needs a decomposable penalty")
    if not delta > 0:
        raise AnalysisError("payoff gap delta must be positive")
    t = traj.times - traj.times[0]
    xs = traj.player_x(k)[:, alpha]
    slope = gamma * delta
    c = _fit_offset(h, t, xs, slope, slack)
    viol = _envelope_violations(h, t, xs, c, slope, slack)
    c_bound = None
    bound_viol = None
    if dominator is not None and traj.y is not None:
        y = traj.player_y(k)[0]
        c_bound = float(y[alpha] - y[dominator] + h.slope_at_one)
        bound_viol = _envelope_violations(h, t, xs, c_bound, slope, slack)
    return EnvelopeReport(c, viol, c_bound, bound_viol, slope)


def _check_zero_sum(game: Game) -> None:
    if not game.is_zero_sum():
        raise AnalysisError("game is not two-player zero-sum")


def zero_sum_conservation(traj: Trajectory, game: Game, p, penalties: Sequence[PenaltySpec] | None = None):
    """Max |F(t) - F(0)| of the Fenchel coupling to the interior equilibrium p.

    Returns ``(drift, series)``.
    """
    _check_zero_sum(game)
    if traj.y is None:
        raise AnalysisError("conservation check needs stored scores")
    prof = p if isinstance(p, StrategyProfile) else StrategyProfile(tuple(p))
    if any(np.any(part <= 0) for part in prof):
        raise AnalysisError("base point must be interior")
    if not is_nash(game, prof, tol=1e-9):
        raise AnalysisError("base point is not a Nash equilibrium")
    hs = penalties if penalties is not None else _penalties_from_meta(traj, game)
    F = fenchel_series(hs, list(prof), traj.y, traj.x, traj.offsets)
    return float(np.max(np.abs(F - F[0]))), F


def _penalties_from_meta(traj: Trajectory, game: Game) -> tuple[PenaltySpec, ...]:
    spec = traj.meta.get("spec") or {}
    names = spec.get("penalties") or []
    if not names:
        raise AnalysisError("trajectory metadata names no penalties")
    hs = tuple(pen.parse_penalty(s) for s in names)
    return hs * game.num_players if len(hs) == 1 else hs


def score_gap_series(traj: Trajectory) -> np.ndarray:
    """Per-player max_{a,b} |y_a(t) - y_b(t)|, shape (samples, players)."""
    if traj.y is None:
        raise AnalysisError("score gaps need stored scores (not available for strategy-field runs)")
    return np.stack(
        [traj.player_y(k).max(axis=1) - traj.player_y(k).min(axis=1) for k in range(len(traj.action_counts))],
        axis=1,
    )


def _payoffs_rows(game: Game, traj: Trajectory, X: np.ndarray) -> list[list[np.ndarray]]:
    return [payoff_vectors(game, _profile(traj, row)) for row in X]


@dataclass(frozen=True)
class TrackingReport:
    series: np.ndarray
    early_mean: float
    late_mean: float
    final: float

    @property
    def decreasing(self) -> bool:
        return self.late_mean < self.early_mean


def br_tracking_gap(traj: Trajectory, game: Game, every: int = 1) -> TrackingReport:
    """delta(t) = max_k [max_a v_ka(xbar) - <v_k(xbar), x_k>] for two-player games."""
    if game.num_players != 2:
        raise AnalysisError("best-reply tracking is defined for two-player games")
    avg = time_average(traj)
    idx = np.arange(0, len(traj), every)
    off = traj.offsets
    out = np.empty(idx.size)
    for j, i in enumerate(idx):
        vs = payoff_vectors(game, _profile(traj, avg.x[i]))
        out[j] = max(
            float(vs[k].max() - vs[k] @ traj.x[i, off[k] : off[k + 1]]) for k in range(2)
        )
    tenth = max(1, idx.size // 10)
    return TrackingReport(out, float(out[:tenth].mean()), float(out[-tenth:].mean()), float(out[-1]))


@dataclass(frozen=True)
class ConvergenceReport:
    converged: bool
    residual: np.ndarray
    final_residual: float
    hit_time: float | None
    envelope_ok: bool | None
    envelope_constants: tuple
    envelope_violations: int | None


def _strict_gaps(game: Game, x_star: Sequence[int]) -> list[np.ndarray]:
    prof = StrategyProfile.pure(game, x_star)
    gaps = []
    for k, vk in enumerate(payoff_vectors(game, prof)):
        a = x_star[k]
        others = np.delete(vk, a)
        if others.size and not np.all(vk[a] - others > 0):
            raise AnalysisError(f"profile {tuple(x_star)} is not a strict equilibrium")
        gaps.append(vk[a] - vk)
    return gaps


def strict_convergence_report(
    traj: Trajectory,
    game: Game,
    x_star: Sequence[int],
    penalties: Sequence[PenaltySpec] | None = None,
    gammas=None,
    eps: float = 0.1,
    window: tuple[float, float] | None = None,
) -> ConvergenceReport:
    """Convergence to a strict pure equilibrium, plus the rate envelope.

    The residual is the total share of non-equilibrium actions.  The
    envelope ``rivals(t) <= sum_mu phi(c_mu - (1-eps) gamma delta_mu t)`` is
    fitted on the first half of ``window`` and checked over all of it.
    """
    gaps = _strict_gaps(game, x_star)
    n = game.num_players
    off = traj.offsets
    resid = np.zeros(len(traj))
    for k in range(n):
        # summing the rival shares avoids the cancellation in 1 - x_star
        rivals = np.delete(traj.player_x(k), x_star[k], axis=1).sum(axis=1)
        resid = np.maximum(resid, rivals)
    t = traj.times
    tail = t >= t[0] + 0.9 * (t[-1] - t[0])
    converged = bool(np.all(resid[tail] <= CONVERGED_TOL))
    zero = np.nonzero(resid > 0)[0]
    hit = None
    if zero.size == 0:
        hit = float(t[0])
    elif zero[-1] < resid.size - 1:
        hit = float(t[zero[-1] + 1])

    env_ok, consts, viol = None, (), None
    if penalties is not None:
        hs = tuple(penalties) * n if len(penalties) == 1 else tuple(penalties)
        g = np.ones(n) if gammas is None else np.broadcast_to(np.asarray(gammas, float), (n,))
        lo, hi = window if window is not None else (t[0], t[-1])
        sel = (t >= lo) & (t <= hi)
        ts = t[sel]
        fit = ts <= lo + 0.5 * (hi - lo)
        viol = 0
        consts = []
        for k in range(n):
            if not hs[k].decomposable:
                raise AnalysisError("rate envelope needs decomposable penalties")
            blk = traj.player_x(k)[sel]
            rivals = np.delete(blk, x_star[k], axis=1).sum(axis=1)
            bound = np.zeros(ts.size)
            ck = []
            for mu in range(game.action_counts[k]):
                if mu == x_star[k]:
                    continue
                rate = (1.0 - eps) * g[k] * gaps[k][mu]
                c = _fit_offset(hs[k], ts[fit], blk[fit, mu], rate, 0.0)
                ck.append(c)
                bound += np.asarray(pen.rate_function(hs[k], c - rate * ts))
            consts.append(tuple(ck))
            viol += int(np.sum(rivals > bound * (1.0 + 1e-9)))
        env_ok = viol == 0
        consts = tuple(consts)
    return ConvergenceReport(converged, resid, float(resid[-1]), hit, env_ok, consts, viol)


@dataclass(frozen=True)
class WeakDominanceReport:
    clause: str  # "first", "second", "both" or "inconclusive"
    p_share: float
    witness_shares: dict
    threshold: float


def weak_dominance_report(traj: Trajectory, game: Game, k: int, p, p_prime, threshold: float = 1e-6) -> WeakDominanceReport:
    """Which alternative of the weak-dominance extinction result is observed by the horizon.

    "first": the weakly dominated strategy p has died out; "second": every
    opponent profile on which p' does strictly better has died out.
    """
    p = np.asarray(p, dtype=float)
    p_prime = np.asarray(p_prime, dtype=float)
    margins = dominance_margins(game, k, p, p_prime)
    if np.any(margins < -1e-12) or not np.any(margins > 1e-12):
        raise AnalysisError("p is not weakly dominated by p_prime")
    profiles = opponent_profiles(game, k)
    witnesses = [profiles[j] for j in np.nonzero(margins > 1e-12)[0]]
    final = traj.x[-1]
    off = traj.offsets
    xk = final[off[k] : off[k + 1]]
    supp = p > 0
    p_share = float(xk[supp].min())
    others = [ell for ell in range(game.num_players) if ell != k]
    shares = {}
    for w in witnesses:
        prob = 1.0
        for ell, a in zip(others, w):
            prob *= final[off[ell] + a]
        shares[tuple(int(a) for a in w)] = float(prob)
    first = p_share <= threshold
    second = all(s <= threshold for s in shares.values())
    clause = "both" if first and second else "first" if first else "second" if second else "inconclusive"
    return WeakDominanceReport(clause, p_share, shares, threshold)


def fenchel_derivative_check(traj: Trajectory, game: Game, p, penalties=None, gammas=None):
    """Compare the finite-difference derivative of the coupling with its predicted value.

    Along the score dynamics the coupling to p moves at
    sum_k gamma_k <v_k(x), x_k - p_k>; the predicted value is averaged over
    each step (trapezoid), so the per-step discrepancy is O(dt^2).
    Returns ``(max_error, errors)``.
    """
    if traj.y is None:
        raise AnalysisError("derivative check needs stored scores")
    hs = penalties if penalties is not None else _penalties_from_meta(traj, game)
    n = game.num_players
    g = np.ones(n) if gammas is None else np.broadcast_to(np.asarray(gammas, float), (n,))
    parts = [np.asarray(v, dtype=float) for v in p]
    F = fenchel_series(hs, parts, traj.y, traj.x, traj.offsets)
    off = traj.offsets
    bracket = np.zeros(len(traj))
    for i, row in enumerate(traj.x):
        vs = payoff_vectors(game, _profile(traj, row))
        bracket[i] = sum(g[k] * vs[k] @ (row[off[k] : off[k + 1]] - parts[k]) for k in range(n))
    dt = np.diff(traj.times)
    err = np.abs(np.diff(F) / dt - 0.5 * (bracket[1:] + bracket[:-1]))
    return float(err.max(initial=0.0)), err


def payoff_spread_check(traj: Trajectory, game: Game, gammas=None, tol: float = 1e-6):
    """Payoff differences at the time average against the score-gap bound.

    For two players, v_k(x_bar(T)) = (y_k(T) - y_k(0)) / (gamma_k T), so each
    pairwise payoff difference at x_bar(T) is at most (max score gap +
    initial gap) / (gamma_k T).  Returns ``(passed, spreads, bounds)``.
    """
    if game.num_players != 2:
        raise AnalysisError("payoff spread bound is stated for two-player games")
    if traj.y is None:
        raise AnalysisError("payoff spread check needs stored scores")
    avg = time_average(traj)
    T = traj.times[-1] - traj.times[0]
    g = np.ones(2) if gammas is None else np.broadcast_to(np.asarray(gammas, float), (2,))
    gaps = score_gap_series(traj)
    vs = payoff_vectors(game, _profile(traj, avg.x[-1]))
    spreads, bounds = [], []
    for k in range(2):
        spreads.append(float(vs[k].max() - vs[k].min()))
        bounds.append(float((gaps[:, k].max() + gaps[0, k]) / (g[k] * T)))
    ok = all(s <= b + tol for s, b in zip(spreads, bounds))
    return ok, spreads, bounds


def stationarity_contradiction(traj: Trajectory, game: Game, radius: float = 0.05, min_duration: float = 100.0, nash_tol: float = 1e-3):
    """Flag a trajectory that lingers near a non-equilibrium point.

    Limits of interior trajectories must be Nash equilibria, so a run that
    stays within ``radius`` of a point for at least ``min_duration`` while
    that point fails the Nash test contradicts the theory.  Returns
    ``(flag, center, duration)``.
    """
    t = traj.times
    i = len(traj) - 1
    center = traj.x[-1]
    while i > 0 and np.abs(traj.x[i - 1] - center).max() <= radius:
        i -= 1
    duration = float(t[-1] - t[i])
    window = traj.x[i:]
    center = window.mean(axis=0)
    if duration < min_duration:
        return False, center, duration
    nash = is_nash(game, _profile(traj, center), tol=nash_tol)
    return (not nash.is_nash), center, duration
