"""Score-space learning dynamics, the induced strategy fields, and integrators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _backend
from . import penalty as pen
from .choice import choice_map
from .game import SUPPORT_THRESHOLD, Game, StrategyProfile, as_profile, payoff_vectors
from .penalty import PenaltySpec

SCORE = "score"
DISCOUNTED = "discounted"
EREV_ROTH = "erev_roth"
CROSS = "cross"
URL = "url"
DIRECT = "direct"
VARIANTS = (SCORE, DISCOUNTED, EREV_ROTH, CROSS, URL, DIRECT)

GENERIC = "generic"
REPLICATOR = "replicator"
PROJECTION = "projection"
QREPLICATOR = "qreplicator"
RENYI_FIELD = "renyi"
LOGBAR_FIELD = "logbar"
FIELDS = (GENERIC, REPLICATOR, PROJECTION, QREPLICATOR, RENYI_FIELD, LOGBAR_FIELD)

TIE_RULES = ("lowest", "uniform")
SIMPLEX_DRIFT_TOL = 1e-7


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DynamicsSpec:
    """Which system to integrate and with which parameters.

    A single penalty is broadcast to every player.  ``lam`` is the discount
    factor of the discounted variant; ``q`` parametrizes the q-replicator
    and Renyi strategy fields; ``tie`` and ``tau`` configure the
    unpenalized flow.
    """

    variant: str = SCORE
    penalties: tuple[PenaltySpec, ...] = ()
    gammas: tuple[float, ...] | None = None
    lam: float | None = None
    field: str | None = None
    q: float | None = None
    tie: str = "lowest"
    tau: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        object.__setattr__(self, "penalties", tuple(self.penalties))
        if self.gammas is not None:
            g = tuple(float(v) for v in self.gammas)
            if any(not (v > 0 and math.isfinite(v)) for v in g):
                raise ValueError("learning rates must be positive and finite")
            object.__setattr__(self, "gammas", g)
        if self.variant in (SCORE, DISCOUNTED) and not self.penalties:
            raise ValueError(f"variant {self.variant!r} needs a penalty per player")
        if self.variant == DISCOUNTED:
            if self.lam is None or not 0 < self.lam <= 1:
                raise ValueError("discounted variant needs lam in (0, 1]")
        if self.variant == DIRECT:
            if self.field not in FIELDS:
                raise ValueError(f"direct variant needs a field from {FIELDS}")
            if self.field == GENERIC and not self.penalties:
                raise ValueError("generic field needs a penalty per player")
            if self.field == QREPLICATOR and (self.q is None or self.q <= 0):
                raise ValueError("q-replicator field needs q > 0")
            if self.field == RENYI_FIELD and (self.q is None or not 0 < self.q < 1):
                raise ValueError("Renyi field needs q in (0, 1)")
        if self.tie not in TIE_RULES:
            raise ValueError(f"tie rule must be one of {TIE_RULES}")
        if not self.tau > 0:
            raise ValueError("warm-up length tau must be positive")

    @property
    def effective_variant(self) -> str:
        if self.variant == DISCOUNTED and self.lam == 1.0:
            return SCORE
        return self.variant

    @property
    def extended_solution(self) -> bool:
        """True when a direct field may reach the boundary in finite time."""
        if self.variant != DIRECT:
            return False
        if self.field == PROJECTION:
            return True
        if self.field == QREPLICATOR:
            return self.q > 1
        if self.field == GENERIC:
            return any(not h.steep for h in self.penalties)
        return False

    def penalties_for(self, n_players: int) -> tuple[PenaltySpec, ...]:
        if len(self.penalties) == 1:
            return self.penalties * n_players
        if len(self.penalties) != n_players:
            raise ValueError(f"need 1 or {n_players} penalties, got {len(self.penalties)}")
        return self.penalties

    def gammas_for(self, n_players: int) -> np.ndarray:
        if self.gammas is None:
            return np.ones(n_players)
        g = self.gammas * n_players if len(self.gammas) == 1 else self.gammas
        if len(g) != n_players:
            raise ValueError(f"need 1 or {n_players} learning rates, got {len(self.gammas)}")
        return np.array(g, dtype=float)

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "penalties": [h.label() for h in self.penalties],
            "gammas": list(self.gammas) if self.gammas is not None else None,
            "lam": self.lam,
            "field": self.field,
            "q": self.q,
            "tie": self.tie,
            "tau": self.tau,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DynamicsSpec":
        d = dict(d)
        d["penalties"] = tuple(pen.parse_penalty(s) for s in d.get("penalties") or ())
        if d.get("gammas") is not None:
            d["gammas"] = tuple(d["gammas"])
        return cls(**d)


@dataclass(frozen=True)
class Trajectory:
    """Stored samples of a run.  ``x`` and ``y`` are flat per-player blocks."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray | None
    action_counts: tuple[int, ...]
    meta: dict = field(default_factory=dict)
    events: tuple = ()
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.times.ndim != 1 or self.x.shape[0] != self.times.size:
            raise ValueError("times and states disagree in length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def offsets(self) -> tuple[int, ...]:
        out = [0]
        for n in self.action_counts:
            out.append(out[-1] + n)
        return tuple(out)

    def player_x(self, k: int) -> np.ndarray:
        off = self.offsets
        return self.x[:, off[k] : off[k + 1]]

    def player_y(self, k: int) -> np.ndarray:
        if self.y is None:
            raise ValueError("trajectory stores no scores")
        off = self.offsets
        return self.y[:, off[k] : off[k + 1]]

    def profile_at(self, i: int) -> StrategyProfile:
        off = self.offsets
        return StrategyProfile(tuple(self.x[i, off[k] : off[k + 1]] for k in range(len(self.action_counts))))

    def __len__(self) -> int:
        return self.times.size


def _blocks(game: Game, flat: np.ndarray) -> list[np.ndarray]:
    off = game.offsets
    return [flat[off[k] : off[k + 1]] for k in range(game.num_players)]


def _flat_scores(game: Game, y) -> np.ndarray:
    if isinstance(y, np.ndarray) and y.ndim == 1:
        flat = np.asarray(y, dtype=float)
    else:
        flat = np.concatenate([np.asarray(v, dtype=float).ravel() for v in y])
    if flat.size != game.offsets[-1]:
        raise ValueError(f"score profile has {flat.size} entries, game needs {game.offsets[-1]}")
    if not np.all(np.isfinite(flat)):
        raise ValueError("score profile has non-finite entries")
    return flat


def choices(game: Game, penalties: Sequence[PenaltySpec], y) -> np.ndarray:
    y = _flat_scores(game, y)
    return np.concatenate([choice_map(h, yk) for h, yk in zip(penalties, _blocks(game, y))])


def _payoff_flat(game: Game, x_flat: np.ndarray) -> np.ndarray:
    return np.concatenate(payoff_vectors(game, StrategyProfile.from_flat(game, x_flat)))


def score_field(game: Game, spec: DynamicsSpec, y) -> np.ndarray:
    """Time derivative of the scores: gamma_k v_k(Q(y)), plus ln(lam) y when discounted."""
    if spec.effective_variant not in (SCORE, DISCOUNTED):
        raise ValueError("score_field applies to the score and discounted variants")
    y = _flat_scores(game, y)
    hs = spec.penalties_for(game.num_players)
    g = spec.gammas_for(game.num_players)
    v = _payoff_flat(game, choices(game, hs, y))
    rates = np.repeat(g, game.action_counts)
    out = rates * v
    if spec.effective_variant == DISCOUNTED:
        out = out + math.log(spec.lam) * y
    return out


def _field_weights(kind: str, q: float | None, xs: np.ndarray) -> np.ndarray:
    if kind == REPLICATOR:
        return xs
    if kind == PROJECTION:
        return np.ones_like(xs)
    if kind == QREPLICATOR:
        return xs ** (2.0 - q)
    if kind == LOGBAR_FIELD:
        return xs * xs
    raise ValueError(kind)


def _weighted_block(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    return w * (v - np.dot(w, v) / w.sum())


def _renyi_block(q: float, xs: np.ndarray, v: np.ndarray) -> np.ndarray:
    xq = xs**q
    xi = q * xq / xs / xq.sum()
    s = np.dot(xs, 1.0 / xi)
    a = np.dot(xs, v)
    b = np.dot(xs / xi, v)
    return (xs / xi) * v + xs * (s - 1.0 / xi) / (1.0 - s) * a - xs * (1.0 - 1.0 / xi) / (1.0 - s) * b


def _generic_block(h: PenaltySpec, xs: np.ndarray, v: np.ndarray) -> np.ndarray:
    H = pen.face_hessian(h, xs)
    try:
        ginv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        raise IntegrationError("singular face Hessian") from None
    g_row = ginv.sum(axis=1)
    return ginv @ v - g_row * np.dot(g_row, v) / g_row.sum()


def strategy_field(
    game: Game,
    field_kind: str,
    x,
    *,
    q: float | None = None,
    penalties: Sequence[PenaltySpec] | None = None,
    gammas=None,
) -> np.ndarray:
    """Strategy-space vector field on the current support face (flat output).

    Coordinates at or below the support threshold get zero velocity.
    """
    if field_kind not in FIELDS:
        raise ValueError(f"unknown field {field_kind!r}")
    if isinstance(x, np.ndarray) and x.ndim == 1:
        x_flat = np.asarray(x, dtype=float)
    else:
        x_flat = as_profile(game, x).flat
    n = game.num_players
    if field_kind == GENERIC:
        if penalties is None:
            raise ValueError("generic field needs penalties")
        penalties = penalties * n if len(penalties) == 1 else penalties
    g = np.ones(n) if gammas is None else np.asarray(gammas, dtype=float)
    v_blocks = _payoffs_unchecked(game, x_flat)
    out = np.zeros_like(x_flat)
    off = game.offsets
    for k in range(n):
        xk = x_flat[off[k] : off[k + 1]]
        on = xk > SUPPORT_THRESHOLD
        if on.sum() < 2:
            continue
        xs, vs = xk[on], g[k] * v_blocks[k][on]
        if field_kind == GENERIC:
            blk = _generic_block(penalties[k], xs / xs.sum(), vs)
        elif field_kind == RENYI_FIELD:
            blk = _renyi_block(q, xs, vs)
        else:
            blk = _weighted_block(_field_weights(field_kind, q, xs), vs)
        seg = out[off[k] : off[k + 1]]
        seg[on] = blk
    return out


def _payoffs_unchecked(game: Game, x_flat: np.ndarray) -> list[np.ndarray]:
    # intermediate Runge-Kutta stages can sit marginally off the simplex
    off = game.offsets
    parts = [x_flat[off[k] : off[k + 1]] for k in range(game.num_players)]
    out = []
    for k in range(game.num_players):
        t = game.payoffs[k]
        for ell in reversed(range(game.num_players)):
            if ell != k:
                t = np.tensordot(t, parts[ell], axes=([ell], [0]))
        out.append(np.asarray(t, dtype=float))
    return out


def replicator_field(game: Game, x) -> np.ndarray:
    return strategy_field(game, REPLICATOR, x)


def erev_roth_field(game: Game, y) -> np.ndarray:
    """Erev-Roth scores: each action's score grows by its payoff times its probability."""
    y = _flat_scores(game, y)
    if np.any(y <= 0):
        raise ValueError("Erev-Roth scores must be positive")
    x = np.concatenate([b / b.sum() for b in _blocks(game, y)])
    return x * _payoff_flat(game, x)


def _check_cross_payoffs(game: Game) -> None:
    u = game.payoffs
    if np.any(u <= 0) or np.any(u >= 1):
        raise ValueError("the Cross model needs every payoff strictly inside (0, 1)")


def cross_bs_field(game: Game, x) -> np.ndarray:
    """Cross learning: reinforce the played action, shrink the others."""
    _check_cross_payoffs(game)
    x_flat = np.asarray(x, dtype=float) if isinstance(x, np.ndarray) and x.ndim == 1 else as_profile(game, x).flat
    v = np.concatenate(_payoffs_unchecked(game, x_flat))
    out = np.empty_like(x_flat)
    off = game.offsets
    for k in range(game.num_players):
        xk, vk = x_flat[off[k] : off[k + 1]], v[off[k] : off[k + 1]]
        others = np.dot(xk, vk) - xk * vk
        out[off[k] : off[k + 1]] = xk * (1.0 - xk) * vk - xk * others
    return out


@dataclass(frozen=True)
class UrlState:
    y: np.ndarray
    chi: np.ndarray
    t: float


def best_reply(game: Game, y_flat: np.ndarray, tie: str = "lowest") -> np.ndarray:
    """Pure (or tie-uniform) argmax of each player's score block."""
    out = np.zeros_like(y_flat)
    off = game.offsets
    for k in range(game.num_players):
        yk = y_flat[off[k] : off[k + 1]]
        ties = np.nonzero(yk.max() - yk <= 1e-12)[0]
        seg = out[off[k] : off[k + 1]]
        if tie == "uniform":
            seg[ties] = 1.0 / ties.size
        else:
            seg[ties[0]] = 1.0
    return out


def product_distribution(game: Game, x_flat: np.ndarray) -> np.ndarray:
    chi = np.ones(())
    for part in _blocks(game, x_flat):
        chi = np.multiply.outer(chi, part)
    return chi.ravel()


def unpenalized_step(game: Game, state: UrlState, dt: float, tau: float = 1.0, tie: str = "lowest") -> UrlState:
    """One Euler step of the unpenalized flow with the correlated running average."""
    x = best_reply(game, state.y, tie)
    y = state.y + dt * _payoff_flat(game, x)
    t = state.t
    chi = ((tau + t) * state.chi + dt * product_distribution(game, x)) / (tau + t + dt)
    return UrlState(y, chi, t + dt)


def warmup_scores(game: Game, tau: float) -> np.ndarray:
    """Scores after uniform play over a warm-up interval of length tau."""
    return tau * _payoff_flat(game, StrategyProfile.uniform(game).flat)


def _steps(T: float, dt: float) -> int:
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError("step size must be positive")
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"horizon {T} is not a whole number of steps of size {dt}")
    return n


def _stored_steps(nsteps: int, every: int) -> np.ndarray:
    idx = np.arange(0, nsteps + 1, every)
    if idx[-1] != nsteps:
        idx = np.append(idx, nsteps)
    return idx


def _rk4(f, z0: np.ndarray, dt: float, nsteps: int, every: int, post=None):
    rows = [z0.copy()]
    z = z0.copy()
    for step in range(1, nsteps + 1):
        k1 = f(z)
        k2 = f(z + 0.5 * dt * k1)
        k3 = f(z + 0.5 * dt * k2)
        k4 = f(z + dt * k3)
        z = z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if post is not None:
            z = post(step, z, (k1, k2, k3, k4))
        if not np.all(np.isfinite(z)):
            raise IntegrationError(f"non-finite state at step {step}")
        if step % every == 0 or step == nsteps:
            rows.append(z.copy())
    return np.array(rows)


def _meta(game: Game, spec: DynamicsSpec, T: float, dt: float, integrator: str, backend: str) -> dict:
    return {
        "game": game.name,
        "game_hash": game.digest(),
        "action_counts": list(game.action_counts),
        "spec": spec.to_json(),
        "T": T,
        "dt": dt,
        "integrator": integrator,
        "backend": backend,
    }


def integrate(
    game: Game,
    spec: DynamicsSpec,
    y0=None,
    x0=None,
    T: float = 10.0,
    dt: float = 1e-3,
    store_every: int = 1,
    backend: str | None = None,
) -> Trajectory:
    """Fixed-step integration of the system described by ``spec``.

    Score variants start from ``y0`` (zeros by default), the direct and
    Cross fields from ``x0`` (uniform by default), Erev-Roth from positive
    ``y0`` (ones by default).  The unpenalized flow defaults to the scores
    produced by uniform play over the warm-up interval.
    """
    nsteps = _steps(T, dt)
    every = int(store_every)
    if every < 1:
        raise ValueError("store_every must be at least 1")
    steps = _stored_steps(nsteps, every)
    times = steps * dt
    variant = spec.effective_variant
    D = game.offsets[-1]
    counts = game.action_counts

    if variant in (SCORE, DISCOUNTED):
        y = np.zeros(D) if y0 is None else _flat_scores(game, y0)
        hs = spec.penalties_for(game.num_players)
        gam = spec.gammas_for(game.num_players)
        loglam = math.log(spec.lam) if variant == DISCOUNTED else 0.0
        if all(h.base in _backend.KIND_CODES for h in hs):
            kern = _backend.get(backend)
            name = "compiled" if kern is not _backend.get("python") else "python"
            u = np.ascontiguousarray(game.payoffs.reshape(game.num_players, -1))
            kinds = np.array([_backend.KIND_CODES[h.base] for h in hs], dtype=np.int64)
            qs = np.array([h.q if h.q is not None else 1.0 for h in hs])
            rows, Y, X, status = kern.integrate_scores(
                u, np.array(counts, dtype=np.int64), y, gam, kinds, qs, loglam, float(dt), nsteps, every
            )
            if status:
                raise IntegrationError("score integration produced a non-finite state")
        else:
            name = "numpy"
            Y = _rk4(lambda z: score_field(game, spec, z), y, dt, nsteps, every)
            X = np.array([choices(game, hs, row) for row in Y])
        return Trajectory(times, X, Y, counts, _meta(game, spec, T, dt, "rk4", name))

    if variant == URL:
        kern = _backend.get(backend)
        name = "compiled" if kern is not _backend.get("python") else "python"
        y = warmup_scores(game, spec.tau) if y0 is None else _flat_scores(game, y0)
        chi0 = product_distribution(game, StrategyProfile.uniform(game).flat)
        u = np.ascontiguousarray(game.payoffs.reshape(game.num_players, -1))
        rows, Y, X, XB, chi, err = kern.integrate_url(
            u, np.array(counts, dtype=np.int64), y, chi0, float(spec.tau), float(dt), nsteps, every,
            1 if spec.tie == "uniform" else 0,
        )
        scale = max(1.0, float(np.abs(Y).max()))
        if err > 1e-9 * scale:
            raise IntegrationError(f"running-average payoff identity broken (error {err:.3e})")
        extras = {"xbar": XB, "chi": chi.reshape(counts), "identity_error": err}
        return Trajectory(times, X, Y, counts, _meta(game, spec, T, dt, "euler", name), extras=extras)

    if variant == EREV_ROTH:
        y = np.ones(D) if y0 is None else _flat_scores(game, y0)
        erev_roth_field(game, y)  # validates positivity
        Y = _rk4(lambda z: erev_roth_field(game, z), y, dt, nsteps, every)
        X = np.concatenate([b / b.sum(axis=1, keepdims=True) for b in np.split(Y, game.offsets[1:-1], axis=1)], axis=1)
        return Trajectory(times, X, Y, counts, _meta(game, spec, T, dt, "rk4", "numpy"))

    x = StrategyProfile.uniform(game).flat if x0 is None else as_profile(game, x0).flat
    if variant == CROSS:
        _check_cross_payoffs(game)
        X = _rk4(lambda z: cross_bs_field(game, z), x, dt, nsteps, every)
        return Trajectory(times, X, None, counts, _meta(game, spec, T, dt, "rk4", "numpy"))

    return _integrate_direct(game, spec, x, T, dt, nsteps, every, times)


def _integrate_direct(game, spec, x, T, dt, nsteps, every, times) -> Trajectory:
    steep_field = not spec.extended_solution
    off = game.offsets
    if steep_field and np.any(x <= 0):
        raise ValueError("a steep strategy field needs an interior starting point")
    hs = spec.penalties_for(game.num_players) if spec.field == GENERIC else None
    gam = spec.gammas_for(game.num_players)
    events = []

    def f(z):
        return strategy_field(game, spec.field, z, q=spec.q, penalties=hs, gammas=gam)

    def post(step, z, ks):
        bound = max(float(np.abs(k).max()) for k in ks)
        neg = z < 0
        if np.any(neg) and float(-z[neg].min()) > dt * bound + 1e-15:
            raise IntegrationError(f"negative overshoot beyond the step bound at step {step}")
        old_on = prev[0] > SUPPORT_THRESHOLD
        # drift is measured before clamping: the field itself must stay tangent
        for k in range(game.num_players):
            drift = abs(z[off[k] : off[k + 1]].sum() - 1.0)
            if drift > SIMPLEX_DRIFT_TOL:
                raise IntegrationError(f"simplex drift {drift:.2e} at step {step}; reduce dt")
        z = np.where(neg, 0.0, z)
        for k in range(game.num_players):
            blk = z[off[k] : off[k + 1]]
            z[off[k] : off[k + 1]] = blk / blk.sum()
        new_on = z > SUPPORT_THRESHOLD
        for i in np.nonzero(old_on != new_on)[0]:
            k = int(np.searchsorted(off, i, side="right") - 1)
            events.append(
                {"t": step * dt, "player": k, "action": int(i - off[k]), "kind": "exit" if old_on[i] else "enter"}
            )
        prev[0] = z
        return z

    prev = [x.copy()]
    X = _rk4(f, x, dt, nsteps, every, post=post)
    meta = _meta(game, spec, T, dt, "rk4-clamped", "numpy")
    meta["extended_solution"] = spec.extended_solution
    return Trajectory(times, X, None, game.action_counts, meta, events=tuple(events))


def best_response_dynamics(game: Game, xbar0, T: float, dt: float, tau: float = 1.0, tie: str = "lowest") -> Trajectory:
    """Euler integration of d/dt xbar = (br(xbar) - xbar) / (tau + t)."""
    nsteps = _steps(T, dt)
    xb = as_profile(game, xbar0).flat
    rows = [xb.copy()]
    for step in range(nsteps):
        t = step * dt
        br = best_reply(game, _payoff_flat(game, xb), tie)
        xb = xb + dt * (br - xb) / (tau + t)
        rows.append(xb.copy())
    times = np.arange(nsteps + 1) * dt
    spec = DynamicsSpec(variant=URL, tie=tie, tau=tau)
    return Trajectory(times, np.array(rows), None, game.action_counts, _meta(game, spec, T, dt, "euler-brd", "numpy"))
