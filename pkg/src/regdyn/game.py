"""Finite normal-form games: payoffs, equilibrium checks and dominance.

Players and actions are 0-based throughout the library; the CLI and the
trajectory CSV columns use 1-based labels.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from scipy.optimize import linprog

SUPPORT_THRESHOLD = 1e-9
SIMPLEX_TOL = 1e-12


class GameError(ValueError):
    pass


class Game:
    """An N-player normal-form game.

    ``payoffs[k]`` is the payoff tensor of player ``k`` with shape
    ``(n_1, ..., n_N)``.  ``action_labels[k]`` maps the actions of a restricted
    game back to the indices of the game it was cut from.
    """

    __slots__ = ("_payoffs", "name", "action_labels")

    def __init__(self, payoffs, name: str = "", action_labels=None, *, allow_single_action: bool = False):
        u = np.array(payoffs, dtype=float)
        if u.ndim < 2:
            raise GameError("payoffs must have shape (N, n_1, ..., n_N)")
        n_players = u.shape[0]
        if u.ndim != n_players + 1:
            raise GameError(
                f"{n_players} payoff tensors need {n_players} action axes, got {u.ndim - 1}"
            )
        if not np.all(np.isfinite(u)):
            raise GameError("payoffs must be finite")
        if not allow_single_action and min(u.shape[1:]) < 2:
            raise GameError("every player needs at least two actions")
        u.setflags(write=False)
        self._payoffs = u
        self.name = name
        if action_labels is None:
            action_labels = tuple(tuple(range(n)) for n in u.shape[1:])
        self.action_labels = tuple(tuple(int(a) for a in lab) for lab in action_labels)

    @property
    def payoffs(self) -> np.ndarray:
        return self._payoffs

    @property
    def num_players(self) -> int:
        return self._payoffs.shape[0]

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(self._payoffs.shape[1:])

    @property
    def num_profiles(self) -> int:
        return math.prod(self.action_counts)

    @property
    def offsets(self) -> tuple[int, ...]:
        """Start index of each player's block in a flattened profile."""
        out = [0]
        for n in self.action_counts:
            out.append(out[-1] + n)
        return tuple(out)

    def is_zero_sum(self, tol: float = 1e-12) -> bool:
        return self.num_players == 2 and bool(
            np.all(np.abs(self._payoffs[0] + self._payoffs[1]) <= tol)
        )

    def to_json(self) -> dict:
        return {
            "players": self.num_players,
            "actions": list(self.action_counts),
            "payoffs": [self._payoffs[k].ravel().tolist() for k in range(self.num_players)],
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, Game) and np.array_equal(self._payoffs, other._payoffs)

    def __hash__(self) -> int:
        return hash(self.digest())

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<Game{label} {'x'.join(map(str, self.action_counts))}>"


def game_from_json(data: dict, name: str = "") -> Game:
    try:
        n_players = int(data["players"])
        actions = [int(a) for a in data["actions"]]
        flat = data["payoffs"]
    except (KeyError, TypeError) as exc:
        raise GameError(f"malformed game description: {exc}") from None
    if len(actions) != n_players or len(flat) != n_players:
        raise GameError("'actions' and 'payoffs' must have one entry per player")
    size = math.prod(actions)
    tensors = []
    for k, u in enumerate(flat):
        if len(u) != size:
            raise GameError(f"player {k + 1} payoff list has {len(u)} entries, expected {size}")
        tensors.append(np.asarray(u, dtype=float).reshape(actions))
    return Game(np.stack(tensors), name=name)


def _matching_pennies() -> Game:
    u1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return Game([u1, -u1], name="matching_pennies")


def _rps() -> Game:
    u1 = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])
    return Game([u1, -u1], name="rps")


def _coord2() -> Game:
    eye = np.eye(2)
    return Game([eye, eye], name="coord2")


def _dominance() -> Game:
    # action 2 of player 1 trails action 1 by exactly 1 against everything
    u1 = np.array([[1.0, 1.0], [0.0, 0.0]])
    return Game([u1, np.zeros((2, 2))], name="dominance")


BUILTIN_GAMES = {
    "matching_pennies": _matching_pennies,
    "rps": _rps,
    "coord2": _coord2,
    "dominance": _dominance,
}


def builtin_game(name: str) -> Game:
    try:
        return BUILTIN_GAMES[name]()
    except KeyError:
        raise GameError(f"unknown builtin game {name!r}; choose from {sorted(BUILTIN_GAMES)}") from None


def load_game(source: str | Path) -> Game:
    """Load a builtin by name or a JSON game file by path."""
    if isinstance(source, str) and source in BUILTIN_GAMES:
        return builtin_game(source)
    path = Path(source)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise GameError(f"cannot read game file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise GameError(f"game file {path} is not valid JSON: {exc}") from None
    return game_from_json(data, name=path.stem)


@dataclass(frozen=True)
class StrategyProfile:
    """One mixed strategy per player."""

    parts: tuple[np.ndarray, ...]

    def __post_init__(self):
        parts = []
        for k, x in enumerate(self.parts):
            x = np.array(x, dtype=float).ravel()
            if x.size == 0 or not np.all(np.isfinite(x)):
                raise GameError(f"strategy of player {k + 1} must be a finite nonempty vector")
            if np.any(x < 0):
                raise GameError(f"strategy of player {k + 1} has negative entries")
            s = x.sum()
            if abs(s - 1.0) > 1e-9:
                raise GameError(f"strategy of player {k + 1} sums to {s!r}, not 1")
            x = x / s
            x.setflags(write=False)
            parts.append(x)
        object.__setattr__(self, "parts", tuple(parts))

    @classmethod
    def from_flat(cls, game: Game, flat) -> "StrategyProfile":
        flat = np.asarray(flat, dtype=float).ravel()
        off = game.offsets
        if flat.size != off[-1]:
            raise GameError(f"profile has {flat.size} entries, game needs {off[-1]}")
        return cls(tuple(flat[off[k] : off[k + 1]] for k in range(game.num_players)))

    @classmethod
    def uniform(cls, game: Game) -> "StrategyProfile":
        return cls(tuple(np.full(n, 1.0 / n) for n in game.action_counts))

    @classmethod
    def pure(cls, game: Game, actions: Sequence[int]) -> "StrategyProfile":
        parts = []
        for n, a in zip(game.action_counts, actions):
            e = np.zeros(n)
            e[a] = 1.0
            parts.append(e)
        return cls(tuple(parts))

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate(self.parts)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.parts[k]

    def __len__(self) -> int:
        return len(self.parts)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.parts)


def as_profile(game: Game, x) -> StrategyProfile:
    """Coerce a StrategyProfile, a flat vector or a per-player sequence."""
    if isinstance(x, StrategyProfile):
        prof = x
    elif isinstance(x, np.ndarray) and x.ndim == 1:
        prof = StrategyProfile.from_flat(game, x)
    elif len(x) and all(np.ndim(v) == 0 for v in x):
        prof = StrategyProfile.from_flat(game, np.asarray(x, dtype=float))
    else:
        prof = StrategyProfile(tuple(x))
    if tuple(p.size for p in prof) != game.action_counts:
        raise GameError(
            f"profile shape {tuple(p.size for p in prof)} does not match game {game.action_counts}"
        )
    return prof


@dataclass(frozen=True)
class CorrelatedStrategy:
    """A probability distribution over pure action profiles."""

    joint: np.ndarray

    def __post_init__(self):
        chi = np.array(self.joint, dtype=float)
        if np.any(chi < 0) or not np.all(np.isfinite(chi)):
            raise GameError("correlated strategy needs finite nonnegative entries")
        s = chi.sum()
        if abs(s - 1.0) > 1e-9:
            raise GameError(f"correlated strategy sums to {s!r}, not 1")
        chi = chi / s
        chi.setflags(write=False)
        object.__setattr__(self, "joint", chi)

    @classmethod
    def product(cls, x: StrategyProfile) -> "CorrelatedStrategy":
        chi = np.ones(())
        for part in x:
            chi = np.multiply.outer(chi, part)
        return cls(chi)

    def marginal(self, k: int) -> np.ndarray:
        axes = tuple(a for a in range(self.joint.ndim) if a != k)
        return self.joint.sum(axis=axes)


def _check_player(game: Game, k: int) -> None:
    if not 0 <= k < game.num_players:
        raise GameError(f"player index {k} out of range for {game.num_players} players")


def payoff_vector(game: Game, k: int, x) -> np.ndarray:
    """Payoff of each pure action of player ``k`` against ``x_{-k}``."""
    _check_player(game, k)
    x = as_profile(game, x)
    t = game.payoffs[k]
    # contract from the last axis down so earlier axis numbers stay valid
    for ell in reversed(range(game.num_players)):
        if ell != k:
            t = np.tensordot(t, x[ell], axes=([ell], [0]))
    return np.asarray(t, dtype=float)


def payoff_vectors(game: Game, x) -> tuple[np.ndarray, ...]:
    x = as_profile(game, x)
    return tuple(payoff_vector(game, k, x) for k in range(game.num_players))


def expected_payoff(game: Game, k: int, x) -> float:
    x = as_profile(game, x)
    return float(payoff_vector(game, k, x) @ x[k])


def support(xk, threshold: float = SUPPORT_THRESHOLD) -> np.ndarray:
    return np.nonzero(np.asarray(xk) > threshold)[0]


@dataclass(frozen=True)
class NashCheck:
    is_nash: bool
    violations: tuple[float, ...]

    @property
    def max_violation(self) -> float:
        return max(self.violations)

    def __bool__(self) -> bool:
        return self.is_nash


def is_nash(game: Game, x, tol: float = 1e-9) -> NashCheck:
    """Check the support-wise best-reply conditions of a Nash equilibrium.

    The violation of player ``k`` is ``max_b v_kb - min_{a in supp} v_ka``
    (clipped at zero).
    """
    x = as_profile(game, x)
    viol = []
    for k in range(game.num_players):
        v = payoff_vector(game, k, x)
        supp = support(x[k])
        viol.append(max(0.0, float(v.max() - v[supp].min())))
    return NashCheck(all(d <= tol for d in viol), tuple(viol))


def _opponent_matrix(game: Game, k: int) -> tuple[np.ndarray, list[tuple[int, ...]]]:
    u = np.moveaxis(game.payoffs[k], k, 0)
    n_k = u.shape[0]
    others = [n for ell, n in enumerate(game.action_counts) if ell != k]
    profiles = list(product(*(range(n) for n in others)))
    return u.reshape(n_k, -1), profiles


@dataclass(frozen=True)
class Dominance:
    """A dominated pure action with a (possibly mixed) dominator.

    ``margin`` is the minimum payoff advantage of the dominator over all
    pure opponent profiles; ``witnesses`` lists the opponent profiles where
    the advantage is strictly positive.
    """

    action: int
    dominator: np.ndarray
    margin: float
    strict: bool
    witnesses: tuple[tuple[int, ...], ...] = field(default=())


def _solve(c, A_ub, b_ub, A_eq, bounds) -> np.ndarray:
    # linprog minimizes; callers pass the negated objective
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=bounds, method="highs")
    if res.status != 0:
        raise GameError(f"dominance program failed: {res.message}")
    return res.x


def _max_min_margin(M: np.ndarray, alpha: int) -> tuple[np.ndarray, float]:
    n, m = M.shape
    # variables (p, d): maximize d subject to p @ M[:, a] - M[alpha, a] >= d
    c = np.zeros(n + 1)
    c[n] = -1.0
    A_ub = np.hstack([-M.T, np.ones((m, 1))])
    A_eq = np.zeros((1, n + 1))
    A_eq[0, :n] = 1.0
    z = _solve(c, A_ub, -M[alpha], A_eq, [(0, None)] * n + [(None, None)])
    p = np.clip(z[:n], 0.0, None)
    p /= p.sum()
    return p, float((p @ M - M[alpha]).min())


def _max_total_margin(M: np.ndarray, alpha: int) -> tuple[np.ndarray, float]:
    n, m = M.shape
    z = _solve(-M.sum(axis=1), -M.T, -M[alpha], np.ones((1, n)), [(0, None)] * n)
    p = np.clip(z, 0.0, None)
    p /= p.sum()
    return p, float((p @ M - M[alpha]).sum())


def find_dominated(game: Game, k: int, strict: bool = True, tol: float = 1e-9) -> list[Dominance]:
    """Pure actions of player ``k`` dominated by some mixed strategy.

    With ``strict=True`` the max-min-margin program is solved for every
    action and those with margin above ``tol`` are reported.  With
    ``strict=False`` the actions that are weakly but not strictly dominated
    are reported, together with the opponent profiles on which the dominator
    does strictly better.
    """
    _check_player(game, k)
    M, profiles = _opponent_matrix(game, k)
    out = []
    for alpha in range(M.shape[0]):
        p, margin = _max_min_margin(M, alpha)
        if strict:
            if margin > tol:
                gaps = p @ M - M[alpha]
                wit = tuple(profiles[j] for j in np.nonzero(gaps > tol)[0])
                out.append(Dominance(alpha, p, margin, True, wit))
            continue
        if margin > tol:
            continue
        p, total = _max_total_margin(M, alpha)
        if total > tol:
            gaps = p @ M - M[alpha]
            wit = tuple(profiles[j] for j in np.nonzero(gaps > tol)[0])
            out.append(Dominance(alpha, p, float(gaps.min()), False, wit))
    return out


def dominance_margins(game: Game, k: int, p, p_prime) -> np.ndarray:
    """Payoff advantage of ``p_prime`` over ``p`` against each pure opponent profile."""
    M, _ = _opponent_matrix(game, k)
    return np.asarray(p_prime, float) @ M - np.asarray(p, float) @ M


def opponent_profiles(game: Game, k: int) -> list[tuple[int, ...]]:
    return _opponent_matrix(game, k)[1]


def restrict(game: Game, supports: Sequence[Sequence[int]]) -> Game:
    """Sub-game keeping only ``supports[k]`` for each player."""
    if len(supports) != game.num_players:
        raise GameError("need one action subset per player")
    idx = []
    for k, s in enumerate(supports):
        s = sorted(set(int(a) for a in s))
        if not s:
            raise GameError(f"empty action subset for player {k + 1}")
        if s[0] < 0 or s[-1] >= game.action_counts[k]:
            raise GameError(f"action subset for player {k + 1} out of range")
        idx.append(s)
    sub = game.payoffs[(slice(None),) + np.ix_(*idx)]
    labels = tuple(tuple(game.action_labels[k][a] for a in s) for k, s in enumerate(idx))
    return Game(sub, name=game.name, action_labels=labels, allow_single_action=True)


def iterated_elimination(game: Game, tol: float = 1e-9) -> tuple[Game, list[list[tuple[int, int]]]]:
    """Remove strictly dominated actions until none remain.

    Returns the surviving restriction and, per round, the removed
    ``(player, original action)`` pairs.
    """
    rounds = []
    g = game
    while True:
        removed = []
        keep = []
        for k in range(g.num_players):
            dead = {d.action for d in find_dominated(g, k, strict=True, tol=tol)}
            keep.append([a for a in range(g.action_counts[k]) if a not in dead])
            removed.extend((k, g.action_labels[k][a]) for a in sorted(dead))
        if not removed:
            return g, rounds
        rounds.append(removed)
        g = restrict(g, keep)


def marginal_payoff_vector(game: Game, k: int, chi) -> np.ndarray:
    """Payoff of each action of ``k`` against the opponents' marginal of ``chi``."""
    _check_player(game, k)
    if not isinstance(chi, CorrelatedStrategy):
        chi = CorrelatedStrategy(np.asarray(chi, dtype=float))
    if chi.joint.shape != game.action_counts:
        raise GameError(f"correlated strategy shape {chi.joint.shape} does not match {game.action_counts}")
    marg = chi.joint.sum(axis=k)
    u = np.moveaxis(game.payoffs[k], k, 0)
    return np.tensordot(u, marg, axes=game.num_players - 1)
