import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from oracles import brute_expected_payoff, brute_payoff_vector
from regdyn.game import (
    CorrelatedStrategy,
    Game,
    GameError,
    StrategyProfile,
    builtin_game,
    expected_payoff,
    find_dominated,
    game_from_json,
    is_nash,
    iterated_elimination,
    load_game,
    marginal_payoff_vector,
    payoff_vector,
    restrict,
)


@pytest.fixture
def mp():
    return builtin_game("matching_pennies")


def random_game(rng, counts):
    return Game(rng.normal(size=(len(counts),) + tuple(counts)))


def random_profile(rng, game):
    return StrategyProfile(tuple(rng.dirichlet(np.ones(n)) for n in game.action_counts))


def test_matching_pennies_payoff_vectors(mp):
    np.testing.assert_array_equal(payoff_vector(mp, 0, [[0.5, 0.5], [1.0, 0.0]]), [1.0, -1.0])
    np.testing.assert_array_equal(payoff_vector(mp, 0, [[0.5, 0.5], [0.5, 0.5]]), [0.0, 0.0])


def test_expected_payoff_pure_and_uniform(mp):
    pure = StrategyProfile.pure(mp, [0, 0])
    assert expected_payoff(mp, 0, pure) == 1.0
    assert expected_payoff(mp, 1, pure) == -1.0
    uni = StrategyProfile.uniform(mp)
    assert expected_payoff(mp, 0, uni) == 0.0 and expected_payoff(mp, 1, uni) == 0.0


@pytest.mark.parametrize("counts", [(2, 2, 2), (3, 2), (2, 3, 4), (4, 4)])
def test_payoffs_match_brute_force(counts):
    rng = np.random.default_rng(sum(counts))
    g = random_game(rng, counts)
    for _ in range(5):
        x = random_profile(rng, g)
        for k in range(g.num_players):
            np.testing.assert_allclose(payoff_vector(g, k, x), brute_payoff_vector(g.payoffs, k, list(x)), atol=1e-12)
            assert expected_payoff(g, k, x) == pytest.approx(brute_expected_payoff(g.payoffs, k, list(x)), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.lists(st.integers(2, 3), min_size=2, max_size=3))
def test_payoff_vector_multilinear(seed, counts):
    rng = np.random.default_rng(seed)
    g = random_game(rng, counts)
    x, z = random_profile(rng, g), random_profile(rng, g)
    lam = rng.uniform()
    # linear in the last opponent's strategy
    k, ell = 0, g.num_players - 1
    mix = list(x)
    mix[ell] = lam * x[ell] + (1 - lam) * z[ell]
    other = list(x)
    other[ell] = z[ell]
    lhs = payoff_vector(g, k, mix)
    rhs = lam * payoff_vector(g, k, x) + (1 - lam) * payoff_vector(g, k, other)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_is_nash(mp):
    assert is_nash(mp, StrategyProfile.uniform(mp), tol=1e-9)
    res = is_nash(mp, StrategyProfile.pure(mp, [0, 0]), tol=1e-9)
    assert not res
    assert res.violations[1] == pytest.approx(2.0)
    assert res.violations[0] == 0.0


def test_dominant_pure_profile_is_nash():
    g = builtin_game("dominance")
    assert is_nash(g, StrategyProfile.pure(g, [0, 1]))


def test_constant_gap_dominance():
    g = builtin_game("dominance")
    (d,) = find_dominated(g, 0)
    assert d.action == 1 and d.margin == pytest.approx(1.0)
    np.testing.assert_allclose(d.dominator, [1.0, 0.0], atol=1e-12)


def test_matching_pennies_has_no_dominated_actions(mp):
    assert find_dominated(mp, 0) == [] and find_dominated(mp, 1) == []


def test_mixed_dominator():
    u1 = np.array([[2.0, 0.0], [0.4, 0.4], [0.0, 2.0]])
    g = Game([u1, np.zeros((3, 2))])
    (d,) = find_dominated(g, 0)
    assert d.action == 1
    np.testing.assert_allclose(d.dominator, [0.5, 0.0, 0.5], atol=1e-9)
    assert d.margin == pytest.approx(0.6, abs=1e-9)


def test_weak_dominance_witness():
    u1 = np.array([[1.0, 1.0], [1.0, 0.0]])
    g = Game([u1, np.zeros((2, 2))])
    assert find_dominated(g, 0) == []
    (d,) = find_dominated(g, 0, strict=False)
    assert d.action == 1 and not d.strict
    assert d.witnesses == ((1,),)


def _lp_margin(M, alpha):
    """Independent max-min margin LP through scipy's interior-point method."""
    n, m = M.shape
    c = np.zeros(n + 1)
    c[-1] = -1
    A = np.hstack([-M.T, np.ones((m, 1))])
    res = linprog(c, A_ub=A, b_ub=-M[alpha], A_eq=[[1] * n + [0]], b_eq=[1],
                  bounds=[(0, None)] * n + [(None, None)], method="highs-ipm")
    return -res.fun


@pytest.mark.parametrize("seed", range(6))
def test_dominance_margin_against_independent_lp(seed):
    rng = np.random.default_rng(seed)
    g = random_game(rng, (4, 3))
    M = g.payoffs[0]
    found = {d.action: d for d in find_dominated(g, 0)}
    for alpha in range(4):
        margin = _lp_margin(M, alpha)
        if margin > 1e-7:
            assert found[alpha].margin == pytest.approx(margin, abs=1e-7)
            assert np.all(found[alpha].dominator @ M - M[alpha] >= found[alpha].margin - 1e-9)
        else:
            assert alpha not in found


def test_restrict(mp):
    assert restrict(mp, [[0, 1], [0, 1]]) == mp
    sub = restrict(mp, [[0], [0, 1]])
    np.testing.assert_array_equal(sub.payoffs[0], [[1.0, -1.0]])
    assert sub.action_counts == (1, 2)
    with pytest.raises(GameError):
        restrict(mp, [[], [0]])


def test_iterated_elimination_reaches_single_profile():
    # hand-built dominance-solvable 3x3 game: row 3 and column 3 die first,
    # then column 2, then row 2
    u1 = np.array([[3.0, 3.0, 1.0], [2.0, 4.0, 0.0], [0.0, 0.0, 0.0]])
    u2 = np.array([[2.0, 1.0, 0.0], [2.0, 1.0, 0.0], [2.0, 5.0, 0.0]])
    g = Game([u1, u2])
    final, rounds = iterated_elimination(g)
    assert final.action_counts == (1, 1)
    assert final.action_labels == ((0,), (0,))
    assert rounds == [[(0, 2), (1, 2)], [(1, 1)], [(0, 1)]]


def test_marginal_payoff_vector():
    rng = np.random.default_rng(3)
    g = random_game(rng, (2, 3, 2))
    x = random_profile(rng, g)
    chi = CorrelatedStrategy.product(x)
    for k in range(3):
        np.testing.assert_allclose(marginal_payoff_vector(g, k, chi), payoff_vector(g, k, x), atol=1e-12)
    point = np.zeros((2, 3, 2))
    point[1, 2, 0] = 1.0
    np.testing.assert_array_equal(marginal_payoff_vector(g, 0, point), g.payoffs[0][:, 2, 0])
    mixed = np.zeros((2, 3, 2))
    mixed[0, 1, 1] = mixed[1, 2, 0] = 0.5
    expect = 0.5 * g.payoffs[1][0, :, 1] + 0.5 * g.payoffs[1][1, :, 0]
    np.testing.assert_allclose(marginal_payoff_vector(g, 1, mixed), expect, atol=1e-12)


def test_json_round_trip(tmp_path):
    g = builtin_game("rps")
    path = tmp_path / "g.json"
    path.write_text(json.dumps(g.to_json()))
    assert load_game(path) == g
    assert load_game(path).digest() == g.digest()


@pytest.mark.parametrize(
    "payload",
    [
        {"players": 2, "actions": [2, 2], "payoffs": [[1, 2, 3], [1, 2, 3, 4]]},
        {"players": 2, "actions": [2], "payoffs": [[1, 2], [1, 2]]},
        {"players": 2},
    ],
)
def test_malformed_games(payload):
    with pytest.raises(GameError):
        game_from_json(payload)


def test_invalid_payoffs_and_profiles(mp):
    with pytest.raises(GameError):
        Game([[[1.0, np.nan], [0, 0]], [[0, 0], [0, 0]]])
    with pytest.raises(GameError):
        Game(np.zeros((2, 1, 2)))
    with pytest.raises(GameError):
        StrategyProfile((np.array([0.7, 0.7]), np.array([0.5, 0.5])))
    with pytest.raises(GameError):
        StrategyProfile((np.array([1.5, -0.5]), np.array([0.5, 0.5])))
    with pytest.raises(GameError):
        load_game("no_such_game_file.json")


def test_payoffs_are_read_only(mp):
    with pytest.raises(ValueError):
        mp.payoffs[0, 0, 0] = 5.0
