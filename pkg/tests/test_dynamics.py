import math

import numpy as np
import pytest

from regdyn.choice import inverse_choice
from regdyn.dynamics import (
    DynamicsSpec,
    IntegrationError,
    UrlState,
    best_response_dynamics,
    cross_bs_field,
    erev_roth_field,
    integrate,
    replicator_field,
    score_field,
    strategy_field,
    unpenalized_step,
    warmup_scores,
)
from regdyn.game import Game, StrategyProfile, builtin_game, payoff_vectors
from regdyn.penalty import parse_penalty

GIBBS = parse_penalty("gibbs")
QUAD = parse_penalty("quad")


def one_player_block(v, x, kind, q=None):
    """Field for a game where player 1 faces a fixed payoff vector v."""
    n = len(v)
    u1 = np.tile(np.asarray(v, float)[:, None], (1, 2))
    g = Game([u1, np.zeros((n, 2))])
    flat = np.concatenate([x, [0.5, 0.5]])
    return strategy_field(g, kind, flat, q=q)[:n]


def test_score_field_examples():
    mp = builtin_game("matching_pennies")
    np.testing.assert_array_equal(score_field(mp, DynamicsSpec(penalties=(GIBBS,)), np.zeros(4)), np.zeros(4))
    dom = builtin_game("dominance")
    spec = DynamicsSpec(penalties=(GIBBS,), gammas=(0.7, 1.0))
    rng = np.random.default_rng(0)
    for _ in range(5):
        np.testing.assert_allclose(score_field(dom, spec, rng.normal(size=4))[:2], [0.7, 0.0])


def test_strategy_field_examples():
    np.testing.assert_allclose(one_player_block([1, 0], [0.3, 0.7], "replicator"), [0.21, -0.21], atol=1e-15)
    np.testing.assert_allclose(one_player_block([1, 0], [0.3, 0.7], "projection"), [0.5, -0.5], atol=1e-15)


@pytest.mark.parametrize(
    "kind,q,pen",
    [("replicator", None, "gibbs"), ("projection", None, "quad"), ("qreplicator", 1.5, "tsallis:1.5"),
     ("qreplicator", 0.5, "tsallis:0.5"), ("logbar", None, "logbar"), ("renyi", 0.5, "renyi:0.5")],
)
def test_named_fields_match_generic_field(kind, q, pen):
    rng = np.random.default_rng(1)
    g = Game(rng.normal(size=(2, 3, 3)))
    for _ in range(10):
        x = np.concatenate([rng.dirichlet(np.ones(3) * 2), rng.dirichlet(np.ones(3) * 2)])
        named = strategy_field(g, kind, x, q=q)
        generic = strategy_field(g, "generic", x, penalties=(parse_penalty(pen),))
        np.testing.assert_allclose(named, generic, atol=1e-10)


def test_fields_are_tangent():
    rng = np.random.default_rng(2)
    g = Game(rng.normal(size=(2, 4, 3)))
    x = np.concatenate([rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(3))])
    for kind, q in [("replicator", None), ("projection", None), ("qreplicator", 2.5), ("logbar", None), ("renyi", 0.3)]:
        f = strategy_field(g, kind, x, q=q)
        assert abs(f[:4].sum()) <= 1e-12 and abs(f[4:].sum()) <= 1e-12


@pytest.mark.parametrize("q", [0.99, 1.01])
def test_renyi_field_near_one_is_replicator(q):
    from regdyn.penalty import renyi_inverse_hessian

    rng = np.random.default_rng(3)
    g = Game(rng.normal(size=(2, 3, 3)))
    x = np.concatenate([rng.dirichlet(np.ones(3) * 3), rng.dirichlet(np.ones(3) * 3)])
    ren = strategy_field(g, "renyi", x, q=q)
    assert np.abs(ren - replicator_field(g, x)).max() <= 0.05
    # against the projected inverse-Hessian form
    v = np.concatenate(payoff_vectors(g, StrategyProfile.from_flat(g, x)))
    for a, b in [(0, 3), (3, 6)]:
        ginv = renyi_inverse_hessian(q, x[a:b])
        row = ginv.sum(axis=1)
        expect = ginv @ v[a:b] - row * (row @ v[a:b]) / row.sum()
        np.testing.assert_allclose(ren[a:b], expect, atol=1e-10)


def test_cross_is_replicator():
    rng = np.random.default_rng(4)
    g = Game(rng.uniform(0.05, 0.95, size=(2, 3, 2)))
    for _ in range(10):
        x = np.concatenate([rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(2))])
        np.testing.assert_allclose(cross_bs_field(g, x), replicator_field(g, x), atol=1e-12)
    with pytest.raises(ValueError):
        cross_bs_field(builtin_game("matching_pennies"), np.full(4, 0.5))


def test_erev_roth_field():
    g = builtin_game("coord2")
    y = np.array([1.0, 3.0, 2.0, 2.0])
    x = np.array([0.25, 0.75, 0.5, 0.5])
    v = np.concatenate(payoff_vectors(g, StrategyProfile.from_flat(g, x)))
    np.testing.assert_allclose(erev_roth_field(g, y), x * v)
    with pytest.raises(ValueError):
        erev_roth_field(g, [1.0, 0.0, 1.0, 1.0])


def test_stationary_equilibrium():
    mp = builtin_game("matching_pennies")
    traj = integrate(mp, DynamicsSpec(penalties=(GIBBS,)), T=10.0, dt=1e-2)
    assert np.abs(traj.x - 0.5).max() <= 1e-9


def test_projection_extinction_closed_form():
    dom = builtin_game("dominance")
    traj = integrate(dom, DynamicsSpec(penalties=(QUAD,)), T=2.0, dt=1e-3)
    x2 = traj.player_x(0)[:, 1]
    t = traj.times
    np.testing.assert_allclose(x2, np.maximum((1 - t) / 2, 0), atol=1e-12)


def test_score_variant_equals_direct_field():
    rng = np.random.default_rng(5)
    g = Game(rng.normal(size=(2, 2, 3)))
    x0 = np.array([0.4, 0.6, 0.2, 0.3, 0.5])
    y0 = np.concatenate([inverse_choice(GIBBS, x0[:2]), inverse_choice(GIBBS, x0[2:])])
    a = integrate(g, DynamicsSpec(penalties=(GIBBS,)), y0=y0, T=3.0, dt=1e-3)
    b = integrate(g, DynamicsSpec(variant="direct", field="replicator"), x0=x0, T=3.0, dt=1e-3)
    assert np.abs(a.x - b.x).max() <= 1e-8


def test_heterogeneous_penalties_eliminate_unilaterally():
    # dominated action of player 1 dies under either penalty whatever player 2 uses
    dom = builtin_game("dominance")
    for pair in [(GIBBS, QUAD), (QUAD, GIBBS)]:
        traj = integrate(dom, DynamicsSpec(penalties=pair), T=8.0, dt=1e-2)
        assert traj.player_x(0)[-1, 1] <= (1e-3 if pair[0] is GIBBS else 0.0)


def test_discounted_lambda_one_is_plain_score():
    mp = builtin_game("matching_pennies")
    a = integrate(mp, DynamicsSpec(variant="discounted", penalties=(GIBBS,), lam=1.0), y0=[1, 0, 0, 0], T=1, dt=0.01)
    b = integrate(mp, DynamicsSpec(penalties=(GIBBS,)), y0=[1, 0, 0, 0], T=1, dt=0.01)
    np.testing.assert_array_equal(a.y, b.y)


def test_discounted_scores_stay_bounded():
    mp = builtin_game("matching_pennies")
    traj = integrate(mp, DynamicsSpec(variant="discounted", penalties=(GIBBS,), lam=0.5), y0=[5, 0, 0, 0], T=40, dt=0.01)
    # |y| <= max(|y0|, max|v| / |ln lam|)
    assert np.abs(traj.y).max() <= 5.0 + 1e-9
    assert np.abs(traj.y[-1]).max() <= 1.0 / math.log(2) + 1e-6


def test_unpenalized_step_and_identity():
    dom = builtin_game("dominance")
    y = warmup_scores(dom, 1.0)
    chi = np.full(4, 0.25)
    state = UrlState(y, chi, 0.0)
    for _ in range(50):
        state = unpenalized_step(dom, state, 0.1)
    assert state.chi.reshape(2, 2)[1].sum() == pytest.approx(0.5 / (1 + 5.0))
    traj = integrate(dom, DynamicsSpec(variant="url"), y0=[0.0, 3.0, 0.0, 0.0], T=10.0, dt=0.01)
    picked = traj.player_x(0)[:, 1]
    last = np.nonzero(picked > 0)[0].max()
    assert traj.times[last] < 3.1
    assert traj.extras["identity_error"] <= 1e-9


def test_best_response_dynamics_matches_url_average():
    mp = builtin_game("matching_pennies")
    traj = integrate(mp, DynamicsSpec(variant="url"), T=5.0, dt=1e-3)
    brd = best_response_dynamics(mp, np.full(4, 0.5), T=5.0, dt=1e-3)
    # marginals of the correlated average follow the best-response flow
    np.testing.assert_allclose(traj.extras["xbar"][-1], brd.x[-1], atol=5e-3)


def test_direct_field_boundary_events():
    dom = builtin_game("dominance")
    traj = integrate(dom, DynamicsSpec(variant="direct", field="projection"), x0=[0.5, 0.5, 0.5, 0.5], T=1.5, dt=1e-3)
    exits = [e for e in traj.events if e["kind"] == "exit"]
    assert exits and exits[0]["player"] == 0 and exits[0]["action"] == 1
    assert exits[0]["t"] == pytest.approx(1.0, abs=2e-3)
    assert traj.meta["extended_solution"]


def test_invalid_specs():
    mp = builtin_game("matching_pennies")
    with pytest.raises(ValueError):
        DynamicsSpec(penalties=())
    with pytest.raises(ValueError):
        DynamicsSpec(variant="discounted", penalties=(GIBBS,), lam=1.5)
    with pytest.raises(ValueError):
        DynamicsSpec(variant="direct", field="renyi", q=1.5)
    with pytest.raises(ValueError):
        integrate(mp, DynamicsSpec(penalties=(GIBBS,)), T=1.0, dt=0.3)
    with pytest.raises(ValueError):
        integrate(mp, DynamicsSpec(variant="direct", field="replicator"), x0=[1.0, 0.0, 0.5, 0.5], T=1.0)
    with pytest.raises(ValueError):
        integrate(mp, DynamicsSpec(penalties=(GIBBS, GIBBS, GIBBS)), T=1.0)


def test_spec_json_round_trip():
    spec = DynamicsSpec(variant="discounted", penalties=(GIBBS, parse_penalty("tsallis:1.5")), gammas=(1.0, 2.0), lam=0.9)
    assert DynamicsSpec.from_json(spec.to_json()) == spec


def test_store_every_subsamples():
    mp = builtin_game("matching_pennies")
    full = integrate(mp, DynamicsSpec(penalties=(GIBBS,)), y0=[0.5, 0, 0, 0], T=1.0, dt=0.01)
    thin = integrate(mp, DynamicsSpec(penalties=(GIBBS,)), y0=[0.5, 0, 0, 0], T=1.0, dt=0.01, store_every=7)
    np.testing.assert_array_equal(thin.y, full.y[np.r_[0:101:7, 100]])


def test_rk4_order():
    # halving dt cuts the error by about 16
    mp = builtin_game("matching_pennies")
    spec = DynamicsSpec(penalties=(GIBBS,))
    ref = integrate(mp, spec, y0=[0.5, 0, 0, 0], T=2.0, dt=1e-4).y[-1]
    e1 = np.abs(integrate(mp, spec, y0=[0.5, 0, 0, 0], T=2.0, dt=0.1).y[-1] - ref).max()
    e2 = np.abs(integrate(mp, spec, y0=[0.5, 0, 0, 0], T=2.0, dt=0.05).y[-1] - ref).max()
    assert 12 < e1 / e2 < 20


def test_nonfinite_state_is_reported():
    g = Game([np.array([[1e308, 1e308], [0, 0]]), np.zeros((2, 2))])
    with pytest.raises(IntegrationError):
        integrate(g, DynamicsSpec(penalties=(QUAD,)), T=3.0, dt=1.0)
