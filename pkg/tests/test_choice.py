import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from regdyn import penalty as pen
from regdyn.choice import active_set_choice, choice_map, conjugate_value, inverse_choice, logit, project_simplex
from regdyn.penalty import parse_penalty

ALL = ["gibbs", "quad", "tsallis:0.5", "tsallis:1.5", "tsallis:2", "tsallis:3", "logbar", "renyi:0.3", "renyi:0.7"]


def kkt_residual(h, y, x):
    """Largest violation of the optimality conditions at x.

    On the support, y - grad h must be constant; off it, the score minus
    that constant must not exceed the boundary slope.
    """
    supp = x > 1e-12
    g = pen.face_gradient(h, np.where(supp, x, 0.0), np.nonzero(supp)[0])
    r = (y - g)[supp]
    mu = r.mean()
    worst = float(np.abs(r - mu).max())
    off = np.nonzero(~supp)[0]
    if off.size:
        slopes = pen.boundary_slopes(h, x, off)
        worst = max(worst, float(np.max(y[off] - mu - slopes)))
    return worst


def test_examples():
    np.testing.assert_allclose(choice_map(parse_penalty("gibbs"), np.zeros(4)), np.full(4, 0.25))
    np.testing.assert_allclose(choice_map(parse_penalty("quad"), [0.4, 0.1, -0.3]), [0.65, 0.35, 0.0], atol=1e-15)
    e = math.e
    np.testing.assert_allclose(choice_map(parse_penalty("gibbs"), [1.0, 0.0]), [e / (1 + e), 1 / (1 + e)], atol=1e-15)


def test_closed_forms_against_oracles():
    rng = np.random.default_rng(0)
    for n in (2, 3, 5):
        for _ in range(200):
            y = rng.uniform(-5, 5, n)
            np.testing.assert_allclose(logit(y), oracles.logit(y), atol=1e-15)
            np.testing.assert_allclose(project_simplex(y), oracles.projection_by_bisection(y), atol=1e-12)


def test_logit_is_overflow_safe():
    x = logit(np.array([1000.0, 0.0, -1000.0]))
    assert np.all(np.isfinite(x)) and x[0] == 1.0


@pytest.mark.parametrize("spec", ALL)
def test_choice_is_the_regularized_argmax(spec):
    h = parse_penalty(spec)
    rng = np.random.default_rng(1)
    for _ in range(15):
        y = rng.uniform(-2, 2, 3)
        x = choice_map(h, y)
        assert x.min() >= 0 and x.sum() == pytest.approx(1.0, abs=1e-12)
        assert kkt_residual(h, y, x) <= 1e-8
        ref = oracles.regularized_argmax(h.base, h.q, y)
        np.testing.assert_allclose(x, ref, atol=2e-5)
        # no other point does better
        best = y @ x - pen.value(h, x)
        assert best >= y @ ref - oracles.penalty_value(h.base, h.q, ref) - 1e-10


@pytest.mark.parametrize("spec", ["gibbs", "quad"])
def test_active_set_matches_closed_forms(spec):
    h = parse_penalty(spec)
    closed = logit if spec == "gibbs" else project_simplex
    rng = np.random.default_rng(2)
    for n in (2, 3, 4):
        for _ in range(50):
            y = rng.uniform(-5, 5, n)
            np.testing.assert_allclose(active_set_choice(h, y), closed(y), atol=1e-8)


def test_tsallis_two_is_projection():
    h = parse_penalty("tsallis:2")
    rng = np.random.default_rng(3)
    for _ in range(100):
        y = rng.uniform(-5, 5, 4)
        np.testing.assert_allclose(choice_map(h, y), project_simplex(y), atol=1e-10)


def test_conjugate_examples():
    assert conjugate_value(parse_penalty("gibbs"), [0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert conjugate_value(parse_penalty("quad"), [2.0, 0.0]) == pytest.approx(1.5, abs=1e-15)


@pytest.mark.parametrize("spec", ALL)
def test_conjugate_shift(spec):
    h = parse_penalty(spec)
    rng = np.random.default_rng(4)
    for _ in range(10):
        y = rng.uniform(-2, 2, 3)
        c = rng.uniform(-3, 3)
        assert conjugate_value(h, y + c) == pytest.approx(conjugate_value(h, y) + c, abs=1e-9)


def test_gibbs_conjugate_is_logsumexp():
    rng = np.random.default_rng(5)
    for _ in range(50):
        y = rng.uniform(-10, 10, 4)
        assert conjugate_value(parse_penalty("gibbs"), y) == pytest.approx(oracles.logsumexp(y), abs=1e-12)


@pytest.mark.parametrize("spec", ALL)
def test_inverse_round_trip(spec):
    h = parse_penalty(spec)
    rng = np.random.default_rng(6)
    for _ in range(10):
        x = oracles.random_interior(rng, 3)
        np.testing.assert_allclose(choice_map(h, inverse_choice(h, x)), x, atol=1e-10)


def test_inverse_examples():
    np.testing.assert_allclose(inverse_choice(parse_penalty("gibbs"), [0.5, 0.5]), [0.0, 0.0], atol=1e-15)
    y = inverse_choice(parse_penalty("gibbs"), [0.731059, 0.268941])
    assert y[0] - y[1] == pytest.approx(math.log(0.731059 / 0.268941), abs=1e-12)
    h = parse_penalty("quad")
    x = np.array([0.65, 0.35, 0.0])
    np.testing.assert_allclose(choice_map(h, inverse_choice(h, x)), x, atol=1e-12)


def test_vanishing_share():
    y = np.array([-40.0, 0.0])
    assert choice_map(parse_penalty("gibbs"), y)[0] <= 1e-12
    assert choice_map(parse_penalty("quad"), np.array([-1.01, 0.0]))[0] == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=5), st.sampled_from(["tsallis:1.5", "tsallis:3", "renyi:0.5", "logbar"]))
def test_choice_is_a_point_of_the_simplex(ys, spec):
    h = parse_penalty(spec)
    y = np.array(ys)
    x = choice_map(h, y)
    assert np.all(x >= 0) and abs(x.sum() - 1) <= 1e-12
    assert kkt_residual(h, y, x) <= 1e-8
    # order preserving: higher score, no smaller share
    order = np.argsort(y)
    assert np.all(np.diff(x[order]) >= -1e-9)


@pytest.mark.parametrize("spec", ["quad", "tsallis:1.5", "tsallis:3"])
def test_nonsteep_choice_reaches_every_face(spec):
    h = parse_penalty(spec)
    big = 1e3
    for support in ([0], [1], [2], [0, 1], [1, 2], [0, 2]):
        y = np.full(3, -big)
        y[support] = 0.0
        y[support[0]] += 1e-3  # break the symmetry inside the face
        x = choice_map(h, y)
        assert np.all(x[np.setdiff1d(range(3), support)] == 0.0)
        assert np.all(x[support] > 0) and x.sum() == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(active_set_choice(h, y), x, atol=1e-10)
