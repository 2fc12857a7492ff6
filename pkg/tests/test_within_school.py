import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hnirm.data import build_multiplex
from hnirm.synthgen import brute_force_loglik
from hnirm.within_school import (
    WithinSchoolState,
    bernoulli_logit_logpmf,
    edge_logit_item,
    edge_logit_person,
    link_item_centered,
    link_respondent_centered,
    logprior_links,
    loglik_item_network,
    loglik_person_network,
    pairwise_distances,
)


def test_edge_logits():
    assert edge_logit_person(0.0, [1, 2], [1, 2]) == 0.0
    assert edge_logit_person(1.0, [0, 0], [1, 0]) == pytest.approx(0.0)
    assert edge_logit_person(0.0, [-1, -1], [-1, 1]) == pytest.approx(-2.0)
    assert edge_logit_item(0.0, [3, 3], [3, 3]) == 0.0
    assert edge_logit_item(2.0, [0, 0], [0, 2]) == pytest.approx(0.0)
    assert edge_logit_item(0.5, [0, 0], [3, 4]) == pytest.approx(-4.5)


def test_loglik_single_pair():
    Y = np.array([[[0, 1], [1, 0]]])
    assert loglik_person_network(Y, np.zeros((2, 1)), [0.0]) == pytest.approx(math.log(0.5))
    U = np.array([[[0, 1], [1, 0]]])
    assert loglik_item_network(U, np.zeros((2, 1)), [0.0]) == pytest.approx(math.log(0.5))


def test_loglik_empty_network():
    # n=2, logit -10, y=0: log(1 - sigmoid(-10)) per pair
    expected = math.log(1 - 1 / (1 + math.exp(10)))
    assert expected == pytest.approx(-4.5398899e-5, rel=1e-6)
    Y = np.zeros((1, 2, 2))
    assert loglik_person_network(Y, np.zeros((2, 2)), [-10.0]) == pytest.approx(expected, rel=1e-12)
    U = np.zeros((1, 2, 2))
    assert loglik_item_network(U, np.zeros((2, 2)), [-10.0]) == pytest.approx(expected, rel=1e-12)


def test_stable_extreme_logits():
    v = bernoulli_logit_logpmf(np.array([0, 1]), np.array([700.0, -700.0]))
    assert np.all(np.isfinite(v))


@pytest.mark.parametrize("seed", range(100))
def test_loglik_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, p = rng.integers(2, 5, size=2)
    X = rng.integers(0, 2, size=(n, p))
    s = WithinSchoolState(Z=rng.normal(size=(n, 2)), W=rng.normal(size=(p, 2)),
                          beta=rng.normal(size=p), theta=rng.normal(size=n))
    net = build_multiplex(X)
    fast = loglik_person_network(net.item_layers, s.Z, s.beta) + loglik_item_network(net.person_layers, s.W, s.theta)
    assert fast == pytest.approx(brute_force_loglik(X, s), rel=1e-10, abs=1e-12)


def test_links():
    W = np.array([[0.0, 0.0], [2.0, 2.0]])
    np.testing.assert_allclose(link_respondent_centered(W, [1, 1]), [1, 1])
    np.testing.assert_allclose(link_respondent_centered(W, [0, 1]), [2, 2])
    W3 = np.array([[0.0, 0.0], [9.0, 9.0], [4.0, 0.0]])
    np.testing.assert_allclose(link_respondent_centered(W3, [1, 0, 1]), [2, 0])
    np.testing.assert_allclose(link_respondent_centered(W3, [0, 0, 0]), [0, 0])
    np.testing.assert_allclose(link_item_centered(W, [1, 1]), [1, 1])
    np.testing.assert_allclose(link_item_centered(W, [1, 0]), [0, 0])
    np.testing.assert_allclose(link_item_centered(W3, [1, 0, 1]), [2, 0])


def test_pairwise_distances():
    assert pairwise_distances([[1.0, 1.0], [1.0, 1.0]])[0, 1] == 0
    assert pairwise_distances([[-1.0, -1.0], [-1.0, 1.0]])[0, 1] == pytest.approx(2.0)
    P = np.random.default_rng(0).normal(size=(4, 2))
    naive = np.array([[math.dist(a, b) for b in P] for a in P])
    np.testing.assert_allclose(pairwise_distances(P), naive, atol=1e-14)


def _rotation(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    q = q * np.sign(np.diag(r))
    if rng.random() < 0.5:
        q[:, 0] = -q[:, 0]
    return q


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_rigid_motion_invariance(seed):
    rng = np.random.default_rng(seed)
    n, p = 4, 3
    X = rng.integers(0, 2, size=(n, p))
    # an all-zero row links to the fixed origin, which a translation does not move
    X[X.sum(axis=1) == 0, 0] = 1
    Z, W = rng.normal(size=(n, 2)), rng.normal(size=(p, 2))
    beta, theta = rng.normal(size=p), rng.normal(size=n)
    R, t = _rotation(rng, 2), rng.normal(size=2) * 5
    net = build_multiplex(X)

    def total(Z, W):
        return (loglik_person_network(net.item_layers, Z, beta) + loglik_item_network(net.person_layers, W, theta)
                + logprior_links(Z, W, X, 1.3))

    a, b = total(Z, W), total(Z @ R + t, W @ R + t)
    assert abs(a - b) <= 1e-10 * abs(a)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.01, 5.0))
def test_monotone_in_distance(d, step):
    assert edge_logit_person(0.3, [0, 0], [d + step, 0]) < edge_logit_person(0.3, [0, 0], [d, 0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_triangle_inequality(seed):
    P = np.random.default_rng(seed).normal(size=(5, 3))
    D = pairwise_distances(P)
    np.testing.assert_array_equal(D, D.T)
    # D[i, k] <= D[i, j] + D[j, k]
    assert np.all(D[:, None, :] <= D[:, :, None] + D[None, :, :] + 1e-12)
