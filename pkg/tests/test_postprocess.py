import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr
from sklearn.metrics import adjusted_rand_score

from hnirm.exceptions import DimensionError, UnsupportedCombinationError, ValidationError
from hnirm.postprocess import (
    Embedding,
    integrate_item_school_space,
    kruskal_mds,
    procrustes_align,
    school_space_from_delta,
    school_space_from_mu,
    spectral_cluster,
    summarize,
)
from hnirm.sampler import ChainConfig, PosteriorSamples
from hnirm.within_school import pairwise_distances


def _rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


# -- Procrustes -------------------------------------------------------------------

def test_procrustes_rotation_and_identity():
    ref = np.random.default_rng(0).normal(size=(6, 2))
    aligned, _ = procrustes_align((ref @ _rot(math.pi / 2) + 3.0)[None], ref)
    np.testing.assert_allclose(aligned[0], ref, atol=1e-10)
    aligned, _ = procrustes_align(ref[None], ref)
    np.testing.assert_allclose(aligned[0], ref, atol=1e-12)


def test_procrustes_noisy_recovers_distances():
    rng = np.random.default_rng(1)
    ref = rng.normal(size=(8, 2)) * 2
    draws = np.array([(ref + 0.1 * rng.normal(size=ref.shape)) @ _rot(rng.uniform(0, 6.3)) * [1, -1] ** rng.integers(0, 2)
                      + rng.normal(size=2) for _ in range(200)])
    aligned, mean = procrustes_align(draws, ref)
    iu = np.triu_indices(8, 1)
    r = np.corrcoef(pairwise_distances(mean)[iu], pairwise_distances(ref)[iu])[0, 1]
    assert r >= 0.99
    for a, b in zip(draws, aligned):
        np.testing.assert_allclose(pairwise_distances(a), pairwise_distances(b), atol=1e-10)


def test_procrustes_rank_deficient_warns():
    ref = np.zeros((4, 2))
    with pytest.warns(RuntimeWarning):
        aligned, _ = procrustes_align(np.random.default_rng(0).normal(size=(1, 4, 2)), ref)
    assert np.allclose(aligned[0].mean(axis=0), 0)


# -- spectral clustering ------------------------------------------------------------

def _clouds(rng, sizes, sep=100.0):
    pts = [rng.normal(size=(n, 2)) * 0.5 + [sep * c, 0] for c, n in enumerate(sizes)]
    truth = np.concatenate([[c] * n for c, n in enumerate(sizes)])
    return np.vstack(pts), truth


def test_spectral_two_far_clouds():
    X, truth = _clouds(np.random.default_rng(0), [6, 7])
    labels = spectral_cluster(pairwise_distances(X), 2, seed=0)
    assert adjusted_rand_score(truth, labels) == 1.0


def test_spectral_identical_points():
    with pytest.raises(ValidationError):
        spectral_cluster(np.zeros((4, 4)), 2)


def test_spectral_k_r_minus_one():
    X = np.random.default_rng(3).normal(size=(7, 2))
    labels = spectral_cluster(pairwise_distances(X), 6, seed=0)
    assert set(labels.tolist()) == set(range(6))


def test_spectral_bad_k():
    D = pairwise_distances(np.random.default_rng(0).normal(size=(5, 2)))
    for k in (1, 5):
        with pytest.raises(ValidationError):
            spectral_cluster(D, k)


def test_spectral_deterministic_and_bandwidth():
    X, _ = _clouds(np.random.default_rng(4), [5, 5, 5], sep=10)
    D = pairwise_distances(X)
    a, bw = spectral_cluster(D, 3, seed=7, return_bandwidth=True)
    b = spectral_cluster(D, 3, seed=7)
    np.testing.assert_array_equal(a, b)
    assert bw == pytest.approx(np.median(D[np.triu_indices(15, 1)]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_spectral_planted_ratio_ten(seed, k):
    rng = np.random.default_rng(seed)
    sizes = rng.integers(3, 7, size=k)
    # between-cluster gaps at least 10x the cluster diameters
    pts = [rng.uniform(-0.5, 0.5, size=(n, 2)) + [20.0 * c, 0] for c, n in enumerate(sizes)]
    truth = np.concatenate([[c] * n for c, n in enumerate(sizes)])
    labels = spectral_cluster(pairwise_distances(np.vstack(pts)), int(k), seed=seed)
    assert adjusted_rand_score(truth, labels) == 1.0


# -- MDS ---------------------------------------------------------------------------------

def test_mds_equilateral():
    D = 1 - np.eye(3)
    emb = kruskal_mds(D, 2)
    E = pairwise_distances(emb.positions)[np.triu_indices(3, 1)]
    assert np.ptp(E) < 1e-6
    assert emb.stress < 1e-6


def test_mds_dimension_error():
    with pytest.raises(DimensionError):
        kruskal_mds(1 - np.eye(2), 2)


def test_mds_all_zero_degenerate():
    emb = kruskal_mds(np.zeros((4, 4)), 2)
    assert emb.degenerate


def test_mds_stress_non_increasing():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 3))
    D = pairwise_distances(X) * np.exp(0.2 * rng.normal(size=(10, 10)))
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0)
    emb = kruskal_mds(D, 2)
    h = np.asarray(emb.history)
    assert np.all(np.diff(h) <= 1e-12)
    assert 0 <= emb.stress <= 1


def test_mds_row_permutation_invariance():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(9, 2))
    D = pairwise_distances(X)
    perm = rng.permutation(9)
    a = kruskal_mds(D, 2)
    b = kruskal_mds(D[np.ix_(perm, perm)], 2)
    iu = np.triu_indices(9, 1)
    Da = pairwise_distances(a.positions)[np.ix_(perm, perm)]
    Db = pairwise_distances(b.positions)
    scale = Da[iu].mean() / Db[iu].mean()
    np.testing.assert_allclose(Da[iu], Db[iu] * scale, rtol=1e-3, atol=1e-3)


# -- school spaces -------------------------------------------------------------------------

def test_delta_school_space():
    p = 4
    base = np.random.default_rng(0).normal(size=(p, p))
    base = base + base.T
    np.fill_diagonal(base, 0)
    other = base.copy()
    other[0, 1] += 0.7
    other[1, 0] += 0.7
    space = school_space_from_delta(np.array([base, base, other]), d=2)
    S = space.distances.S
    assert S[0, 1] == 0
    assert S[0, 2] == pytest.approx(0.7 * math.sqrt(2))
    assert "full symmetric" in space.distances.convention
    same = school_space_from_delta(np.array([base] * 3), d=2)
    assert np.all(same.distances.S == 0) and same.embedding.degenerate


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_delta_space_metric(seed):
    rng = np.random.default_rng(seed)
    dl = rng.normal(size=(5, 4, 4))
    dl = dl + np.swapaxes(dl, 1, 2)
    S = school_space_from_delta(dl, d=2).distances.S
    np.testing.assert_array_equal(S, S.T)
    assert np.all(np.diag(S) == 0)
    assert np.all(S[:, None, :] <= S[:, :, None] + S[None, :, :] + 1e-9)


def _mu(p, rng):
    pts = rng.normal(size=(p, 2)) * 2
    D = pairwise_distances(pts)
    mu = np.log(D + np.eye(p))
    np.fill_diagonal(mu, 0)
    return mu


def test_mu_space_identical_rows():
    rng = np.random.default_rng(0)
    mu = _mu(5, rng)
    X = rng.integers(0, 2, size=(6, 5))
    X[:, 0] = 1
    space = school_space_from_mu(mu, [X, X.copy(), rng.integers(0, 2, size=(4, 5))])
    assert space.distances.S[0, 1] == 0


def test_mu_space_single_items():
    rng = np.random.default_rng(1)
    mu = _mu(5, rng)
    XA = np.zeros((3, 5), dtype=int)
    XA[:, 1] = 1
    XB = np.zeros((4, 5), dtype=int)
    XB[:, 3] = 1
    space = school_space_from_mu(mu, [XA, XB])
    W = space.item_embedding.positions
    assert space.distances.S[0, 1] == pytest.approx(np.linalg.norm(W[1] - W[3]), abs=1e-12)


def test_mu_space_mean_vs_median_symmetric():
    rng = np.random.default_rng(2)
    mu = _mu(6, rng)
    schools = []
    for _ in range(3):
        half = rng.integers(0, 2, size=(5, 6))
        half[:, 0] = 1
        schools.append(np.vstack([half, half]))  # duplicated rows: symmetric around the centre
    a = school_space_from_mu(mu, schools, aggregate="mean").embedding.positions
    rows = [s[:5] for s in schools]
    b = school_space_from_mu(mu, [np.vstack([r, r, r]) for r in rows], aggregate="mean").embedding.positions
    np.testing.assert_allclose(a, b, atol=1e-12)
    sym = [np.vstack([r[:1], r[1:2]]) for r in rows]
    m1 = school_space_from_mu(mu, sym, aggregate="mean").embedding.positions
    m2 = school_space_from_mu(mu, sym, aggregate="median").embedding.positions
    np.testing.assert_allclose(m1, m2, atol=1e-12)


def test_mu_space_needs_respondent_link():
    with pytest.raises(UnsupportedCombinationError):
        school_space_from_mu(np.zeros((3, 3)), [np.ones((2, 3))], linking="item")


# -- integration -----------------------------------------------------------------------------

def test_integration_standardises_and_inverts():
    rng = np.random.default_rng(0)
    items = rng.normal(size=(7, 2)) * 3 + 1
    schools = rng.normal(size=(4, 2))
    joint = integrate_item_school_space(items, schools)
    for role, P in (("item", items), ("school", schools)):
        C = joint.coordinates(role)
        np.testing.assert_allclose(C.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(C.var(axis=0), 1, atol=1e-12)
        np.testing.assert_allclose(joint.destandardize(role), P, atol=1e-12)


def test_integration_single_point_and_flat_axis():
    joint = integrate_item_school_space(np.array([[1.0, 2.0], [3.0, 2.0]]), np.array([[5.0, 6.0]]))
    np.testing.assert_allclose(joint.coordinates("school"), [[0, 0]])
    assert joint.flat_axes["item"] == [1]


# -- summaries -----------------------------------------------------------------------------------

def _samples(draws, G=1):
    M = draws["beta"].shape[1]
    return PosteriorSamples(school_ids=[f"s{m}" for m in range(M)], item_ids=["a", "b"],
                            group_labels=tuple(f"g{g}" for g in range(G)),
                            group_of_school=np.arange(M) % G, config=ChainConfig(), draws=draws)


def test_summary_constant_draws():
    S = 20
    out = summarize(_samples({"beta": np.full((S, 2, 2), 0.5), "sigma_z2": np.ones((S, 2))}))
    for row in out:
        if row["family"] == "beta":
            assert row["mean"] == row["hpd_low"] == row["hpd_high"] == 0.5


def test_summary_group_difference_identical_groups():
    rng = np.random.default_rng(0)
    S = 400
    g = rng.normal(size=(S, 1, 2))
    gamma = np.concatenate([g, g[rng.permutation(S)]], axis=1)
    out = summarize(_samples({"beta": rng.normal(size=(S, 2, 2)), "gamma": gamma, "sigma_z2": np.ones((S, 2))}, G=2),
                    families=["beta", "gamma"])
    diffs = [r for r in out if r["family"] == "gamma_diff"]
    assert len(diffs) == 2
    assert all(r["excludes_zero"] is False for r in diffs)


def test_summary_missing_family():
    with pytest.raises(KeyError):
        summarize(_samples({"beta": np.zeros((20, 1, 2)), "sigma_z2": np.ones((20, 1))}), families=["mu"])
