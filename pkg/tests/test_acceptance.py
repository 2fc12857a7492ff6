"""Acceptance criteria, one test (and one summary line) per criterion.

Environment switches:

* ``HNIRM_FULL_BENCH=1`` runs the full GEPS-shaped benchmark (15,000
  iterations) for criterion 8 instead of timing a short run and projecting.
* ``HNIRM_FULL_CALIBRATION=1`` runs the calibration replicates of criterion
  5 with the default 15,000-iteration chain instead of the shorter one.
"""
import logging
import math
import os
import time

import numpy as np
import pytest
from scipy.linalg import orthogonal_procrustes
from scipy.stats import pearsonr, spearmanr
from sklearn.metrics import adjusted_rand_score

from hnirm.data import dichotomize
from hnirm.hierarchy import HyperPriors, assign_groups
from hnirm.postprocess import item_dissimilarity_from_mu, kruskal_mds, pooled_mu, spectral_cluster, summarize
from hnirm.sampler import ChainConfig, initial_state, log_posterior, run_chain
from hnirm.sampler import steps
from hnirm.sampler.diagnostics import hpd_columns
from hnirm.synthgen import brute_force_log_posterior, generate, grid_conditional, ks_statistic
from hnirm.within_school import pairwise_distances

from conftest import perturbed_state

logging.getLogger("hnirm").setLevel(logging.ERROR)

BAND_DEFAULT = (0.15, 0.45)
BAND_ADAPT = (0.2, 0.4)


# -- shared benchmark (criteria 4 and 6) ----------------------------------------------

@pytest.fixture(scope="module")
def benchmark():
    ds, truth = generate(6, 50, 20, d=2, seed=1)
    mats = dichotomize(ds, mode="binary")
    t0 = time.perf_counter()
    out = run_chain(mats, ChainConfig(seed=1, store_positions=True), log_every=0)
    return mats, truth, out, time.perf_counter() - t0


# -- 1. closed-form conditionals --------------------------------------------------------

GIBBS = {
    # family: (selector, draw -> value of the selected scalar, positive support)
    "sigma_d2": (("sigma_d2", 1), lambda s, r: steps.draw_sigma_d2(s, r)[1], True),
    "sigma_delta2": (("sigma_delta2", 0, 0, 2), lambda s, r: steps.draw_sigma_delta2(s, r)[0, 0, 2], True),
    "delta": (("delta", 1, 0, 2), lambda s, r: steps.draw_delta(s, r)[1, 0, 2], False),
    "mu": (("mu", 0, 1, 2), lambda s, r: steps.draw_mu(s, r)[0, 1, 2], False),
    "sigma_z2": (("sigma_z2", 2), lambda s, r: steps.gibbs_sigma_z(s.schools[2], s.data[2], s.hyper, r), True),
    "sigma_beta2": (("sigma_beta2", 0, 1), lambda s, r: steps.draw_sigma_beta2(s, r)[0, 1], True),
    "gamma": (("gamma", 0, 1), lambda s, r: steps.draw_gamma(s, r)[0, 1], False),
}


def _grid_for(draws, positive):
    lo, hi = np.min(draws), np.max(draws)
    if positive:
        return np.geomspace(lo / 3, hi * 3, 3001)
    pad = 0.25 * (hi - lo)
    return np.linspace(lo - pad, hi + pad, 3001)


@pytest.mark.parametrize("family", list(GIBBS))
def test_criterion_1_gibbs_conditionals(family, report):
    state, _ = perturbed_state(M=3, n=4, p=3, seed=21)
    frozen = state.copy()
    selector, draw, positive = GIBBS[family]
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    draws = np.array([draw(state, rng) for _ in range(100_000)])
    grid = _grid_for(draws, positive)
    dens = grid_conditional(frozen, selector, grid)
    ks = ks_statistic(draws, grid, dens)
    elapsed = time.perf_counter() - t0
    ok = ks < 0.02 and elapsed < 60
    report(f"1[{family}]", ok, f"KS={ks:.4f} (<0.02) over 1e5 draws, {elapsed:.1f}s (<60s)")
    assert ok


# -- 2. Metropolis stationarity -----------------------------------------------------------

def _toy():
    from hnirm.data import BinarySchoolMatrix
    X = BinarySchoolMatrix("toy", np.array([[1, 1], [1, 0]]))
    cfg = ChainConfig(d=1, hyper=HyperPriors(sigma_gamma2=1.0, sigma_theta2=1.0, sigma_mu2=1.0))
    state = initial_state([X], cfg)
    s, h = state.schools[0], state.hier
    s.W = np.array([[-0.6], [0.7]])
    s.Z = np.array([[0.5], [-0.3]])
    s.theta = np.array([0.2, -0.1])
    s.beta = np.array([0.4, -0.5])
    s.sigma_z2 = 0.8
    s.refresh_distances()
    h.delta[0] = np.array([[0, 0.1], [0.1, 0]])
    h.mu[0] = np.array([[0, 0.2], [0.2, 0]])
    h.sigma_d2[:] = 0.7
    h.gamma[0] = [0.3, -0.2]
    h.sigma_beta2[0] = [1.0, 1.0]
    return state


MH = {
    # family: (getter of the two coordinates, setter, step, jump, box)
    "w": (lambda s: s.W[:, 0], "W", lambda st, r: steps.step_update_W(
        st.schools[0], st.data[0], st.hier.delta[0], st.hier.sigma_d2[0], 1.2, r), 7.0),
    "theta": (lambda s: s.theta, "theta", lambda st, r: steps.step_update_theta(
        st.schools[0], st.data[0], st.hyper.sigma_theta2, 1.5, r), 6.0),
    "z": (lambda s: s.Z[:, 0], "Z", lambda st, r: steps.step_update_Z(st.schools[0], st.data[0], 1.2, r), 7.0),
    "beta": (lambda s: s.beta, "beta", lambda st, r: steps.step_update_beta(
        st.schools[0], st.data[0], st.hier.gamma[0], st.hier.sigma_beta2[0], 1.5, r), 6.0),
}


def _grid_posterior(state, attr, centres):
    # brute-force joint posterior of the two coordinates on a cell-centred grid
    work = state.copy()
    s = work.schools[0]
    G = centres.size
    logp = np.empty((G, G))
    for a, x1 in enumerate(centres):
        for b, x2 in enumerate(centres):
            vals = np.array([x1, x2])
            if attr in ("W", "Z"):
                getattr(s, attr)[:, 0] = vals
                s.refresh_distances()
            else:
                setattr(s, attr, vals)
            logp[a, b] = brute_force_log_posterior(work)
    P = np.exp(logp - logp[np.isfinite(logp)].max())
    return P / P.sum()


@pytest.mark.parametrize("family", list(MH))
def test_criterion_2_mh_stationarity(family, report):
    get, attr, step, box = MH[family]
    state = _toy()
    n_cells, per_bin = 280, 7
    edges_cells = np.linspace(-box, box, n_cells + 1)
    centres = 0.5 * (edges_cells[1:] + edges_cells[:-1])
    P = _grid_posterior(state, attr, centres)
    bins = edges_cells[::per_bin]
    rng = np.random.default_rng(3)
    n_iter, burn = 1_000_000, 10_000
    trace = np.empty((n_iter, 2))
    s = state.schools[0]
    for t in range(n_iter):
        step(state, rng)
        trace[t] = get(s)
    trace = trace[burn:]
    tvs = []
    for axis in range(2):
        expected = P.sum(axis=1 - axis).reshape(-1, per_bin).sum(axis=1)
        counts, _ = np.histogram(trace[:, axis], bins=bins)
        outside = 1 - counts.sum() / trace.shape[0]
        tvs.append(0.5 * (np.abs(counts / trace.shape[0] - expected).sum() + outside))
    tv = max(tvs)
    ok = tv <= 0.03
    report(f"2[{family}]", ok, f"max marginal TV={tv:.4f} (<=0.03) after 1e6 iterations")
    assert ok


# -- 3. rigid-motion invariance ---------------------------------------------------------------

def test_criterion_3_invariance(report):
    ds, _ = generate(3, 12, 6, seed=8)
    mats = dichotomize(ds, mode="binary")
    assert all(m.X.sum(axis=1).min() > 0 for m in mats)
    cfg = ChainConfig(seed=2, n_iter=400, burn_in=100, thin=5, store_person_distances=True)
    init = initial_state(mats, cfg, rng=np.random.default_rng(99))
    moved = init.copy()
    rng = np.random.default_rng(5)
    for s in moved.schools:
        q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
        q[:, 0] *= -1  # include a reflection
        t = rng.normal(size=2) * 4
        s.W = s.W @ q + t
        s.Z = s.Z @ q + t
        s.refresh_distances()
    lp0, lp1 = log_posterior(init), log_posterior(moved)
    rel = abs(lp1 - lp0) / abs(lp0)
    a = run_chain(mats, cfg, init=init)
    b = run_chain(mats, cfg, init=moved)
    same = all(np.array_equal(x, y) for x, y in zip(a.draws["person_dist"], b.draws["person_dist"]))
    same &= np.array_equal(a.draws["item_dist"], b.draws["item_dist"])
    ok = rel <= 1e-10 and same
    report("3", ok, f"relative log-posterior change {rel:.1e} (<=1e-10); distance draws bit-identical: {same}")
    assert ok


# -- 4. parameter recovery ------------------------------------------------------------------------

def test_criterion_4_recovery(benchmark, report):
    mats, truth, out, wall = benchmark
    M, p = truth.beta.shape
    iu = np.triu_indices(p, 1)
    bm = out.draws["beta"].mean(axis=0)
    rho = [spearmanr(bm[m], truth.beta[m])[0] for m in range(M)]
    cors = []
    for m in range(M):
        ref = truth.W[m] - truth.W[m].mean(axis=0)
        aligned = []
        for w in out.draws["W"][:, m]:
            w = w - w.mean(axis=0)
            R, _ = orthogonal_procrustes(w, ref)
            aligned.append(w @ R)
        D = pairwise_distances(np.mean(aligned, axis=0))
        cors.append(pearsonr(D[iu], truth.item_distances(m)[iu])[0])
    mu = pooled_mu(out.draws["mu"].mean(axis=0))
    labels = spectral_cluster(item_dissimilarity_from_mu(mu), 3, seed=0)
    ari = adjusted_rand_score(truth.item_cluster, labels)
    ok_a, ok_b, ok_c = min(rho) >= 0.9, min(cors) >= 0.8, ari >= 0.9
    ok_t = wall < 15 * 60
    report("4a", ok_a, f"per-school Spearman(beta*, mean beta) = {np.round(rho, 3).tolist()} (each >=0.9)")
    report("4b", ok_b, f"per-school aligned distance correlation = {np.round(cors, 3).tolist()} (each >=0.8)")
    report("4c", ok_c, f"ARI of spectral clusters on pooled mu = {ari:.3f} (>=0.9)")
    report("4-runtime", ok_t, f"default chain wall time {wall:.0f}s (<900s, single-threaded)")
    assert ok_a and ok_b and ok_c and ok_t


# -- 5. HPD calibration ---------------------------------------------------------------------------------

def test_criterion_5_hpd_calibration(report):
    if os.environ.get("HNIRM_FULL_CALIBRATION") == "1":
        cfg, plan = {}, "15000/2500/5"
    else:
        cfg, plan = dict(n_iter=3000, burn_in=500, thin=5), "3000/500/5"
    hits, total, shift = 0, 0, []
    for r in range(50):
        ds, truth = generate(4, 30, 10, seed=5000 + r)
        out = run_chain(dichotomize(ds, mode="binary"), ChainConfig(seed=r, **cfg), log_every=0)
        lo, hi = hpd_columns(out.draws["beta"])
        hits += int(np.sum((lo <= truth.beta) & (truth.beta <= hi)))
        total += truth.beta.size
        shift.append(float(np.mean(out.draws["beta"].mean(axis=0) - truth.beta)))
    cov = hits / total
    ok = cov >= 0.88
    report("5", ok, f"95% HPD coverage of beta* = {cov:.3f} (>=0.88) over 50 replicates, chain {plan}; "
                    f"mean(posterior mean - beta*) = {np.mean(shift):.2f}")
    assert ok


# -- 6. acceptance band -------------------------------------------------------------------------------------

def _in_band(rates, band):
    return all(band[0] <= v <= band[1] for v in rates.values())


def test_criterion_6_acceptance_default(benchmark, report):
    _, _, out, _ = benchmark
    ok = _in_band(out.acceptance, BAND_DEFAULT)
    rates = {k: round(v, 3) for k, v in out.acceptance.items()}
    report("6-default", ok, f"default jump scales: {rates} (each in [0.15, 0.45])")
    assert ok


def test_criterion_6_acceptance_adaptive(benchmark, report):
    mats, _, _, _ = benchmark
    out = run_chain(mats, ChainConfig(seed=1, adapt=True), log_every=0)
    ok = _in_band(out.acceptance, BAND_ADAPT)
    rates = {k: round(v, 3) for k, v in out.acceptance.items()}
    report("6-adaptive", ok, f"adaptive mode: {rates} (each in [0.2, 0.4])")
    assert ok


# -- 7. MDS quality ---------------------------------------------------------------------------------------------

def test_criterion_7_mds(report):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(15, 2)) * 3
    D = pairwise_distances(X)
    emb = kruskal_mds(D, 2)
    iu = np.triu_indices(15, 1)
    E = pairwise_distances(emb.positions)
    emb2 = kruskal_mds(np.exp(D) - 1 + D**3, 2)
    rank = spearmanr(E[iu], pairwise_distances(emb2.positions)[iu])[0]
    same_ranks = spearmanr(D[iu], E[iu])[0]
    ok = emb.stress < 0.01 and rank == pytest.approx(1.0, abs=1e-12)
    report("7", ok, f"stress {emb.stress:.2e} (<0.01); rank corr under monotone transform {rank:.6f} (=1.0); "
                    f"input/output rank corr {same_ranks:.6f}")
    assert ok


# -- 8. desk-scale performance --------------------------------------------------------------------------------

def test_criterion_8_performance(report):
    ds, _ = generate(62, 60, 72, seed=0)
    mats = dichotomize(ds, mode="binary")
    full = os.environ.get("HNIRM_FULL_BENCH") == "1"
    n_iter = 15000 if full else 60
    cfg = ChainConfig(seed=4, parallel=4, n_iter=n_iter, burn_in=n_iter // 6, thin=5)
    t0 = time.perf_counter()
    a = run_chain(mats, cfg, log_every=0)
    elapsed = time.perf_counter() - t0
    projected = elapsed if full else elapsed / n_iter * 15000
    short = ChainConfig(seed=4, parallel=4, n_iter=20, burn_in=5, thin=5)
    b = run_chain(mats, short, log_every=0)
    c = run_chain(mats, short, log_every=0)
    d = run_chain(mats, short.with_overrides(parallel=1), log_every=0)
    det = all(np.array_equal(b.draws[k], c.draws[k]) and np.array_equal(b.draws[k], d.draws[k])
              for k in ("beta", "mu", "gamma", "item_dist", "sigma_z2"))
    ok = projected < 2 * 3600 and det
    how = "measured" if full else f"projected from {n_iter} iterations"
    report("8", ok, f"15,000 iterations {how}: {projected / 60:.1f} min (<120 min) on {os.cpu_count()} core(s) "
                    f"with --parallel 4; seed-deterministic (parallel 4 == 4 == 1): {det}")
    assert ok


# -- 9. multiple-group consistency ---------------------------------------------------------------------------------

def test_criterion_9_identical_groups(report):
    ds, truth = generate(6, 50, 20, d=2, group_spec=2, seed=3)
    mats = dichotomize(ds, mode="binary")
    groups, labels = assign_groups(ds, "by_label")
    out = run_chain(mats, ChainConfig(seed=3, group_mode="by_label"), group_of_school=groups,
                    group_labels=labels, log_every=0)
    rows = summarize(out, families=["gamma", "mu"])
    gam = [r for r in rows if r["family"] == "gamma_diff"]
    mu = [r for r in rows if r["family"] == "mu_diff"]
    frac = 1 - np.mean([r["excludes_zero"] for r in gam])
    frac_mu = 1 - np.mean([r["excludes_zero"] for r in mu])
    ok = frac >= 0.95
    report("9", ok, f"gamma difference HPD straddles 0 for {frac:.1%} of items (>=95%); "
                    f"mu difference for {frac_mu:.1%} of pairs")
    assert ok
