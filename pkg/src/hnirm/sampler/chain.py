"""Chain driver: initialisation, the iteration loop and stored draws."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..data import BinarySchoolMatrix
from ..exceptions import InitializationError, SamplerError, ValidationError
from ..hierarchy import (
    HierarchicalState,
    HyperPriors,
    assign_groups,
    inv_gamma_logpdf,
    logprior_beta,
    logprior_delta,
    logprior_log_distances,
    normal_logpdf,
)
from ..within_school import (
    SchoolData,
    WithinSchoolState,
    logprior_links,
    pairwise_distances,
)
from . import steps
from .config import ChainConfig
from .steps import ChainState

logger = logging.getLogger(__name__)

FAMILIES = ("w", "theta", "z", "beta")
_QUANT = 2.0**30


def school_data(matrices: Sequence[BinarySchoolMatrix], group_of_school=None) -> list[SchoolData]:
    if not matrices:
        raise ValidationError("no schools supplied")
    p = matrices[0].p
    if any(m.p != p for m in matrices):
        raise ValidationError("every school must share the item list")
    groups = np.zeros(len(matrices), dtype=int) if group_of_school is None else group_of_school
    return [SchoolData(X=m.X, school_id=m.school_id, group=int(g)) for m, g in zip(matrices, groups)]


def canonicalize(school: WithinSchoolState) -> None:
    """Move a school to a canonical frame fixed by its item configuration.

    Centre on the item centroid, rotate onto the principal axes of ``W``
    (each axis signed so its largest-magnitude item coordinate is positive)
    and snap to a 2**-30 grid. Configurations that differ by a rigid motion
    map to bitwise identical starts. ``Z`` follows the same motion.
    """
    centre = school.W.mean(axis=0)
    W = school.W - centre
    Z = school.Z - centre
    _, _, vt = np.linalg.svd(W, full_matrices=False)
    R = vt.T
    WR = W @ R
    for a in range(R.shape[1]):
        idx = np.argmax(np.abs(WR[:, a]))
        if WR[idx, a] < 0:
            R[:, a] = -R[:, a]
    school.W = np.ascontiguousarray(np.round(W @ R * _QUANT) / _QUANT)
    school.Z = np.ascontiguousarray(np.round(Z @ R * _QUANT) / _QUANT)
    school.refresh_distances()


def initial_state(matrices: Sequence[BinarySchoolMatrix], config: ChainConfig,
                  group_of_school=None, group_labels=None, rng=None) -> ChainState:
    """Default starting point.

    Positions are 0.1 * N(0, I), intercepts 0, variances 1, and ``delta``
    and ``mu`` the log of the starting item distances.
    """
    if group_of_school is None:
        group_of_school, group_labels = assign_groups([m.group_label for m in matrices], config.group_mode)
    group_of_school = np.asarray(group_of_school, dtype=np.int64)
    G = int(group_of_school.max()) + 1
    if group_labels is None:
        group_labels = tuple(str(g) for g in range(G))
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    data = school_data(matrices, group_of_school)
    p, d = data[0].p, config.d
    schools = []
    for sd in data:
        school = WithinSchoolState(
            Z=0.1 * rng.standard_normal((sd.n, d)),
            W=0.1 * rng.standard_normal((p, d)),
            beta=np.zeros(p),
            theta=np.zeros(sd.n),
            sigma_z2=1.0,
        )
        canonicalize(school)
        schools.append(school)
    M = len(schools)
    delta = np.zeros((M, p, p))
    off = ~np.eye(p, dtype=bool)
    for m, s in enumerate(schools):
        delta[m][off] = np.log(s.d_w[off])
    mu = np.array([delta[group_of_school == g].mean(axis=0) for g in range(G)])
    hier = HierarchicalState(
        gamma=np.zeros((G, p)),
        sigma_beta2=np.ones((G, p)),
        delta=delta,
        sigma_d2=np.ones(M),
        mu=mu,
        sigma_delta2=np.ones((G, p, p)),
        group_of_school=group_of_school,
        group_labels=tuple(group_labels),
    )
    return ChainState(data=data, schools=schools, hier=hier, hyper=config.hyper)


def log_posterior(state: ChainState) -> float:
    """Unnormalised log-density targeted by the position and intercept updates.

    The distance prior enters on the log scale (no ``1/d`` Jacobian), as in
    the item-position update.
    """
    hier, hyper = state.hier, state.hyper
    a, b = hyper.a, hyper.b
    iu = np.triu_indices(state.p, 1)
    total = 0.0
    for m, (sd, s) in enumerate(zip(state.data, state.schools)):
        g = hier.group_of_school[m]
        total += _loglik_counts(sd, s)
        total += logprior_log_distances(pairwise_distances(s.W), hier.delta[m], hier.sigma_d2[m])
        total += logprior_delta(hier.delta[m], hier.mu[g], hier.sigma_delta2[g])
        total += logprior_beta(s.beta, hier.gamma[g], hier.sigma_beta2[g])
        total += logprior_links(s.Z, s.W, sd.X, s.sigma_z2)
        total += float(np.sum(normal_logpdf(s.theta, 0.0, hyper.sigma_theta2)))
        total += float(inv_gamma_logpdf(s.sigma_z2, a, b) + inv_gamma_logpdf(hier.sigma_d2[m], a, b))
    for g in range(hier.n_groups):
        total += float(np.sum(normal_logpdf(hier.gamma[g], 0.0, hyper.sigma_gamma2)))
        total += float(np.sum(normal_logpdf(hier.mu[g][iu], 0.0, hyper.sigma_mu2)))
        total += float(np.sum(inv_gamma_logpdf(hier.sigma_beta2[g], a, b)))
        total += float(np.sum(inv_gamma_logpdf(hier.sigma_delta2[g][iu], a, b)))
    return total


def _loglik_counts(sd: SchoolData, s: WithinSchoolState) -> float:
    # both layer likelihoods from the co-endorsement counts, no layers materialised
    Dz = pairwise_distances(s.Z)
    Dw = pairwise_distances(s.W)
    iz = np.triu_indices(sd.n, 1)
    iw = np.triu_indices(sd.p, 1)
    x_y = s.beta[:, None] - Dz[iz][None, :]
    x_u = s.theta[:, None] - Dw[iw][None, :]
    ll_y = np.sum(sd.colsum * (sd.colsum - 1) / 2 * s.beta) - np.sum(sd.A[iz] * Dz[iz]) - np.sum(np.logaddexp(0, x_y))
    ll_u = np.sum(sd.rowsum * (sd.rowsum - 1) / 2 * s.theta) - np.sum(sd.C[iw] * Dw[iw]) - np.sum(np.logaddexp(0, x_u))
    return float(ll_y + ll_u)


@dataclass
class PosteriorSamples:
    """Thinned post-burn-in draws.

    ``draws`` maps a family name to an array whose leading axis indexes the
    stored draw: ``beta`` (S, M, p), ``gamma``/``sigma_beta2`` (S, G, p),
    ``delta``/``item_dist`` (S, M, p, p), ``mu``/``sigma_delta2`` (S, G, p, p),
    ``sigma_d2``/``sigma_z2`` (S, M), ``W`` (S, M, p, d). Ragged per-school
    families (``theta``, ``Z``, ``person_dist``) are lists over schools.
    ``means`` always holds posterior means of ``delta`` and ``item_dist``,
    even when their draws are not stored.
    """

    school_ids: list[str]
    item_ids: list[str]
    group_labels: tuple[str, ...]
    group_of_school: np.ndarray
    config: ChainConfig
    draws: dict = field(default_factory=dict)
    means: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    acceptance_total: dict = field(default_factory=dict)
    final_jumps: np.ndarray | None = None
    wall_time: float = 0.0

    @property
    def n_draws(self) -> int:
        return int(self.draws["sigma_z2"].shape[0])

    def family(self, name: str):
        if name not in self.draws:
            raise KeyError(f"family {name!r} not stored; available: {sorted(self.draws)}")
        return self.draws[name]


class _Recorder:
    def __init__(self, state: ChainState, config: ChainConfig):
        S = config.n_draws
        M, p, G, d = state.M, state.p, state.hier.n_groups, config.d
        self.config = config
        self.d = {
            "beta": np.empty((S, M, p)),
            "theta": [np.empty((S, sd.n)) for sd in state.data],
            "gamma": np.empty((S, G, p)),
            "sigma_beta2": np.empty((S, G, p)),
            "mu": np.empty((S, G, p, p)),
            "sigma_delta2": np.empty((S, G, p, p)),
            "sigma_d2": np.empty((S, M)),
            "sigma_z2": np.empty((S, M)),
        }
        if config.store_pair_draws:
            self.d["delta"] = np.empty((S, M, p, p))
            self.d["item_dist"] = np.empty((S, M, p, p))
        if config.store_positions:
            self.d["W"] = np.empty((S, M, p, d))
            self.d["Z"] = [np.empty((S, sd.n, d)) for sd in state.data]
        if config.store_person_distances:
            self.d["person_dist"] = [np.empty((S, sd.n, sd.n)) for sd in state.data]
        self.delta_sum = np.zeros((M, p, p))
        self.dist_sum = np.zeros((M, p, p))

    def record(self, s: int, state: ChainState):
        h = state.hier
        d = self.d
        for m, sch in enumerate(state.schools):
            d["beta"][s, m] = sch.beta
            d["theta"][m][s] = sch.theta
            d["sigma_z2"][s, m] = sch.sigma_z2
            self.dist_sum[m] += sch.d_w
            if "item_dist" in d:
                d["item_dist"][s, m] = sch.d_w
            if "W" in d:
                d["W"][s, m] = sch.W
                d["Z"][m][s] = sch.Z
            if "person_dist" in d:
                d["person_dist"][m][s] = sch.d_z
        d["gamma"][s] = h.gamma
        d["sigma_beta2"][s] = h.sigma_beta2
        d["mu"][s] = h.mu
        d["sigma_delta2"][s] = h.sigma_delta2
        d["sigma_d2"][s] = h.sigma_d2
        self.delta_sum += h.delta
        if "delta" in d:
            d["delta"][s] = h.delta


def _check_finite(state: ChainState, it: int):
    total = 0.0
    for s in state.schools:
        total += s.W.sum() + s.Z.sum() + s.beta.sum() + s.theta.sum() + s.sigma_z2
    h = state.hier
    total += h.gamma.sum() + h.mu.sum() + h.delta.sum() + h.sigma_d2.sum() + h.sigma_delta2.sum() + h.sigma_beta2.sum()
    if not np.isfinite(total):
        raise SamplerError("non-finite parameter value", it)


def _spawn_streams(seed: int, M: int):
    children = np.random.SeedSequence(seed).spawn(M + 2)
    make = lambda ss: np.random.Generator(np.random.PCG64(ss))
    return make(children[0]), make(children[1]), [make(c) for c in children[2:]]


def run_chain(matrices: Sequence[BinarySchoolMatrix], config: ChainConfig, init: ChainState | None = None,
              group_of_school=None, group_labels=None, item_ids=None, log_every: int = 1000) -> PosteriorSamples:
    """Run the Metropolis-within-Gibbs sampler.

    Parameters
    ----------
    matrices : sequence of BinarySchoolMatrix
        One dichotomised matrix per school, sharing the item order.
    config : ChainConfig
    init : ChainState, optional
        Starting state; its positions are moved to the canonical frame
        before sampling (a rigid motion, so the posterior is unchanged).
    group_of_school, group_labels : optional
        Override the grouping derived from ``config.group_mode``.

    Returns
    -------
    PosteriorSamples

    Notes
    -----
    Streams are spawned from ``config.seed``: one for initialisation, one
    for the pooled Gibbs steps and one per school. Per-school blocks only
    touch their own stream, so ``parallel > 1`` reproduces the
    single-threaded output exactly.
    """
    t0 = time.perf_counter()
    M = len(matrices)
    init_rng, master, school_rngs = _spawn_streams(config.seed, M)
    if init is None:
        state = initial_state(matrices, config, group_of_school, group_labels, rng=init_rng)
    else:
        state = init.copy()
        for s in state.schools:
            canonicalize(s)
    for sd in state.data:
        if np.any(sd.rowsum == 0):
            logger.warning("school %s: %d respondent(s) endorsed no item; their linking mean is the origin",
                           sd.school_id, int(np.sum(sd.rowsum == 0)))
    lp0 = log_posterior(state)
    if not np.isfinite(lp0):
        raise InitializationError(f"initial log-posterior is not finite ({lp0})")

    hyper = state.hyper
    hier = state.hier
    jumps = np.tile([config.jump_w, config.jump_theta, config.jump_z, config.jump_beta], (M, 1)).astype(float)
    n_units = np.array([[sd.p, sd.n, sd.n, sd.p] for sd in state.data], dtype=float)
    acc_window = np.zeros((M, 4))
    acc_post = np.zeros((M, 4))
    acc_all = np.zeros((M, 4))
    prop_post = np.zeros((M, 4))
    prop_all = np.zeros((M, 4))
    n_adapt = 0
    rec = _Recorder(state, config)

    def block_a(m):
        sch, sd, rng = state.schools[m], state.data[m], school_rngs[m]
        aw = steps.step_update_W(sch, sd, hier.delta[m], hier.sigma_d2[m], jumps[m, 0], rng)
        at = steps.step_update_theta(sch, sd, hyper.sigma_theta2, jumps[m, 1], rng)
        return aw, at

    def block_c(m):
        sch, sd, rng = state.schools[m], state.data[m], school_rngs[m]
        g = hier.group_of_school[m]
        az = steps.step_update_Z(sch, sd, jumps[m, 2], rng)
        steps.gibbs_sigma_z(sch, sd, hyper, rng)
        ab = steps.step_update_beta(sch, sd, hier.gamma[g], hier.sigma_beta2[g], jumps[m, 3], rng)
        return az, ab

    pool = ThreadPoolExecutor(max_workers=config.parallel) if config.parallel > 1 else None
    run = (lambda fn: list(pool.map(fn, range(M)))) if pool else (lambda fn: [fn(m) for m in range(M)])
    stored = 0
    try:
        for it in range(config.n_iter):
            res_a = run(block_a)
            steps.gibbs_variances_distance(state, master)
            steps.gibbs_delta_mu(state, master)
            res_c = run(block_c)
            steps.gibbs_gamma_sigma_beta(state, master)

            acc = np.array([[ra[0], ra[1], rc[0], rc[1]] for ra, rc in zip(res_a, res_c)], dtype=float)
            acc_all += acc
            prop_all += n_units
            if it >= config.burn_in:
                acc_post += acc
                prop_post += n_units
            elif config.adapt:
                acc_window += acc
                if (it + 1) % config.adapt_interval == 0:
                    rate = acc_window / (n_units * config.adapt_interval)
                    target = 0.5 * (config.target_accept[0] + config.target_accept[1])
                    n_adapt += 1
                    jumps *= np.exp((rate - target) / np.sqrt(n_adapt))
                    acc_window[:] = 0
            _check_finite(state, it)
            if it >= config.burn_in and (it - config.burn_in + 1) % config.thin == 0 and stored < config.n_draws:
                rec.record(stored, state)
                stored += 1
            if log_every and (it + 1) % log_every == 0:
                logger.info("iteration %d/%d", it + 1, config.n_iter)
    finally:
        if pool:
            pool.shutdown()

    rates = lambda a, p: {f: float(a[:, j].sum() / p[:, j].sum()) for j, f in enumerate(FAMILIES)}
    means = {"delta": rec.delta_sum / max(stored, 1), "item_dist": rec.dist_sum / max(stored, 1)}
    return PosteriorSamples(
        school_ids=[sd.school_id for sd in state.data],
        item_ids=list(item_ids) if item_ids is not None else [f"item_{i + 1}" for i in range(state.p)],
        group_labels=tuple(hier.group_labels),
        group_of_school=hier.group_of_school.copy(),
        config=config,
        draws=rec.d,
        means=means,
        acceptance=rates(acc_post, prop_post),
        acceptance_total=rates(acc_all, prop_all),
        final_jumps=jumps,
        wall_time=time.perf_counter() - t0,
    )
