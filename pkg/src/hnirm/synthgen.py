"""Synthetic data with known latent structure, and brute-force oracles.

Responses are generated with the response-level surrogate
``x_ki ~ Bernoulli(sigmoid(theta_k + beta_i - |z_k - w_i|))``; the induced
co-positive networks inherit the planted item clusters.

The oracle functions below are written with plain loops and ``math`` on
purpose: they share no numerical helpers with the model modules, so that
agreement between the two is evidence rather than tautology.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ResponseDataset
from .exceptions import ResolutionError, ValidationError


@dataclass(frozen=True)
class GeneratorConfig:
    """Hyperparameters of the synthetic generator.

    Item base positions are ``n_item_clusters`` Gaussian blobs (sd
    ``item_spread``) centred on a circle of radius ``cluster_radius``;
    each school perturbs them by ``school_jitter``. Respondents sit near a
    cluster centre with sd ``respondent_spread``; the clusters get equal
    shares of each school's respondents.
    """

    n_item_clusters: int = 3
    cluster_radius: float = 3.5
    item_spread: float = 0.25
    school_jitter: float = 0.1
    respondent_spread: float = 0.5
    gamma_mean: float = 1.5
    gamma_sd: float = 1.5
    sigma_beta: float = 0.3
    theta_sd: float = 0.5
    group_gamma_shift: float = 0.0
    beta_fixed: float | None = None


@dataclass
class GroundTruth:
    Z: list
    W: list
    beta: np.ndarray            # (M, p)
    theta: list
    gamma: np.ndarray           # (G, p)
    mu: np.ndarray              # (G, p, p) log base distances
    item_cluster: np.ndarray
    base_W: np.ndarray
    school_ids: list
    group_of_school: np.ndarray
    group_labels: tuple
    config: GeneratorConfig = field(default_factory=GeneratorConfig)
    seed: int = 0

    def item_distances(self, m: int) -> np.ndarray:
        W = self.W[m]
        return np.sqrt(((W[:, None, :] - W[None, :, :]) ** 2).sum(-1))


def _cluster_centres(K: int, radius: float, d: int) -> np.ndarray:
    centres = np.zeros((K, d))
    if d == 1:
        centres[:, 0] = np.linspace(-radius, radius, K)
    else:
        ang = 2 * np.pi * np.arange(K) / K
        centres[:, 0] = radius * np.cos(ang)
        centres[:, 1] = radius * np.sin(ang)
    return centres


def _resolve_groups(group_spec, M):
    if group_spec is None:
        return [None] * M
    if isinstance(group_spec, (int, np.integer)):
        if group_spec < 1:
            raise ValidationError("number of groups must be >= 1")
        return [f"g{m % int(group_spec)}" for m in range(M)]
    labels = list(group_spec)
    if len(labels) != M:
        raise ValidationError(f"group_spec has {len(labels)} labels for {M} schools")
    return [str(lab) for lab in labels]


def generate(M: int, n_per_school, p: int, d: int = 2, group_spec=None, seed: int = 0,
             config: GeneratorConfig | None = None) -> tuple[ResponseDataset, GroundTruth]:
    """Draw a multilevel binary dataset and its generating parameters.

    Parameters
    ----------
    M : int
        Number of schools.
    n_per_school : int or sequence of int
    p : int
        Number of items (assigned to clusters round-robin).
    d : int
        Latent dimension.
    group_spec : None, int or sequence of str
        ``None`` leaves schools unlabelled; an int G labels schools
        ``g0..g{G-1}`` round-robin; a sequence gives one label per school.
        Group ``g`` shifts every item intercept by ``g * group_gamma_shift``.
    seed : int
    config : GeneratorConfig, optional

    Returns
    -------
    dataset : ResponseDataset
        Binary (0/1) codes in wide layout.
    truth : GroundTruth
    """
    cfg = config or GeneratorConfig()
    ns = [int(n_per_school)] * M if np.isscalar(n_per_school) else [int(v) for v in n_per_school]
    if M < 1 or p < 2 or d < 1 or len(ns) != M or min(ns) < 2:
        raise ValidationError("need M >= 1, p >= 2, d >= 1 and n >= 2 respondents per school")
    rng = np.random.default_rng(seed)
    labels = _resolve_groups(group_spec, M)
    distinct = [lab for i, lab in enumerate(labels) if lab is not None and lab not in labels[:i]]
    group_of_school = np.array([distinct.index(lab) if lab is not None else 0 for lab in labels], dtype=np.int64)
    G = max(len(distinct), 1)

    K = cfg.n_item_clusters
    centres = _cluster_centres(K, cfg.cluster_radius, d)
    item_cluster = np.arange(p) % K
    base_W = centres[item_cluster] + cfg.item_spread * rng.standard_normal((p, d))
    base_gamma = cfg.gamma_mean + cfg.gamma_sd * rng.standard_normal(p)
    gamma = np.array([base_gamma + g * cfg.group_gamma_shift for g in range(G)])
    base_D = np.sqrt(((base_W[:, None] - base_W[None]) ** 2).sum(-1))
    logD = np.zeros_like(base_D)
    off = ~np.eye(p, dtype=bool)
    logD[off] = np.log(base_D[off])
    mu = np.repeat(logD[None], G, axis=0)

    school_ids = [f"s{m:03d}" for m in range(M)]
    Zs, Ws, thetas, betas = [], [], [], []
    rids, sids, glabs, rows = [], [], [], []
    for m in range(M):
        n = ns[m]
        W = base_W + cfg.school_jitter * rng.standard_normal((p, d))
        if cfg.beta_fixed is not None:
            beta = np.full(p, float(cfg.beta_fixed))
        else:
            beta = gamma[group_of_school[m]] + cfg.sigma_beta * rng.standard_normal(p)
        theta = cfg.theta_sd * rng.standard_normal(n)
        # balanced cluster membership, shuffled
        home = rng.permutation(np.arange(n) % K)
        Z = centres[home] + cfg.respondent_spread * rng.standard_normal((n, d))
        dist = np.sqrt(((Z[:, None, :] - W[None, :, :]) ** 2).sum(-1))
        logit = theta[:, None] + beta[None, :] - dist
        prob = 0.5 * (1.0 + np.tanh(0.5 * logit))
        X = (rng.random((n, p)) < prob).astype(np.int64)
        Zs.append(Z)
        Ws.append(W)
        thetas.append(theta)
        betas.append(beta)
        for k in range(n):
            rids.append(f"r{m:03d}_{k:04d}")
            sids.append(school_ids[m])
            glabs.append(labels[m])
        rows.append(X)
    ds = ResponseDataset(
        respondent_ids=rids,
        school_ids=sids,
        responses=np.vstack(rows),
        item_ids=[f"item_{i + 1}" for i in range(p)],
        group_labels=glabs if group_spec is not None else None,
    )
    truth = GroundTruth(
        Z=Zs, W=Ws, beta=np.array(betas), theta=thetas, gamma=gamma, mu=mu,
        item_cluster=item_cluster, base_W=base_W, school_ids=school_ids,
        group_of_school=group_of_school, group_labels=tuple(distinct) or ("all",),
        config=cfg, seed=seed,
    )
    return ds, truth


def write_truth(truth: GroundTruth, directory) -> None:
    """Save the generating parameters as CSV files next to the dataset."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    M, p = truth.beta.shape
    with open(out / "truth_items.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["school_id", "item", "cluster", "beta"] + [f"w{a + 1}" for a in range(truth.W[0].shape[1])])
        for m in range(M):
            for i in range(p):
                w.writerow([truth.school_ids[m], i, int(truth.item_cluster[i]), repr(float(truth.beta[m, i]))]
                           + [repr(float(v)) for v in truth.W[m][i]])
    with open(out / "truth_respondents.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["school_id", "respondent", "theta"] + [f"z{a + 1}" for a in range(truth.Z[0].shape[1])])
        for m in range(M):
            for k in range(truth.Z[m].shape[0]):
                w.writerow([truth.school_ids[m], k, repr(float(truth.theta[m][k]))]
                           + [repr(float(v)) for v in truth.Z[m][k]])
    with open(out / "truth_groups.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "item", "gamma"])
        for g, lab in enumerate(truth.group_labels):
            for i in range(p):
                w.writerow([lab, i, repr(float(truth.gamma[g, i]))])
    with open(out / "truth_generator.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        w.writerow(["seed", truth.seed])
        for k, v in asdict(truth.config).items():
            w.writerow([k, v])


# -- brute-force oracles ------------------------------------------------------

def _dist(a, b) -> float:
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def _bern(y: int, logit: float) -> float:
    # log P(y | logit), branch on sign to avoid overflow
    if logit >= 0:
        log_p1 = -math.log1p(math.exp(-logit))
        log_p0 = -logit + log_p1
    else:
        log_p0 = -math.log1p(math.exp(logit))
        log_p1 = logit + log_p0
    return log_p1 if y else log_p0


def _norm(x: float, mean: float, var: float) -> float:
    return -0.5 * math.log(2 * math.pi * var) - 0.5 * (x - mean) ** 2 / var


def _invgamma(x: float, shape: float, scale: float) -> float:
    return shape * math.log(scale) - math.lgamma(shape) - (shape + 1) * math.log(x) - scale / x


def brute_force_loglik(X, state) -> float:
    """Both layer log-likelihoods of one school by explicit loops over every layer and pair."""
    X = [[int(v) for v in row] for row in np.asarray(X)]
    n, p = len(X), len(X[0])
    Z, W = np.asarray(state.Z), np.asarray(state.W)
    total = 0.0
    for i in range(p):
        for k in range(n):
            for l in range(k + 1, n):
                y = X[k][i] * X[l][i]
                total += _bern(y, float(state.beta[i]) - _dist(Z[k], Z[l]))
    for k in range(n):
        for i in range(p):
            for j in range(i + 1, p):
                u = X[k][i] * X[k][j]
                total += _bern(u, float(state.theta[k]) - _dist(W[i], W[j]))
    return total


def _link_mean(W, x_row):
    tot = sum(x_row)
    dim = len(W[0])
    if tot == 0:
        return [0.0] * dim
    return [sum(x_row[i] * float(W[i][a]) for i in range(len(x_row))) / tot for a in range(dim)]


def brute_force_log_posterior(state) -> float:
    """Unnormalised joint log-posterior of a ``ChainState`` by explicit loops."""
    hier, hyper = state.hier, state.hyper
    a, b = hyper.a, hyper.b
    total = 0.0
    for m, (sd, s) in enumerate(zip(state.data, state.schools)):
        g = int(hier.group_of_school[m])
        X = [[int(v) for v in row] for row in np.asarray(sd.X)]
        p = len(X[0])
        total += brute_force_loglik(X, s)
        for i in range(p):
            for j in range(i + 1, p):
                dij = _dist(s.W[i], s.W[j])
                if dij <= 0:
                    return -math.inf
                total += _norm(math.log(dij), float(hier.delta[m][i, j]), float(hier.sigma_d2[m]))
                total += _norm(float(hier.delta[m][i, j]), float(hier.mu[g][i, j]), float(hier.sigma_delta2[g][i, j]))
        for i in range(p):
            total += _norm(float(s.beta[i]), float(hier.gamma[g][i]), float(hier.sigma_beta2[g][i]))
        for k, row in enumerate(X):
            mean = _link_mean(s.W, row)
            for c in range(len(mean)):
                total += _norm(float(s.Z[k][c]), mean[c], float(s.sigma_z2))
            total += _norm(float(s.theta[k]), 0.0, hyper.sigma_theta2)
        total += _invgamma(float(s.sigma_z2), a, b) + _invgamma(float(hier.sigma_d2[m]), a, b)
    p = state.p
    for g in range(hier.gamma.shape[0]):
        for i in range(p):
            total += _norm(float(hier.gamma[g][i]), 0.0, hyper.sigma_gamma2)
            total += _invgamma(float(hier.sigma_beta2[g][i]), a, b)
            for j in range(i + 1, p):
                total += _norm(float(hier.mu[g][i, j]), 0.0, hyper.sigma_mu2)
                total += _invgamma(float(hier.sigma_delta2[g][i, j]), a, b)
    return total


# -- grid conditionals ----------------------------------------------------------

_JOINT_FAMILIES = ("theta", "beta", "z", "w", "delta", "mu", "sigma_z2", "gamma")
_CLOSED_FORM_IG = ("sigma_d2", "sigma_delta2", "sigma_beta2")


def _set_value(state, selector, x):
    fam = selector[0]
    if fam == "theta":
        state.schools[selector[1]].theta[selector[2]] = x
    elif fam == "beta":
        state.schools[selector[1]].beta[selector[2]] = x
    elif fam in ("z", "w"):
        _, m, r, a = selector
        s = state.schools[m]
        (s.Z if fam == "z" else s.W)[r, a] = x
        s.refresh_distances()
    elif fam in ("delta", "mu"):
        _, u, i, j = selector
        arr = (state.hier.delta if fam == "delta" else state.hier.mu)[u]
        arr[i, j] = arr[j, i] = x
    elif fam == "sigma_z2":
        state.schools[selector[1]].sigma_z2 = x
    elif fam == "gamma":
        state.hier.gamma[selector[1], selector[2]] = x
    else:
        raise ValidationError(f"unknown selector {selector!r}")


def _closed_form_ig(state, selector) -> tuple[float, float]:
    # shape and scale of the closed-form inverse-gamma draws, written out term by term
    hier, a, b = state.hier, state.hyper.a, state.hyper.b
    fam = selector[0]
    if fam == "sigma_d2":
        m = selector[1]
        g = int(hier.group_of_school[m])
        W = state.schools[m].W
        p = W.shape[0]
        P = p * (p - 1) / 2
        s1 = s2 = 0.0
        for i in range(p):
            for j in range(i + 1, p):
                s1 += (math.log(_dist(W[i], W[j])) - hier.delta[m][i, j]) ** 2
                s2 += (hier.delta[m][i, j] - hier.mu[g][i, j]) ** 2
        return a + P / 2, b + 0.5 * s1 + 0.5 * P / (P + 1) * s2
    if fam == "sigma_delta2":
        _, g, i, j = selector
        members = [m for m in range(len(state.schools)) if hier.group_of_school[m] == g]
        Mg = len(members)
        mu = hier.mu[g][i, j]
        ss = sum((hier.delta[m][i, j] - mu) ** 2 for m in members)
        return a + Mg / 2, b + 0.5 * ss + 0.5 * Mg / (Mg + 1) * mu**2
    if fam == "sigma_beta2":
        _, g, i = selector
        members = [m for m in range(len(state.schools)) if hier.group_of_school[m] == g]
        Mg = len(members)
        gam = hier.gamma[g][i]
        ss = sum((state.schools[m].beta[i] - gam) ** 2 for m in members)
        return a + Mg / 2, b + 0.5 * ss + 0.5 * Mg / (Mg + 1) * gam**2
    raise ValidationError(f"unknown selector {selector!r}")


def _log_density(state, selector, xs) -> np.ndarray:
    fam = selector[0]
    if fam in _CLOSED_FORM_IG:
        shape, scale = _closed_form_ig(state, selector)
        return np.array([-(shape + 1) * math.log(x) - scale / x if x > 0 else -math.inf for x in xs])
    if fam not in _JOINT_FAMILIES:
        raise ValidationError(f"unknown selector {selector!r}")
    out = np.empty(len(xs))
    work = state.copy()
    for t, x in enumerate(xs):
        if fam == "sigma_z2" and x <= 0:
            out[t] = -math.inf
            continue
        _set_value(work, selector, float(x))
        out[t] = brute_force_log_posterior(work)
    return out


def _trapezoid(y, x) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def grid_conditional(state, selector: tuple, grid, rtol: float = 1e-4) -> np.ndarray:
    """Normalised full conditional of one scalar parameter on ``grid``.

    Families ``theta``, ``beta``, ``z``, ``w``, ``delta``, ``mu``,
    ``sigma_z2`` and ``gamma`` are exact slices of the joint posterior.
    ``sigma_d2``, ``sigma_delta2`` and ``sigma_beta2`` use the closed-form
    inverse-gamma forms that the sampler is specified to draw from.

    Parameters
    ----------
    state : ChainState
    selector : tuple
        ``("theta", m, k)``, ``("beta", m, i)``, ``("z", m, k, axis)``,
        ``("w", m, i, axis)``, ``("sigma_d2", m)``, ``("sigma_delta2", g, i, j)``,
        ``("delta", m, i, j)``, ``("mu", g, i, j)``, ``("sigma_z2", m)``,
        ``("sigma_beta2", g, i)`` or ``("gamma", g, i)``.
    grid : increasing 1-D array
    rtol : float
        Maximum relative change of the normaliser when midpoints are added.

    Raises
    ------
    ResolutionError
        If the grid is too coarse for the trapezoid normaliser.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3 or np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be an increasing 1-D array of length >= 3")
    mids = 0.5 * (grid[1:] + grid[:-1])
    lp = _log_density(state, selector, grid)
    lpm = _log_density(state, selector, mids)
    top = max(np.max(lp), np.max(lpm))
    if not np.isfinite(top):
        raise ResolutionError("conditional density vanishes on the whole grid")
    f = np.exp(lp - top)
    fm = np.exp(lpm - top)
    coarse = _trapezoid(f, grid)
    fine_x = np.empty(2 * grid.size - 1)
    fine_y = np.empty_like(fine_x)
    fine_x[0::2], fine_x[1::2] = grid, mids
    fine_y[0::2], fine_y[1::2] = f, fm
    fine = _trapezoid(fine_y, fine_x)
    if abs(fine - coarse) > rtol * fine:
        raise ResolutionError(f"grid too coarse: normaliser changed by {abs(fine - coarse) / fine:.2e} on refinement")
    return f / coarse


def grid_cdf(grid, density) -> np.ndarray:
    """Cumulative trapezoid integral of a normalised grid density."""
    grid = np.asarray(grid, float)
    density = np.asarray(density, float)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(grid))])
    return cdf / cdf[-1]


def ks_statistic(draws, grid, density) -> float:
    """Kolmogorov-Smirnov distance between draws and a grid density (linear CDF interpolation)."""
    x = np.sort(np.asarray(draws, float))
    cdf = np.interp(x, grid, grid_cdf(grid, density), left=0.0, right=1.0)
    n = x.size
    hi = np.arange(1, n + 1) / n - cdf
    lo = cdf - np.arange(0, n) / n
    return float(max(hi.max(), lo.max()))
