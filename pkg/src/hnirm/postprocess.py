"""From posterior draws to configurations, clusters, embeddings and tables."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression
from scipy.sparse.csgraph import connected_components
from scipy.stats import rankdata
from sklearn.cluster import KMeans

from .exceptions import DimensionError, UnsupportedCombinationError, ValidationError
from .sampler.diagnostics import hpd_columns

logger = logging.getLogger(__name__)


# -- Procrustes ---------------------------------------------------------------

def procrustes_align(position_draws, reference=None, tol: float = 1e-10):
    """Rigidly align each draw to a reference configuration.

    Rotation and reflection are allowed. When the cross-covariance of a
    draw with the reference is rank deficient the rotation is not
    determined; that draw is only translated (with a warning).

    Parameters
    ----------
    position_draws : array (S, r, d)
    reference : array (r, d), optional
        Defaults to the first draw.

    Returns
    -------
    aligned : array (S, r, d)
    mean : array (r, d)
        Posterior mean of the aligned configurations.
    """
    X = np.asarray(position_draws, dtype=float)
    if X.ndim == 2:
        X = X[None]
    ref = X[0] if reference is None else np.asarray(reference, dtype=float)
    if X.shape[1:] != ref.shape:
        raise DimensionError(f"draw shape {X.shape[1:]} does not match reference {ref.shape}")
    ref_c = ref.mean(axis=0)
    R0 = ref - ref_c
    d = ref.shape[1]
    aligned = np.empty_like(X)
    deficient = 0
    for s, draw in enumerate(X):
        Xc = draw - draw.mean(axis=0)
        U, sv, Vt = np.linalg.svd(Xc.T @ R0)
        if sv.size < d or sv[-1] <= tol * max(sv[0], 1.0):
            deficient += 1
            aligned[s] = Xc + ref_c
        else:
            aligned[s] = Xc @ (U @ Vt) + ref_c
    if deficient:
        warnings.warn(f"{deficient} draw(s) had rank-deficient cross-covariance; translated only",
                      RuntimeWarning, stacklevel=2)
    return aligned, aligned.mean(axis=0)


# -- spectral clustering ------------------------------------------------------

def _first_appearance(labels) -> np.ndarray:
    mapping: dict = {}
    return np.array([mapping.setdefault(l, len(mapping)) for l in labels], dtype=np.int64)


def _check_dissimilarity(D, name="dissimilarity"):
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise DimensionError(f"{name} must be a square matrix")
    if not np.all(np.isfinite(D)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.any(D < 0):
        raise ValidationError(f"{name} must be nonnegative")
    if not np.allclose(D, D.T, rtol=0, atol=1e-12 * max(1.0, np.abs(D).max())):
        raise ValidationError(f"{name} must be symmetric")
    return 0.5 * (D + D.T)


def spectral_cluster(distance_matrix, k: int, seed: int = 0, bandwidth: float | None = None,
                     return_bandwidth: bool = False):
    """Ng-Jordan-Weiss spectral clustering of a distance matrix.

    Affinities are ``exp(-D^2 / (2 h^2))`` with ``h`` the median
    off-diagonal distance unless given. If the affinity graph is
    disconnected (exp underflow) the bandwidth doubles, at most three
    times. The top-k eigenvectors of ``D^-1/2 A D^-1/2`` are row
    normalised and clustered with k-means (20 seeded restarts); labels are
    numbered in order of first appearance.
    """
    D = _check_dissimilarity(distance_matrix, "distance_matrix")
    r = D.shape[0]
    if not 2 <= k < r:
        raise ValidationError(f"need 2 <= k < {r}, got k={k}")
    off = D[~np.eye(r, dtype=bool)]
    h = float(np.median(off)) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValidationError("degenerate geometry: zero bandwidth (all points coincide)")
    for attempt in range(4):
        A = np.exp(-(D**2) / (2 * h * h))
        np.fill_diagonal(A, 0.0)
        n_comp, _ = connected_components(A > 0, directed=False)
        if n_comp == 1:
            break
        if attempt == 3:
            raise ValidationError("similarity graph stays disconnected after widening the bandwidth 3 times")
        logger.info("affinity graph disconnected at bandwidth %.4g; doubling", h)
        h *= 2
    deg = A.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    L = inv_sqrt[:, None] * A * inv_sqrt[None, :]
    _, vecs = np.linalg.eigh(L)
    V = vecs[:, -k:][:, ::-1]
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    V = V / np.where(norms > 0, norms, 1.0)
    km = KMeans(n_clusters=k, n_init=20, random_state=seed).fit(V)
    labels = _first_appearance(km.labels_)
    return (labels, h) if return_bandwidth else labels


# -- Kruskal nonmetric MDS ----------------------------------------------------

@dataclass
class Embedding:
    positions: np.ndarray
    stress: float
    labels: np.ndarray | None = None
    history: list = field(default_factory=list)
    degenerate: bool = False
    n_iter: int = 0


def _upper(D):
    iu = np.triu_indices(D.shape[0], 1)
    return D[iu]


def _classical_mds(D, d):
    r = D.shape[0]
    J = np.eye(r) - 1.0 / r
    B = -0.5 * J @ (D**2) @ J
    vals, vecs = np.linalg.eigh(B)
    order = np.argsort(vals)[::-1][:d]
    vals = np.clip(vals[order], 0, None)
    X = vecs[:, order] * np.sqrt(vals)
    # fixed sign convention for reproducibility
    for a in range(d):
        idx = np.argmax(np.abs(X[:, a]))
        if X[idx, a] < 0:
            X[:, a] = -X[:, a]
    return X


def _dist(X):
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt((diff**2).sum(-1))


class _Disparity:
    """Monotone regression of distances on dissimilarity order (ties share a value)."""

    def __init__(self, dissim_upper):
        self.order = np.argsort(dissim_upper, kind="stable")
        sorted_vals = dissim_upper[self.order]
        _, self.block, self.counts = np.unique(sorted_vals, return_inverse=True, return_counts=True)

    def __call__(self, dist_upper):
        d_sorted = dist_upper[self.order]
        block_mean = np.bincount(self.block, weights=d_sorted) / self.counts
        fitted = isotonic_regression(block_mean, weights=self.counts.astype(float)).x
        out = np.empty_like(dist_upper)
        out[self.order] = fitted[self.block]
        return out


def _stress1(dist_upper, disp_upper):
    den = np.sum(dist_upper**2)
    if den == 0:
        return 0.0
    return float(np.sqrt(np.sum((dist_upper - disp_upper) ** 2) / den))


def kruskal_mds(dissimilarity, d: int = 2, max_iter: int = 500, tol: float = 1e-9) -> Embedding:
    """Nonmetric MDS minimising Kruskal's stress-1.

    SMACOF (Guttman transform) alternated with isotonic regression of the
    distances on the dissimilarity order; tied dissimilarities receive a
    common disparity. The start is classical MDS of the dissimilarity
    ranks, so the whole fit depends on the dissimilarities only through
    their order. A step that would raise stress is halved towards the
    current configuration, which keeps ``history`` non-increasing.
    """
    D = _check_dissimilarity(dissimilarity)
    np.fill_diagonal(D, 0.0)
    r = D.shape[0]
    if r < d + 1:
        raise DimensionError(f"need at least d+1={d + 1} objects for a {d}-D embedding, got {r}")
    du = _upper(D)
    if np.all(du == 0):
        logger.warning("all dissimilarities are zero; embedding is degenerate")
        return Embedding(positions=np.zeros((r, d)), stress=0.0, degenerate=True)
    ranks = np.zeros_like(D)
    iu = np.triu_indices(r, 1)
    ranks[iu] = rankdata(du, method="average")
    ranks = ranks + ranks.T
    X = _classical_mds(ranks, d)
    disparity = _Disparity(du)
    n_pairs = du.size

    def evaluate(Y):
        dist = _upper(_dist(Y))
        dh = disparity(dist)
        return _stress1(dist, dh), dist, dh

    stress, dist, dhat = evaluate(X)
    history = [stress]
    it = 0
    for it in range(1, max_iter + 1):
        if stress <= 1e-15:
            break
        # normalised disparities as Guttman targets
        scale = np.sqrt(n_pairs / np.sum(dhat**2)) if np.any(dhat > 0) else 1.0
        T = np.zeros((r, r))
        T[iu] = dhat * scale
        T = T + T.T
        Dfull = _dist(X)
        ratio = np.divide(T, Dfull, out=np.zeros_like(T), where=Dfull > 0)
        B = -ratio
        np.fill_diagonal(B, 0.0)
        np.fill_diagonal(B, -B.sum(axis=1))
        X_new = B @ X / r
        new_stress, new_dist, new_dhat = evaluate(X_new)
        halvings = 0
        while new_stress > stress and halvings < 30:
            X_new = 0.5 * (X + X_new)
            new_stress, new_dist, new_dhat = evaluate(X_new)
            halvings += 1
        if new_stress > stress:
            break
        improvement = stress - new_stress
        X, stress, dist, dhat = X_new, new_stress, new_dist, new_dhat
        history.append(stress)
        if improvement <= tol * max(stress, 1e-12):
            break
    X = X - X.mean(axis=0)
    return Embedding(positions=X, stress=float(stress), history=history, n_iter=it)


# -- school spaces ------------------------------------------------------------

@dataclass
class SchoolDistanceMatrix:
    S: np.ndarray
    construction: str
    convention: str = ""


@dataclass
class SchoolSpace:
    distances: SchoolDistanceMatrix
    embedding: Embedding | None
    item_embedding: Embedding | None = None
    respondent_positions: list | None = None


def _embed_schools(S, d):
    M = S.shape[0]
    dim = min(d, M - 1)
    if dim < 1:
        logger.warning("a single school cannot be embedded")
        return None
    if dim < d:
        logger.warning("only %d schools; embedding in %d dimension(s)", M, dim)
    emb = kruskal_mds(S, dim)
    return emb


def school_space_from_delta(delta_means, d: int = 2) -> SchoolSpace:
    """School distances ``S_qr = ||delta_q - delta_r||_F`` and their MDS embedding.

    The Frobenius norm runs over the full symmetric matrix, so each pair
    contributes twice.
    """
    delta = np.asarray(delta_means, dtype=float)
    if delta.ndim != 3 or delta.shape[1] != delta.shape[2]:
        raise DimensionError("delta_means must have shape (M, p, p)")
    flat = delta.reshape(delta.shape[0], -1)
    diff = flat[:, None, :] - flat[None, :, :]
    S = np.sqrt((diff**2).sum(-1))
    S = 0.5 * (S + S.T)
    np.fill_diagonal(S, 0.0)
    dm = SchoolDistanceMatrix(S=S, construction="delta_based",
                              convention="frobenius over the full symmetric matrix (ordered pairs)")
    return SchoolSpace(distances=dm, embedding=_embed_schools(S, d))


def pooled_mu(mu, weights=None) -> np.ndarray:
    """Collapse group-specific ``mu`` (G, p, p) to one matrix, weighting by ``weights``."""
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 2:
        return mu
    w = np.ones(mu.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    return np.tensordot(w / w.sum(), mu, axes=1)


def item_dissimilarity_from_mu(mu) -> np.ndarray:
    """Distance-scale dissimilarities ``exp(mu_ij)`` with a zero diagonal."""
    mu = np.asarray(mu, dtype=float)
    D = np.exp(0.5 * (mu + mu.T))
    np.fill_diagonal(D, 0.0)
    return D


def school_space_from_mu(mu, X_per_school, d: int = 2, aggregate: str = "mean",
                         linking: str = "respondent", weights=None) -> SchoolSpace:
    """Schools placed by their respondents' linked positions.

    1. Kruskal MDS of ``exp(mu)`` gives global item positions.
    2. Each respondent sits at the average position of the items they
       endorsed (the origin when none).
    3. A school sits at the mean (or median) of its respondents.

    ``mu`` may be (G, p, p); groups are then averaged with ``weights``.
    """
    if linking != "respondent":
        raise UnsupportedCombinationError("the mu-based school space needs respondent-centred linking")
    if aggregate not in ("mean", "median"):
        raise ValidationError(f"aggregate must be 'mean' or 'median', got {aggregate!r}")
    mu = pooled_mu(mu, weights)
    item_emb = kruskal_mds(item_dissimilarity_from_mu(mu), d)
    W = item_emb.positions
    resp, centres = [], []
    for X in X_per_school:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != W.shape[0]:
            raise DimensionError("response matrix columns must match the items of mu")
        tot = X.sum(axis=1)
        inv = np.divide(1.0, tot, out=np.zeros_like(tot), where=tot > 0)
        Z = (X * inv[:, None]) @ W
        resp.append(Z)
        centres.append(Z.mean(axis=0) if aggregate == "mean" else np.median(Z, axis=0))
    P = np.array(centres)
    S = _dist(P)
    np.fill_diagonal(S, 0.0)
    dm = SchoolDistanceMatrix(S=S, construction="mu_based", convention=f"euclidean between school {aggregate}s")
    emb = Embedding(positions=P, stress=0.0)
    return SchoolSpace(distances=dm, embedding=emb, item_embedding=item_emb, respondent_positions=resp)


# -- integration --------------------------------------------------------------

@dataclass
class IntegratedSpace:
    """Standardised item and school coordinates for an overlay plot.

    ``rows`` are dicts with ``role``, ``label`` and ``x1..xd``; ``center``
    and ``scale`` (per role) undo the standardisation; ``flat_axes`` lists
    axes that had zero variance and were only centred.
    """

    rows: list
    center: dict
    scale: dict
    flat_axes: dict

    def coordinates(self, role: str) -> np.ndarray:
        return np.array([[v for k, v in r.items() if k.startswith("x")] for r in self.rows if r["role"] == role])

    def destandardize(self, role: str) -> np.ndarray:
        return self.coordinates(role) * self.scale[role] + self.center[role]


def _standardize(P):
    P = np.asarray(P, dtype=float)
    c = P.mean(axis=0)
    s = P.std(axis=0)
    flat = [int(a) for a in np.flatnonzero(~(s > 0))]
    s_safe = np.where(s > 0, s, 1.0)
    return (P - c) / s_safe, c, s_safe, flat


def integrate_item_school_space(item_emb, school_emb, item_labels=None, school_labels=None) -> IntegratedSpace:
    """Standardise both embeddings per axis (ddof 0) and stack them with role tags."""
    items = item_emb.positions if isinstance(item_emb, Embedding) else np.asarray(item_emb, float)
    schools = school_emb.positions if isinstance(school_emb, Embedding) else np.asarray(school_emb, float)
    if items.shape[1] != schools.shape[1]:
        raise DimensionError("item and school embeddings must share the dimension")
    rows, center, scale, flat = [], {}, {}, {}
    for role, P, labels in (("item", items, item_labels), ("school", schools, school_labels)):
        Ps, c, s, f = _standardize(P)
        if f:
            logger.warning("%s embedding: zero-variance axis %s centred only", role, f)
        center[role], scale[role], flat[role] = c, s, f
        for r, row in enumerate(Ps):
            rec = {"role": role, "label": str(labels[r]) if labels is not None else str(r)}
            rec.update({f"x{a + 1}": float(v) for a, v in enumerate(row)})
            rows.append(rec)
    return IntegratedSpace(rows=rows, center=center, scale=scale, flat_axes=flat)


# -- posterior summaries ------------------------------------------------------

_SUMMARY_FAMILIES = ("beta", "theta", "gamma", "sigma_beta2", "mu", "sigma_delta2",
                     "delta", "sigma_d2", "sigma_z2")
_GROUP_FAMILIES = ("gamma", "mu")
_PAIR_FAMILIES = ("mu", "sigma_delta2", "delta", "item_dist")


def _summary_rows(family, draws, level, label_unit):
    rows = []
    lo, hi = hpd_columns(draws, level)
    mean = draws.mean(axis=0)
    if draws.ndim == 2:
        for u in range(draws.shape[1]):
            rows.append(dict(family=family, unit=label_unit(u), i="", j="",
                             mean=float(mean[u]), hpd_low=float(lo[u]), hpd_high=float(hi[u])))
        return rows
    if family.removesuffix("_diff") in _PAIR_FAMILIES:
        p = draws.shape[2]
        for u in range(draws.shape[1]):
            for i in range(p):
                for j in range(i + 1, p):
                    rows.append(dict(family=family, unit=label_unit(u), i=i, j=j, mean=float(mean[u, i, j]),
                                     hpd_low=float(lo[u, i, j]), hpd_high=float(hi[u, i, j])))
        return rows
    for u in range(draws.shape[1]):
        for i in range(draws.shape[2]):
            rows.append(dict(family=family, unit=label_unit(u), i=i, j="", mean=float(mean[u, i]),
                             hpd_low=float(lo[u, i]), hpd_high=float(hi[u, i])))
    return rows


def summarize(samples, families=None, level: float = 0.95) -> list[dict]:
    """Posterior mean and HPD interval for every scalar of the requested families.

    With two or more groups, rows ``<family>_diff`` give the draws of
    ``group h - group g`` for ``gamma`` and ``mu`` with an
    ``excludes_zero`` flag.

    Raises
    ------
    KeyError
        If a requested family was not stored.
    """
    requested = list(families) if families is not None else [f for f in _SUMMARY_FAMILIES if f in samples.draws]
    rows = []
    schools = list(samples.school_ids)
    groups = list(samples.group_labels)
    for fam in requested:
        arr = samples.family(fam)
        if fam == "theta":
            for m, a in enumerate(arr):
                sub = _summary_rows(fam, a[:, None, :], level, lambda u, m=m: schools[m])
                rows.extend(sub)
            continue
        by_group = fam in ("gamma", "sigma_beta2", "mu", "sigma_delta2")
        label = (lambda u: groups[u]) if by_group else (lambda u: schools[u])
        rows.extend(_summary_rows(fam, arr, level, label))
    for row in rows:
        row["excludes_zero"] = ""
    if len(groups) > 1:
        for fam in _GROUP_FAMILIES:
            if families is not None and fam not in requested:
                continue
            arr = samples.family(fam)
            for g in range(len(groups)):
                for h in range(g + 1, len(groups)):
                    diff = arr[:, h] - arr[:, g]
                    sub = _summary_rows(fam + "_diff", diff[:, None], level,
                                        lambda u, g=g, h=h: f"{groups[h]}-{groups[g]}")
                    for r in sub:
                        r["excludes_zero"] = bool(r["hpd_low"] > 0 or r["hpd_high"] < 0)
                    rows.extend(sub)
    return rows
