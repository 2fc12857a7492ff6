"""Within-school latent space model.

Respondent positions ``Z`` explain the item layers through
``logit P(y_ikl = 1) = beta_i - |z_k - z_l|`` and item positions ``W``
explain the person layers through ``logit P(u_kij = 1) = theta_k - |w_i - w_j|``.
Both likelihoods range over unordered pairs only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)


@dataclass
class WithinSchoolState:
    """Latent parameters of one school.

    ``d_w`` is kept equal to ``pairwise_distances(W)``; the sampler refreshes
    it whenever an item moves. ``sigma_eps2`` is the item-centred linking
    variance, housed for the alternative link but never sampled.
    """

    Z: np.ndarray
    W: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    sigma_z2: float = 1.0
    d_w: np.ndarray | None = None
    d_z: np.ndarray | None = None
    sigma_eps2: float | None = None

    def __post_init__(self):
        self.Z = np.ascontiguousarray(self.Z, dtype=np.float64)
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.beta = np.ascontiguousarray(self.beta, dtype=np.float64)
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.Z.shape[1] != self.W.shape[1]:
            raise ValueError("Z and W must share the latent dimension")
        if self.beta.shape != (self.W.shape[0],) or self.theta.shape != (self.Z.shape[0],):
            raise ValueError("intercept lengths must match the position rows")
        if not self.sigma_z2 > 0:
            raise ValueError("sigma_z2 must be positive")
        self.refresh_distances()

    def refresh_distances(self) -> None:
        self.d_w = pairwise_distances(self.W)
        self.d_z = pairwise_distances(self.Z)

    def copy(self) -> "WithinSchoolState":
        return WithinSchoolState(
            Z=self.Z.copy(), W=self.W.copy(), beta=self.beta.copy(), theta=self.theta.copy(),
            sigma_z2=float(self.sigma_z2), sigma_eps2=self.sigma_eps2,
        )

    @property
    def dim(self) -> int:
        return self.W.shape[1]


def log_sigmoid(x):
    """``log(1 / (1 + exp(-x)))`` without overflow."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def softplus(x):
    return np.logaddexp(0.0, np.asarray(x, dtype=float))


def bernoulli_logit_logpmf(y, logit):
    """Bernoulli log-mass parameterised by the log-odds, stable for |logit| up to ~700."""
    y = np.asarray(y, dtype=float)
    return y * np.asarray(logit, dtype=float) - softplus(logit)


def edge_logit_person(beta_i: float, z_k, z_l) -> float:
    return float(beta_i - np.linalg.norm(np.asarray(z_k, float) - np.asarray(z_l, float)))


def edge_logit_item(theta_k: float, w_i, w_j) -> float:
    return float(theta_k - np.linalg.norm(np.asarray(w_i, float) - np.asarray(w_j, float)))


def pairwise_distances(P) -> np.ndarray:
    """Euclidean distance matrix between the rows of ``P`` (zero diagonal)."""
    P = np.asarray(P, dtype=np.float64)
    D = cdist(P, P)
    np.fill_diagonal(D, 0.0)
    return D


def loglik_person_network(Y, Z, beta) -> float:
    """Log-likelihood of the item layers given respondent positions.

    Parameters
    ----------
    Y : array (p, n, n)
        Binary symmetric layers; only the strict upper triangle is read.
    Z : array (n, d)
    beta : array (p,)
    """
    Y = np.asarray(Y)
    D = pairwise_distances(Z)
    iu = np.triu_indices(D.shape[0], 1)
    logits = np.asarray(beta, float)[:, None] - D[iu][None, :]
    return float(bernoulli_logit_logpmf(Y[:, iu[0], iu[1]], logits).sum())


def loglik_item_network(U, W, theta) -> float:
    """Log-likelihood of the person layers ``U`` (n, p, p) given item positions."""
    U = np.asarray(U)
    D = pairwise_distances(W)
    iu = np.triu_indices(D.shape[0], 1)
    logits = np.asarray(theta, float)[:, None] - D[iu][None, :]
    return float(bernoulli_logit_logpmf(U[:, iu[0], iu[1]], logits).sum())


def _weighted_mean_rows(P, weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if total == 0:
        logger.warning("no positive responses; linking mean set to the origin")
        return np.zeros(np.asarray(P).shape[1])
    return weights @ np.asarray(P, float) / total


def link_respondent_centered(W, x_row_k) -> np.ndarray:
    """Prior mean of ``z_k``: average position of the items respondent k endorsed."""
    return _weighted_mean_rows(W, x_row_k)


def link_item_centered(Z, x_col_i) -> np.ndarray:
    """Average position of the respondents who endorsed item i."""
    return _weighted_mean_rows(Z, x_col_i)


def respondent_link_means(W, X) -> np.ndarray:
    """Row-wise ``link_respondent_centered`` for a whole school (zero rows -> origin)."""
    X = np.asarray(X, dtype=float)
    totals = X.sum(axis=1)
    inv = np.divide(1.0, totals, out=np.zeros_like(totals), where=totals > 0)
    return (X * inv[:, None]) @ np.asarray(W, float)


def logprior_links(Z, W, X, sigma_z2: float) -> float:
    """Gaussian log-density of ``Z`` around the respondent-centred link means."""
    resid = np.asarray(Z, float) - respondent_link_means(W, X)
    n, d = resid.shape
    return float(-0.5 * n * d * np.log(2 * np.pi * sigma_z2) - 0.5 * np.sum(resid**2) / sigma_z2)


@dataclass(frozen=True)
class SchoolData:
    """Sufficient statistics of one school's binary matrix used by the sampler.

    ``C = X'X`` counts co-endorsements between items and ``A = XX'`` between
    respondents; every layer likelihood reduces to these counts plus the
    distance terms.
    """

    X: np.ndarray
    school_id: str = ""
    group: int = 0
    C: np.ndarray = field(init=False, repr=False)
    A: np.ndarray = field(init=False, repr=False)
    rowsum: np.ndarray = field(init=False, repr=False)
    colsum: np.ndarray = field(init=False, repr=False)
    inv_rowsum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "C", X.T @ X)
        object.__setattr__(self, "A", X @ X.T)
        rs = X.sum(axis=1)
        object.__setattr__(self, "rowsum", rs)
        object.__setattr__(self, "colsum", X.sum(axis=0))
        object.__setattr__(self, "inv_rowsum", np.divide(1.0, rs, out=np.zeros_like(rs), where=rs > 0))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]
