"""Between-school layer: item-intercept hierarchy and the distance hierarchy.

School intercepts follow ``beta_mi ~ N(gamma_gi, sigma_beta2_gi)``; the
between-item distances of school m are log-normal,
``log d_mij ~ N(delta_mij, sigma_d2_m)``; and the school mean log-distances
are pooled through ``delta_mij ~ N(mu_gij, sigma_delta2_gij)``. ``g`` is the
group of school m (a single group unless a multiple-group fit is requested).
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .exceptions import DomainError, ValidationError

LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class HyperPriors:
    """Fixed hyperparameters (variances, not standard deviations)."""

    sigma_gamma2: float = 100.0
    sigma_theta2: float = 100.0
    sigma_mu2: float = 100.0
    a: float = 0.01
    b: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise DomainError(f"{f.name} must be positive")


@dataclass
class HierarchicalState:
    """Pooled parameters.

    Group-indexed arrays have a leading axis of length G (G = 1 for the
    single-group model); school-indexed arrays have a leading axis of
    length M.
    """

    gamma: np.ndarray          # (G, p)
    sigma_beta2: np.ndarray    # (G, p)
    delta: np.ndarray          # (M, p, p)
    sigma_d2: np.ndarray       # (M,)
    mu: np.ndarray             # (G, p, p)
    sigma_delta2: np.ndarray   # (G, p, p)
    group_of_school: np.ndarray
    group_labels: tuple[str, ...] = ("all",)

    def __post_init__(self):
        self.group_of_school = np.asarray(self.group_of_school, dtype=np.int64)
        for name in ("gamma", "sigma_beta2", "delta", "sigma_d2", "mu", "sigma_delta2"):
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))

    @property
    def n_groups(self) -> int:
        return self.gamma.shape[0]

    def schools_in(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.group_of_school == g)

    def copy(self) -> "HierarchicalState":
        return HierarchicalState(
            gamma=self.gamma.copy(), sigma_beta2=self.sigma_beta2.copy(), delta=self.delta.copy(),
            sigma_d2=self.sigma_d2.copy(), mu=self.mu.copy(), sigma_delta2=self.sigma_delta2.copy(),
            group_of_school=self.group_of_school.copy(), group_labels=tuple(self.group_labels),
        )


def _check_positive(x, name):
    if np.any(np.asarray(x) <= 0):
        raise DomainError(f"{name} must be positive")


def normal_logpdf(x, mean, var):
    x = np.asarray(x, float)
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var


def inv_gamma_logpdf(x, shape, scale):
    from scipy.special import gammaln

    x = np.asarray(x, float)
    return shape * np.log(scale) - gammaln(shape) - (shape + 1) * np.log(x) - scale / x


def logprior_beta(beta_m, gamma_g, sigma_beta2) -> float:
    """Sum over items of the Normal log-density of ``beta_m`` around ``gamma_g``."""
    _check_positive(sigma_beta2, "sigma_beta2")
    return float(np.sum(normal_logpdf(beta_m, np.asarray(gamma_g, float), np.asarray(sigma_beta2, float))))


def logprior_distances(d_w, delta_m, sigma_dm2: float) -> float:
    """Log-normal log-density of the between-item distances (pairs i < j).

    A zero off-diagonal distance lies outside the support and gives ``-inf``.
    """
    _check_positive(sigma_dm2, "sigma_dm2")
    d_w = np.asarray(d_w, float)
    iu = np.triu_indices(d_w.shape[0], 1)
    d = d_w[iu]
    if np.any(d <= 0):
        return -np.inf
    logd = np.log(d)
    return float(np.sum(-logd + normal_logpdf(logd, np.asarray(delta_m, float)[iu], sigma_dm2)))


def logprior_log_distances(d_w, delta_m, sigma_dm2: float) -> float:
    """Gaussian log-density of ``log d`` around ``delta_m`` (pairs i < j).

    This is the distance prior as it enters the item-position target. It
    differs from ``logprior_distances`` by the Jacobian ``-sum log d``:
    ``d`` is a function of ``W`` rather than a free variable, and the extra
    ``1/d`` factors (p(p-1)/2 of them against 2p-3 free coordinates) pull
    every configuration towards a point, which the chain then follows.
    """
    _check_positive(sigma_dm2, "sigma_dm2")
    d_w = np.asarray(d_w, float)
    iu = np.triu_indices(d_w.shape[0], 1)
    d = d_w[iu]
    if np.any(d <= 0):
        return -np.inf
    return float(np.sum(normal_logpdf(np.log(d), np.asarray(delta_m, float)[iu], sigma_dm2)))


def logprior_delta(delta_m, mu_g, sigma_delta2) -> float:
    """Gaussian log-density of the school mean log-distances around ``mu_g`` (pairs i < j)."""
    delta_m = np.asarray(delta_m, float)
    iu = np.triu_indices(delta_m.shape[0], 1)
    var = np.broadcast_to(np.asarray(sigma_delta2, float), delta_m.shape)[iu]
    _check_positive(var, "sigma_delta2")
    return float(np.sum(normal_logpdf(delta_m[iu], np.asarray(mu_g, float)[iu], var)))


def assign_groups(dataset_or_labels, mode: str = "single") -> tuple[np.ndarray, tuple[str, ...]]:
    """Map schools to group indices.

    Parameters
    ----------
    dataset_or_labels
        A ``ResponseDataset`` or a sequence with one (possibly ``None``) group
        label per school, in school order.
    mode : {"single", "by_label"}
        ``single`` puts every school in group 0; ``by_label`` enumerates the
        distinct labels in order of first appearance.

    Returns
    -------
    group_of_school : ndarray of int
    labels : tuple of str
    """
    if hasattr(dataset_or_labels, "schools"):
        ds = dataset_or_labels
        labels: Sequence[str | None] = [ds.school_group(s) for s in ds.schools]
    else:
        labels = list(dataset_or_labels)
    if mode == "single":
        return np.zeros(len(labels), dtype=np.int64), ("all",)
    if mode != "by_label":
        raise ValidationError(f"unknown group mode {mode!r}")
    missing = [m for m, lab in enumerate(labels) if lab is None or lab == ""]
    if missing:
        raise ValidationError(f"schools {missing} have no group label")
    order: list[str] = []
    for lab in labels:
        if lab not in order:
            order.append(lab)
    return np.array([order.index(lab) for lab in labels], dtype=np.int64), tuple(order)
