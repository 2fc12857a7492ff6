"""Compiled Metropolis sweeps over one school.

Every Bernoulli log-likelihood term has the form ``y * x - log(1 + e^x)``
with ``x = a - dist``. The softplus part is summed as
``sum_k log(1 + e^{a_k} e^{-dist})`` = log of a running product, which costs
one multiply-add per term instead of an exp and a log1p. Products are
flushed into the log accumulator before they can overflow.

All random numbers are drawn by the caller and passed in, so the kernels
are deterministic functions of their inputs and release the GIL.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

EXP_CAP = 700.0
_FLUSH = 1e150
_BIG = 1e100


@njit(cache=True, nogil=True)
def sum_log1p_scaled(t, q):
    """Return ``sum_k log(1 + t[k] * q)`` for nonnegative ``t`` and ``q``."""
    acc = 0.0
    p0 = 1.0
    p1 = 1.0
    n = t.shape[0]
    k = 0
    while k + 1 < n:
        f0 = 1.0 + t[k] * q
        f1 = 1.0 + t[k + 1] * q
        if f0 > _BIG or f1 > _BIG:
            acc += math.log(f0) + math.log(f1)
        else:
            p0 *= f0
            p1 *= f1
            if p0 > _FLUSH or p1 > _FLUSH:
                acc += math.log(p0) + math.log(p1)
                p0 = 1.0
                p1 = 1.0
        k += 2
    if k < n:
        acc += math.log(1.0 + t[k] * q)
    return acc + math.log(p0) + math.log(p1)


@njit(cache=True, nogil=True)
def capped_exp(x):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = math.exp(min(x[i], EXP_CAP))
    return out


@njit(cache=True, nogil=True)
def _item_terms(i, dist, C, t, delta, sigma_d2):
    # person-layer likelihood and the Gaussian term on log d for pairs (i, j)
    s = 0.0
    for j in range(dist.shape[0]):
        if j == i:
            continue
        dj = dist[j]
        if dj <= 0.0:
            return -math.inf
        s -= C[i, j] * dj + sum_log1p_scaled(t, math.exp(-dj))
        r = math.log(dj) - delta[i, j]
        s -= 0.5 * r * r / sigma_d2
    return s


@njit(cache=True, nogil=True)
def w_sweep(W, d_w, X, C, theta, Z, inv_rowsum, delta, sigma_d2, sigma_z2, order, noise, logu):
    """One random-order pass of item-position updates; returns the accept count.

    Targets the person-layer likelihood, the distance prior on the log scale
    (see ``hierarchy.logprior_log_distances``) and the respondent-centred
    linking prior. Updates ``W`` and ``d_w`` in place.
    """
    p, dim = W.shape
    n = Z.shape[0]
    t = capped_exp(theta)
    # residuals z_k - link mean_k, kept current as items move
    R = Z.copy()
    for k in range(n):
        c = inv_rowsum[k]
        if c > 0.0:
            for i in range(p):
                if X[k, i] != 0.0:
                    for a in range(dim):
                        R[k, a] -= W[i, a] * c
    dist_new = np.empty(p)
    w_new = np.empty(dim)
    accepted = 0
    for s in range(order.shape[0]):
        i = order[s]
        for a in range(dim):
            w_new[a] = W[i, a] + noise[s, a]
        for j in range(p):
            if j == i:
                dist_new[j] = 0.0
            else:
                acc = 0.0
                for a in range(dim):
                    diff = w_new[a] - W[j, a]
                    acc += diff * diff
                dist_new[j] = math.sqrt(acc)
        new = _item_terms(i, dist_new, C, t, delta, sigma_d2)
        if new == -math.inf:
            continue
        old = _item_terms(i, d_w[i], C, t, delta, sigma_d2)
        dl = 0.0
        for k in range(n):
            if X[k, i] != 0.0:
                c = inv_rowsum[k]
                for a in range(dim):
                    r0 = R[k, a]
                    r1 = r0 - noise[s, a] * c
                    dl += r0 * r0 - r1 * r1
        if logu[s] <= new - old + 0.5 * dl / sigma_z2:
            accepted += 1
            for a in range(dim):
                W[i, a] = w_new[a]
            for j in range(p):
                d_w[i, j] = dist_new[j]
                d_w[j, i] = dist_new[j]
            for k in range(n):
                if X[k, i] != 0.0:
                    c = inv_rowsum[k]
                    for a in range(dim):
                        R[k, a] -= noise[s, a] * c
    return accepted


@njit(cache=True, nogil=True)
def _respondent_terms(k, dist, A, b):
    s = 0.0
    for l in range(dist.shape[0]):
        if l == k:
            continue
        dl = dist[l]
        s -= A[k, l] * dl + sum_log1p_scaled(b, math.exp(-dl))
    return s


@njit(cache=True, nogil=True)
def z_sweep(Z, d_z, A, beta, link, sigma_z2, order, noise, logu):
    """One random-order pass of respondent-position updates.

    Targets the item-layer likelihood and the Gaussian linking prior centred
    at ``link`` (the respondent-centred means, fixed during the pass).
    """
    n, dim = Z.shape
    b = capped_exp(beta)
    dist_new = np.empty(n)
    z_new = np.empty(dim)
    accepted = 0
    for s in range(order.shape[0]):
        k = order[s]
        for a in range(dim):
            z_new[a] = Z[k, a] + noise[s, a]
        for l in range(n):
            if l == k:
                dist_new[l] = 0.0
            else:
                acc = 0.0
                for a in range(dim):
                    diff = z_new[a] - Z[l, a]
                    acc += diff * diff
                dist_new[l] = math.sqrt(acc)
        new = _respondent_terms(k, dist_new, A, b)
        old = _respondent_terms(k, d_z[k], A, b)
        dl = 0.0
        for a in range(dim):
            r0 = Z[k, a] - link[k, a]
            r1 = z_new[a] - link[k, a]
            dl += r0 * r0 - r1 * r1
        if logu[s] <= new - old + 0.5 * dl / sigma_z2:
            accepted += 1
            for a in range(dim):
                Z[k, a] = z_new[a]
            for l in range(n):
                d_z[k, l] = dist_new[l]
                d_z[l, k] = dist_new[l]
    return accepted


@njit(cache=True, nogil=True)
def intercept_sweep(values, q_pairs, n_pos_pairs, prior_mean, prior_var, noise, logu):
    """Random-walk updates of independent intercepts.

    For unit u with value v the target is
    ``v * n_pos_pairs[u] - sum_pairs log(1 + e^v q) + N(v; prior_mean[u], prior_var[u])``
    where ``q = exp(-distance)`` over the unordered pairs of the other mode.
    """
    accepted = 0
    for u in range(values.shape[0]):
        v0 = values[u]
        v1 = v0 + noise[u]
        m = prior_mean[u]
        var = prior_var[u]
        l0 = v0 * n_pos_pairs[u] - sum_log1p_scaled(q_pairs, math.exp(min(v0, EXP_CAP))) - 0.5 * (v0 - m) ** 2 / var
        l1 = v1 * n_pos_pairs[u] - sum_log1p_scaled(q_pairs, math.exp(min(v1, EXP_CAP))) - 0.5 * (v1 - m) ** 2 / var
        if logu[u] <= l1 - l0:
            values[u] = v1
            accepted += 1
    return accepted
