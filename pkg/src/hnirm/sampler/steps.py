"""One-iteration building blocks, in the order a sweep applies them.

1. item positions ``W`` (Metropolis, per school)
2. respondent intercepts ``theta`` (Metropolis, per school)
3. ``sigma_d2`` per school and ``sigma_delta2`` per item pair (inverse gamma)
4. ``delta`` per school and ``mu`` per group (normal)
5. respondent positions ``Z`` (Metropolis, per school)
6. ``sigma_z2`` per school (inverse gamma)
7. item intercepts ``beta`` (Metropolis, per school)
8. ``sigma_beta2`` and ``gamma`` per group (inverse gamma, normal)

The closed-form draws in 3 and 8 keep the M/(M+1)-weighted
shrinkage terms in the scale. Pair sums run over the p(p-1)/2 distinct
pairs, the same count that enters the shape; the distance hierarchy works on
``log d`` because the distances are log-normal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..hierarchy import HierarchicalState, HyperPriors
from ..within_school import SchoolData, WithinSchoolState, respondent_link_means
from . import kernels


@dataclass
class ChainState:
    """Everything one iteration reads or writes."""

    data: list[SchoolData]
    schools: list[WithinSchoolState]
    hier: HierarchicalState
    hyper: HyperPriors

    @property
    def M(self) -> int:
        return len(self.schools)

    @property
    def p(self) -> int:
        return self.data[0].p

    def copy(self) -> "ChainState":
        return ChainState(list(self.data), [s.copy() for s in self.schools], self.hier.copy(), self.hyper)


def _draws(rng, count, dim, jump):
    order = rng.permutation(count)
    noise = rng.standard_normal((count, dim)) * jump
    logu = np.log1p(-rng.random(count))
    return order, noise, logu


def step_update_W(school: WithinSchoolState, data: SchoolData, delta_m, sigma_d2_m: float,
                  jump: float, rng: np.random.Generator) -> int:
    """Metropolis pass over the items of one school in random order."""
    order, noise, logu = _draws(rng, data.p, school.dim, jump)
    return int(kernels.w_sweep(
        school.W, school.d_w, data.X, data.C, school.theta, school.Z, data.inv_rowsum,
        np.ascontiguousarray(delta_m, dtype=np.float64), float(sigma_d2_m), float(school.sigma_z2),
        order, noise, logu,
    ))


def _upper(D):
    iu = np.triu_indices(D.shape[0], 1)
    return np.ascontiguousarray(D[iu])


def step_update_theta(school: WithinSchoolState, data: SchoolData, sigma_theta2: float,
                      jump: float, rng: np.random.Generator) -> int:
    """Metropolis update of every respondent intercept given the item distances."""
    noise = rng.standard_normal(data.n) * jump
    logu = np.log1p(-rng.random(data.n))
    q = np.exp(-_upper(school.d_w))
    pos_pairs = data.rowsum * (data.rowsum - 1) / 2
    return int(kernels.intercept_sweep(
        school.theta, q, pos_pairs, np.zeros(data.n), np.full(data.n, float(sigma_theta2)), noise, logu,
    ))


def step_update_Z(school: WithinSchoolState, data: SchoolData, jump: float, rng: np.random.Generator) -> int:
    """Metropolis pass over the respondents of one school in random order."""
    order, noise, logu = _draws(rng, data.n, school.dim, jump)
    link = np.ascontiguousarray(respondent_link_means(school.W, data.X))
    return int(kernels.z_sweep(
        school.Z, school.d_z, data.A, school.beta, link, float(school.sigma_z2), order, noise, logu,
    ))


def step_update_beta(school: WithinSchoolState, data: SchoolData, gamma_g, sigma_beta2_g,
                     jump: float, rng: np.random.Generator) -> int:
    """Metropolis update of every item intercept given the respondent distances."""
    noise = rng.standard_normal(data.p) * jump
    logu = np.log1p(-rng.random(data.p))
    q = np.exp(-_upper(school.d_z))
    pos_pairs = data.colsum * (data.colsum - 1) / 2
    return int(kernels.intercept_sweep(
        school.beta, q, pos_pairs, np.ascontiguousarray(gamma_g, dtype=np.float64),
        np.ascontiguousarray(sigma_beta2_g, dtype=np.float64), noise, logu,
    ))


# -- closed-form conditionals -------------------------------------------------

def _inv_gamma(rng, shape, scale):
    scale = np.asarray(scale, dtype=np.float64)
    return scale / rng.gamma(shape, size=scale.shape)


def _symmetric_from_upper(values, p, diag=0.0):
    out = np.full((p, p), diag)
    iu = np.triu_indices(p, 1)
    out[iu] = values
    out[(iu[1], iu[0])] = values
    return out


def sigma_d2_params(state: ChainState, m: int) -> tuple[float, float]:
    """Shape and scale of the inverse-gamma draw for ``sigma_d2`` of school m."""
    p = state.p
    n_pairs = p * (p - 1) / 2
    iu = np.triu_indices(p, 1)
    logd = np.log(state.schools[m].d_w[iu])
    delta = state.hier.delta[m][iu]
    mu = state.hier.mu[state.hier.group_of_school[m]][iu]
    a, b = state.hyper.a, state.hyper.b
    scale = b + 0.5 * np.sum((logd - delta) ** 2) + 0.5 * n_pairs / (n_pairs + 1) * np.sum((delta - mu) ** 2)
    return a + 0.5 * n_pairs, float(scale)


def draw_sigma_d2(state: ChainState, rng: np.random.Generator) -> np.ndarray:
    params = [sigma_d2_params(state, m) for m in range(state.M)]
    shape = params[0][0]
    state.hier.sigma_d2[:] = _inv_gamma(rng, shape, [s for _, s in params])
    return state.hier.sigma_d2


def sigma_delta2_params(state: ChainState, g: int) -> tuple[float, np.ndarray]:
    """Shape and upper-triangle scales for ``sigma_delta2`` of group g."""
    hier = state.hier
    members = hier.schools_in(g)
    Mg = len(members)
    iu = np.triu_indices(state.p, 1)
    mu = hier.mu[g][iu]
    resid = hier.delta[members][:, iu[0], iu[1]] - mu
    a, b = state.hyper.a, state.hyper.b
    scale = b + 0.5 * np.sum(resid**2, axis=0) + 0.5 * Mg / (Mg + 1) * mu**2
    return a + 0.5 * Mg, scale


def draw_sigma_delta2(state: ChainState, rng: np.random.Generator) -> np.ndarray:
    for g in range(state.hier.n_groups):
        shape, scale = sigma_delta2_params(state, g)
        state.hier.sigma_delta2[g] = _symmetric_from_upper(_inv_gamma(rng, shape, scale), state.p, diag=1.0)
    return state.hier.sigma_delta2


def gibbs_variances_distance(state: ChainState, rng: np.random.Generator):
    """Step 3: ``sigma_d2`` for every school, then ``sigma_delta2`` for every pair."""
    return draw_sigma_d2(state, rng).copy(), draw_sigma_delta2(state, rng).copy()


def delta_params(state: ChainState, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Upper-triangle mean and variance of the normal draw for ``delta`` of school m."""
    hier = state.hier
    g = hier.group_of_school[m]
    iu = np.triu_indices(state.p, 1)
    logd = np.log(state.schools[m].d_w[iu])
    prec_d = 1.0 / hier.sigma_d2[m]
    prec_mu = 1.0 / hier.sigma_delta2[g][iu]
    prec = prec_d + prec_mu
    return (logd * prec_d + hier.mu[g][iu] * prec_mu) / prec, 1.0 / prec


def draw_delta(state: ChainState, rng: np.random.Generator) -> np.ndarray:
    p = state.p
    z = rng.standard_normal((state.M, p * (p - 1) // 2))
    for m in range(state.M):
        mean, var = delta_params(state, m)
        state.hier.delta[m] = _symmetric_from_upper(mean + np.sqrt(var) * z[m], p)
    return state.hier.delta


def mu_params(state: ChainState, g: int) -> tuple[np.ndarray, np.ndarray]:
    hier = state.hier
    members = hier.schools_in(g)
    Mg = len(members)
    iu = np.triu_indices(state.p, 1)
    mean_delta = hier.delta[members][:, iu[0], iu[1]].mean(axis=0)
    data_prec = Mg / hier.sigma_delta2[g][iu]
    prec = 1.0 / state.hyper.sigma_mu2 + data_prec
    return mean_delta * data_prec / prec, 1.0 / prec


def draw_mu(state: ChainState, rng: np.random.Generator) -> np.ndarray:
    for g in range(state.hier.n_groups):
        mean, var = mu_params(state, g)
        z = rng.standard_normal(mean.shape)
        state.hier.mu[g] = _symmetric_from_upper(mean + np.sqrt(var) * z, state.p)
    return state.hier.mu


def gibbs_delta_mu(state: ChainState, rng: np.random.Generator):
    """Step 4: ``delta`` for every school, then ``mu`` for every group."""
    return draw_delta(state, rng).copy(), draw_mu(state, rng).copy()


def sigma_z2_params(school: WithinSchoolState, data: SchoolData, hyper: HyperPriors) -> tuple[float, float]:
    resid = school.Z - respondent_link_means(school.W, data.X)
    n, dim = resid.shape
    return hyper.a + 0.5 * n * dim, float(hyper.b + 0.5 * np.sum(resid**2))


def gibbs_sigma_z(school: WithinSchoolState, data: SchoolData, hyper: HyperPriors,
                  rng: np.random.Generator) -> float:
    """Step 6: redraw the linking variance of one school."""
    shape, scale = sigma_z2_params(school, data, hyper)
    school.sigma_z2 = float(scale / rng.gamma(shape))
    return school.sigma_z2


def _group_betas(state: ChainState, g: int) -> np.ndarray:
    return np.array([state.schools[m].beta for m in state.hier.schools_in(g)])


def sigma_beta2_params(state: ChainState, g: int) -> tuple[float, np.ndarray]:
    betas = _group_betas(state, g)
    Mg = betas.shape[0]
    gamma = state.hier.gamma[g]
    a, b = state.hyper.a, state.hyper.b
    scale = b + 0.5 * np.sum((betas - gamma) ** 2, axis=0) + 0.5 * Mg / (Mg + 1) * gamma**2
    return a + 0.5 * Mg, scale


def gamma_params(state: ChainState, g: int) -> tuple[np.ndarray, np.ndarray]:
    betas = _group_betas(state, g)
    Mg = betas.shape[0]
    s2 = state.hier.sigma_beta2[g]
    prec = 1.0 / state.hyper.sigma_gamma2 + Mg / s2
    return betas.sum(axis=0) / s2 / prec, 1.0 / prec


def draw_sigma_beta2(state: ChainState, rng: np.random.Generator) -> np.ndarray:
    for g in range(state.hier.n_groups):
        shape, scale = sigma_beta2_params(state, g)
        state.hier.sigma_beta2[g] = _inv_gamma(rng, shape, scale)
    return state.hier.sigma_beta2


def draw_gamma(state: ChainState, rng: np.random.Generator) -> np.ndarray:
    for g in range(state.hier.n_groups):
        mean, var = gamma_params(state, g)
        state.hier.gamma[g] = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
    return state.hier.gamma


def gibbs_gamma_sigma_beta(state: ChainState, rng: np.random.Generator):
    """Step 8: ``sigma_beta2`` then ``gamma`` for every group."""
    return draw_sigma_beta2(state, rng).copy(), draw_gamma(state, rng).copy()
