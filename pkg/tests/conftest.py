import numpy as np
import pytest

from hnirm.data import dichotomize
from hnirm.sampler import ChainConfig
from hnirm.sampler.chain import initial_state
from hnirm.synthgen import generate


def perturbed_state(M=2, n=4, p=3, d=2, groups=None, seed=0):
    """A generic (non-initial) state on a tiny synthetic dataset."""
    ds, _ = generate(M, n, p, d=d, group_spec=groups, seed=seed)
    mats = dichotomize(ds, mode="binary")
    cfg = ChainConfig(d=d, group_mode="by_label" if groups else "single")
    state = initial_state(mats, cfg, rng=np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 100)
    for s in state.schools:
        s.W = rng.normal(size=s.W.shape)
        s.Z = rng.normal(size=s.Z.shape)
        s.beta = rng.normal(size=s.beta.shape)
        s.theta = rng.normal(size=s.theta.shape)
        s.sigma_z2 = float(rng.uniform(0.5, 2.0))
        s.refresh_distances()
    h = state.hier
    for arr in (h.delta, h.mu):
        sym = rng.normal(scale=0.5, size=arr.shape)
        sym = sym + np.swapaxes(sym, 1, 2)
        sym[:, np.arange(p), np.arange(p)] = 0
        arr[:] = sym
    h.sigma_d2[:] = rng.uniform(0.5, 2.0, size=h.sigma_d2.shape)
    sd2 = rng.uniform(0.5, 2.0, size=h.sigma_delta2.shape)
    h.sigma_delta2[:] = 0.5 * (sd2 + np.swapaxes(sd2, 1, 2))
    h.gamma[:] = rng.normal(size=h.gamma.shape)
    h.sigma_beta2[:] = rng.uniform(0.5, 2.0, size=h.sigma_beta2.shape)
    return state, mats


@pytest.fixture
def tiny():
    return perturbed_state()


@pytest.fixture
def tiny_matrices():
    ds, _ = generate(2, 4, 3, seed=5)
    return dichotomize(ds, mode="binary")


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line for the end-of-run acceptance summary."""

    def _add(criterion: str, passed: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        return passed

    return _add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
