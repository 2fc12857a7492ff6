"""Metropolis-within-Gibbs sampler."""
from .chain import PosteriorSamples, canonicalize, initial_state, log_posterior, run_chain
from .config import ChainConfig, config_from_mapping, read_config_file, write_config_file
from .steps import (
    ChainState,
    gibbs_delta_mu,
    gibbs_gamma_sigma_beta,
    gibbs_sigma_z,
    gibbs_variances_distance,
    step_update_beta,
    step_update_theta,
    step_update_W,
    step_update_Z,
)

__all__ = [
    "ChainConfig",
    "ChainState",
    "PosteriorSamples",
    "canonicalize",
    "config_from_mapping",
    "gibbs_delta_mu",
    "gibbs_gamma_sigma_beta",
    "gibbs_sigma_z",
    "gibbs_variances_distance",
    "initial_state",
    "log_posterior",
    "read_config_file",
    "run_chain",
    "step_update_beta",
    "step_update_theta",
    "step_update_W",
    "step_update_Z",
    "write_config_file",
]

from .diagnostics import DiagnosticsReport, autocorr, diagnostics, effective_sample_size, hpd_interval
from .io import load_samples, read_manifest, write_samples

__all__ += [
    "DiagnosticsReport",
    "autocorr",
    "diagnostics",
    "effective_sample_size",
    "hpd_interval",
    "load_samples",
    "read_manifest",
    "write_samples",
]
