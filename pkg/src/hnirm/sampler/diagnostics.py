"""Chain diagnostics: autocorrelation, effective sample size, HPD intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import InsufficientSamplesError, ValidationError


def autocorr(x, max_lag: int = 50) -> np.ndarray:
    """Sample autocorrelation at lags 0..max_lag (FFT, biased estimator).

    A constant series has no defined autocorrelation; lags >= 1 are NaN.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    max_lag = min(max_lag, n - 1)
    xc = x - x.mean()
    var = np.dot(xc, xc)
    out = np.full(max_lag + 1, np.nan)
    out[0] = 1.0
    if var <= 0 or not np.isfinite(var):
        return out
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1]
    return acov / acov[0]


def effective_sample_size(x) -> tuple[float, bool]:
    """ESS by Geyer's initial positive sequence.

    Returns
    -------
    ess : float
        NaN for a degenerate (constant) series.
    degenerate : bool
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.ptp(x) == 0:
        return float("nan"), True
    rho = autocorr(x, n - 1)
    tau = -1.0
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    tau = max(tau, 1.0 / n)
    return float(n / tau), False


def hpd_interval(samples, level: float = 0.95) -> tuple[float, float]:
    """Shortest interval holding ``ceil(level * N)`` of the sorted samples."""
    if not 0 < level < 1:
        raise ValidationError("level must lie strictly between 0 and 1")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 10:
        raise InsufficientSamplesError(f"need at least 10 samples for an HPD interval, got {n}")
    k = int(math.ceil(level * n))
    widths = x[k - 1:] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def hpd_columns(draws, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``hpd_interval`` over the trailing axes of ``draws`` (draws first)."""
    if not 0 < level < 1:
        raise ValidationError("level must lie strictly between 0 and 1")
    x = np.sort(np.asarray(draws, dtype=float), axis=0)
    n = x.shape[0]
    if n < 10:
        raise InsufficientSamplesError(f"need at least 10 samples for an HPD interval, got {n}")
    k = int(math.ceil(level * n))
    widths = x[k - 1:] - x[: n - k + 1]
    i = np.argmin(widths, axis=0)
    lo = np.take_along_axis(x, i[None], axis=0)[0]
    hi = np.take_along_axis(x, (i + k - 1)[None], axis=0)[0]
    return lo, hi


@dataclass
class DiagnosticsReport:
    """Per-scalar trace summaries plus acceptance rates.

    ``rows`` holds one dict per monitored scalar with keys ``parameter``,
    ``mean``, ``ess``, ``degenerate`` and ``acf`` (lags 0..max_lag);
    ``traces`` maps the same parameter names to their draw series.
    """

    rows: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    max_lag: int = 50


def _scalar_series(samples):
    # name -> series for the hierarchical scalars and per-school variances
    out = {}
    d = samples.draws
    for fam in ("gamma", "sigma_beta2"):
        for g in range(d[fam].shape[1]):
            for i in range(d[fam].shape[2]):
                out[f"{fam}[{g},{i}]"] = d[fam][:, g, i]
    for fam in ("sigma_d2", "sigma_z2"):
        for m in range(d[fam].shape[1]):
            out[f"{fam}[{m}]"] = d[fam][:, m]
    for m in range(d["beta"].shape[1]):
        for i in range(d["beta"].shape[2]):
            out[f"beta[{m},{i}]"] = d["beta"][:, m, i]
    p = d["mu"].shape[2]
    iu = np.triu_indices(p, 1)
    for g in range(d["mu"].shape[1]):
        for i, j in zip(*iu):
            out[f"mu[{g},{i},{j}]"] = d["mu"][:, g, i, j]
    return out


def diagnostics(samples, max_lag: int = 50) -> DiagnosticsReport:
    """Autocorrelation (lags up to ``max_lag``), ESS and acceptance rates."""
    if max_lag > 50:
        raise ValidationError("max_lag is capped at 50")
    report = DiagnosticsReport(acceptance=dict(samples.acceptance), max_lag=max_lag)
    for name, series in _scalar_series(samples).items():
        ess, degenerate = effective_sample_size(series)
        report.rows.append({
            "parameter": name,
            "mean": float(np.mean(series)),
            "ess": ess,
            "degenerate": degenerate,
            "acf": autocorr(series, max_lag),
        })
        report.traces[name] = series
    return report
