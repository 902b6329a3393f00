"""Posterior summaries: credible intervals, DIC, coverage and trend curves.

Quantiles use the linear interpolation rule (Hyndman-Fan type 7, numpy's
default ``method="linear"``) everywhere.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .covariance import assemble_sigma_eta
from .errors import DimensionMismatch, InsufficientDraws, ZeroTotalPopulation
from .model import RateDataset, cell_log_likelihood, fitted_mean
from .sampler import PosteriorSamples

QUANTILES = (0.025, 0.5, 0.975)


@dataclass(frozen=True, eq=False)
class IntervalSummary:
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def covers(self, truth) -> np.ndarray:
        truth = np.asarray(truth)
        return (self.lower <= truth) & (truth <= self.upper)


@dataclass(frozen=True)
class DicResult:
    dic: float
    p_d: float
    d_bar: float
    d_at_mean: float

    def to_dict(self) -> dict:
        return asdict(self)


def summarize_draws(draws) -> IntervalSummary:
    """Median and equal-tail 95% interval over the leading (draw) axis."""
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < 1:
        raise InsufficientDraws("no draws to summarise")
    lo, med, hi = np.quantile(draws, QUANTILES, axis=0, method="linear")
    return IntervalSummary(med, lo, hi)


FAMILIES = ("beta", "z", "g", "rho", "tau2", "y_missing")


def interval_summary(samples: PosteriorSamples, family: str) -> IntervalSummary:
    """Summaries for one parameter family: ``beta``, ``z``, ``g``, ``rho``, ``tau2``, ``y_missing``."""
    if family not in FAMILIES:
        raise ValueError(f"unknown parameter family {family!r}")
    return summarize_draws(getattr(samples, family))


def deviance(data: RateDataset, state) -> float:
    """``-2`` times the observed-cell log likelihood."""
    return float(-2.0 * cell_log_likelihood(data, state)[data.observed].sum())


def dic(samples: PosteriorSamples, data: RateDataset) -> DicResult:
    """Deviance information criterion over observed cells.

    The plug-in deviance uses posterior means of beta, Z and tau2; imputed
    rates never enter because unobserved cells are excluded.
    """
    if samples.n_draws < 2:
        raise InsufficientDraws(f"DIC needs at least 2 draws, got {samples.n_draws}")
    obs = data.observed
    y = data.y[obs]
    pop = data.pop[obs]
    k_idx = np.nonzero(obs)[2]
    devs = np.empty(samples.n_draws)
    for d in range(samples.n_draws):
        mu = (fitted_mean(data, samples.beta[d]) + samples.z[d])[obs]
        var = samples.tau2[d][k_idx] / pop
        devs[d] = np.sum(np.log(2 * np.pi * var) + (y - mu) ** 2 / var)
    mu_bar = (fitted_mean(data, samples.beta.mean(axis=0)) + samples.z.mean(axis=0))[obs]
    var_bar = samples.tau2.mean(axis=0)[k_idx] / pop
    d_hat = float(np.sum(np.log(2 * np.pi * var_bar) + (y - mu_bar) ** 2 / var_bar))
    d_bar = float(devs.mean())
    p_d = d_bar - d_hat
    return DicResult(dic=d_bar + p_d, p_d=p_d, d_bar=d_bar, d_at_mean=d_hat)


def fitted_draws(samples: PosteriorSamples, data: RateDataset) -> np.ndarray:
    """``x' beta_k + Z`` for every draw, shape ``(draws, sites, time, groups)``."""
    return np.einsum("stkp,dkp->dstk", data.x, samples.beta) + samples.z


def nationwide_trend(samples: PosteriorSamples, data: RateDataset, group: int,
                     populations=None) -> IntervalSummary:
    """Population-weighted mean of fitted rates over sites, per time point.

    ``populations`` defaults to the dataset's (which weights missing cells by
    the negligible sentinel).
    """
    pop = data.pop if populations is None else np.asarray(populations, dtype=float)
    if pop.shape != data.y.shape:
        raise DimensionMismatch("populations must match the data shape")
    w = pop[:, :, group]
    total = w.sum(axis=0)
    if np.any(total <= 0):
        raise ZeroTotalPopulation(f"group {group} has zero total population at some time")
    fitted = fitted_draws(samples, data)[..., group]
    trend = np.einsum("dst,st->dt", fitted, w) / total
    return summarize_draws(trend)


def sigma_eta_draws(samples: PosteriorSamples) -> np.ndarray:
    """Dense Sigma_eta per draw, shape ``(draws, n_time, n_groups, n_time, n_groups)``."""
    n_t, n_g = samples.g.shape[1], samples.g.shape[2]
    out = np.empty((samples.n_draws, n_t, n_g, n_t, n_g))
    for d in range(samples.n_draws):
        out[d] = assemble_sigma_eta(samples.spec(d)).reshape(n_t, n_g, n_t, n_g)
    return out


def sigma_eta_summary(samples: PosteriorSamples) -> dict[str, IntervalSummary]:
    """Summaries of Sigma_eta's diagonal ``(n_time, n_groups)`` and of the
    between-group correlations within each time block ``(n_time, n_groups, n_groups)``.
    """
    sig = sigma_eta_draws(samples)
    n_t = sig.shape[1]
    blocks = sig[:, np.arange(n_t), :, np.arange(n_t), :]  # (t, d, k, k')
    blocks = np.moveaxis(blocks, 0, 1)
    diag = np.diagonal(blocks, axis1=2, axis2=3)
    sd = np.sqrt(diag)
    corr = blocks / (sd[..., :, None] * sd[..., None, :])
    return {"diag": summarize_draws(diag), "corr": summarize_draws(corr)}


def coverage_score(truth, summary: IntervalSummary | tuple) -> float:
    """Percentage of parameters whose interval contains the truth."""
    if isinstance(summary, IntervalSummary):
        lower, upper = summary.lower, summary.upper
    else:
        lower, upper = summary
    truth = np.asarray(truth, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if truth.shape != lower.shape or truth.shape != upper.shape:
        raise DimensionMismatch(f"truth {truth.shape} vs intervals {lower.shape}/{upper.shape}")
    if truth.size == 0:
        raise DimensionMismatch("no parameters to score")
    return float(100.0 * np.mean((lower <= truth) & (truth <= upper)))


def effective_sample_size(trace) -> float:
    """ESS of a scalar trace using Geyer's initial positive sequence."""
    x = np.asarray(trace, dtype=float)
    n = len(x)
    x = x - x.mean()
    var = x @ x / n
    if var == 0:
        return float(n)
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    tau = -1.0
    for lag in range(0, n - 1, 2):
        pair = acf[lag] + acf[lag + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    return float(n / max(tau, 1e-12))


def geweke_z(trace, first: float = 0.2, last: float = 0.5) -> float:
    """Difference of early and late trace means in units of its standard error."""
    x = np.asarray(trace, dtype=float)
    n = len(x)
    a, b = x[: int(first * n)], x[n - int(last * n):]

    def se2(seg):
        return seg.var() / effective_sample_size(seg) if seg.var() > 0 else 0.0

    denom = np.sqrt(se2(a) + se2(b))
    if denom == 0:
        return 0.0
    return float((a.mean() - b.mean()) / denom)


def imputation_zscore(samples: PosteriorSamples, data: RateDataset) -> float:
    """Pooled Monte-Carlo z-score of imputed rates against ``x' beta + Z``.

    Each draw's imputed value minus its fitted mean is standardised by
    ``sqrt(tau2 / pop)``; the pooled mean of those standardised residuals,
    divided by its standard error, should be within a few units of zero.
    """
    idx = data.missing_index
    if len(idx[0]) == 0:
        raise InsufficientDraws("dataset has no unobserved cells")
    fitted = fitted_draws(samples, data)[(slice(None),) + idx]
    sd = np.sqrt(samples.tau2[:, idx[2]] / data.pop[idx])
    resid = (samples.y_missing - fitted) / sd
    return float(resid.mean() * np.sqrt(resid.size))


def summary_rows(samples: PosteriorSamples, data: RateDataset | None = None):
    """Rows ``(parameter_family, site, group, time, median, lo95, hi95)``.

    Indices are 1-based and 0 where not applicable.  ``g`` has two group
    indices: ``group`` holds the row and ``site`` the column of ``G_t``.
    """
    rows = []

    def emit(family, summ, index_fn):
        for pos in np.ndindex(summ.median.shape):
            site, group, time = index_fn(pos)
            rows.append((family, site, group, time, float(summ.median[pos]),
                         float(summ.lower[pos]), float(summ.upper[pos])))

    emit("z", interval_summary(samples, "z"), lambda p: (p[0] + 1, p[2] + 1, p[1] + 1))
    emit("beta", interval_summary(samples, "beta"), lambda p: (0, p[0] + 1, p[1] + 1))
    emit("g", interval_summary(samples, "g"), lambda p: (p[2] + 1, p[1] + 1, p[0] + 1))
    emit("rho", interval_summary(samples, "rho"), lambda p: (0, p[0] + 1, 0))
    emit("tau2", interval_summary(samples, "tau2"), lambda p: (0, p[0] + 1, 0))
    if data is not None and samples.y_missing.shape[1]:
        s, t, k = data.missing_index
        summ = interval_summary(samples, "y_missing")
        emit("y_missing", summ, lambda p: (s[p[0]] + 1, k[p[0]] + 1, t[p[0]] + 1))
    return rows
