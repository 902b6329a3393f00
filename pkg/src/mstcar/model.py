"""Log densities of the hierarchical rate model.

Array layout: per-cell quantities are ``(n_sites, n_time, n_groups)`` so a
site's block flattens to the time-major/group-minor vector used by the
covariance module.  Covariates are ``(n_sites, n_time, n_groups, p)`` and the
regression coefficients ``(n_groups, p)``.

Improper densities (the intrinsic CAR prior, the flat-on-tau prior) are
evaluated without normalising constants.  Proper ones (Beta, inverse
Wishart) carry theirs.  Only differences are ever used downstream.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import betaln, gammaln, multigammaln

from .covariance import (
    CovarianceSpec,
    assemble_sigma_eta,
    check_spd,
    edge_scatter,
    quadratic_from_scatter,
    sigma_eta_logdet,
)
from .errors import DimensionMismatch, IsolatedSite
from .graph import AdjacencyGraph

# one person, in units of 100,000
SENTINEL_POP = 1e-5

VARIANTS = ("mstcar", "separable", "stcar_independent")


def intercept_design(n_sites: int, n_time: int, n_groups: int) -> np.ndarray:
    """One intercept per (group, time) cell: ``x[i, t, k] = e_t``."""
    x = np.zeros((n_sites, n_time, n_groups, n_time))
    for t in range(n_time):
        x[:, t, :, t] = 1.0
    return x


@dataclass(frozen=True, eq=False)
class RateDataset:
    """Observed rates per 100,000 with populations in units of 100,000.

    ``y`` holds NaN in unobserved cells; those cells carry the sentinel
    population so their likelihood contribution is negligible.
    """

    y: np.ndarray
    pop: np.ndarray
    x: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        shape = self.y.shape
        if len(shape) != 3 or self.pop.shape != shape or self.observed.shape != shape:
            raise DimensionMismatch("y, pop and observed must share one (sites, time, groups) shape")
        if self.x.shape[:3] != shape or self.x.ndim != 4:
            raise DimensionMismatch(f"x must be {shape + ('p',)}, got {self.x.shape}")
        if np.any(self.pop <= 0):
            raise ValueError("populations must be positive (missing cells use the sentinel)")
        if np.any(np.isnan(self.y[self.observed])):
            raise ValueError("observed cells must have a finite rate")

    @classmethod
    def from_arrays(cls, y, pop, x=None, observed=None) -> "RateDataset":
        """Build a dataset; zero-population or NaN-rate cells become unobserved."""
        y = np.array(y, dtype=float)
        pop = np.array(pop, dtype=float)
        if y.ndim != 3 or pop.shape != y.shape:
            raise DimensionMismatch(f"y {y.shape} and pop {pop.shape} must share one 3-d shape")
        if observed is None:
            observed = (pop > 0) & np.isfinite(y)
        observed = np.asarray(observed, dtype=bool)
        pop = np.where(observed, pop, SENTINEL_POP)
        y = np.where(observed, y, np.nan)
        if x is None:
            x = intercept_design(*y.shape)
        return cls(y, pop, np.asarray(x, dtype=float), observed)

    @property
    def n_sites(self) -> int:
        return self.y.shape[0]

    @property
    def n_time(self) -> int:
        return self.y.shape[1]

    @property
    def n_groups(self) -> int:
        return self.y.shape[2]

    @property
    def n_covariates(self) -> int:
        return self.x.shape[3]

    @property
    def missing_index(self) -> tuple[np.ndarray, ...]:
        return np.nonzero(~self.observed)

    def fill(self, y_missing) -> np.ndarray:
        """Full rate array with ``y_missing`` written into the unobserved cells."""
        y = self.y.copy()
        y[self.missing_index] = y_missing
        return y


@dataclass(frozen=True, eq=False)
class ModelState:
    beta: np.ndarray      # (n_groups, p)
    z: np.ndarray         # (n_sites, n_time, n_groups)
    spec: CovarianceSpec
    y_missing: np.ndarray  # values of the unobserved cells, in missing_index order

    def replace(self, **changes) -> "ModelState":
        return replace(self, **changes)

    def check(self, data: RateDataset) -> None:
        if self.z.shape != data.y.shape:
            raise DimensionMismatch(f"z {self.z.shape} vs data {data.y.shape}")
        if self.beta.shape != (data.n_groups, data.n_covariates):
            raise DimensionMismatch(f"beta {self.beta.shape} vs design")
        if (self.spec.n_time, self.spec.n_groups) != (data.n_time, data.n_groups):
            raise DimensionMismatch("covariance spec does not match data dimensions")
        if self.y_missing.shape != (np.count_nonzero(~data.observed),):
            raise DimensionMismatch("y_missing length does not match the unobserved cells")


@dataclass(frozen=True)
class PriorConfig:
    rho_a: float = 9.0
    rho_b: float = 1.0
    g_scale: np.ndarray = field(default=None)
    g_df: float = None

    def __post_init__(self):
        if self.rho_a <= 0 or self.rho_b <= 0:
            raise ValueError("Beta prior parameters must be positive")
        if self.g_scale is not None:
            s = np.atleast_2d(np.array(self.g_scale, dtype=float))
            check_spd(s)
            object.__setattr__(self, "g_scale", s)
            if self.g_df is None:
                object.__setattr__(self, "g_df", s.shape[0] + 2.0)
            if self.g_df <= s.shape[0] - 1:
                raise ValueError(f"g_df must exceed n_groups - 1, got {self.g_df}")

    @classmethod
    def default(cls, n_groups: int, **kw) -> "PriorConfig":
        """Beta(9, 1) on rho, vague InvWish(n_groups * I, n_groups + 2) on G_t."""
        kw.setdefault("g_scale", np.eye(n_groups) * n_groups)
        kw.setdefault("g_df", n_groups + 2.0)
        return cls(**kw)


def fitted_mean(data: RateDataset, beta) -> np.ndarray:
    """``x' beta_k`` for every cell."""
    return np.einsum("stkp,kp->stk", data.x, beta)


def cell_log_likelihood(data: RateDataset, state: ModelState) -> np.ndarray:
    """Per-cell Gaussian log density; unobserved cells use the imputed value."""
    mu = fitted_mean(data, state.beta) + state.z
    var = state.spec.tau2 / data.pop
    y = data.fill(state.y_missing)
    return -0.5 * (np.log(2 * np.pi * var) + (y - mu) ** 2 / var)


def log_likelihood(data: RateDataset, state: ModelState, observed_only: bool = True) -> float:
    state.check(data)
    cells = cell_log_likelihood(data, state)
    return float(cells[data.observed].sum() if observed_only else cells.sum())


def mstcar_log_prior(z, graph: AdjacencyGraph, spec: CovarianceSpec) -> float:
    """Unnormalised log density of the intrinsic multivariate space-time CAR prior."""
    z = np.asarray(z, dtype=float)
    if z.shape[0] != graph.n_sites:
        raise DimensionMismatch(f"z has {z.shape[0]} sites, graph has {graph.n_sites}")
    z = z.reshape(graph.n_sites, spec.n_time, spec.n_groups)
    inc = z[graph.edges[:, 0]] - z[graph.edges[:, 1]]
    quad = quadratic_from_scatter(edge_scatter(inc, spec.rho), spec.g)
    return -0.5 * (graph.n_sites - 1) * sigma_eta_logdet(spec) - 0.5 * quad


def conditional_z_params(site: int, z, graph: AdjacencyGraph, spec: CovarianceSpec):
    """Mean and covariance of one site's block given all others under the prior."""
    m = graph.neighbor_counts[site]
    if m == 0:
        raise IsolatedSite(f"site {site} has no neighbours")
    z = np.asarray(z, dtype=float).reshape(graph.n_sites, -1)
    mean = z[graph.neighbors[site]].sum(axis=0) / m
    return mean, assemble_sigma_eta(spec) / m


def log_beta_pdf(x, a: float, b: float):
    with np.errstate(divide="ignore"):
        return (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - betaln(a, b)


def log_invwishart_pdf(x, scale, df: float) -> float:
    p = scale.shape[0]
    _, logdet_s = np.linalg.slogdet(scale)
    _, logdet_x = np.linalg.slogdet(x)
    return float(
        0.5 * df * logdet_s
        - 0.5 * df * p * np.log(2.0)
        - multigammaln(0.5 * df, p)
        - 0.5 * (df + p + 1) * logdet_x
        - 0.5 * np.trace(np.linalg.solve(x, scale))
    )


def log_invgamma_pdf(x, shape: float, rate: float):
    return shape * np.log(rate) - gammaln(shape) - (shape + 1) * np.log(x) - rate / x


def log_hyperpriors(spec: CovarianceSpec, prior: PriorConfig, variant: str = "mstcar") -> float:
    """Beta on rho, inverse Wishart on G_t and the flat-on-tau prior on tau2.

    ``separable`` counts the shared G and rho once.  ``stcar_independent``
    places on each group variance the inverse-gamma marginal of the inverse
    Wishart diagonal.
    """
    scale = prior.g_scale if prior.g_scale is not None else np.eye(spec.n_groups) * spec.n_groups
    df = prior.g_df if prior.g_df is not None else spec.n_groups + 2.0
    check_spd(spec.g)
    tau_term = -0.5 * np.log(spec.tau2).sum()
    if variant == "mstcar":
        rho_term = log_beta_pdf(spec.rho, prior.rho_a, prior.rho_b).sum()
        g_term = sum(log_invwishart_pdf(g, scale, df) for g in spec.g)
    elif variant == "separable":
        rho_term = log_beta_pdf(spec.rho[0], prior.rho_a, prior.rho_b)
        g_term = log_invwishart_pdf(spec.g[0], scale, df)
    elif variant == "stcar_independent":
        rho_term = log_beta_pdf(spec.rho, prior.rho_a, prior.rho_b).sum()
        shape = 0.5 * (df - spec.n_groups + 1)
        g_term = log_invgamma_pdf(np.diagonal(spec.g[0]), shape, 0.5 * np.diagonal(scale)).sum()
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return float(rho_term + g_term + tau_term)


def log_joint(data, state, graph, prior, variant: str = "mstcar", observed_only: bool = False):
    """Unnormalised log posterior (flat prior on beta)."""
    return (
        log_likelihood(data, state, observed_only=observed_only)
        + mstcar_log_prior(state.z, graph, state.spec)
        + log_hyperpriors(state.spec, prior, variant)
    )
