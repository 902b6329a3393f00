"""Metropolis-within-Gibbs sampler for the MSTCAR model and its special cases.

One iteration is a systematic scan::

    beta -> Z (colour-class sweep, optional recentring) -> tau2
         -> G (per variant) -> rho (logit random walk) -> imputed Y_u

Every Gibbs kernel is exposed twice: ``*_conditional`` returns the
parameters of the full conditional and ``update_*`` draws from it.  The
variants share the kernels:

``mstcar``
    one G_t per time point, one rho per group.
``separable``
    a single G and a single rho shared by all groups, i.e. ``R(rho) kron G``.
``stcar_independent``
    G_t diagonal and constant over time, one rho per group.
"""
from __future__ import annotations

import json
import logging
import os
import pickle
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.special import expit, logit
from scipy.stats import invwishart

from .covariance import (
    CovarianceSpec,
    edge_scatter,
    quadratic_from_scatter,
    sigma_eta_precision,
)
from .errors import (
    DegenerateResiduals,
    FactorizationFailure,
    InsufficientData,
    MSTCARError,
    NotPositiveDefinite,
    SamplerAbort,
    SingularDesign,
)
from .graph import AdjacencyGraph
from .model import (
    VARIANTS,
    ModelState,
    PriorConfig,
    RateDataset,
    fitted_mean,
    log_beta_pdf,
)

log = logging.getLogger(__name__)


@dataclass
class SamplerConfig:
    n_iterations: int = 6000
    burn_in: int = 1000
    thin: int = 10
    variant: str = "mstcar"
    rho_proposal_sd: float = 0.5
    seed: int = 0
    center_z: bool = True
    tune_interval: int = 50
    target_accept: float = 0.44
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.variant == "stcar":
            self.variant = "stcar_independent"
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("need 0 <= burn_in < n_iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.rho_proposal_sd <= 0:
            raise ValueError("rho_proposal_sd must be positive")

    @property
    def n_draws(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thin


# ---------------------------------------------------------------- beta

def beta_conditional(data: RateDataset, state: ModelState):
    """Gaussian full conditional of each ``beta_k`` under a flat prior.

    Returns ``(means, precisions)`` with shapes ``(G, p)`` and ``(G, p, p)``.
    All cells enter with precision ``pop / tau2_k``; unobserved cells use the
    imputed rate and the sentinel population.
    """
    r = data.fill(state.y_missing) - state.z
    w = data.pop / state.spec.tau2
    n_g, p = data.n_groups, data.n_covariates
    means = np.empty((n_g, p))
    precs = np.empty((n_g, p, p))
    for k in range(n_g):
        x = data.x[:, :, k, :].reshape(-1, p)
        wk = w[:, :, k].ravel()
        prec = x.T @ (wk[:, None] * x)
        try:
            chol = scipy.linalg.cho_factor(prec, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularDesign(f"design for group {k} is rank deficient") from exc
        means[k] = scipy.linalg.cho_solve(chol, x.T @ (wk * r[:, :, k].ravel()))
        precs[k] = prec
    return means, precs


def update_beta(data: RateDataset, state: ModelState, rng) -> np.ndarray:
    means, precs = beta_conditional(data, state)
    eps = rng.standard_normal(means.shape)
    chol = np.linalg.cholesky(precs)
    return means + np.linalg.solve(np.swapaxes(chol, 1, 2), eps[..., None])[..., 0]


# ---------------------------------------------------------------- Z

def _site_data_terms(data: RateDataset, state: ModelState):
    """Per-site data precision and residual, flattened to ``(n_sites, q)``."""
    n = data.n_sites
    d = (data.pop / state.spec.tau2).reshape(n, -1)
    r = (data.fill(state.y_missing) - fitted_mean(data, state.beta)).reshape(n, -1)
    return d, r


def z_conditional(site: int, data: RateDataset, state: ModelState, graph: AdjacencyGraph,
                  precision=None):
    """Mean and precision of site ``site``'s block given everything else."""
    q_mat = sigma_eta_precision(state.spec) if precision is None else precision
    d, r = _site_data_terms(data, state)
    z = state.z.reshape(graph.n_sites, -1)
    nbr = z[graph.neighbors[site]].sum(axis=0)
    prec = graph.neighbor_counts[site] * q_mat + np.diag(d[site])
    mean = np.linalg.solve(prec, q_mat @ nbr + d[site] * r[site])
    return mean, prec


def _draw_blocks(prec, rhs, eps):
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailure("site full-conditional precision is not SPD") from exc
    half = np.linalg.solve(chol, rhs[..., None])
    return np.linalg.solve(np.swapaxes(chol, -1, -2), half + eps[..., None])[..., 0]


def update_z_site(site: int, data: RateDataset, state: ModelState, graph: AdjacencyGraph,
                  rng=None, precision=None, eps=None) -> np.ndarray:
    """Exact draw of one site's ``(n_time, n_groups)`` block."""
    q_mat = sigma_eta_precision(state.spec) if precision is None else precision
    d, r = _site_data_terms(data, state)
    z = state.z.reshape(graph.n_sites, -1)
    if eps is None:
        eps = rng.standard_normal(z.shape[1])
    nbr = z[graph.neighbors[site]].sum(axis=0)
    prec = graph.neighbor_counts[site] * q_mat + np.diag(d[site])
    out = _draw_blocks(prec, q_mat @ nbr + d[site] * r[site], eps)
    return out.reshape(state.z.shape[1:])


def sweep_z(data: RateDataset, state: ModelState, graph: AdjacencyGraph, rng,
            precision=None) -> np.ndarray:
    """Update every site once, one colour class at a time.

    Sites in a class share no edge, so updating a class jointly equals
    updating its members one after another.  Standard normals are drawn up
    front in site order, which makes the result independent of batching.
    """
    q_mat = sigma_eta_precision(state.spec) if precision is None else precision
    d, r = _site_data_terms(data, state)
    z = state.z.reshape(graph.n_sites, -1).copy()
    eps = rng.standard_normal(z.shape)
    eye = np.eye(z.shape[1])
    dr = d * r
    for sites, rows in zip(graph.color_classes, graph.color_adjacency):
        nbr = rows @ z
        prec = graph.neighbor_counts[sites, None, None] * q_mat + d[sites, :, None] * eye
        z[sites] = _draw_blocks(prec, nbr @ q_mat + dr[sites], eps[sites])
    return z.reshape(state.z.shape)


def intercept_absorber(data: RateDataset):
    """Matrices ``M_k`` with ``X_k M_k = E`` where ``E`` spreads a per-time shift over sites.

    Returns ``None`` if the design cannot absorb a per-(group, time) shift.
    """
    n, n_t, n_g, p = data.x.shape
    spread = np.tile(np.eye(n_t), (n, 1))
    out = np.empty((n_g, p, n_t))
    for k in range(n_g):
        x = data.x[:, :, k, :].reshape(-1, p)
        m, *_ = np.linalg.lstsq(x, spread, rcond=None)
        if not np.allclose(x @ m, spread, atol=1e-8):
            return None
        out[k] = m
    return out


def center_z(z, beta, absorber):
    """Remove per-(time, group) site means from Z and add them to beta."""
    c = z.mean(axis=0)
    return z - c, beta + np.einsum("kpt,tk->kp", absorber, c)


# ---------------------------------------------------------------- tau2

def tau2_conditional(data: RateDataset, state: ModelState):
    """Inverse-gamma ``(shape, rate)`` per group from the observed cells."""
    resid = data.y - fitted_mean(data, state.beta) - state.z
    shapes = np.empty(data.n_groups)
    rates = np.empty(data.n_groups)
    for k in range(data.n_groups):
        obs = data.observed[:, :, k]
        m = np.count_nonzero(obs)
        if m < 2:
            raise InsufficientData(f"group {k} has {m} observed cells; need at least 2")
        shapes[k] = 0.5 * (m - 1)
        rates[k] = 0.5 * np.sum(data.pop[:, :, k][obs] * resid[:, :, k][obs] ** 2)
        if rates[k] <= 0:
            raise DegenerateResiduals(f"all residuals of group {k} are zero")
    return shapes, rates


def update_tau2(data: RateDataset, state: ModelState, rng) -> np.ndarray:
    shapes, rates = tau2_conditional(data, state)
    return rates / rng.gamma(shapes)


# ---------------------------------------------------------------- G

def edge_increments(z, graph: AdjacencyGraph) -> np.ndarray:
    return z[graph.edges[:, 0]] - z[graph.edges[:, 1]]


def g_conditional(t: int, increments, spec: CovarianceSpec, prior: PriorConfig, n_sites: int,
                  scatter=None):
    """Inverse-Wishart ``(scale, df)`` of ``G_t`` given Z and rho."""
    if scatter is None:
        scatter = edge_scatter(increments, spec.rho)
    return prior.g_scale + scatter[t], prior.g_df + n_sites - 1


def separable_g_conditional(increments, spec, prior, n_sites: int):
    """Conjugate update of the single G of the separable model (all time blocks pooled)."""
    s = edge_scatter(increments, spec.rho).sum(axis=0)
    return prior.g_scale + s, prior.g_df + (n_sites - 1) * spec.n_time


def stcar_variance_conditional(increments, spec, prior, n_sites: int):
    """Inverse-gamma ``(shape, rate)`` of each group variance in the independent model."""
    s = np.diagonal(edge_scatter(increments, spec.rho), axis1=1, axis2=2).sum(axis=0)
    shape = 0.5 * (prior.g_df - spec.n_groups + 1) + 0.5 * (n_sites - 1) * spec.n_time
    rate = 0.5 * np.diagonal(prior.g_scale) + 0.5 * s
    return np.full(spec.n_groups, shape), rate


def _draw_invwishart(scale, df, rng):
    scale = 0.5 * (scale + scale.T)
    try:
        np.linalg.cholesky(scale)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("inverse-Wishart scale is not SPD") from exc
    g = np.atleast_2d(invwishart.rvs(df=df, scale=scale, random_state=rng))
    return 0.5 * (g + g.T)


def update_g(t: int, z, graph: AdjacencyGraph, spec: CovarianceSpec, prior: PriorConfig,
             rng) -> np.ndarray:
    scale, df = g_conditional(t, edge_increments(z, graph), spec, prior, graph.n_sites)
    return _draw_invwishart(scale, df, rng)


def update_covariance(variant, increments, spec, prior, n_sites, rng) -> np.ndarray:
    """New ``(n_time, n_groups, n_groups)`` stack of G matrices for ``variant``."""
    n_t = spec.n_time
    if variant == "mstcar":
        out = np.empty_like(spec.g)
        scatter = edge_scatter(increments, spec.rho)
        for t in range(n_t):
            scale, df = g_conditional(t, increments, spec, prior, n_sites, scatter)
            out[t] = _draw_invwishart(scale, df, rng)
        return out
    if variant == "separable":
        scale, df = separable_g_conditional(increments, spec, prior, n_sites)
        return np.broadcast_to(_draw_invwishart(scale, df, rng), spec.g.shape).copy()
    shape, rate = stcar_variance_conditional(increments, spec, prior, n_sites)
    var = rate / rng.gamma(shape)
    return np.broadcast_to(np.diag(var), spec.g.shape).copy()


# ---------------------------------------------------------------- rho

def rho_log_target(rho, increments, spec: CovarianceSpec, prior: PriorConfig, n_sites: int,
                   variant: str = "mstcar") -> float:
    """Log of the rho-dependent part of the joint: CAR prior terms plus Beta prior."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0) or np.any(rho >= 1):
        return -np.inf
    logdet_r = (spec.n_time - 1) * np.log1p(-rho * rho).sum()
    quad = quadratic_from_scatter(edge_scatter(increments, rho), spec.g)
    lp = -0.5 * (n_sites - 1) * logdet_r - 0.5 * quad
    if variant == "separable":
        return float(lp + log_beta_pdf(rho[0], prior.rho_a, prior.rho_b))
    return float(lp + log_beta_pdf(rho, prior.rho_a, prior.rho_b).sum())


def rho_mh_step(rho, which, increments, spec, prior, n_sites, variant, sd, rng,
                current_target=None):
    """One logit-scale random-walk step on the rho entries selected by ``which``.

    Returns ``(new_rho, accepted, target_at_new_rho)``.
    """
    if current_target is None:
        current_target = rho_log_target(rho, increments, spec, prior, n_sites, variant)
    cur = float(rho[which][0])
    eps = rng.standard_normal()
    log_u = np.log(rng.uniform())
    prop_val = float(expit(logit(cur) + sd * eps))
    if not 0.0 < prop_val < 1.0:
        return rho, False, current_target
    prop = rho.copy()
    prop[which] = prop_val
    prop_target = rho_log_target(prop, increments, spec, prior, n_sites, variant)
    log_alpha = (
        prop_target - current_target
        + np.log(prop_val * (1 - prop_val)) - np.log(cur * (1 - cur))
    )
    if np.isfinite(log_alpha) and log_u < log_alpha:
        return prop, True, prop_target
    return rho, False, current_target


def update_rho(k: int, z, graph: AdjacencyGraph, spec: CovarianceSpec, prior: PriorConfig,
               rng, sd: float = 0.5, variant: str = "mstcar"):
    """MH update of ``rho_k`` (all groups jointly for the separable variant)."""
    which = np.arange(spec.n_groups) if variant == "separable" else np.array([k])
    rho, accepted, _ = rho_mh_step(np.array(spec.rho), which, edge_increments(z, graph), spec,
                                   prior, graph.n_sites, variant, sd, rng)
    return rho[k], accepted


def _rho_blocks(variant, n_groups):
    if variant == "separable":
        return [np.arange(n_groups)]
    return [np.array([k]) for k in range(n_groups)]


# ---------------------------------------------------------------- Y_u

def impute_missing(data: RateDataset, state: ModelState, rng) -> np.ndarray:
    """Draw every unobserved rate from its likelihood with the sentinel population."""
    idx = data.missing_index
    mu = (fitted_mean(data, state.beta) + state.z)[idx]
    sd = np.sqrt(state.spec.tau2[idx[2]] / data.pop[idx])
    return mu + sd * rng.standard_normal(mu.shape)


# ---------------------------------------------------------------- chain

def project_spec(spec: CovarianceSpec, variant: str) -> CovarianceSpec:
    """Map any spec onto the constraint set of ``variant``."""
    if variant == "separable":
        return CovarianceSpec.separable(spec.g.mean(axis=0), spec.rho.mean(), spec.n_time,
                                        spec.tau2)
    if variant == "stcar_independent":
        var = np.diagonal(spec.g, axis1=1, axis2=2).mean(axis=0)
        return spec.replace(g=np.broadcast_to(np.diag(var), spec.g.shape))
    return spec


def initial_state(data: RateDataset, prior: PriorConfig, variant: str = "mstcar") -> ModelState:
    """Weighted least squares for beta, Z = 0, prior-mean G, rho = 0.8."""
    n_g, p = data.n_groups, data.n_covariates
    beta = np.zeros((n_g, p))
    tau2 = np.ones(n_g)
    for k in range(n_g):
        obs = data.observed[:, :, k]
        x = data.x[:, :, k, :][obs]
        w = data.pop[:, :, k][obs]
        y = data.y[:, :, k][obs]
        xtw = x.T * w
        try:
            beta[k] = np.linalg.solve(xtw @ x, xtw @ y)
        except np.linalg.LinAlgError as exc:
            raise SingularDesign(f"design for group {k} is rank deficient on observed cells") from exc
        resid = y - x @ beta[k]
        tau2[k] = max(np.mean(w * resid ** 2), 1e-8)
    df, scale = prior.g_df, prior.g_scale
    g0 = scale / (df - n_g - 1) if df > n_g + 1 else np.eye(n_g)
    spec = CovarianceSpec(np.broadcast_to(g0, (data.n_time, n_g, n_g)), np.full(n_g, 0.8), tau2)
    state = ModelState(beta, np.zeros(data.y.shape), project_spec(spec, variant),
                       np.zeros(np.count_nonzero(~data.observed)))
    return state.replace(y_missing=fitted_mean(data, beta)[data.missing_index])


def _check_design(data: RateDataset):
    for k in range(data.n_groups):
        x = data.x[:, :, k, :][data.observed[:, :, k]]
        if np.linalg.matrix_rank(x) < data.n_covariates:
            raise SingularDesign(f"design for group {k} is rank deficient on observed cells")


@dataclass(eq=False)
class PosteriorSamples:
    """Thinned post-burn-in draws of one chain."""

    variant: str
    beta: np.ndarray
    z: np.ndarray
    g: np.ndarray
    rho: np.ndarray
    tau2: np.ndarray
    y_missing: np.ndarray
    iterations: np.ndarray
    rho_acceptance: np.ndarray
    rho_proposal_sd: np.ndarray
    config: dict = field(default_factory=dict)

    _ARRAYS = ("beta", "z", "g", "rho", "tau2", "y_missing", "iterations",
               "rho_acceptance", "rho_proposal_sd")

    @property
    def n_draws(self) -> int:
        return len(self.iterations)

    def spec(self, d: int) -> CovarianceSpec:
        return CovarianceSpec(self.g[d], self.rho[d], self.tau2[d])

    def state(self, d: int) -> ModelState:
        return ModelState(self.beta[d], self.z[d], self.spec(d), self.y_missing[d])

    def save(self, path) -> None:
        arrays = {name: getattr(self, name) for name in self._ARRAYS}
        np.savez_compressed(path, variant=self.variant, config=json.dumps(self.config),
                            **arrays)

    @classmethod
    def load(cls, path) -> "PosteriorSamples":
        with np.load(path, allow_pickle=False) as f:
            arrays = {name: f[name] for name in cls._ARRAYS}
            return cls(variant=str(f["variant"]), config=json.loads(str(f["config"])), **arrays)

    def identical_to(self, other: "PosteriorSamples") -> bool:
        return self.variant == other.variant and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in self._ARRAYS
        )


class _Chain:
    """Mutable chain bookkeeping; everything a checkpoint needs lives here."""

    def __init__(self, data, graph, prior, config, state):
        self.data, self.graph, self.prior, self.config = data, graph, prior, config
        self.state = state
        self.rng = np.random.default_rng(config.seed)
        self.iteration = 0
        self.blocks = _rho_blocks(config.variant, data.n_groups)
        self.sd = np.full(len(self.blocks), config.rho_proposal_sd)
        self.window_accepts = np.zeros(len(self.blocks))
        self.kept_accepts = np.zeros(len(self.blocks))
        self.draws = {name: [] for name in ("beta", "z", "g", "rho", "tau2", "y_missing")}
        self.kept_iterations = []
        self.absorber = None
        if config.center_z:
            self.absorber = intercept_absorber(data)
            if self.absorber is None:
                raise ValueError("center_z needs a design that contains per-(group, time) "
                                 "intercepts; disable center_z for this design")

    def step(self):
        cfg, data, graph, prior = self.config, self.data, self.graph, self.prior
        st, rng = self.state, self.rng
        st = st.replace(beta=update_beta(data, st, rng))
        z = sweep_z(data, st, graph, rng, precision=sigma_eta_precision(st.spec))
        beta = st.beta
        if self.absorber is not None:
            z, beta = center_z(z, beta, self.absorber)
        st = st.replace(z=z, beta=beta)
        st = st.replace(spec=st.spec.replace(tau2=update_tau2(data, st, rng)))
        inc = edge_increments(st.z, graph)
        g = update_covariance(cfg.variant, inc, st.spec, prior, graph.n_sites, rng)
        st = st.replace(spec=st.spec.replace(g=g))
        rho = np.array(st.spec.rho)
        accepted = np.zeros(len(self.blocks))
        target = None
        for b, which in enumerate(self.blocks):
            rho, accepted[b], target = rho_mh_step(rho, which, inc, st.spec, prior,
                                                   graph.n_sites, cfg.variant, self.sd[b],
                                                   rng, target)
        st = st.replace(spec=st.spec.replace(rho=rho))
        st = st.replace(y_missing=impute_missing(data, st, rng))
        self.state = st
        self.iteration += 1
        return accepted

    def run(self):
        cfg = self.config
        while self.iteration < cfg.n_iterations:
            try:
                accepted = self.step()
            except (MSTCARError, np.linalg.LinAlgError, ValueError) as exc:
                raise SamplerAbort(self.iteration + 1, exc) from exc
            it = self.iteration
            if it <= cfg.burn_in:
                self.window_accepts += accepted
                if it % cfg.tune_interval == 0:
                    rate = self.window_accepts / cfg.tune_interval
                    self.sd = np.clip(self.sd * np.exp(2.0 * (rate - cfg.target_accept)),
                                      1e-3, 10.0)
                    self.window_accepts[:] = 0
            else:
                self.kept_accepts += accepted
                if (it - cfg.burn_in) % cfg.thin == 0:
                    self._store(it)
            if cfg.checkpoint_every and cfg.checkpoint_path and it % cfg.checkpoint_every == 0:
                self.save_checkpoint(cfg.checkpoint_path)
        return self.samples()

    def _store(self, it):
        st = self.state
        for name, val in (("beta", st.beta), ("z", st.z), ("g", st.spec.g),
                          ("rho", st.spec.rho), ("tau2", st.spec.tau2),
                          ("y_missing", st.y_missing)):
            self.draws[name].append(np.array(val))
        self.kept_iterations.append(it)

    def samples(self) -> PosteriorSamples:
        cfg = self.config
        n_kept = cfg.n_iterations - cfg.burn_in
        shapes = {"beta": self.state.beta.shape, "z": self.state.z.shape,
                  "g": self.state.spec.g.shape, "rho": self.state.spec.rho.shape,
                  "tau2": self.state.spec.tau2.shape, "y_missing": self.state.y_missing.shape}
        arrays = {
            name: np.array(vals) if vals else np.empty((0,) + shapes[name])
            for name, vals in self.draws.items()
        }
        return PosteriorSamples(
            variant=cfg.variant,
            iterations=np.array(self.kept_iterations, dtype=np.int64),
            rho_acceptance=self.kept_accepts / max(n_kept, 1),
            rho_proposal_sd=self.sd.copy(),
            config=asdict(cfg),
            **arrays,
        )

    def save_checkpoint(self, path):
        payload = {
            "config": asdict(self.config),
            "iteration": self.iteration,
            "state": self.state,
            "rng": self.rng.bit_generator.state,
            "sd": self.sd,
            "window_accepts": self.window_accepts,
            "kept_accepts": self.kept_accepts,
            "draws": self.draws,
            "kept_iterations": self.kept_iterations,
        }
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)
        os.replace(tmp, path)

    def load_checkpoint(self, path):
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
        saved = dict(payload["config"])
        current = asdict(self.config)
        for key in ("n_iterations", "checkpoint_every", "checkpoint_path"):
            saved.pop(key)
            current.pop(key)
        if saved != current:
            raise ValueError("checkpoint was written with a different sampler configuration")
        self.iteration = payload["iteration"]
        self.state = payload["state"]
        self.rng.bit_generator.state = payload["rng"]
        self.sd = payload["sd"]
        self.window_accepts = payload["window_accepts"]
        self.kept_accepts = payload["kept_accepts"]
        self.draws = payload["draws"]
        self.kept_iterations = payload["kept_iterations"]


def run_chain(data: RateDataset, graph: AdjacencyGraph, prior: PriorConfig | None = None,
              config: SamplerConfig | None = None, init: ModelState | None = None,
              resume_from=None) -> PosteriorSamples:
    """Run one chain and return its thinned post-burn-in draws.

    ``init`` (e.g. the simulation truth) is projected onto the variant's
    constraints; otherwise :func:`initial_state` is used.  ``resume_from``
    names a checkpoint written by an earlier run with the same configuration.
    """
    config = config or SamplerConfig()
    prior = prior or PriorConfig.default(data.n_groups)
    if data.n_sites != graph.n_sites:
        raise ValueError(f"data has {data.n_sites} sites, graph has {graph.n_sites}")
    _check_design(data)
    if init is None:
        state = initial_state(data, prior, config.variant)
    else:
        state = init.replace(spec=project_spec(init.spec, config.variant))
    state.check(data)
    chain = _Chain(data, graph, prior, config, state)
    if resume_from is not None:
        chain.load_checkpoint(resume_from)
        log.info("resumed chain at iteration %d", chain.iteration)
    return chain.run()
