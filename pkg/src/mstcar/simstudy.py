"""Simulation studies: draw a covariance truth, simulate replicate datasets
from the intrinsic MSTCAR prior and score the fitted models' coverage and DIC.

Seeds: ``SeedSequence(design.seed)`` has child 0 for the truth and child r
for replicate r; a replicate's child 0 drives data generation and child
``i + 1`` seeds the chain of the i-th fitted variant.  Results therefore do not depend on the
order in which replicates are processed.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import invwishart

from .covariance import CovarianceSpec, mix_increment
from .diagnostics import IntervalSummary, dic, imputation_zscore, interval_summary
from .errors import RankDeficiency
from .graph import AdjacencyGraph, SpectralBasis, read_adjacency_csv, spectral_basis
from .model import ModelState, PriorConfig, RateDataset, intercept_design
from .sampler import SamplerConfig, project_spec, run_chain

log = logging.getLogger(__name__)

PERSONS_PER_UNIT = 1e5


@dataclass
class SimDesign:
    """Everything needed to generate a study.

    ``population_mode`` is ``{"mode": "equal", "n": value}`` with ``n`` in
    units of 100,000 persons, or ``{"mode": "table", "path": csv}`` with a
    ``site,group,time,population`` CSV of raw person counts (1-based indices)
    and an optional ``"divisor"`` (persons per model unit, default 100,000).
    ``prior`` holds the hyperparameters used when fitting; by default the
    inverse-Wishart prior equals the truth-generating distribution.
    """

    graph: AdjacencyGraph
    n_groups: int = 3
    n_time: int = 10
    rho_truth: tuple = (0.8, 0.85, 0.90)
    g_truth_df: float | None = None
    g_truth_scale: np.ndarray | None = None
    tau2_truth: tuple | None = None
    population_mode: dict = field(default_factory=lambda: {"mode": "equal", "n": 1.0})
    n_replicates: int = 100
    seed: int = 0
    prior: PriorConfig | None = None
    graph_path: str | None = None

    def __post_init__(self):
        n_g = self.n_groups
        if self.g_truth_df is None:
            self.g_truth_df = 2.0 * n_g + 1
        if self.g_truth_scale is None:
            self.g_truth_scale = 20.0 * n_g * np.eye(n_g)
        self.g_truth_scale = np.asarray(self.g_truth_scale, dtype=float)
        if self.tau2_truth is None:
            self.tau2_truth = (1.0,) * n_g
        if len(self.rho_truth) != n_g or len(self.tau2_truth) != n_g:
            raise ValueError("rho_truth and tau2_truth need one entry per group")
        if self.g_truth_scale.shape != (n_g, n_g):
            raise ValueError("g_truth_scale must be n_groups x n_groups")
        if np.any(np.asarray(self.tau2_truth) < 0):
            raise ValueError("tau2_truth must be non-negative")
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be >= 1")
        if self.population_mode.get("mode") not in ("equal", "table"):
            raise ValueError("population_mode must be 'equal' or 'table'")
        if self.prior is None:
            self.prior = PriorConfig(9.0, 1.0, self.g_truth_scale, self.g_truth_df)

    def to_dict(self) -> dict:
        return {
            "graph_path": self.graph_path,
            "n_sites": self.graph.n_sites,
            "n_groups": self.n_groups,
            "n_time": self.n_time,
            "rho_truth": list(self.rho_truth),
            "g_truth_df": self.g_truth_df,
            "g_truth_scale": self.g_truth_scale.tolist(),
            "tau2_truth": list(self.tau2_truth),
            "population_mode": self.population_mode,
            "n_replicates": self.n_replicates,
            "seed": self.seed,
            "prior": {"rho_a": self.prior.rho_a, "rho_b": self.prior.rho_b,
                      "g_scale": self.prior.g_scale.tolist(), "g_df": self.prior.g_df},
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "SimDesign":
        d = dict(d)
        path = Path(base_dir, d.pop("graph_path"))
        n_sites = d.pop("n_sites", None)
        graph = read_adjacency_csv(path, n_sites)
        prior = d.pop("prior", None)
        if prior is not None:
            prior = PriorConfig(**prior)
        pm = dict(d.pop("population_mode", {"mode": "equal", "n": 1.0}))
        if pm.get("mode") == "table":
            pm["path"] = str(Path(base_dir, pm["path"]))
        return cls(graph=graph, graph_path=str(path), prior=prior, population_mode=pm,
                   **{k: tuple(v) if isinstance(v, list) and k in ("rho_truth", "tau2_truth")
                      else v for k, v in d.items()})

    @classmethod
    def from_json(cls, path) -> "SimDesign":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)


def draw_truth(design: SimDesign, rng) -> CovarianceSpec:
    """One G_t per time point from the truth inverse Wishart; rho and tau2 from the design."""
    g = np.array([
        np.atleast_2d(invwishart.rvs(df=design.g_truth_df, scale=design.g_truth_scale,
                                     random_state=rng))
        for _ in range(design.n_time)
    ])
    g = 0.5 * (g + np.swapaxes(g, 1, 2))
    return CovarianceSpec(g, design.rho_truth, design.tau2_truth)


def sample_field(truth: CovarianceSpec, basis: SpectralBasis, rng) -> np.ndarray:
    """Draw Z from the intrinsic MSTCAR prior using the Laplacian eigenbasis.

    For each non-null eigenpair ``(lam, v)`` a latent ``eta ~ N(0, Sigma_eta)``
    is drawn (as ``A`` applied to ``N(0, G_t)`` blocks) and ``v kron eta/sqrt(lam)``
    accumulated.  The constant eigenvector is skipped, so every
    (time, group) slice sums to zero over sites.
    """
    keep = ~basis.null_mask
    if np.count_nonzero(~keep) != 1:
        raise RankDeficiency(f"expected one null eigenvalue, found {np.count_nonzero(~keep)}")
    lam = basis.eigenvalues[keep]
    vec = basis.eigenvectors[:, keep]
    n_lat = len(lam)
    chol = np.linalg.cholesky(truth.g)  # (t, k, k)
    white = rng.standard_normal((n_lat, truth.n_time, truth.n_groups))
    v = np.einsum("tkl,itl->itk", chol, white)
    eta = mix_increment(v, truth.rho)
    return np.einsum("si,itk->stk", vec / np.sqrt(lam), eta)


def equal_populations(n_sites, n_time, n_groups, n: float) -> np.ndarray:
    return np.full((n_sites, n_time, n_groups), float(n))


def read_population_table(path, n_sites, n_time, n_groups,
                          divisor: float = PERSONS_PER_UNIT) -> np.ndarray:
    """Read a ``site,group,time,population`` CSV of raw persons into model units
    (persons / ``divisor``; the default gives units of 100,000)."""
    pop = np.full((n_sites, n_time, n_groups), np.nan)
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            pop[int(r["site"]) - 1, int(r["time"]) - 1, int(r["group"]) - 1] = float(
                r["population"])
    if np.any(np.isnan(pop)):
        raise ValueError(f"population table {path} does not cover every cell")
    return pop / divisor


def synthetic_population_table(n_sites, n_time, n_groups, seed=0, low=1e2, high=1e4,
                               zero_group=None, zero_fraction=0.0) -> np.ndarray:
    """Log-uniform raw person counts per (site, group), constant in time.

    ``zero_fraction`` of the sites get zero population in ``zero_group``
    (default: the last group) at every time point.
    """
    rng = np.random.default_rng(seed)
    base = np.exp(rng.uniform(np.log(low), np.log(high), size=(n_sites, 1, n_groups)))
    pop = np.round(np.broadcast_to(base, (n_sites, n_time, n_groups))).copy()
    if zero_fraction > 0:
        k = n_groups - 1 if zero_group is None else zero_group
        n_zero = int(round(zero_fraction * n_sites))
        sites = rng.choice(n_sites, size=n_zero, replace=False)
        pop[sites, :, k] = 0.0
    return pop


def write_population_table(path, pop_persons) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site", "group", "time", "population"])
        for s, t, k in np.ndindex(pop_persons.shape):
            w.writerow([s + 1, k + 1, t + 1, int(pop_persons[s, t, k])])


def design_populations(design: SimDesign) -> np.ndarray:
    """Cell populations in units of 100,000 (zeros mark cells that will be missing)."""
    shape = (design.graph.n_sites, design.n_time, design.n_groups)
    pm = design.population_mode
    if pm["mode"] == "equal":
        return equal_populations(*shape, pm.get("n", 1.0))
    return read_population_table(pm["path"], *shape, divisor=pm.get("divisor", PERSONS_PER_UNIT))


def generate_replicate(design: SimDesign, truth: CovarianceSpec, field, rng,
                       populations=None) -> RateDataset:
    """Rates ``y = z + noise`` with noise variance ``tau2_k / n``; zero-population cells go missing.

    The noise variances come from ``design.tau2_truth`` (which may be zero,
    unlike a fitted spec); ``truth`` is accepted for symmetry with the other
    generation steps.
    """
    pop = design_populations(design) if populations is None else np.asarray(populations, float)
    safe = np.where(pop > 0, pop, 1.0)
    tau2 = np.asarray(design.tau2_truth, dtype=float)
    noise = rng.standard_normal(np.shape(field)) * np.sqrt(tau2 / safe)
    y = np.where(pop > 0, field + noise, np.nan)
    return RateDataset.from_arrays(y, pop)


def truth_state(data: RateDataset, truth: CovarianceSpec, field) -> ModelState:
    """Model state at the simulation truth (all regression coefficients zero)."""
    beta = np.zeros((data.n_groups, data.n_covariates))
    return ModelState(beta, np.array(field), truth, np.asarray(field)[data.missing_index])


@dataclass
class CoverageReport:
    coverage: dict          # variant -> family -> percent
    tau2_by_group: dict     # variant -> list of per-group percents
    dic_wins: dict          # "mstcar_vs_separable" -> {"mstcar": n, "separable": n}
    mean_relative_dic_improvement: float | None
    n_failures: int
    records: list

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, default=_jsonable))

    def records_to_csv(self, path) -> None:
        keys = sorted({k for r in self.records for k in r})
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(self.records)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


COVERAGE_FAMILIES = ("z", "g_diag", "g_offdiag", "tau2", "rho")


def coverage_indicators(samples, truth: CovarianceSpec, field, stub: bool = False) -> dict:
    """Boolean arrays of interval-contains-truth per parameter family.

    ``stub`` replaces every interval by ``(-inf, inf)``, a self-check of the
    scoring path (everything must then be covered).
    """
    def covers(family, value):
        summ = interval_summary(samples, family)
        if stub:
            summ = IntervalSummary(summ.median, np.full_like(summ.lower, -np.inf),
                                   np.full_like(summ.upper, np.inf))
        return summ.covers(value)

    out = {"z": covers("z", field)}
    g = covers("g", truth.g)
    iu = np.triu_indices(truth.n_groups, 1)
    out["g_diag"] = np.diagonal(g, axis1=1, axis2=2)
    out["g_offdiag"] = g[:, iu[0], iu[1]]
    out["tau2"] = covers("tau2", truth.tau2)
    out["rho"] = covers("rho", truth.rho)
    return out


def child_seed(seq: np.random.SeedSequence, i: int) -> np.random.SeedSequence:
    """The ``i``-th spawned child of ``seq``, independent of spawn history."""
    return np.random.SeedSequence(seq.entropy, spawn_key=tuple(seq.spawn_key) + (i,))


def study_seeds(design: SimDesign):
    """``(truth_seed, [replicate_seed, ...])`` derived from ``design.seed``."""
    root = np.random.SeedSequence(design.seed)
    return child_seed(root, 0), [child_seed(root, r + 1) for r in range(design.n_replicates)]


def simulate_replicate(design: SimDesign, truth: CovarianceSpec, seed_seq,
                       basis: SpectralBasis | None = None):
    """Field and dataset of one replicate; uses child 0 of the replicate's seed."""
    rng = np.random.default_rng(child_seed(seed_seq, 0))
    basis = basis or spectral_basis(design.graph)
    field = sample_field(truth, basis, rng)
    return field, generate_replicate(design, truth, field, rng)


def chain_seed(seed_seq, index: int) -> int:
    """Sampler seed for the ``index``-th fitted variant of a replicate (children 1, 2, ...)."""
    return int(child_seed(seed_seq, index + 1).generate_state(1)[0])


def fit_replicate(design: SimDesign, truth: CovarianceSpec, replicate: int,
                  seed_seq: np.random.SeedSequence, sampler_config: SamplerConfig,
                  variants=("mstcar", "separable"), truth_init: bool = True,
                  basis: SpectralBasis | None = None):
    """Generate one replicate, fit each variant and return ``(record, indicators)``."""
    field, data = simulate_replicate(design, truth, seed_seq, basis)
    init = truth_state(data, truth, field) if truth_init else None
    record = {"replicate": replicate, "n_missing": int(np.count_nonzero(~data.observed))}
    indicators = {}
    for i, variant in enumerate(variants):
        cfg = SamplerConfig(**{**asdict(sampler_config), "variant": variant,
                               "seed": chain_seed(seed_seq, i),
                               "checkpoint_every": 0, "checkpoint_path": None})
        samples = run_chain(data, design.graph, design.prior, cfg, init=init)
        record.update(score_fit(variant, samples, data, truth, field, indicators))
    return record, indicators


def score_fit(variant, samples, data, truth, field, indicators=None, stub=False) -> dict:
    """Per-replicate record entries for one fitted variant."""
    fit_dic = dic(samples, data)
    ind = coverage_indicators(samples, truth, field, stub)
    if indicators is not None:
        indicators[variant] = ind
    rec = {f"{variant}_dic": fit_dic.dic, f"{variant}_p_d": fit_dic.p_d}
    for fam, arr in ind.items():
        rec[f"{variant}_cov_{fam}"] = float(100 * np.mean(arr))
    rec[f"{variant}_rho_accept"] = float(np.mean(samples.rho_acceptance))
    if not data.observed.all():
        rec[f"{variant}_imputation_z"] = imputation_zscore(samples, data)
    return rec


def _fit_job(args):
    design, truth, rep, seq, cfg, variants, truth_init = args
    try:
        return fit_replicate(design, truth, rep, seq, cfg, variants, truth_init)
    except Exception as exc:  # per-replicate failures are recorded, not fatal
        log.warning("replicate %d failed: %r", rep, exc)
        return {"replicate": rep, "error": repr(exc)}, None


def run_study(design: SimDesign, sampler_config: SamplerConfig,
              variants=("mstcar", "separable"), truth_init: bool = True,
              n_workers: int = 1) -> CoverageReport:
    """Fit every replicate and aggregate coverage and DIC comparisons."""
    truth_seq, rep_seqs = study_seeds(design)
    truth = draw_truth(design, np.random.default_rng(truth_seq))
    jobs = [(design, truth, r + 1, seq, sampler_config, tuple(variants), truth_init)
            for r, seq in enumerate(rep_seqs)]
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_fit_job, jobs))
    else:
        results = [_fit_job(j) for j in jobs]
    return aggregate(results, variants)


def aggregate(results, variants) -> CoverageReport:
    records = [r for r, _ in results]
    ok = [ind for _, ind in results if ind is not None]
    coverage, tau2_by_group = {}, {}
    for v in variants:
        coverage[v] = {
            fam: float(100 * np.mean(np.concatenate([np.ravel(i[v][fam]) for i in ok])))
            for fam in COVERAGE_FAMILIES
        } if ok else {}
        tau2_by_group[v] = (100 * np.mean([i[v]["tau2"] for i in ok], axis=0)).tolist() if ok else []
    wins, rel = {}, None
    if "mstcar" in variants and "separable" in variants:
        good = [r for r in records if "error" not in r]
        m = sum(r["mstcar_dic"] < r["separable_dic"] for r in good)
        wins["mstcar_vs_separable"] = {"mstcar": m, "separable": len(good) - m}
        if good:
            rel = float(np.mean([(r["separable_dic"] - r["mstcar_dic"]) / abs(r["separable_dic"])
                                 for r in good]))
    return CoverageReport(coverage, tau2_by_group, wins, rel,
                          sum("error" in r for r in records), records)

