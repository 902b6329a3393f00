"""Command-line interface: ``mstcar simulate|fit|coverage|summarize``.

Every option can also be set through an environment variable named
``MSTCAR_<COMMAND>_<OPTION>`` (e.g. ``MSTCAR_FIT_SEED=3``).

Exit codes: 0 success, 2 configuration error, 3 data-generation failure,
4 sampler abort.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import click
import numpy as np

from . import io
from .diagnostics import (dic, nationwide_trend, sigma_eta_summary, summary_rows)
from .errors import MSTCARError, SamplerAbort
from .graph import read_adjacency_csv, read_site_map, spectral_basis
from .model import PriorConfig, RateDataset, VARIANTS
from .sampler import PosteriorSamples, SamplerConfig, run_chain
from .simstudy import (SimDesign, aggregate, draw_truth, read_population_table,
                       run_study, score_fit, simulate_replicate, study_seeds, truth_state)

log = logging.getLogger("mstcar")

EXIT_CONFIG, EXIT_GENERATION, EXIT_SAMPLER = 2, 3, 4
LOCK_NAME = ".mstcar.lock"
VARIANT_CHOICES = ("mstcar", "separable", "stcar", "all")


class Failure(click.ClickException):
    def __init__(self, message, code):
        super().__init__(message)
        self.exit_code = code


@contextmanager
def output_lock(out_dir: Path):
    """One command instance per output directory (O_EXCL lockfile)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise Failure(f"{out_dir} is locked by another run (remove {lock} if stale)",
                      EXIT_CONFIG) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


@contextmanager
def config_errors():
    """Translate input problems into exit code 2."""
    try:
        yield
    except (MSTCARError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        if isinstance(exc, SamplerAbort):
            raise
        raise Failure(f"configuration error: {exc}", EXIT_CONFIG) from exc


def variant_list(variant: str) -> list[str]:
    if variant == "all":
        return list(VARIANTS)
    return ["stcar_independent" if variant == "stcar" else variant]


def short_name(variant: str) -> str:
    return "stcar" if variant == "stcar_independent" else variant


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose):
    """Multivariate space-time CAR models: simulation, fitting and summaries."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")


# ------------------------------------------------------------------ simulate

def _field_csv(path, field):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site_id", "group", "time", "z"])
        for s, k, t in np.ndindex(field.shape[0], field.shape[2], field.shape[1]):
            w.writerow([s + 1, k + 1, t + 1, repr(float(field[s, t, k]))])


def _read_field_csv(path, shape):
    z = np.full(shape, np.nan)
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            z[int(r["site_id"]) - 1, int(r["time"]) - 1, int(r["group"]) - 1] = float(r["z"])
    if np.any(np.isnan(z)):
        raise ValueError(f"{path} does not cover every cell")
    return z


@main.command()
@click.argument("design_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="Override the design seed.")
@click.option("--replicates", type=int, default=None, help="Override the number of replicates.")
def simulate(design_file, out_dir, seed, replicates):
    """Generate replicate datasets, the covariance truth and the latent fields.

    Writes design.json, truth.json, replicate_NNN.csv and field_NNN.csv.
    """
    with config_errors():
        design = SimDesign.from_json(design_file)
        if seed is not None:
            design.seed = seed
        if replicates is not None:
            design.n_replicates = replicates
        if design.n_replicates < 1:
            raise ValueError("replicates must be >= 1")
    out = Path(out_dir)
    with output_lock(out):
        try:
            truth_seq, rep_seqs = study_seeds(design)
            truth = draw_truth(design, np.random.default_rng(truth_seq))
            basis = spectral_basis(design.graph)
            io.write_truth(out / "truth.json", truth)
            for r, seq in enumerate(rep_seqs, start=1):
                field, data = simulate_replicate(design, truth, seq, basis)
                io.write_rate_csv(out / f"replicate_{r:03d}.csv", data)
                _field_csv(out / f"field_{r:03d}.csv", field)
        except MSTCARError as exc:
            raise Failure(f"generation failed: {exc}", EXIT_GENERATION) from exc
        d = design.to_dict()
        d["graph_path"] = os.path.relpath(Path(design.graph_path).resolve(), out.resolve())
        if design.population_mode.get("mode") == "table":
            d["population_mode"]["path"] = os.path.relpath(
                Path(design.population_mode["path"]).resolve(), out.resolve())
        (out / "design.json").write_text(json.dumps(d, indent=2))
    click.echo(f"wrote {design.n_replicates} replicate(s) to {out}")


# ----------------------------------------------------------------------- fit

def sampler_options(f):
    opts = [
        click.option("--variant", type=click.Choice(VARIANT_CHOICES), default="mstcar",
                     show_default=True),
        click.option("--n-iterations", type=int, default=6000, show_default=True),
        click.option("--burn-in", type=int, default=1000, show_default=True),
        click.option("--thin", type=int, default=10, show_default=True),
        click.option("--rho-proposal-sd", type=float, default=0.5, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--rho-a", type=float, default=9.0, show_default=True),
        click.option("--rho-b", type=float, default=1.0, show_default=True),
        click.option("--g-scale", type=float, default=None,
                     help="Inverse-Wishart scale multiplier c (scale = c*I); default n_groups."),
        click.option("--g-df", type=float, default=None,
                     help="Inverse-Wishart degrees of freedom; default n_groups + 2."),
        click.option("--threads", type=int, default=1, show_default=True,
                     help="Worker processes for independent chains/replicates."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _prior(n_groups, rho_a, rho_b, g_scale, g_df) -> PriorConfig:
    kw = {"rho_a": rho_a, "rho_b": rho_b}
    if g_scale is not None:
        kw["g_scale"] = g_scale * np.eye(n_groups)
    if g_df is not None:
        kw["g_df"] = g_df
    return PriorConfig.default(n_groups, **kw)


def _fit_one(args):
    data, graph, prior, cfg, init, resume = args
    return run_chain(data, graph, prior, cfg, init=init, resume_from=resume)


def write_fit_outputs(out: Path, variant: str, samples: PosteriorSamples, data: RateDataset,
                      populations=None, site_ids=None):
    """Samples store plus interval, Sigma_eta and trend CSVs for one variant."""
    name = short_name(variant)
    samples.save(out / f"samples_{name}.npz")
    io.write_summary_csv(out / f"summary_{name}.csv", summary_rows(samples, data))
    _sigma_csv(out / f"sigma_eta_{name}.csv", sigma_eta_summary(samples))
    _trend_csv(out / f"trend_{name}.csv", samples, data, populations)


def _sigma_csv(path, summ):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "time", "group", "group2", "median", "lo95", "hi95"])
        d, c = summ["diag"], summ["corr"]
        for t, k in np.ndindex(d.median.shape):
            w.writerow(["variance", t + 1, k + 1, k + 1, repr(float(d.median[t, k])),
                        repr(float(d.lower[t, k])), repr(float(d.upper[t, k]))])
        for t, k, j in np.ndindex(c.median.shape):
            if k < j:
                w.writerow(["correlation", t + 1, k + 1, j + 1, repr(float(c.median[t, k, j])),
                            repr(float(c.lower[t, k, j])), repr(float(c.upper[t, k, j]))])


def _trend_csv(path, samples, data, populations):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "time", "median", "lo95", "hi95"])
        for k in range(data.n_groups):
            tr = nationwide_trend(samples, data, k, populations)
            for t in range(data.n_time):
                w.writerow([k + 1, t + 1, repr(float(tr.median[t])), repr(float(tr.lower[t])),
                            repr(float(tr.upper[t]))])


@main.command()
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Long-format rate CSV.")
@click.option("--adjacency", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--site-map", type=click.Path(exists=True, dir_okay=False), default=None,
              help="CSV site_id,index mapping data site ids to 1-based graph indices.")
@click.option("--population", type=click.Path(exists=True, dir_okay=False), default=None,
              help="site,group,time,population CSV used to weight trends.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@sampler_options
@click.option("--truth", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Truth JSON to initialise the chain at (simulation only).")
@click.option("--field", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Field CSV paired with --truth.")
@click.option("--checkpoint-every", type=int, default=0, show_default=True)
@click.option("--resume", is_flag=True, help="Continue from checkpoints in the output directory.")
def fit(data_path, adjacency, site_map, population, out_dir, variant, n_iterations, burn_in,
        thin, rho_proposal_sd, seed, rho_a, rho_b, g_scale, g_df, threads, truth, field,
        checkpoint_every, resume):
    """Fit one or all model variants and write samples, summaries and DIC.

    With ``--variant all`` the chains are seeded with ``seed``, ``seed + 1``
    and ``seed + 2`` in the order mstcar, separable, stcar.
    """
    out = Path(out_dir)
    with config_errors():
        smap = read_site_map(site_map) if site_map else None
        graph = read_adjacency_csv(adjacency)
        data = io.read_rate_csv(data_path, graph.n_sites, smap)
        pops = (read_population_table(population, data.n_sites, data.n_time, data.n_groups)
                if population else None)
        prior = _prior(data.n_groups, rho_a, rho_b, g_scale, g_df)
        init = None
        if truth:
            if not field:
                raise ValueError("--truth needs --field")
            spec, _ = io.read_truth(truth)
            init = truth_state(data, spec, _read_field_csv(field, data.y.shape))
        variants = variant_list(variant)
        jobs = []
        for i, v in enumerate(variants):
            ckpt = out / f"checkpoint_{short_name(v)}.pkl"
            cfg = SamplerConfig(n_iterations=n_iterations, burn_in=burn_in, thin=thin,
                                variant=v, rho_proposal_sd=rho_proposal_sd, seed=seed + i,
                                checkpoint_every=checkpoint_every,
                                checkpoint_path=str(ckpt) if checkpoint_every else None)
            if resume and not ckpt.exists():
                raise ValueError(f"--resume given but {ckpt} does not exist")
            jobs.append((data, graph, prior, cfg, init, ckpt if resume else None))
    with output_lock(out):
        try:
            if threads > 1 and len(jobs) > 1:
                with ProcessPoolExecutor(min(threads, len(jobs))) as pool:
                    results = list(pool.map(_fit_one, jobs))
            else:
                results = [_fit_one(j) for j in jobs]
        except SamplerAbort as exc:
            raise Failure(f"sampler aborted: {exc}", EXIT_SAMPLER) from exc
        dics = {}
        for v, samples in zip(variants, results):
            write_fit_outputs(out, v, samples, data, pops)
            dics[short_name(v)] = dic(samples, data)
        io.write_dic_json(out / "dic.json", dics)
    click.echo(json.dumps({k: round(r.dic, 3) for k, r in dics.items()}))


# ------------------------------------------------------------------ coverage

@main.command()
@click.option("--study", "study_dir", type=click.Path(exists=True, file_okay=False),
              default=None, help="Directory written by 'simulate'.")
@click.option("--fits", "fits_dir", type=click.Path(exists=True, file_okay=False),
              default=None, help="Directory with replicate_NNN/ fit outputs.")
@click.option("--design", "design_file", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Run a whole study in-process from a design JSON instead.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--variant", type=click.Choice(VARIANT_CHOICES), default=None,
              help="Variants to score (default mstcar and separable).")
@click.option("--n-iterations", type=int, default=1500, show_default=True)
@click.option("--burn-in", type=int, default=1000, show_default=True)
@click.option("--thin", type=int, default=1, show_default=True)
@click.option("--replicates", type=int, default=None)
@click.option("--no-truth-init", is_flag=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--stub", is_flag=True, help="Score unbounded intervals (harness self-check).")
def coverage(study_dir, fits_dir, design_file, out_dir, variant, n_iterations, burn_in, thin,
             replicates, no_truth_init, threads, stub):
    """Coverage report (JSON + per-replicate CSV) for a simulation study.

    Either score existing fits (``--study`` and ``--fits``) or run the study
    end to end (``--design``).
    """
    variants = variant_list(variant) if variant else ["mstcar", "separable"]
    out = Path(out_dir)
    with config_errors():
        if design_file:
            design = SimDesign.from_json(design_file)
            if replicates is not None:
                design.n_replicates = replicates
            cfg = SamplerConfig(n_iterations=n_iterations, burn_in=burn_in, thin=thin)
        elif study_dir and fits_dir:
            results = _score_existing(Path(study_dir), Path(fits_dir), variants, stub)
        else:
            raise ValueError("give either --design or both --study and --fits")
    with output_lock(out):
        if design_file:
            try:
                report = run_study(design, cfg, variants, truth_init=not no_truth_init,
                                   n_workers=threads)
            except MSTCARError as exc:
                raise Failure(f"generation failed: {exc}", EXIT_GENERATION) from exc
        else:
            report = aggregate(results, variants)
        report.to_json(out / "coverage.json")
        report.records_to_csv(out / "replicates.csv")
    click.echo(json.dumps(report.coverage))


def _score_existing(study: Path, fits: Path, variants, stub):
    design = json.loads((study / "design.json").read_text())
    truth, _ = io.read_truth(study / "truth.json")
    n_rep = design["n_replicates"]
    results = []
    for r in range(1, n_rep + 1):
        rep_dir = fits / f"replicate_{r:03d}"
        stores = {v: rep_dir / f"samples_{short_name(v)}.npz" for v in variants}
        absent = [str(p) for p in stores.values() if not p.exists()]
        if absent:
            raise ValueError(f"replicate {r} has no fit: missing {', '.join(absent)}")
        data = io.read_rate_csv(study / f"replicate_{r:03d}.csv", design["n_sites"])
        field = _read_field_csv(study / f"field_{r:03d}.csv", data.y.shape)
        record, indicators = {"replicate": r}, {}
        for v, path in stores.items():
            samples = PosteriorSamples.load(path)
            record.update(score_fit(v, samples, data, truth, field, indicators, stub))
        results.append((record, indicators))
    return results


# ----------------------------------------------------------------- summarize

@main.command()
@click.argument("samples_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Rate CSV the samples were fitted to (enables DIC, trends and y_missing).")
@click.option("--n-sites", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def summarize(samples_file, data_path, n_sites, out_dir):
    """Re-summarise a stored samples file into interval CSVs (and DIC JSON with --data)."""
    out = Path(out_dir)
    with config_errors():
        samples = PosteriorSamples.load(samples_file)
        data = None
        if data_path:
            data = io.read_rate_csv(data_path, n_sites or samples.z.shape[1])
            if data.y.shape != samples.z.shape[1:]:
                raise ValueError("data shape does not match the samples")
    name = short_name(samples.variant)
    with output_lock(out):
        io.write_summary_csv(out / f"summary_{name}.csv", summary_rows(samples, data))
        _sigma_csv(out / f"sigma_eta_{name}.csv", sigma_eta_summary(samples))
        if data is not None:
            _trend_csv(out / f"trend_{name}.csv", samples, data, None)
            io.write_dic_json(out / f"dic_{name}.json", {name: dic(samples, data)})
    click.echo(f"wrote summaries for {samples_file} to {out}")


def run():
    main(auto_envvar_prefix="MSTCAR")


if __name__ == "__main__":
    run()
