"""File formats: long-format rate CSVs, truth JSON, summary CSV and DIC JSON.

Rate CSV columns are ``site_id,group,time,rate,population``: rates per
100,000, populations in raw persons (converted to units of 100,000 on read),
``group`` and ``time`` 1-based.  A missing rate is an empty field with
population 0.  Without a site map, ``site_id`` is the 1-based site index.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .covariance import CovarianceSpec
from .errors import DimensionMismatch
from .model import RateDataset

PERSONS_PER_UNIT = 1e5
RATE_COLUMNS = ("site_id", "group", "time", "rate", "population")
SUMMARY_COLUMNS = ("parameter_family", "site", "group", "time", "median", "lo95", "hi95")


def read_rate_csv(path, n_sites: int | None = None, site_map: dict | None = None) -> RateDataset:
    """Parse a long-format rate CSV into a :class:`RateDataset` with the intercept design."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RATE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    if site_map is None:
        site = np.array([int(r["site_id"]) - 1 for r in rows])
    else:
        try:
            site = np.array([site_map[r["site_id"]] for r in rows])
        except KeyError as exc:
            raise ValueError(f"{path}: site_id {exc.args[0]!r} not in site map") from None
    group = np.array([int(r["group"]) - 1 for r in rows])
    time = np.array([int(r["time"]) - 1 for r in rows])
    if min(site.min(), group.min(), time.min()) < 0:
        raise ValueError(f"{path}: indices must be 1-based")
    n_s = int(site.max()) + 1 if n_sites is None else int(n_sites)
    shape = (n_s, int(time.max()) + 1, int(group.max()) + 1)
    if site.max() >= n_s:
        raise DimensionMismatch(f"{path}: site index {site.max() + 1} exceeds {n_s} sites")
    y = np.full(shape, np.nan)
    pop = np.full(shape, np.nan)
    for s, k, t, r in zip(site, group, time, rows):
        if not np.isnan(pop[s, t, k]):
            raise ValueError(f"{path}: duplicate cell site={s + 1} group={k + 1} time={t + 1}")
        pop[s, t, k] = float(r["population"])
        y[s, t, k] = float(r["rate"]) if r["rate"].strip() else np.nan
    if np.any(np.isnan(pop)):
        raise ValueError(f"{path}: {int(np.isnan(pop).sum())} cells have no row")
    if np.any(pop < 0):
        raise ValueError(f"{path}: negative population")
    return RateDataset.from_arrays(y, pop / PERSONS_PER_UNIT)


def write_rate_csv(path, data: RateDataset, populations=None, site_ids=None) -> None:
    """Write ``data`` in long format.

    ``populations`` (raw persons) defaults to ``data.pop * 1e5`` on observed
    cells; unobserved cells are always written with population 0.
    """
    pop = data.pop * PERSONS_PER_UNIT if populations is None else np.asarray(populations)
    ids = [str(s + 1) for s in range(data.n_sites)] if site_ids is None else list(site_ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATE_COLUMNS)
        for s, k, t in np.ndindex(data.n_sites, data.n_groups, data.n_time):
            if data.observed[s, t, k]:
                w.writerow([ids[s], k + 1, t + 1, repr(float(data.y[s, t, k])),
                            _number(pop[s, t, k])])
            else:
                w.writerow([ids[s], k + 1, t + 1, "", 0])


def _number(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def spec_to_dict(spec: CovarianceSpec) -> dict:
    return {"g": spec.g.tolist(), "rho": spec.rho.tolist(), "tau2": spec.tau2.tolist()}


def spec_from_dict(d: dict) -> CovarianceSpec:
    return CovarianceSpec(np.array(d["g"]), np.array(d["rho"]), np.array(d["tau2"]))


def write_truth(path, spec: CovarianceSpec, field=None) -> None:
    """Truth JSON: the covariance spec and optionally the latent field ``z``."""
    d = spec_to_dict(spec)
    if field is not None:
        d["z"] = np.asarray(field).tolist()
    Path(path).write_text(json.dumps(d))


def read_truth(path):
    """Return ``(spec, field or None)``."""
    d = json.loads(Path(path).read_text())
    z = np.array(d["z"]) if "z" in d else None
    return spec_from_dict(d), z


def write_summary_csv(path, rows) -> None:
    """Rows as produced by :func:`mstcar.diagnostics.summary_rows`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for fam, site, group, time, med, lo, hi in rows:
            w.writerow([fam, site, group, time, repr(med), repr(lo), repr(hi)])


def read_summary_csv(path) -> list[tuple]:
    with open(path, newline="") as fh:
        return [(r["parameter_family"], int(r["site"]), int(r["group"]), int(r["time"]),
                 float(r["median"]), float(r["lo95"]), float(r["hi95"]))
                for r in csv.DictReader(fh)]


def write_dic_json(path, results: dict) -> None:
    """``results`` maps variant name to :class:`~mstcar.diagnostics.DicResult`."""
    Path(path).write_text(json.dumps({k: v.to_dict() for k, v in results.items()}, indent=2))
