"""Regenerate the bundled example inputs under src/mstcar/data.

    python tools/make_shipped_data.py

* ``grid58_adjacency.csv``: a synthetic 58-site planar graph (Delaunay
  triangulation of seeded uniform points in a 1 x 2.5 rectangle).  It stands in
  for a state-sized county map; it is NOT a real map.
* ``smoke10_adjacency.csv`` / ``smoke10_data.csv``: a 10-site, 2-group,
  4-time dataset with one zero-population cell, for quick fits.
* ``population58.csv``: log-uniform person counts (100 to 10,000) for the
  58-site graph with three groups and ten time points; about 10% of sites
  have zero population in the last group.
"""
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from mstcar.graph import build_graph
from mstcar.io import write_rate_csv
from mstcar.simstudy import (SimDesign, draw_truth, generate_replicate, sample_field,
                             synthetic_population_table, write_population_table)
from mstcar.graph import spectral_basis

OUT = Path(__file__).resolve().parents[1] / "src" / "mstcar" / "data"


def delaunay_graph(n, seed, aspect=2.5):
    pts = np.random.default_rng(seed).uniform(size=(n, 2)) * [1.0, aspect]
    edges = set()
    for simplex in Delaunay(pts).simplices:
        for a in range(3):
            for b in range(a + 1, 3):
                edges.add(tuple(sorted((int(simplex[a]), int(simplex[b])))))
    return build_graph(n, sorted(edges), one_based=False)


def main():
    OUT.mkdir(exist_ok=True)
    delaunay_graph(58, seed=1).to_csv(OUT / "grid58_adjacency.csv")
    pop = synthetic_population_table(58, 10, 3, seed=58, zero_fraction=0.1)
    write_population_table(OUT / "population58.csv", pop)

    g10 = delaunay_graph(10, seed=10, aspect=1.0)
    g10.to_csv(OUT / "smoke10_adjacency.csv")
    design = SimDesign(g10, n_groups=2, n_time=4, rho_truth=(0.8, 0.9), n_replicates=1, seed=10)
    rng = np.random.default_rng(10)
    truth = draw_truth(design, rng)
    field = sample_field(truth, spectral_basis(g10), rng)
    pops = np.round(np.exp(rng.uniform(np.log(1e3), np.log(1e5), size=(10, 1, 2))))
    pops = np.broadcast_to(pops, (10, 4, 2)).copy()
    pops[3, 2, 1] = 0.0
    rates = 100.0 + 20.0 * np.arange(2) + field  # per 100,000
    data = generate_replicate(design, truth, rates, rng, populations=pops / 1e5)
    write_rate_csv(OUT / "smoke10_data.csv", data, pops)


if __name__ == "__main__":
    main()
