"""A miniature coverage study on the 58-site shipped graph.

Truth covariances are drawn once, a latent field and noisy rates are drawn per
replicate, and both the nonseparable and separable models are fitted.  The
full-size study (25 replicates, 1,500 iterations) lives in the acceptance
suite; this one uses 3 replicates so it finishes in well under a minute.
"""
from dataclasses import replace
from importlib.resources import files

from mstcar import SamplerConfig
from mstcar.simstudy import SimDesign, run_study

design = SimDesign.from_json(files("mstcar") / "data" / "design_equal58.json")
design = replace(design, n_replicates=3)

report = run_study(design, SamplerConfig(n_iterations=1500, burn_in=1000, thin=1))
for variant, cov in report.coverage.items():
    print(variant, {k: round(v, 1) for k, v in cov.items()})
print("DIC wins:", report.dic_wins)
print(f"mean relative DIC improvement: {100 * report.mean_relative_dic_improvement:.2f}%")
