"""Multivariate space-time CAR models for small-area rate data."""
from .covariance import CovarianceSpec, assemble_sigma_eta
from .diagnostics import dic, interval_summary, nationwide_trend, sigma_eta_summary
from .errors import MSTCARError, SamplerAbort
from .graph import AdjacencyGraph, build_graph, read_adjacency_csv, spectral_basis
from .model import PriorConfig, RateDataset
from .sampler import PosteriorSamples, SamplerConfig, run_chain

__version__ = "0.1.0"

__all__ = [
    "AdjacencyGraph", "CovarianceSpec", "MSTCARError", "PosteriorSamples", "PriorConfig",
    "RateDataset", "SamplerAbort", "SamplerConfig", "assemble_sigma_eta", "build_graph",
    "dic", "interval_summary", "nationwide_trend", "read_adjacency_csv", "run_chain",
    "sigma_eta_summary", "spectral_basis",
]
