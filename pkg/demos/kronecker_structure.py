"""How the nonseparable covariance relates to the separable Kronecker form.

With per-group autocorrelations and a time-varying between-group covariance,
Sigma_eta = A blockdiag(G_t) A'.  When every group shares one rho and G_t is
constant, it collapses to R(rho) kron G.
"""
import numpy as np

from mstcar import CovarianceSpec, assemble_sigma_eta
from mstcar.covariance import ar1_matrix

rng = np.random.default_rng(0)
n_time, n_groups = 5, 3
a = rng.normal(size=(n_groups, n_groups))
g = a @ a.T + n_groups * np.eye(n_groups)

sep = CovarianceSpec(np.repeat(g[None], n_time, axis=0), np.full(n_groups, 0.7), np.ones(n_groups))
gap = np.abs(assemble_sigma_eta(sep) - np.kron(ar1_matrix(0.7, n_time), g)).max()
print(f"shared rho, constant G: max |Sigma - R kron G| = {gap:.1e}")

# Letting rho differ across groups and G drift over time breaks the Kronecker form.
g_t = np.array([g * (1 + 0.2 * t) for t in range(n_time)])
nonsep = CovarianceSpec(g_t, np.array([0.5, 0.7, 0.9]), np.ones(n_groups))
sigma = assemble_sigma_eta(nonsep)
sd = np.sqrt(np.diag(sigma))
corr = sigma / np.outer(sd, sd)
print("lag-1 autocorrelation per group:",
      np.round([corr[k, n_groups + k] for k in range(n_groups)], 3))
print("marginal variances of group 1 over time:", np.round(sd[::n_groups] ** 2, 2))
