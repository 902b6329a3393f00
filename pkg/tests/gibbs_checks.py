"""Density-ratio checks of every Gibbs kernel against the joint posterior.

For a kernel with full conditional p(theta | rest), any two values a, b of
theta must satisfy  log p(a|rest) - log p(b|rest) = log joint(a) - log joint(b).
"""
import numpy as np
from scipy.stats import invgamma, invwishart, multivariate_normal, norm

from mstcar.covariance import CovarianceSpec
from mstcar.graph import build_graph
from mstcar.model import ModelState, PriorConfig, RateDataset, log_joint
from mstcar.sampler import (beta_conditional, edge_increments, g_conditional, rho_log_target,
                            separable_g_conditional, stcar_variance_conditional,
                            tau2_conditional, z_conditional)

from conftest import random_spd, random_spec


def small_instance(rng, n_groups=2, n_time=2, missing=True):
    graph = build_graph(4, [(1, 2), (2, 3), (3, 4), (4, 1), (1, 3)])
    shape = (4, n_time, n_groups)
    y = rng.normal(size=shape)
    pop = rng.uniform(0.5, 2.0, size=shape)
    if missing:
        pop[2, 1, 0] = 0.0
    x = np.concatenate([np.ones(shape + (1,)), rng.normal(size=shape + (1,))], axis=-1)
    data = RateDataset.from_arrays(y, pop, x)
    spec = random_spec(rng, n_time, n_groups)
    state = ModelState(rng.normal(size=(n_groups, 2)), rng.normal(size=shape), spec,
                       rng.normal(size=np.count_nonzero(~data.observed)))
    prior = PriorConfig(3.0, 2.0, random_spd(rng, n_groups), n_groups + 2.5)
    return graph, data, state, prior


def _mvn(x, mean, prec):
    return multivariate_normal.logpdf(x, mean, np.linalg.inv(prec))


def kernel_ratio_errors(seed=0, n_probes=5):
    """Max |conditional ratio - joint ratio| per kernel over ``n_probes`` probe pairs."""
    rng = np.random.default_rng(seed)
    graph, data, state, prior = small_instance(rng)
    n_g, n_t = data.n_groups, data.n_time
    errs = {}

    def record(name, cond, joint):
        errs[name] = max(errs.get(name, 0.0), abs(cond - joint))

    def lj(st, variant="mstcar", observed_only=False):
        return log_joint(data, st, graph, prior, variant, observed_only)

    for _ in range(n_probes):
        # beta
        means, precs = beta_conditional(data, state)
        a, b = rng.normal(size=(2, n_g, 2))
        cond = sum(_mvn(a[k], means[k], precs[k]) - _mvn(b[k], means[k], precs[k])
                   for k in range(n_g))
        record("beta", cond, lj(state.replace(beta=a)) - lj(state.replace(beta=b)))

        # Z, every site
        for site in range(graph.n_sites):
            mean, prec = z_conditional(site, data, state, graph)
            za, zb = state.z.copy(), state.z.copy()
            za[site] = rng.normal(size=(n_t, n_g))
            zb[site] = rng.normal(size=(n_t, n_g))
            cond = _mvn(za[site].ravel(), mean, prec) - _mvn(zb[site].ravel(), mean, prec)
            record("z", cond, lj(state.replace(z=za)) - lj(state.replace(z=zb)))

        # tau2: blocked with Y_u, so compare against the observed-data joint
        shapes, rates = tau2_conditional(data, state)
        ta, tb = rng.uniform(0.3, 3.0, size=(2, n_g))
        cond = sum(invgamma.logpdf(ta[k], shapes[k], scale=rates[k])
                   - invgamma.logpdf(tb[k], shapes[k], scale=rates[k]) for k in range(n_g))
        joint = (lj(state.replace(spec=state.spec.replace(tau2=ta)), observed_only=True)
                 - lj(state.replace(spec=state.spec.replace(tau2=tb)), observed_only=True))
        record("tau2", cond, joint)

        # G_t, each time point
        inc = edge_increments(state.z, graph)
        for t in range(n_t):
            scale, df = g_conditional(t, inc, state.spec, prior, graph.n_sites)
            ga, gb = state.spec.g.copy(), state.spec.g.copy()
            ga[t], gb[t] = random_spd(rng, n_g), random_spd(rng, n_g)
            cond = (invwishart.logpdf(ga[t], df=df, scale=scale)
                    - invwishart.logpdf(gb[t], df=df, scale=scale))
            joint = (lj(state.replace(spec=state.spec.replace(g=ga)))
                     - lj(state.replace(spec=state.spec.replace(g=gb))))
            record("g", cond, joint)

        # separable G (shared across time, shared rho)
        sep = CovarianceSpec.separable(state.spec.g[0], state.spec.rho[0], n_t, state.spec.tau2)
        sst = state.replace(spec=sep)
        scale, df = separable_g_conditional(inc, sep, prior, graph.n_sites)
        ga, gb = random_spd(rng, n_g), random_spd(rng, n_g)
        cond = (invwishart.logpdf(ga, df=df, scale=scale)
                - invwishart.logpdf(gb, df=df, scale=scale))
        joint = (lj(sst.replace(spec=sep.replace(g=np.broadcast_to(ga, sep.g.shape))), "separable")
                 - lj(sst.replace(spec=sep.replace(g=np.broadcast_to(gb, sep.g.shape))),
                      "separable"))
        record("g_separable", cond, joint)

        # independent-STCAR group variances
        ind = state.spec.replace(g=np.broadcast_to(np.diag(np.diagonal(state.spec.g[0])),
                                                   state.spec.g.shape))
        ist = state.replace(spec=ind)
        shape, rate = stcar_variance_conditional(inc, ind, prior, graph.n_sites)
        va, vb = rng.uniform(0.3, 3.0, size=(2, n_g))
        cond = sum(invgamma.logpdf(va[k], shape[k], scale=rate[k])
                   - invgamma.logpdf(vb[k], shape[k], scale=rate[k]) for k in range(n_g))
        joint = (lj(ist.replace(spec=ind.replace(g=np.broadcast_to(np.diag(va), ind.g.shape))),
                    "stcar_independent")
                 - lj(ist.replace(spec=ind.replace(g=np.broadcast_to(np.diag(vb), ind.g.shape))),
                      "stcar_independent"))
        record("sigma2_stcar", cond, joint)

        # rho: the MH target must differ from the joint by a constant
        ra, rb = rng.uniform(0.05, 0.95, size=(2, n_g))
        cond = (rho_log_target(ra, inc, state.spec, prior, graph.n_sites)
                - rho_log_target(rb, inc, state.spec, prior, graph.n_sites))
        joint = (lj(state.replace(spec=state.spec.replace(rho=ra)))
                 - lj(state.replace(spec=state.spec.replace(rho=rb))))
        record("rho_target", cond, joint)

        # Y_u
        idx = data.missing_index
        mu = (np.einsum("stkp,kp->stk", data.x, state.beta) + state.z)[idx]
        sd = np.sqrt(state.spec.tau2[idx[2]] / data.pop[idx])
        ya, yb = mu + sd * rng.normal(size=(2, len(mu)))
        cond = norm.logpdf(ya, mu, sd).sum() - norm.logpdf(yb, mu, sd).sum()
        record("y_missing", cond, lj(state.replace(y_missing=ya)) - lj(state.replace(y_missing=yb)))

        # move to a fresh random state for the next probe set
        state = state.replace(beta=rng.normal(size=state.beta.shape),
                              z=rng.normal(size=state.z.shape),
                              spec=random_spec(rng, n_t, n_g))
    return errs
