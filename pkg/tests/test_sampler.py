import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mstcar.covariance import CovarianceSpec, assemble_sigma_eta, sigma_eta_precision
from mstcar.errors import (DegenerateResiduals, InsufficientData, SamplerAbort,
                           SingularDesign)
from mstcar.graph import build_graph, read_adjacency_csv
from mstcar.model import ModelState, PriorConfig, RateDataset
from mstcar.sampler import (PosteriorSamples, SamplerConfig, beta_conditional, center_z,
                            g_conditional, edge_increments, impute_missing, initial_state,
                            intercept_absorber, rho_mh_step, run_chain, sweep_z,
                            tau2_conditional, update_beta, update_rho, update_z_site,
                            z_conditional)

from conftest import DATA_DIR, random_spec
from gibbs_checks import kernel_ratio_errors, small_instance


@pytest.mark.parametrize("seed", [0, 1])
def test_gibbs_kernels_match_joint(seed):
    errs = kernel_ratio_errors(seed)
    assert set(errs) == {"beta", "z", "tau2", "g", "g_separable", "sigma2_stcar",
                         "rho_target", "y_missing"}
    for name, err in errs.items():
        assert err < 1e-8, name


def _state(data, spec, beta=None, z=None):
    beta = np.zeros((data.n_groups, data.n_covariates)) if beta is None else beta
    z = np.zeros(data.y.shape) if z is None else z
    return ModelState(beta, z, spec, np.zeros(np.count_nonzero(~data.observed)))


# ------------------------------------------------------------------- beta

def test_beta_intercept_is_weighted_mean(rng):
    y = rng.normal(size=(5, 1, 1))
    pop = rng.uniform(0.5, 3, size=y.shape)
    z = rng.normal(size=y.shape)
    data = RateDataset.from_arrays(y, pop)
    spec = CovarianceSpec(np.ones((1, 1, 1)), [0.5], [2.0])
    means, precs = beta_conditional(data, _state(data, spec, z=z))
    w = pop.ravel() / 2.0
    assert_allclose(means[0, 0], np.sum(w * (y - z).ravel()) / w.sum(), rtol=1e-12)
    assert_allclose(precs[0, 0, 0], w.sum(), rtol=1e-12)


def test_beta_two_covariates_normal_equations(rng):
    shape = (6, 2, 1)
    x = rng.normal(size=shape + (2,))
    beta_true = np.array([[1.5, -0.5]])
    z = rng.normal(size=shape)
    y = np.einsum("stkp,kp->stk", x, beta_true) + z  # zero residuals around beta_true
    data = RateDataset.from_arrays(y, rng.uniform(0.5, 2, size=shape), x)
    spec = CovarianceSpec(np.ones((2, 1, 1)), [0.5], [0.7])
    means, precs = beta_conditional(data, _state(data, spec, z=z))
    xm = x.reshape(-1, 2)
    w = data.pop.ravel() / 0.7
    oracle = np.linalg.solve(xm.T @ (w[:, None] * xm), xm.T @ (w * (y - z).ravel()))
    assert_allclose(means[0], oracle, atol=1e-10)
    assert_allclose(means[0], beta_true[0], atol=1e-10)
    assert np.all(np.linalg.eigvalsh(precs[0]) > 0)


def test_beta_singular_design():
    x = np.ones((3, 1, 1, 2))  # two identical columns
    data = RateDataset.from_arrays(np.zeros((3, 1, 1)), np.ones((3, 1, 1)), x)
    spec = CovarianceSpec(np.ones((1, 1, 1)), [0.5], [1.0])
    with pytest.raises(SingularDesign):
        update_beta(data, _state(data, spec), np.random.default_rng(0))


# ---------------------------------------------------------------------- Z

def test_z_prior_only_limit(square_graph, rng):
    spec = random_spec(rng, 2, 2)
    y = rng.normal(size=(4, 2, 2))
    data = RateDataset.from_arrays(y, np.full(y.shape, 1e-12))
    z = rng.normal(size=y.shape)
    mean, prec = z_conditional(1, data, _state(data, spec, z=z), square_graph)
    nbr = z[square_graph.neighbors[1]].mean(axis=0).ravel()
    assert_allclose(mean, nbr, atol=1e-9)
    m = square_graph.neighbor_counts[1]
    assert_allclose(np.linalg.inv(prec), assemble_sigma_eta(spec) / m, atol=1e-9)


def test_z_likelihood_only_limit(square_graph, rng):
    spec = random_spec(rng, 2, 2)
    y = rng.normal(size=(4, 2, 2))
    data = RateDataset.from_arrays(y, np.full(y.shape, 1e12))
    beta = rng.normal(size=(2, 2))
    st = _state(data, spec, beta=beta, z=rng.normal(size=y.shape))
    draw = update_z_site(0, data, st, square_graph, np.random.default_rng(1))
    target = y[0] - np.einsum("tkp,kp->tk", data.x[0], beta)
    assert_allclose(draw, target, atol=1e-4)


def test_z_conditional_matches_dense_conditioning(rng):
    graph = build_graph(2, [(1, 2)])
    spec = random_spec(rng, 2, 2)
    y = rng.normal(size=(2, 2, 2))
    pop = rng.uniform(0.5, 2, size=y.shape)
    data = RateDataset.from_arrays(y, pop)
    beta = rng.normal(size=(2, 2))
    z = rng.normal(size=y.shape)
    st = _state(data, spec, beta=beta, z=z)
    # dense joint posterior of all Z: precision (D-W) kron Q + diag(pop/tau2)
    q = sigma_eta_precision(spec)
    d = (pop / spec.tau2).ravel()
    r = (y - np.einsum("stkp,kp->stk", data.x, beta)).ravel()
    joint_prec = np.kron(graph.laplacian, q) + np.diag(d)
    joint_mean = np.linalg.solve(joint_prec, d * r)
    joint_cov = np.linalg.inv(joint_prec)
    a, b = slice(0, 4), slice(4, 8)
    gain = joint_cov[a, b] @ np.linalg.inv(joint_cov[b, b])
    cond_mean = joint_mean[a] + gain @ (z[1].ravel() - joint_mean[b])
    cond_cov = joint_cov[a, a] - gain @ joint_cov[b, a]
    mean, prec = z_conditional(0, data, st, graph)
    assert_allclose(mean, cond_mean, atol=1e-9)
    assert_allclose(np.linalg.inv(prec), cond_cov, atol=1e-9)


def test_colour_sweep_equals_sequential_updates(rng):
    graph, data, state, _ = small_instance(rng)
    seed = 77
    swept = sweep_z(data, state, graph, np.random.default_rng(seed))
    eps = np.random.default_rng(seed).standard_normal((graph.n_sites, 4))
    z = state.z.copy()
    for cls in graph.color_classes:
        for site in cls:
            z[site] = update_z_site(site, data, state.replace(z=z), graph, eps=eps[site])
    assert_allclose(swept, z, atol=1e-12)


def test_centering_moves_means_into_beta(rng):
    data = RateDataset.from_arrays(rng.normal(size=(5, 3, 2)), np.ones((5, 3, 2)))
    z = rng.normal(size=(5, 3, 2))
    beta = rng.normal(size=(2, 3))
    absorber = intercept_absorber(data)
    z2, beta2 = center_z(z, beta, absorber)
    assert_allclose(z2.sum(axis=0), 0.0, atol=1e-12)
    fit = lambda b, zz: np.einsum("stkp,kp->stk", data.x, b) + zz  # noqa: E731
    assert_allclose(fit(beta2, z2), fit(beta, z), atol=1e-12)
    # a design without per-time intercepts cannot absorb the shift
    x = rng.normal(size=(5, 3, 2, 1))
    assert intercept_absorber(RateDataset.from_arrays(data.y, data.pop, x)) is None


# ------------------------------------------------------------------- tau2

def test_tau2_conditional_formula():
    y = np.ones((3, 1, 1))
    data = RateDataset.from_arrays(y, np.ones((3, 1, 1)))
    spec = CovarianceSpec(np.ones((1, 1, 1)), [0.5], [1.0])
    shapes, rates = tau2_conditional(data, _state(data, spec))
    assert_allclose(shapes, [1.0])
    assert_allclose(rates, [1.5])


def test_tau2_errors():
    spec = CovarianceSpec(np.ones((1, 1, 1)), [0.5], [1.0])
    data = RateDataset.from_arrays(np.zeros((3, 1, 1)), np.ones((3, 1, 1)))
    with pytest.raises(DegenerateResiduals):
        tau2_conditional(data, _state(data, spec))
    pop = np.array([1.0, 0.0, 0.0]).reshape(3, 1, 1)
    data = RateDataset.from_arrays(np.ones((3, 1, 1)), pop)
    with pytest.raises(InsufficientData):
        tau2_conditional(data, _state(data, spec))


# ---------------------------------------------------------------------- G

def test_g_conditional_examples(rng):
    prior = PriorConfig(9, 1, np.eye(2) * 2, 4.0)
    spec = random_spec(rng, 1, 2)
    g4 = build_graph(4, [(1, 2), (2, 3), (3, 4)])
    scale, df = g_conditional(0, edge_increments(np.zeros((4, 1, 2)), g4), spec, prior, 4)
    assert_allclose(scale, prior.g_scale)
    assert df == 4.0 + 3
    two = build_graph(2, [(1, 2)])
    z = rng.normal(size=(2, 1, 2))
    spec0 = spec.replace(rho=[0.0, 0.0])
    scale, _ = g_conditional(0, edge_increments(z, two), spec0, prior, 2)
    d = (z[0] - z[1]).ravel()
    assert_allclose(scale - prior.g_scale, np.outer(d, d), atol=1e-14)


# -------------------------------------------------------------------- rho

class _FixedRng:
    def __init__(self, normal, uniform):
        self.normal, self.uniform_value = normal, uniform

    def standard_normal(self):
        return self.normal

    def uniform(self):
        return self.uniform_value


def test_rho_identical_proposal_always_accepted(rng):
    graph, data, state, prior = small_instance(rng)
    inc = edge_increments(state.z, graph)
    rho = np.array(state.spec.rho)
    new, accepted, _ = rho_mh_step(rho, np.array([0]), inc, state.spec, prior, 4, "mstcar",
                                   1e-300, _FixedRng(1.0, 0.999999))
    assert accepted and new[0] == rho[0]


def test_rho_boundary_proposal_rejected(rng):
    graph, data, state, prior = small_instance(rng)
    inc = edge_increments(state.z, graph)
    rho = np.array(state.spec.rho)
    new, accepted, _ = rho_mh_step(rho, np.array([1]), inc, state.spec, prior, 4, "mstcar",
                                   10.0, _FixedRng(100.0, 1e-300))
    assert not accepted
    assert_array_equal(new, rho)


def test_update_rho_returns_value_and_flag(rng):
    graph, data, state, prior = small_instance(rng)
    val, acc = update_rho(0, state.z, graph, state.spec, prior, np.random.default_rng(3))
    assert 0 < val < 1 and isinstance(bool(acc), bool)


# -------------------------------------------------------------------- Y_u

def test_imputation_limits(rng):
    y = rng.normal(size=(3, 2, 1))
    pop = np.ones(y.shape)
    pop[1, 1, 0] = 0.0
    data = RateDataset.from_arrays(y, pop)
    z = rng.normal(size=y.shape)
    beta = rng.normal(size=(1, 2))
    mu = (np.einsum("stkp,kp->stk", data.x, beta) + z)[1, 1, 0]
    tiny = CovarianceSpec(np.ones((2, 1, 1)), [0.5], [1e-20])
    st = _state(data, tiny, beta=beta, z=z)
    assert_allclose(impute_missing(data, st, rng), [mu], atol=1e-6)
    unit = tiny.replace(tau2=[1.0])
    st = st.replace(spec=unit)
    draws = np.array([impute_missing(data, st, rng)[0] for _ in range(10_000)])
    sd = np.sqrt(1 / 1e-5)
    assert_allclose(sd, 316.2277660168, rtol=1e-10)
    assert abs(draws.mean() - mu) < 3 * sd / np.sqrt(len(draws))
    assert_allclose(draws.std(), sd, rtol=0.05)


# ------------------------------------------------------------------ chain

@pytest.fixture(scope="module")
def smoke():
    from mstcar.io import read_rate_csv
    graph = read_adjacency_csv(DATA_DIR / "smoke10_adjacency.csv")
    return graph, read_rate_csv(DATA_DIR / "smoke10_data.csv", graph.n_sites)


def test_draw_count_bookkeeping(smoke):
    graph, data = smoke
    s = run_chain(data, graph, config=SamplerConfig(n_iterations=30, burn_in=20, thin=10))
    assert s.n_draws == 1
    s = run_chain(data, graph, config=SamplerConfig(n_iterations=57, burn_in=20, thin=4))
    assert s.n_draws == SamplerConfig(n_iterations=57, burn_in=20, thin=4).n_draws == 9


def test_same_seed_is_bit_identical(smoke):
    graph, data = smoke
    cfg = SamplerConfig(n_iterations=60, burn_in=20, thin=2, seed=11)
    a = run_chain(data, graph, config=cfg)
    b = run_chain(data, graph, config=cfg)
    assert a.identical_to(b)
    c = run_chain(data, graph, config=SamplerConfig(n_iterations=60, burn_in=20, thin=2, seed=12))
    assert not a.identical_to(c)


def test_checkpoint_resume_is_bit_identical(smoke, tmp_path):
    graph, data = smoke
    full = run_chain(data, graph, config=SamplerConfig(n_iterations=80, burn_in=30, thin=3))
    ckpt = tmp_path / "chain.pkl"
    part = SamplerConfig(n_iterations=50, burn_in=30, thin=3, checkpoint_every=25,
                         checkpoint_path=str(ckpt))
    run_chain(data, graph, config=part)
    resumed = run_chain(data, graph, config=SamplerConfig(n_iterations=80, burn_in=30, thin=3),
                        resume_from=ckpt)
    assert resumed.identical_to(full)
    with pytest.raises(ValueError):
        run_chain(data, graph, config=SamplerConfig(n_iterations=80, burn_in=30, thin=3,
                                                    seed=5), resume_from=ckpt)


def test_samples_roundtrip(smoke, tmp_path):
    graph, data = smoke
    s = run_chain(data, graph, config=SamplerConfig(n_iterations=40, burn_in=20, thin=5))
    s.save(tmp_path / "s.npz")
    back = PosteriorSamples.load(tmp_path / "s.npz")
    assert back.identical_to(s)
    assert back.config["thin"] == 5


@pytest.mark.parametrize("variant", ["mstcar", "separable", "stcar"])
def test_variant_constraints_and_invariants(smoke, variant):
    graph, data = smoke
    s = run_chain(data, graph, config=SamplerConfig(n_iterations=120, burn_in=60, thin=3,
                                                    variant=variant))
    assert_allclose(s.z.sum(axis=1), 0.0, atol=1e-10)
    assert_allclose(s.g, np.swapaxes(s.g, -1, -2), atol=1e-12)
    assert np.all(np.linalg.eigvalsh(s.g) > 0)
    if variant == "separable":
        assert_allclose(s.g, np.broadcast_to(s.g[:, :1], s.g.shape))
        assert_allclose(s.rho, np.broadcast_to(s.rho[:, :1], s.rho.shape))
    if variant == "stcar":
        assert s.variant == "stcar_independent"
        assert_allclose(s.g[:, :, 0, 1], 0.0)
        assert_allclose(s.g, np.broadcast_to(s.g[:, :1], s.g.shape))


def test_tuned_acceptance_rate_in_range(smoke):
    graph, data = smoke
    s = run_chain(data, graph, config=SamplerConfig(n_iterations=1500, burn_in=500, thin=5))
    assert np.all((s.rho_acceptance >= 0.2) & (s.rho_acceptance <= 0.6)), s.rho_acceptance


def test_kernel_failure_aborts_with_iteration(smoke, monkeypatch):
    import mstcar.sampler as sampler_mod
    graph, data = smoke
    init = initial_state(data, PriorConfig.default(data.n_groups))
    # every residual of group 1 exactly zero, with beta and Z frozen: the tau2
    # update must fail on the first iteration
    y = data.y.copy()
    y[:, :, 0] = np.einsum("stp,p->st", data.x[:, :, 0, :], init.beta[0])
    flat = RateDataset.from_arrays(y, data.pop, data.x, data.observed)
    monkeypatch.setattr(sampler_mod, "update_beta", lambda data, state, rng: state.beta)
    monkeypatch.setattr(sampler_mod, "sweep_z",
                        lambda data, state, graph, rng, precision=None: state.z)
    cfg = SamplerConfig(n_iterations=5, burn_in=1, thin=1, center_z=False)
    with pytest.raises(SamplerAbort) as info:
        run_chain(flat, graph, config=cfg, init=init)
    assert info.value.iteration == 1
    assert isinstance(info.value.cause, DegenerateResiduals)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(n_iterations=10, burn_in=10)
    with pytest.raises(ValueError):
        SamplerConfig(thin=0)
    with pytest.raises(ValueError):
        SamplerConfig(variant="bym")
    assert SamplerConfig(variant="stcar").variant == "stcar_independent"
