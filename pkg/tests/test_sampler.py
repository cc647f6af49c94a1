import itertools

import numpy as np
import pytest
from scipy import stats

from bipnet.collapsed_likelihood import log_Gj
from bipnet.create_datasets import ScenarioSpec, simulate
from bipnet.model_core import (
    ConfigError,
    GroupDesign,
    Hyperparameters,
    SamplerOptions,
    ViewSet,
    init_chain,
    substream,
    validate_and_standardize,
)
from bipnet.sampler import (
    BlockData,
    bip_threads,
    loading_conditional,
    merge_chains,
    run_chain,
    run_chains,
    sample_inverse_gaussian,
    sigma2_conditional,
    step_U,
    step_alpha0,
    step_b0,
    step_gamma_eta,
    step_group,
    step_lambda2,
    step_loadings,
    step_q,
    step_qr,
    step_sigma2,
    step_tau2,
    sweep,
)

SHORT = Hyperparameters(r=2, n_iter=30, burn_in=10, seed=11)


@pytest.fixture
def standardized(tiny_raw):
    data, _ = validate_and_standardize(tiny_raw)
    return data


@pytest.fixture
def grouped(standardized):
    groups = GroupDesign(membership=[np.eye(6)[:, :3] + np.eye(6)[:, 3:], None],
                         group_names=[["g1", "g2", "g3"], None])
    return standardized, groups


def start(data, groups=None, hp=SHORT, seed=0):
    groups = groups or GroupDesign.empty(data.M)
    return init_chain(hp, data, groups, substream(seed, 0)), BlockData.from_viewset(data, groups)


class TestInverseGaussian:
    def test_moments(self):
        rng = np.random.default_rng(0)
        mu, lam = 1.5, 2.0
        draws = sample_inverse_gaussian(mu, lam, rng, size=200_000)
        assert draws.mean() == pytest.approx(mu, rel=0.01)
        assert draws.var() == pytest.approx(mu ** 3 / lam, rel=0.03)

    def test_matches_scipy_distribution(self):
        rng = np.random.default_rng(1)
        mu, lam = 0.7, 3.0
        draws = sample_inverse_gaussian(mu, lam, rng, size=20_000)
        reference = stats.invgauss(mu / lam, scale=lam)
        assert stats.kstest(draws, reference.cdf).pvalue > 0.001

    def test_extreme_ratio_stays_finite(self):
        rng = np.random.default_rng(2)
        draws = sample_inverse_gaussian(np.full(1000, 1e6), 1e-3, rng)
        assert np.all(np.isfinite(draws)) and np.all(draws > 0)

    def test_broadcasts_parameters(self):
        rng = np.random.default_rng(3)
        assert sample_inverse_gaussian(np.ones((2, 3)), np.ones(3), rng).shape == (2, 3)


class TestConditionals:
    def test_sigma2_with_no_active_loadings(self, standardized):
        state, blocks = start(standardized)
        blk = state.blocks[1]
        blk.gamma[:] = False
        blk.eta[:] = False
        shape, rate = sigma2_conditional(state, 1, blocks.X[1], SHORT)
        X = blocks.X[1]
        assert shape == pytest.approx(SHORT.a0 + X.shape[0] / 2)
        np.testing.assert_allclose(rate, SHORT.b0 + 0.5 * (X ** 2).sum(axis=0))

    def test_supplement_loading_mean(self, standardized):
        state, blocks = start(standardized)
        blk = state.blocks[1]
        blk.gamma[:] = True
        blk.eta[:] = True
        active, _, mean, _ = loading_conditional(state, 1, blocks.X[1])
        U = state.U
        expected = np.linalg.solve(U.T @ U + np.eye(2), U.T @ blocks.X[1][:, 0])
        assert active.all()
        np.testing.assert_allclose(mean[0], expected, rtol=1e-10)

    def test_conjugate_loading_mean_uses_tau(self, standardized):
        state, blocks = start(standardized)
        blk = state.blocks[1]
        blk.gamma[:] = True
        blk.eta[:] = True
        blk.tau2[:, 2] = [0.5, 4.0]
        _, _, mean, _ = loading_conditional(state, 1, blocks.X[1], SamplerOptions(loading_conditional="conjugate"))
        U = state.U
        expected = np.linalg.solve(U.T @ U + np.diag([2.0, 0.25]), U.T @ blocks.X[1][:, 2])
        np.testing.assert_allclose(mean[2], expected, rtol=1e-10)

    def test_lambda2_pseudo_prior_for_excluded_features(self, standardized):
        state, _ = start(standardized)
        blk = state.blocks[1]
        blk.eta[:] = False
        blk.b0 = np.array([2.0, 2.0])
        draws = []
        for i in range(4000):
            step_lambda2(state, 1, SHORT, substream(5, i))
            draws.append(blk.lambda2.mean())
        # Gamma(alpha=1, rate=2) has mean 0.5
        assert np.mean(draws) == pytest.approx(0.5, rel=0.05)

    def test_tau2_keeps_positive_and_finite(self, standardized):
        state, _ = start(standardized)
        blk = state.blocks[1]
        blk.gamma[:] = True
        blk.eta[:] = True
        blk.A[:, 0] = 0.0
        step_tau2(state, 1, substream(1, 0))
        assert np.all(np.isfinite(blk.tau2)) and np.all(blk.tau2 > 0)

    def test_b0_is_conjugate_without_groups(self, standardized):
        state, _ = start(standardized)
        accepted = step_b0(state, 1, SHORT, substream(2, 0))
        assert accepted == SHORT.r

    def test_group_step_keeps_indicator_match(self, grouped):
        data, groups = grouped
        state, blocks = start(data, groups)
        for i in range(20):
            acc, prop = step_group(state, 1, SHORT, substream(3, i), blocks.membership[1])
            assert prop == SHORT.r * 3 and 0 <= acc <= prop
            np.testing.assert_array_equal(state.blocks[1].b > 0, state.blocks[1].r_ind)


N_DRAWS = 20_000


def draw_many(step, n=N_DRAWS):
    return np.array([step(substream(99, i)) for i in range(n)])


def assert_mean_within(draws, mean, sd, k=4.0):
    se = np.asarray(sd) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - mean) < k * se)


class TestConditionalMoments:
    """Monte Carlo moments of each full conditional, with the conditioning state held fixed."""

    def test_sigma2(self, standardized):
        state, blocks = start(standardized)
        blk = state.blocks[1]
        blk.gamma[:] = True
        blk.eta[:] = True
        X = blocks.X[1]
        shape, rate = sigma2_conditional(state, 1, X, SHORT)

        def step(rng):
            step_sigma2(state, 1, X, SHORT, rng)
            return blk.sigma2.copy()

        draws = draw_many(step)
        mean = rate / (shape - 1)
        assert_mean_within(draws, mean, mean / np.sqrt(shape - 2))

    def test_loadings(self, standardized):
        state, blocks = start(standardized)
        blk = state.blocks[1]
        blk.gamma[:] = True
        blk.eta[:] = True
        blk.sigma2 = np.full(6, 0.7)
        X = blocks.X[1]
        _, L, mean, _ = loading_conditional(state, 1, X)
        cov = 0.7 * np.linalg.inv(L @ np.swapaxes(L, 1, 2))
        sd = np.sqrt(np.diagonal(cov, axis1=1, axis2=2))

        def step(rng):
            step_loadings(state, 1, X, rng)
            return blk.A.T.copy()

        draws = draw_many(step)
        assert_mean_within(draws, mean, sd)
        np.testing.assert_allclose(draws.var(axis=0), sd ** 2, rtol=0.05)

    def test_latent_scores(self, standardized):
        state, blocks = start(standardized)
        rng = np.random.default_rng(4)
        for blk in state.blocks:
            blk.gamma[:] = True
            blk.eta[:] = True
            blk.A = rng.normal(size=blk.A.shape)
            blk.sigma2 = rng.uniform(0.5, 1.5, size=blk.sigma2.shape)
        A = np.concatenate([blk.A for blk in state.blocks], axis=1)
        w = 1.0 / np.concatenate([blk.sigma2 for blk in state.blocks])
        X = np.concatenate(blocks.X, axis=1)
        cov = np.linalg.inv((A * w) @ A.T + np.eye(SHORT.r))
        mean = (cov @ (A * w) @ X.T).T

        def step(rng):
            step_U(state, blocks.X, rng)
            return state.U.copy()

        draws = draw_many(step)
        assert_mean_within(draws, mean, np.broadcast_to(np.sqrt(np.diag(cov)), mean.shape), k=4.5)
        np.testing.assert_allclose(np.cov(draws[:, 0, :].T), cov, atol=0.05 * np.abs(cov).max())

    def test_intercept(self, standardized):
        state, blocks = start(standardized)
        y = blocks.X[0][:, 0]
        outcome = state.blocks[0]
        outcome.sigma2 = np.array([0.8])
        resid_mean = (y - state.U @ outcome.A[:, 0]).mean()
        sd = np.sqrt(0.8 / y.shape[0])

        def step(rng):
            step_alpha0(state, y, rng)
            return state.alpha0

        draws = draw_many(step)
        assert_mean_within(draws, resid_mean, sd)
        assert draws.var() == pytest.approx(sd ** 2, rel=0.05)

    def test_component_and_group_probabilities(self, grouped):
        data, groups = grouped
        state, _ = start(data, groups)
        blk = state.blocks[1]
        blk.gamma[:] = [True, False]
        blk.r_ind[:] = [[True, True, False], [False, False, False]]

        def step(rng):
            step_q(state, 1, SHORT, rng)
            step_qr(state, 1, SHORT, rng)
            return [blk.q, blk.q_r]

        draws = draw_many(step)
        # Beta(a + 1, b + 1) for q and Beta(a + 2, b + 4) for q_r
        exact = [stats.beta(2, 2), stats.beta(3, 5)]
        assert_mean_within(draws, [d.mean() for d in exact], [d.std() for d in exact])

    def test_b0_without_groups(self, standardized):
        state, _ = start(standardized)
        blk = state.blocks[1]
        shape = SHORT.alpha0_shape + SHORT.alpha * blk.p
        rate = SHORT.beta_b + blk.lambda2.sum(axis=1)

        def step(rng):
            step_b0(state, 1, SHORT, rng)
            return blk.b0.copy()

        draws = draw_many(step)
        assert_mean_within(draws, shape / rate, np.sqrt(shape) / rate)

    def test_group_indicators_recover_prior(self, grouped):
        """No eta-active features: the (b, r) chain must sit at its prior."""
        data, groups = grouped
        state, blocks = start(data, groups)
        blk = state.blocks[1]
        blk.gamma[:] = False
        blk.eta[:] = False
        blk.A[:] = 0.0
        blk.q_r = 0.3
        P = blocks.membership[1]
        on, slab = [], []
        for i in range(10_000):
            step_group(state, 1, SHORT, substream(98, i), P)
            on.append(blk.r_ind.copy())
            slab.append(blk.b[blk.r_ind])
        assert np.mean(on) == pytest.approx(0.3, abs=0.01)
        assert np.concatenate(slab).mean() == pytest.approx(SHORT.alpha_b / SHORT.beta_b, abs=0.04)


class TestGammaEta:
    def test_zeroes_loadings_of_excluded_features(self, standardized):
        state, blocks = start(standardized)
        for i in range(10):
            step_gamma_eta(state, 1, blocks.X[1], SHORT, substream(4, i))
            blk = state.blocks[1]
            assert np.all(blk.A[~blk.eta] == 0.0)
            assert not np.any(blk.eta & ~blk.gamma[:, None])

    def test_outcome_eta_tracks_gamma(self, standardized):
        state, blocks = start(standardized)
        for i in range(10):
            step_gamma_eta(state, 0, blocks.X[0], SHORT, substream(4, i))
            np.testing.assert_array_equal(state.blocks[0].eta[:, 0], state.blocks[0].gamma)

    def test_active_component_refreshes_eta(self, standardized):
        """With U = 0 every feature's inclusion probability is the prior q_eta."""
        state, blocks = start(standardized)
        state.U = np.zeros_like(state.U)
        blk = state.blocks[1]
        blk.q = 1.0 - 1e-9
        blk.gamma[:] = True
        blk.eta[:] = True
        rows = []
        for i in range(2000):
            before = blk.eta.copy()
            step_gamma_eta(state, 1, blocks.X[1], SHORT, substream(6, i))
            assert blk.gamma.all()
            rows.append(blk.eta.copy())
            if i == 0:
                assert not np.array_equal(before, blk.eta)
        rows = np.array(rows)
        changed = np.mean([not np.array_equal(a, b) for a, b in zip(rows[:-1], rows[1:])])
        assert changed > 0.5
        assert abs(rows.mean() - SHORT.q_eta) < 0.01

    def test_eta_moves_during_sweeps(self):
        spec = ScenarioSpec(n=60, p1=120, p2=120, n_test=0, seed=8)
        data, _ = validate_and_standardize(simulate(spec).to_viewset())
        hp = Hyperparameters(r=4, seed=8)
        state, blocks = start(data, hp=hp)
        stays, moves = 0, 0
        for it in range(60):
            before = [(blk.gamma.copy(), blk.eta.copy()) for blk in state.blocks[1:3]]
            sweep(state, blocks, hp, seed=8, it=it)
            for (gamma, eta), blk in zip(before, state.blocks[1:3]):
                for l in np.flatnonzero(gamma & blk.gamma):
                    stays += 1
                    moves += not np.array_equal(eta[l], blk.eta[l])
        assert stays > 0
        assert moves > 0

    @pytest.mark.slow
    def test_stationary_distribution_matches_enumeration(self):
        """One component, two features: every (gamma, eta) state is enumerable."""
        rng = np.random.default_rng(21)
        n = 6
        U = rng.standard_normal((n, 1))
        X = 0.6 * U @ np.array([[1.0, 0.3]]) + rng.standard_normal((n, 2))
        hp = Hyperparameters(r=1, q_eta=0.4)
        data = ViewSet(views=[X], outcome=np.zeros(n))
        state = init_chain(hp, data, GroupDesign.empty(1), substream(0, 0))
        state.U = U
        blk = state.blocks[1]
        blk.q = 0.45
        blk.tau2 = np.array([[1.5, 0.8]])
        blk.sigma2 = np.array([1.0, 1.2])

        def log_weight(gamma, eta):
            g = np.array([gamma])
            total = np.log(blk.q) if gamma else np.log1p(-blk.q)
            for j in range(2):
                total += log_Gj(X[:, j], U, g, np.array([eta[j]]), blk.tau2[:, j], blk.sigma2[j],
                                hp.q_eta, eta_prior=gamma)
            return total

        states = [(False, (False, False))] + [(True, e) for e in itertools.product([False, True], repeat=2)]
        logw = np.array([log_weight(g, e) for g, e in states])
        exact = np.exp(logw - np.logaddexp.reduce(logw))

        counts = dict.fromkeys(states, 0)
        n_steps = 40_000
        for i in range(n_steps):
            step_gamma_eta(state, 1, X, hp, substream(9, i))
            counts[(bool(blk.gamma[0]), tuple(bool(v) for v in blk.eta[0]))] += 1
        freq = np.array([counts[s] for s in states]) / n_steps
        np.testing.assert_allclose(freq, exact, atol=0.02)


class TestSweep:
    def test_same_seed_same_state(self, grouped):
        data, groups = grouped
        state_a, blocks = start(data, groups)
        state_b = state_a.copy()
        for it in range(3):
            sweep(state_a, blocks, SHORT, seed=5, it=it)
            sweep(state_b, blocks, SHORT, seed=5, it=it)
        np.testing.assert_array_equal(state_a.U, state_b.U)
        for a, b in zip(state_a.blocks, state_b.blocks):
            np.testing.assert_array_equal(a.A, b.A)
            np.testing.assert_array_equal(a.eta, b.eta)

    def test_invariants_hold_with_covariates(self, tiny_raw_with_covariates):
        data, _ = validate_and_standardize(tiny_raw_with_covariates)
        state, blocks = start(data)
        for it in range(5):
            diag = sweep(state, blocks, SHORT, seed=1, it=it)
            state.check_invariants()
        assert state.blocks[-1].gamma.all()
        assert diag.propose_gamma[-1] == 0
        assert np.isfinite(diag.log_joint)

    def test_intercept_frozen_when_disabled(self, standardized):
        state, blocks = start(standardized)
        sweep(state, blocks, SHORT, seed=1, update_intercept=False)
        assert state.alpha0 == 0.0


class TestRunChain:
    def test_summary_shapes(self, grouped):
        data, groups = grouped
        summary, trace = run_chain(data, groups, SHORT)
        assert summary.n_retained == 20
        assert len(trace) == 30
        assert summary.block_names == ["outcome", "X1", "X2"]
        assert summary.mpp_eta[1].shape == (2, 6)
        assert summary.mpp_group[1].shape == (2, 3)
        assert summary.mpp_group[2] is None
        for mpp in summary.mpp_gamma:
            assert np.all((mpp >= 0) & (mpp <= 1))
        assert summary.diagnostics["chains"] == 1
        assert len(summary.diagnostics["accept_gamma"]) == 3

    def test_reproducible(self, standardized):
        a, _ = run_chain(standardized, None, SHORT)
        b, _ = run_chain(standardized, None, SHORT)
        np.testing.assert_array_equal(a.U_bar, b.U_bar)
        np.testing.assert_array_equal(a.mpp_eta[1], b.mpp_eta[1])

    def test_ignoring_groups(self, grouped):
        data, groups = grouped
        summary, _ = run_chain(data, groups, SHORT, use_groups=False)
        assert summary.mpp_group[1] is None

    def test_merge_weights_by_draws(self, standardized):
        a, _ = run_chain(standardized, None, SHORT, chain=0)
        b, _ = run_chain(standardized, None, Hyperparameters(r=2, n_iter=70, burn_in=10, seed=11), chain=1)
        merged = merge_chains([a, b])
        assert merged.n_retained == 80
        np.testing.assert_allclose(merged.U_bar, 0.25 * a.U_bar + 0.75 * b.U_bar)
        np.testing.assert_allclose(merged.mpp_gamma[0], 0.25 * a.mpp_gamma[0] + 0.75 * b.mpp_gamma[0])
        assert merged.diagnostics["chains"] == 2

    def test_parallel_chains_match_serial(self, standardized, monkeypatch):
        hp = Hyperparameters(r=2, n_iter=20, burn_in=5, seed=3, n_chains=2)
        monkeypatch.setenv("BIP_THREADS", "2")
        parallel = run_chains(standardized, None, hp)
        serial = merge_chains([run_chain(standardized, None, hp, chain=c)[0] for c in range(2)])
        np.testing.assert_array_equal(parallel.U_bar, serial.U_bar)
        np.testing.assert_array_equal(parallel.mpp_eta[1], serial.mpp_eta[1])


class TestThreads:
    def test_env_value(self, monkeypatch):
        monkeypatch.setenv("BIP_THREADS", "3")
        assert bip_threads() == 3

    @pytest.mark.parametrize("value", ["0", "many"])
    def test_invalid_env_value(self, monkeypatch, value):
        monkeypatch.setenv("BIP_THREADS", value)
        with pytest.raises(ConfigError):
            bip_threads()
