import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from dpdtune import _backend, data, dpd, models, oracle, smc
from dpdtune.errors import DegenerateWeights, InvalidParticleCount, NonPositiveGamma, SingularCovariance
from dpdtune.smc import FlatPrior, MhConfig

G = models.gaussian()


@pytest.fixture
def ds():
    return data.simulate_contaminated_gaussian(50, 1.0, 1.0, 10, 5, seed=2)


@pytest.fixture
def prior(ds):
    return FlatPrior.from_data(G, ds)


class TestInit:
    def test_uniform_weights(self, prior):
        s = smc.init_particles(G, prior, 4, seed=1)
        assert np.all(s.weights == 0.25)
        assert list(s.ancestors) == [0, 1, 2, 3]

    def test_deterministic(self, prior):
        a = smc.init_particles(G, prior, 100, seed=5)
        b = smc.init_particles(G, prior, 100, seed=5)
        assert np.array_equal(a.particles, b.particles)
        c = smc.init_particles(G, prior, 100, seed=6)
        assert not np.array_equal(a.particles, c.particles)

    def test_box(self, ds, prior):
        s = smc.init_particles(G, prior, 10_000, seed=0)
        sd = np.std(ds.y, ddof=1)
        mu, sigma = s.particles.T
        assert np.all(sigma > 0)
        assert mu.min() >= ds.y.min() - 2 * sd and mu.max() <= ds.y.max() + 2 * sd
        assert sigma.min() >= 0.1 * sd and sigma.max() <= 3 * sd

    def test_known_scale_box(self, ds):
        m = models.gaussian(sigma=1.0)
        s = smc.init_particles(m, FlatPrior.from_data(m, ds), 500, seed=0)
        assert np.all(s.particles[:, 1] == 1.0)

    def test_too_few(self, prior):
        with pytest.raises(InvalidParticleCount):
            smc.init_particles(G, prior, 1, seed=0)

    def test_regression_box_contains_ols(self):
        ds = data.stars_cyg()
        m = models.regression(1)
        p = FlatPrior.from_data(m, ds)
        beta, _ = oracle.ols(ds, m)
        assert p.box_lower[0] < beta[0] < p.box_upper[0]


class TestWeights:
    def test_same_gamma_is_zero(self, ds, prior):
        s = replace(smc.init_particles(G, prior, 10, seed=0), gamma=0.3)
        assert np.all(smc.incremental_log_weights(G, s, 0.3, ds) == 0.0)

    def test_two_call_oracle(self):
        hand = data.Dataset(y=[0.0, 0.5])
        theta = np.array([[0.0, 1.0], [0.3, 0.8], [-1.0, 2.0]])
        s = smc.ParticleSystem(0, 0.5, theta, np.full(3, 1 / 3), np.arange(3), 0)
        got = smc.incremental_log_weights(G, s, 0.6, hand)
        want = [dpd.total_log_potential(G, th, 0.6, hand) - dpd.total_log_potential(G, th, 0.5, hand)
                for th in theta]
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_normalization(self, rng):
        w = smc.normalize_log_weights(rng.normal(scale=50, size=1000))
        assert abs(w.sum() - 1.0) < 1e-12
        assert np.all(w >= 0)

    def test_normalization_extreme(self):
        w = smc.normalize_log_weights([-1e6, -1e6 + math.log(3)])
        np.testing.assert_allclose(w, [0.25, 0.75])

    def test_degenerate(self):
        with pytest.raises(DegenerateWeights):
            smc.normalize_log_weights([-np.inf, -np.inf])
        with pytest.raises(DegenerateWeights):
            smc.normalize_log_weights([0.0, np.nan])

    def test_gamma_checked(self, ds, prior):
        s = replace(smc.init_particles(G, prior, 10, seed=0), gamma=0.3)
        with pytest.raises(NonPositiveGamma):
            smc.incremental_log_weights(G, s, 0.0, ds)


def _system(weights, d=1):
    n = len(weights)
    return smc.ParticleSystem(0, 0.3, np.arange(n * d, dtype=float).reshape(n, d),
                              np.asarray(weights, float), np.arange(n), 0)


class TestResample:
    def test_point_mass(self):
        out = smc.resample_multinomial(_system([1, 0, 0, 0]), np.random.default_rng(0))
        assert list(out.ancestors) == [0, 0, 0, 0]
        assert np.all(out.weights == 0.25)

    def test_uniform_frequency(self):
        rng = np.random.default_rng(1)
        s = _system([0.25] * 4)
        counts = np.zeros(4)
        for _ in range(100_000 // 4):
            counts += np.bincount(smc.resample_multinomial(s, rng).ancestors, minlength=4)
        np.testing.assert_allclose(counts / counts.sum(), 0.25, atol=0.005)

    def test_two_point_frequency(self):
        rng = np.random.default_rng(2)
        s = _system([0.7, 0.3])
        hits = sum(int(smc.resample_multinomial(s, rng).ancestors[0] == 0) for _ in range(100_000))
        assert hits / 100_000 == pytest.approx(0.7, abs=0.01)

    def test_unbiased(self, rng):
        w = rng.dirichlet(np.ones(6))
        s = _system(w)
        h = np.sin(s.particles[:, 0]) + s.particles[:, 0] ** 2
        target = w @ h
        gen = np.random.default_rng(3)
        est = np.array([h[smc.resample_multinomial(s, gen).ancestors].mean() for _ in range(20_000)])
        se = est.std(ddof=1) / math.sqrt(est.size)
        assert abs(est.mean() - target) < 3 * se

    def test_invalid(self):
        with pytest.raises(DegenerateWeights):
            smc.resample_multinomial(_system([0.5, -0.5]), np.random.default_rng(0))


class TestProposal:
    def test_identical_particles(self):
        s = smc.ParticleSystem(0, 0.3, np.ones((5, 2)), np.full(5, 0.2), np.arange(5), 0)
        with pytest.raises(SingularCovariance):
            smc.adaptive_proposal_cov(s)
        chol = smc._proposal_chol(s, MhConfig(fallback_scale=0.1))
        np.testing.assert_array_equal(chol, 0.1 * np.eye(2))

    def test_hand_computation(self):
        s = smc.ParticleSystem(0, 0.3, np.array([[0.0, 1.0], [2.0, 1.0]]), np.array([0.5, 0.5]),
                               np.arange(2), 0)
        mean, prop = smc.adaptive_proposal_cov(s)
        np.testing.assert_allclose(mean, [1.0, 1.0])
        expected = 2.38 / math.sqrt(2) * np.array([[1.0, 0.0], [0.0, 0.0]]) + 1e-10 * np.eye(2)
        np.testing.assert_allclose(prop, expected, rtol=1e-12, atol=1e-20)

    def test_sampling_oracle(self):
        rng = np.random.default_rng(4)
        cov = np.array([[2.0, 0.6], [0.6, 0.5]])
        x = rng.multivariate_normal([0, 0], cov, size=10_000)
        s = smc.ParticleSystem(0, 0.3, x, np.full(10_000, 1e-4), np.arange(10_000), 0)
        _, prop = smc.adaptive_proposal_cov(s)
        est = (prop - 1e-10 * np.eye(2)) * math.sqrt(2) / 2.38
        np.testing.assert_allclose(est, cov, rtol=0.05)

    def test_known_scale_moves_only_free(self, ds):
        m = models.gaussian(sigma=1.0)
        s = smc.init_particles(m, FlatPrior.from_data(m, ds), 200, seed=0)
        chol = smc._proposal_chol(s, MhConfig(), m.free_mask)
        assert np.all(chol[1] == 0) and np.all(chol[:, 1] == 0)
        assert chol[0, 0] > 0


class TestMove:
    def test_tiny_scale_accepts(self, ds, prior):
        s = replace(smc.init_particles(G, prior, 50, seed=0), gamma=0.3)
        cfg = MhConfig(n_moves=5, fixed_cov=1e-24 * np.eye(2))
        out = smc.mh_move(G, s, 0.3, ds, prior, cfg, np.random.default_rng(0))
        assert out.accept_rate > 0.99
        np.testing.assert_allclose(out.particles, s.particles, atol=1e-9)

    def test_negative_sigma_rejected(self, ds, prior):
        theta = np.array([[1.0, 0.05], [1.0, 0.05]])
        s = smc.ParticleSystem(0, 0.3, theta, np.full(2, 0.5), np.arange(2), 0)
        # sigma steps of sd 5 from 0.05 land below zero about half the time
        big = MhConfig(n_moves=200, fixed_cov=np.diag([1e-6, 25.0]))
        out = smc.mh_move(G, s, 0.3, ds, prior, big, np.random.default_rng(1))
        assert np.all(out.particles[:, 1] > 0)

    def test_long_chain_mean(self, backend):
        # gamma -> 0 with known sigma: posterior of mu is N(ybar, 1/n)
        ds = data.simulate_contaminated_gaussian(40, 0.5, 1.0, 0, 5, seed=9)
        m = models.gaussian(sigma=1.0)
        prior = FlatPrior.from_data(m, ds)
        theta = np.array([[ds.y.mean(), 1.0], [ds.y.mean(), 1.0]])
        s = smc.ParticleSystem(0, 1e-4, theta, np.full(2, 0.5), np.arange(2), 0)
        rng = np.random.default_rng(0)
        cfg = MhConfig(n_moves=10, fixed_cov=np.array([[0.3 / ds.n]]))
        draws = []
        for _ in range(1000):
            s = smc.mh_move(m, s, 1e-4, ds, prior, cfg, rng)
            draws.append(s.particles[0, 0])
        draws = np.array(draws)
        # lag-10 thinned draws are nearly independent at this proposal scale
        se = math.sqrt(1.0 / ds.n) / math.sqrt(draws.size) * 3
        assert abs(draws.mean() - ds.y.mean()) < 3 * se

    def test_stationary_ks(self, backend):
        ds = data.simulate_contaminated_gaussian(30, 0.0, 1.0, 0, 5, seed=4)
        m = models.gaussian(sigma=1.0)
        s = oracle.fixed_gamma_mcmc(m, ds, 1e-4, cfg=oracle.McmcConfig(202_000, 2_000, thin=20), seed=3)
        mu = s.thetas[:, 0]
        assert mu.size == 10_000
        assert np.all(s.thetas[:, 1] == 1.0)
        ks = stats.kstest(mu, "norm", args=(ds.y.mean(), 1 / math.sqrt(ds.n)))
        assert ks.statistic < 1.63 / math.sqrt(mu.size)


class TestStep:
    def test_step_contract(self, ds, prior):
        s = replace(smc.init_particles(G, prior, 200, seed=0), gamma=0.2)
        out = smc.smc_step(G, s, 0.25, ds, prior, MhConfig(n_moves=3))
        assert out.gamma == 0.25 and out.step == 1
        assert np.all(out.weights == 1 / 200)
        assert abs(out.weights.sum() - 1) < 1e-10
        assert 0 < out.ess <= 200
        assert np.all((out.ancestors >= 0) & (out.ancestors < 200))

    def test_same_gamma_keeps_full_ess(self, ds, prior):
        s = replace(smc.init_particles(G, prior, 100, seed=0), gamma=0.2)
        out = smc.smc_step(G, s, 0.2, ds, prior, MhConfig(n_moves=2))
        assert out.ess == pytest.approx(100)

    def test_ess_threshold_skips_resampling(self, ds, prior):
        s = replace(smc.init_particles(G, prior, 100, seed=0), gamma=0.2)
        out = smc.smc_step(G, s, 0.2, ds, prior, MhConfig(n_moves=2, ess_threshold=0.5))
        assert list(out.ancestors) == list(range(100))

    def test_bit_identical(self, ds, prior, backend):
        def run():
            s = replace(smc.init_particles(G, prior, 300, seed=11), gamma=0.1)
            for g in (0.12, 0.15, 0.14):
                s = smc.smc_step(G, s, g, ds, prior, MhConfig(n_moves=4))
            return s

        a, b = run(), run()
        assert np.array_equal(a.particles, b.particles)
        assert np.array_equal(a.ancestors, b.ancestors)

    def test_backends_agree(self, ds, prior):
        if "cython" not in _backend.available():
            pytest.skip("compiled kernels not built")
        out = {}
        for name in ("python", "cython"):
            _backend.set_backend(name)
            s = replace(smc.init_particles(G, prior, 200, seed=3), gamma=0.1)
            for g in (0.12, 0.15):
                s = smc.smc_step(G, s, g, ds, prior, MhConfig(n_moves=5))
            out[name] = s.particles
        _backend.set_backend("auto")
        np.testing.assert_allclose(out["python"], out["cython"], rtol=1e-10)


class TestAnneal:
    def test_reaches_target(self, ds, prior):
        s = smc.init_particles(G, prior, 400, seed=0)
        out, lams = smc.anneal(G, s, 0.2, ds, prior, MhConfig(n_moves=5))
        assert lams[0] == 0.0 and lams[-1] == 1.0
        assert np.all(np.diff(lams) > 0)
        assert np.all(out.particles[:, 1] > 0)
        # robust fit sits near the clean mean
        assert abs(out.mean()[0] - 1.0) < 0.5

    def test_schedule(self, ds, prior):
        s = smc.init_particles(G, prior, 200, seed=0)
        _, lams = smc.anneal(G, s, 0.0, ds, prior, MhConfig(n_moves=2), schedule=np.linspace(0, 1, 6))
        np.testing.assert_allclose(lams, np.linspace(0, 1, 6))

    def test_schedule_must_rise(self, ds, prior):
        s = smc.init_particles(G, prior, 50, seed=0)
        with pytest.raises(ValueError):
            smc.anneal(G, s, 0.0, ds, prior, MhConfig(n_moves=1), schedule=[0, 0.5, 0.2, 1])


def test_weighted_quantile():
    v = np.arange(10.0)
    q = smc.weighted_quantile(v, np.full(10, 0.1), [0.05, 0.5, 0.95])
    np.testing.assert_array_equal(q, [0.0, 4.0, 9.0])


def test_ess():
    assert smc.ess(np.full(8, 1 / 8)) == pytest.approx(8)
    assert smc.ess([1.0, 0.0]) == pytest.approx(1)
