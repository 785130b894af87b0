import numpy as np
import pytest

from mcgan.autodiff import Tape, backward
from mcgan.bayes import (
    GaussianNoise,
    LatentPosterior,
    LinearGenerator,
    MapConfig,
    log_likelihood,
    map_estimate,
    posterior_stats,
)
from mcgan.forward import ObservationOp

LOG2PI = np.log(2 * np.pi)


def conjugate_posterior(a, idx, sigma, y):
    """Exact Gaussian posterior for z ~ N(0,I), y = (Az)[idx] + N(0, sigma^2)."""
    h = a[idx, :]
    prec = np.eye(a.shape[1]) + h.T @ h / sigma**2
    cov = np.linalg.inv(prec)
    mean = cov @ (h.T @ y) / sigma**2
    return mean, cov


class TestLogLikelihood:
    def test_zero_residual_constant(self):
        op = ObservationOp(indices=[0, 2], noise_std=1.0, state_len=4)
        u = np.array([1.0, 5.0, -2.0, 3.0])
        y = u[[0, 2]]
        assert log_likelihood(u, y, op, GaussianNoise(1.0)) == pytest.approx(-LOG2PI)

    def test_hand_evaluated_residual(self):
        op = ObservationOp(indices=[0, 1], noise_std=1.0, state_len=2)
        u = np.zeros(2)
        y = np.array([3.0, 4.0])
        got = log_likelihood(u, y, op, GaussianNoise(1.0))
        assert got == pytest.approx(-12.5 - LOG2PI)

    def test_vector_noise(self):
        op = ObservationOp(indices=[0], noise_std=3000.0, state_len=1)
        got = log_likelihood(np.zeros(1), np.array([3000.0]), op, GaussianNoise(3000.0))
        assert got == pytest.approx(-0.5 - np.log(3000.0) - 0.5 * LOG2PI)

    def test_noise_validation(self):
        with pytest.raises(ValueError):
            GaussianNoise(0.0)


class TestLatentPosterior:
    def test_conjugate_identity_value(self):
        # G = identity, observe everything, y = 0, unit noise:
        # log post = -||z||^2 - Nz log 2pi
        dim = 3
        gen = LinearGenerator(np.eye(dim))
        op = ObservationOp(indices=np.arange(dim), noise_std=1.0, state_len=dim)
        post = LatentPosterior(gen, op, GaussianNoise(1.0), np.zeros(dim))
        z = np.array([0.5, -1.0, 2.0])
        val = post.log_unnorm(z)
        assert val == pytest.approx(-np.dot(z, z) - dim * LOG2PI)
        tape = Tape()
        node = post.log_posterior_node(tape, tape.leaf(z))
        assert float(node.value) == pytest.approx(val, rel=1e-12)

    def test_gradient_matches_analytic_linear_gaussian(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(6, 3))
        idx = np.array([0, 2, 5])
        sigma = 0.7
        y = rng.normal(size=3)
        gen = LinearGenerator(a)
        op = ObservationOp(indices=idx, noise_std=sigma, state_len=6)
        post = LatentPosterior(gen, op, GaussianNoise(sigma), y)
        z = rng.normal(size=3)
        _, grad = post.logp_and_grad(z)
        h = a[idx, :]
        expected = h.T @ (y - h @ z) / sigma**2 - z
        np.testing.assert_allclose(grad, expected, rtol=1e-10, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(5, 2))
        gen = LinearGenerator(a)
        op = ObservationOp(indices=[1, 3], noise_std=0.5, state_len=5)
        post = LatentPosterior(gen, op, GaussianNoise(0.5), rng.normal(size=2))
        z = rng.normal(size=2)
        _, grad = post.logp_and_grad(z)
        h = 1e-6
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (post.log_unnorm(z + e) - post.log_unnorm(z - e)) / (2 * h)
            assert abs(grad[i] - fd) / max(abs(fd), 1e-8) < 1e-5

    def test_no_observations_is_prior(self):
        gen = LinearGenerator(np.eye(2))
        post = LatentPosterior(gen)
        z = np.array([1.0, -0.5])
        assert post.log_unnorm(z) == pytest.approx(
            -0.5 * np.dot(z, z) - LOG2PI
        )

    def test_dimension_mismatch_rejected(self):
        gen = LinearGenerator(np.eye(2))
        op = ObservationOp(indices=[0], noise_std=1.0, state_len=2)
        with pytest.raises(ValueError):
            LatentPosterior(gen, op, GaussianNoise(1.0), np.zeros(3))


class TestMapEstimate:
    def test_pure_prior_mode_is_origin(self):
        gen = LinearGenerator(np.eye(4))
        post = LatentPosterior(gen)
        z = map_estimate(post, MapConfig(steps=200, restarts=3, seed=1))
        np.testing.assert_allclose(z, 0.0, atol=1e-6)

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=(8, 4))
        idx = np.arange(8)
        sigma = 0.5
        z_true = rng.normal(size=4)
        y = a @ z_true + rng.normal(0, sigma, size=8)
        gen = LinearGenerator(a)
        op = ObservationOp(indices=idx, noise_std=sigma, state_len=8)
        post = LatentPosterior(gen, op, GaussianNoise(sigma), y)
        z_map = map_estimate(post, MapConfig(steps=3000, restarts=3, seed=2))
        mean, _ = conjugate_posterior(a, idx, sigma, y)
        np.testing.assert_allclose(z_map, mean, atol=1e-6)

    def test_objective_beats_every_start(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(5, 3))
        gen = LinearGenerator(a)
        op = ObservationOp(indices=np.arange(5), noise_std=1.0, state_len=5)
        post = LatentPosterior(gen, op, GaussianNoise(1.0), rng.normal(size=5))
        cfg = MapConfig(steps=100, restarts=5, seed=11)
        z_map = map_estimate(post, cfg)
        best = post.log_unnorm(z_map)
        starts = np.random.default_rng(cfg.seed).standard_normal((cfg.restarts, 3))
        for s in starts:
            assert best >= post.log_unnorm(s) - 1e-12

    def test_observation_shift_moves_map_like_conjugate_solution(self):
        rng = np.random.default_rng(10)
        a = rng.normal(size=(4, 4)) + 2 * np.eye(4)
        idx = np.arange(4)
        sigma = 0.8
        y = rng.normal(size=4)
        shift = 1.5
        gen = LinearGenerator(a)
        op = ObservationOp(indices=idx, noise_std=sigma, state_len=4)
        cfg = MapConfig(steps=4000, restarts=2, seed=0)
        z1 = map_estimate(post1 := LatentPosterior(gen, op, GaussianNoise(sigma), y), cfg)
        z2 = map_estimate(
            LatentPosterior(gen, op, GaussianNoise(sigma), y + shift), cfg
        )
        m1, _ = conjugate_posterior(a, idx, sigma, y)
        m2, _ = conjugate_posterior(a, idx, sigma, y + shift)
        np.testing.assert_allclose(
            gen.push(z2) - gen.push(z1), a @ (m2 - m1), atol=1e-5
        )
        assert post1.log_unnorm(z1) >= post1.log_unnorm(m1) - 1e-10


class TestPosteriorStats:
    def test_single_sample_identity(self):
        a = np.array([[2.0], [3.0]])
        gen = LinearGenerator(a)
        z = np.array([[1.5]])
        stats = posterior_stats(z, gen)
        np.testing.assert_allclose(stats.q_mean, [3.0, 4.5])
        np.testing.assert_allclose(stats.q_std, 0.0)

    def test_constant_function(self):
        gen = LinearGenerator(np.eye(2), n_param=1)
        samples = np.random.default_rng(0).normal(size=(50, 2))
        stats = posterior_stats(samples, gen, f=lambda v: 7.25)
        assert stats.f_q == pytest.approx(7.25)
        assert stats.f_m == pytest.approx(7.25)

    def test_conjugate_mean_within_monte_carlo_error(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(6, 3))
        idx = np.array([0, 1, 4])
        sigma = 0.6
        y = rng.normal(size=3)
        mean, cov = conjugate_posterior(a, idx, sigma, y)
        n = 20000
        zs = rng.multivariate_normal(mean, cov, size=n)
        gen = LinearGenerator(a)
        stats = posterior_stats(zs, gen)
        push_mean = a @ mean
        push_cov = a @ cov @ a.T
        se = np.sqrt(np.diag(push_cov) / n)
        assert np.all(np.abs(stats.q_mean - push_mean) < 3 * se + 1e-12)

    def test_requires_samples(self):
        gen = LinearGenerator(np.eye(2))
        with pytest.raises(ValueError):
            posterior_stats(np.zeros((0, 2)), gen)
