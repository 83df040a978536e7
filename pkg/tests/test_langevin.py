import numpy as np
import pytest

from latentad import generator as gen
from latentad import hierarchy as h
from latentad import langevin as lv
from latentad.errors import NumericError, ValidationError


def linear_model(w):
    """Dense linear 'generator' Yhat = (W z) reshaped to one row."""
    def generate(z):
        return (w @ z)[None, :]

    def vjp(z, g):
        return w.T @ g[0]

    return generate, vjp


def ridge_solution(w, y, sigma_z):
    return np.linalg.solve(w.T @ w + sigma_z**2 * np.eye(w.shape[1]), w.T @ y)


def make_w(rng, n_out, n_in, smin=0.3, smax=1.0):
    """Random matrix with singular values in [smin, smax]: the noiseless chain
    at step size 1e-3 / sigma 0.025 is a contraction for this spectrum."""
    u, _, vt = np.linalg.svd(rng.standard_normal((n_out, n_in)), full_matrices=False)
    s = np.linspace(smin, smax, min(n_out, n_in))
    return u @ np.diag(s) @ vt


def tiny_generator(seed=0):
    spec = h.HierarchySpec((1, 2), (3, 2), 8)
    arch = gen.GeneratorArch(2, 8, 4, 32, h.latent_layout(spec).state_dim)
    params = gen.build_generator(arch, np.random.default_rng(seed))
    return spec, params


class TestPosteriorGrad:
    def test_perfect_reconstruction_leaves_prior_term(self):
        spec, params = tiny_generator()
        rng = np.random.default_rng(1)
        z = rng.standard_normal(h.latent_layout(spec).total_dim)
        y = gen.generate_window(z, params, spec, mode="eval")
        cfg = lv.LangevinConfig(1, 1e-3, 0.025, noise_enabled=False)
        grad = lv.posterior_grad(z, y, np.ones_like(y, dtype=bool), params, spec, cfg)
        assert np.allclose(grad, -z, atol=1e-12)

    def test_fully_occluded_gives_prior_gradient(self):
        spec, params = tiny_generator()
        rng = np.random.default_rng(2)
        z = rng.standard_normal(h.latent_layout(spec).total_dim)
        y = rng.standard_normal((2, spec.window_len)) * 100.0
        cfg = lv.LangevinConfig(1, 1e-3, 0.025, noise_enabled=False)
        grad = lv.posterior_grad(z, y, np.zeros_like(y, dtype=bool), params, spec, cfg)
        assert np.array_equal(grad, -z)

    def test_linear_generator_matches_matrix_formula(self):
        rng = np.random.default_rng(3)
        w = make_w(rng, 12, 5)
        generate, vjp = linear_model(w)
        z = rng.standard_normal(5)
        y = rng.standard_normal((1, 12))
        sigma = 0.025
        resid = lv.masked_residual(y, generate(z), np.ones_like(y, dtype=bool))
        grad = vjp(z, resid) / sigma**2 - z
        want = w.T @ (y[0] - w @ z) / sigma**2 - z
        assert np.allclose(grad, want, atol=1e-12)


class TestChain:
    def test_prior_contraction_geometric(self):
        # zero generator, zero target: |z_t| = (1 - s)^t |z_0|
        rng = np.random.default_rng(4)
        z0 = rng.standard_normal(6)
        y = np.zeros((1, 4))
        mask = np.ones_like(y, dtype=bool)
        generate = lambda z: np.zeros((1, 4))
        vjp = lambda z, g: np.zeros(6)
        s = 1e-3
        for steps in (1, 10, 50):
            cfg = lv.LangevinConfig(steps, s, 0.025, noise_enabled=False)
            z = lv.run_chain(y, mask, generate, vjp, cfg, z0)
            assert np.allclose(z, (1 - s) ** steps * z0, atol=1e-12)

    def test_linear_generator_reaches_ridge_solution(self):
        rng = np.random.default_rng(5)
        w = make_w(rng, 16, 6)
        generate, vjp = linear_model(w)
        y = rng.standard_normal((1, 16))
        mask = np.ones_like(y, dtype=bool)
        cfg = lv.LangevinConfig(500, 1e-3, 0.025, noise_enabled=False)
        z = lv.run_chain(y, mask, generate, vjp, cfg, rng.standard_normal(6))
        want = ridge_solution(w, y[0], 0.025)
        assert np.linalg.norm(z - want) / np.linalg.norm(want) < 1e-3

    def test_noiseless_descent_is_monotone_on_linear_problem(self):
        rng = np.random.default_rng(6)
        w = make_w(rng, 16, 6)
        generate, vjp = linear_model(w)
        y = rng.standard_normal((1, 16))
        mask = np.ones_like(y, dtype=bool)
        sigma = 0.025
        z = rng.standard_normal(6)

        def nlp(z):
            r = y[0] - w @ z
            return 0.5 * (r @ r) / sigma**2 + 0.5 * (z @ z)

        cfg = lv.LangevinConfig(1, 1e-3, sigma, noise_enabled=False)
        values = [nlp(z)]
        for _ in range(200):
            z = lv.run_chain(y, mask, generate, vjp, cfg, z)
            values.append(nlp(z))
        # non-increasing up to roundoff on O(1e4) objective values
        assert all(b <= a + 1e-9 * (1.0 + abs(a)) for a, b in zip(values, values[1:]))

    def test_fixed_seed_noisy_trajectories_bit_identical(self):
        spec, params = tiny_generator()
        rng = np.random.default_rng(7)
        y = rng.standard_normal((2, spec.window_len))
        mask = np.ones_like(y, dtype=bool)
        z0 = rng.standard_normal(h.latent_layout(spec).total_dim)
        cfg = lv.LangevinConfig(5, 1e-3, 0.025, noise_enabled=True)
        za = lv.langevin_infer(y, mask, params, spec, cfg, z0,
                               rng=np.random.default_rng(99))
        zb = lv.langevin_infer(y, mask, params, spec, cfg, z0,
                               rng=np.random.default_rng(99))
        assert np.array_equal(za, zb)

    def test_masked_entries_never_influence_result(self):
        spec, params = tiny_generator()
        rng = np.random.default_rng(8)
        y = rng.standard_normal((2, spec.window_len))
        mask = rng.uniform(size=y.shape) < 0.6
        z0 = rng.standard_normal(h.latent_layout(spec).total_dim)
        cfg = lv.LangevinConfig(10, 1e-3, 0.025, noise_enabled=True)
        za = lv.langevin_infer(y, mask, params, spec, cfg, z0, rng=np.random.default_rng(1))
        y2 = y.copy()
        y2[~mask] = 1e9
        y2[np.unravel_index(np.flatnonzero(~mask)[0], y.shape)] = np.nan
        zb = lv.langevin_infer(y2, mask, params, spec, cfg, z0, rng=np.random.default_rng(1))
        assert np.array_equal(za, zb)

    def test_noisy_equals_noiseless_plus_injected_terms(self):
        spec, params = tiny_generator()
        rng = np.random.default_rng(9)
        y = rng.standard_normal((2, spec.window_len))
        mask = np.ones_like(y, dtype=bool)
        z0 = rng.standard_normal(h.latent_layout(spec).total_dim)

        class ZeroRng:
            def standard_normal(self, shape):
                return np.zeros(shape)

        cfg_noisy = lv.LangevinConfig(8, 1e-3, 0.025, noise_enabled=True)
        cfg_clean = lv.LangevinConfig(8, 1e-3, 0.025, noise_enabled=False)
        za = lv.langevin_infer(y, mask, params, spec, cfg_noisy, z0, rng=ZeroRng())
        zb = lv.langevin_infer(y, mask, params, spec, cfg_clean, z0)
        assert np.array_equal(za, zb)

    def test_exact_step_count(self):
        calls = {"n": 0}

        def generate(z):
            calls["n"] += 1
            return np.zeros((1, 2))

        cfg = lv.LangevinConfig(7, 1e-3, 0.025, noise_enabled=False)
        lv.run_chain(np.zeros((1, 2)), np.ones((1, 2), bool), generate,
                     lambda z, g: np.zeros(3), cfg, np.zeros(3))
        assert calls["n"] == 7

    def test_nonfinite_diagnostic_names_step(self):
        generate = lambda z: np.zeros((1, 1))
        vjp = lambda z, g: np.array([np.inf])
        cfg = lv.LangevinConfig(3, 1e-3, 0.025, noise_enabled=False)
        with pytest.raises(NumericError, match="step 0"):
            lv.run_chain(np.ones((1, 1)), np.ones((1, 1), bool), generate, vjp, cfg,
                         np.zeros(1))

    def test_noise_requires_rng(self):
        cfg = lv.LangevinConfig(1, 1e-3, 0.025, noise_enabled=True)
        with pytest.raises(ValidationError):
            lv.run_chain(np.zeros((1, 1)), np.ones((1, 1), bool),
                         lambda z: np.zeros((1, 1)), lambda z, g: np.zeros(1), cfg,
                         np.zeros(1))

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            lv.LangevinConfig(0, 1e-3, 0.025, noise_enabled=False)
        with pytest.raises(ValidationError):
            lv.LangevinConfig(1, 0.0, 0.025, noise_enabled=False)
        with pytest.raises(ValidationError):
            lv.LangevinConfig(1, 1e-3, 0.0, noise_enabled=False)
