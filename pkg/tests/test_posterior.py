import numpy as np
import pytest

from glmmvb import engine, families, matcalc, model, posterior, reparam

from conftest import random_dataset, random_gp

from test_engine import micro_model


def tiny_global_state(data, mu_global, local_scale=0.4, rng=None):
    """State whose global block is (numerically) a point mass."""
    g = mu_global.size
    state = engine.VariationalState.initial(data.n, data.r, g)
    nr = data.n * data.r
    if rng is not None:
        state.mu[:nr] = 0.3 * rng.standard_normal(nr)
        state.cstar_local += local_scale * rng.standard_normal(state.cstar_local.shape)
    state.mu[nr:] = mu_global
    state.cstar_global[matcalc.diag_positions(g)] = np.log(1e-12)
    return state


class TestSimulateB:
    def test_degenerate_q_is_transform_of_mean(self, rng):
        data = random_dataset(rng, families.POISSON, r=1, n=4)
        prior = model.default_prior(data)
        gp = random_gp(rng, data.p, 1)
        state = tiny_global_state(data, np.concatenate([gp.beta, gp.omega]))
        state.cstar_local[:] = np.log(1e-12)
        summary = posterior.simulate_b(data, prior, state, "a1", 200, seed=1)
        t = reparam.transform_a1(data, gp)
        mu_loc, _ = state.split(state.mu)
        expect = t.invert(mu_loc)
        np.testing.assert_allclose(summary.b_mean, expect, atol=1e-9)
        # one-pass accumulation leaves ~sqrt(eps)*|mean| cancellation noise
        assert np.all(summary.b_sd < 1e-6)

    def test_gaussian_pointmass_global_matches_closed_form(self, rng):
        # with theta_G degenerate, b ~ N(L mu_i + lambda, L Ci Ci' L') exactly
        data = random_dataset(rng, families.GAUSSIAN_UNIT, r=2, n=3)
        prior = model.default_prior(data)
        gp = random_gp(rng, data.p, 2)
        state = tiny_global_state(data, np.concatenate([gp.beta, gp.omega]), rng=rng)
        n_draws = 40_000
        summary = posterior.simulate_b(data, prior, state, "a1", n_draws, seed=3)
        t = reparam.transform_a1(data, gp)
        mu_loc, _ = state.split(state.mu)
        mean_exact = t.invert(mu_loc)
        C = state.c_local()
        cov_exact = np.einsum("nab,ncb,nxa,nyc->nxy", C, C, t.L, t.L)
        sd_exact = np.sqrt(np.diagonal(cov_exact, axis1=-2, axis2=-1))
        se_mean = sd_exact / np.sqrt(n_draws)
        assert np.all(np.abs(summary.b_mean - mean_exact) < 3.5 * se_mean)
        se_sd = sd_exact / np.sqrt(2 * (n_draws - 1))
        assert np.all(np.abs(summary.b_sd - sd_exact) < 3.5 * se_sd)

    def test_micro_model_matches_joint_gaussian_posterior(self):
        # converged conjugate fit: compare simulated b moments with the exact
        # Gaussian joint posterior computed by dense linear algebra
        data, prior = micro_model()
        cfg = engine.FitConfig(method="a1", seed=1, max_iter=12_000, window=12_000,
                               final_elbo_draws=0)
        res = engine.fit(data, prior, cfg)
        n_draws = 40_000
        summary = posterior.simulate_b(data, prior, res.state, "a1", n_draws, seed=5)

        # exact posterior of (beta, b1..bn) in the conjugate model
        Omega = model.GlobalParams(np.zeros(1), prior.omega, 1).omega_matrix().item()
        k = int(data.n_obs[0])
        nb = data.n
        dim = 1 + nb
        prec = np.zeros((dim, dim))
        lin = np.zeros(dim)
        prec[0, 0] = 1.0 / prior.sigma_beta2
        for i in range(nb):
            X = data.X[i, :k]
            Z = data.Z[i, :k]
            y = data.y[i, :k]
            prec[0, 0] += float(X[:, 0] @ X[:, 0])
            prec[0, 1 + i] += float(X[:, 0] @ Z[:, 0])
            prec[1 + i, 0] += float(Z[:, 0] @ X[:, 0])
            prec[1 + i, 1 + i] = float(Z[:, 0] @ Z[:, 0]) + Omega
            lin[0] += float(X[:, 0] @ y)
            lin[1 + i] = float(Z[:, 0] @ y)
        cov = np.linalg.inv(prec)
        mean = cov @ lin
        sd = np.sqrt(np.diag(cov))
        se = sd[1:] / np.sqrt(n_draws)
        assert np.all(np.abs(summary.b_mean[:, 0] - mean[1:]) < 4 * se)
        assert np.all(np.abs(summary.b_sd[:, 0] - sd[1:]) < 4 * sd[1:] / np.sqrt(n_draws))

    def test_scale_summary_from_concentrated_omega(self, rng):
        data = random_dataset(rng, families.POISSON, r=1, n=3)
        prior = model.default_prior(data)
        state = tiny_global_state(data, np.concatenate([np.zeros(data.p), [-0.64]]))
        summary = posterior.simulate_b(data, prior, state, "a1", 500, seed=2)
        assert summary.scale_names == ["sigma"]
        assert abs(summary.scale_mean[0] - np.exp(0.64)) < 1e-6

    def test_rejection_of_pathological_draws(self, rng):
        # omega draws straddling the exp overflow boundary give non-finite
        # precisions; those draws are rejected, resampled and warned about
        data = model.Dataset.from_lists(families.POISSON, [[2.0, 3.0]],
                                        [[[1.0], [1.0]]], [[[1.0], [1.0]]])
        prior = model.default_prior(data)
        state = engine.VariationalState.initial(1, 1, 2)
        state.mu[2] = 355.0  # W = e^omega at the overflow edge
        state.cstar_global[matcalc.diag_positions(2)] = [np.log(1e-12), np.log(0.3)]
        with pytest.warns(RuntimeWarning, match="rejected"):
            summary = posterior.simulate_b(data, prior, state, "a1", 400, seed=4)
        assert summary.n_rejected > 0
        assert np.all(np.isfinite(summary.b_mean))


class TestScaleMapping:
    def test_r2_roundtrip(self, rng):
        omega = 0.7 * rng.standard_normal((50, 3))
        names, scales = posterior._scales_from_omega(omega, 2)
        assert names == ["sigma1", "sigma2", "rho"]
        gp = model.GlobalParams(np.zeros((50, 0)), omega, 2)
        cov = np.linalg.inv(gp.omega_matrix())
        s1, s2, rho = scales[:, 0], scales[:, 1], scales[:, 2]
        rebuilt = np.empty_like(cov)
        rebuilt[:, 0, 0] = s1 ** 2
        rebuilt[:, 1, 1] = s2 ** 2
        rebuilt[:, 0, 1] = rebuilt[:, 1, 0] = rho * s1 * s2
        np.testing.assert_allclose(rebuilt, cov, atol=1e-12, rtol=1e-12)
        assert np.all(np.abs(rho) <= 1)

    def test_r1_is_inverse_cholesky(self, rng):
        omega = rng.standard_normal((20, 1))
        names, scales = posterior._scales_from_omega(omega, 1)
        np.testing.assert_allclose(scales[:, 0], np.exp(-omega[:, 0]), rtol=1e-12)


class TestCompareMetrics:
    def test_identical_inputs(self):
        r1, r2 = posterior.compare_metrics([1.0, 2.0], [0.5, 0.5], [1.0, 2.0],
                                           [0.5, 0.5])
        np.testing.assert_array_equal(r1, [0.0, 0.0])
        np.testing.assert_array_equal(r2, [1.0, 1.0])

    def test_ratio_values(self):
        r1, r2 = posterior.compare_metrics([1.5], [1.0], [1.0], [2.0])
        assert r1[0] == 0.5 and r2[0] == 2.0

    def test_zero_sd_raises(self):
        from glmmvb.exceptions import ZeroSdError
        with pytest.raises(ZeroSdError):
            posterior.compare_metrics([1.0], [0.0], [1.0], [1.0])
