import numpy as np
import pytest

from glmmvb import families, gradients, matcalc, model, reparam

from conftest import (
    fd_gradient,
    max_rel_err,
    random_dataset,
    random_gp,
    random_wishart_prior,
    reparam_value,
)


def full_fd(data, gp, b_tilde, method, prior, h=1e-5):
    theta = np.concatenate([b_tilde.ravel(), gp.beta, gp.omega])
    return fd_gradient(lambda th: float(reparam_value(data, th, method, prior)),
                       theta, h=h)


def analytic(data, gp, b_tilde, method, prior):
    return gradients.grad_full(data, gp, b_tilde, method, prior).concat()


class TestAVec:
    def test_hand_case(self):
        data = model.Dataset.from_lists(families.POISSON, [[1.0, 2.0]],
                                        [[[0.0], [0.0]]], [[[1.0], [1.0]]])
        gp = model.GlobalParams([0.0], [0.0], 1)
        a = gradients.a_vec(data, gp, np.array([[0.5]]))
        # eta = 0.5 each: Z'(y - e^eta) - Omega b
        expect = (1.0 - np.exp(0.5)) + (2.0 - np.exp(0.5)) - 0.5
        np.testing.assert_allclose(a, [[expect]], rtol=1e-12)

    def test_zero_at_mode(self, rng):
        data = random_dataset(rng, families.BERNOULLI, r=2, n=3)
        gp = random_gp(rng, 2, 2)
        t = reparam.transform_a2(data, gp)
        a = gradients.a_vec(data, gp, t.lam)
        assert np.abs(a).max() < 1e-7

    def test_matches_fd_in_b(self, rng):
        data = random_dataset(rng, families.BINOMIAL, r=2, n=2)
        gp = random_gp(rng, 2, 2)
        b = 0.4 * rng.standard_normal((2, 2))

        def conditional(bflat):
            bb = bflat.reshape(2, 2)
            eta = data.eta(gp.beta, bb)
            ll = (data.mask * data.family.loglik(data.y, eta, data.trials)).sum()
            quad = np.einsum("nr,rs,ns->", bb, gp.omega_matrix(), bb)
            return float(ll - 0.5 * quad)

        fd = fd_gradient(conditional, b.ravel()).reshape(2, 2)
        assert max_rel_err(gradients.a_vec(data, gp, b), fd) < 1e-6


class TestLocalBlocks:
    def test_identity_and_scalar(self):
        t = reparam.Transforms("a1", np.zeros((1, 2)), np.eye(2)[None],
                               np.eye(2)[None])
        a = np.array([[1.5, -0.5]])
        np.testing.assert_array_equal(gradients.grad_local(t, a), a)
        t1 = reparam.Transforms("a1", np.zeros((1, 1)), np.full((1, 1, 1), 2.0),
                                np.full((1, 1, 1), 4.0))
        np.testing.assert_array_equal(gradients.grad_local(t1, [[3.0]]), [[6.0]])

    def test_btilde_strictly_upper_vanishes(self):
        t = reparam.Transforms("a1", np.zeros((1, 2)), np.eye(2)[None],
                               np.eye(2)[None])
        a = np.array([[1.0, 0.0]])
        bt = np.array([[0.0, 1.0]])
        np.testing.assert_array_equal(gradients.btilde_mat(t, a, bt),
                                      np.zeros((1, 2, 2)))

    def test_btilde_zero_b(self, rng):
        data = random_dataset(rng, families.POISSON, r=2, n=2)
        gp = random_gp(rng, 2, 2)
        t = reparam.transform_a1(data, gp)
        a = rng.standard_normal((2, 2))
        np.testing.assert_array_equal(gradients.btilde_mat(t, a, np.zeros((2, 2))),
                                      np.zeros((2, 2, 2)))

    def test_local_gradient_zero_at_mode(self, rng):
        data = random_dataset(rng, families.POISSON, r=1, n=4)
        gp = random_gp(rng, 2, 1)
        pr = random_wishart_prior(rng, 1)
        g = gradients.grad_full(data, gp, np.zeros((4, 1)), "a2", pr)
        assert np.abs(g.local).max() < 1e-7


class TestGlobalBlocks:
    def test_no_subjects_prior_only(self, rng):
        data = model.Dataset(families.POISSON, np.zeros((0, 1)), np.zeros((0, 1, 2)),
                             np.zeros((0, 1, 1)))
        gp = random_gp(rng, 2, 1)
        pr = random_wishart_prior(rng, 1)
        g = gradients.grad_full(data, gp, np.zeros((0, 1)), "a1", pr)
        np.testing.assert_allclose(g.beta, -gp.beta / pr.sigma_beta2, atol=1e-14)
        np.testing.assert_allclose(g.omega, model.prior_grad_omega(gp, pr), atol=1e-14)

    def test_gaussian_methods_agree(self, rng):
        for _ in range(10):
            r = int(rng.integers(1, 4))
            data = random_dataset(rng, families.GAUSSIAN_UNIT, r=r, n=3)
            gp = random_gp(rng, 2, r)
            pr = random_wishart_prior(rng, r)
            bt = rng.standard_normal((3, r))
            g1 = gradients.grad_full(data, gp, bt, "a1", pr)
            g2 = gradients.grad_full(data, gp, bt, "a2", pr)
            np.testing.assert_allclose(g1.beta, g2.beta, atol=1e-10)
            np.testing.assert_allclose(g1.omega, g2.omega, atol=1e-10)

    def test_bernoulli_alpha_hand_assembly(self, rng):
        # single subject, single observation: alpha has one entry
        data = model.Dataset.from_lists(families.BERNOULLI, [[1.0]], [[[1.0]]],
                                        [[[1.0]]])
        gp = model.GlobalParams([0.3], [0.1], 1)
        pr = random_wishart_prior(rng, 1)
        t = reparam.transform_a2(data, gp)
        bt = np.array([[0.7]])
        a = gradients.a_vec(data, gp, t.invert(bt))
        Bt = gradients.btilde_mat(t, a, bt)
        S = t.Lambda + t.L @ Bt @ np.swapaxes(t.L, -1, -2)
        base = float(gp.beta[0] + t.lam[0, 0])
        sig = 1.0 / (1.0 + np.exp(-base))
        alpha_hand = 0.5 * sig * (1 - sig) * (1 - 2 * sig) * float(S[0, 0, 0])
        w = data.mask * data.family.h2(t.base_eta, data.trials)
        alpha_code = 0.5 * data.mask * data.family.h3(t.base_eta, data.trials) * \
            np.einsum("njr,nrs,njs->nj", data.Z, S, data.Z)
        np.testing.assert_allclose(alpha_code[0, 0], alpha_hand, rtol=1e-12)
        assert w.shape == (1, 1)

    def test_permutation_equivariance(self, rng):
        data = random_dataset(rng, families.POISSON, r=1, n=5)
        gp = random_gp(rng, 2, 1)
        pr = random_wishart_prior(rng, 1)
        bt = rng.standard_normal((5, 1))
        g = gradients.grad_full(data, gp, bt, "a1", pr)
        perm = rng.permutation(5)
        gperm = gradients.grad_full(data.subset(perm), gp, bt[perm], "a1", pr)
        np.testing.assert_allclose(gperm.local, g.local[perm], atol=1e-12)
        np.testing.assert_allclose(gperm.beta, g.beta, atol=1e-12)
        np.testing.assert_allclose(gperm.omega, g.omega, atol=1e-12)


ALL_COMBOS = [(f, m, r) for f in ["poisson", "binomial", "bernoulli", "gaussian-unit"]
              for m in ("a1", "a2") for r in (1, 2, 3)]


class TestFiniteDifferenceAgreement:
    @pytest.mark.parametrize("famname,method,r", ALL_COMBOS,
                             ids=[f"{f}-{m}-r{r}" for f, m, r in ALL_COMBOS])
    def test_full_gradient(self, famname, method, r):
        # the acceptance suite sweeps 100 configurations; this is a fast
        # per-combination smoke version of the same oracle
        rng = np.random.default_rng(hash((famname, method, r)) % 2 ** 32)
        fam = families.by_name(famname)
        worst = 0.0
        for _ in range(5):
            data = random_dataset(rng, fam, r=r, n=2, p=2, ni_max=4)
            gp = random_gp(rng, 2, r)
            pr = random_wishart_prior(rng, r)
            bt = 0.8 * rng.standard_normal((data.n, r))
            got = analytic(data, gp, bt, method, pr)
            fd = full_fd(data, gp, bt, method, pr)
            worst = max(worst, max_rel_err(got, fd))
        assert worst < 1e-5

    def test_normal_omega_prior_gradient(self, rng):
        data = random_dataset(rng, families.BERNOULLI, r=1, n=3)
        pr = model.normal_omega_prior(1, sd=10.0)
        gp = random_gp(rng, 2, 1)
        bt = rng.standard_normal((3, 1))
        for method in reparam.METHODS:
            got = analytic(data, gp, bt, method, pr)
            fd = full_fd(data, gp, bt, method, pr)
            assert max_rel_err(got, fd) < 1e-5

    def test_omega_gradient_sign_is_negative_sum(self, rng):
        # the transform/likelihood sum enters with a minus sign; flipping it
        # must break the finite-difference agreement
        data = random_dataset(rng, families.POISSON, r=2, n=3)
        gp = random_gp(rng, 2, 2)
        pr = random_wishart_prior(rng, 2)
        bt = rng.standard_normal((3, 2))
        got = analytic(data, gp, bt, "a1", pr)
        fd = full_fd(data, gp, bt, "a1", pr)
        assert max_rel_err(got, fd) < 1e-5
        t = reparam.transform_a1(data, gp)
        b = t.invert(bt)
        a = gradients.a_vec(data, gp, b)
        Bt = gradients.btilde_mat(t, a, bt)
        LBL = t.L @ Bt @ np.swapaxes(t.L, -1, -2)
        t1 = np.einsum("nrs,ns->nr", t.Lambda, a)
        M = (b[:, :, None] * b[:, None, :] + t1[:, :, None] * t.lam[:, None, :]
             + t.lam[:, :, None] * t1[:, None, :] + t.Lambda + LBL).sum(axis=0)
        W = gp.w_matrix()
        W_invT = np.linalg.inv(W).T
        flipped = (matcalc.dweight(W) * matcalc.halfvec(data.n * W_invT + M @ W)
                   + pr.grad_omega(gp))
        fd_omega = fd[-data.g2:]
        assert max_rel_err(flipped, fd_omega) > 1e-2
