import numpy as np
import pytest

from srp.objective import (
    ClosedFormUnavailable,
    Problem,
    Regularizer,
    SingleGaussianForms,
    fidelity,
    fidelity_grad,
    fidelity_lipschitz,
    gaussian_objective_minimum,
    reg_grad_exact,
    reg_grad_gaussian,
    reg_value_exact,
    reg_value_mc,
    stochastic_grad,
    variance_probe,
)
from srp.operators import (
    CoordinateMask,
    DegradationEnsemble,
    DenseMatrix,
    Identity,
    Scale,
)
from srp.priors import GmmPrior
from srp.restoration import ExactMmse


def normal_prior(n=1, mean=None, var=1.0):
    mu = np.zeros(n) if mean is None else np.asarray(mean, dtype=float)
    return GmmPrior([1.0], [mu], [np.asarray(var)])


def gauss_reg(tau=1.0, sigma=1.0, n=1):
    ens = DegradationEnsemble([Identity(n)], sigma=sigma)
    return Regularizer(tau=tau, prior=normal_prior(n), ens=ens)


def random_regularizer(rng, n, k, b):
    w = rng.dirichlet(np.full(k, 4.0))
    w = w / w.sum()
    means = rng.standard_normal((k, n))
    covs = [np.asarray(float(rng.uniform(0.4, 1.2))) for _ in range(k)]
    prior = GmmPrior(w, means, covs)
    members = []
    for i in range(b):
        kind = rng.integers(0, 3)
        if kind == 0:
            members.append(Identity(n))
        elif kind == 1:
            members.append(
                CoordinateMask(n, rng.choice(n, size=max(1, n // 2), replace=False))
            )
        else:
            members.append(DenseMatrix(rng.standard_normal((n, n))))
    ens = DegradationEnsemble(members, sigma=float(rng.uniform(0.5, 1.2)))
    return Regularizer(tau=float(rng.uniform(0.5, 2.0)), prior=prior, ens=ens)


class TestFidelity:
    def test_zero_residual(self):
        x = np.array([1.0, -2.0])
        p = Problem(Identity(2), x)
        assert fidelity(p, x) == 0.0
        np.testing.assert_array_equal(fidelity_grad(p, x), [0.0, 0.0])

    def test_direct_value(self):
        p = Problem(Identity(2), np.zeros(2))
        x = np.array([3.0, 4.0])
        assert fidelity(p, x) == 12.5
        np.testing.assert_array_equal(fidelity_grad(p, x), [3.0, 4.0])

    def test_masked_measurement(self):
        p = Problem(CoordinateMask(2, [0]), np.array([1.0, 0.0]))
        x = np.zeros(2)
        assert fidelity(p, x) == 0.5
        np.testing.assert_array_equal(fidelity_grad(p, x), [-1.0, 0.0])

    def test_lipschitz_estimate(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((4, 4))
        p = Problem(DenseMatrix(m), np.zeros(4))
        expected = float(np.max(np.linalg.eigvalsh(m.T @ m)))
        np.testing.assert_allclose(fidelity_lipschitz(p), expected, rtol=1e-8)


class TestRegValueExact:
    def test_worked_example_origin(self):
        reg = gauss_reg()
        expected = 0.5 * np.log(4 * np.pi) + 0.25
        np.testing.assert_allclose(reg_value_exact(reg, np.zeros(1)), expected,
                                   atol=1e-12)

    def test_worked_example_shifted(self):
        reg = gauss_reg()
        base = reg_value_exact(reg, np.zeros(1))
        np.testing.assert_allclose(
            reg_value_exact(reg, np.array([2.0])), base + 1.0, atol=1e-12
        )

    def test_fully_degrading_is_constant(self):
        ens = DegradationEnsemble([Scale(2, 0.0)], sigma=0.7)
        reg = Regularizer(tau=1.3, prior=normal_prior(2), ens=ens)
        vals = [reg_value_exact(reg, np.array([a, -a])) for a in (0.0, 1.0, 5.0)]
        np.testing.assert_allclose(vals, vals[0], atol=1e-12)

    def test_mixture_quadrature_fallback(self):
        prior = GmmPrior([0.4, 0.6], [[0.5], [-0.8]],
                         [np.asarray(0.6), np.asarray(1.1)])
        ens = DegradationEnsemble([Identity(1)], sigma=0.9)
        reg = Regularizer(tau=1.0, prior=prior, ens=ens)
        val = reg_value_exact(reg, np.array([0.3]))
        est, se = reg_value_mc(reg, np.array([0.3]), 200_000,
                               np.random.default_rng(1))
        assert abs(val - est) < 4 * se

    def test_mixture_refuses_large_dims(self):
        prior = GmmPrior(
            [0.5, 0.5], np.zeros((2, 6)), [np.asarray(1.0), np.asarray(2.0)]
        )
        ens = DegradationEnsemble([Identity(6)], sigma=1.0)
        reg = Regularizer(tau=1.0, prior=prior, ens=ens)
        with pytest.raises(ClosedFormUnavailable, match="reg_value_mc"):
            reg_value_exact(reg, np.zeros(6))


class TestRegValueMc:
    def test_matches_closed_form(self):
        reg = gauss_reg()
        est, se = reg_value_mc(reg, np.array([1.5]), 100_000,
                               np.random.default_rng(2))
        exact = reg_value_exact(reg, np.array([1.5]))
        assert abs(est - exact) < 4 * se

    def test_fully_degrading_zero_information(self):
        ens = DegradationEnsemble([Scale(1, 0.0)], sigma=0.8)
        reg = Regularizer(tau=1.0, prior=normal_prior(), ens=ens)
        exact = reg_value_exact(reg, np.array([3.0]))
        est, se = reg_value_mc(reg, np.array([3.0]), 20_000,
                               np.random.default_rng(3))
        assert abs(est - exact) < 4 * se

    def test_standard_error_scaling(self):
        reg = gauss_reg()
        x = np.array([0.7])
        ratios = []
        for seed in range(20):
            _, se1 = reg_value_mc(reg, x, 2000, np.random.default_rng(100 + seed))
            _, se2 = reg_value_mc(reg, x, 4000, np.random.default_rng(200 + seed))
            ratios.append(se1 / se2)
        mean_ratio = float(np.mean(ratios))
        assert 1.25 < mean_ratio < 1.6  # ~sqrt(2)

    def test_common_random_numbers(self):
        reg = gauss_reg()
        a1, _ = reg_value_mc(reg, np.array([1.0]), 500, np.random.default_rng(7))
        a2, _ = reg_value_mc(reg, np.array([1.0]), 500, np.random.default_rng(7))
        assert a1 == a2


class TestRegGrad:
    def test_worked_example(self):
        reg = gauss_reg()
        x = np.array([2.0])
        grad, se = reg_grad_exact(reg, x, 100_000, np.random.default_rng(4),
                                  return_se=True)
        assert abs(grad[0] - 1.0) < 4 * se[0]
        np.testing.assert_allclose(reg_grad_gaussian(reg, x), [1.0], atol=1e-12)

    def test_zero_at_prior_mean(self):
        reg = gauss_reg()
        grad, se = reg_grad_exact(reg, np.zeros(1), 100_000,
                                  np.random.default_rng(5), return_se=True)
        assert abs(grad[0]) < 4 * se[0]

    def test_tau_scales_linearly_same_draws(self):
        base = gauss_reg(tau=1.0)
        double = gauss_reg(tau=2.0)
        x = np.array([0.9])
        g1 = reg_grad_exact(base, x, 5000, np.random.default_rng(6))
        g2 = reg_grad_exact(double, x, 5000, np.random.default_rng(6))
        np.testing.assert_allclose(g2, 2.0 * g1, rtol=1e-12)
        v1, _ = reg_value_mc(base, x, 5000, np.random.default_rng(7))
        v2, _ = reg_value_mc(double, x, 5000, np.random.default_rng(7))
        np.testing.assert_allclose(v2, 2.0 * v1, rtol=1e-12)

    def test_gradient_consistency_fd_of_mc(self):
        # finite differences of the MC value with common random numbers
        rng = np.random.default_rng(8)
        for trial in range(50):
            n = int(rng.integers(1, 7))
            k = int(rng.integers(1, 4))
            b = int(rng.integers(1, 5))
            reg = random_regularizer(rng, n, k, b)
            x = rng.standard_normal(n)
            samples = 40_000
            grad, se = reg_grad_exact(reg, x, samples,
                                      np.random.default_rng(1000 + trial),
                                      return_se=True)
            h = 1e-4
            fd = np.empty(n)
            for i in range(n):
                e = np.zeros(n)
                e[i] = h
                hi, _ = reg_value_mc(reg, x + e, samples,
                                     np.random.default_rng(2000 + trial))
                lo, _ = reg_value_mc(reg, x - e, samples,
                                     np.random.default_rng(2000 + trial))
                fd[i] = (hi - lo) / (2 * h)
            tol = np.maximum(3 * se, 1e-3)
            gap = np.abs(grad - fd)
            assert np.all(gap < np.maximum(tol, 3e-2 * np.abs(grad) + 1e-3)), (
                f"trial {trial}: gap {gap} tol {tol}"
            )

    def test_gaussian_closed_form_matches_mc(self):
        rng = np.random.default_rng(9)
        prior = GmmPrior([1.0], [rng.standard_normal(3)], [np.asarray(0.8)])
        ens = DegradationEnsemble(
            [Identity(3), CoordinateMask(3, [0, 2])], sigma=0.7
        )
        reg = Regularizer(tau=1.4, prior=prior, ens=ens)
        x = rng.standard_normal(3)
        grad, se = reg_grad_exact(reg, x, 200_000, np.random.default_rng(10),
                                  return_se=True)
        closed = reg_grad_gaussian(reg, x)
        np.testing.assert_array_less(np.abs(grad - closed), 4 * se + 1e-12)


class TestStochasticGrad:
    def test_tau_zero_limit_is_fidelity(self):
        # tau must be positive; a tiny tau leaves only the fidelity gradient
        reg = gauss_reg(tau=1e-300)
        p = Problem(Identity(1), np.array([0.5]))
        r = ExactMmse(reg.prior, 1.0)
        g = stochastic_grad(p, reg, r, np.array([2.0]), np.random.default_rng(11))
        np.testing.assert_allclose(g, fidelity_grad(p, np.array([2.0])), atol=1e-290)

    def test_unbiasedness(self):
        reg = gauss_reg()
        p = Problem(Identity(1), np.array([0.3]))
        r = ExactMmse(reg.prior, 1.0)
        x = np.array([1.2])
        rng = np.random.default_rng(12)
        draws = np.array([stochastic_grad(p, reg, r, x, rng)[0]
                          for _ in range(10_000)])
        expected = fidelity_grad(p, x)[0] + reg_grad_gaussian(reg, x)[0]
        se = float(draws.std(ddof=1) / np.sqrt(draws.size))
        assert abs(draws.mean() - expected) < 4 * se

    def test_red_residual_form(self):
        # identity ensemble: the term is the denoiser residual (tau/sigma^2)(x - D(x+n))
        reg = gauss_reg(tau=0.9, sigma=0.8)
        p = Problem(Identity(1), np.zeros(1))
        restorer = ExactMmse(reg.prior, 0.8)
        x = np.array([0.7])
        rng = np.random.default_rng(13)
        g = stochastic_grad(p, reg, restorer, x, rng)
        rng2 = np.random.default_rng(13)
        rng2.choice(1, p=np.array([1.0]))  # the selection draw
        n = rng2.standard_normal(1)
        s = x + 0.8 * n
        expected = fidelity_grad(p, x) + (0.9 / (0.8 * 0.8)) * (
            x - restorer.restore(s, reg.ens.members[0])
        )
        np.testing.assert_array_equal(g, expected)

    def test_batched_mean(self):
        reg = gauss_reg()
        p = Problem(Identity(1), np.zeros(1))
        r = ExactMmse(reg.prior, 1.0)
        g = stochastic_grad(p, reg, r, np.array([1.0]), np.random.default_rng(14),
                            batch=64)
        assert np.isfinite(g).all()


class TestVarianceProbe:
    def test_tiny_tau_gives_zero(self):
        reg = gauss_reg(tau=1e-300)
        p = Problem(Identity(1), np.zeros(1))
        r = ExactMmse(reg.prior, 1.0)
        v = variance_probe(p, reg, r, np.array([1.0]), 1000,
                           np.random.default_rng(15))
        assert v == 0.0

    def test_fully_degrading_gram_annihilates(self):
        ens = DegradationEnsemble([Scale(1, 0.0)], sigma=1.0)
        reg = Regularizer(tau=1.0, prior=normal_prior(), ens=ens)
        p = Problem(Identity(1), np.zeros(1))
        r = ExactMmse(reg.prior, 1.0)
        v = variance_probe(p, reg, r, np.array([2.0]), 1000,
                           np.random.default_rng(16))
        assert v == 0.0

    def test_closed_form_quarter(self):
        # term = x/2 - n/2 with n ~ N(0,1): variance 1/4
        reg = gauss_reg()
        p = Problem(Identity(1), np.zeros(1))
        r = ExactMmse(reg.prior, 1.0)
        v = variance_probe(p, reg, r, np.array([1.0]), 100_000,
                           np.random.default_rng(17))
        assert abs(v - 0.25) < 0.025


class TestGaussianMinimum:
    def test_matches_grid_search(self):
        rng = np.random.default_rng(18)
        prior = GmmPrior([1.0], [[0.4]], [np.asarray(0.9)])
        ens = DegradationEnsemble([Identity(1)], sigma=0.8)
        reg = Regularizer(tau=1.1, prior=prior, ens=ens)
        p = Problem(Scale(1, 0.7), np.array([0.2]))
        x_star, f_star = gaussian_objective_minimum(p, reg)
        forms = SingleGaussianForms(reg)
        xs = np.linspace(-3, 3, 20001)
        vals = [fidelity(p, np.array([x])) + forms.value(np.array([x])) for x in xs]
        assert abs(xs[int(np.argmin(vals))] - x_star[0]) < 1e-3
        assert f_star <= float(np.min(vals)) + 1e-10
