import numpy as np
import pytest
import torch

from oracles import bayes_posterior_quadrature

from ctsr import diffusion
from ctsr.diffusion import (
    DiffusionState,
    make_schedule,
    posterior_params,
    predict_x0,
    q_sample,
    reverse_step,
    sample,
    training_loss,
)
from ctsr.predictor import FixedEpsPredictor, OracleDeltaPredictor, ZeroPredictor


@pytest.fixture(scope="module")
def sched():
    return make_schedule(100)


class TestSchedule:
    @pytest.mark.parametrize("T", [1, 10, 100, 1000])
    def test_gamma_decreasing_and_small_at_end(self, T):
        s = make_schedule(T)
        assert np.all(np.diff(s.gamma) < 0)
        assert s.gamma[T] < 1e-3

    def test_T1_endpoint(self):
        s = make_schedule(1)
        assert s.beta[1] == pytest.approx(1.0 - 1e-5, abs=1e-6)

    def test_product_consistency(self, sched):
        lhs = np.exp(np.log(sched.alpha[1:]).sum())
        assert lhs == pytest.approx(sched.gamma[-1], rel=1e-10)

    def test_identities_exact_as_stored(self, sched):
        for t in range(1, sched.T + 1):
            assert sched.gamma[t] == sched.alpha[t] * sched.gamma[t - 1]
            assert sched.beta_tilde[t] == (1 - sched.gamma[t - 1]) / (1 - sched.gamma[t]) * sched.beta[t]

    def test_beta_tilde_bounded_by_beta(self, sched):
        assert np.all(sched.beta_tilde[1:] <= sched.beta[1:])

    def test_betas_in_open_interval(self, sched):
        assert np.all((sched.beta[1:] > 0) & (sched.beta[1:] < 1))

    def test_invalid_T_rejected(self):
        with pytest.raises(ValueError):
            make_schedule(0)

    def test_sigma_mode_beta(self):
        s = make_schedule(10, sigma_mode="beta")
        np.testing.assert_array_equal(s.sigma2, s.beta)

    def test_serialization_round_trip(self, sched):
        rebuilt = diffusion.DiffusionSchedule.from_dict(sched.to_dict())
        np.testing.assert_array_equal(rebuilt.beta, sched.beta)
        np.testing.assert_array_equal(rebuilt.gamma, sched.gamma)
        np.testing.assert_array_equal(rebuilt.sigma2, sched.sigma2)


class TestQSample:
    def test_zero_eps(self, sched):
        x0 = torch.randn(4, 4, dtype=torch.float64)
        xt = q_sample(x0, 10, torch.zeros_like(x0), sched)
        torch.testing.assert_close(xt, np.sqrt(sched.gamma[10]) * x0)

    def test_zero_signal(self, sched):
        eps = torch.randn(4, 4, dtype=torch.float64)
        xt = q_sample(torch.zeros_like(eps), 10, eps, sched)
        torch.testing.assert_close(xt, np.sqrt(1 - sched.gamma[10]) * eps)

    def test_out_of_range_t(self, sched):
        x = torch.zeros(2, 2)
        with pytest.raises(ValueError, match="1..100"):
            q_sample(x, 0, x, sched)
        with pytest.raises(ValueError, match="1..100"):
            q_sample(x, 101, x, sched)

    def test_marginal_matches_single_step_composition(self, sched):
        # compose the one-step kernels for t steps and compare the empirical
        # moments of 1e5 scalar chains with the closed-form marginal
        gen = torch.Generator().manual_seed(0)
        n = 100_000
        x0 = 0.7
        x = torch.full((n,), x0, dtype=torch.float64)
        for t in range(1, 41):
            beta = sched.beta[t]
            x = np.sqrt(1 - beta) * x + np.sqrt(beta) * torch.randn(n, generator=gen, dtype=torch.float64)
        g = sched.gamma[40]
        assert float(x.mean()) == pytest.approx(np.sqrt(g) * x0, abs=0.01 * max(np.sqrt(g) * x0, 1e-2) + 0.003)
        assert float(x.var()) == pytest.approx(1 - g, rel=0.01)

    def test_tensor_t_batch(self, sched):
        x0 = torch.randn(3, 4, 4, dtype=torch.float64)
        eps = torch.randn_like(x0)
        t = torch.tensor([1, 50, 100])
        xt = q_sample(x0, t, eps, sched)
        for i, ti in enumerate((1, 50, 100)):
            torch.testing.assert_close(xt[i], q_sample(x0[i], ti, eps[i], sched))


class TestPosterior:
    def test_t1_collapse(self, sched):
        x0 = torch.randn(4, 4, dtype=torch.float64)
        xt = torch.randn(4, 4, dtype=torch.float64)
        mu, var = posterior_params(xt, x0, 1, sched)
        assert torch.equal(mu, x0)
        assert var == 0.0

    def test_zero_inputs(self, sched):
        z = torch.zeros(3, 3)
        mu, _ = posterior_params(z, z, 50, sched)
        assert torch.all(mu == 0)

    def test_bayes_quadrature(self, sched):
        for t in (2, 17, 60, 100):
            beta, alpha, g, gm = sched.coeffs(t)
            mu_ref, var_ref = bayes_posterior_quadrature(0.41, -0.37, g, gm, alpha, beta)
            mu, var = posterior_params(
                torch.tensor([0.41], dtype=torch.float64),
                torch.tensor([-0.37], dtype=torch.float64),
                t,
                sched,
            )
            assert float(mu[0]) == pytest.approx(mu_ref, abs=1e-3)
            assert var == pytest.approx(var_ref, abs=1e-3)

    def test_t0_rejected(self, sched):
        z = torch.zeros(2, 2)
        with pytest.raises(ValueError, match="t=0|posterior"):
            posterior_params(z, z, 0, sched)


class TestPredictX0:
    def test_round_trip_inversion(self, sched):
        x0 = torch.rand(8, 8, dtype=torch.float64) * 2 - 1
        eps = torch.randn(8, 8, dtype=torch.float64)
        for t in (1, 37, 100):
            xt = q_sample(x0, t, eps, sched)
            rec = predict_x0(xt, eps, t, sched, clamp=False)
            assert float((rec - x0).abs().max()) <= 1e-6 * float(x0.abs().max())

    def test_zero_eps_hat(self, sched):
        xt = torch.randn(4, 4, dtype=torch.float64)
        out = predict_x0(xt, torch.zeros_like(xt), 20, sched)
        torch.testing.assert_close(out, xt / np.sqrt(sched.gamma[20]))

    def test_clamp(self, sched):
        xt = torch.zeros(4, 4)
        big = torch.full((4, 4), 50.0)
        out = predict_x0(xt, big, 90, sched, clamp=True)
        assert out.min() >= -1.0 and out.max() <= 1.0


class TestTrainingLoss:
    def test_oracle_predictor_zero_loss(self, sched):
        x0 = torch.rand(4, 8, 8, dtype=torch.float64) * 2 - 1
        eps = torch.randn_like(x0)
        loss = training_loss(FixedEpsPredictor(eps), x0, x0, 10, eps, sched)
        assert float(loss) == pytest.approx(0.0, abs=1e-12)

    def test_zero_predictor_unit_loss(self, sched):
        gen = torch.Generator().manual_seed(1)
        x0 = torch.zeros(1, 330, 330, dtype=torch.float64)
        eps = torch.randn(x0.shape, generator=gen, dtype=torch.float64)
        loss = training_loss(ZeroPredictor(), x0, x0, 50, eps, sched)
        assert float(loss) == pytest.approx(1.0, rel=0.02)

    def test_gradient_matches_finite_differences(self, sched):
        # 10-parameter smooth predictor; autograd vs central differences
        torch.manual_seed(0)
        w = torch.randn(10, dtype=torch.float64, requires_grad=True)
        x0 = torch.rand(2, 6, 6, dtype=torch.float64) * 2 - 1
        y = torch.rand(2, 6, 6, dtype=torch.float64) * 2 - 1
        eps = torch.randn(2, 6, 6, dtype=torch.float64)
        t = 33

        def predictor_for(weights):
            def predictor(x_t, y_c, _t):
                tn = float(_t) / sched.T
                feats = [
                    torch.ones_like(x_t), x_t, y_c, x_t * y_c, x_t**2,
                    y_c**2, torch.sin(x_t), torch.full_like(x_t, tn),
                    x_t * tn, y_c * tn,
                ]
                return sum(wi * f for wi, f in zip(weights, feats))
            return predictor

        loss = training_loss(predictor_for(w), x0, y, t, eps, sched)
        loss.backward()
        grad = w.grad.detach().numpy()
        h = 1e-6
        for i in range(10):
            wp = w.detach().clone(); wp[i] += h
            wm = w.detach().clone(); wm[i] -= h
            lp = float(training_loss(predictor_for(wp), x0, y, t, eps, sched))
            lm = float(training_loss(predictor_for(wm), x0, y, t, eps, sched))
            fd = (lp - lm) / (2 * h)
            assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-10)


class TestReverseStep:
    def test_t1_returns_predicted_x0(self, sched):
        gen = torch.Generator().manual_seed(2)
        x1 = torch.randn(6, 6, generator=gen, dtype=torch.float64)
        pred = OracleDeltaPredictor(0.3, sched)
        out = reverse_step(DiffusionState(x1, 1, torch.zeros_like(x1)), pred, sched, gen)
        expected = predict_x0(x1, pred(x1, x1, 1), 1, sched)
        torch.testing.assert_close(out, expected)
        torch.testing.assert_close(out, torch.full_like(out, 0.3))

    def test_sigma_zero_override_deterministic(self, sched):
        x = torch.randn(4, 4, dtype=torch.float64)
        pred = OracleDeltaPredictor(0.0, sched)
        a = reverse_step(DiffusionState(x, 40, x), pred, sched, torch.Generator().manual_seed(1), sigma_scale=0.0)
        b = reverse_step(DiffusionState(x, 40, x), pred, sched, torch.Generator().manual_seed(2), sigma_scale=0.0)
        torch.testing.assert_close(a, b)

    def test_step_mean_matches_posterior(self, sched):
        # Monte-Carlo oracle: the empirical mean over many draws approaches
        # the closed-form posterior mean within 3 standard errors
        t = 30
        x0_const = 0.5
        gen = torch.Generator().manual_seed(3)
        xt = q_sample(torch.full((1,), x0_const, dtype=torch.float64), t,
                      torch.randn(1, generator=gen, dtype=torch.float64), sched)
        pred = OracleDeltaPredictor(x0_const, sched)
        n = 10_000
        draws = torch.stack([
            reverse_step(DiffusionState(xt, t, xt), pred, sched, gen) for _ in range(n)
        ])
        mu, var = posterior_params(xt, torch.full_like(xt, x0_const), t, sched)
        se = np.sqrt(var / n)
        assert abs(float(draws.mean()) - float(mu[0])) <= 3 * se


class TestSample:
    def test_delta_oracle_concentrates(self, sched):
        pred = OracleDeltaPredictor(-0.41, sched)
        y = torch.zeros(12, 12, dtype=torch.float64)
        means, stds = [], []
        for seed in range(16):
            out = sample(y, pred, sched, torch.Generator().manual_seed(seed))
            means.append(float(out.mean()))
            stds.append(float(out.std()))
        assert max(abs(m + 0.41) for m in means) <= 0.05
        assert max(stds) <= 0.1

    def test_fixed_seed_bit_identical(self, sched):
        pred = OracleDeltaPredictor(0.2, sched)
        y = torch.zeros(8, 8, dtype=torch.float64)
        a = sample(y, pred, sched, torch.Generator().manual_seed(11))
        b = sample(y, pred, sched, torch.Generator().manual_seed(11))
        assert torch.equal(a, b)

    def test_single_step_chain(self):
        s1 = make_schedule(1)
        pred = OracleDeltaPredictor(0.9, s1)
        y = torch.zeros(4, 4, dtype=torch.float64)
        out = sample(y, pred, s1, torch.Generator().manual_seed(0))
        torch.testing.assert_close(out, torch.full_like(out, 0.9))

    def test_non_finite_aborts_with_step(self, sched):
        class NaNPredictor:
            def __call__(self, x_t, y, t):
                return torch.full_like(x_t, np.nan)

        y = torch.zeros(4, 4)
        with pytest.raises(RuntimeError, match="t=100"):
            sample(y, NaNPredictor(), sched, torch.Generator().manual_seed(0))
