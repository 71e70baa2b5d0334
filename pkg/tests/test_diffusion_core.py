import math

import numpy as np
import pytest
import torch

from config.interfaces import ArgumentError, DivergenceError
from diffusion.core import (
    LatentSeq,
    posterior_mean,
    predict_x0_from_xprev,
    rounding_loss,
    sample_forward,
    simple_prime_loss,
    total_loss,
)


def _gen(seed=0):
    return torch.Generator().manual_seed(seed)


class TestSampleForward:

    def test_zero_noise(self, linear_schedule):
        x0 = torch.randn(6, 4, generator=_gen(), dtype=torch.float64)
        for t in (1, 37, 500, 1000):
            out = sample_forward(LatentSeq(x0, 0), t, torch.zeros_like(x0), linear_schedule)
            expected = math.sqrt(linear_schedule.alpha_bar(t)) * x0
            torch.testing.assert_close(out.values, expected, rtol=0, atol=1e-15)
            assert out.t == t

    def test_first_step_arithmetic(self, linear_schedule):
        e1 = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
        out = sample_forward(LatentSeq(e1, 0), 1, e1.clone(), linear_schedule)
        assert out.values[0, 0].item() == pytest.approx(math.sqrt(0.9999) + math.sqrt(0.0001), abs=1e-12)
        assert out.values[0, 0].item() == pytest.approx(1.00994999, abs=1e-8)

    def test_moments(self, linear_schedule):
        """Empirical mean and variance of x_t match the closed form for random (x0, t)."""
        n = 10_000
        rng = _gen(7)
        for t in (1000, 1, 250, 640, 999):
            x0 = torch.randn(1, 4, generator=rng, dtype=torch.float64)
            eps = torch.randn(n, 4, generator=rng, dtype=torch.float64)
            samples = sample_forward(LatentSeq(x0.expand(n, 4), 0), t, eps, linear_schedule).values
            variance = linear_schedule.one_minus_alpha_bar(t)
            mean = math.sqrt(linear_schedule.alpha_bar(t)) * x0[0]
            stderr = math.sqrt(variance / n)
            assert torch.all((samples.mean(dim=0) - mean).abs() <= 4 * stderr)
            pooled = samples.var(dim=0).mean().item()
            assert abs(pooled - variance) <= 0.05 * variance

    def test_batched_timesteps(self, linear_schedule):
        x0 = torch.randn(3, 5, 2, generator=_gen(), dtype=torch.float64)
        eps = torch.randn(3, 5, 2, generator=_gen(1), dtype=torch.float64)
        t = torch.tensor([1, 500, 1000])
        batched = sample_forward(LatentSeq(x0, 0), t, eps, linear_schedule).values
        for i, step in enumerate(t.tolist()):
            single = sample_forward(LatentSeq(x0[i], 0), step, eps[i], linear_schedule).values
            torch.testing.assert_close(batched[i], single, rtol=0, atol=1e-15)

    def test_invalid_inputs(self, linear_schedule):
        x0 = torch.zeros(4, 2)
        with pytest.raises(ArgumentError):
            sample_forward(LatentSeq(x0, 0), 0, torch.zeros(4, 2), linear_schedule)
        with pytest.raises(ArgumentError):
            sample_forward(LatentSeq(x0, 0), 1001, torch.zeros(4, 2), linear_schedule)
        with pytest.raises(ArgumentError):
            sample_forward(LatentSeq(x0, 0), 5, torch.zeros(4, 3), linear_schedule)


class TestPosteriorMean:

    def test_first_step_returns_x0(self, linear_schedule):
        x0 = torch.randn(100, 6, 4, generator=_gen(), dtype=torch.float64)
        xt = torch.randn(100, 6, 4, generator=_gen(1), dtype=torch.float64)
        t = torch.ones(100, dtype=torch.long)
        out = posterior_mean(LatentSeq(xt, t), LatentSeq(x0, 0), t, linear_schedule)
        torch.testing.assert_close(out, x0, rtol=0, atol=1e-12)

    def test_coefficient_oracle(self, linear_schedule):
        x0 = torch.randn(6, 4, generator=_gen(2), dtype=torch.float64)
        xt = torch.randn(6, 4, generator=_gen(3), dtype=torch.float64)
        t = 500
        bar_t, bar_prev = linear_schedule.alpha_bar(t), linear_schedule.alpha_bar(t - 1)
        beta = linear_schedule.beta(t)
        coef_x0 = math.sqrt(bar_prev) * beta / (1 - bar_t)
        coef_xt = math.sqrt(1 - beta) * (1 - bar_prev) / (1 - bar_t)
        out = posterior_mean(LatentSeq(xt, t), LatentSeq(x0, 0), t, linear_schedule)
        torch.testing.assert_close(out, coef_x0 * x0 + coef_xt * xt, rtol=0, atol=1e-10)


class TestPredictX0FromXprev:

    @pytest.mark.parametrize("noise_coeff", ["sqrt", "linear"])
    def test_recovers_x0(self, linear_schedule, noise_coeff):
        x0 = torch.randn(4, 5, 3, generator=_gen(), dtype=torch.float64)
        eps = torch.randn(4, 5, 3, generator=_gen(1), dtype=torch.float64)
        t = torch.tensor([1000, 600, 150, 101])
        s = t - 100
        xt = sample_forward(LatentSeq(x0, 0), t, eps, linear_schedule, noise_coeff).values
        xs = sample_forward(LatentSeq(x0, 0), s, eps, linear_schedule, noise_coeff).values
        recovered = predict_x0_from_xprev(xt, xs, t, s, linear_schedule, noise_coeff)
        torch.testing.assert_close(recovered, x0, rtol=1e-7, atol=1e-7)

    def test_zero_offset_passthrough(self, linear_schedule):
        xt = torch.randn(2, 5, 3, generator=_gen(), dtype=torch.float64)
        x_prev = torch.randn(2, 5, 3, generator=_gen(1), dtype=torch.float64)
        t = torch.tensor([50, 80])
        out = predict_x0_from_xprev(xt, x_prev, t, torch.zeros(2, dtype=torch.long), linear_schedule)
        torch.testing.assert_close(out, x_prev, rtol=0, atol=0)


def _loop_l1(pred, target, mask):
    per_example = []
    for b in range(pred.shape[0]):
        total, count = 0.0, 0
        for i in range(pred.shape[1]):
            if not mask[b, i]:
                continue
            total += sum(abs(pred[b, i, d] - target[b, i, d]) for d in range(pred.shape[2])) / pred.shape[2]
            count += 1
        per_example.append(total / count)
    return sum(per_example) / len(per_example)


class TestSimplePrimeLoss:

    def test_identity(self):
        x = torch.randn(2, 4, 3, generator=_gen())
        assert simple_prime_loss(x, x, x, x).item() == 0.0

    def test_constant_offset(self):
        x = torch.randn(2, 4, 3, generator=_gen(), dtype=torch.float64)
        y = torch.randn(2, 4, 3, generator=_gen(1), dtype=torch.float64)
        assert simple_prime_loss(x + 1.0, x, y, y).item() == pytest.approx(1.0, abs=1e-12)

    def test_loop_oracle(self):
        rng = np.random.default_rng(3)
        pred, target, pred1, target1 = (rng.standard_normal((3, 5, 4)) for _ in range(4))
        mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1], [1, 1, 0, 0, 0]], dtype=bool)
        expected = _loop_l1(pred, target, mask) + _loop_l1(pred1, target1, mask)
        got = simple_prime_loss(*(torch.from_numpy(a) for a in (pred, target, pred1, target1)),
                                pad_mask=torch.from_numpy(mask))
        assert got.item() == pytest.approx(expected, abs=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ArgumentError):
            simple_prime_loss(torch.zeros(2, 3), torch.zeros(3, 3))
        with pytest.raises(ArgumentError):
            simple_prime_loss(torch.zeros(2, 3), torch.zeros(2, 3), pred1=torch.zeros(2, 3))

    def test_gradcheck(self):
        pred = torch.randn(2, 4, 3, generator=_gen(), dtype=torch.float64, requires_grad=True)
        target = torch.randn(2, 4, 3, generator=_gen(1), dtype=torch.float64)
        mask = torch.tensor([[True, True, True, False], [True, True, False, False]])
        assert torch.autograd.gradcheck(lambda p: simple_prime_loss(p, target, pad_mask=mask), (pred,),
                                        eps=1e-5, atol=1e-8, rtol=1e-4)


class TestRoundingLoss:

    def test_uniform_softmax(self):
        lm_head = torch.tensor([[1.0, 0.0], [1.0, 0.0]], dtype=torch.float64)
        pred = torch.randn(3, 2, generator=_gen(), dtype=torch.float64)
        tokens = torch.tensor([0, 1, 1])
        assert rounding_loss(pred, tokens, lm_head).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_confident_prediction(self):
        lm_head = torch.eye(2, dtype=torch.float64)
        tokens = torch.tensor([1, 0])
        pred = 1000.0 * lm_head[tokens]
        assert rounding_loss(pred, tokens, lm_head).item() == pytest.approx(0.0, abs=1e-12)

    def test_log_sum_exp_oracle(self):
        rng = np.random.default_rng(11)
        pred = rng.standard_normal((5, 6))
        lm_head = rng.standard_normal((11, 6))
        tokens = rng.integers(0, 11, size=5)
        nll = []
        for i in range(5):
            logits = [float(np.dot(pred[i], lm_head[v])) for v in range(11)]
            top = max(logits)
            lse = top + math.log(sum(math.exp(l - top) for l in logits))
            nll.append(lse - logits[tokens[i]])
        got = rounding_loss(torch.from_numpy(pred), torch.from_numpy(tokens), torch.from_numpy(lm_head))
        assert got.item() == pytest.approx(sum(nll) / 5, abs=1e-8)

    def test_masked_positions_ignored(self):
        lm_head = torch.eye(3, dtype=torch.float64)
        pred = torch.randn(4, 3, generator=_gen(), dtype=torch.float64)
        tokens = torch.tensor([0, 1, 2, 2])
        mask = torch.tensor([True, True, False, False])
        full = rounding_loss(pred[:2], tokens[:2], lm_head)
        assert rounding_loss(pred, tokens, lm_head, mask).item() == pytest.approx(full.item(), abs=1e-12)

    def test_out_of_range_token(self):
        with pytest.raises(ArgumentError):
            rounding_loss(torch.zeros(2, 3), torch.tensor([0, 5]), torch.eye(3))

    def test_gradcheck(self):
        pred = torch.randn(5, 4, generator=_gen(), dtype=torch.float64, requires_grad=True)
        lm_head = torch.randn(11, 4, generator=_gen(1), dtype=torch.float64)
        tokens = torch.tensor([1, 4, 10, 0, 7])
        assert torch.autograd.gradcheck(lambda p: rounding_loss(p, tokens, lm_head), (pred,),
                                        eps=1e-5, atol=1e-8, rtol=1e-4)


class TestTotalLoss:

    def test_logged_values(self):
        assert total_loss(4.89, 12.87, 0.3).total == pytest.approx(8.751, abs=1e-12)

    def test_degenerate_weights(self):
        assert total_loss(2.5, 7.0, 0.0).total == 2.5
        assert total_loss(0.0, 7.0, 0.3).total == 0.3 * 7.0

    def test_affine_combination(self):
        breakdown = total_loss(1.25, 3.5, 0.7)
        assert breakdown.total == 1.25 + 0.7 * 3.5
        assert breakdown.as_dict()["lambda"] == 0.7

    def test_divergence(self):
        with pytest.raises(DivergenceError):
            total_loss(float("nan"), 1.0, 0.3)
        with pytest.raises(DivergenceError):
            total_loss(1.0, float("inf"), 0.3)

    def test_negative_lambda(self):
        with pytest.raises(ArgumentError):
            total_loss(1.0, 1.0, -0.1)
