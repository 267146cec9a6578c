import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mimeforge.errors import ConfigError, NumericalError
from mimeforge.losses import LossWeights, d_loss, g_losses, kl_anneal_weight, kl_loss
from mimeforge.model import LatentStats

F64 = torch.float64


class TestAnnealSchedule:
    def test_linear_midpoint_value(self):
        w = LossWeights(schedule="linear")
        assert kl_anneal_weight(15000, 1, w) == pytest.approx(0.025, abs=1e-15)

    def test_linear_clamps_at_n(self):
        w = LossWeights(schedule="linear")
        assert kl_anneal_weight(30000, 99, w) == pytest.approx(0.05, abs=1e-15)
        assert kl_anneal_weight(90000, 99, w) == pytest.approx(0.05, abs=1e-15)

    def test_logistic_midpoint_at_x0(self):
        w = LossWeights(schedule="logistic")
        assert kl_anneal_weight(123, 6, w) == pytest.approx(0.025, abs=1e-15)

    def test_constant(self):
        w = LossWeights(schedule="constant")
        assert kl_anneal_weight(0, 0, w) == pytest.approx(0.05, abs=1e-15)

    @given(st.integers(0, 100000), st.integers(0, 100000))
    @settings(max_examples=60, deadline=None)
    def test_linear_non_decreasing(self, a, b):
        w = LossWeights(schedule="linear")
        lo, hi = sorted((a, b))
        assert kl_anneal_weight(lo, 0, w) <= kl_anneal_weight(hi, 0, w)

    @given(st.integers(0, 200), st.integers(0, 200))
    @settings(max_examples=60, deadline=None)
    def test_logistic_non_decreasing_in_epoch(self, a, b):
        w = LossWeights(schedule="logistic")
        lo, hi = sorted((a, b))
        assert kl_anneal_weight(0, lo, w) <= kl_anneal_weight(0, hi, w)

    def test_unknown_schedule_rejected(self):
        with pytest.raises(ConfigError, match="schedule"):
            LossWeights(schedule="cosine")

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError, match="non-negative"):
            LossWeights(lambda1=-1.0)


class TestKlLoss:
    def _stats(self, mu, logvar):
        return LatentStats(torch.tensor([[mu]], dtype=F64), torch.tensor([[logvar]], dtype=F64))

    def test_standard_normal_is_zero(self):
        assert kl_loss(self._stats(0.0, 0.0)).item() == pytest.approx(0.0, abs=1e-15)

    def test_unit_mean(self):
        assert kl_loss(self._stats(1.0, 0.0)).item() == pytest.approx(0.5, abs=1e-15)

    def test_wide_posterior(self):
        expected = (4.0 - math.log(4.0) - 1.0) / 2.0
        assert kl_loss(self._stats(0.0, math.log(4.0))).item() == pytest.approx(expected, abs=1e-12)


class TestDLoss:
    def _t(self, v):
        return torch.tensor([v], dtype=F64)

    def test_perfect_discriminator(self):
        assert d_loss(self._t(1.0), self._t(0.0), self._t(0.0)).item() == pytest.approx(0.0, abs=1e-15)

    def test_coin_flip(self):
        v = d_loss(self._t(0.5), self._t(0.5), self._t(0.5)).item()
        assert v == pytest.approx(0.05, abs=1e-15)

    def test_worst_case(self):
        assert d_loss(self._t(0.0), self._t(1.0), self._t(1.0)).item() == pytest.approx(0.2, abs=1e-15)

    def test_batch_average(self):
        r = torch.tensor([1.0, 0.0], dtype=F64)
        f = torch.tensor([0.0, 1.0], dtype=F64)
        expect = 0.1 * (0.5 * ((1 - 1) ** 2 + (1 - 0) ** 2) + (0.5 * (0 + 1) + 0.5 * (0 + 1)) / 2)
        assert d_loss(r, f, f).item() == pytest.approx(expect, abs=1e-15)


class _StubModel:
    """Algebra-only stand-in with controllable outputs."""

    def __init__(self, x0, d_score=1.0, mu=0.0, logvar=0.0, echo_input=True):
        self.x0 = x0
        self.d_score = d_score
        self.mu = mu
        self.logvar = logvar
        self.echo_input = echo_input

    def encode(self, x):
        n = x.shape[0]
        return LatentStats(
            torch.full((n, 4), self.mu, dtype=F64), torch.full((n, 4), self.logvar, dtype=F64)
        )

    def decode(self, z, c):
        return self.x0.clone()

    def discriminate(self, x, c):
        return torch.full((x.shape[0],), self.d_score, dtype=F64)


class TestGLosses:
    def setup_method(self):
        torch.manual_seed(0)
        self.x0 = torch.randn(3, 1, 4, 2, 2, dtype=F64)
        self.c = torch.full((3, 6), 0.75, dtype=F64)
        self.gen = torch.Generator().manual_seed(1)

    def test_fooled_discriminator_zeroes_gan_term(self):
        model = _StubModel(self.x0, d_score=1.0)
        gl = g_losses(self.x0, self.c, self.c, model, 0.02, LossWeights(), self.gen)
        assert gl.gan.item() == pytest.approx(0.0, abs=1e-15)

    def test_perfect_cycle_zeroes_cyclic_term(self):
        model = _StubModel(self.x0)  # decode always returns x0
        gl = g_losses(self.x0, self.c, self.c, model, 0.02, LossWeights(), self.gen)
        assert gl.cyclic.item() == pytest.approx(0.0, abs=1e-15)

    def test_total_reduces_to_gan_when_other_weights_zero(self):
        w = LossWeights(lambda2_max=0.0, lambda3=0.0)
        model = _StubModel(self.x0, d_score=0.25, mu=1.0)
        gl = g_losses(self.x0, self.c, self.c, model, 0.0, w, self.gen)
        assert gl.total.item() == pytest.approx(w.lambda1 * gl.gan.item(), abs=1e-12)
        assert gl.gan.item() == pytest.approx(0.5625, abs=1e-12)

    def test_weighted_sum(self):
        w = LossWeights()
        model = _StubModel(self.x0, d_score=0.5, mu=1.0, logvar=0.0)
        gl = g_losses(self.x0, self.c, self.c, model, 0.025, w, self.gen)
        expect = 10.0 * gl.gan.item() + 0.025 * gl.kl.item() + 0.5 * gl.cyclic.item()
        assert gl.total.item() == pytest.approx(expect, abs=1e-12)
        assert gl.kl.item() == pytest.approx(0.5, abs=1e-12)

    def test_non_finite_raises_with_components(self):
        model = _StubModel(self.x0 * float("inf"))
        with pytest.raises(NumericalError, match="generator loss"):
            g_losses(self.x0, self.c, self.c, model, 0.02, LossWeights(), self.gen)
