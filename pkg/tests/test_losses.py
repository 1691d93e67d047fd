from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gdfq import autodiff as ad
from gdfq.autodiff import Tensor, backward
from gdfq.errors import DimensionError
from gdfq.losses import bns_loss, cross_entropy_loss, kl_divergence_loss

logit_rows = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 5)),
                    elements=st.floats(-30, 30, allow_nan=False))


class TestCrossEntropy:
    def test_uniform(self):
        assert cross_entropy_loss(Tensor(np.zeros((3, 2))), [0, 1, 1]).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_hand_value(self):
        v = cross_entropy_loss(Tensor([[1.0, 0.0]]), [0]).item()
        assert v == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-15)
        assert abs(v - 0.313262) < 1e-6

    def test_large_margin(self):
        assert cross_entropy_loss(Tensor([[200.0, 0.0]]), [0]).item() < 1e-80

    @pytest.mark.parametrize("labels", [[2], [-1]])
    def test_label_out_of_range(self, labels):
        with pytest.raises(IndexError):
            cross_entropy_loss(Tensor([[0.0, 1.0]]), labels)

    def test_label_shape(self):
        with pytest.raises(DimensionError):
            cross_entropy_loss(Tensor(np.zeros((2, 2))), [0])

    @settings(max_examples=60, deadline=None)
    @given(logit_rows)
    def test_nonnegative(self, logits):
        labels = np.arange(len(logits)) % logits.shape[1]
        assert cross_entropy_loss(Tensor(logits), labels).item() >= 0


class TestKL:
    def test_hand_value(self):
        student = Tensor([[math.log(3.0), 0.0]])  # softmax -> (0.75, 0.25)
        v = kl_divergence_loss(student, np.zeros((1, 2))).item()
        assert v == pytest.approx(0.75 * math.log(1.5) + 0.25 * math.log(0.5), abs=1e-15)
        assert abs(v - 0.130812) < 1e-6

    def test_teacher_gets_no_gradient(self, rng):
        s = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        t = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        backward(kl_divergence_loss(s, t), params=[s, t])
        assert np.all(t.grad == 0) and np.any(s.grad != 0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            kl_divergence_loss(Tensor(np.zeros((2, 2))), np.zeros((2, 3)))

    @settings(max_examples=60, deadline=None)
    @given(logit_rows)
    def test_self_zero(self, logits):
        assert abs(kl_divergence_loss(Tensor(logits), logits).item()) <= 1e-12

    @settings(max_examples=60, deadline=None)
    @given(logit_rows, st.integers(0, 2**31))
    def test_nonnegative(self, logits, seed):
        other = logits + np.random.default_rng(seed).normal(size=logits.shape)
        assert kl_divergence_loss(Tensor(logits), other).item() >= -1e-12


class TestBNS:
    def test_zero_on_match(self, rng):
        mus = [rng.normal(size=4), rng.normal(size=3)]
        sds = [rng.uniform(size=4), rng.uniform(size=3)]
        v = bns_loss([Tensor(m) for m in mus], [Tensor(s) for s in sds], mus, sds)
        assert v.item() == 0.0

    def test_hand_value(self):
        v = bns_loss([Tensor([1.0, 0.0])], [Tensor([2.0, 1.0])], [np.zeros(2)], [np.ones(2)])
        assert v.item() == 2.0

    def test_l1_combination(self):
        ce = cross_entropy_loss(Tensor(np.zeros((1, 2))), [0])
        bns = bns_loss([Tensor([1.0])], [Tensor([2.0])], [np.zeros(1)], [np.ones(1)])
        total = ad.add(ce, ad.mul(bns, 0.1)).item()
        assert abs(total - 0.893147) < 1e-6

    def test_l2_combination(self):
        ce = cross_entropy_loss(Tensor([[1.0, 0.0]]), [0])
        kd = kl_divergence_loss(Tensor([[math.log(3.0), 0.0]]), np.zeros((1, 2)))
        assert abs(ad.add(ce, ad.mul(kd, 1.0)).item() - 0.444074) < 1e-6
