from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdfq import autodiff as ad
from gdfq.autodiff import Tensor, backward
from gdfq.errors import BNSUnavailableError, ContractError, DimensionError
from gdfq.layers import BatchNorm, Dense, Model, ReLU, build_mlp, capture_bn_batch_stats, dense_forward


def dense(w, b):
    d = Dense(len(w[0]), len(w))
    d.weight.data[:] = w
    d.bias.data[:] = b
    return d


class TestDense:
    def test_identity(self, rng):
        x = rng.normal(size=(4, 3))
        out = dense(np.eye(3), np.zeros(3))(Tensor(x))
        np.testing.assert_array_equal(out.data, x)

    def test_scalar_oracle(self):
        assert dense([[2.0]], [1.0])(Tensor([[3.0]])).data.tolist() == [[7.0]]

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            dense_forward(Tensor(np.ones((2, 2))), Tensor(np.zeros(2)), Tensor(np.ones((1, 3))))

    def test_init_bounds(self, rng):
        d = Dense(16, 5, rng)
        assert np.all(np.abs(d.weight.data) <= 0.25) and np.all(d.bias.data == 0)


class TestBatchNorm:
    def test_hand_normalization(self):
        bn = BatchNorm(1, eps=0.0)
        out = bn(Tensor([[1.0], [3.0]]))
        np.testing.assert_allclose(out.data.ravel(), [-1.0, 1.0], rtol=0, atol=1e-15)

    def test_ema_step(self):
        bn = BatchNorm(1, momentum=0.1)
        bn(Tensor([[1.0], [3.0]]))
        assert bn.running_mean[0] == pytest.approx(0.2, abs=1e-15)
        assert bn.running_var[0] == pytest.approx(0.9 * 1.0 + 0.1 * 1.0, abs=1e-15)

    def test_ema_closed_form(self, rng):
        bn = BatchNorm(3, momentum=0.3)
        batches = [rng.normal(loc=i, size=(8, 3)) for i in range(6)]
        m, v = np.zeros(3), np.ones(3)
        for xb in batches:
            bn(Tensor(xb))
            m = 0.7 * m + 0.3 * xb.mean(0)
            v = 0.7 * v + 0.3 * xb.var(0)
        np.testing.assert_allclose(bn.running_mean, m, atol=1e-12)
        np.testing.assert_allclose(bn.running_var, v, atol=1e-12)

    @pytest.mark.parametrize("mode", ["eval", "fixed"])
    def test_frozen_modes_do_not_write(self, rng, mode):
        bn = BatchNorm(2)
        bn.running_mean, bn.running_var = rng.normal(size=2), rng.uniform(1, 2, size=2)
        before = (bn.running_mean.copy(), bn.running_var.copy())
        bn.mode = mode
        for _ in range(2):
            bn(Tensor(rng.normal(size=(5, 2))))
        assert np.array_equal(bn.running_mean, before[0]) and np.array_equal(bn.running_var, before[1])

    def test_fixed_mode_uses_running_stats(self):
        bn = BatchNorm(1, eps=0.0)
        bn.running_mean, bn.running_var = np.array([1.0]), np.array([4.0])
        bn.mode = "fixed"
        assert bn(Tensor([[5.0]])).data.tolist() == [[2.0]]

    def test_train_needs_two_rows(self):
        with pytest.raises(ContractError):
            BatchNorm(2)(Tensor(np.ones((1, 2))))

    def test_eval_accepts_single_row(self):
        bn = BatchNorm(2)
        bn.mode = "eval"
        assert bn(Tensor(np.ones((1, 2)))).shape == (1, 2)

    def test_bad_momentum(self):
        with pytest.raises(ContractError):
            BatchNorm(2, momentum=0.0)

    def test_running_var_nonnegative(self, rng):
        bn = BatchNorm(4)
        for _ in range(10):
            bn(Tensor(rng.normal(scale=3, size=(2, 4))))
        assert np.all(bn.running_var >= 0)


class TestModel:
    def test_chain_check(self):
        with pytest.raises(DimensionError):
            Model([Dense(2, 3), Dense(4, 2)], 2, 2)

    def test_class_count_check(self):
        with pytest.raises(DimensionError):
            Model([Dense(2, 3)], 2, 2)

    def test_capture_hand_values(self):
        bn = BatchNorm(1)
        m = Model([bn, Dense(1, 2)], 1, 2)
        stats = capture_bn_batch_stats(m, Tensor([[1.0], [3.0]]))
        assert stats.means[0].data.tolist() == [2.0] and stats.spreads[0].data.tolist() == [1.0]
        m.set_spread_mode("var")
        x = Tensor([[0.0], [4.0]])
        assert capture_bn_batch_stats(m, x).spreads[0].data.tolist() == [4.0]

    def test_capture_order_and_count(self, small_mlp, rng):
        stats = capture_bn_batch_stats(small_mlp, rng.normal(size=(6, 2)))
        assert len(stats) == 2 and all(s.data.min() >= 0 for s in stats.spreads)

    def test_capture_single_row(self, small_mlp):
        with pytest.raises(ContractError):
            capture_bn_batch_stats(small_mlp, np.ones((1, 2)))

    def test_no_bn(self, rng):
        m = build_mlp(2, [4], 2, rng, batchnorm=False)
        with pytest.raises(BNSUnavailableError):
            capture_bn_batch_stats(m, np.ones((3, 2)))

    def test_capture_differentiable_in_input(self, small_mlp, rng):
        x = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
        stats = capture_bn_batch_stats(small_mlp, x)
        backward(ad.sum(ad.add(ad.sum(stats.means[1]), ad.sum(stats.spreads[1]))))
        assert x.grad is not None and np.any(x.grad != 0)

    def test_freeze_and_copy(self, small_mlp):
        c = small_mlp.copy()
        c.freeze()
        assert all(not p.requires_grad for p in c.parameters())
        assert all(p.requires_grad for p in small_mlp.parameters())
        c.layers[0].weight.data[0, 0] += 1
        assert c.layers[0].weight.data[0, 0] != small_mlp.layers[0].weight.data[0, 0]

    def test_build_mlp_structure(self, rng):
        m = build_mlp(2, [64, 64, 64], 2, rng)
        kinds = [type(layer) for layer in m.layers]
        assert kinds == [Dense, BatchNorm, ReLU] * 3 + [Dense]


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 20), st.integers(1, 5), st.floats(0.01, 1.0))
def test_bn_train_output_standardized(n, f, momentum):
    x = np.random.default_rng(n * 31 + f).normal(loc=3, scale=2, size=(n, f))
    out = BatchNorm(f, momentum=momentum, eps=0.0)(Tensor(x)).data
    np.testing.assert_allclose(out.mean(0), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(0), 1.0, atol=1e-8)
