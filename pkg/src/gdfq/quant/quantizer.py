"""Symmetric k-bit linear quantizer, fake quantization with a straight-through
gradient, activation-range tracking, and the quantized dense wrapper."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gdfq.autodiff import Tensor, make_result
from gdfq.errors import BitwidthError, ContractError, DegenerateRangeError, NumericError, RangeError
from gdfq.layers import Dense, Layer, dense_forward
from gdfq.quant import kernels


@dataclass(frozen=True)
class QuantParams:
    """Per-tensor quantizer: bitwidth ``k`` and clip bounds ``[l, u]``.

    ``delta = (2^k - 1) / (u - l)`` and ``b = l * delta + 2^(k-1)`` map ``l``
    to code ``-2^(k-1)`` and ``u`` to ``2^(k-1) - 1``.
    """

    k: int
    l: float  # noqa: E741
    u: float

    @property
    def delta(self) -> float:
        return (2.0**self.k - 1.0) / (self.u - self.l)

    @property
    def b(self) -> float:
        return self.l * self.delta + 2.0 ** (self.k - 1)

    @property
    def qmin(self) -> int:
        return -(2 ** (self.k - 1))

    @property
    def qmax(self) -> int:
        return 2 ** (self.k - 1) - 1

    @property
    def step(self) -> float:
        return 1.0 / self.delta


def compute_quant_params(l: float, u: float, k: int) -> QuantParams:  # noqa: E741
    if int(k) != k or k < 2:
        raise BitwidthError(f"bitwidth must be an integer >= 2, got {k}")
    if not (np.isfinite(l) and np.isfinite(u)):
        raise NumericError(f"clip bounds must be finite, got ({l}, {u})")
    if not u > l:
        raise DegenerateRangeError(f"clip range needs l < u, got ({l}, {u})")
    return QuantParams(int(k), float(l), float(u))


def minmax_params(values: np.ndarray, k: int) -> QuantParams:
    return compute_quant_params(float(np.min(values)), float(np.max(values)), k)


def quantize_values(theta, qp: QuantParams) -> np.ndarray:
    """Integer codes ``clamp(round_half_even(delta * theta - b))``."""
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise NumericError("cannot quantize non-finite values")
    return kernels.quantize_codes(theta, qp.delta, qp.b, float(qp.qmin), float(qp.qmax))


def dequantize_values(codes, qp: QuantParams) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.size and (codes.min() < qp.qmin or codes.max() > qp.qmax):
        raise RangeError(f"codes must lie in [{qp.qmin}, {qp.qmax}]")
    return (codes.astype(np.float64) + qp.b) / qp.delta


def fake_quant(x: Tensor, qp: QuantParams) -> Tensor:
    """Quantize-dequantize in the forward pass; identity gradient inside
    ``[l, u]``, zero outside."""
    out, mask = kernels.fake_quant(x.data, qp.delta, qp.b, float(qp.qmin), float(qp.qmax), qp.l, qp.u)
    return make_result(out, (x,), lambda g: (g * mask,))


@dataclass
class ActivationRange:
    """EMA of observed batch (min, max), frozen after the observation epochs."""

    l: float | None = None  # noqa: E741
    u: float | None = None
    ema_momentum: float = 0.1
    frozen: bool = False
    epochs_observed: int = 0

    @property
    def initialized(self) -> bool:
        return self.l is not None

    def update(self, batch_min: float, batch_max: float) -> ActivationRange:
        return update_activation_range(self, batch_min, batch_max)

    def freeze(self) -> None:
        self.frozen = True

    def params(self, k: int) -> QuantParams:
        return compute_quant_params(self.l, self.u, k)


def update_activation_range(r: ActivationRange, batch_min: float, batch_max: float) -> ActivationRange:
    if batch_min > batch_max:
        raise ContractError(f"batch min {batch_min} exceeds batch max {batch_max}")
    if r.frozen:
        return r
    if r.l is None:
        r.l, r.u = float(batch_min), float(batch_max)
    else:
        m = r.ema_momentum
        r.l = (1.0 - m) * r.l + m * float(batch_min)
        r.u = (1.0 - m) * r.u + m * float(batch_max)
    return r


class QuantizedDense(Layer):
    """Dense layer run on fake-quantized inputs with fake-quantized weights.

    Weight clip bounds are the per-tensor min/max, recomputed at every forward
    unless ``refresh_weights`` is off.  Input clip bounds come from
    ``act_range``; while ``observing`` is set and the range is not frozen each
    forward folds the batch min/max into it.  An unobserved range leaves the
    input unquantized.
    """

    kind = "qdense"

    def __init__(self, layer: Dense, weight_bits: int, act_bits: int, refresh_weights: bool = True):
        self.layer = layer
        self.weight_bits = weight_bits
        self.act_bits = act_bits
        self.refresh_weights = refresh_weights
        self.act_range = ActivationRange()
        self.observing = False
        self._weight_qp = minmax_params(layer.weight.data, weight_bits)

    @property
    def weight(self) -> Tensor:
        return self.layer.weight

    @property
    def bias(self) -> Tensor:
        return self.layer.bias

    @property
    def in_features(self) -> int:
        return self.layer.in_features

    @property
    def out_features(self) -> int:
        return self.layer.out_features

    def params(self) -> list[Tensor]:
        return self.layer.params()

    def weight_params(self) -> QuantParams:
        if self.refresh_weights:
            self._weight_qp = minmax_params(self.layer.weight.data, self.weight_bits)
        return self._weight_qp

    def set_weight_params(self, qp: QuantParams) -> None:
        self._weight_qp = qp

    def forward(self, x: Tensor, capture: list | None = None) -> Tensor:
        if self.observing and not self.act_range.frozen:
            self.act_range.update(float(x.data.min()), float(x.data.max()))
        if self.act_range.initialized:
            x = fake_quant(x, self.act_range.params(self.act_bits))
        w = fake_quant(self.layer.weight, self.weight_params())
        return dense_forward(w, self.layer.bias, x)
