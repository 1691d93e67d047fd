"""Dense / batch-norm / activation layers and the sequential model container."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from gdfq import autodiff as ad
from gdfq.autodiff import Tensor, make_result
from gdfq.errors import BNSUnavailableError, ContractError, DimensionError

BN_EPS = 1e-5
BN_MODES = ("train", "eval", "fixed")
SPREAD_MODES = ("std", "var")


class Layer:
    kind = "layer"

    def params(self) -> list[Tensor]:
        return []

    def forward(self, x: Tensor, capture: list | None = None) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor, capture: list | None = None) -> Tensor:
        return self.forward(x, capture)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        self.in_features = in_features
        self.out_features = out_features
        bound = 1.0 / np.sqrt(in_features)
        if rng is None:
            w = np.zeros((out_features, in_features))
        else:
            w = rng.uniform(-bound, bound, size=(out_features, in_features))
        self.weight = Tensor(w, requires_grad=True, name="weight")
        self.bias = Tensor(np.zeros(out_features), requires_grad=True, name="bias")

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def forward(self, x: Tensor, capture: list | None = None) -> Tensor:
        return dense_forward(self.weight, self.bias, x)


def dense_forward(weight: Tensor, bias: Tensor, x: Tensor) -> Tensor:
    """``y = x W^T + b`` as one graph node."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"input width {x.shape[-1]} != layer input width {weight.shape[1]}")
    w, b, xd = weight.data, bias.data, x.data

    def bw(g):
        return g @ w, g.T @ xd, g.sum(axis=0)

    return make_result(xd @ w.T + b, (x, weight, bias), bw)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, capture=None):
        return ad.relu(x)


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x, capture=None):
        return ad.tanh(x)


class BatchNorm(Layer):
    """Per-feature batch normalization over a ``[batch, features]`` input.

    ``train`` normalizes with the biased batch statistics and updates the
    running statistics by EMA; ``eval`` and ``fixed`` normalize with the
    running statistics.  ``fixed`` is the frozen-statistics fine-tuning mode:
    running statistics are never written, whatever else happens.
    """

    kind = "batchnorm"

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = BN_EPS):
        if not 0.0 < momentum <= 1.0:
            raise ContractError(f"BN momentum must be in (0, 1], got {momentum}")
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(num_features), requires_grad=True, name="gamma")
        self.beta = Tensor(np.zeros(num_features), requires_grad=True, name="beta")
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.mode = "train"
        self.spread_mode = "std"

    def params(self) -> list[Tensor]:
        return [self.gamma, self.beta]

    def forward(self, x: Tensor, capture: list | None = None) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.num_features:
            raise DimensionError(f"BN expects width {self.num_features}, got {x.shape}")
        if capture is not None:
            capture.append(batch_stats(x, self.spread_mode))
        if self.mode == "train":
            if x.shape[0] < 2:
                raise ContractError("batch norm in train mode needs a batch of at least 2")
            out, mu, var = _bn_train(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mu
            self.running_var = (1.0 - m) * self.running_var + m * var
            return out
        return _bn_affine(x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps)

    def target_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Running (mean, spread) in the layer's configured spread convention."""
        spread = np.sqrt(self.running_var) if self.spread_mode == "std" else self.running_var
        return self.running_mean, spread


def _bn_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float):
    xd = x.data
    n = xd.shape[0]
    mu = xd.mean(axis=0)
    centered = xd - mu
    var = (centered * centered).mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    gd = gamma.data

    def bw(g):
        dxhat = g * gd
        dx = (inv / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return make_result(xhat * gd + beta.data, (x, gamma, beta), bw), mu, var


def _bn_affine(x: Tensor, gamma: Tensor, beta: Tensor, mean: np.ndarray, var: np.ndarray, eps: float):
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    gd = gamma.data

    def bw(g):
        return g * (gd * inv), (g * xhat).sum(axis=0), g.sum(axis=0)

    return make_result(xhat * gd + beta.data, (x, gamma, beta), bw)


def batch_stats(x: Tensor, spread_mode: str = "std") -> tuple[Tensor, Tensor]:
    """Differentiable per-feature (mean, spread) of a ``[batch, f]`` tensor."""
    if x.shape[0] < 2:
        raise ContractError("batch statistics need a batch of at least 2")
    mu = ad.mean(x, axis=0)
    var = ad.mean(ad.square(ad.sub(x, mu)), axis=0)
    if spread_mode == "std":
        return mu, ad.sqrt(var)
    if spread_mode == "var":
        return mu, var
    raise ContractError(f"unknown spread mode {spread_mode!r}")


@dataclass
class BNStatsBatch:
    """Per-BN-layer (mean, spread) of the current batch's BN inputs, in layer order."""

    means: list[Tensor]
    spreads: list[Tensor]

    def __len__(self) -> int:
        return len(self.means)


class Model:
    """Ordered layer stack with class-count metadata."""

    def __init__(self, layers: Sequence[Layer], input_dim: int, num_classes: int):
        self.layers = list(layers)
        self.input_dim = input_dim
        self.num_classes = num_classes
        self._check_chain()

    def _check_chain(self) -> None:
        width = self.input_dim
        for layer in self.layers:
            inner = getattr(layer, "layer", layer)
            if isinstance(inner, Dense):
                if inner.in_features != width:
                    raise DimensionError(f"dense input {inner.in_features} != upstream width {width}")
                width = inner.out_features
            elif isinstance(inner, BatchNorm) and inner.num_features != width:
                raise DimensionError(f"BN width {inner.num_features} != upstream width {width}")
        if width != self.num_classes:
            raise DimensionError(f"final width {width} != class count {self.num_classes}")

    def forward(self, x, capture: list | None = None) -> Tensor:
        x = ad.as_tensor(x)
        for layer in self.layers:
            x = layer(x, capture)
        return x

    __call__ = forward

    def forward_with_bn_stats(self, x) -> tuple[Tensor, BNStatsBatch]:
        if not self.bn_layers():
            raise BNSUnavailableError("model has no batch-norm layers")
        captured: list = []
        logits = self.forward(x, captured)
        return logits, BNStatsBatch([m for m, _ in captured], [s for _, s in captured])

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params()]

    def bn_layers(self) -> list[BatchNorm]:
        return [layer for layer in self.layers if isinstance(layer, BatchNorm)]

    def set_bn_mode(self, mode: str) -> None:
        if mode not in BN_MODES:
            raise ContractError(f"unknown BN mode {mode!r}")
        for bn in self.bn_layers():
            bn.mode = mode

    def set_spread_mode(self, mode: str) -> None:
        if mode not in SPREAD_MODES:
            raise ContractError(f"unknown spread mode {mode!r}")
        for bn in self.bn_layers():
            bn.spread_mode = mode

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def copy(self) -> Model:
        return copy.deepcopy(self)

    def predict(self, x: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.forward(Tensor(x)).data.argmax(axis=1)

    def __iter__(self) -> Iterator[Layer]:
        return iter(self.layers)


def capture_bn_batch_stats(model: Model, x) -> BNStatsBatch:
    """Mean/spread of every BN layer's input for batch ``x``; differentiable in ``x``."""
    x = ad.as_tensor(x)
    if x.shape[0] < 2:
        raise ContractError("capturing batch statistics needs a batch of at least 2")
    return model.forward_with_bn_stats(x)[1]


def build_mlp(
    input_dim: int,
    hidden: Sequence[int],
    num_classes: int,
    rng: np.random.Generator,
    batchnorm: bool = True,
) -> Model:
    """Dense -> BN -> ReLU blocks followed by a linear classifier head."""
    layers: list[Layer] = []
    width = input_dim
    for h in hidden:
        layers.append(Dense(width, h, rng))
        if batchnorm:
            layers.append(BatchNorm(h))
        layers.append(ReLU())
        width = h
    layers.append(Dense(width, num_classes, rng))
    return Model(layers, input_dim, num_classes)
