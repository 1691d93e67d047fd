"""Conditional generator G(z | y) and its knowledge-matching loss."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gdfq import autodiff as ad
from gdfq.autodiff import Tensor
from gdfq.errors import BNSUnavailableError, ContractError
from gdfq.layers import BatchNorm, Dense, Layer, Model, ReLU
from gdfq.losses import bns_loss, cross_entropy_loss


@dataclass
class GeneratorConfig:
    num_classes: int
    output_dim: int
    noise_dim: int = 100
    embed_dim: int = 8
    hidden: list[int] = field(default_factory=lambda: [128, 128])
    tanh_scale: float | None = None

    def __post_init__(self):
        self.hidden = [int(h) for h in self.hidden]
        if self.noise_dim < 1:
            raise ContractError("noise_dim must be >= 1")
        if self.num_classes < 2:
            raise ContractError("num_classes must be >= 2")


class Generator:
    """Label embedding concatenated to the noise, then Dense-BN-ReLU blocks and
    a linear output.  Its BN layers always normalize with batch statistics."""

    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embedding = Tensor(
            rng.standard_normal((cfg.num_classes, cfg.embed_dim)), requires_grad=True, name="embedding"
        )
        layers: list[Layer] = []
        width = cfg.noise_dim + cfg.embed_dim
        for h in cfg.hidden:
            layers += [Dense(width, h, rng), BatchNorm(h), ReLU()]
            width = h
        layers.append(Dense(width, cfg.output_dim, rng))
        self.net = Model(layers, cfg.noise_dim + cfg.embed_dim, cfg.output_dim)

    def parameters(self) -> list[Tensor]:
        return [self.embedding] + self.net.parameters()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, z, y) -> Tensor:
        return generate(self, z, y)


def generate(G: Generator, z, y) -> Tensor:
    z = ad.as_tensor(z)
    y = np.asarray(y, dtype=np.int64)
    if z.ndim != 2 or z.shape[1] != G.cfg.noise_dim:
        raise ContractError(f"noise must be [batch, {G.cfg.noise_dim}], got {z.shape}")
    if y.shape != (z.shape[0],):
        raise ContractError(f"labels shape {y.shape} does not match batch {z.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= G.cfg.num_classes):
        raise IndexError(f"label out of range [0, {G.cfg.num_classes})")
    h = ad.concat([z, ad.take_rows(G.embedding, y)], axis=1)
    out = G.net.forward(h)
    if G.cfg.tanh_scale is not None:
        out = ad.mul(ad.tanh(out), G.cfg.tanh_scale)
    return out


def sample_noise_and_labels(rng: np.random.Generator, batch: int, n: int, noise_dim: int = 100):
    """``z ~ N(0, 1)`` of shape ``[batch, noise_dim]`` and iid uniform labels."""
    if batch < 1:
        raise ContractError(f"batch must be >= 1, got {batch}")
    z = rng.standard_normal((batch, noise_dim))
    y = rng.integers(0, n, size=batch)
    return z, y


@dataclass
class GeneratorLoss:
    total: Tensor
    ce: Tensor
    bns: Tensor
    teacher_logits: np.ndarray
    fake: Tensor


def generator_loss(
    G: Generator,
    M: Model,
    z,
    y,
    beta: float = 0.1,
    use_ce: bool = True,
    use_bns: bool = True,
) -> GeneratorLoss:
    """``L1 = CE(M(G(z|y)), y) + beta * L_BNS``.

    ``M`` must be frozen (no requires_grad params) and in eval mode; its BN
    layers normalize with the running statistics while the batch statistics of
    each BN input are matched against them.
    """
    if beta < 0:
        raise ContractError("beta must be >= 0")
    bns_layers: list[BatchNorm] = M.bn_layers()
    if not bns_layers:
        raise BNSUnavailableError("teacher has no batch-norm layers")
    fake = generate(G, z, y)
    logits, stats = M.forward_with_bn_stats(fake)
    ce = cross_entropy_loss(logits, y)
    targets = [bn.target_stats() for bn in bns_layers]
    bns = bns_loss(stats.means, stats.spreads, [t[0] for t in targets], [t[1] for t in targets])
    total = Tensor(0.0)
    if use_ce:
        total = ad.add(total, ce)
    if use_bns:
        total = ad.add(total, ad.mul(bns, beta))
    return GeneratorLoss(total, ce, bns, logits.data, fake)
