"""Binary checkpoints for models, quantized models and generators.

Layout::

    magic  b"GDFQCKPT"
    u32    format version (little endian)
    u64    header length in bytes
    bytes  UTF-8 JSON header (layer descriptors, block shapes)
    f8...  little-endian float64 parameter blocks in header order

BN running statistics are stored as blocks.  Quantized layers add their
bitwidths, weight clip range and activation range record to the descriptor.
Generators add the label embedding as the first block.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from gdfq.autodiff import Tensor
from gdfq.errors import CheckpointError
from gdfq.generator import Generator, GeneratorConfig
from gdfq.layers import BatchNorm, Dense, Layer, Model, ReLU, Tanh
from gdfq.quant.quantizer import ActivationRange, QuantizedDense, QuantParams

MAGIC = b"GDFQCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_F8 = np.dtype("<f8")


def _describe(layer: Layer, blocks: list[np.ndarray]) -> dict:
    def add(name: str, arr: np.ndarray) -> dict:
        blocks.append(np.asarray(arr, dtype=np.float64))
        return {"name": name, "shape": list(np.shape(arr))}

    if isinstance(layer, QuantizedDense):
        ar = layer.act_range
        qp = layer._weight_qp
        return {
            "kind": "qdense",
            "dims": [layer.in_features, layer.out_features],
            "weight_bits": layer.weight_bits,
            "act_bits": layer.act_bits,
            "refresh_weights": layer.refresh_weights,
            "weight_range": [qp.k, qp.l, qp.u],
            "act_range": {"l": ar.l, "u": ar.u, "frozen": ar.frozen,
                          "ema_momentum": ar.ema_momentum, "epochs_observed": ar.epochs_observed},
            "blocks": [add("weight", layer.weight.data), add("bias", layer.bias.data)],
        }
    if isinstance(layer, Dense):
        return {"kind": "dense", "dims": [layer.in_features, layer.out_features],
                "blocks": [add("weight", layer.weight.data), add("bias", layer.bias.data)]}
    if isinstance(layer, BatchNorm):
        return {
            "kind": "batchnorm",
            "dims": [layer.num_features],
            "mode": layer.mode,
            "spread_mode": layer.spread_mode,
            "momentum": layer.momentum,
            "eps": layer.eps,
            "blocks": [add("gamma", layer.gamma.data), add("beta", layer.beta.data),
                       add("running_mean", layer.running_mean), add("running_var", layer.running_var)],
        }
    if isinstance(layer, (ReLU, Tanh)):
        return {"kind": layer.kind, "blocks": []}
    raise CheckpointError(f"cannot serialize layer of type {type(layer).__name__}")


def _pack(header: dict, blocks: list[np.ndarray]) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(b, dtype=_F8).tobytes() for b in blocks)
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + body


def _model_header(model: Model, blocks: list) -> dict:
    return {
        "input_dim": model.input_dim,
        "num_classes": model.num_classes,
        "layers": [_describe(layer, blocks) for layer in model.layers],
    }


def dumps(obj: Model | Generator) -> bytes:
    blocks: list[np.ndarray] = []
    if isinstance(obj, Generator):
        emb = {"name": "embedding", "shape": list(obj.embedding.shape)}
        blocks.append(obj.embedding.data)
        cfg = obj.cfg
        header = {
            "type": "generator",
            "config": {"num_classes": cfg.num_classes, "output_dim": cfg.output_dim,
                       "noise_dim": cfg.noise_dim, "embed_dim": cfg.embed_dim,
                       "hidden": list(cfg.hidden), "tanh_scale": cfg.tanh_scale},
            "embedding": emb,
            "net": _model_header(obj.net, blocks),
        }
    elif isinstance(obj, Model):
        quantized = any(isinstance(layer, QuantizedDense) for layer in obj.layers)
        header = {"type": "quantized" if quantized else "model", "net": _model_header(obj, blocks)}
    else:
        raise CheckpointError(f"cannot serialize {type(obj).__name__}")
    return _pack(header, blocks)


class _Reader:
    def __init__(self, body: memoryview):
        self.body = body
        self.pos = 0

    def take(self, spec: dict) -> np.ndarray:
        shape = tuple(spec["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if self.pos + nbytes > len(self.body):
            raise CheckpointError(f"truncated parameter block {spec['name']!r}")
        arr = np.frombuffer(self.body[self.pos : self.pos + nbytes], dtype=_F8).reshape(shape)
        self.pos += nbytes
        return arr.astype(np.float64, copy=True)


def _build_layer(desc: dict, rd: _Reader) -> Layer:
    kind = desc.get("kind")
    blocks = [rd.take(b) for b in desc.get("blocks", [])]
    if kind in ("dense", "qdense"):
        layer = Dense(*desc["dims"])
        layer.weight = Tensor(blocks[0], requires_grad=True, name="weight")
        layer.bias = Tensor(blocks[1], requires_grad=True, name="bias")
        if kind == "dense":
            return layer
        q = QuantizedDense(layer, desc["weight_bits"], desc["act_bits"], desc["refresh_weights"])
        k, lo, hi = desc["weight_range"]
        q.set_weight_params(QuantParams(k, lo, hi))
        a = desc["act_range"]
        q.act_range = ActivationRange(a["l"], a["u"], a["ema_momentum"], a["frozen"], a["epochs_observed"])
        return q
    if kind == "batchnorm":
        bn = BatchNorm(desc["dims"][0], desc["momentum"], desc["eps"])
        bn.gamma = Tensor(blocks[0], requires_grad=True, name="gamma")
        bn.beta = Tensor(blocks[1], requires_grad=True, name="beta")
        bn.running_mean, bn.running_var = blocks[2], blocks[3]
        bn.mode, bn.spread_mode = desc["mode"], desc["spread_mode"]
        return bn
    if kind == "relu":
        return ReLU()
    if kind == "tanh":
        return Tanh()
    raise CheckpointError(f"unknown layer kind {kind!r}")


def _build_model(net: dict, rd: _Reader) -> Model:
    layers = [_build_layer(d, rd) for d in net["layers"]]
    return Model(layers, net["input_dim"], net["num_classes"])


def loads(data: bytes) -> Model | Generator:
    if len(data) < _PREFIX.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a gdfq checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(bytes(data[start : start + hlen]).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    rd = _Reader(memoryview(data)[start + hlen :])
    try:
        if header["type"] == "generator":
            G = Generator.__new__(Generator)
            G.cfg = GeneratorConfig(**header["config"])
            G.embedding = Tensor(rd.take(header["embedding"]), requires_grad=True, name="embedding")
            G.net = _build_model(header["net"], rd)
            out: Model | Generator = G
        else:
            out = _build_model(header["net"], rd)
    except (KeyError, IndexError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc!r}") from exc
    if rd.pos != len(rd.body):
        raise CheckpointError("trailing bytes after the last parameter block")
    return out


def save(obj: Model | Generator, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(obj))
    return path


def load(path) -> Model | Generator:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return loads(path.read_bytes())
