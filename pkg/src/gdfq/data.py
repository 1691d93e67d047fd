"""Toy 2-D dataset, CSV ingestion and teacher training."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gdfq import autodiff as ad
from gdfq.autodiff import Tensor
from gdfq.errors import ConfigError, NumericError
from gdfq.layers import Model, build_mlp
from gdfq.losses import cross_entropy_loss
from gdfq.optim import Adam
from gdfq.rng import stream
from gdfq.train import evaluate_accuracy

log = logging.getLogger(__name__)

TOY_LOW, TOY_HIGH = -4.0, 4.0


def toy_label(points: np.ndarray) -> np.ndarray:
    """Class 1 where ``sin(x1) * sin(x2) > 0``: a 4x4 checkerboard on [-4, 4]^2."""
    points = np.asarray(points, dtype=np.float64)
    return (np.sin(points[:, 0]) * np.sin(points[:, 1]) > 0).astype(np.int64)


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray
    eval_idx: np.ndarray
    num_classes: int
    seed: int | None = None

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[self.train_idx], self.y[self.train_idx]

    @property
    def eval(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[self.eval_idx], self.y[self.eval_idx]

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]


def _split(n: int, rng: np.random.Generator, train_frac: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    cut = int(round(train_frac * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def make_toy_dataset(seed: int, n: int = 10_000) -> Dataset:
    if n < 100:
        raise ConfigError(f"toy dataset needs at least 100 points, got {n}")
    rng = stream(seed, "toy-data")
    x = rng.uniform(TOY_LOW, TOY_HIGH, size=(n, 2))
    tr, ev = _split(n, rng)
    return Dataset(x, toy_label(x), tr, ev, num_classes=2, seed=seed)


def load_csv_dataset(path, label_column: str = "label", seed: int = 0) -> Dataset:
    """Numeric feature columns plus an integer label column; header required."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or label_column not in header:
            raise ConfigError(f"{path}: header with a {label_column!r} column is required")
        rows = [r for r in reader if r]
    li = header.index(label_column)
    try:
        data = np.array([[float(v) for j, v in enumerate(r) if j != li] for r in rows])
        y = np.array([int(r[li]) for r in rows], dtype=np.int64)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from exc
    if y.min() < 0:
        raise ConfigError(f"{path}: labels must be non-negative integers")
    tr, ev = _split(len(y), stream(seed, "csv-split"))
    return Dataset(data, y, tr, ev, num_classes=int(y.max()) + 1, seed=seed)


@dataclass
class TeacherConfig:
    hidden: tuple[int, ...] = (64, 64, 64)
    epochs: int = 200
    batch_size: int = 512
    lr: float = 1e-2
    lr_decay_epochs: int = 70
    seed: int = 0


def train_teacher(data: Dataset, cfg: TeacherConfig | None = None) -> tuple[Model, dict]:
    """Full-precision classifier trained with Adam on the training split."""
    cfg = cfg or TeacherConfig()
    model = build_mlp(data.input_dim, list(cfg.hidden), data.num_classes, stream(cfg.seed, "teacher-init"))
    opt = Adam(model.parameters(), lr=cfg.lr)
    rng = stream(cfg.seed, "teacher-batches")
    x, y = data.train
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * 0.1 ** (epoch // cfg.lr_decay_epochs)
        perm = rng.permutation(len(x))
        for i in range(0, len(x) - 1, cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            if len(idx) < 2:
                continue
            loss = cross_entropy_loss(model(Tensor(x[idx])), y[idx])
            if not np.isfinite(loss.item()):
                raise NumericError(f"teacher training diverged at epoch {epoch}")
            opt.zero_grad()
            ad.backward(loss, opt.params)
            opt.step()
    model.set_bn_mode("eval")
    metrics = {
        "train_acc": evaluate_accuracy(model, *data.train),
        "eval_acc": evaluate_accuracy(model, *data.eval),
    }
    log.info("teacher trained: %s", metrics)
    return model, metrics
