"""Quantized-model construction, distillation losses and the alternating
generator / quantized-model training loop."""
from __future__ import annotations

import contextlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from gdfq import autodiff as ad
from gdfq.autodiff import Tensor
from gdfq.errors import ConfigError, ContractError, NumericError
from gdfq.generator import Generator, GeneratorConfig, generator_loss, sample_noise_and_labels
from gdfq.layers import Dense, Model
from gdfq.losses import cross_entropy_loss, kl_divergence_loss
from gdfq.optim import Adam, NesterovSGD
from gdfq.quant.calibrate import calibrate_clip_range
from gdfq.quant.quantizer import QuantizedDense
from gdfq.rng import stream

log = logging.getLogger(__name__)

REPORT_VERSION = 1
STRATEGIES = ("alternating", "separate")


@dataclass
class TrainConfig:
    beta: float = 0.1
    gamma: float = 1.0
    weight_bits: int = 4
    act_bits: int = 4
    epochs: int = 100
    iters_per_epoch: int = 50
    warmup_iters: int = 200
    eta: float | None = None
    strategy: str = "alternating"
    separate_g_iters: int | None = None
    range_freeze_epochs: int = 4
    act_ema_momentum: float = 0.1
    lr_g: float = 1e-3
    lr_q: float = 1e-4
    lr_decay: float = 0.1
    lr_decay_period: int = 50
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    seed: int = 0
    fixed_bns: bool = True
    refresh_weight_range: bool = True
    spread_mode: str = "std"
    use_ce_g: bool = True
    use_bns_g: bool = True
    use_ce_q: bool = True
    use_kd_q: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.eta is not None and not 0.0 < self.eta <= 1.0:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.weight_bits < 2 or self.act_bits < 2:
            raise ConfigError("bitwidths must be >= 2")
        if self.range_freeze_epochs < 1:
            raise ConfigError("range_freeze_epochs must be >= 1")
        for name in ("epochs", "iters_per_epoch", "batch_size", "lr_decay_period"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 for batch statistics")
        for name in ("warmup_iters", "beta", "gamma", "lr_g", "lr_q", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.spread_mode not in ("std", "var"):
            raise ConfigError("spread_mode must be 'std' or 'var'")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@contextlib.contextmanager
def inference_mode(model: Model):
    """No graph, BN on running statistics, activation ranges untouched."""
    bn_modes = [(bn, bn.mode) for bn in model.bn_layers()]
    wrappers = [(q, q.observing) for q in model.layers if isinstance(q, QuantizedDense)]
    for bn, mode in bn_modes:
        if mode == "train":
            bn.mode = "eval"
    for q, _ in wrappers:
        q.observing = False
    try:
        with ad.no_grad():
            yield model
    finally:
        for bn, mode in bn_modes:
            bn.mode = mode
        for q, obs in wrappers:
            q.observing = obs


def evaluate_accuracy(model: Model, inputs, labels, batch: int = 4096) -> float:
    """Top-1 accuracy; ties resolve to the lowest class index."""
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    if len(inputs) == 0:
        raise ContractError("evaluation set is empty")
    correct = 0
    with inference_mode(model):
        for i in range(0, len(inputs), batch):
            logits = model.forward(Tensor(inputs[i : i + batch])).data
            correct += int(np.sum(np.argmax(logits, axis=1) == labels[i : i + batch]))
    return correct / len(inputs)


def quantize_model(
    M: Model,
    weight_bits: int = 4,
    act_bits: int = 4,
    fixed_bns: bool = True,
    refresh_weights: bool = True,
    act_ema_momentum: float = 0.1,
) -> Model:
    """Deep copy of ``M`` with each dense layer fake-quantized and BN statistics fixed."""
    Q = M.copy()
    Q.unfreeze()
    for i, layer in enumerate(Q.layers):
        if isinstance(layer, Dense):
            wrapped = QuantizedDense(layer, weight_bits, act_bits, refresh_weights)
            wrapped.act_range.ema_momentum = act_ema_momentum
            Q.layers[i] = wrapped
    Q.set_bn_mode("fixed" if fixed_bns else "train")
    return Q


def quantized_layers(Q: Model) -> list[QuantizedDense]:
    return [layer for layer in Q.layers if isinstance(layer, QuantizedDense)]


def set_observing(Q: Model, flag: bool) -> None:
    for q in quantized_layers(Q):
        q.observing = flag


def freeze_ranges(Q: Model) -> None:
    for q in quantized_layers(Q):
        q.act_range.freeze()


@dataclass
class QuantLoss:
    total: Tensor
    ce: Tensor
    kd: Tensor
    logits: np.ndarray


def quantized_model_loss(
    Q: Model, M: Model, x_hat, y, gamma: float = 1.0, use_ce: bool = True, use_kd: bool = True
) -> QuantLoss:
    """``L2 = CE(Q(x), y) + gamma * KL(Q(x) || M(x))`` on a detached batch."""
    x = Tensor(x_hat.data if isinstance(x_hat, Tensor) else x_hat)
    with ad.no_grad():
        teacher = M.forward(x).data
    logits = Q.forward(x)
    ce = cross_entropy_loss(logits, y)
    kd = kl_divergence_loss(logits, teacher)
    total = Tensor(0.0)
    if use_ce:
        total = ad.add(total, ce)
    if use_kd:
        total = ad.add(total, ad.mul(kd, gamma))
    return QuantLoss(total, ce, kd, logits.data)


@dataclass
class TrainReport:
    config: dict
    seed: int
    records: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        head = {"kind": "header", "format": "gdfq-train-report", "version": REPORT_VERSION,
                "seed": self.seed, "config": self.config}
        out = [json.dumps(head, sort_keys=True)]
        out += [json.dumps({"kind": "epoch", **r}, sort_keys=True) for r in self.records]
        out.append(json.dumps({"kind": "summary", **self.summary}, sort_keys=True))
        return out

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.lines()) + "\n")

    @classmethod
    def read(cls, path) -> TrainReport:
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        head = rows[0]
        if head.get("format") != "gdfq-train-report" or head.get("version") != REPORT_VERSION:
            raise ContractError(f"{path}: not a version-{REPORT_VERSION} training report")
        rep = cls(config=head["config"], seed=head["seed"])
        for r in rows[1:]:
            kind = r.pop("kind")
            if kind == "epoch":
                rep.records.append(r)
            elif kind == "summary":
                rep.summary = r
        return rep


def _teacher_copy(M: Model, spread_mode: str) -> Model:
    T = M.copy()
    T.freeze()
    T.set_bn_mode("eval")
    T.set_spread_mode(spread_mode)
    return T


def _check_finite(value: float, what: str, where: str) -> None:
    if not np.isfinite(value):
        raise NumericError(f"{what} became non-finite at {where}")


class GDFQTrainer:
    """Stepwise form of the training procedure.

    ``train()`` runs: generator warm-up, quantization of a copy of the
    teacher, range-observation epochs (generator still trained, quantized
    weights untouched), range freeze, then alternating updates.  The teacher
    passed in is never modified; a frozen private copy is used.
    """

    def __init__(
        self,
        M: Model,
        gcfg: GeneratorConfig,
        tcfg: TrainConfig,
        eval_data: tuple[np.ndarray, np.ndarray] | None = None,
    ):
        tcfg.validate()
        if gcfg.num_classes != M.num_classes:
            raise ConfigError("generator class count must match the teacher")
        if gcfg.output_dim != M.input_dim:
            raise ConfigError("generator output width must match the teacher input")
        self.tcfg = tcfg
        self.gcfg = gcfg
        self.source = M
        self.teacher = _teacher_copy(M, tcfg.spread_mode)
        self.eval_data = eval_data
        self.G = Generator(gcfg, stream(tcfg.seed, "generator-init"))
        self.opt_g = Adam(self.G.parameters(), lr=tcfg.lr_g)
        self.noise = stream(tcfg.seed, "noise")
        self.Q: Model | None = None
        self.opt_q = None
        self.g_stopped = False
        self.g_updates = 0
        self.report = TrainReport(config=asdict(tcfg), seed=tcfg.seed)

    @property
    def g_trainable(self) -> bool:
        return self.tcfg.use_ce_g or self.tcfg.use_bns_g

    def _sample(self, rng=None):
        return sample_noise_and_labels(
            rng or self.noise, self.tcfg.batch_size, self.gcfg.num_classes, self.gcfg.noise_dim
        )

    def generator_step(self, z, y, where: str) -> dict:
        """One update of G on L1 unless stopped; returns the batch and its losses."""
        c = self.tcfg
        gl = generator_loss(self.G, self.teacher, z, y, c.beta, c.use_ce_g, c.use_bns_g)
        acc = float(np.mean(np.argmax(gl.teacher_logits, axis=1) == y))
        _check_finite(gl.total.item(), "generator loss", where)
        if c.eta is not None and acc > c.eta:
            self.g_stopped = True
        if not self.g_stopped and self.g_trainable:
            self.opt_g.zero_grad()
            ad.backward(gl.total, self.opt_g.params)
            self.opt_g.step()
            self.g_updates += 1
        return {"fake": gl.fake.data, "l1": gl.total.item(), "ce_g": gl.ce.item(),
                "bns": gl.bns.item(), "teacher_acc": acc}

    def _frozen_generator_batch(self, z, y) -> dict:
        c = self.tcfg
        with ad.no_grad():
            gl = generator_loss(self.G, self.teacher, z, y, c.beta, c.use_ce_g, c.use_bns_g)
        acc = float(np.mean(np.argmax(gl.teacher_logits, axis=1) == y))
        return {"fake": gl.fake.data, "l1": gl.total.item(), "ce_g": gl.ce.item(),
                "bns": gl.bns.item(), "teacher_acc": acc}

    def warmup(self) -> None:
        for i in range(self.tcfg.warmup_iters):
            z, y = self._sample()
            self.generator_step(z, y, f"warm-up iteration {i}")

    def pretrain_generator(self) -> None:
        """Generator-only budget used by the separate strategy."""
        c = self.tcfg
        budget = c.separate_g_iters if c.separate_g_iters is not None else c.epochs * c.iters_per_epoch
        rng = stream(c.seed, "separate-pretrain")
        for i in range(budget):
            epoch = i // c.iters_per_epoch
            self.opt_g.lr = c.lr_g * c.lr_decay ** (epoch // c.lr_decay_period)
            z, y = self._sample(rng)
            self.generator_step(z, y, f"generator pre-training iteration {i}")

    def quantize(self) -> Model:
        c = self.tcfg
        self.Q = quantize_model(self.source, c.weight_bits, c.act_bits, c.fixed_bns,
                                c.refresh_weight_range, c.act_ema_momentum)
        self.opt_q = NesterovSGD(self.Q.parameters(), lr=c.lr_q, momentum=c.momentum,
                                 weight_decay=c.weight_decay)
        return self.Q

    def run_epoch(self, epoch: int) -> dict:
        c = self.tcfg
        decay = c.lr_decay ** (epoch // c.lr_decay_period)
        self.opt_g.lr = c.lr_g * decay
        self.opt_q.lr = c.lr_q * decay
        observing = epoch < c.range_freeze_epochs
        set_observing(self.Q, observing)
        update_g = c.strategy == "alternating"
        sums: dict[str, float] = {}
        for it in range(c.iters_per_epoch):
            where = f"epoch {epoch} iteration {it}"
            z, y = self._sample()
            if update_g:
                g = self.generator_step(z, y, where)
            else:
                g = self._frozen_generator_batch(z, y)
            if observing:
                with ad.no_grad():
                    ql = quantized_model_loss(self.Q, self.teacher, g["fake"], y, c.gamma, c.use_ce_q, c.use_kd_q)
            else:
                ql = quantized_model_loss(self.Q, self.teacher, g["fake"], y, c.gamma, c.use_ce_q, c.use_kd_q)
                _check_finite(ql.total.item(), "quantized-model loss", where)
                self.opt_q.zero_grad()
                ad.backward(ql.total, self.opt_q.params)
                self.opt_q.step()
            vals = {k: v for k, v in g.items() if k != "fake"}
            vals.update(l2=ql.total.item(), ce_q=ql.ce.item(), kd=ql.kd.item())
            for k, v in vals.items():
                sums[k] = sums.get(k, 0.0) + v
        set_observing(self.Q, False)
        for q in quantized_layers(self.Q):
            if observing:
                q.act_range.epochs_observed += 1
        if epoch + 1 == c.range_freeze_epochs:
            freeze_ranges(self.Q)
        rec = {k: v / c.iters_per_epoch for k, v in sorted(sums.items())}
        rec["epoch"] = epoch
        rec["phase"] = "observe" if observing else "finetune"
        rec["generator_stopped"] = self.g_stopped
        rec["eval_acc"] = self._eval(self.Q)
        for k, v in rec.items():
            if isinstance(v, float) and v is not None:
                _check_finite(v, k, f"epoch {epoch}")
        return rec

    def _eval(self, model: Model) -> float | None:
        if self.eval_data is None:
            return None
        return evaluate_accuracy(model, *self.eval_data)

    def train(self) -> tuple[Generator, Model, TrainReport]:
        c = self.tcfg
        self.warmup()
        if c.strategy == "separate":
            self.pretrain_generator()
        self.quantize()
        pre_acc = None
        for epoch in range(c.epochs):
            rec = self.run_epoch(epoch)
            self.report.records.append(rec)
            if epoch + 1 == c.range_freeze_epochs:
                pre_acc = self._eval(self.Q)
            log.info("epoch %d %s", epoch, json.dumps(rec, sort_keys=True))
        self.report.summary = {
            "teacher_eval_acc": self._eval(self.teacher),
            "q_eval_acc_pre_finetune": pre_acc,
            "q_eval_acc": self._eval(self.Q),
            "generator_updates": self.g_updates,
            "generator_stopped": self.g_stopped,
            "strategy": c.strategy,
            "weight_bits": c.weight_bits,
            "act_bits": c.act_bits,
        }
        return self.G, self.Q, self.report


def gdfq_train(
    M: Model,
    gcfg: GeneratorConfig,
    tcfg: TrainConfig,
    eval_data: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[Generator, Model, TrainReport]:
    """Data-free quantization of ``M``.  ``eval_data`` is used for reporting only."""
    return GDFQTrainer(M, gcfg, tcfg, eval_data).train()


def collect_dense_inputs(M: Model, x: np.ndarray) -> list[np.ndarray]:
    """Full-precision inputs seen by each dense layer of ``M`` on batch ``x``."""
    seen = []
    with inference_mode(M):
        h = Tensor(x)
        for layer in M.layers:
            inner = getattr(layer, "layer", layer)
            if isinstance(inner, Dense):
                seen.append(h.data.copy())
            h = inner(h)
    return seen


def ptq_quantize(M: Model, calib_x: np.ndarray, method: str = "minmax",
                 weight_bits: int = 4, act_bits: int = 4) -> Model:
    """Post-training quantization without fine-tuning.

    Weights keep their per-tensor min/max range; ``method`` calibrates the
    per-layer activation clip ranges on ``calib_x``.
    """
    Q = quantize_model(M, weight_bits, act_bits, fixed_bns=True, refresh_weights=False)
    inputs = collect_dense_inputs(M, calib_x)
    for q, acts in zip(quantized_layers(Q), inputs):
        lo, hi = calibrate_clip_range(acts, method, act_bits)
        q.act_range.l, q.act_range.u = lo, hi
        q.act_range.freeze()
    return Q


def real_data_finetune(
    M: Model,
    x: np.ndarray,
    y: np.ndarray,
    tcfg: TrainConfig,
    eval_data: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[Model, TrainReport]:
    """Quantized fine-tuning on real labelled data with the same L2 objective."""
    c = tcfg
    teacher = _teacher_copy(M, c.spread_mode)
    Q = quantize_model(M, c.weight_bits, c.act_bits, c.fixed_bns, c.refresh_weight_range, c.act_ema_momentum)
    opt = NesterovSGD(Q.parameters(), lr=c.lr_q, momentum=c.momentum, weight_decay=c.weight_decay)
    rng = stream(c.seed, "real-batches")
    report = TrainReport(config=asdict(c), seed=c.seed)
    pre_acc = None
    for epoch in range(c.epochs):
        opt.lr = c.lr_q * c.lr_decay ** (epoch // c.lr_decay_period)
        observing = epoch < c.range_freeze_epochs
        set_observing(Q, observing)
        total = 0.0
        for it in range(c.iters_per_epoch):
            idx = rng.integers(0, len(x), size=c.batch_size)
            if observing:
                with ad.no_grad():
                    ql = quantized_model_loss(Q, teacher, x[idx], y[idx], c.gamma, c.use_ce_q, c.use_kd_q)
            else:
                ql = quantized_model_loss(Q, teacher, x[idx], y[idx], c.gamma, c.use_ce_q, c.use_kd_q)
                _check_finite(ql.total.item(), "quantized-model loss", f"epoch {epoch} iteration {it}")
                opt.zero_grad()
                ad.backward(ql.total, opt.params)
                opt.step()
            total += ql.total.item()
        set_observing(Q, False)
        if epoch + 1 == c.range_freeze_epochs:
            freeze_ranges(Q)
            pre_acc = evaluate_accuracy(Q, *eval_data) if eval_data else None
        report.records.append({
            "epoch": epoch,
            "l2": total / c.iters_per_epoch,
            "eval_acc": evaluate_accuracy(Q, *eval_data) if eval_data else None,
        })
    report.summary = {
        "q_eval_acc_pre_finetune": pre_acc,
        "q_eval_acc": evaluate_accuracy(Q, *eval_data) if eval_data else None,
        "weight_bits": c.weight_bits,
        "act_bits": c.act_bits,
    }
    return Q, report
