"""Experiment configuration, losses, Adam with cosine annealing, train/evaluate."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..blocks import NacTcnConfig, NacTcnModel, apply_head, blocks_for_context, save_checkpoint
from ..errors import ConfigError, DivergenceError, ParseError
from ..metrics import accuracy, ccc, mean_roc_auc
from ..numcore import (Rng, Tape, Tensor, log_softmax_last, mean, mul, softplus, square, sub,
                       sum_, transpose)
from .datasets import load_feature_dataset
from .tasks import SequenceDataset, gen_adding, gen_copy_memory, gen_lagged_affect

TASKS = ("copy_memory", "adding", "lagged_affect", "file_dataset")

TASK_DEFAULTS = {
    "copy_memory": {"T": 50, "n_symbols": 8, "mem_len": 8},
    "adding": {"T": 64},
    "lagged_affect": {"T": 128, "lag": 32, "label_at": "frame"},
    "file_dataset": {},
}


@dataclass
class ExperimentConfig:
    task: str = "copy_memory"
    task_params: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)  # NacTcnConfig fields, plus optional "width"
    lr: float = 0.001
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 10
    batch: int = 16
    seed: int = 0
    precision: str = "f64"
    train_count: int = 256
    eval_count: int = 64
    data_path: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1 or self.batch < 1:
            raise ConfigError("epochs and batch must be >= 1")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be 'f32' or 'f64', got {self.precision!r}")
        if self.train_count < 1 or self.eval_count < 1:
            raise ConfigError("train_count and eval_count must be >= 1")
        self.betas = tuple(float(b) for b in self.betas)
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"betas must be two values in [0, 1), got {self.betas}")
        if self.task == "file_dataset" and not self.data_path:
            raise ConfigError("task 'file_dataset' needs data_path")
        self.seed = int(self.seed) & 0xFFFF_FFFF_FFFF_FFFF

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def task_settings(self) -> dict:
        return {**TASK_DEFAULTS[self.task], **self.task_params}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**data)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ParseError(f"config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a JSON object")
    return ExperimentConfig.from_dict(data)


# data + model assembly -----------------------------------------------------

def make_datasets(config: ExperimentConfig) -> tuple[SequenceDataset, SequenceDataset]:
    settings = config.task_settings()
    rng = Rng(config.seed)
    train_rng, eval_rng = rng.child(1), rng.child(2)
    if config.task == "copy_memory":
        args = (settings["T"], settings["n_symbols"], settings["mem_len"])
        return (gen_copy_memory(*args, config.train_count, train_rng),
                gen_copy_memory(*args, config.eval_count, eval_rng))
    if config.task == "adding":
        return (gen_adding(settings["T"], config.train_count, train_rng),
                gen_adding(settings["T"], config.eval_count, eval_rng))
    if config.task == "lagged_affect":
        kw = {k: settings[k] for k in ("gain", "step_std", "label_at") if k in settings}
        return (gen_lagged_affect(settings["T"], settings["lag"], config.train_count, train_rng, **kw),
                gen_lagged_affect(settings["T"], settings["lag"], config.eval_count, eval_rng, **kw))
    features = load_feature_dataset(config.data_path)
    return features.split("train"), features.split("eval")


_HEAD_FOR_KIND = {
    "frame_class": "softmax_classification",
    "seq_class": "softmax_classification",
    "seq_multilabel": "sigmoid_multilabel",
    "frame_regression": "tanh_regression",
    "seq_regression": "tanh_regression",
}


def model_config_for(config: ExperimentConfig, data: SequenceDataset) -> NacTcnConfig:
    """Fill task-determined fields and size the depth to cover the sequence."""
    spec = dict(config.model)
    width = int(spec.pop("width", 32))
    kind = data.kind
    head = "linear" if config.task == "adding" else _HEAD_FOR_KIND[kind]
    spec.setdefault("head_type", head)
    spec.setdefault("label_at", "frame" if kind.startswith("frame") else "last")
    spec.setdefault("output_size", data.n_outputs)
    spec.setdefault("input_channels", data.channels)
    if "channels" not in spec:
        stages = 1 if spec.get("variant") == "attn_only" else 2
        context = int(spec.pop("context", data.length))
        n_blocks = blocks_for_context(context, int(spec.get("kernel", 3)), stages)
        spec["channels"] = [width] * n_blocks
    spec.pop("context", None)
    return NacTcnConfig.from_dict(spec)


# losses -----------------------------------------------------------------------

def ccc_loss(pred: Tensor, target: Tensor) -> Tensor:
    """``1 - CCC`` per output channel, averaged; statistics over batch and time."""
    if pred.ndim == 3:
        pred = transpose(pred, (1, 0, 2)).reshape(pred.shape[1], -1)
        target = transpose(target, (1, 0, 2)).reshape(target.shape[1], -1)
    else:
        pred, target = transpose(pred, (1, 0)), transpose(target, (1, 0))
    mx = mean(pred, axis=1, keepdims=True)
    my = mean(target, axis=1, keepdims=True)
    dx, dy = sub(pred, mx), sub(target, my)
    cov = mean(mul(dx, dy), axis=1)
    var_x = mean(square(dx), axis=1)
    var_y = mean(square(dy), axis=1)
    den = var_x + var_y + square(sub(mx, my)).reshape(-1) + 1e-12
    return 1.0 - mean(2.0 * cov / den)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    return mean(square(sub(pred, target)))


def bce_with_logits(logits: Tensor, target: Tensor) -> Tensor:
    return mean(softplus(logits) - mul(target, logits))


def _onehot(ids: np.ndarray, classes: int, dtype) -> np.ndarray:
    return np.eye(classes, dtype=dtype)[ids]


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood; logits ``[b, classes]`` or ``[b, classes, n]``."""
    if logits.ndim == 3:
        logits = transpose(logits, (0, 2, 1))
    logp = log_softmax_last(logits)
    onehot = _onehot(labels, logp.shape[-1], logp.dtype)
    return -mean(sum_(mul(logp, onehot), axis=-1))


def task_loss(model: NacTcnModel, x: Tensor, targets: np.ndarray, kind: str,
              rng: Rng | None = None, train: bool = False) -> Tensor:
    logits = model.logits(x, rng, train)
    head = model.config.head_type
    if kind in ("frame_class", "seq_class"):
        return cross_entropy(logits, targets)
    if kind == "seq_multilabel":
        return bce_with_logits(logits, Tensor(targets, dtype=logits.dtype))
    y = Tensor(targets, dtype=logits.dtype)
    if head == "tanh_regression":
        return ccc_loss(apply_head(logits, head), y)
    return mse_loss(logits, y)


# optimizer --------------------------------------------------------------------

def cosine_lr(step: int, total: int, base: float) -> float:
    """Annealed rate ``base * (1 + cos(pi * step / total)) / 2``; no restarts."""
    return base * (1.0 + math.cos(math.pi * min(step, total) / total)) / 2.0


class Adam:
    """Adam with bias correction, updating tensors in place."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.001,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


# evaluation ---------------------------------------------------------------

def predict(model: NacTcnModel, data: SequenceDataset, batch: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """(head outputs, raw logits) over a whole dataset, eval mode."""
    outs, logits = [], []
    dtype = model.dtype
    for start in range(0, len(data), batch):
        x = Tensor(data.inputs[start:start + batch], dtype=dtype)
        z = model.logits(x)
        outs.append(apply_head(z, model.config.head_type).data)
        logits.append(z.data)
    return np.concatenate(outs), np.concatenate(logits)


def evaluate(model: NacTcnModel, data: SequenceDataset, batch: int = 64) -> dict[str, float]:
    """Task metrics on ``data``; ``metric`` holds the headline value."""
    if data.channels != model.config.input_channels:
        raise ConfigError(f"data has {data.channels} channels, model expects {model.config.input_channels}")
    pred, logits = predict(model, data, batch)
    kind = data.kind
    out: dict[str, float] = {}
    if kind in ("frame_class", "seq_class"):
        lg = logits if kind == "seq_class" else logits.transpose(0, 2, 1)
        z = lg - lg.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        nll = -np.take_along_axis(logp, data.targets[..., None], axis=-1)[..., 0]
        labels = lg.argmax(axis=-1)
        out["cross_entropy"] = float(nll.mean())
        out["accuracy"] = accuracy(labels, data.targets)
        q = data.meta.get("query_slots")
        if q:
            out["query_cross_entropy"] = float(nll[:, -q:].mean())
            out["query_accuracy"] = accuracy(labels[:, -q:], data.targets[:, -q:])
            out["metric"] = out["query_cross_entropy"]
        else:
            out["metric"] = out["accuracy"]
    elif kind == "seq_multilabel":
        out["roc_auc"] = mean_roc_auc(pred, data.targets)
        out["metric"] = out["roc_auc"]
    elif model.config.head_type == "tanh_regression":
        p = pred.transpose(1, 0, 2).reshape(pred.shape[1], -1) if pred.ndim == 3 else pred.T
        t = data.targets
        t = t.transpose(1, 0, 2).reshape(t.shape[1], -1) if t.ndim == 3 else t.T
        out["ccc"] = float(np.mean([ccc(pi, ti) for pi, ti in zip(p, t)]))
        out["metric"] = out["ccc"]
    else:
        out["mse"] = float(np.mean((pred - data.targets) ** 2))
        out["metric"] = out["mse"]
    return out


# training ---------------------------------------------------------------------

@dataclass
class TrainReport:
    config: dict
    model: dict
    params: int
    epochs: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"task={self.config['task']} variant={self.model['variant']} "
                 f"heads={self.model['heads']} params={self.params:,}"]
        for e in self.epochs:
            lines.append(f"epoch {e['epoch']:3d}  train_loss={e['train_loss']:.6f}  "
                         f"eval_metric={e['eval_metric']:.6f}")
        lines.append("final: " + ", ".join(f"{k}={v:.6f}" for k, v in self.final.items()))
        if self.checkpoint:
            lines.append(f"checkpoint: {self.checkpoint}")
        return "\n".join(lines)


def train(config: ExperimentConfig, out_dir: str | Path | None = None,
          data: tuple[SequenceDataset, SequenceDataset] | None = None,
          model: NacTcnModel | None = None, log=None) -> tuple[TrainReport, NacTcnModel]:
    """Run ``config.epochs`` passes of seeded mini-batch Adam.

    Every random draw (data, init, shuffling, dropout) derives from
    ``config.seed``, so equal configs give identical reports.
    """
    train_ds, eval_ds = data if data is not None else make_datasets(config)
    rng = Rng(config.seed)
    if model is None:
        model_cfg = model_config_for(config, train_ds)
        model = NacTcnModel.build(model_cfg, rng.child(3))
    if train_ds.channels != model.config.input_channels:
        raise ConfigError(f"data has {train_ds.channels} channels, model expects "
                          f"{model.config.input_channels}")
    model.astype(config.dtype)
    shuffle_rng, dropout_rng = rng.child(4), rng.child(5)

    params = model.parameters()
    opt = Adam(params, config.lr, config.betas, config.eps)
    n = len(train_ds)
    per_epoch = math.ceil(n / config.batch)
    total = config.epochs * per_epoch
    report = TrainReport(config.to_dict(), model.config.to_dict(),
                         sum(p.size for p in params.values()))
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch):
            idx = order[start:start + config.batch]
            x = Tensor(train_ds.inputs[idx], dtype=config.dtype)
            model.zero_grad()
            with Tape() as tape:
                loss = task_loss(model, x, train_ds.targets[idx], train_ds.kind, dropout_rng, train=True)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss {value} at epoch {epoch}, step {step}")
            tape.backward(loss, params.values())
            opt.step(cosine_lr(step, total, config.lr))
            losses.append(value)
            step += 1
        metrics = evaluate(model, eval_ds)
        report.epochs.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                              "eval_metric": metrics["metric"], "lr": cosine_lr(step, total, config.lr)})
        if log is not None:
            log(f"epoch {epoch}: train_loss={np.mean(losses):.6f} eval_metric={metrics['metric']:.6f}")
    report.final = evaluate(model, eval_ds)
    if out_dir is not None:
        out_dir = Path(out_dir)
        ckpt = save_checkpoint(model, out_dir / "checkpoint.json")
        report.checkpoint = str(ckpt)
        (out_dir / "report.json").write_text(report.to_json())
    return report, model


def sweep_heads(config: ExperimentConfig, heads=(2, 4, 8), out_dir: str | Path | None = None) -> dict:
    """Train once per head count and collect the final metrics."""
    results = []
    for h in heads:
        cfg = ExperimentConfig.from_dict({**config.to_dict(), "model": {**config.model, "heads": h}})
        sub_dir = None if out_dir is None else Path(out_dir) / f"heads_{h}"
        report, _ = train(cfg, sub_dir)
        results.append({"heads": h, "params": report.params, "final": report.final})
    best = max(results, key=lambda r: _score(r["final"]))
    return {"task": config.task, "results": results, "best_heads": best["heads"]}


def _score(final: dict) -> float:
    # lower is better for losses and mse
    if "query_cross_entropy" in final or "mse" in final:
        return -final["metric"]
    return final["metric"]
