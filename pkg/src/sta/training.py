"""Adamax with global-norm clipping, the epoch loop and per-task metrics."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .dataio import Example
from .heads import TaskSpec
from .model import ModelConfig, StaModel, make_batch
from .tensor import backward, no_grad


@dataclass
class TrainConfig:
    task: str = "multichoice"
    batch_size: int = 128
    epochs: int = 30
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    dropout_p: float = 0.2
    seed: int = 0
    n_segments: int = 4
    hidden_d: int = 512
    embed_dim: int = 64
    attn_dim: int | None = None
    n_frames: int = 36
    text_attention: bool = True
    mean_text: bool = False
    weight_norm: bool = False
    keep_best: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    def model_config(self, vocab_size: int, frame_dim: int, num_classes: int = 0) -> ModelConfig:
        return ModelConfig(
            task=self.task,
            vocab_size=vocab_size,
            frame_dim=frame_dim,
            hidden=self.hidden_d,
            embed_dim=self.embed_dim,
            attn_dim=self.attn_dim,
            n_segments=self.n_segments,
            n_frames=self.n_frames,
            num_classes=num_classes,
            text_attention=self.text_attention,
            mean_text=self.mean_text,
            dropout=self.dropout_p,
            weight_norm=self.weight_norm,
            seed=self.seed,
        )


# ----------------------------------------------------------------- adamax


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    u: dict[str, np.ndarray] = field(default_factory=dict)


def adamax_step(state: OptimizerState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    """In-place Adamax update of ``params`` (arrays keyed by path)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    step_size = state.lr / (1.0 - b1**state.step)
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        m = state.m.get(name)
        u = state.u.get(name)
        if m is None:
            m = np.zeros_like(theta)
            u = np.zeros_like(theta)
        m = b1 * m + (1.0 - b1) * g
        u = np.maximum(b2 * u, np.abs(g))
        state.m[name] = m
        state.u[name] = u
        theta -= step_size * m / (u + state.eps)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    s = max_norm / norm
    return {k: g * s for k, g in grads.items()}


# ------------------------------------------------------------------ loops


@dataclass
class EpochReport:
    epoch: int
    split: str
    loss: float
    metric: float
    metric_name: str
    extra: dict = field(default_factory=dict)

    def record(self) -> dict:
        rec = {"epoch": self.epoch, "split": self.split, "loss": self.loss, self.metric_name: self.metric}
        rec.update(self.extra)
        return rec


def _batches(examples: Sequence[Example], order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield [examples[i] for i in order[start : start + size]]


def compute_gradients(model: StaModel, batch, rng: np.random.Generator | None, training: bool = True):
    model.zero_grad()
    result = model.forward(batch, training=training, rng=rng)
    loss = model.loss(result, batch)
    backward(loss)
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in model.parameters().items()}
    return loss.item(), grads, result


def run_epoch(
    model: StaModel,
    dataset: Sequence[Example],
    cfg: TrainConfig,
    opt: OptimizerState,
    rng: np.random.Generator,
    epoch: int = 0,
) -> EpochReport:
    """One shuffled pass with fixed-size batches (the last partial batch is
    kept).  ``rng`` drives both the shuffle and dropout."""
    if not dataset:
        raise ValueError("empty training set")
    if model.cfg.task != cfg.task:
        raise ValueError(f"model task {model.cfg.task!r} does not match config task {cfg.task!r}")
    order = rng.permutation(len(dataset))
    params = {k: p.data for k, p in model.parameters().items()}
    total = 0.0
    correct = 0.0
    for chunk in _batches(dataset, order, cfg.batch_size):
        batch = make_batch(chunk, model.cfg.n_frames, cfg.task)
        loss, grads, result = compute_gradients(model, batch, rng)
        grads = clip_global_norm(grads, cfg.clip_norm)
        adamax_step(opt, params, grads)
        total += loss * len(chunk)
        correct += _metric_sum(cfg.task, result.predictions(cfg.task), batch.answers)
    n = len(dataset)
    name = metric_name(cfg.task)
    return EpochReport(epoch, "train", total / n, correct / n, name)


def metric_name(task: str) -> str:
    return "mse" if task == "count" else "accuracy"


def _metric_sum(task: str, pred: np.ndarray, answers: np.ndarray) -> float:
    if task == "count":
        return float(((pred - answers).astype(np.float64) ** 2).sum())
    return float((pred == answers).sum())


def evaluate(model: StaModel, dataset: Sequence[Example], task: TaskSpec | str, batch_size: int = 256) -> EpochReport:
    """Accuracy for multichoice/frameqa; for count, MSE of the rounded answer
    (the MSE of the raw regression output is reported under ``raw_mse``)."""
    kind = task.kind if isinstance(task, TaskSpec) else task
    if not dataset:
        raise ValueError("empty evaluation set")
    total_loss = 0.0
    metric = 0.0
    raw_sq = 0.0
    with no_grad():
        for chunk in _batches(dataset, np.arange(len(dataset)), batch_size):
            batch = make_batch(chunk, model.cfg.n_frames, kind)
            result = model.forward(batch, training=False)
            total_loss += model.loss(result, batch).item() * len(chunk)
            metric += _metric_sum(kind, result.predictions(kind), batch.answers)
            if kind == "count":
                raw_sq += float(((result.output.data - batch.answers) ** 2).sum())
    n = len(dataset)
    extra = {"raw_mse": raw_sq / n} if kind == "count" else {}
    return EpochReport(-1, "eval", total_loss / n, metric / n, metric_name(kind), extra)


def predict(model: StaModel, dataset: Sequence[Example], batch_size: int = 256) -> np.ndarray:
    kind = model.cfg.task
    preds = []
    with no_grad():
        for chunk in _batches(dataset, np.arange(len(dataset)), batch_size):
            batch = make_batch(chunk, model.cfg.n_frames, kind)
            preds.append(model.forward(batch).predictions(kind))
    return np.concatenate(preds)


def metric_from_predictions(task: str, pred, answers) -> float:
    pred = np.asarray(pred)
    answers = np.asarray(answers)
    if pred.size == 0:
        raise ValueError("empty evaluation set")
    return _metric_sum(task, pred, answers) / pred.size


@dataclass
class TrainResult:
    model: StaModel
    history: list[dict]
    opt: OptimizerState


def train(
    model: StaModel,
    train_set: Sequence[Example],
    cfg: TrainConfig,
    test_set: Sequence[Example] | None = None,
    log: IO[str] | None = None,
    timing: IO[str] | None = None,
    eval_every: int = 1,
    stop_at_loss: float | None = None,
) -> TrainResult:
    """Run ``cfg.epochs`` epochs.  Metric records (deterministic) go to ``log``;
    wall-clock times go to the separate ``timing`` stream.

    With ``cfg.keep_best`` the parameters from the epoch with the best
    held-out metric are restored at the end (ties keep the earlier epoch).
    """
    if cfg.keep_best and not test_set:
        raise ValueError("keep_best needs a held-out set")
    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    history = []
    best_metric, best_state = None, None
    sign = 1.0 if metric_name(cfg.task) == "accuracy" else -1.0
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        rep = run_epoch(model, train_set, cfg, opt, rng, epoch)
        reports = [rep]
        if test_set and (epoch % eval_every == 0 or epoch == cfg.epochs):
            ev = evaluate(model, test_set, cfg.task)
            ev.epoch, ev.split = epoch, "test"
            reports.append(ev)
            if cfg.keep_best and (best_metric is None or sign * ev.metric > sign * best_metric):
                best_metric, best_state = ev.metric, model.state_dict()
        for r in reports:
            rec = r.record()
            history.append(rec)
            if log is not None:
                log.write(json.dumps(rec, sort_keys=True) + "\n")
        if timing is not None:
            timing.write(json.dumps({"epoch": epoch, "wall_time": time.perf_counter() - start}) + "\n")
        if stop_at_loss is not None and rep.loss < stop_at_loss:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    return TrainResult(model, history, opt)


def config_dict(cfg) -> dict:
    return asdict(cfg)


def load_json(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
