"""Segment/modality fusion and the three answer decoders with their losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import AttentionOutputs
from .layers import LinearLayer, linear_forward
from .tensor import DimensionError, Tensor

COUNT_MIN = 0
COUNT_MAX = 10
TASK_KINDS = ("multichoice", "count", "frameqa")


@dataclass
class TaskSpec:
    kind: str
    num_options: int = 5
    num_classes: int = 0
    count_range: tuple[int, int] = (COUNT_MIN, COUNT_MAX)

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        if tuple(self.count_range) != (COUNT_MIN, COUNT_MAX):
            raise ValueError("count range is fixed to 0..10")
        if self.kind == "multichoice" and self.num_options < 2:
            raise ValueError("multichoice needs at least 2 options")
        if self.kind == "frameqa" and self.num_classes < 2:
            raise ValueError("frameqa needs at least 2 classes")


@dataclass
class FusedRepresentation:
    h: Tensor


def fuse_segments(outs: Sequence[AttentionOutputs]) -> tuple[Tensor, Tensor]:
    if not outs:
        raise ValueError("no segment outputs to fuse")
    v, e = outs[0].v_att, outs[0].e_att
    for o in outs[1:]:
        v = T.add(v, o.v_att)
        e = T.add(e, o.e_att)
    return v, e


def fuse_modalities(v: Tensor, e: Tensor, wfv: LinearLayer, wfq: LinearLayer) -> FusedRepresentation:
    """``relu(wfv v + b_v) * relu(wfq e + b_q)``; the biases live in the layers."""
    if wfv.out_dim != wfq.out_dim:
        raise DimensionError(f"fusion widths differ: {wfv.out_dim} vs {wfq.out_dim}")
    return FusedRepresentation(T.mul(T.relu(linear_forward(wfv, v)), T.relu(linear_forward(wfq, e))))


def argmax_first(x: np.ndarray, axis: int = -1) -> np.ndarray:
    # np.argmax already returns the lowest index among ties
    return np.argmax(x, axis=axis)


# ------------------------------------------------------------- multichoice


def score_multichoice(h_per_option: Sequence[FusedRepresentation] | Tensor, head: LinearLayer) -> Tensor:
    """Score each candidate; accepts a list of per-option representations or a
    stacked ``(..., O, D)`` tensor."""
    if isinstance(h_per_option, Tensor):
        h = h_per_option
    else:
        if len(h_per_option) < 2:
            raise ValueError("multichoice scoring needs at least 2 options")
        h = T.stack([r.h for r in h_per_option], axis=-2)
    if h.shape[-2] < 2:
        raise ValueError("multichoice scoring needs at least 2 options")
    s = linear_forward(head, h)
    return T.reshape(s, s.shape[:-1])


def predict_option(scores) -> np.ndarray | int:
    data = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    out = argmax_first(data, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def hinge_loss(s_pos: Tensor, s_negs: Sequence[Tensor]) -> Tensor:
    """Sum over negatives of ``max(0, 1 + s_n - s_p)``."""
    if not s_negs:
        raise ValueError("hinge loss needs at least one negative")
    total = None
    for s_n in s_negs:
        term = T.relu(T.add_scalar(T.sub(s_n, s_pos), 1.0))
        total = term if total is None else T.add(total, term)
    return total


def hinge_loss_batch(scores: Tensor, answers: np.ndarray) -> Tensor:
    """Mean over examples of the summed pairwise hinge for ``B x O`` scores."""
    answers = np.asarray(answers, dtype=np.int64)
    b, o = scores.shape
    pos = T.expand(T.take(scores, answers, axis=1), axis=1, n=o)
    margins = T.relu(T.add_scalar(T.sub(scores, pos), 1.0))
    negatives = np.ones((b, o))
    negatives[np.arange(b), answers] = 0.0
    return T.scale(T.sum_all(T.mul_const(margins, negatives)), 1.0 / b)


# ------------------------------------------------------------------- count


def round_count(raw) -> np.ndarray | int:
    """Round half up, then clamp into 0..10."""
    raw = np.asarray(raw, dtype=np.float64)
    out = np.clip(np.floor(np.nan_to_num(raw, nan=0.0) + 0.5), COUNT_MIN, COUNT_MAX).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def predict_count(h: FusedRepresentation, head: LinearLayer) -> tuple[Tensor, np.ndarray | int]:
    raw = linear_forward(head, h.h)
    raw = T.reshape(raw, raw.shape[:-1])
    return raw, round_count(raw.data)


def _check_count_targets(target) -> np.ndarray:
    target = np.asarray(target)
    if np.any(target < COUNT_MIN) or np.any(target > COUNT_MAX):
        raise ValueError(f"count targets must lie in {COUNT_MIN}..{COUNT_MAX}, got {target}")
    return target.astype(np.float64)


def mse_loss(raw: Tensor, target) -> Tensor:
    """Squared error on the unrounded prediction; batches average."""
    target = _check_count_targets(target)
    if target.shape != raw.shape:
        raise DimensionError(f"mse: prediction {raw.shape} vs target {target.shape}")
    return T.mean_all(T.square(T.sub(raw, Tensor(target))))


# ----------------------------------------------------------------- frameqa


def frame_logits(h: FusedRepresentation, head: LinearLayer) -> Tensor:
    return linear_forward(head, h.h)


def classify_frame(h: FusedRepresentation, head: LinearLayer) -> Tensor:
    if head.out_dim < 2:
        raise ValueError("frameqa head needs at least 2 classes")
    return T.softmax(frame_logits(h, head), axis=-1)


def cross_entropy_loss(logits: Tensor, target) -> Tensor:
    """``-log softmax(logits)[target]`` via log-sum-exp; batches average."""
    target = np.asarray(target, dtype=np.int64)
    c = logits.shape[-1]
    if np.any(target < 0) or np.any(target >= c):
        raise ValueError(f"class target out of range 0..{c - 1}")
    logp = T.log_softmax(logits, axis=-1)
    if logits.ndim == 1:
        return T.scale(logp[int(target)], -1.0)
    return T.scale(T.mean_all(T.take(logp, target, axis=-1)), -1.0)
