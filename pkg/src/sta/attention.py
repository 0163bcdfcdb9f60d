"""Two-stream attention between one video segment and the encoded text.

The affinity between frame ``k`` and word ``m`` is the inner product of their
projections.  Visual weights come from the per-frame max over unmasked words
followed by a softmax over frames; text weights are a per-frame masked
softmax over words.  One set of projections serves every segment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from . import tensor as T
from .encoders import EncodedText, SegmentSet
from .layers import LinearLayer, linear_forward
from .tensor import DimensionError, Tensor


@dataclass
class AffinityMatrix:
    values: Tensor  # K x M, or B x K x M
    pad_mask: np.ndarray  # M, or B x M; True marks padding

    def valid_mask(self) -> np.ndarray:
        """Boolean mask broadcast to the shape of ``values``; True = usable."""
        valid = ~np.asarray(self.pad_mask, dtype=bool)
        valid = np.expand_dims(valid, -2)
        return np.broadcast_to(valid, self.values.shape)


@dataclass
class AttentionOutputs:
    v_att: Tensor
    e_att: Tensor
    c: Tensor
    B: Tensor


@dataclass
class AttentionParams:
    wv: LinearLayer
    wq: LinearLayer
    text_attention: bool = True
    mean_text: bool = False


def compute_affinity(ve: Tensor, e: EncodedText, wv: LinearLayer, wq: LinearLayer) -> AffinityMatrix:
    if ve.shape[-1] != e.states.shape[-1] or ve.ndim != e.states.ndim:
        raise DimensionError(f"affinity: segment {ve.shape} vs text {e.states.shape}")
    pv = linear_forward(wv, ve)
    pq = linear_forward(wq, e.states)
    return AffinityMatrix(T.matmul(pv, T.transpose(pq)), e.pad_mask)


def visual_attention_weights(a: AffinityMatrix) -> Tensor:
    scores = T.reduce_max(a.values, axis=-1, mask=a.valid_mask())
    return T.softmax(scores, axis=-1)


def text_attention_weights(a: AffinityMatrix) -> Tensor:
    return T.softmax(a.values, axis=-1, mask=a.valid_mask())


def uniform_text_weights(a: AffinityMatrix) -> Tensor:
    """Replacement for text attention in the visual-only variant: every frame
    spreads its weight evenly over the unmasked words."""
    valid = a.valid_mask().astype(np.float64)
    return Tensor(valid / valid.sum(axis=-1, keepdims=True))


def attend_video(c: Tensor, ve: Tensor) -> Tensor:
    if c.shape[-1] != ve.shape[-2]:
        raise DimensionError(f"attend_video: {c.shape[-1]} weights for {ve.shape[-2]} states")
    d = ve.shape[-1]
    if ve.ndim == 2:
        return T.reshape(T.matmul(T.reshape(c, (1, -1)), ve), (d,))
    b = ve.shape[0]
    return T.reshape(T.matmul(T.reshape(c, (b, 1, -1)), ve), (b, d))


def attend_text(b: Tensor, e: EncodedText, mean: bool = False) -> Tensor:
    """Weighted word states per frame, summed over frames (total mass ``K``).
    ``mean=True`` divides by ``K`` instead."""
    if b.shape[-1] != e.states.shape[-2] or b.ndim != e.states.ndim:
        raise DimensionError(f"attend_text: weights {b.shape} vs states {e.states.shape}")
    out = T.reduce_sum(T.matmul(b, e.states), axis=-2)
    if mean:
        out = T.scale(out, 1.0 / b.shape[-2])
    return out


def attend_segment(ve: Tensor, e: EncodedText, params: AttentionParams) -> AttentionOutputs:
    a = compute_affinity(ve, e, params.wv, params.wq)
    c = visual_attention_weights(a)
    b = text_attention_weights(a) if params.text_attention else uniform_text_weights(a)
    return AttentionOutputs(attend_video(c, ve), attend_text(b, e, params.mean_text), c, b)


def segment_attention(segs: SegmentSet, e: EncodedText, params: AttentionParams) -> list[AttentionOutputs]:
    """Run the shared attention block over every segment in order."""
    return [attend_segment(ve, e, params) for ve in segs.segments]


def write_attention_dump(
    fh: IO[str], example_id: str, outs: Sequence[AttentionOutputs], row: int | None = None, extra: dict | None = None
) -> None:
    """Append one JSON line holding the visual (``c``) and text (``B``) weights
    of every segment.  ``row`` selects one example out of a batch."""

    def pick(t: Tensor):
        data = t.data if row is None else t.data[row]
        return data.tolist()

    record = {
        "id": example_id,
        "segments": [{"c": pick(o.c), "B": pick(o.B)} for o in outs],
    }
    if extra:
        record.update(extra)
    fh.write(json.dumps(record) + "\n")
