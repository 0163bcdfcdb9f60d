"""The full network: encoders, shared segment attention, fusion and one head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import AttentionOutputs, AttentionParams, segment_attention
from .dataio import Example
from .encoders import EncodedText, TokenSequence, encode_question, encode_video, pad_sequences, sample_frames, segment
from .heads import (
    FusedRepresentation,
    TaskSpec,
    cross_entropy_loss,
    frame_logits,
    fuse_modalities,
    fuse_segments,
    hinge_loss_batch,
    mse_loss,
    predict_count,
    round_count,
    score_multichoice,
)
from .layers import Embedding, LinearLayer, LstmParameters, Module, dropout_apply
from .tensor import Tensor


@dataclass
class ModelConfig:
    task: str = "multichoice"
    vocab_size: int = 32
    frame_dim: int = 2048
    hidden: int = 512
    embed_dim: int = 64
    attn_dim: int | None = None
    n_segments: int = 4
    n_frames: int = 36
    num_classes: int = 0
    text_attention: bool = True
    mean_text: bool = False
    dropout: float = 0.2
    weight_norm: bool = False
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class Batch:
    ids: list[str]
    frames: np.ndarray  # B x T x D_v, already sampled
    text: TokenSequence  # B x M, or (B*O) x M for multichoice
    answers: np.ndarray
    n_options: int = 0


@dataclass
class ForwardResult:
    output: Tensor  # scores B x O, raw counts B, or logits B x C
    attention: list[AttentionOutputs] = field(default_factory=list)

    def predictions(self, task: str) -> np.ndarray:
        if task == "count":
            return np.atleast_1d(round_count(self.output.data))
        return np.argmax(self.output.data, axis=-1)


def make_batch(examples: Sequence[Example], n_frames: int, task: str) -> Batch:
    if not examples:
        raise ValueError("empty batch")
    kinds = {ex.task for ex in examples}
    if kinds != {task}:
        raise ValueError(f"batch holds tasks {sorted(kinds)} but the model is configured for {task!r}")
    frames = np.stack([sample_frames(ex.frames, n_frames) for ex in examples])
    answers = np.array([ex.answer for ex in examples], dtype=np.int64)
    n_options = 0
    if task == "multichoice":
        counts = {len(ex.options) for ex in examples}
        if len(counts) != 1:
            raise ValueError(f"examples in one batch must share an option count, got {sorted(counts)}")
        n_options = counts.pop()
        seqs = [list(ex.question_ids) + list(opt) for ex in examples for opt in ex.options]
    else:
        seqs = [ex.question_ids for ex in examples]
    return Batch([ex.id for ex in examples], frames, pad_sequences(seqs), answers, n_options)


class StaModel(Module):
    """Segment-structured two-stream attention network with one task head."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        TaskSpec(cfg.task, num_classes=cfg.num_classes if cfg.task == "frameqa" else 0)
        rng = np.random.default_rng(cfg.seed)
        d = cfg.hidden
        d_a = cfg.attn_dim or d
        self.embedding = Embedding(cfg.vocab_size, cfg.embed_dim, rng)
        self.video_lstm = LstmParameters(cfg.frame_dim, d, rng)
        self.text_lstm = LstmParameters(cfg.embed_dim, d, rng)
        self.wv = LinearLayer(d, d_a, bias=False, rng=rng)
        self.wq = LinearLayer(d, d_a, bias=False, rng=rng)
        self.wfv = LinearLayer(d, d, rng=rng)
        self.wfq = LinearLayer(d, d, rng=rng)
        out = {"multichoice": 1, "count": 1, "frameqa": cfg.num_classes}[cfg.task]
        # zero head: an untrained model scores every option alike
        self.head = LinearLayer(d, out, weight_norm=cfg.weight_norm, rng=rng, zero_init=True)

    @property
    def attention_params(self) -> AttentionParams:
        return AttentionParams(self.wv, self.wq, self.cfg.text_attention, self.cfg.mean_text)

    def encode(self, batch: Batch, training: bool, rng: np.random.Generator | None):
        p = self.cfg.dropout
        hv = encode_video(Tensor(batch.frames), self.video_lstm)
        hv = dropout_apply(hv, p, training, rng)
        if batch.n_options:
            hv = T.repeat_rows(hv, batch.n_options)
        text = encode_question(batch.text, self.embedding, self.text_lstm)
        text = EncodedText(dropout_apply(text.states, p, training, rng), text.pad_mask)
        return hv, text

    def forward(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None) -> ForwardResult:
        hv, text = self.encode(batch, training, rng)
        outs = segment_attention(segment(hv, self.cfg.n_segments), text, self.attention_params)
        v, e = fuse_segments(outs)
        v = dropout_apply(v, self.cfg.dropout, training, rng)
        e = dropout_apply(e, self.cfg.dropout, training, rng)
        h = fuse_modalities(v, e, self.wfv, self.wfq)
        task = self.cfg.task
        if task == "multichoice":
            hh = T.reshape(h.h, (-1, batch.n_options, self.cfg.hidden))
            out = score_multichoice(hh, self.head)
        elif task == "count":
            out, _ = predict_count(h, self.head)
        else:
            out = frame_logits(h, self.head)
        return ForwardResult(out, outs)

    def loss(self, result: ForwardResult, batch: Batch) -> Tensor:
        task = self.cfg.task
        if task == "multichoice":
            return hinge_loss_batch(result.output, batch.answers)
        if task == "count":
            return mse_loss(result.output, batch.answers)
        return cross_entropy_loss(result.output, batch.answers)


def fused(model: StaModel, batch: Batch) -> FusedRepresentation:
    """Forward up to the fused representation (eval mode)."""
    hv, text = model.encode(batch, False, None)
    outs = segment_attention(segment(hv, model.cfg.n_segments), text, model.attention_params)
    v, e = fuse_segments(outs)
    return fuse_modalities(v, e, model.wfv, model.wfq)
