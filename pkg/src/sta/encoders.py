"""Frame sampling, video/text LSTM encoders and structured segmentation.

Batched tensors put the example axis first: frames ``B x T x D_v``, hidden
states ``B x T x D``, text states ``B x M x D``.  Unbatched inputs drop the
leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Embedding, LstmParameters, lstm_sequence
from .tensor import Tensor

PAD_ID = 0
UNK_ID = 1


@dataclass
class FrameFeatureSequence:
    features: Tensor
    video_id: str = ""

    @property
    def length(self) -> int:
        return self.features.shape[0]


@dataclass
class SegmentSet:
    segments: list[Tensor]

    @property
    def n(self) -> int:
        return len(self.segments)

    @property
    def k(self) -> int:
        return self.segments[0].shape[-2]


@dataclass
class TokenSequence:
    ids: np.ndarray
    pad_mask: np.ndarray  # True marks a padded position

    @classmethod
    def from_ids(cls, ids, pad_id: int = PAD_ID) -> "TokenSequence":
        ids = np.asarray(ids, dtype=np.int64)
        return cls(ids, ids == pad_id)

    def __len__(self) -> int:
        return int(self.ids.shape[-1])


@dataclass
class EncodedText:
    states: Tensor
    pad_mask: np.ndarray  # True marks a padded position

    @property
    def valid(self) -> np.ndarray:
        return ~self.pad_mask


def sample_frame_indices(t_raw: int, target: int) -> np.ndarray:
    if t_raw < 1:
        raise ValueError("cannot sample from an empty frame sequence")
    return (np.arange(target) * t_raw) // target


def sample_frames(raw: np.ndarray, target: int = 36) -> np.ndarray:
    """Pick ``target`` equally spaced frames; index ``j`` maps to
    ``floor(j * T_raw / target)`` so short videos repeat frames."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] < 1:
        raise ValueError(f"expected a non-empty T x D_v frame matrix, got shape {raw.shape}")
    return raw[sample_frame_indices(raw.shape[0], target)]


def encode_video(frames: Tensor | FrameFeatureSequence, lstm: LstmParameters) -> Tensor:
    if isinstance(frames, FrameFeatureSequence):
        frames = frames.features
    return lstm_sequence(lstm, frames)


def segment(hidden: Tensor, n: int) -> SegmentSet:
    """Split the time axis into ``n`` contiguous windows of ``K = T // n``
    states; the trailing ``T mod n`` states are dropped."""
    steps = hidden.shape[-2]
    if n < 1:
        raise ValueError(f"segment count must be >= 1, got {n}")
    if n > steps:
        raise ValueError(f"cannot split {steps} states into {n} segments")
    k = steps // n
    lead = (slice(None),) * (hidden.ndim - 2)
    return SegmentSet([hidden[lead + (slice(i * k, (i + 1) * k),)] for i in range(n)])


def pad_sequences(seqs, pad_id: int = PAD_ID) -> TokenSequence:
    """Right-pad id sequences to the longest one."""
    seqs = [list(s) for s in seqs]
    if any(len(s) == 0 for s in seqs):
        raise ValueError("token sequences must be non-empty")
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    mask = np.ones((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = False
    return TokenSequence(ids, mask)


def encode_question(q: TokenSequence, embedding: Embedding, lstm: LstmParameters) -> EncodedText:
    """Embed then run the text LSTM, keeping every state.

    Padding sits at the end of each row, so the recurrence never lets a padded
    token influence a real position.
    """
    if len(q) < 1:
        raise ValueError("question must contain at least one token")
    return EncodedText(lstm_sequence(lstm, embedding(q.ids)), q.pad_mask)


def concat_question_option(question, option) -> list[int]:
    question, option = list(question), list(option)
    if not question or not option:
        raise ValueError("question and option must both be non-empty")
    return question + option


def encode_multichoice(
    q: TokenSequence, option: TokenSequence, embedding: Embedding, lstm: LstmParameters
) -> EncodedText:
    q_ids = q.ids[~q.pad_mask]
    o_ids = option.ids[~option.pad_mask]
    merged = TokenSequence.from_ids(concat_question_option(q_ids, o_ids))
    return encode_question(merged, embedding, lstm)
