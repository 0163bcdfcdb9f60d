"""Finite-difference check of the whole network, one run per answer head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Example
from .model import ModelConfig, StaModel, make_batch
from .tensor import GradCheckReport, grad_check


@dataclass(frozen=True)
class Dims:
    n_segments: int
    n_frames: int
    hidden: int
    attn_dim: int
    text_len: int
    frame_dim: int
    embed_dim: int = 8
    vocab_size: int = 10
    batch: int = 2
    num_options: int = 3
    num_classes: int = 4


DIMS = {
    "tiny": Dims(n_segments=2, n_frames=8, hidden=16, attn_dim=16, text_len=5, frame_dim=12),
    "micro": Dims(n_segments=2, n_frames=4, hidden=4, attn_dim=3, text_len=3, frame_dim=3, embed_dim=3, vocab_size=6),
}


def randomize(model: StaModel, rng: np.random.Generator, scale: float = 0.5) -> None:
    """Overwrite every parameter with uniform(-scale, scale) draws so no
    gradient path is trivially zero (the head starts at zero otherwise)."""
    for p in model.parameters().values():
        p.data = rng.uniform(-scale, scale, size=p.shape)


def tiny_examples(task: str, dims: Dims, rng: np.random.Generator) -> list[Example]:
    out = []
    for i in range(dims.batch):
        frames = rng.normal(size=(dims.n_frames, dims.frame_dim))
        ids = lambda n: [int(x) for x in rng.integers(2, dims.vocab_size, size=n)]  # noqa: E731
        if task == "multichoice":
            q_len = max(1, dims.text_len - 2)
            # the first example's options are one token shorter to exercise padding
            opt_len = dims.text_len - q_len - (1 if i == 0 and dims.text_len - q_len > 1 else 0)
            opts = [ids(opt_len) for _ in range(dims.num_options)]
            out.append(Example(f"g{i}", frames, ids(q_len), task, int(rng.integers(dims.num_options)), opts))
        elif task == "count":
            out.append(Example(f"g{i}", frames, ids(dims.text_len - i % 2), task, int(rng.integers(11))))
        else:
            out.append(
                Example(f"g{i}", frames, ids(dims.text_len - i % 2), task, int(rng.integers(dims.num_classes)), num_classes=dims.num_classes)
            )
    return out


def check_model(task: str, dims: Dims | str = "tiny", seed: int = 0, h: float = 1e-5, tol: float = 1e-3) -> GradCheckReport:
    """Autodiff vs central differences for every parameter of a randomly
    initialized model on a small random batch (dropout off)."""
    dims = DIMS[dims] if isinstance(dims, str) else dims
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(
        task=task,
        vocab_size=dims.vocab_size,
        frame_dim=dims.frame_dim,
        hidden=dims.hidden,
        embed_dim=dims.embed_dim,
        attn_dim=dims.attn_dim,
        n_segments=dims.n_segments,
        n_frames=dims.n_frames,
        num_classes=dims.num_classes if task == "frameqa" else 0,
        dropout=0.0,
        seed=seed,
    )
    model = StaModel(cfg)
    randomize(model, rng)
    batch = make_batch(tiny_examples(task, dims, rng), dims.n_frames, task)

    def loss():
        return model.loss(model.forward(batch), batch)

    params = model.parameters()
    return grad_check(loss, list(params.values()), h=h, tol=tol, names=list(params))
