"""Dataset, vocabulary and embedding files, plus synthetic task generators.

Dataset files hold one JSON record per line::

    {"version": 1, "id": "...", "task": "count" | "multichoice" | "frameqa",
     "frames": [[...], ...] | "frames_ref": "relative/path.feat",
     "question": [ids], "options": [[ids], ...], "answer": int,
     "num_classes": int}

``options`` is present for multichoice only, ``num_classes`` for frameqa only.
A ``frames_ref`` points at a binary sidecar laid out as::

    bytes 0..7   magic b"STAFEAT\\0"
    bytes 8..11  uint32 LE format version (1)
    bytes 12..15 uint32 LE T_raw
    bytes 16..19 uint32 LE D_v
    bytes 20..   T_raw * D_v float32 LE values, row-major
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoders import PAD_ID, UNK_ID
from .heads import COUNT_MAX, COUNT_MIN, TASK_KINDS

DATASET_VERSION = 1
FEATURE_MAGIC = b"STAFEAT\x00"
FEATURE_VERSION = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class DatasetFormatError(ValueError):
    """Malformed dataset line."""


class ValidationError(ValueError):
    """A record violates an Example invariant."""


@dataclass
class Example:
    id: str
    frames: np.ndarray
    question_ids: list[int]
    task: str
    answer: int
    options: list[list[int]] | None = None
    num_classes: int | None = None

    def validate(self) -> None:
        where = f"example {self.id!r}"
        if self.task not in TASK_KINDS:
            raise ValidationError(f"{where}: unknown task {self.task!r}")
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValidationError(f"{where}: frames must be a non-empty T x D_v matrix, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValidationError(f"{where}: non-finite frame features")
        if not self.question_ids:
            raise ValidationError(f"{where}: empty question")
        if self.task == "multichoice":
            if not self.options or len(self.options) < 2:
                raise ValidationError(f"{where}: multichoice needs at least 2 options")
            if any(len(o) == 0 for o in self.options):
                raise ValidationError(f"{where}: empty option")
            if not 0 <= self.answer < len(self.options):
                raise ValidationError(f"{where}: answer {self.answer} outside {len(self.options)} options")
        elif self.task == "count":
            if not COUNT_MIN <= self.answer <= COUNT_MAX:
                raise ValidationError(f"{where}: count answer {self.answer} outside {COUNT_MIN}..{COUNT_MAX}")
        else:
            if self.num_classes is None or self.num_classes < 2:
                raise ValidationError(f"{where}: frameqa needs num_classes >= 2")
            if not 0 <= self.answer < self.num_classes:
                raise ValidationError(f"{where}: class {self.answer} outside 0..{self.num_classes - 1}")


# --------------------------------------------------------------- vocabulary


@dataclass
class Vocabulary:
    token_to_id: dict[str, int] = field(default_factory=lambda: {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID})

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def id_to_token(self) -> list[str]:
        out = [""] * len(self.token_to_id)
        for tok, i in self.token_to_id.items():
            out[i] = tok
        return out

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        table = self.id_to_token
        return [table[i] for i in ids]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(f"{tok}\t{self.token_to_id[tok]}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        mapping = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    tok, idx = line.rsplit("\t", 1)
                    mapping[tok] = int(idx)
                except ValueError as err:
                    raise DatasetFormatError(f"{path}:{lineno}: expected 'token<TAB>id'") from err
        if mapping.get(PAD_TOKEN) != PAD_ID or mapping.get(UNK_TOKEN) != UNK_ID:
            raise DatasetFormatError(f"{path}: reserved ids missing")
        if sorted(mapping.values()) != list(range(len(mapping))):
            raise DatasetFormatError(f"{path}: ids are not a contiguous range")
        return cls(mapping)


def build_vocabulary(corpus: Iterable[Sequence[str]]) -> Vocabulary:
    """Tokens sorted by descending frequency, ties lexicographic, after the
    reserved PAD and UNK entries."""
    counts = Counter(tok for seq in corpus for tok in seq)
    counts.pop(PAD_TOKEN, None)
    counts.pop(UNK_TOKEN, None)
    vocab = Vocabulary()
    for tok, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        vocab.token_to_id[tok] = len(vocab.token_to_id)
    return vocab


def build_answer_vocabulary(answers: Iterable[str], cap: int | None = None) -> dict[str, int]:
    """Map open-ended answers to class ids, most frequent first (ties
    lexicographic), keeping at most ``cap`` classes."""
    counts = Counter(answers)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if cap is not None:
        ranked = ranked[:cap]
    return {a: i for i, (a, _) in enumerate(ranked)}


# ---------------------------------------------------------------- features


def write_features(path: str | Path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got {frames.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, *frames.shape))
        fh.write(frames.tobytes())


def read_features(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != FEATURE_MAGIC:
        raise DatasetFormatError(f"{path}: bad feature-file magic")
    version, t_raw, d_v = struct.unpack("<III", raw[8:20])
    if version != FEATURE_VERSION:
        raise DatasetFormatError(f"{path}: unsupported feature version {version}")
    expected = 20 + 4 * t_raw * d_v
    if len(raw) != expected:
        raise DatasetFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw[20:], dtype="<f4").reshape(t_raw, d_v).astype(np.float64)


# ----------------------------------------------------------------- dataset


def example_to_record(ex: Example, frames_ref: str | None = None) -> dict:
    rec: dict = {"version": DATASET_VERSION, "id": ex.id, "task": ex.task}
    if frames_ref is not None:
        rec["frames_ref"] = frames_ref
    else:
        rec["frames"] = ex.frames.tolist()
    rec["question"] = [int(i) for i in ex.question_ids]
    if ex.options is not None:
        rec["options"] = [[int(i) for i in o] for o in ex.options]
    rec["answer"] = int(ex.answer)
    if ex.num_classes is not None:
        rec["num_classes"] = int(ex.num_classes)
    return rec


def save_dataset(path: str | Path, examples: Iterable[Example], sidecar_dir: str | Path | None = None) -> None:
    """Write examples as JSON lines.  With ``sidecar_dir``, frame matrices go to
    float32 binary files referenced relative to the dataset file."""
    path = Path(path)
    if sidecar_dir is not None:
        sidecar_dir = Path(sidecar_dir)
        sidecar_dir.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            ref = None
            if sidecar_dir is not None:
                feat = sidecar_dir / f"{ex.id}.feat"
                write_features(feat, ex.frames)
                ref = str(feat.resolve().relative_to(path.resolve().parent))
            fh.write(json.dumps(example_to_record(ex, ref)) + "\n")


def record_to_example(rec: dict, base: Path) -> Example:
    if rec.get("version") != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported schema version {rec.get('version')!r}")
    for key in ("id", "task", "question", "answer"):
        if key not in rec:
            raise DatasetFormatError(f"missing field {key!r}")
    if "frames" in rec:
        frames = np.asarray(rec["frames"], dtype=np.float64)
    elif "frames_ref" in rec:
        frames = read_features(base / rec["frames_ref"])
    else:
        raise DatasetFormatError("record needs 'frames' or 'frames_ref'")
    return Example(
        id=str(rec["id"]),
        frames=frames,
        question_ids=[int(i) for i in rec["question"]],
        task=rec["task"],
        answer=int(rec["answer"]),
        options=[[int(i) for i in o] for o in rec["options"]] if rec.get("options") is not None else None,
        num_classes=int(rec["num_classes"]) if rec.get("num_classes") is not None else None,
    )


def load_dataset(path: str | Path) -> list[Example]:
    path = Path(path)
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise DatasetFormatError("record is not an object")
                ex = record_to_example(rec, path.parent)
            except (json.JSONDecodeError, DatasetFormatError, TypeError, ValueError) as err:
                if isinstance(err, ValidationError):
                    raise
                raise DatasetFormatError(f"{path}:{lineno}: {err}") from err
            ex.validate()
            examples.append(ex)
    return examples


# -------------------------------------------------------------- embeddings


def load_embeddings(
    path: str | Path, vocab: Vocabulary, dim: int = 300, rng: np.random.Generator | int | None = 0
) -> np.ndarray:
    """Fill a ``|V| x d_e`` table from a whitespace-separated text file.
    Tokens absent from the file draw uniform(-0.1, 0.1); the PAD row is zero."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    found: dict[int, np.ndarray] = {}
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            tok, vals = parts[0], parts[1:]
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DatasetFormatError(f"{path}:{lineno}: vector width {len(vals)} != {width}")
            if tok in vocab.token_to_id:
                try:
                    found[vocab.token_to_id[tok]] = np.array([float(v) for v in vals])
                except ValueError as err:
                    raise DatasetFormatError(f"{path}:{lineno}: {err}") from err
    dim = width if width is not None else dim
    table = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    for i, vec in found.items():
        table[i] = vec
    table[PAD_ID] = 0.0
    return table


# --------------------------------------------------------------- synthetic

SYNTHETIC_KINDS = ("count", "action", "trans", "frameqa")
SYNTHETIC_TASK = {"count": "count", "action": "multichoice", "trans": "multichoice", "frameqa": "frameqa"}


@dataclass
class SyntheticConfig:
    t_raw: int = 36
    d_v: int = 32
    motif_count: int = 6
    noise_sigma: float = 0.1
    seed: int = 0
    motif_seed: int = 0
    num_options: int = 5
    action_span: tuple[int, int] = (2, 8)


def motif_name(k: int) -> str:
    return f"motif{k}"


def _templates(kind: str, motif_count: int) -> list[list[str]]:
    motifs = [motif_name(k) for k in range(motif_count)]
    if kind == "count":
        return [["how", "many", "times", "does", "the", m, "happen"] for m in motifs]
    if kind == "action":
        return [["what", "does", "the", "video", "show"]] + [[m] for m in motifs]
    if kind == "trans":
        return [["what", "does", "the", "video", "show", w] for w in ("first", "last")] + [[m] for m in motifs]
    return [["what", "appears", "in", "the", "flash", "frame"]]


def synthetic_vocabulary(motif_count: int) -> Vocabulary:
    """Deterministic vocabulary covering every synthetic template."""
    corpus = [seq for kind in SYNTHETIC_KINDS for seq in _templates(kind, motif_count)]
    return build_vocabulary(corpus)


def make_motifs(d_v: int, motif_count: int, rng: np.random.Generator) -> np.ndarray:
    """``motif_count`` orthonormal unit vectors in ``R^d_v``."""
    q, _ = np.linalg.qr(rng.normal(size=(d_v, motif_count)))
    return q.T.copy()


def generate_synthetic(kind: str, n_examples: int, cfg: SyntheticConfig | None = None) -> list[Example]:
    """Videos of Gaussian noise with unit motif vectors injected at known frames.

    Motif vectors depend only on ``cfg.motif_seed`` so that splits generated
    with different ``cfg.seed`` values share the same "actions".

    ``count``: one motif at ``r ~ U{0..10}`` distinct frames, answer ``r``.
    ``action``: one motif over a contiguous run; the options name motifs.
    ``trans``: two motifs, one in each half; asks for the first or last.
    ``frameqa``: a single frame carries a class motif; answer is its class.
    """
    cfg = cfg or SyntheticConfig()
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unknown synthetic task {kind!r}")
    if cfg.motif_count < 2 or cfg.d_v < cfg.motif_count:
        raise ValueError("need motif_count >= 2 and d_v >= motif_count")
    if kind == "count" and cfg.t_raw < COUNT_MAX:
        raise ValueError(f"cannot place up to {COUNT_MAX} motifs in {cfg.t_raw} frames")
    if kind in ("action", "trans") and not 2 <= cfg.num_options <= cfg.motif_count:
        raise ValueError("num_options must lie in 2..motif_count")
    lo, hi = cfg.action_span
    if kind == "action" and hi > cfg.t_raw:
        raise ValueError(f"action span {hi} exceeds {cfg.t_raw} frames")
    if kind == "trans" and hi > cfg.t_raw // 2:
        raise ValueError(f"action span {hi} exceeds half of {cfg.t_raw} frames")

    motifs = make_motifs(cfg.d_v, cfg.motif_count, np.random.default_rng(cfg.motif_seed))
    rng = np.random.default_rng(cfg.seed)
    vocab = synthetic_vocabulary(cfg.motif_count)
    motif_ids = [vocab.token_to_id[motif_name(k)] for k in range(cfg.motif_count)]
    out = []
    for i in range(n_examples):
        frames = rng.normal(0.0, cfg.noise_sigma, size=(cfg.t_raw, cfg.d_v)) if cfg.noise_sigma > 0 else np.zeros((cfg.t_raw, cfg.d_v))
        ex_id = f"{kind}-{cfg.seed}-{i:06d}"
        if kind == "count":
            m = int(rng.integers(cfg.motif_count))
            r = int(rng.integers(COUNT_MIN, COUNT_MAX + 1))
            where = rng.choice(cfg.t_raw, size=r, replace=False)
            frames[where] += motifs[m]
            q = vocab.encode(_templates("count", cfg.motif_count)[m])
            out.append(Example(ex_id, frames, q, "count", r))
        elif kind == "action":
            m = int(rng.integers(cfg.motif_count))
            span = int(rng.integers(lo, hi + 1))
            start = int(rng.integers(0, cfg.t_raw - span + 1))
            frames[start : start + span] += motifs[m]
            others = [k for k in range(cfg.motif_count) if k != m]
            choice = [m] + list(rng.choice(others, size=cfg.num_options - 1, replace=False))
            order = rng.permutation(cfg.num_options)
            options = [[motif_ids[choice[j]]] for j in order]
            answer = int(np.flatnonzero(order == 0)[0])
            q = vocab.encode(_templates("action", cfg.motif_count)[0])
            out.append(Example(ex_id, frames, q, "multichoice", answer, options))
        elif kind == "trans":
            a, b = (int(x) for x in rng.choice(cfg.motif_count, size=2, replace=False))
            half = cfg.t_raw // 2
            for m, base, width in ((a, 0, half), (b, half, cfg.t_raw - half)):
                span = int(rng.integers(lo, hi + 1))
                start = base + int(rng.integers(0, width - span + 1))
                frames[start : start + span] += motifs[m]
            ask_last = int(rng.integers(2))
            target = b if ask_last else a
            others = [k for k in range(cfg.motif_count) if k not in (a, b)]
            n_fill = cfg.num_options - 2
            choice = [target, a if ask_last else b] + list(rng.choice(others, size=n_fill, replace=False))
            order = rng.permutation(cfg.num_options)
            options = [[motif_ids[choice[j]]] for j in order]
            answer = int(np.flatnonzero(order == 0)[0])
            q = vocab.encode(_templates("trans", cfg.motif_count)[ask_last])
            out.append(Example(ex_id, frames, q, "multichoice", answer, options))
        else:
            c = int(rng.integers(cfg.motif_count))
            frames[int(rng.integers(cfg.t_raw))] += motifs[c]
            q = vocab.encode(_templates("frameqa", cfg.motif_count)[0])
            out.append(Example(ex_id, frames, q, "frameqa", c, num_classes=cfg.motif_count))
    return out
