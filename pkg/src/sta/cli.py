"""Command-line entry point: gen-data, train, eval, gradcheck, dump-attention.

Configuration precedence is defaults < ``--config`` JSON file < flags.  The
environment variables ``STA_OUTPUT_DIR`` and ``STA_SEED`` override the output
directory and seed defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import dataio
from .attention import write_attention_dump
from .gradcheck import DIMS, check_model
from .layers import load_checkpoint, save_checkpoint
from .model import ModelConfig, StaModel, make_batch
from .tensor import no_grad
from .training import TrainConfig, evaluate, train


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    train_data: str | None = None
    test_data: str | None = None
    vocab: str | None = None
    embeddings: str | None = None
    checkpoint: str | None = None
    out_dir: str = "runs/default"

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("train"))
        return d


TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}
PATH_FIELDS = {"train_data", "test_data", "vocab", "embeddings", "checkpoint", "out_dir"}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if os.environ.get("STA_OUTPUT_DIR"):
        values["out_dir"] = os.environ["STA_OUTPUT_DIR"]
    if os.environ.get("STA_SEED"):
        values["seed"] = int(os.environ["STA_SEED"])
    if getattr(args, "config", None):
        try:
            file_values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise CliError(f"cannot read config {args.config}: {err}") from err
        unknown = set(file_values) - TRAIN_FIELDS - PATH_FIELDS
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for key in TRAIN_FIELDS | PATH_FIELDS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    try:
        tc = TrainConfig(**{k: v for k, v in values.items() if k in TRAIN_FIELDS})
    except (TypeError, ValueError) as err:
        raise CliError(f"invalid config: {err}") from err
    return RunConfig(tc, **{k: v for k, v in values.items() if k in PATH_FIELDS})


def _load(path: str | None, what: str) -> list[dataio.Example]:
    if not path:
        raise CliError(f"missing {what} path")
    if not Path(path).exists():
        raise CliError(f"{what} file not found: {path}")
    return dataio.load_dataset(path)


def _task_of(examples: list[dataio.Example]) -> str:
    kinds = {ex.task for ex in examples}
    if len(kinds) != 1:
        raise CliError(f"dataset mixes tasks {sorted(kinds)}")
    return kinds.pop()


def _vocab_size(rc: RunConfig, examples: list[dataio.Example]) -> tuple[int, dataio.Vocabulary | None]:
    if rc.vocab:
        vocab = dataio.Vocabulary.load(rc.vocab)
        return len(vocab), vocab
    top = max(max(ex.question_ids + [i for o in (ex.options or []) for i in o]) for ex in examples)
    return top + 1, None


def _num_classes(examples: list[dataio.Example]) -> int:
    return max((ex.num_classes or 0) for ex in examples)


def _load_model(path: str) -> StaModel:
    if not Path(path).exists():
        raise CliError(f"checkpoint not found: {path}")
    params, meta = load_checkpoint(path)
    model = StaModel(ModelConfig.from_dict(meta["model"]))
    model.load_state_dict(params)
    return model


def _untrained_model(rc: RunConfig, examples: list[dataio.Example]) -> StaModel:
    vocab_size, _ = _vocab_size(rc, examples)
    cfg = rc.train.model_config(vocab_size, examples[0].frames.shape[1], _num_classes(examples))
    return StaModel(cfg)


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    cfg = dataio.SyntheticConfig(
        t_raw=args.t_raw,
        d_v=args.d_v,
        motif_count=args.motif_count,
        noise_sigma=args.noise_sigma,
        seed=args.seed if args.seed is not None else int(os.environ.get("STA_SEED", 0)),
        motif_seed=args.motif_seed,
        num_options=args.num_options,
    )
    examples = dataio.generate_synthetic(args.task, args.n, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataio.save_dataset(out, examples, args.sidecar_dir)
    vocab_path = Path(args.vocab_out) if args.vocab_out else out.with_suffix(".vocab.tsv")
    dataio.synthetic_vocabulary(cfg.motif_count).save(vocab_path)
    print(f"wrote {len(examples)} {args.task} examples to {out} (vocabulary {vocab_path})")
    return 0


def cmd_train(args) -> int:
    rc = resolve_config(args)
    print("config: " + json.dumps(rc.to_dict(), sort_keys=True), file=sys.stderr)
    train_set = _load(rc.train_data, "training data")
    if not train_set:
        raise CliError("training set is empty")
    task = _task_of(train_set)
    if task != rc.train.task:
        if args.task is not None or (args.config and "task" in json.loads(Path(args.config).read_text())):
            raise CliError(f"dataset task {task!r} does not match configured task {rc.train.task!r}")
        rc.train.task = task
    test_set = _load(rc.test_data, "test data") if rc.test_data else None
    vocab_size, vocab = _vocab_size(rc, train_set)
    mcfg = rc.train.model_config(vocab_size, train_set[0].frames.shape[1], _num_classes(train_set))
    if rc.embeddings:
        if vocab is None:
            raise CliError("--embeddings requires --vocab")
        table = dataio.load_embeddings(rc.embeddings, vocab, dim=mcfg.embed_dim, rng=rc.train.seed)
        mcfg.embed_dim = table.shape[1]
        rc.train.embed_dim = table.shape[1]
    model = StaModel(mcfg)
    if rc.embeddings:
        model.embedding.table.data = table

    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(rc.to_dict(), indent=2, sort_keys=True) + "\n")
    meta = {"model": mcfg.to_dict()}

    class Tee:
        def __init__(self, fh):
            self.fh = fh

        def write(self, line):
            self.fh.write(line)
            self.fh.flush()
            rec = json.loads(line)
            metric = "mse" if "mse" in rec else "accuracy"
            print(f"epoch {rec['epoch']:3d} {rec['split']:5s} loss {rec['loss']:.6f} {metric} {rec[metric]:.4f}")

    with open(out / "metrics.jsonl", "w") as log, open(out / "timing.jsonl", "w") as timing:
        train(model, train_set, rc.train, test_set, log=Tee(log), timing=timing)
    save_checkpoint(out / "checkpoint.bin", model.state_dict(), meta)
    print(f"checkpoint written to {out / 'checkpoint.bin'}")
    return 0


def cmd_eval(args) -> int:
    rc = resolve_config(args)
    data = _load(args.data, "evaluation data")
    if not data:
        raise CliError("evaluation set is empty")
    task = _task_of(data)
    if args.checkpoint:
        model = _load_model(args.checkpoint)
    else:
        rc.train.task = task
        model = _untrained_model(rc, data)
    if model.cfg.task != task:
        raise CliError(f"checkpoint task {model.cfg.task!r} does not match data task {task!r}")
    rep = evaluate(model, data, task)
    rec = {"split": "eval", "n": len(data), "loss": rep.loss, rep.metric_name: rep.metric, **rep.extra}
    print(f"{rep.metric_name}: {rep.metric:.4f} over {len(data)} examples")
    print(json.dumps(rec, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else int(os.environ.get("STA_SEED", 0))
    worst = 0.0
    ok = True
    start = time.perf_counter()
    for task in args.tasks:
        rep = check_model(task, args.dims, seed=seed, tol=args.tol)
        worst = max(worst, rep.max_rel_error)
        ok &= rep.passed
        print(f"{task:12s} {rep}")
        for name, idx, g_ad, g_fd, err in rep.failures[:5]:
            print(f"  {name}{list(idx)} autodiff {g_ad:.6e} finite-diff {g_fd:.6e} rel-err {err:.3e}")
    print(f"worst rel-err: {worst:.3e} ({time.perf_counter() - start:.1f}s)")
    return 0 if ok else 1


def cmd_dump_attention(args) -> int:
    model = _load_model(args.checkpoint)
    data = _load(args.data, "data")
    if args.limit is not None:
        data = data[: args.limit]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with no_grad(), open(out, "w") as fh:
        for start in range(0, len(data), 64):
            chunk = data[start : start + 64]
            batch = make_batch(chunk, model.cfg.n_frames, model.cfg.task)
            result = model.forward(batch)
            preds = result.predictions(model.cfg.task)
            per = batch.n_options or 1
            for i, ex in enumerate(chunk):
                for j in range(per):
                    extra = {"prediction": int(preds[i]), "answer": int(ex.answer)}
                    if batch.n_options:
                        extra["option"] = j
                    write_attention_dump(fh, ex.id, result.attention, row=i * per + j, extra=extra)
    print(f"attention weights for {len(data)} examples written to {out}")
    return 0


# ------------------------------------------------------------------ parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of config values")
    p.add_argument("--task", choices=["multichoice", "count", "frameqa"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--dropout", dest="dropout_p", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--segments", dest="n_segments", type=int)
    p.add_argument("--hidden", dest="hidden_d", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--attn-dim", dest="attn_dim", type=int)
    p.add_argument("--frames", dest="n_frames", type=int)
    p.add_argument("--no-text-attention", dest="text_attention", action="store_const", const=False)
    p.add_argument("--mean-text", dest="mean_text", action="store_const", const=True)
    p.add_argument("--weight-norm", dest="weight_norm", action="store_const", const=True)
    p.add_argument("--keep-best", dest="keep_best", action="store_const", const=True, help="restore the best held-out epoch")
    p.add_argument("--vocab")
    p.add_argument("--out", dest="out_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sta", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--task", required=True, choices=dataio.SYNTHETIC_KINDS)
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--out", required=True)
    g.add_argument("--t-raw", type=int, default=36)
    g.add_argument("--d-v", type=int, default=32)
    g.add_argument("--motif-count", type=int, default=6)
    g.add_argument("--noise-sigma", type=float, default=0.1)
    g.add_argument("--seed", type=int)
    g.add_argument("--motif-seed", type=int, default=0)
    g.add_argument("--num-options", type=int, default=5)
    g.add_argument("--sidecar-dir", help="store frames as binary sidecar files here")
    g.add_argument("--vocab-out")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    _add_train_flags(t)
    t.add_argument("--train", dest="train_data")
    t.add_argument("--test", dest="test_data")
    t.add_argument("--embeddings")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint (or an untrained model)")
    _add_train_flags(e)
    e.add_argument("--checkpoint")
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    c.add_argument("--seed", type=int)
    c.add_argument("--dims", choices=sorted(DIMS), default="tiny")
    c.add_argument("--tol", type=float, default=1e-3)
    c.add_argument("--tasks", nargs="+", default=["multichoice", "count", "frameqa"])
    c.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("dump-attention", help="write per-example attention weights as JSON lines")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--limit", type=int)
    d.set_defaults(func=cmd_dump_attention)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (CliError, dataio.DatasetFormatError, dataio.ValidationError, OSError, ValueError, KeyError) as err:
        print(f"sta {args.command}: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
