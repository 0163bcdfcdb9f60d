"""Segment-count and text-attention ablation on the synthetic action task.

Trains one model per (variant, N, seed) and prints a table of held-out
accuracies.  The variants are the full model (text attention on) and the
visual-only model (uniform weights over the words).
"""

import argparse
import json
import sys
import time

import numpy as np

from sta.dataio import SyntheticConfig, generate_synthetic, synthetic_vocabulary
from sta.model import StaModel
from sta.training import TrainConfig, train


def run(seed: int, n_segments: int, text_attention: bool, args) -> float:
    train_set = generate_synthetic(args.task, args.n_train, SyntheticConfig(seed=seed))
    test_set = generate_synthetic(args.task, args.n_test, SyntheticConfig(seed=seed + 1000))
    cfg = TrainConfig(
        task="multichoice",
        batch_size=args.batch_size,
        epochs=args.epochs,
        dropout_p=args.dropout,
        hidden_d=args.hidden,
        embed_dim=args.embed_dim,
        n_segments=n_segments,
        seed=seed,
        text_attention=text_attention,
    )
    model = StaModel(cfg.model_config(len(synthetic_vocabulary(6)), 32))
    hist = train(model, train_set, cfg, test_set, eval_every=cfg.epochs).history
    return hist[-1]["accuracy"]


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--task", choices=["action", "trans"], default="action")
    p.add_argument("--segments", type=int, nargs="+", default=[4])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--n-train", type=int, default=500)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--json", action="store_true", help="emit one JSON record per run")
    args = p.parse_args()

    rows = []
    for n in args.segments:
        for text_attention in (True, False):
            accs = []
            for seed in args.seeds:
                start = time.perf_counter()
                acc = run(seed, n, text_attention, args)
                accs.append(acc)
                if args.json:
                    print(json.dumps({"segments": n, "text_attention": text_attention, "seed": seed, "accuracy": acc}))
                else:
                    print(f"N={n} text_attention={text_attention} seed={seed}: {acc:.3f} ({time.perf_counter() - start:.0f}s)", file=sys.stderr)
            rows.append((n, "text+visual" if text_attention else "visual-only", float(np.mean(accs)), float(np.std(accs))))
    if not args.json:
        print(f"{'N':>2}  {'variant':12s}  mean acc  std")
        for n, name, mean, std in rows:
            print(f"{n:>2}  {name:12s}  {mean:8.3f}  {std:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
