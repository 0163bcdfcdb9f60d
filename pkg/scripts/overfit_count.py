"""Overfit a small synthetic count set and report when the loss drops below a target."""

import argparse
import sys

from sta.dataio import SyntheticConfig, generate_synthetic, synthetic_vocabulary
from sta.model import StaModel
from sta.training import TrainConfig, train


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--target", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    data = generate_synthetic("count", args.n, SyntheticConfig(seed=args.seed, noise_sigma=args.noise_sigma))
    cfg = TrainConfig(
        task="count",
        batch_size=args.batch_size,
        epochs=args.epochs,
        lr=args.lr,
        dropout_p=0.0,
        hidden_d=args.hidden,
        embed_dim=args.embed_dim,
        seed=args.seed,
    )
    model = StaModel(cfg.model_config(len(synthetic_vocabulary(6)), 32))
    hist = train(model, data, cfg, log=sys.stdout, stop_at_loss=args.target).history
    last = hist[-1]
    reached = last["loss"] < args.target
    print(f"{'reached' if reached else 'did not reach'} loss < {args.target} (loss {last['loss']:.4f} at epoch {last['epoch']})")
    return 0 if reached else 1


if __name__ == "__main__":
    sys.exit(main())
