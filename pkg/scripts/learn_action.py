"""Train on the synthetic action task and compare against the untrained baseline."""

import argparse
import sys

from sta.dataio import SyntheticConfig, generate_synthetic, synthetic_vocabulary
from sta.model import StaModel
from sta.training import TrainConfig, evaluate, train


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    train_set = generate_synthetic("action", args.n_train, SyntheticConfig(seed=args.seed))
    test_set = generate_synthetic("action", args.n_test, SyntheticConfig(seed=args.seed + 1000))
    cfg = TrainConfig(
        task="multichoice",
        epochs=args.epochs,
        dropout_p=args.dropout,
        hidden_d=args.hidden,
        embed_dim=args.embed_dim,
        seed=args.seed,
    )
    model = StaModel(cfg.model_config(len(synthetic_vocabulary(6)), 32))
    print(f"untrained accuracy: {evaluate(model, test_set, 'multichoice').metric:.3f}")
    train(model, train_set, cfg, test_set, log=sys.stdout)
    print(f"final accuracy: {evaluate(model, test_set, 'multichoice').metric:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
