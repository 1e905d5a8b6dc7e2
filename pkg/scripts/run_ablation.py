"""Alpha-mix ablation: learned blend vs final-block only vs skip-sum only.

Trains the three variants with the same budget and data and prints their
best validation losses.
"""

import argparse
import json
import logging

from tcmp import experiments as E
from tcmp.net import NetConfig, TcmpModel
from tcmp.trainer import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", help="write results JSON here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    data = E.corpus_dataset()
    cfg = E.ABLATION_TRAIN
    results = {}
    for mode in ("alpha", "final", "skip"):
        model = TcmpModel(NetConfig(mix_mode=mode), seed=cfg.seed)
        rep = train(model, data, cfg)
        results[mode] = {"best_val_loss": min(rep.val_loss), "alpha": model.alpha, "seconds": rep.wall_clock_s}
        print(f"{mode:6s} val {results[mode]['best_val_loss']:.4e}  alpha {model.alpha:.4f}")
    bound = min(results["final"]["best_val_loss"], results["skip"]["best_val_loss"]) * 1.05
    print(f"alpha-mix within 5% of the best single path: {results['alpha']['best_val_loss'] <= bound}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
