"""Train the reference motion model on the mixed synthetic corpus.

    python scripts/train_reference.py --out runs/reference.ckpt
"""

import argparse
import json
import logging
from dataclasses import asdict, replace
from pathlib import Path

from tcmp import experiments as E
from tcmp.net import count_params


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/reference.ckpt")
    ap.add_argument("--epochs", type=int, help="override the reference epoch count")
    ap.add_argument("--seed", type=int, default=E.REFERENCE_TRAIN.seed)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = replace(E.REFERENCE_TRAIN, seed=args.seed, **({"epochs": args.epochs} if args.epochs is not None else {}))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model, report = E.train_reference(cfg, checkpoint_path=out)
    report.to_json(f"{out}.report.json")
    summary = {
        "config": asdict(cfg),
        "corpus_seeds": list(E.CORPUS_SEEDS),
        "params": count_params(model),
        "best_epoch": report.best_epoch,
        "best_val_loss": min(report.val_loss) if report.val_loss else None,
        "alpha": model.alpha,
        "wall_clock_s": report.wall_clock_s,
    }
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
