"""Qualitative cases 1-4: how many of ten seeds keep identities through each scripted event."""

import argparse
import json

from tcmp import experiments as E
from tcmp.net import load_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ckpt", required=True)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--max-age", type=int, default=30)
    ap.add_argument("--out", help="write results JSON here")
    args = ap.parse_args()

    model = load_model(args.ckpt)
    table = {}
    for kind in ("tcmp", "kalman", "static"):
        table[kind] = {
            case: sum(E.case_outcome(case, s, model, kind, args.max_age) for s in range(args.seeds))
            for case in ("case1", "case2", "case3", "case4")
        }
        print(kind.ljust(8), "  ".join(f"{c} {n}/{args.seeds}" for c, n in table[kind].items()))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(table, fh, indent=2)


if __name__ == "__main__":
    main()
