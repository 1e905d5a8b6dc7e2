"""TCMP vs constant-velocity KF vs static prediction on the non-linear stressor suite.

    python scripts/run_baselines.py --ckpt runs/reference.ckpt
"""

import argparse
import json

from tcmp import experiments as E
from tcmp.net import load_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ckpt", required=True)
    ap.add_argument("--out", help="write results JSON here")
    args = ap.parse_args()

    model = load_model(args.ckpt)
    kinds = ("tcmp", "kalman", "static")
    ade = E.event_ade(model, kinds)
    suite = E.stressor_tracking(model, kinds)
    rows = {
        k: {
            "event_ade_px": ade[k],
            "idf1_mean": suite.mean(k, "idf1"),
            "mota_mean": suite.mean(k, "mota"),
            "id_switches": suite.total(k, "id_switches"),
        }
        for k in kinds
    }
    print(f"{'predictor':10s} {'ADE px':>8s} {'IDF1':>7s} {'MOTA':>7s} {'IDSW':>5s}")
    for k, r in rows.items():
        print(f"{k:10s} {r['event_ade_px']:8.3f} {r['idf1_mean']:7.4f} {r['mota_mean']:7.4f} {r['id_switches']:5d}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
