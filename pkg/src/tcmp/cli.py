"""Command line entry point: ``tcmp synth | train | track | eval | compare | inspect``.

Exit codes: 0 on success, 2 for bad input or usage, 3 when a run fails
(e.g. diverged training). Every command that writes files also writes a
run manifest beside them.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .errors import (
    CorruptCheckpointError,
    DivergedTrainingError,
    InvalidInputError,
    InvalidStateError,
    MotParseError,
    NumericDegeneracyError,
    UndefinedMetricError,
)
from .evaluation import (
    aggregate,
    check_frame_range,
    evaluate,
    format_table,
    read_mot,
    records_from_rows,
    reports_json,
    write_mot,
)
from .net import NetConfig, TcmpModel, count_flops, count_params, load_model, receptive_field, save_model
from .predictors import make_predictor
from .scenarios import PRESETS, preset, spec_from_dict
from .sequences import find_sequences, load_training_trajectories, read_detections, read_geometry, write_sequence, write_text_atomic
from .tracker import Tracker, TrackerConfig
from .trainer import TrainConfig, extract_windows, train

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("tcmp")


def write_manifest(path, command: str, config: dict, seed, inputs, outputs, started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "wall_clock_s": round(time.perf_counter() - started, 6),
    }
    write_text_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _args_dict(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}


# -- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    if args.spec:
        try:
            raw = json.loads(Path(args.spec).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{args.spec}: {exc}") from exc
        specs = [(out, spec_from_dict(raw))]
    else:
        if args.preset not in PRESETS:
            raise InvalidInputError(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}")
        seeds = range(args.seed, args.seed + args.count)
        specs = [(out / f"{args.preset}-s{s:03d}" if args.count > 1 else out, preset(args.preset, s)) for s in seeds]
    written = []
    for seq_dir, spec in specs:
        written += list(write_sequence(seq_dir, spec).values())
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.json", "synth", _args_dict(args), args.seed, [args.spec] if args.spec else [], written, t0)
    print(f"wrote {len(specs)} sequence(s) under {out}")
    return EXIT_OK


def _load_train_config(path, overrides) -> tuple[TrainConfig, NetConfig]:
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: {exc}") from exc
    net_raw = raw.pop("net", {})
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise InvalidInputError(f"unknown train config keys: {sorted(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    cfg = TrainConfig(**raw)
    try:
        net = NetConfig.from_dict({"max_context": cfg.max_context, **net_raw})
    except TypeError as exc:
        raise InvalidInputError(f"bad net config: {exc}") from exc
    return cfg, net


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg, net_cfg = _load_train_config(args.config, {"epochs": args.epochs, "seed": args.seed})
    data = extract_windows(load_training_trajectories(args.data), cfg.max_context)
    if len(data) == 0:
        raise InvalidInputError(f"no training windows found under {args.data}")
    model = TcmpModel(net_cfg, seed=cfg.seed)
    ckpt = Path(args.out)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    report = train(model, data, cfg, checkpoint_path=ckpt)
    report_path = Path(f"{ckpt}.report.json")
    report.to_json(report_path)
    write_manifest(
        Path(f"{ckpt}.manifest.json"), "train", {"train": asdict(cfg), "net": net_cfg.to_dict()}, cfg.seed,
        [args.data] + ([args.config] if args.config else []), [ckpt, report_path], t0,
    )
    final = report.final_train_loss
    print(f"windows {len(data)}  epochs {cfg.epochs}  final train loss {final if final is not None else float('nan'):.6g}")
    print(f"alpha {model.alpha:.6f}")
    return EXIT_OK


def cmd_track(args) -> int:
    t0 = time.perf_counter()
    det_path = Path(args.det)
    geo_path = Path(args.geometry) if args.geometry else det_path.parent / "geometry.json"
    dets = read_detections(det_path)
    geom, n_frames = read_geometry(geo_path) if geo_path.exists() else (None, None)
    kind = "tcmp" if args.ckpt else args.predictor
    if kind == "tcmp":
        if not args.ckpt:
            raise InvalidInputError("the tcmp predictor needs --ckpt")
        if geom is None:
            raise InvalidInputError(f"no image geometry: pass --geometry or place geometry.json next to {det_path}")
        if not Path(args.ckpt).exists():
            raise InvalidInputError(f"checkpoint {args.ckpt} does not exist")
        predictor = make_predictor("tcmp", load_model(args.ckpt), geom)
    else:
        predictor = make_predictor(kind)
    config = TrackerConfig(
        tau_high=args.tau_high, tau_low=args.tau_low, first_gate=args.first_gate,
        second_gate=args.second_gate, max_age=args.max_age, predictor=kind,
    )
    last = max([n_frames or 0, *dets]) if (dets or n_frames) else 0
    rows = Tracker(predictor, config).run(dets, range(1, last + 1))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_mot(records_from_rows(rows), out)
    inputs = [det_path] + ([geo_path] if geom is not None else []) + ([args.ckpt] if args.ckpt else [])
    write_manifest(Path(f"{out}.manifest.json"), "track", {**asdict(config), **_args_dict(args)}, None, inputs, [out], t0)
    print(f"{len(rows)} result rows, {len({r[1] for r in rows})} track ids -> {out}")
    return EXIT_OK


def _evaluate_files(gt_path, res_path, name, ignore_zero_conf):
    gt, res = read_mot(gt_path), read_mot(res_path)
    check_frame_range(gt, res)
    return evaluate(gt, res, name, ignore_zero_conf)


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    report = _evaluate_files(args.gt, args.res, Path(args.res).stem, args.ignore_zero_conf)
    out = Path(args.out) if args.out else Path(args.res).with_suffix(".metrics.json")
    write_text_atomic(out, reports_json([report]))
    write_manifest(Path(f"{out}.manifest.json"), "eval", _args_dict(args), None, [args.gt, args.res], [out], t0)
    print(format_table([report]))
    return EXIT_OK


def cmd_compare(args) -> int:
    t0 = time.perf_counter()
    labels = args.labels or [Path(p).stem for p in args.res]
    if len(labels) != len(args.res):
        raise InvalidInputError("--labels must name every results file")
    reports = [_evaluate_files(args.gt, r, lab, args.ignore_zero_conf) for r, lab in zip(args.res, labels)]
    out = Path(args.out) if args.out else Path(args.res[0]).parent / "compare.json"
    write_text_atomic(out, reports_json(reports))
    write_manifest(Path(f"{out}.manifest.json"), "compare", _args_dict(args), None, [args.gt, *args.res], [out], t0)
    print(format_table(reports))
    return EXIT_OK


def cmd_inspect(args) -> int:
    if not Path(args.ckpt).exists():
        raise InvalidInputError(f"checkpoint {args.ckpt} does not exist")
    model = load_model(args.ckpt)
    m = args.flops_context
    if m < 1:
        raise InvalidInputError("--flops-context must be >= 1")
    print("config:")
    for k, v in model.config.to_dict().items():
        print(f"  {k}: {v}")
    print(f"params: {count_params(model)}")
    print(f"flops(m={m}): {count_flops(model, m)}")
    print(f"alpha: {model.alpha:.6f}")
    print(f"receptive_field: {receptive_field(model.config)}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tcmp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic sequences")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
    src.add_argument("--spec", help="scenario JSON file")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=1, help="number of consecutive seeds (one subdirectory each)")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a motion predictor on ground-truth trajectories")
    t.add_argument("--data", required=True, help="directory searched recursively for sequences")
    t.add_argument("--config", help="JSON train config; an optional 'net' object sets the architecture")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("track", help="run the tracker over a detection file")
    k.add_argument("--det", required=True)
    k.add_argument("--ckpt")
    k.add_argument("--predictor", choices=("kalman", "static"), default="kalman")
    k.add_argument("--geometry", help="geometry.json (default: next to the detection file)")
    k.add_argument("--out", required=True)
    defaults = TrackerConfig()
    k.add_argument("--tau-high", type=float, default=defaults.tau_high)
    k.add_argument("--tau-low", type=float, default=defaults.tau_low)
    k.add_argument("--first-gate", type=float, default=defaults.first_gate)
    k.add_argument("--second-gate", type=float, default=defaults.second_gate)
    k.add_argument("--max-age", type=int, default=defaults.max_age)
    k.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="MOTA / IDF1 / IDSW for one results file")
    e.add_argument("--gt", required=True)
    e.add_argument("--res", required=True)
    e.add_argument("--out", help="metrics JSON (default: RES.metrics.json)")
    e.add_argument("--ignore-zero-conf", action="store_true", help="drop gt rows whose confidence is 0")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="side-by-side metrics for several results files")
    c.add_argument("--gt", required=True)
    c.add_argument("--res", required=True, nargs="+")
    c.add_argument("--labels", nargs="+")
    c.add_argument("--out", help="metrics JSON (default: compare.json beside the first results file)")
    c.add_argument("--ignore-zero-conf", action="store_true")
    c.set_defaults(func=cmd_compare)

    i = sub.add_parser("inspect", help="describe a checkpoint")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--flops-context", type=int, default=5)
    i.set_defaults(func=cmd_inspect)
    return p


INPUT_ERRORS = (InvalidInputError, MotParseError, CorruptCheckpointError, UndefinedMetricError, FileNotFoundError)
RUNTIME_ERRORS = (DivergedTrainingError, InvalidStateError, NumericDegeneracyError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"tcmp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RUNTIME_ERRORS as exc:
        print(f"tcmp {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
