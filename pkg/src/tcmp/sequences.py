"""On-disk sequence directories: ``gt.txt``, ``det.txt`` and ``geometry.json``.

Detections use the MOTChallenge layout with id ``-1`` and the detector score
in the confidence column.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, MotParseError
from .evaluation import MotRecord, format_record, parse_line, read_mot, write_mot
from .geometry import BoundingBox, ImageGeometry
from .scenarios import GroundTruthSet, ScenarioSpec, generate, simulate_detections
from .tracker import Detection


def write_text_atomic(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def gt_records(gt: GroundTruthSet) -> list[MotRecord]:
    return [MotRecord(f, oid, *map(float, b), 1.0) for f, oid, b in gt.records()]


def detection_records(dets: dict[int, list[Detection]]) -> list[MotRecord]:
    return [
        MotRecord(f, -1, d.box.x, d.box.y, d.box.w, d.box.h, d.score) for f in sorted(dets) for d in dets[f]
    ]


def write_sequence(out_dir, spec: ScenarioSpec) -> dict:
    """Generate one scenario and write its three files; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt = generate(spec)
    dets = simulate_detections(gt, spec)
    write_mot(gt_records(gt), out / "gt.txt")
    # detections keep generation order within a frame (many share id -1)
    write_text_atomic(out / "det.txt", "".join(format_record(r) + "\n" for r in detection_records(dets)))
    geo = {"width": spec.geometry.width, "height": spec.geometry.height, "frames": spec.frames, "name": spec.name, "seed": spec.seed}
    write_text_atomic(out / "geometry.json", json.dumps(geo, indent=2, sort_keys=True) + "\n")
    return {k: str(out / f) for k, f in (("gt", "gt.txt"), ("det", "det.txt"), ("geometry", "geometry.json"))}


def read_geometry(path) -> tuple[ImageGeometry, int | None]:
    try:
        d = json.loads(Path(path).read_text())
        return ImageGeometry(float(d["width"]), float(d["height"])), d.get("frames")
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"{path}: malformed geometry file ({exc})") from exc


def read_detections(path) -> dict[int, list[Detection]]:
    out: dict[int, list[Detection]] = {}
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            r = parse_line(line, n)
            try:
                det = Detection(BoundingBox(r.x, r.y, r.w, r.h), r.conf, r.frame)
            except InvalidInputError as exc:
                raise MotParseError(str(exc), n) from None
            out.setdefault(r.frame, []).append(det)
    return out


def gt_trajectories(records) -> list[np.ndarray]:
    """Split ground truth into per-id runs of consecutive frames, each ``(T, 4)``."""
    per: dict[int, list[MotRecord]] = {}
    for r in records:
        per.setdefault(r.id, []).append(r)
    runs = []
    for oid in sorted(per):
        rows = sorted(per[oid], key=lambda r: r.frame)
        cur = [rows[0]]
        for r in rows[1:]:
            if r.frame != cur[-1].frame + 1:
                runs.append(np.array([c.box for c in cur]))
                cur = []
            cur.append(r)
        runs.append(np.array([c.box for c in cur]))
    return runs


def find_sequences(root) -> list[Path]:
    """Directories under ``root`` (inclusive) holding both gt.txt and geometry.json, sorted."""
    root = Path(root)
    if not root.is_dir():
        raise InvalidInputError(f"{root} is not a directory")
    found = sorted(p.parent for p in root.rglob("gt.txt") if (p.parent / "geometry.json").exists())
    if not found:
        raise InvalidInputError(f"no sequences (gt.txt + geometry.json) under {root}")
    return found


def load_training_trajectories(root) -> list[tuple[np.ndarray, ImageGeometry]]:
    out = []
    for seq in find_sequences(root):
        geom, _ = read_geometry(seq / "geometry.json")
        out += [(run, geom) for run in gt_trajectories(read_mot(seq / "gt.txt"))]
    return out
