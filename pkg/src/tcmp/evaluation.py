"""MOTChallenge text I/O and the CLEAR / identity metrics (MOTA, IDSW, IDF1).

Ground truth and hypotheses are both lists of :class:`MotRecord`. Frame-level
correspondence follows the CLEAR protocol with an IoU gate of 0.5: pairs
matched in the previous frame survive if still above the gate, the rest are
matched by Hungarian on ``1 - IoU`` maximizing the number of valid pairs.
"""

from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .assignment import hungarian
from .errors import InvalidInputError, MotParseError, UndefinedMetricError
from .geometry import iou_matrix

IOU_GATE = 0.5


@dataclass(frozen=True)
class MotRecord:
    frame: int
    id: int
    x: float
    y: float
    w: float
    h: float
    conf: float = 1.0

    @property
    def box(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def format_record(r: MotRecord) -> str:
    return ",".join([str(r.frame), str(r.id)] + [_fmt(v) for v in (r.x, r.y, r.w, r.h, r.conf)] + ["-1", "-1", "-1"])


def parse_line(line: str, line_number: int | None = None) -> MotRecord:
    parts = [p.strip() for p in line.strip().split(",")]
    if len(parts) != 10:
        raise MotParseError(f"expected 10 fields, got {len(parts)}", line_number)
    try:
        frame, oid = int(parts[0]), int(parts[1])
        x, y, w, h, conf = (float(p) for p in parts[2:7])
    except ValueError as exc:
        raise MotParseError(f"bad number ({exc})", line_number) from None
    if frame < 1:
        raise MotParseError(f"frame must be >= 1, got {frame}", line_number)
    return MotRecord(frame, oid, x, y, w, h, conf)


def read_mot(path) -> list[MotRecord]:
    """Parse a MOTChallenge file; blank lines are skipped, duplicates rejected."""
    records, seen = [], set()
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = parse_line(line, n)
            key = (rec.frame, rec.id)
            if key in seen:
                raise MotParseError(f"duplicate record for frame {rec.frame}, id {rec.id}", n)
            seen.add(key)
            records.append(rec)
    return records


def write_mot(records: Iterable[MotRecord], path) -> None:
    """Write records sorted by ``(frame, id)``; the file is replaced atomically."""
    rows = sorted(records, key=lambda r: (r.frame, r.id))
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        for r in rows:
            fh.write(format_record(r) + "\n")
    os.replace(tmp, path)


def _by_frame(records: Iterable[MotRecord]) -> dict[int, list[MotRecord]]:
    out = defaultdict(list)
    for r in records:
        out[r.frame].append(r)
    for rows in out.values():
        rows.sort(key=lambda r: r.id)
    return out


# -- CLEAR ----------------------------------------------------------------------


@dataclass
class FrameCorrespondence:
    frame: int
    matches: list  # (gt id, hyp id) pairs
    gt_ids: list
    hyp_ids: list
    switches: list = field(default_factory=list)  # gt ids whose hypothesis changed here

    @property
    def fp(self) -> int:
        return len(self.hyp_ids) - len(self.matches)

    @property
    def fn(self) -> int:
        return len(self.gt_ids) - len(self.matches)


def _max_valid_matching(sim: np.ndarray, gate: float) -> list[tuple[int, int]]:
    """Most pairs with ``sim >= gate``; ties broken by smallest total ``1 - sim``."""
    if sim.size == 0:
        return []
    valid = sim >= gate
    penalty = min(sim.shape) + 1.0  # outweighs any cost difference among valid pairs
    cost = np.where(valid, 1.0 - sim, penalty)
    return [(r, c) for r, c in hungarian(cost).matches if valid[r, c]]


def per_frame_match(
    gt: Sequence[MotRecord], res: Sequence[MotRecord], gate: float = IOU_GATE
) -> list[FrameCorrespondence]:
    """CLEAR correspondences for every frame from 1 to the last frame seen in either set."""
    gt_f, res_f = _by_frame(gt), _by_frame(res)
    last = max([0, *gt_f, *res_f])
    prev: dict[int, int] = {}  # gt id -> hyp id matched in the previous frame
    latest: dict[int, int] = {}  # gt id -> most recent hyp id ever matched
    out = []
    for f in range(1, last + 1):
        g, h = gt_f.get(f, []), res_f.get(f, [])
        sim = iou_matrix([r.box for r in g], [r.box for r in h])
        g_idx = {r.id: i for i, r in enumerate(g)}
        h_idx = {r.id: j for j, r in enumerate(h)}
        pairs = []
        for gid, hid in prev.items():
            if gid in g_idx and hid in h_idx and sim[g_idx[gid], h_idx[hid]] >= gate:
                pairs.append((g_idx[gid], h_idx[hid]))
        free_g = [i for i in range(len(g)) if i not in {p[0] for p in pairs}]
        free_h = [j for j in range(len(h)) if j not in {p[1] for p in pairs}]
        for a, b in _max_valid_matching(sim[np.ix_(free_g, free_h)], gate):
            pairs.append((free_g[a], free_h[b]))
        matches = sorted((g[i].id, h[j].id) for i, j in pairs)
        switches = [gid for gid, hid in matches if gid in latest and latest[gid] != hid]
        for gid, hid in matches:
            latest[gid] = hid
        prev = dict(matches)
        out.append(FrameCorrespondence(f, matches, [r.id for r in g], [r.id for r in h], switches))
    return out


def id_switch_count(corr: Sequence[FrameCorrespondence]) -> int:
    return sum(len(c.switches) for c in corr)


def mota(corr: Sequence[FrameCorrespondence]) -> float:
    n_gt = sum(len(c.gt_ids) for c in corr)
    if n_gt == 0:
        raise UndefinedMetricError("MOTA is undefined without ground-truth boxes")
    errors = sum(c.fp + c.fn for c in corr) + id_switch_count(corr)
    return 1.0 - errors / n_gt


# -- identity metrics -----------------------------------------------------------


@dataclass(frozen=True)
class IdentityCounts:
    idtp: int
    idfp: int
    idfn: int

    @property
    def idf1(self) -> float:
        denom = 2 * self.idtp + self.idfp + self.idfn
        return 2 * self.idtp / denom if denom else 0.0


def overlap_counts(gt, res, gate: float = IOU_GATE):
    """``(gt ids, hyp ids, counts)`` where counts[i, j] = frames with IoU >= gate."""
    gt_ids = sorted({r.id for r in gt})
    hyp_ids = sorted({r.id for r in res})
    gi = {k: i for i, k in enumerate(gt_ids)}
    hi = {k: j for j, k in enumerate(hyp_ids)}
    counts = np.zeros((len(gt_ids), len(hyp_ids)), dtype=np.int64)
    res_f = _by_frame(res)
    for f, g in _by_frame(gt).items():
        h = res_f.get(f, [])
        if not h:
            continue
        ok = iou_matrix([r.box for r in g], [r.box for r in h]) >= gate
        for a, b in zip(*np.nonzero(ok)):
            counts[gi[g[a].id], hi[h[b].id]] += 1
    return gt_ids, hyp_ids, counts


def identity_counts(gt, res, gate: float = IOU_GATE) -> IdentityCounts:
    """Global one-to-one id mapping maximizing the number of true-positive identity frames."""
    _, _, counts = overlap_counts(gt, res, gate)
    idtp = 0
    if counts.size:
        a = hungarian(-counts.astype(np.float64))
        idtp = int(sum(counts[r, c] for r, c in a.matches))
    return IdentityCounts(idtp, len(res) - idtp, len(gt) - idtp)


def idf1(gt, res, gate: float = IOU_GATE) -> float:
    if len(gt) == 0:
        raise UndefinedMetricError("IDF1 is undefined without ground-truth boxes")
    return identity_counts(gt, res, gate).idf1


# -- reports --------------------------------------------------------------------


@dataclass
class MetricsReport:
    name: str
    num_gt: int
    num_hyp: int
    tp: int
    fp: int
    fn: int
    id_switches: int
    idtp: int
    idfp: int
    idfn: int

    @property
    def mota(self) -> float:
        if self.num_gt == 0:
            raise UndefinedMetricError("MOTA is undefined without ground-truth boxes")
        return 1.0 - (self.fp + self.fn + self.id_switches) / self.num_gt

    @property
    def idf1(self) -> float:
        return IdentityCounts(self.idtp, self.idfp, self.idfn).idf1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mota"] = self.mota
        d["idf1"] = self.idf1
        return d


def check_frame_range(gt: Sequence[MotRecord], res: Sequence[MotRecord]) -> None:
    """Results may not reference frames past the end of the ground truth."""
    if not gt:
        raise InvalidInputError("ground truth is empty")
    last = max(r.frame for r in gt)
    bad = [r.frame for r in res if r.frame > last]
    if bad:
        raise InvalidInputError(f"results reference frame {min(bad)} but ground truth ends at frame {last}")


def evaluate(gt: Sequence[MotRecord], res: Sequence[MotRecord], name: str = "seq", ignore_zero_conf: bool = False):
    """Full metrics for one sequence. ``ignore_zero_conf`` drops gt rows with conf 0."""
    if ignore_zero_conf:
        gt = [r for r in gt if r.conf != 0]
    if len(gt) == 0:
        raise UndefinedMetricError("no ground-truth boxes to evaluate against")
    corr = per_frame_match(gt, res)
    ids = identity_counts(gt, res)
    tp = sum(len(c.matches) for c in corr)
    return MetricsReport(
        name, len(gt), len(res), tp,
        sum(c.fp for c in corr), sum(c.fn for c in corr), id_switch_count(corr),
        ids.idtp, ids.idfp, ids.idfn,
    )


def aggregate(reports: Sequence[MetricsReport], name: str = "TOTAL") -> MetricsReport:
    """Pool counts over sequences (identity matching stays per sequence)."""
    keys = ("num_gt", "num_hyp", "tp", "fp", "fn", "id_switches", "idtp", "idfp", "idfn")
    return MetricsReport(name, *(sum(getattr(r, k) for r in reports) for k in keys))


TABLE_COLUMNS = ("name", "mota", "idf1", "id_switches", "fp", "fn", "idtp", "idfp", "idfn", "num_gt")


def format_table(reports: Sequence[MetricsReport]) -> str:
    rows = [list(TABLE_COLUMNS)]
    for r in reports:
        d = r.to_dict()
        rows.append([f"{d[k]:.4f}" if isinstance(d[k], float) else str(d[k]) for k in TABLE_COLUMNS])
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_COLUMNS))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
    return "\n".join(lines)


def reports_json(reports: Sequence[MetricsReport]) -> str:
    return json.dumps({"sequences": [r.to_dict() for r in reports]}, indent=2, sort_keys=True)


def records_from_rows(rows) -> list[MotRecord]:
    """Tracker output rows ``(frame, id, box, score)`` to records."""
    return [MotRecord(int(f), int(i), b.x, b.y, b.w, b.h, float(s)) for f, i, b, s in rows]
