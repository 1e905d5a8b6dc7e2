"""Synthetic ground truth and detector output for tracking experiments.

Each object follows an analytic motion program (linear, lateral sinusoid,
sharp turn, stop-and-go). Detector imperfections (corner jitter, random
misses, scripted occlusions, clutter) are layered on separately so ground
truth stays exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .geometry import BoundingBox, ImageGeometry
from .tracker import Detection

MOTION_KINDS = ("linear", "sinusoidal", "sharp_turn", "stop_go")
PRESETS = ("case1", "case2", "case3", "case4", "linear", "mixed_corpus", "sharp_turn", "stop_go", "crossing")
STRESSOR_PRESETS = ("sharp_turn", "stop_go", "crossing")

MATCHED_SCORE = (0.7, 1.0)
LOW_SCORE = (0.41, 0.59)
CLUTTER_SCORE = (0.41, 0.6)


@dataclass(frozen=True)
class MotionProgram:
    """Analytic top-left trajectory of one object; ``t = frame - start_frame``."""

    obj_id: int
    box: tuple  # (x, y, w, h) at start_frame
    velocity: tuple = (0.0, 0.0)
    kind: str = "linear"
    start_frame: int = 1
    end_frame: int | None = None
    amplitude: float = 0.0
    period: float = 40.0
    phase: float = 0.0
    turn_angle_deg: float = 0.0
    turn_frame: int = 0
    stops: tuple = ()  # inclusive (first, last) frame ranges with zero displacement

    def __post_init__(self):
        if self.kind not in MOTION_KINDS:
            raise InvalidInputError(f"unknown motion kind {self.kind!r}")

    def position(self, frame: int) -> np.ndarray:
        t = frame - self.start_frame
        p0 = np.array(self.box[:2], dtype=np.float64)
        v = np.array(self.velocity, dtype=np.float64)
        if self.kind == "linear":
            p = p0 + v * t
        elif self.kind == "sinusoidal":
            speed = np.hypot(*v)
            normal = np.array([-v[1], v[0]]) / speed if speed > 0 else np.array([1.0, 0.0])
            p = p0 + v * t + self.amplitude * math.sin(2 * math.pi * t / self.period + self.phase) * normal
        elif self.kind == "sharp_turn":
            tt = self.turn_frame - self.start_frame
            if t <= tt:
                p = p0 + v * t
            else:
                a = math.radians(self.turn_angle_deg)
                rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
                p = p0 + v * tt + (rot @ v) * (t - tt)
        else:  # stop_go
            paused = sum(max(0, min(frame, b) - max(self.start_frame + 1, a) + 1) for a, b in self.stops)
            p = p0 + v * (t - paused)
        return p

    def box_at(self, frame: int) -> np.ndarray:
        x, y = self.position(frame)
        return np.array([x, y, self.box[2], self.box[3]], dtype=np.float64)

    def active(self, frame: int, n_frames: int) -> bool:
        end = self.end_frame if self.end_frame is not None else n_frames
        return self.start_frame <= frame <= end


@dataclass(frozen=True)
class Occlusion:
    obj_id: int
    first: int
    last: int
    # "hide" drops the detection, "dim" keeps it with a low-band score
    mode: str = "hide"


@dataclass(frozen=True)
class ScenarioSpec:
    geometry: ImageGeometry
    frames: int
    objects: tuple
    det_noise_std: float = 1.0
    miss_prob: float = 0.0
    occlusions: tuple = ()
    clutter_rate: float = 0.0
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        if self.frames < 2:
            raise InvalidInputError("a scenario needs at least 2 frames")
        if not 0 <= self.miss_prob <= 1:
            raise InvalidInputError("miss_prob must be in [0, 1]")
        if self.clutter_rate < 0 or self.det_noise_std < 0:
            raise InvalidInputError("clutter_rate and det_noise_std must be >= 0")
        ids = [o.obj_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("object ids must be unique")


@dataclass
class GroundTruthSet:
    geometry: ImageGeometry
    frames: int
    boxes: dict = field(default_factory=dict)  # obj_id -> {frame: (4,) array}
    clipped: set = field(default_factory=set)  # ids whose program left the image

    def trajectories(self) -> list[tuple[int, np.ndarray]]:
        """Contiguous runs per object as ``(obj_id, (T, 4) array)``."""
        out = []
        for oid in sorted(self.boxes):
            frames = sorted(self.boxes[oid])
            run = [frames[0]]
            for f in frames[1:]:
                if f != run[-1] + 1:
                    out.append((oid, np.stack([self.boxes[oid][g] for g in run])))
                    run = []
                run.append(f)
            out.append((oid, np.stack([self.boxes[oid][g] for g in run])))
        return out

    def records(self) -> list[tuple[int, int, np.ndarray]]:
        """``(frame, obj_id, box)`` sorted by frame then id."""
        return sorted(
            ((f, oid, b) for oid, per in self.boxes.items() for f, b in per.items()), key=lambda r: (r[0], r[1])
        )


def generate(spec: ScenarioSpec) -> GroundTruthSet:
    gt = GroundTruthSet(spec.geometry, spec.frames)
    W, H = spec.geometry.width, spec.geometry.height
    for prog in spec.objects:
        per = {}
        for f in range(1, spec.frames + 1):
            if not prog.active(f, spec.frames):
                continue
            b = prog.box_at(f)
            cx = min(max(b[0], 0.0), W - b[2])
            cy = min(max(b[1], 0.0), H - b[3])
            if cx != b[0] or cy != b[1]:
                gt.clipped.add(prog.obj_id)
                b = np.array([cx, cy, b[2], b[3]])
            per[f] = b
        if per:
            gt.boxes[prog.obj_id] = per
    return gt


def _occlusion_mode(spec: ScenarioSpec, oid: int, frame: int) -> str | None:
    for occ in spec.occlusions:
        if occ.obj_id == oid and occ.first <= frame <= occ.last:
            return occ.mode
    return None


def simulate_detections(gt: GroundTruthSet, spec: ScenarioSpec) -> dict[int, list[Detection]]:
    """Per-frame detections; the generator is seeded from ``spec.seed`` alone."""
    rng = np.random.default_rng([spec.seed, 0xDE7])
    W, H = gt.geometry.width, gt.geometry.height
    out: dict[int, list[Detection]] = {}
    for f in range(1, gt.frames + 1):
        dets = []
        for oid in sorted(gt.boxes):
            b = gt.boxes[oid].get(f)
            if b is None:
                continue
            noise = rng.normal(0.0, spec.det_noise_std, size=4) if spec.det_noise_std > 0 else np.zeros(4)
            u_miss, u_score = rng.random(2)
            mode = _occlusion_mode(spec, oid, f)
            if mode == "hide" or u_miss < spec.miss_prob:
                continue
            x1, y1 = b[0] + noise[0], b[1] + noise[1]
            x2, y2 = b[0] + b[2] + noise[2], b[1] + b[3] + noise[3]
            box = BoundingBox(x1, y1, max(x2 - x1, 1.0), max(y2 - y1, 1.0))
            lo, hi = LOW_SCORE if mode == "dim" else MATCHED_SCORE
            dets.append(Detection(box, lo + (hi - lo) * u_score, f))
        for _ in range(rng.poisson(spec.clutter_rate) if spec.clutter_rate > 0 else 0):
            w, h = rng.uniform(20, 60), rng.uniform(40, 120)
            x, y = rng.uniform(0, W - w), rng.uniform(0, H - h)
            lo, hi = CLUTTER_SCORE
            dets.append(Detection(BoundingBox(x, y, w, h), lo + (hi - lo) * rng.random(), f))
        out[f] = dets
    return out


# -- presets --------------------------------------------------------------------

GEOMETRY = ImageGeometry(640, 480)


def _person(rng) -> tuple[float, float]:
    w = float(rng.uniform(30, 45))
    return w, float(w * rng.uniform(2.0, 2.6))


def _speed_vector(rng, lo: float, hi: float) -> tuple[float, float]:
    a = rng.uniform(0, 2 * math.pi)
    s = rng.uniform(lo, hi)
    return float(s * math.cos(a)), float(s * math.sin(a))


def _lifetime(prog: MotionProgram, frames: int) -> range:
    end = prog.end_frame if prog.end_frame is not None else frames
    return range(prog.start_frame, end + 1)


def in_bounds(prog: MotionProgram, frames: int, geom: ImageGeometry = GEOMETRY) -> bool:
    for f in _lifetime(prog, frames):
        b = prog.box_at(f)
        if b[0] < 0 or b[1] < 0 or b[0] + b[2] > geom.width or b[1] + b[3] > geom.height:
            return False
    return True


def _draw_program(rng, kind, obj_id, start, end, speed, geom) -> MotionProgram:
    w, h = _person(rng)
    x = float(rng.uniform(0, geom.width - w))
    y = float(rng.uniform(0, geom.height - h))
    v = _speed_vector(rng, *speed)
    life = end - start + 1
    base = MotionProgram(obj_id, (x, y, w, h), v, "linear", start_frame=start, end_frame=end)
    if kind == "linear":
        return base
    if kind == "sinusoidal":
        return replace(
            base,
            kind="sinusoidal",
            amplitude=float(rng.uniform(5, 25)),
            period=float(rng.uniform(20, 60)),
            phase=float(rng.uniform(0, 2 * math.pi)),
        )
    if kind == "sharp_turn":
        angle = float(rng.choice([-1, 1]) * rng.uniform(60, 150))
        turn = start + int(rng.integers(life // 4, 3 * life // 4))
        return replace(base, kind="sharp_turn", turn_angle_deg=angle, turn_frame=turn)
    if kind == "stop_go":
        first = start + int(rng.integers(5, max(6, life // 2)))
        length = int(rng.integers(5, 16))
        stops = [(first, first + length - 1)]
        second = first + length + int(rng.integers(10, 30))
        if second + 5 < end and rng.random() < 0.5:
            stops.append((second, second + int(rng.integers(5, 16)) - 1))
        return replace(base, kind="stop_go", stops=tuple(stops))
    raise InvalidInputError(f"unknown motion kind {kind!r}")


def random_program(
    rng: np.random.Generator,
    kind: str,
    obj_id: int,
    frames: int,
    start: int = 1,
    end: int | None = None,
    speed: tuple = (1.0, 5.0),
    geom: ImageGeometry = GEOMETRY,
    accept=None,
) -> MotionProgram:
    """A randomized program of ``kind`` whose boxes stay inside the image.

    Speeds shrink when no in-bounds draw is found. ``accept`` may veto
    candidates, e.g. to keep objects apart.
    """
    end = frames if end is None else end
    lo, hi = speed
    for _ in range(6):
        for _ in range(200):
            cand = _draw_program(rng, kind, obj_id, start, end, (lo, hi), geom)
            if in_bounds(cand, frames, geom) and (accept is None or accept(cand)):
                return cand
        lo, hi = lo / 2, hi / 2
    raise InvalidInputError(f"could not place a {kind} object in {frames} frames")


def overlaps_ever(a: MotionProgram, b: MotionProgram, frames: int, margin: float = 10.0) -> bool:
    for f in set(_lifetime(a, frames)) & set(_lifetime(b, frames)):
        pa, pb = a.box_at(f), b.box_at(f)
        if (
            pa[0] - margin < pb[0] + pb[2]
            and pb[0] - margin < pa[0] + pa[2]
            and pa[1] - margin < pb[1] + pb[3]
            and pb[1] - margin < pa[1] + pa[3]
        ):
            return True
    return False


def _separated_programs(rng, kinds, frames, **kw) -> list[MotionProgram]:
    progs: list[MotionProgram] = []
    for i, kind in enumerate(kinds, start=1):
        progs.append(
            random_program(rng, kind, i, frames, accept=lambda c: not any(overlaps_ever(c, p, frames) for p in progs), **kw)
        )
    return progs


def _crossing_pair(rng, ids=(1, 2), cross_frame=50, center=(300.0, 200.0), speed=(3.0, 5.0)):
    """Two linear objects whose boxes coincide at exactly ``cross_frame``."""
    w, h = _person(rng)
    speed = float(rng.uniform(*speed))
    tilt = float(rng.uniform(-0.6, 0.6))
    va = (speed, tilt)
    vb = (-speed, tilt + float(rng.uniform(0.3, 0.8)) * float(rng.choice([-1, 1])))
    t = cross_frame - 1
    cx, cy = center
    a = MotionProgram(ids[0], (cx - va[0] * t, cy - va[1] * t, w, h), va)
    b = MotionProgram(ids[1], (cx - vb[0] * t, cy - vb[1] * t, w, h), vb)
    return a, b


def preset(name: str, seed: int = 0) -> ScenarioSpec:
    """Documented scenario presets; randomized parameters come from ``seed``.

    case1 / case2: three separated linear walkers, object 1 undetected for 3 / 25 frames.
    case3: two walkers crossing at frame 50, the second hidden for frames 46-54.
    case4: two side-by-side walkers 1.5 widths apart swaying in antiphase.
    """
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    g = GEOMETRY
    if name == "linear":
        frames = 120
        objs = _separated_programs(rng, ["linear"] * 8, frames, speed=(1.0, 4.0))
        return ScenarioSpec(g, frames, tuple(objs), det_noise_std=1.0, seed=seed, name=name)
    if name in ("case1", "case2"):
        gap = 3 if name == "case1" else 25
        frames = 100
        objs = _separated_programs(rng, ["linear"] * 3, frames, speed=(1.5, 4.0))
        first = 40
        occ = (Occlusion(objs[0].obj_id, first, first + gap - 1, "hide"),)
        return ScenarioSpec(g, frames, tuple(objs), det_noise_std=1.0, occlusions=occ, seed=seed, name=name)
    if name == "case3":
        frames = 100
        a, b = _crossing_pair(rng)
        occ = (Occlusion(b.obj_id, 46, 54, "hide"),)
        return ScenarioSpec(g, frames, (a, b), det_noise_std=1.0, occlusions=occ, seed=seed, name=name)
    if name == "case4":
        frames = 100
        w, h = _person(rng)
        speed = float(rng.uniform(1.5, 3.0))
        period = float(rng.uniform(30, 50))
        amp = float(rng.uniform(6, 12))
        x0, y0 = 280.0, 40.0
        a = MotionProgram(1, (x0, y0, w, h), (0.0, speed), "sinusoidal", amplitude=amp, period=period)
        b = MotionProgram(2, (x0 + 1.5 * w, y0, w, h), (0.0, speed), "sinusoidal", amplitude=amp, period=period, phase=math.pi)
        return ScenarioSpec(g, frames, (a, b), det_noise_std=1.0, seed=seed, name=name)
    if name == "mixed_corpus":
        frames = int(rng.integers(150, 251))
        n = int(rng.integers(8, 21))
        objs = []
        for i in range(1, n + 1):
            kind = MOTION_KINDS[int(rng.integers(0, len(MOTION_KINDS)))]
            life = int(rng.integers(60, 121))
            start = int(rng.integers(1, frames - life + 2))
            objs.append(random_program(rng, kind, i, frames, start=start, end=start + life - 1))
        return ScenarioSpec(g, frames, tuple(objs), det_noise_std=1.0, seed=seed, name=name)
    if name in ("sharp_turn", "stop_go"):
        frames = 100
        objs = [random_program(rng, name, i, frames, speed=(3.0, 6.0)) for i in range(1, 7)]
        return ScenarioSpec(g, frames, tuple(objs), det_noise_std=1.0, miss_prob=0.1, seed=seed, name=name)
    if name == "crossing":
        frames = 100
        objs, occ = [], []
        for k, center in enumerate([(200.0, 140.0), (420.0, 260.0)]):
            cross = int(rng.integers(40, 61))
            a, b = _crossing_pair(rng, ids=(2 * k + 1, 2 * k + 2), cross_frame=cross, center=center, speed=(1.5, 2.5))
            objs += [a, b]
            half = int(rng.integers(1, 4))
            occ.append(Occlusion(b.obj_id, cross - half, cross + half, "hide"))
        return ScenarioSpec(g, frames, tuple(objs), det_noise_std=1.0, miss_prob=0.1, occlusions=tuple(occ), seed=seed, name=name)
    raise InvalidInputError(f"unknown preset {name!r}; expected one of {PRESETS}")


def event_frames(spec: ScenarioSpec, after: int = 5) -> dict[int, set]:
    """Frames at or shortly after a turn, stop or restart, per object id."""
    out: dict[int, set] = {}
    for p in spec.objects:
        marks = []
        if p.kind == "sharp_turn":
            marks.append(p.turn_frame + 1)
        elif p.kind == "stop_go":
            for a, b in p.stops:
                marks += [a, b + 1]
        frames = set()
        for m in marks:
            frames.update(range(m, m + after + 1))
        if frames:
            out[p.obj_id] = frames
    return out


# -- JSON scenario files --------------------------------------------------------


def spec_to_dict(spec: ScenarioSpec) -> dict:
    def prog(p: MotionProgram) -> dict:
        d = {k: getattr(p, k) for k in MotionProgram.__dataclass_fields__}
        d["box"], d["velocity"] = list(p.box), list(p.velocity)
        d["stops"] = [list(s) for s in p.stops]
        return d

    return {
        "name": spec.name,
        "seed": spec.seed,
        "geometry": [spec.geometry.width, spec.geometry.height],
        "frames": spec.frames,
        "det_noise_std": spec.det_noise_std,
        "miss_prob": spec.miss_prob,
        "clutter_rate": spec.clutter_rate,
        "objects": [prog(p) for p in spec.objects],
        "occlusions": [{"obj_id": o.obj_id, "first": o.first, "last": o.last, "mode": o.mode} for o in spec.occlusions],
    }


def spec_from_dict(d: dict) -> ScenarioSpec:
    try:
        objects = []
        for o in d["objects"]:
            o = dict(o)
            o["box"] = tuple(float(v) for v in o["box"])
            o["velocity"] = tuple(float(v) for v in o.get("velocity", (0.0, 0.0)))
            o["stops"] = tuple(tuple(int(v) for v in s) for s in o.get("stops", ()))
            objects.append(MotionProgram(**o))
        occ = tuple(Occlusion(**o) for o in d.get("occlusions", ()))
        w, h = d["geometry"]
        return ScenarioSpec(
            ImageGeometry(float(w), float(h)),
            int(d["frames"]),
            tuple(objects),
            det_noise_std=float(d.get("det_noise_std", 1.0)),
            miss_prob=float(d.get("miss_prob", 0.0)),
            occlusions=occ,
            clutter_rate=float(d.get("clutter_rate", 0.0)),
            seed=int(d.get("seed", 0)),
            name=str(d.get("name", "custom")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed scenario: {exc}") from exc
