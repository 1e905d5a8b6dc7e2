import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tcmp.errors import InvalidInputError
from tcmp.geometry import ImageGeometry, iou
from tcmp.scenarios import (
    GEOMETRY,
    MotionProgram,
    Occlusion,
    PRESETS,
    ScenarioSpec,
    event_frames,
    generate,
    in_bounds,
    preset,
    simulate_detections,
    spec_from_dict,
    spec_to_dict,
)

GEOM = ImageGeometry(640, 480)


def one(prog, frames=30, **kw):
    return ScenarioSpec(GEOM, frames, (prog,), **kw)


# -- motion programs ----------------------------------------------------------------


@settings(max_examples=50)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(1, 20))
def test_linear_steps_are_constant(vx, vy, start):
    p = MotionProgram(1, (300.0, 200.0, 30.0, 60.0), (vx, vy), start_frame=start)
    for f in range(start, start + 10):
        step = p.position(f + 1) - p.position(f)
        assert np.allclose(step, [vx, vy], atol=1e-9)
    assert np.allclose(p.position(start), [300, 200])


def test_stop_go_pauses_exactly_during_stops():
    p = MotionProgram(1, (100.0, 100.0, 30.0, 60.0), (2.0, 1.0), "stop_go", stops=((10, 14),))
    steps = [p.position(f + 1) - p.position(f) for f in range(1, 30)]
    for f, s in zip(range(2, 31), steps):
        expect = [0, 0] if 10 <= f <= 14 else [2, 1]
        assert np.allclose(s, expect), f
    # 29 steps, five of them paused
    assert np.allclose(p.position(30) - p.position(1), [2 * 24, 24])


def test_sharp_turn_rotates_velocity_by_the_angle():
    p = MotionProgram(1, (100.0, 100.0, 30.0, 60.0), (3.0, 0.0), "sharp_turn", turn_angle_deg=90.0, turn_frame=20)
    before = p.position(20) - p.position(19)
    after = p.position(22) - p.position(21)
    assert np.allclose(before, [3, 0]) and np.allclose(after, [0, 3], atol=1e-12)
    assert np.allclose(p.position(21) - p.position(20), [0, 3], atol=1e-12)


def test_sinusoid_sways_across_the_heading():
    p = MotionProgram(1, (300.0, 50.0, 30.0, 60.0), (0.0, 2.0), "sinusoidal", amplitude=8.0, period=40.0)
    lateral = [p.position(f)[0] - 300.0 for f in range(1, 42)]
    assert max(lateral) == pytest.approx(8.0, abs=1e-9) and min(lateral) == pytest.approx(-8.0, abs=1e-9)
    assert np.allclose([p.position(f)[1] for f in range(1, 5)], [50, 52, 54, 56])


def test_unknown_kind_and_bad_spec_rejected():
    with pytest.raises(InvalidInputError):
        MotionProgram(1, (0, 0, 1, 1), kind="teleport")
    prog = MotionProgram(1, (0.0, 0.0, 10.0, 10.0))
    with pytest.raises(InvalidInputError):
        one(prog, frames=1)
    with pytest.raises(InvalidInputError):
        one(prog, miss_prob=1.5)
    with pytest.raises(InvalidInputError):
        ScenarioSpec(GEOM, 10, (prog, prog))


def test_lifetime_and_clamping():
    p = MotionProgram(1, (600.0, 100.0, 30.0, 60.0), (5.0, 0.0), start_frame=3, end_frame=8)
    gt = generate(one(p, 20))
    assert sorted(gt.boxes[1]) == list(range(3, 9))
    assert 1 in gt.clipped
    assert all(b[0] + b[2] <= 640 for b in gt.boxes[1].values())
    assert not in_bounds(p, 20, GEOM)


def test_trajectories_split_at_gaps():
    p = MotionProgram(1, (100.0, 100.0, 30.0, 60.0), (1.0, 0.0))
    gt = generate(one(p, 10))
    del gt.boxes[1][5]
    runs = gt.trajectories()
    assert [len(r) for _, r in runs] == [4, 5]


# -- detections -------------------------------------------------------------------


def test_noise_free_detections_equal_ground_truth():
    spec = replace(preset("linear", 1), det_noise_std=0.0)
    gt = generate(spec)
    dets = simulate_detections(gt, spec)
    for f, ds in dets.items():
        truth = sorted(tuple(gt.boxes[o][f]) for o in gt.boxes if f in gt.boxes[o])
        # corners are formed and differenced, so widths can move by an ulp
        assert np.allclose(sorted(tuple(d.box.as_array()) for d in ds), truth, rtol=0, atol=1e-9)
        assert all(d.score > 0.6 for d in ds)


def test_miss_probability_one_drops_everything():
    spec = replace(preset("linear", 1), miss_prob=1.0)
    dets = simulate_detections(generate(spec), spec)
    assert sum(len(d) for d in dets.values()) == 0


def test_miss_rate_is_binomial():
    spec = replace(preset("linear", 4), miss_prob=0.3)
    gt = generate(spec)
    n = sum(len(b) for b in gt.boxes.values())
    kept = sum(len(d) for d in simulate_detections(gt, spec).values())
    p = 1 - kept / n
    # four standard deviations of the binomial proportion
    assert abs(p - 0.3) < 4 * math.sqrt(0.3 * 0.7 / n)


def test_occlusion_modes():
    p = MotionProgram(1, (100.0, 100.0, 30.0, 60.0), (1.0, 0.0))
    spec = one(p, 20, occlusions=(Occlusion(1, 5, 7, "hide"), Occlusion(1, 10, 11, "dim")), det_noise_std=0.0)
    dets = simulate_detections(generate(spec), spec)
    assert [f for f in range(1, 21) if not dets[f]] == [5, 6, 7]
    assert all(0.4 < dets[f][0].score < 0.6 for f in (10, 11))
    assert all(dets[f][0].score > 0.6 for f in (1, 9, 12))


def test_clutter_is_low_score():
    spec = replace(preset("linear", 1), clutter_rate=3.0)
    dets = simulate_detections(generate(spec), spec)
    total = sum(len(d) for d in dets.values())
    n_gt = sum(len(b) for b in generate(spec).boxes.values())
    low = sum(d.score <= 0.6 for ds in dets.values() for d in ds)
    assert total > n_gt and low == total - n_gt
    assert all(d.score > 0.4 for ds in dets.values() for d in ds)


def test_detections_deterministic_in_seed():
    spec = preset("crossing", 2)
    gt = generate(spec)
    a, b = simulate_detections(gt, spec), simulate_detections(gt, spec)
    assert all([d.box for d in a[f]] == [d.box for d in b[f]] for f in a)
    c = simulate_detections(gt, replace(spec, seed=99))
    assert any([d.box for d in a[f]] != [d.box for d in c[f]] for f in a if a[f])


# -- presets ----------------------------------------------------------------------


@pytest.mark.parametrize("name", PRESETS)
@pytest.mark.parametrize("seed", range(3))
def test_presets_stay_in_frame(name, seed):
    spec = preset(name, seed)
    assert spec.name == name and spec.seed == seed
    assert generate(spec).clipped == set()
    assert preset(name, seed) == spec


def test_unknown_preset():
    with pytest.raises(InvalidInputError):
        preset("nope")


@pytest.mark.parametrize("seed", range(10))
def test_case_gaps(seed):
    for name, gap in (("case1", 3), ("case2", 25)):
        occ = preset(name, seed).occlusions
        assert len(occ) == 1 and occ[0].last - occ[0].first + 1 == gap and occ[0].mode == "hide"


@pytest.mark.parametrize("seed", range(10))
def test_case3_paths_cross(seed):
    spec = preset("case3", seed)
    gt = generate(spec)
    a, b = (gt.boxes[o] for o in sorted(gt.boxes))
    from tcmp.geometry import BoundingBox

    overlap = [f for f in range(1, 101) if iou(BoundingBox.from_array(a[f]), BoundingBox.from_array(b[f])) > 0.5]
    assert 50 in overlap
    occ = spec.occlusions[0]
    assert occ.first <= min(overlap) and max(overlap) <= occ.last


def test_case4_walkers_are_in_antiphase():
    spec = preset("case4", 0)
    a, b = spec.objects
    for f in range(1, 60):
        da = a.position(f)[0] - a.box[0]
        db = b.position(f)[0] - b.box[0]
        assert da == pytest.approx(-db, abs=1e-9)


def test_mixed_corpus_ranges():
    for seed in range(5):
        spec = preset("mixed_corpus", seed)
        assert 150 <= spec.frames <= 250 and 8 <= len(spec.objects) <= 20
        for p in spec.objects:
            assert 60 <= p.end_frame - p.start_frame + 1 <= 120


def test_event_frames_mark_turns_and_stops():
    turn = MotionProgram(1, (0.0, 0.0, 1.0, 1.0), kind="sharp_turn", turn_frame=20)
    stop = MotionProgram(2, (0.0, 0.0, 1.0, 1.0), kind="stop_go", stops=((30, 35),))
    plain = MotionProgram(3, (0.0, 0.0, 1.0, 1.0))
    ev = event_frames(one(turn, 60).__class__(GEOM, 60, (turn, stop, plain)), after=2)
    assert ev == {1: {21, 22, 23}, 2: {30, 31, 32, 36, 37, 38}}


# -- scenario files ---------------------------------------------------------------


@pytest.mark.parametrize("name", PRESETS)
def test_spec_dict_round_trip(name):
    spec = preset(name, 7)
    again = spec_from_dict(json.loads(json.dumps(spec_to_dict(spec))))
    assert again == spec


def test_malformed_spec_rejected():
    with pytest.raises(InvalidInputError):
        spec_from_dict({"frames": 10})
    with pytest.raises(InvalidInputError):
        spec_from_dict({"geometry": [640, 480], "frames": 10, "objects": [{"obj_id": 1}]})
