import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tcmp.errors import InvalidInputError, MotParseError, UndefinedMetricError
from tcmp.evaluation import (
    MotRecord,
    aggregate,
    check_frame_range,
    evaluate,
    format_record,
    format_table,
    id_switch_count,
    idf1,
    mota,
    parse_line,
    per_frame_match,
    read_mot,
    reports_json,
    write_mot,
)

from _oracles import brute_clear, brute_idf1


def rec(frame, oid, x, y=0.0, w=10.0, h=20.0, conf=1.0):
    return MotRecord(frame, oid, float(x), float(y), float(w), float(h), conf)


# -- text I/O ---------------------------------------------------------------------


finite = st.floats(-1e4, 1e4, allow_nan=False)


@settings(max_examples=100)
@given(st.integers(1, 10**6), st.integers(-5, 10**6), finite, finite, st.floats(0.01, 1e4), st.floats(0.01, 1e4), st.floats(0, 1))
def test_record_line_round_trip(frame, oid, x, y, w, h, conf):
    r = MotRecord(frame, oid, x, y, w, h, conf)
    assert parse_line(format_record(r)) == r


def test_integral_values_written_without_decimals():
    assert format_record(rec(3, 7, 10, 20, 30, 40)) == "3,7,10,20,30,40,1,-1,-1,-1"


def test_file_round_trip_sorts(tmp_path):
    rows = [rec(2, 1, 5.5), rec(1, 2, 3), rec(1, 1, 0.25)]
    path = tmp_path / "r.txt"
    write_mot(rows, path)
    back = read_mot(path)
    assert back == sorted(rows, key=lambda r: (r.frame, r.id))
    assert not (tmp_path / "r.txt.tmp").exists()


@pytest.mark.parametrize(
    "line",
    ["1,2,3,4,5,6,1,-1,-1", "x,1,0,0,1,1,1,-1,-1,-1", "0,1,0,0,1,1,1,-1,-1,-1", "1,1,0,0,1,one,1,-1,-1,-1"],
)
def test_bad_lines_rejected(line):
    with pytest.raises(MotParseError):
        parse_line(line)


def test_duplicate_and_blank_lines(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("1,1,0,0,1,1,1,-1,-1,-1\n\n2,1,0,0,1,1,1,-1,-1,-1\n")
    assert len(read_mot(p)) == 2
    p.write_text("1,1,0,0,1,1,1,-1,-1,-1\n1,1,5,5,1,1,1,-1,-1,-1\n")
    with pytest.raises(MotParseError) as info:
        read_mot(p)
    assert info.value.line_number == 2


# -- CLEAR worked examples ----------------------------------------------------------------


def test_perfect_tracking():
    gt = [rec(f, i, 30 * i + f) for f in range(1, 6) for i in (1, 2)]
    r = evaluate(gt, gt)
    assert (r.mota, r.idf1, r.id_switches) == (1.0, 1.0, 0)


def test_alternating_ids_switch_every_frame():
    gt = [rec(f, 1, 0) for f in range(1, 11)]
    res = [rec(f, 1 + f % 2, 0) for f in range(1, 11)]
    corr = per_frame_match(gt, res)
    assert id_switch_count(corr) == 9
    assert mota(corr) == pytest.approx(1 - 9 / 10)


def test_single_switch_halves_idf1():
    gt = [rec(f, 1, 0) for f in range(1, 11)]
    res = [rec(f, 1 if f <= 5 else 2, 0) for f in range(1, 11)]
    r = evaluate(gt, res)
    assert r.id_switches == 1 and r.idf1 == pytest.approx(0.5)


def test_empty_results():
    gt = [rec(f, 1, 0) for f in range(1, 5)]
    r = evaluate(gt, [])
    assert r.mota == 0.0 and r.fn == 4 and r.idf1 == 0.0


def test_switch_counts_against_most_recent_match_across_a_gap():
    gt = [rec(f, 1, 0) for f in range(1, 7)]
    res = [rec(1, 5, 0), rec(2, 5, 0), rec(5, 5, 0), rec(6, 5, 0)]
    assert evaluate(gt, res).id_switches == 0
    res = [rec(1, 5, 0), rec(2, 5, 0), rec(5, 6, 0), rec(6, 6, 0)]
    assert evaluate(gt, res).id_switches == 1


def test_continuity_keeps_the_previous_pair():
    # frame 2: hypothesis 8 fits gt 1 better, but the frame-1 pair (1, 7) is still valid
    gt = [rec(1, 1, 0), rec(2, 1, 0)]
    res = [rec(1, 7, 0), rec(2, 7, 2), rec(2, 8, 0)]
    corr = per_frame_match(gt, res)
    assert corr[1].matches == [(1, 7)] and corr[1].fp == 1
    assert id_switch_count(corr) == 0


def test_iou_gate_is_inclusive():
    # IoU exactly 0.5: boxes [0, 10] and [0, 5] on x, same y
    gt = [rec(1, 1, 0, w=10)]
    assert evaluate(gt, [rec(1, 1, 0, w=5)]).tp == 1
    assert evaluate(gt, [rec(1, 1, 0, w=4.9)]).tp == 0


def test_undefined_without_ground_truth():
    with pytest.raises(UndefinedMetricError):
        evaluate([], [rec(1, 1, 0)])
    with pytest.raises(UndefinedMetricError):
        idf1([], [])
    gt = [rec(1, 1, 0, conf=0.0)]
    with pytest.raises(UndefinedMetricError):
        evaluate(gt, [], ignore_zero_conf=True)


def test_frame_range_check():
    gt = [rec(1, 1, 0), rec(3, 1, 0)]
    check_frame_range(gt, [rec(3, 1, 0)])
    with pytest.raises(InvalidInputError):
        check_frame_range(gt, [rec(4, 1, 0)])


# -- oracle equivalence on random micro-scenarios ------------------------------------------


def micro_scenario(seed):
    """Up to 3 objects over up to 10 frames; hypotheses drop, jitter, swap and hallucinate."""
    rng = np.random.default_rng([seed, 77])
    n_obj, n_frames = int(rng.integers(1, 4)), int(rng.integers(2, 11))
    gt, res = [], []
    pos = rng.uniform(0, 40, size=(n_obj, 2))
    vel = rng.uniform(-4, 4, size=(n_obj, 2))
    hyp_id = {i: i + 10 for i in range(n_obj)}
    for f in range(1, n_frames + 1):
        for i in range(n_obj):
            if rng.random() < 0.1:
                continue
            x, y = pos[i] + vel[i] * f
            gt.append(rec(f, i + 1, x, y))
            if rng.random() < 0.15:
                continue
            if rng.random() < 0.15:
                hyp_id[i] = int(rng.integers(10, 16))
            if hyp_id[i] in {r.id for r in res if r.frame == f}:
                continue
            jx, jy = rng.normal(0, 2.5, 2)
            res.append(rec(f, hyp_id[i], x + jx, y + jy))
        if rng.random() < 0.2:
            res.append(rec(f, 99, *rng.uniform(0, 40, 2)))
    return gt, res


@pytest.mark.parametrize("seed", range(20))
def test_metrics_match_brute_force(seed):
    gt, res = micro_scenario(seed)
    r = evaluate(gt, res)
    fp, fn, sw, n = brute_clear(gt, res)
    assert (r.fp, r.fn, r.id_switches, r.num_gt) == (fp, fn, sw, n)
    assert r.mota == 1 - (fp + fn + sw) / n
    assert r.idf1 == pytest.approx(brute_idf1(gt, res), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_metrics_invariant_to_relabeling(seed):
    gt, res = micro_scenario(seed)
    gmap = {k: 100 + 3 * k for k in {r.id for r in gt}}
    hmap = {k: 500 - k for k in {r.id for r in res}}
    gt2 = [MotRecord(r.frame, gmap[r.id], r.x, r.y, r.w, r.h) for r in gt]
    res2 = [MotRecord(r.frame, hmap[r.id], r.x, r.y, r.w, r.h) for r in res]
    a, b = evaluate(gt, res).to_dict(), evaluate(gt2, res2).to_dict()
    assert a == b


# -- reports ----------------------------------------------------------------------


def test_aggregate_pools_counts():
    gt = [rec(f, 1, 0) for f in range(1, 5)]
    r1 = evaluate(gt, gt, "a")
    r2 = evaluate(gt, [], "b")
    tot = aggregate([r1, r2])
    assert tot.num_gt == 8 and tot.tp == 4 and tot.fn == 4 and tot.mota == 0.5
    assert tot.idf1 == pytest.approx(2 * 4 / (8 + 4))
    table = format_table([r1, r2, tot]).splitlines()
    assert len(table) == 4 and len({len(line) for line in table}) == 1
    assert '"name": "a"' in reports_json([r1])
