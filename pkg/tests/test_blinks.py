import itertools
import json
import math

import numpy as np
import pytest

from dfkit.blinks import (BlinkEvent, EarTrace, blink_features, detect_blinks, ear_trace,
                          eye_aspect_ratio, parse_landmark_lines, parse_landmarks)
from dfkit.errors import BadPointCount, DegenerateEye, MalformedLine, NonMonotoneFrameIndex
from dfkit.synth import eye_points


def line(frame, n=68, pts=None):
    pts = pts if pts is not None else [[float(i), float(i % 7)] for i in range(n)]
    return json.dumps({"frame": frame, "points": pts})


def face(ear_left, ear_right):
    pts = np.zeros((68, 2))
    pts[36:42] = eye_points(ear_right, 60, 70)
    pts[42:48] = eye_points(ear_left, 140, 70)
    return pts


def test_parse_one_frame():
    frames = list(parse_landmark_lines([line(0)]))
    assert len(frames) == 1 and frames[0].points.shape == (68, 2)


def test_parse_bad_count():
    with pytest.raises(BadPointCount):
        list(parse_landmark_lines([line(0, n=67)]))


def test_parse_non_monotone():
    with pytest.raises(NonMonotoneFrameIndex):
        list(parse_landmark_lines([line(0), line(2), line(1)]))


def test_parse_malformed_names_line(tmp_path):
    p = tmp_path / "l.jsonl"
    p.write_text(line(0) + "\n{oops\n")
    with pytest.raises(MalformedLine, match="line 2"):
        list(parse_landmarks(p))


def test_ear_closed():
    eye = [(0, 0), (1, 0), (3, 0), (4, 0), (3, 0), (1, 0)]
    assert eye_aspect_ratio(eye) == 0.0


def test_ear_hand_example():
    eye = [(0, 0), (1, 1), (3, 1), (4, 0), (3, -1), (1, -1)]
    assert eye_aspect_ratio(eye) == 0.5


def test_ear_degenerate():
    with pytest.raises(DegenerateEye):
        eye_aspect_ratio([(1, 1)] * 6)


def test_ear_scale_invariant(rng):
    for _ in range(200):
        eye = rng.normal(size=(6, 2))
        s = rng.uniform(0.01, 100)
        assert eye_aspect_ratio(eye * s) == pytest.approx(eye_aspect_ratio(eye), rel=1e-12)


def test_ear_trace_mean_of_eyes():
    frames = list(parse_landmark_lines([line(i, pts=face(0.3, 0.3).tolist()) for i in range(3)]))
    tr = ear_trace(frames, 30)
    assert len(tr) == 3
    assert tr.values == pytest.approx([0.3] * 3, abs=1e-12)


def test_ear_trace_matches_recomputation(rng):
    pts = rng.normal(50, 10, size=(25, 68, 2))
    frames = list(parse_landmark_lines([line(i, pts=p.tolist()) for i, p in enumerate(pts)]))
    tr = ear_trace(frames, 30)
    for i, p in enumerate(pts):
        def ear(e):
            return (math.dist(e[1], e[5]) + math.dist(e[2], e[4])) / (2 * math.dist(e[0], e[3]))
        assert tr.values[i] == pytest.approx((ear(p[42:48]) + ear(p[36:42])) / 2, rel=1e-12)


def test_ear_trace_degenerate_reports_frame():
    pts = face(0.3, 0.3)
    pts[42:48] = [5, 5]
    frames = list(parse_landmark_lines([line(0, pts=face(0.3, 0.3).tolist()), line(4, pts=pts.tolist())]))
    with pytest.raises(DegenerateEye, match="frame 4"):
        ear_trace(frames, 30)


def trace(values, fps=30.0):
    return EarTrace(fps, np.asarray(values, dtype=float))


def test_detect_single_blink():
    assert detect_blinks(trace([0.3, 0.3, 0.15, 0.15, 0.15, 0.3])) == [BlinkEvent(2, 4)]


def test_detect_none():
    assert detect_blinks(trace([0.3] * 50)) == []


def test_detect_short_run():
    assert detect_blinks(trace([0.1, 0.1]), min_consec=3) == []


def test_detect_run_at_end():
    assert detect_blinks(trace([0.3, 0.1, 0.1, 0.1])) == [BlinkEvent(1, 3)]


def runs_oracle(values, threshold, min_consec):
    out, pos = [], 0
    for below, grp in itertools.groupby(values, key=lambda v: v < threshold):
        n = len(list(grp))
        if below and n >= min_consec:
            out.append((pos, pos + n - 1))
        pos += n
    return out


def test_detect_matches_run_length_oracle(rng):
    for _ in range(200):
        values = rng.uniform(0, 0.4, rng.integers(1, 120))
        thr = rng.uniform(0.05, 0.35)
        mc = int(rng.integers(1, 5))
        got = [(e.start_frame, e.end_frame) for e in detect_blinks(trace(values), thr, mc)]
        assert got == runs_oracle(values, thr, mc)
        assert all(b[0] > a[1] for a, b in zip(got, got[1:]))
        assert all(e - s + 1 >= mc for s, e in got)


def test_lower_threshold_events_nest_inside_higher(rng):
    for _ in range(100):
        tr = trace(rng.uniform(0, 0.4, 200))
        hi = detect_blinks(tr, 0.25)
        for e in detect_blinks(tr, 0.15):
            assert any(h.start_frame <= e.start_frame and e.end_frame <= h.end_frame for h in hi)


def test_lower_threshold_can_split_a_run():
    # a brief partial reopening splits one blink into two at a stricter threshold
    tr = trace([0.3, 0.1, 0.1, 0.1, 0.15, 0.1, 0.1, 0.1, 0.3])
    assert len(detect_blinks(tr, 0.2)) == 1
    assert len(detect_blinks(tr, 0.12)) == 2


def test_features_rate():
    values = np.full(900, 0.3)
    events = [BlinkEvent(s, s + 3) for s in range(50, 900, 150)]
    f = blink_features(trace(values), events)
    assert len(events) == 6 and f.blinks_per_10s == 2.0
    assert f.mean_blink_duration_s == pytest.approx(4 / 30)
    assert f.mean_inter_blink_gap_s == pytest.approx(146 / 30)


def test_features_no_blinks():
    f = blink_features(trace([0.3] * 300), [])
    assert f.blinks_per_10s == 0 and f.mean_blink_duration_s == 0
    assert f.mean_inter_blink_gap_s == 10.0 and f.mean_ear == pytest.approx(0.3)


def test_features_rate_matches_run_count(rng):
    for _ in range(50):
        values = rng.uniform(0, 0.4, 300)
        tr = trace(values)
        f = blink_features(tr, detect_blinks(tr))
        assert f.blinks_per_10s == len(runs_oracle(values, 0.2, 3)) * 10 / 10.0
