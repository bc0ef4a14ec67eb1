"""Eye-aspect-ratio traces from 68-point facial landmarks, run-length blink
detection, and per-video blink statistics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import BadPointCount, DegenerateEye, MalformedLine, NonMonotoneFrameIndex

N_POINTS = 68
RIGHT_EYE = slice(36, 42)
LEFT_EYE = slice(42, 48)

DEFAULT_THRESHOLD = 0.2
DEFAULT_MIN_CONSEC = 3


@dataclass(frozen=True)
class LandmarkFrame:
    frame_index: int
    points: np.ndarray  # (68, 2)


@dataclass(frozen=True, eq=False)
class EarTrace:
    fps: float
    values: np.ndarray

    @property
    def duration_s(self) -> float:
        return len(self.values) / self.fps

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class BlinkEvent:
    start_frame: int
    end_frame: int  # inclusive

    @property
    def duration_frames(self) -> int:
        return self.end_frame - self.start_frame + 1


@dataclass(frozen=True)
class BlinkFeatures:
    blinks_per_10s: float
    mean_blink_duration_s: float
    mean_inter_blink_gap_s: float
    mean_ear: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.blinks_per_10s, self.mean_blink_duration_s,
                         self.mean_inter_blink_gap_s, self.mean_ear])

    def to_dict(self) -> dict:
        return asdict(self)


def parse_landmark_lines(lines: Iterable[str]) -> Iterator[LandmarkFrame]:
    last = -1
    for line_no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            idx = rec["frame"]
            pts = np.asarray(rec["points"], dtype=np.float64)
        except (ValueError, KeyError, TypeError) as e:
            raise MalformedLine(str(e), line_no) from None
        if not isinstance(idx, int) or idx < 0:
            raise MalformedLine(f"bad frame index {idx!r}", line_no)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise MalformedLine("points must be [x, y] pairs", line_no)
        if pts.shape[0] != N_POINTS:
            raise BadPointCount(f"line {line_no}: {pts.shape[0]} points, expected {N_POINTS}")
        if idx <= last:
            raise NonMonotoneFrameIndex(f"line {line_no}: frame {idx} after frame {last}")
        last = idx
        yield LandmarkFrame(idx, pts)


def parse_landmarks(path) -> Iterator[LandmarkFrame]:
    with open(path) as f:
        yield from parse_landmark_lines(f)


def eye_aspect_ratio(eye) -> float:
    """EAR of six eye landmarks ordered corner, upper lid x2, corner, lower lid x2."""
    p = np.asarray(eye, dtype=np.float64)
    horizontal = math.dist(p[0], p[3])
    if horizontal == 0:
        raise DegenerateEye("eye corners coincide")
    return (math.dist(p[1], p[5]) + math.dist(p[2], p[4])) / (2.0 * horizontal)


def ear_trace(frames: Iterable[LandmarkFrame], fps: float) -> EarTrace:
    values = []
    for fr in frames:
        try:
            left = eye_aspect_ratio(fr.points[LEFT_EYE])
            right = eye_aspect_ratio(fr.points[RIGHT_EYE])
        except DegenerateEye:
            raise DegenerateEye("eye corners coincide", fr.frame_index) from None
        values.append((left + right) / 2)
    if not values:
        raise MalformedLine("landmark stream is empty")
    return EarTrace(fps, np.asarray(values))


def detect_blinks(trace: EarTrace, threshold: float = DEFAULT_THRESHOLD,
                  min_consec: int = DEFAULT_MIN_CONSEC) -> list[BlinkEvent]:
    if threshold <= 0 or min_consec < 1:
        raise ValueError("threshold must be > 0 and min_consec >= 1")
    events = []
    run_start = None
    for i, v in enumerate(trace.values):
        if v < threshold:
            if run_start is None:
                run_start = i
        elif run_start is not None:
            if i - run_start >= min_consec:
                events.append(BlinkEvent(run_start, i - 1))
            run_start = None
    if run_start is not None and len(trace.values) - run_start >= min_consec:
        events.append(BlinkEvent(run_start, len(trace.values) - 1))
    return events


def blink_features(trace: EarTrace, events: list[BlinkEvent]) -> BlinkFeatures:
    """Gap is the open-eye interval between consecutive blinks (end of one to
    start of the next, exclusive); with fewer than two blinks it is the trace duration."""
    duration = trace.duration_s
    fps = trace.fps
    if events:
        mean_len = sum(e.duration_frames for e in events) / len(events) / fps
    else:
        mean_len = 0.0
    if len(events) >= 2:
        gaps = [b.start_frame - a.end_frame - 1 for a, b in zip(events, events[1:])]
        mean_gap = sum(gaps) / len(gaps) / fps
    else:
        mean_gap = duration
    return BlinkFeatures(
        blinks_per_10s=len(events) * 10 / duration,
        mean_blink_duration_s=mean_len,
        mean_inter_blink_gap_s=mean_gap,
        mean_ear=float(np.mean(trace.values)),
    )


def blink_report(video_id: str, events: list[BlinkEvent], features: BlinkFeatures,
                 threshold: float, min_consec: int) -> dict:
    return {
        "video_id": video_id,
        "blinks": [{"start": e.start_frame, "end": e.end_frame} for e in events],
        "features": features.to_dict(),
        "params": {"threshold": threshold, "min_consec": min_consec},
    }


def features_from_report(rec: dict) -> BlinkFeatures:
    return BlinkFeatures(**rec["features"])
