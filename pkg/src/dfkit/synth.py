"""Synthetic ground truth for both pipelines.

Videos are animated value-noise luminance fields with mild sensor noise;
their fake twins go through a gamma transfer curve and get a checkerboard
stamped into the central quarter of each frame. EAR traces come from a
Poisson blink process and can be rendered as 68-point landmark JSONL.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .blinks import EarTrace
from .media import FrameSequence, fps_fraction

KEYFRAME_INTERVAL = 30  # frames between independent noise lattices
LATTICE_CELL = 16       # pixels per value-noise lattice cell
SENSOR_SIGMA = 2.0
EAR_JITTER = 0.01


@dataclass(frozen=True)
class SynthVideoSpec:
    width: int = 64
    height: int = 64
    n_frames: int = 300
    fps: float = 30.0
    base_seed: int = 0
    fake: bool = False
    gamma: float = 0.9
    checker_amp: int = 6
    checker_period: int = 2

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.n_frames < 1 or self.fps <= 0:
            raise ValueError(f"invalid video spec {self}")
        if self.gamma <= 0 or not 0 <= self.checker_amp <= 32 or self.checker_period < 1:
            raise ValueError(f"invalid artifact parameters {self}")


@dataclass(frozen=True)
class SynthTraceSpec:
    duration_s: float = 30.0
    fps: float = 30.0
    blink_rate_per_10s: float = 4.8
    open_ear: float = 0.30
    closed_ear: float = 0.08
    blink_len_frames: tuple[int, int] = (3, 9)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.blink_len_frames
        if self.duration_s <= 0 or self.fps <= 0 or self.blink_rate_per_10s < 0 or not 1 <= lo <= hi:
            raise ValueError(f"invalid trace spec {self}")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.fps))


# --- videos -----------------------------------------------------------------

def _smooth(t):
    return t * t * (3.0 - 2.0 * t)


def _value_noise(lattice: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear smoothstep interpolation of a (gy, gx) lattice up to height x width."""
    gy, gx = lattice.shape
    ys = np.arange(height) / LATTICE_CELL
    xs = np.arange(width) / LATTICE_CELL
    y0, x0 = ys.astype(int), xs.astype(int)
    ty, tx = _smooth(ys - y0)[:, None], _smooth(xs - x0)[None, :]
    y1, x1 = np.minimum(y0 + 1, gy - 1), np.minimum(x0 + 1, gx - 1)
    top = lattice[np.ix_(y0, x0)] * (1 - tx) + lattice[np.ix_(y0, x1)] * tx
    bottom = lattice[np.ix_(y1, x0)] * (1 - tx) + lattice[np.ix_(y1, x1)] * tx
    return top * (1 - ty) + bottom * ty


def _base_frames(spec: SynthVideoSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.base_seed)
    gy = spec.height // LATTICE_CELL + 2
    gx = spec.width // LATTICE_CELL + 2
    n_keys = (spec.n_frames - 1) // KEYFRAME_INTERVAL + 2
    # per-video exposure: brightness floor and contrast span
    lo = rng.uniform(20.0, 90.0)
    span = rng.uniform(90.0, 150.0)
    keys = [_value_noise(lo + span * rng.random((gy, gx)), spec.width, spec.height)
            for _ in range(n_keys)]
    frames = np.empty((spec.n_frames, spec.height, spec.width))
    for t in range(spec.n_frames):
        k, r = divmod(t, KEYFRAME_INTERVAL)
        a = _smooth(r / KEYFRAME_INTERVAL)
        frames[t] = keys[k] * (1 - a) + keys[k + 1] * a
    frames += rng.normal(0.0, SENSOR_SIGMA, frames.shape)
    return np.clip(np.rint(frames), 0, 255)


def checkerboard(width: int, height: int, amp: int, period: int) -> np.ndarray:
    """+amp/-amp checkerboard confined to the centered half-width x half-height box."""
    pattern = np.zeros((height, width), dtype=np.int16)
    y0, x0 = height // 4, width // 4
    h, w = height - 2 * y0, width - 2 * x0
    yy, xx = np.mgrid[0:h, 0:w]
    pattern[y0:y0 + h, x0:x0 + w] = np.where((yy // period + xx // period) % 2 == 0, amp, -amp)
    return pattern


def apply_fake_artifacts(frames: np.ndarray, gamma: float, amp: int, period: int) -> np.ndarray:
    lut = np.rint(255.0 * (np.arange(256) / 255.0) ** gamma)
    out = lut[frames.astype(np.intp)]
    if amp:
        out = out + checkerboard(frames.shape[2], frames.shape[1], amp, period)
    return np.clip(out, 0, 255)


def gen_video(spec: SynthVideoSpec) -> FrameSequence:
    frames = _base_frames(spec)
    if spec.fake:
        frames = apply_fake_artifacts(frames, spec.gamma, spec.checker_amp, spec.checker_period)
    num, den = fps_fraction(spec.fps)
    return FrameSequence(spec.width, spec.height, num, den, frames.astype(np.uint8))


def y4m_bytes(seq: FrameSequence) -> bytes:
    """Monochrome content as C420 Y4M, chroma planes fixed at 128."""
    header = f"YUV4MPEG2 W{seq.width} H{seq.height} F{seq.fps_num}:{seq.fps_den} Ip A1:1 C420\n"
    chroma = bytes([128]) * (2 * ((seq.width + 1) // 2) * ((seq.height + 1) // 2))
    parts = [header.encode("ascii")]
    for frame in seq.frames:
        parts += [b"FRAME\n", frame.tobytes(), chroma]
    return b"".join(parts)


def write_y4m(seq: FrameSequence, path) -> None:
    Path(path).write_bytes(y4m_bytes(seq))


# --- EAR traces -------------------------------------------------------------

def blink_intervals(spec: SynthTraceSpec, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Non-overlapping (start, end) blink intervals, inclusive. The count is
    Poisson with mean rate*duration; onsets are uniform, and an onset that
    would touch an earlier blink (no open frame between) is redrawn."""
    n = spec.n_frames
    lo, hi = spec.blink_len_frames
    count = rng.poisson(spec.blink_rate_per_10s / 10.0 * spec.duration_s)
    closed = np.zeros(n + 2, dtype=bool)  # padded by one frame on each side
    out = []
    for _ in range(count):
        for _attempt in range(1000):
            length = int(rng.integers(lo, hi + 1))
            if length > n:
                break
            start = int(rng.integers(0, n - length + 1))
            if not closed[start:start + length + 2].any():
                closed[start + 1:start + length + 1] = True
                out.append((start, start + length - 1))
                break
    return sorted(out)


def gen_ear_trace(spec: SynthTraceSpec) -> tuple[EarTrace, list[tuple[int, int]]]:
    rng = np.random.default_rng(spec.seed)
    intervals = blink_intervals(spec, rng)
    values = np.full(spec.n_frames, spec.open_ear)
    for s, e in intervals:
        values[s:e + 1] = spec.closed_ear
    values = np.maximum(values + rng.normal(0.0, EAR_JITTER, spec.n_frames), 0.0)
    return EarTrace(spec.fps, values), intervals


# Neutral 68-point face on a 200x200 canvas; only the eye points move.
def _face_template() -> np.ndarray:
    pts = np.zeros((68, 2))
    a = np.linspace(np.pi * 0.95, np.pi * 0.05, 17)
    pts[0:17] = np.c_[100 + 80 * np.cos(a), 100 + 90 * np.sin(a)]     # jaw
    pts[17:27] = np.c_[np.r_[np.linspace(45, 85, 5), np.linspace(115, 155, 5)], np.full(10, 55.0)]
    pts[27:36] = np.c_[[100, 100, 100, 100, 88, 94, 100, 106, 112],
                       [70, 80, 90, 100, 110, 112, 114, 112, 110]]   # nose
    m = np.linspace(0, 2 * np.pi, 20, endpoint=False)
    pts[48:68] = np.c_[100 + 25 * np.cos(m), 145 + 10 * np.sin(m)]   # mouth
    return pts


_FACE = _face_template()
_EYE_WIDTH = 30.0
_EYE_CENTERS = ((slice(36, 42), 65.0, 75.0), (slice(42, 48), 135.0, 75.0))


def eye_points(ear: float, cx: float, cy: float, width: float = _EYE_WIDTH) -> np.ndarray:
    """Six landmarks whose EAR is exactly 2*lid/width = ``ear``."""
    lid = ear * width / 2.0
    half, third = width / 2.0, width / 6.0
    return np.array([
        [cx - half, cy],
        [cx - third, cy - lid],
        [cx + third, cy - lid],
        [cx + half, cy],
        [cx + third, cy + lid],
        [cx - third, cy + lid],
    ])


def render_landmarks(trace: EarTrace) -> str:
    lines = []
    for i, ear in enumerate(trace.values):
        pts = _FACE.copy()
        for sl, cx, cy in _EYE_CENTERS:
            pts[sl] = eye_points(float(ear), cx, cy)
        lines.append(json.dumps({"frame": i, "points": pts.tolist()}))
    return "\n".join(lines) + "\n"


# --- datasets ---------------------------------------------------------------

def _job_seed(seed: int, index: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, index, stream]).generate_state(1, np.uint64)[0])


def video_id(index: int) -> str:
    return f"vid{index:05d}"


def gen_dataset(n_real: int, n_fake: int, out_dir, seed: int = 0,
                video_spec: SynthVideoSpec | None = None,
                real_trace: SynthTraceSpec | None = None,
                fake_trace: SynthTraceSpec | None = None) -> dict:
    """Write ``videos/<id>.y4m``, ``landmarks/<id>.jsonl`` and ``manifest.json``.
    Videos 0..n_real-1 are REAL, the rest FAKE. Every job seeds from (seed, index)."""
    if n_real < 1 or n_fake < 1:
        raise ValueError("need at least one real and one fake video")
    video_spec = video_spec or SynthVideoSpec()
    real_trace = real_trace or SynthTraceSpec(blink_rate_per_10s=4.8)
    fake_trace = fake_trace or SynthTraceSpec(blink_rate_per_10s=2.2)
    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    (out / "landmarks").mkdir(parents=True, exist_ok=True)
    manifest = {}
    for index in range(n_real + n_fake):
        vid = video_id(index)
        fake = index >= n_real
        vspec = replace(video_spec, base_seed=_job_seed(seed, index, 0), fake=fake)
        write_y4m(gen_video(vspec), out / "videos" / f"{vid}.y4m")
        tspec = replace(fake_trace if fake else real_trace, seed=_job_seed(seed, index, 1))
        trace, _ = gen_ear_trace(tspec)
        (out / "landmarks" / f"{vid}.jsonl").write_text(render_landmarks(trace))
        manifest[vid] = {
            "label": "FAKE" if fake else "REAL",
            "video": f"videos/{vid}.y4m",
            "landmarks": f"landmarks/{vid}.jsonl",
            "landmark_fps": tspec.fps,
        }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def spec_dict(spec) -> dict:
    d = asdict(spec)
    if "blink_len_frames" in d:
        d["blink_len_frames"] = list(d["blink_len_frames"])
    return d


def gen_separable_histograms(n_real: int, n_fake: int, seq_len: int = 300, n_bins: int = 256,
                             seed: int = 0) -> list[tuple[np.ndarray, int]]:
    """Histogram sequences split by a hyperplane: real rows put their mass in
    the lower half of the bins, fake rows in the upper half."""
    rng = np.random.default_rng(seed)
    half = n_bins // 2
    out = []
    for label in [0] * n_real + [1] * n_fake:
        rows = np.zeros((seq_len, n_bins))
        mass = rng.random((seq_len, half)) + 0.05
        if label:
            rows[:, half:] = mass[:, : n_bins - half]
        else:
            rows[:, :half] = mass
        out.append((rows / rows.sum(axis=1, keepdims=True), label))
    return out
