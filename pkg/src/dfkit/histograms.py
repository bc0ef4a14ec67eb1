"""Per-video sequences of L1-normalized 256-bin grayscale histograms."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyFrame, EmptySource, ShapeMismatch, ZeroMass
from .media import FrameSequence

N_BINS = 256
SEQ_LEN = 300
CHUNK_LEN = 10
FHS_MAGIC = b"FHS1"


def frame_histogram(frame) -> np.ndarray:
    """Raw 256-bin count of sample values (int64)."""
    frame = np.asarray(frame)
    if frame.size == 0:
        raise EmptyFrame("cannot histogram an empty frame")
    return np.bincount(frame.ravel().astype(np.intp, copy=False), minlength=N_BINS)


def normalize_histogram(h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    total = h.sum()
    if not total > 0:
        raise ZeroMass("histogram has no mass")
    return h / total


def sample_indices(n_frames: int, target_len: int = SEQ_LEN) -> np.ndarray:
    """Frame index feeding each output row: uniform floor(i*N/T) sampling when
    the video is long enough, otherwise every frame then the last one repeated."""
    if n_frames < 1:
        raise EmptySource("video has no frames")
    i = np.arange(target_len)
    if n_frames >= target_len:
        return (i * n_frames) // target_len
    return np.minimum(i, n_frames - 1)


@dataclass(frozen=True, eq=False)
class HistogramSequence:
    video_id: str
    rows: np.ndarray  # (T, 256) float64
    chunk_len: int = CHUNK_LEN

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != N_BINS:
            raise ShapeMismatch(f"rows must be T x {N_BINS}, got {rows.shape}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    def __len__(self):
        return self.rows.shape[0]

    def __eq__(self, other):
        if not isinstance(other, HistogramSequence):
            return NotImplemented
        return self.video_id == other.video_id and np.array_equal(self.rows, other.rows)

    __hash__ = None


def build_histogram_sequence(video: FrameSequence, target_len: int = SEQ_LEN,
                             video_id: str = "") -> HistogramSequence:
    idx = sample_indices(video.n_frames, target_len)
    frames = video.frames[idx].reshape(target_len, -1).astype(np.intp)
    # one bincount over all selected frames, offset per row
    offsets = (np.arange(target_len, dtype=np.intp) * N_BINS)[:, None]
    counts = np.bincount((frames + offsets).ravel(), minlength=target_len * N_BINS)
    counts = counts.reshape(target_len, N_BINS)
    rows = counts / counts.sum(axis=1, keepdims=True)
    return HistogramSequence(video_id, rows)


def chunk_sequence(seq: HistogramSequence, chunk_len: int | None = None) -> list[np.ndarray]:
    chunk_len = chunk_len or seq.chunk_len
    if len(seq) % chunk_len:
        raise ShapeMismatch(f"{len(seq)} rows do not split into chunks of {chunk_len}")
    return [seq.rows[k:k + chunk_len] for k in range(0, len(seq), chunk_len)]


# --- file formats -----------------------------------------------------------

def to_json(seq: HistogramSequence) -> str:
    return json.dumps({"video_id": seq.video_id, "rows": seq.rows.tolist()})


def from_json(text: str) -> HistogramSequence:
    rec = json.loads(text)
    return HistogramSequence(rec["video_id"], np.asarray(rec["rows"], dtype=np.float64))


def to_fhs(seq: HistogramSequence) -> bytes:
    t, bins = seq.rows.shape
    return FHS_MAGIC + struct.pack("<II", t, bins) + seq.rows.astype("<f8").tobytes()


def from_fhs(data: bytes, video_id: str = "") -> HistogramSequence:
    if data[:4] != FHS_MAGIC:
        raise ShapeMismatch("missing FHS1 magic")
    t, bins = struct.unpack_from("<II", data, 4)
    payload = data[12:]
    if len(payload) != t * bins * 8:
        raise ShapeMismatch(f"payload holds {len(payload)} bytes, header says {t}x{bins} floats")
    rows = np.frombuffer(payload, dtype="<f8").reshape(t, bins)
    return HistogramSequence(video_id, rows)


def save_sequence(seq: HistogramSequence, path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(to_json(seq))
    else:
        path.write_bytes(to_fhs(seq))


def load_sequence(path) -> HistogramSequence:
    path = Path(path)
    if path.suffix == ".json":
        return from_json(path.read_text())
    return from_fhs(path.read_bytes(), path.stem)
