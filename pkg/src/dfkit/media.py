"""Frame sources: a YUV4MPEG2 subset, directories of PNG images, and raw
planar 8-bit gray files, all decoded to grayscale ``FrameSequence`` objects."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    DecodeError,
    DimensionMismatch,
    EmptySource,
    MalformedToken,
    MissingMagic,
    MissingRequiredToken,
    TruncatedFrame,
)

Y4M_MAGIC = b"YUV4MPEG2"
FRAME_MARKER = b"FRAME"

# BT.601 luma weights
LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """Ordered grayscale frames, stored as an ``(n, height, width)`` uint8 array."""

    width: int
    height: int
    fps_num: int
    fps_den: int
    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3 or frames.shape[0] < 1:
            raise EmptySource("a frame sequence needs at least one frame")
        if frames.shape[1:] != (self.height, self.width):
            raise DimensionMismatch(
                f"frames are {frames.shape[2]}x{frames.shape[1]}, "
                f"expected {self.width}x{self.height}"
            )
        if self.width < 1 or self.height < 1:
            raise DimensionMismatch("width and height must be >= 1")
        if self.fps_num <= 0 or self.fps_den <= 0:
            raise MalformedToken(f"invalid frame rate {self.fps_num}:{self.fps_den}")
        if frames.dtype != np.uint8:
            if frames.min() < 0 or frames.max() > 255:
                raise DecodeError("samples must lie in [0, 255]")
            frames = frames.astype(np.uint8)
        else:
            frames = frames.copy()
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def fps(self) -> float:
        return self.fps_num / self.fps_den

    def __len__(self):
        return self.n_frames

    def __eq__(self, other):
        if not isinstance(other, FrameSequence):
            return NotImplemented
        return (
            (self.width, self.height, self.fps_num, self.fps_den)
            == (other.width, other.height, other.fps_num, other.fps_den)
            and np.array_equal(self.frames, other.frames)
        )

    __hash__ = None


class RawHeader(NamedTuple):
    width: int
    height: int
    fps_num: int
    fps_den: int

    @classmethod
    def load(cls, path) -> RawHeader:
        with open(path) as f:
            rec = json.load(f)
        try:
            return cls(*(int(rec[k]) for k in cls._fields))
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedToken(f"bad raw_gray sidecar {path}: {e}") from None


@dataclass(frozen=True)
class SourceDescriptor:
    kind: str  # "y4m" | "png_dir" | "raw_gray"
    path: Path
    sidecar: RawHeader | None = None

    def __post_init__(self):
        if self.kind not in ("y4m", "png_dir", "raw_gray"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.kind == "raw_gray" and self.sidecar is None:
            raise ValueError("raw_gray sources require a sidecar header")
        if self.kind != "raw_gray" and self.sidecar is not None:
            raise ValueError(f"{self.kind} sources take no sidecar")
        object.__setattr__(self, "path", Path(self.path))

    @classmethod
    def from_path(cls, path) -> SourceDescriptor:
        """Infer the source kind from a path: directories are PNG sequences,
        ``.y4m`` files are Y4M, anything else is raw gray with a ``<path>.json`` sidecar."""
        path = Path(path)
        if path.is_dir():
            return cls("png_dir", path)
        if path.suffix.lower() == ".y4m":
            return cls("y4m", path)
        return cls("raw_gray", path, RawHeader.load(str(path) + ".json"))


class Y4MHeader(NamedTuple):
    width: int
    height: int
    fps_num: int
    fps_den: int
    colorspace: str


def parse_y4m_header(data: bytes) -> Y4MHeader:
    """Parse the stream header line. ``data`` may be the whole file; parsing
    stops at the first newline."""
    line = data.split(b"\n", 1)[0]
    tokens = line.split(b" ")
    if tokens[0] != Y4M_MAGIC:
        raise MissingMagic("stream does not start with YUV4MPEG2")
    params = {}
    for tok in tokens[1:]:
        if not tok:
            continue
        try:
            params[chr(tok[0])] = tok[1:].decode("ascii")
        except UnicodeDecodeError:
            raise MalformedToken(f"non-ASCII header token {tok!r}") from None
    for key in "WHF":
        if key not in params:
            raise MissingRequiredToken(key)
    try:
        width, height = int(params["W"]), int(params["H"])
        num, den = (int(v) for v in params["F"].split(":"))
    except ValueError:
        raise MalformedToken(f"bad W/H/F tokens in {line!r}") from None
    if width < 1 or height < 1 or num <= 0 or den <= 0:
        raise MalformedToken(f"non-positive W/H/F in {line!r}")
    if params.get("I", "p") not in ("p", "?"):
        raise MalformedToken("interlaced streams are not supported")
    return Y4MHeader(width, height, num, den, "C" + params.get("C", "420"))


def _chroma_samples(colorspace: str, width: int, height: int) -> int:
    cs = colorspace[1:]
    if cs.startswith("420"):
        return 2 * ((width + 1) // 2) * ((height + 1) // 2)
    if cs.startswith("422"):
        return 2 * ((width + 1) // 2) * height
    if cs.startswith("444") and not cs.startswith("444alpha"):
        return 2 * width * height
    if cs == "mono":
        return 0
    raise MalformedToken(f"unsupported colorspace {colorspace}")


def _read_y4m(path: Path) -> FrameSequence:
    data = path.read_bytes()
    hdr = parse_y4m_header(data)
    luma = hdr.width * hdr.height
    frame_size = luma + _chroma_samples(hdr.colorspace, hdr.width, hdr.height)
    pos = data.index(b"\n") + 1 if b"\n" in data else len(data)
    frames = []
    while pos < len(data):
        eol = data.find(b"\n", pos)
        if eol < 0 or not data.startswith(FRAME_MARKER, pos):
            raise MalformedToken(f"expected FRAME marker at byte {pos}")
        pos = eol + 1
        if pos + frame_size > len(data):
            raise TruncatedFrame(
                f"frame {len(frames)} has {len(data) - pos} bytes, needs {frame_size}"
            )
        frames.append(np.frombuffer(data, np.uint8, luma, pos).reshape(hdr.height, hdr.width))
        pos += frame_size
    if not frames:
        raise EmptySource(f"{path} holds no frames")
    return FrameSequence(hdr.width, hdr.height, hdr.fps_num, hdr.fps_den, np.stack(frames))


def rgb_to_gray(r, g, b):
    """BT.601 luma, rounded and clamped to [0, 255]. Works on scalars or arrays."""
    y = np.rint(LUMA_R * np.asarray(r, float) + LUMA_G * np.asarray(g, float) + LUMA_B * np.asarray(b, float))
    y = np.clip(y, 0, 255)
    if y.ndim == 0:
        return int(y)
    return y.astype(np.uint8)


def _decode_png(path: Path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise DecodeError(f"{path.name}: not a PNG")
            if im.info.get("interlace"):
                raise DecodeError(f"{path.name}: interlaced PNG not supported")
            if im.mode == "L":
                return np.asarray(im, dtype=np.uint8)
            if im.mode == "RGB":
                rgb = np.asarray(im, dtype=np.uint8)
                return rgb_to_gray(rgb[..., 0], rgb[..., 1], rgb[..., 2])
            raise DecodeError(f"{path.name}: unsupported PNG mode {im.mode}")
    except OSError as e:
        raise DecodeError(f"{path.name}: {e}") from None


def _read_png_dir(path: Path, fps=(30, 1)) -> FrameSequence:
    files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise EmptySource(f"{path} holds no PNG files")
    frames = [_decode_png(p) for p in files]
    shape = frames[0].shape
    for p, fr in zip(files, frames):
        if fr.shape != shape:
            raise DimensionMismatch(f"{p.name} is {fr.shape[1]}x{fr.shape[0]}, expected {shape[1]}x{shape[0]}")
    return FrameSequence(shape[1], shape[0], fps[0], fps[1], np.stack(frames))


def _read_raw_gray(path: Path, hdr: RawHeader) -> FrameSequence:
    data = path.read_bytes()
    plane = hdr.width * hdr.height
    if not data:
        raise EmptySource(f"{path} is empty")
    if len(data) % plane:
        raise TruncatedFrame(f"{len(data)} bytes is not a multiple of the {plane}-byte plane")
    frames = np.frombuffer(data, np.uint8).reshape(-1, hdr.height, hdr.width)
    return FrameSequence(hdr.width, hdr.height, hdr.fps_num, hdr.fps_den, frames)


def read_frames(src: SourceDescriptor | str | os.PathLike) -> FrameSequence:
    if not isinstance(src, SourceDescriptor):
        src = SourceDescriptor.from_path(src)
    if src.kind == "y4m":
        return _read_y4m(src.path)
    if src.kind == "png_dir":
        return _read_png_dir(src.path)
    return _read_raw_gray(src.path, src.sidecar)


def fps_fraction(fps) -> tuple[int, int]:
    f = Fraction(fps).limit_denominator(1001)
    return f.numerator, f.denominator
