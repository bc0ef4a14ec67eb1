"""Competition-style scoring (clipped log loss, accuracy, confusion counts),
stratified dataset splitting, and report / prediction file I/O."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import EmptyInput, MalformedReport, MissingLabels, TooFewVideos

CLIP_EPS = 1e-15
DEFAULT_RATIOS = (0.70, 0.15, 0.15)


class Prediction(NamedTuple):
    video_id: str
    p_fake: float
    label: int | None = None


def _checked(preds: Sequence[Prediction]) -> list[Prediction]:
    preds = list(preds)
    if not preds:
        raise EmptyInput("no predictions")
    if any(p.label is None for p in preds):
        raise MissingLabels("every prediction needs a label")
    return preds


def log_loss(preds: Sequence[Prediction]) -> float:
    preds = _checked(preds)
    p = np.clip(np.array([x.p_fake for x in preds], dtype=np.float64), CLIP_EPS, 1 - CLIP_EPS)
    y = np.array([x.label for x in preds], dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def accuracy(preds: Sequence[Prediction], threshold: float = 0.5) -> float:
    preds = _checked(preds)
    return sum((x.p_fake >= threshold) == (x.label == 1) for x in preds) / len(preds)


def confusion(preds: Sequence[Prediction], threshold: float = 0.5) -> dict[str, int]:
    """Counts with FAKE as the positive class."""
    preds = _checked(preds)
    c = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for x in preds:
        fake_pred = x.p_fake >= threshold
        if x.label == 1:
            c["tp" if fake_pred else "fn"] += 1
        else:
            c["fp" if fake_pred else "tn"] += 1
    return c


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    log_loss: float
    confusion: dict
    n: int
    model_tag: str

    def __post_init__(self):
        if set(self.confusion) != {"tp", "fp", "tn", "fn"}:
            raise MalformedReport(f"confusion keys {sorted(self.confusion)}")
        if sum(self.confusion.values()) != self.n:
            raise MalformedReport(f"confusion counts sum to {sum(self.confusion.values())}, n={self.n}")
        if not 0.0 <= self.accuracy <= 1.0 or not self.log_loss >= 0.0:
            raise MalformedReport("accuracy outside [0,1] or negative log loss")


def evaluate(preds: Sequence[Prediction], model_tag: str = "", threshold: float = 0.5) -> EvalReport:
    preds = _checked(preds)
    return EvalReport(accuracy(preds, threshold), log_loss(preds), confusion(preds, threshold),
                      len(preds), model_tag)


_REPORT_FIELDS = {"accuracy": float, "log_loss": float, "confusion": dict, "n": int, "model_tag": str}


def report_to_json(report: EvalReport) -> str:
    return json.dumps(asdict(report), indent=1, sort_keys=True) + "\n"


def report_from_json(text: str) -> EvalReport:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedReport(str(e)) from None
    if not isinstance(rec, dict) or set(rec) != set(_REPORT_FIELDS):
        raise MalformedReport(f"report fields {sorted(rec) if isinstance(rec, dict) else rec!r}")
    for key, typ in _REPORT_FIELDS.items():
        ok = isinstance(rec[key], typ) or (typ is float and isinstance(rec[key], int))
        if not ok or isinstance(rec[key], bool):
            raise MalformedReport(f"field {key} has type {type(rec[key]).__name__}")
    conf = rec["confusion"]
    if any(not isinstance(v, int) or isinstance(v, bool) or v < 0 for v in conf.values()):
        raise MalformedReport("confusion counts must be non-negative integers")
    rec["accuracy"], rec["log_loss"] = float(rec["accuracy"]), float(rec["log_loss"])
    return EvalReport(**rec)


def write_report(report: EvalReport, path) -> None:
    with open(path, "w") as f:
        f.write(report_to_json(report))


def read_report(path) -> EvalReport:
    with open(path) as f:
        return report_from_json(f.read())


# --- predictions CSV ----------------------------------------------------------

def predictions_to_csv(preds: Sequence[Prediction]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["video_id", "p_fake"])
    for p in preds:
        w.writerow([p.video_id, repr(float(p.p_fake))])
    return buf.getvalue()


def predictions_from_csv(text: str) -> list[Prediction]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["video_id", "p_fake"]:
        raise MalformedReport("predictions CSV must start with header video_id,p_fake")
    out = []
    for line_no, row in enumerate(rows[1:], 2):
        if not row:
            continue
        try:
            vid, p = row[0], float(row[1])
        except (IndexError, ValueError):
            raise MalformedReport(f"line {line_no}: bad row {row!r}") from None
        if not 0.0 <= p <= 1.0:
            raise MalformedReport(f"line {line_no}: p_fake {p} outside [0,1]")
        out.append(Prediction(vid, p))
    return out


# --- splitting ------------------------------------------------------------------

def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    exact = [r * n for r in ratios]
    # guard against 0.7 * 20 landing a hair under 14
    counts = [math.floor(e + 1e-9) for e in exact]
    order = sorted(range(len(ratios)), key=lambda j: (-(exact[j] - counts[j]), j))
    for j in order[: n - sum(counts)]:
        counts[j] += 1
    return counts


def _label_of(entry) -> str:
    return entry["label"] if isinstance(entry, Mapping) else entry


def split_dataset(manifest: Mapping, ratios: Sequence[float] = DEFAULT_RATIOS,
                  seed: int = 0) -> tuple[list[str], list[str], list[str]]:
    """Stratified seeded split into (train, val, test) id lists, each sorted.

    Split sizes follow a largest-remainder rounding of ``ratios * n``; every
    label's share of each split is the floor or ceiling of its exact share."""
    if not manifest:
        raise EmptyInput("empty manifest")
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be non-negative and sum to 1, got {ratios}")
    groups: dict[str, list[str]] = {}
    for vid in sorted(manifest):
        groups.setdefault(_label_of(manifest[vid]), []).append(vid)
    labels = sorted(groups)
    n = len(manifest)
    targets = _largest_remainder(n, ratios)
    k = len(ratios)

    alloc = {lab: [math.floor(r * len(groups[lab]) + 1e-9) for r in ratios] for lab in labels}
    need = [targets[j] - sum(alloc[lab][j] for lab in labels) for j in range(k)]
    for lab in labels:
        extra = len(groups[lab]) - sum(alloc[lab])
        frac = [r * len(groups[lab]) - alloc[lab][j] for j, r in enumerate(ratios)]
        for j in sorted(range(k), key=lambda j: (-need[j], -frac[j], j))[:extra]:
            alloc[lab][j] += 1
            need[j] -= 1
    if any(need):
        raise RuntimeError(f"could not balance split sizes {targets}")

    rng = np.random.default_rng(seed)
    splits: list[list[str]] = [[] for _ in range(k)]
    for lab in labels:
        ids = [groups[lab][i] for i in rng.permutation(len(groups[lab]))]
        pos = 0
        for j in range(k):
            splits[j] += ids[pos:pos + alloc[lab][j]]
            pos += alloc[lab][j]
    if any(not s for s in splits):
        raise TooFewVideos(f"{n} videos leave a split empty (sizes {[len(s) for s in splits]})")
    return tuple(sorted(s) for s in splits)


def label_value(label) -> int:
    if label in ("FAKE", 1, True):
        return 1
    if label in ("REAL", 0, False):
        return 0
    raise ValueError(f"unknown label {label!r}")


def score_histogram(preds: Sequence[Prediction], bins: int = 20) -> str:
    """gnuplot-friendly table: bin_lo bin_hi n_real n_fake."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    p = np.array([x.p_fake for x in preds])
    y = np.array([x.label for x in preds])
    lines = ["# bin_lo bin_hi n_real n_fake"]
    for lo, hi in zip(edges[:-1], edges[1:]):
        inside = (p >= lo) & ((p < hi) if hi < 1.0 else (p <= hi))
        lines.append(f"{lo:.3f} {hi:.3f} {int(np.sum(inside & (y == 0)))} {int(np.sum(inside & (y == 1)))}")
    return "\n".join(lines) + "\n"
