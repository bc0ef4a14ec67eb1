"""Command-line pipelines: synth, extract, blinks, train, predict, evaluate.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .blinks import blink_features, blink_report, detect_blinks, ear_trace, features_from_report, parse_landmarks
from .errors import DfkitError, EmptyDataset, UnknownVideoId
from .histograms import SEQ_LEN, build_histogram_sequence, load_sequence, save_sequence
from .knn import KnnModel, knn_fit, knn_predict
from .lstm import ModelConfig, best_epoch, load_model, predict_batch, save_model, train
from .media import read_frames
from .metrics import (
    Prediction,
    evaluate,
    label_value,
    log_loss,
    predictions_from_csv,
    predictions_to_csv,
    score_histogram,
    split_dataset,
    write_report,
)
from .synth import SynthTraceSpec, SynthVideoSpec, gen_dataset, spec_dict

log = logging.getLogger("dfkit")


class UsageError(Exception):
    pass


# --- shared helpers -------------------------------------------------------------

def load_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    with open(path) as f:
        manifest = json.load(f)
    if not isinstance(manifest, dict) or not manifest:
        raise EmptyDataset(f"{path} holds no videos")
    for vid, entry in manifest.items():
        if not isinstance(entry, dict) or entry.get("label") not in ("REAL", "FAKE"):
            raise DfkitError(f"manifest entry {vid!r} lacks a REAL/FAKE label")
    return manifest, path.parent


def _entry_path(base: Path, entry: dict, key: str, default: str) -> Path:
    return base / entry.get(key, default)


def write_run_config(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    # thread count and output location never influence artifact bytes
    skip = ("func", "config", "verbose", "threads", "out")
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()}
    doc = {"command": command, "version": __version__, "config": cfg}
    (out_dir / f"run_{command}.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _run_jobs(fn, items, threads: int):
    """Apply ``fn`` to each item; results come back in input order either way."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _report_failures(failures: list[tuple[str, str]]) -> int:
    if not failures:
        return 0
    print(f"{len(failures)} video(s) failed:", file=sys.stderr)
    for vid, msg in failures:
        print(f"  {vid}: {msg}", file=sys.stderr)
    return 1


def _out_dir(args) -> Path:
    if args.out is None:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


# --- subcommands ------------------------------------------------------------------

def cmd_synth(args) -> int:
    _require(args, "real", "fake")
    if args.real < 1 or args.fake < 1:
        raise UsageError("--real and --fake must be >= 1")
    out = _out_dir(args)
    vspec = SynthVideoSpec(width=args.width, height=args.height, n_frames=args.frames, fps=args.fps,
                           gamma=args.gamma, checker_amp=args.checker_amp,
                           checker_period=args.checker_period)
    real_t = SynthTraceSpec(duration_s=args.duration, fps=args.fps, blink_rate_per_10s=args.real_rate)
    fake_t = SynthTraceSpec(duration_s=args.duration, fps=args.fps, blink_rate_per_10s=args.fake_rate)
    gen_dataset(args.real, args.fake, out, args.seed, vspec, real_t, fake_t)
    write_run_config(out, "synth", args)
    (out / "synth_specs.json").write_text(json.dumps(
        {"video": spec_dict(vspec), "real_trace": spec_dict(real_t), "fake_trace": spec_dict(fake_t)},
        indent=1, sort_keys=True) + "\n")
    print(out / "manifest.json")
    return 0


def cmd_extract(args) -> int:
    _require(args, "manifest")
    manifest, base = load_manifest(args.manifest)
    out = _out_dir(args)
    suffix = ".json" if args.format == "json" else ".fhs"

    def job(vid):
        try:
            src = _entry_path(base, manifest[vid], "video", f"videos/{vid}.y4m")
            seq = build_histogram_sequence(read_frames(src), args.target_len, video_id=vid)
            save_sequence(seq, out / f"{vid}{suffix}")
            return None
        except (DfkitError, OSError) as e:
            return vid, str(e)

    failures = [r for r in _run_jobs(job, sorted(manifest), args.threads) if r]
    write_run_config(out, "extract", args)
    log.info("extracted %d/%d videos", len(manifest) - len(failures), len(manifest))
    return _report_failures(failures)


def cmd_blinks(args) -> int:
    _require(args, "manifest")
    manifest, base = load_manifest(args.manifest)
    out = _out_dir(args)

    def job(vid):
        entry = manifest[vid]
        try:
            fps = args.fps or entry.get("landmark_fps", 30.0)
            path = _entry_path(base, entry, "landmarks", f"landmarks/{vid}.jsonl")
            trace = ear_trace(parse_landmarks(path), fps)
            events = detect_blinks(trace, args.threshold, args.min_consec)
            rep = blink_report(vid, events, blink_features(trace, events), args.threshold, args.min_consec)
            (out / f"{vid}.json").write_text(json.dumps(rep, indent=1, sort_keys=True) + "\n")
            return None
        except (DfkitError, OSError) as e:
            return vid, str(e)

    failures = [r for r in _run_jobs(job, sorted(manifest), args.threads) if r]
    write_run_config(out, "blinks", args)
    return _report_failures(failures)


def _feature_file(features: Path, vid: str) -> Path:
    for suffix in (".fhs", ".json"):
        p = features / f"{vid}{suffix}"
        if p.exists():
            return p
    raise DfkitError(f"no feature file for {vid} in {features}")


def _load_hist(features: Path, vid: str) -> np.ndarray:
    return load_sequence(_feature_file(features, vid)).rows


def _load_blink(features: Path, vid: str):
    with open(features / f"{vid}.json") as f:
        return features_from_report(json.load(f))


def _write_metrics(path: Path, rows: list[dict]) -> None:
    cols = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(r[k]) if isinstance(r.get(k), float) else r.get(k, "") for k in cols})
    path.write_text(buf.getvalue())


def cmd_train(args) -> int:
    _require(args, "manifest", "features")
    manifest, _ = load_manifest(args.manifest)
    out = _out_dir(args)
    features = Path(args.features)
    train_ids, val_ids, test_ids = split_dataset(manifest, seed=args.seed)
    (out / "split.json").write_text(json.dumps(
        {"train": train_ids, "val": val_ids, "test": test_ids}, indent=1) + "\n")
    labels = {vid: label_value(e["label"]) for vid, e in manifest.items()}

    if args.model == "hist-lstm":
        config = ModelConfig(chunk_len=args.chunk_len, chunks_per_video=SEQ_LEN // args.chunk_len,
                             seed=args.seed)
        data = [(_load_hist(features, v), labels[v]) for v in train_ids]
        val = [(_load_hist(features, v), labels[v]) for v in val_ids]
        params, history = train(data, config, args.epochs, args.batch_size, val=val, lr=args.lr,
                                log=lambda r: log.info("epoch %(epoch)d train_loss %(train_loss).4f "
                                                       "train_acc %(train_acc).3f", r))
        meta = {"epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr, "seed": args.seed,
                "selected_epoch": best_epoch(history)}
        save_model(out / "model.json", params, config, meta)
    else:
        data = [(_load_blink(features, v), labels[v]) for v in train_ids]
        model = knn_fit(data, args.k)
        model.save(out / "model.json")

        def score(ids):
            preds = [Prediction(v, knn_predict(model, _load_blink(features, v))[1], labels[v]) for v in ids]
            return log_loss(preds), float(np.mean([(p.p_fake >= 0.5) == (p.label == 1) for p in preds]))

        (tl, ta), (vl, va) = score(train_ids), score(val_ids)
        history = [{"epoch": 1, "train_loss": tl, "train_acc": ta, "val_loss": vl, "val_acc": va}]
    _write_metrics(out / "metrics.csv", history)
    write_run_config(out, "train", args)
    print(out / "model.json")
    return 0


def _model_kind(path: Path) -> str:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") is not None:
        return "hist-lstm"
    if "k" in doc:
        return "blink-knn"
    raise DfkitError(f"{path} is not a recognised model file")


def cmd_predict(args) -> int:
    _require(args, "model_file", "features", "manifest")
    manifest, _ = load_manifest(args.manifest)
    features = Path(args.features)
    ids = sorted(manifest)
    if args.split_file:
        with open(args.split_file) as f:
            ids = sorted(json.load(f)[args.split])
    model_path = Path(args.model_file)
    if _model_kind(model_path) == "hist-lstm":
        params, config, _ = load_model(model_path)
        X = np.stack([_load_hist(features, v) for v in ids])
        probs = predict_batch(params, X, config.chunk_len)
    else:
        model = KnnModel.load(model_path)
        probs = [knn_predict(model, _load_blink(features, v))[1] for v in ids]
    text = predictions_to_csv([Prediction(v, float(p)) for v, p in zip(ids, probs)])
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        write_run_config(Path(args.out).parent, "predict", args)
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args) -> int:
    _require(args, "predictions", "manifest", "out")
    manifest, _ = load_manifest(args.manifest)
    preds = predictions_from_csv(Path(args.predictions).read_text())
    joined = []
    for p in preds:
        if p.video_id not in manifest:
            raise UnknownVideoId(f"prediction for unknown video {p.video_id!r}")
        joined.append(p._replace(label=label_value(manifest[p.video_id]["label"])))
    report = evaluate(joined, model_tag=args.tag)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    out.with_name(out.stem + "_scores.dat").write_text(score_histogram(joined))
    write_run_config(out.parent, "evaluate", args)
    print(f"accuracy {report.accuracy:.4f}  log_loss {report.log_loss:.6f}  n {report.n}")
    return 0


# --- parser -----------------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out")
    common.add_argument("--config", help="JSON file of option values; explicit flags win")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="dfkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["synth"] = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--real", type=int)
    p.add_argument("--fake", type=int)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--checker-amp", type=int, default=6)
    p.add_argument("--checker-period", type=int, default=2)
    p.add_argument("--duration", type=float, default=30.0, help="EAR trace length in seconds")
    p.add_argument("--real-rate", type=float, default=4.8, help="blinks per 10 s for real videos")
    p.add_argument("--fake-rate", type=float, default=2.2, help="blinks per 10 s for fake videos")
    p.set_defaults(func=cmd_synth)

    p = subs["extract"] = sub.add_parser("extract", parents=[common], help="histogram sequences per video")
    p.add_argument("--manifest")
    p.add_argument("--format", choices=("fhs", "json"), default="fhs")
    p.add_argument("--target-len", type=int, default=SEQ_LEN)
    p.set_defaults(func=cmd_extract)

    p = subs["blinks"] = sub.add_parser("blinks", parents=[common], help="blink reports per video")
    p.add_argument("--manifest")
    p.add_argument("--threshold", type=float, default=0.2)
    p.add_argument("--min-consec", type=int, default=3)
    p.add_argument("--fps", type=float, default=None, help="landmark frame rate (default: manifest, else 30)")
    p.set_defaults(func=cmd_blinks)

    p = subs["train"] = sub.add_parser("train", parents=[common], help="train a classifier")
    p.add_argument("--model", choices=("hist-lstm", "blink-knn"), default="hist-lstm")
    p.add_argument("--manifest")
    p.add_argument("--features", help="directory of histogram files or blink reports")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--chunk-len", type=int, default=10)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_train)

    p = subs["predict"] = sub.add_parser("predict", parents=[common], help="write video_id,p_fake CSV")
    p.add_argument("--model-file")
    p.add_argument("--features")
    p.add_argument("--manifest")
    p.add_argument("--split-file", help="split.json written by train")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(func=cmd_predict)

    p = subs["evaluate"] = sub.add_parser("evaluate", parents=[common], help="score predictions")
    p.add_argument("--predictions")
    p.add_argument("--manifest")
    p.add_argument("--tag", default="")
    p.set_defaults(func=cmd_evaluate)
    return parser, subs


def parse_args(argv=None) -> tuple[argparse.ArgumentParser, argparse.Namespace]:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config) as f:
                cfg = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            parser.error(f"cannot read --config: {e}")
        sp = subs[args.command]
        known = {a.dest for a in sp._actions}
        unknown = set(cfg) - known
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return parser, args


def main(argv=None) -> int:
    parser, args = parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except UsageError as e:
        parser.error(str(e))
    except (DfkitError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
