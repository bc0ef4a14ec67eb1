"""Stateful LSTM sequence classifier written directly in numpy.

Architecture: LSTM(64) over the histogram rows, state carried across
10-row chunks, final hidden state -> dense(128, ReLU) -> dense(64, ReLU) ->
sigmoid unit giving p(fake). Trained with exact BPTT and Adam.

Gate blocks inside the stacked LSTM tensors are ordered input, forget,
output, candidate.
"""

from __future__ import annotations

import base64
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import EmptyDataset, ModelFormatError, ShapeMismatch, VersionMismatch

FORMAT_TAG = "fsv1"
FORMAT_VERSION = 1
TENSOR_ORDER = ("W", "U", "b", "W1", "b1", "W2", "b2", "Wo", "bo")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 256
    lstm_units: int = 64
    dense1_units: int = 128
    dense2_units: int = 64
    chunk_len: int = 10
    chunks_per_video: int = 30
    seed: int = 0

    def __post_init__(self):
        sizes = (self.input_dim, self.lstm_units, self.dense1_units, self.dense2_units,
                 self.chunk_len, self.chunks_per_video)
        if min(sizes) < 1:
            raise ShapeMismatch(f"all sizes must be >= 1: {self}")

    @property
    def seq_len(self) -> int:
        return self.chunk_len * self.chunks_per_video

    def shapes(self) -> dict[str, tuple[int, ...]]:
        H = self.lstm_units
        return {
            "W": (4 * H, self.input_dim),
            "U": (4 * H, H),
            "b": (4 * H,),
            "W1": (self.dense1_units, H),
            "b1": (self.dense1_units,),
            "W2": (self.dense2_units, self.dense1_units),
            "b2": (self.dense2_units,),
            "Wo": (1, self.dense2_units),
            "bo": (1,),
        }


Params = dict  # tensor name -> float64 array, keys in TENSOR_ORDER


class LstmState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


def init_params(config: ModelConfig) -> Params:
    """Glorot-uniform weights, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in config.shapes().items():
        if len(shape) == 2:
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
        else:
            params[name] = np.zeros(shape)
    H = config.lstm_units
    params["b"][H:2 * H] = 1.0
    return params


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def zero_state(units: int, batch: int | None = None) -> LstmState:
    shape = (units,) if batch is None else (batch, units)
    return LstmState(np.zeros(shape), np.zeros(shape))


def _cell(params, h, c, x):
    H = h.shape[-1]
    z = x @ params["W"].T + h @ params["U"].T + params["b"]
    gates = np.empty_like(z)
    gates[..., :3 * H] = sigmoid(z[..., :3 * H])
    gates[..., 3 * H:] = np.tanh(z[..., 3 * H:])
    i, f, o, g = (gates[..., k * H:(k + 1) * H] for k in range(4))
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    return h_new, c_new, gates, tanh_c


def lstm_step(params: Params, state: LstmState, x) -> tuple[LstmState, np.ndarray]:
    h, c, _, _ = _cell(params, state.h, state.c, np.asarray(x, dtype=np.float64))
    return LstmState(h, c), h


class ForwardCache(NamedTuple):
    X: np.ndarray        # (B, T, D), already scaled by D
    gates: np.ndarray    # (B, T, 4H) post-activation
    h: np.ndarray        # (B, T+1, H), h[:, 0] is the zero initial state
    c: np.ndarray        # (B, T+1, H)
    tanh_c: np.ndarray   # (B, T, H)
    a1: np.ndarray
    r1: np.ndarray
    a2: np.ndarray
    r2: np.ndarray
    logit: np.ndarray    # (B,)
    p: np.ndarray        # (B,)


def forward_batch(params: Params, X, chunk_len: int | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Forward a batch ``X`` of shape (B, T, D). With ``chunk_len`` the sequence
    is fed chunk by chunk with the recurrent state carried over; every step
    performs the same arithmetic either way.

    Rows are multiplied by D on entry, so a flat L1-normalized histogram has
    unit entries, the input scale Glorot initialization assumes."""
    X = np.asarray(X, dtype=np.float64)
    B, T, D = X.shape
    X = X * D
    H = params["U"].shape[1]
    if params["W"].shape[1] != D:
        raise ShapeMismatch(f"input dim {D} != model input dim {params['W'].shape[1]}")
    gates = np.empty((B, T, 4 * H))
    hs = np.zeros((B, T + 1, H))
    cs = np.zeros((B, T + 1, H))
    tanh_cs = np.empty((B, T, H))

    def run(steps, start):
        for j in range(steps.shape[1]):
            t = start + j
            hs[:, t + 1], cs[:, t + 1], gates[:, t], tanh_cs[:, t] = _cell(
                params, hs[:, t], cs[:, t], steps[:, j])

    if chunk_len is None:
        run(X, 0)
    else:
        if T % chunk_len:
            raise ShapeMismatch(f"sequence length {T} not divisible by chunk length {chunk_len}")
        for start in range(0, T, chunk_len):
            run(X[:, start:start + chunk_len], start)

    a1 = hs[:, T] @ params["W1"].T + params["b1"]
    r1 = np.maximum(a1, 0.0)
    a2 = r1 @ params["W2"].T + params["b2"]
    r2 = np.maximum(a2, 0.0)
    logit = (r2 @ params["Wo"].T + params["bo"])[:, 0]
    p = sigmoid(logit)
    return p, ForwardCache(X, gates, hs, cs, tanh_cs, a1, r1, a2, r2, logit, p)


def _seq_rows(seq) -> np.ndarray:
    return np.asarray(getattr(seq, "rows", seq), dtype=np.float64)


def forward_video(params: Params, seq, chunk_len: int | None = 10) -> tuple[float, ForwardCache]:
    rows = _seq_rows(seq)
    if rows.ndim != 2:
        raise ShapeMismatch(f"expected a T x D matrix, got shape {rows.shape}")
    p, cache = forward_batch(params, rows[None], chunk_len)
    return float(p[0]), cache


def loss(p, label) -> float:
    """Binary cross-entropy of a predicted fake probability."""
    p = float(p)
    return -(label * np.log(p) + (1 - label) * np.log(1 - p))


def _bce_from_logits(logit, y):
    return np.logaddexp(0.0, logit) - y * logit


def backward_batch(params: Params, cache: ForwardCache, labels) -> Params:
    """Gradient of the batch-mean BCE loss with respect to every tensor."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    B, T, D = cache.X.shape
    H = params["U"].shape[1]
    grads = {}

    dlogit = (cache.p - y) / B                     # (B,)
    grads["Wo"] = dlogit[None, :] @ cache.r2
    grads["bo"] = np.array([dlogit.sum()])
    da2 = (dlogit[:, None] @ params["Wo"]) * (cache.a2 > 0)
    grads["W2"] = da2.T @ cache.r1
    grads["b2"] = da2.sum(axis=0)
    da1 = (da2 @ params["W2"]) * (cache.a1 > 0)
    grads["W1"] = da1.T @ cache.h[:, T]
    grads["b1"] = da1.sum(axis=0)
    dh = da1 @ params["W1"]

    dc = np.zeros((B, H))
    dz_all = np.empty((B, T, 4 * H))
    U = params["U"]
    for t in range(T - 1, -1, -1):
        g_t = cache.gates[:, t]
        i, f, o, g = (g_t[:, k * H:(k + 1) * H] for k in range(4))
        tc = cache.tanh_c[:, t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dz_all[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * cache.c[:, t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - g * g)
        dh = dz @ U
        dc = dc * f

    dz_flat = dz_all.reshape(B * T, 4 * H)
    grads["W"] = dz_flat.T @ cache.X.reshape(B * T, D)
    grads["U"] = dz_flat.T @ cache.h[:, :T].reshape(B * T, H)
    grads["b"] = dz_flat.sum(axis=0)
    return {k: grads[k] for k in TENSOR_ORDER}


def backward_video(params: Params, cache: ForwardCache, label) -> Params:
    return backward_batch(params, cache, [label])


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: Params, grads: Params) -> None:
        if not self.m:
            self.m = zeros_like_params(params)
            self.v = zeros_like_params(params)
        self.step += 1
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        for k in TENSOR_ORDER:
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _stack(dataset) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([_seq_rows(s) for s, _ in dataset])
    y = np.array([float(lab) for _, lab in dataset])
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 (real) or 1 (fake)")
    return X, y


def predict_batch(params: Params, X, chunk_len: int | None = 10, batch_size: int = 32) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = [forward_batch(params, X[i:i + batch_size], chunk_len)[0]
           for i in range(0, len(X), batch_size)]
    return np.concatenate(out)


def _metrics(p, y) -> tuple[float, float]:
    pc = np.clip(p, 1e-15, 1 - 1e-15)
    ll = float(np.mean(-(y * np.log(pc) + (1 - y) * np.log(1 - pc))))
    acc = float(np.mean((p >= 0.5) == (y == 1)))
    return ll, acc


def best_epoch(history: list[dict]) -> int | None:
    """Epoch with the lowest validation loss (earliest on ties), or None
    when no validation metrics were recorded."""
    scored = [r for r in history if "val_loss" in r]
    if not scored:
        return None
    return min(scored, key=lambda r: (r["val_loss"], r["epoch"]))["epoch"]


def train(dataset, config: ModelConfig, epochs: int = 50, batch_size: int = 10,
          val=None, lr: float = 1e-3, log=None, keep_best: bool = True) -> tuple[Params, list[dict]]:
    """Mini-batch Adam on the batch-mean BCE. ``dataset`` and ``val`` are
    sequences of ``(HistogramSequence | array, label)``. Returns the trained
    parameters and one metrics dict per epoch.

    With ``val`` and ``keep_best`` the returned parameters are those of
    ``best_epoch(history)`` rather than those of the last epoch."""
    if not dataset:
        raise EmptyDataset("no training videos")
    X, y = _stack(dataset)
    if X.shape[1:] != (config.seq_len, config.input_dim):
        raise ShapeMismatch(f"videos are {X.shape[1:]}, config expects "
                            f"{(config.seq_len, config.input_dim)}")
    Xv, yv = _stack(val) if val else (None, None)
    params = init_params(config)
    adam = AdamState(lr=lr)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    history = []
    kept = None
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(X))
        losses, correct = [], 0
        for s in range(0, len(X), batch_size):
            idx = order[s:s + batch_size]
            p, cache = forward_batch(params, X[idx], config.chunk_len)
            losses.append(_bce_from_logits(cache.logit, y[idx]))
            correct += int(np.sum((p >= 0.5) == (y[idx] == 1)))
            adam.update(params, backward_batch(params, cache, y[idx]))
        row = {
            "epoch": epoch,
            "train_loss": float(np.concatenate(losses).mean()),
            "train_acc": correct / len(X),
        }
        if Xv is not None:
            row["val_loss"], row["val_acc"] = _metrics(predict_batch(params, Xv, config.chunk_len), yv)
        history.append(row)
        if keep_best and Xv is not None and best_epoch(history) == epoch:
            kept = {k: v.copy() for k, v in params.items()}
        if log is not None:
            log(row)
    return (kept if kept is not None else params), history


# --- model files ------------------------------------------------------------

def _encode(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def dumps_model(params: Params, config: ModelConfig, meta: dict | None = None) -> str:
    shapes = config.shapes()
    tensors = []
    for name in TENSOR_ORDER:
        a = np.asarray(params[name], dtype=np.float64)
        if a.shape != shapes[name]:
            raise ShapeMismatch(f"{name} has shape {a.shape}, expected {shapes[name]}")
        if not np.isfinite(a).all():
            raise ValueError(f"{name} holds non-finite values")
        tensors.append({"name": name, "shape": list(a.shape), "data": _encode(a)})
    doc = {"format": FORMAT_TAG, "version": FORMAT_VERSION, "config": asdict(config),
           "meta": meta or {}, "tensors": tensors}
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def loads_model(text: str, expected: ModelConfig | None = None) -> tuple[Params, ModelConfig, dict]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"model file is not valid JSON: {e}") from None
    if doc.get("format") != FORMAT_TAG or doc.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported model format {doc.get('format')!r} v{doc.get('version')!r}")
    try:
        config = ModelConfig(**doc["config"])
        raw = {t["name"]: t for t in doc["tensors"]}
    except (KeyError, TypeError) as e:
        raise ModelFormatError(f"bad model header: {e}") from None
    if expected is not None and expected != config:
        raise ShapeMismatch(f"model config {config} does not match expected {expected}")
    params = {}
    for name, shape in config.shapes().items():
        if name not in raw or tuple(raw[name]["shape"]) != shape:
            raise ShapeMismatch(f"tensor {name} missing or not shaped {shape}")
        buf = base64.b64decode(raw[name]["data"], validate=True)
        if len(buf) != 8 * int(np.prod(shape)):
            raise ShapeMismatch(f"tensor {name} holds {len(buf)} bytes")
        params[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    return params, config, doc.get("meta", {})


def save_model(path, params: Params, config: ModelConfig, meta: dict | None = None) -> None:
    text = dumps_model(params, config, meta)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def load_model(path, expected: ModelConfig | None = None) -> tuple[Params, ModelConfig, dict]:
    with open(path) as f:
        return loads_model(f.read(), expected)
