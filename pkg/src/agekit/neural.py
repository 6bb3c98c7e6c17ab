"""Numpy MLP regressor and LSTM encoder-decoder with hand-written backprop.

Both models train in float64 with Adam and global-norm gradient clipping and
are rounded to float32 when training ends, so a saved weight file reproduces
the in-memory model exactly.
"""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

MAX_TRACE_LEN = 32


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 200
    batch_size: int = 32
    learn_rate: float = 1e-3
    clip_norm: float = 1.0
    rng_seed: int = 0
    loss: str = "mse"

    def __post_init__(self):
        if min(self.epochs, self.batch_size) < 1 or not (self.learn_rate > 0 and self.clip_norm > 0):
            raise ValueError("training hyper-parameters must be positive")
        if self.loss not in ("mse", "l1"):
            raise ValueError(f"unknown loss {self.loss!r}")


Params = dict[str, np.ndarray]


class Adam:
    def __init__(self, params: Params, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grads(grads: Params, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def _loss(pred: np.ndarray, target: np.ndarray, kind: str):
    diff = pred - target
    n = diff.size
    if kind == "l1":
        return np.mean(np.abs(diff)), np.sign(diff) / n
    return np.mean(diff * diff), 2.0 * diff / n


def _fit(params: Params, loss_and_grads: Callable, n: int, spec: TrainSpec, name: str) -> list[float]:
    rng = np.random.default_rng(spec.rng_seed + 1)
    opt = Adam(params, spec.learn_rate)
    history = []
    log.info("%s: epochs=%d batch=%d lr=%g clip=%g loss=%s seed=%d", name, spec.epochs, spec.batch_size,
             spec.learn_rate, spec.clip_norm, spec.loss, spec.rng_seed)
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            loss, grads = loss_and_grads(params, idx)
            if not np.isfinite(loss):
                norms = {k: float(np.linalg.norm(v)) for k, v in params.items()}
                raise FloatingPointError(f"{name}: non-finite loss at epoch {epoch}, batch offset {start}; "
                                         f"weight norms {norms}")
            clip_grads(grads, spec.clip_norm)
            opt.step(params, grads)
            total += float(loss) * len(idx)
        history.append(total / n)
        log.debug("%s epoch %d loss %.6g", name, epoch, history[-1])
    return history


def _to_f32(params: Params) -> Params:
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}


@dataclass(frozen=True)
class Scaler:
    """Affine normalisation ``(v - shift) / scale``."""

    shift: float = 0.0
    scale: float = 1.0

    @classmethod
    def fit(cls, values: np.ndarray) -> "Scaler":
        sd = float(np.std(values))
        return cls(float(np.mean(values)), sd if sd > 0 else 1.0)

    def fwd(self, v):
        return (np.asarray(v, dtype=float) - self.shift) / self.scale

    def inv(self, v):
        return np.asarray(v, dtype=float) * self.scale + self.shift


# ---------------------------------------------------------------------- MLP

def mlp_init(n_in: int, hidden: int, rng: np.random.Generator) -> Params:
    # zero output layer: the untrained net predicts the (scaled) training mean
    return {
        "W1": rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, hidden)),
        "b1": np.zeros(hidden),
        "W2": np.zeros((hidden, 1)),
        "b2": np.zeros(1),
    }


def mlp_forward(p: Params, X: np.ndarray) -> np.ndarray:
    return (np.maximum(X @ p["W1"] + p["b1"], 0.0) @ p["W2"] + p["b2"])[:, 0]


def mlp_loss_grads(p: Params, X: np.ndarray, y: np.ndarray, kind: str = "mse") -> tuple[float, Params]:
    a = X @ p["W1"] + p["b1"]
    r = np.maximum(a, 0.0)
    out = (r @ p["W2"] + p["b2"])[:, 0]
    loss, dout = _loss(out, y, kind)
    dout = dout[:, None]
    dr = dout @ p["W2"].T
    da = dr * (a > 0)
    return loss, {"W1": X.T @ da, "b1": da.sum(0), "W2": r.T @ dout, "b2": dout.sum(0)}


@dataclass
class MlpModel:
    params: Params
    x_scaler: Scaler
    y_scaler: Scaler
    spec: TrainSpec = field(default_factory=TrainSpec)
    history: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_inputs(self) -> int:
        return self.params["W1"].shape[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} features, got {X.shape[1]}")
        return self.y_scaler.inv(mlp_forward(self.params, self.x_scaler.fwd(X)))


def train_mlp(X: np.ndarray, y: np.ndarray, spec: TrainSpec = TrainSpec(), hidden: int = 128) -> MlpModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite training data")
    xs, ys = Scaler.fit(X), Scaler.fit(y)
    Xn, yn = xs.fwd(X), ys.fwd(y)
    params = mlp_init(X.shape[1], hidden, np.random.default_rng(spec.rng_seed))
    hist = _fit(params, lambda p, idx: mlp_loss_grads(p, Xn[idx], yn[idx], spec.loss), len(y), spec, "mlp")
    return MlpModel(_to_f32(params), xs, ys, spec, hist)


def predict_mlp(model: MlpModel, features: np.ndarray) -> np.ndarray:
    return model.predict(features)


# --------------------------------------------------------------------- LSTM

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_init(n_in: int, hidden: int, rng: np.random.Generator, prefix: str) -> Params:
    k = 1.0 / np.sqrt(hidden)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return {
        f"{prefix}.Wx": rng.uniform(-k, k, (n_in, 4 * hidden)),
        f"{prefix}.Wh": rng.uniform(-k, k, (hidden, 4 * hidden)),
        f"{prefix}.b": b,
    }


def lstm_forward(Wx, Wh, b, xs):
    """xs: (T, B, D) -> hs (T, B, H) plus the cache for ``lstm_backward``."""
    T, B, _ = xs.shape
    H = Wh.shape[0]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    xproj = xs @ Wx + b
    hs = np.empty((T, B, H), dtype=xproj.dtype)
    cache = []
    for t in range(T):
        z = xproj[t] + h @ Wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[t] = h
        cache.append((i, f, g, o, c_prev, h_prev, tc))
    return hs, cache


def lstm_backward(Wx, Wh, xs, cache, dhs):
    T, B, _ = xs.shape
    H = Wh.shape[0]
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * H)
    dxs = np.empty_like(xs)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i, f, g, o, c_prev, h_prev, tc = cache[t]
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f),
                             dc * i * (1.0 - g * g), dh * tc * o * (1.0 - o)], axis=1)
        dWx += xs[t].T @ dz
        dWh += h_prev.T @ dz
        db += dz.sum(0)
        dxs[t] = dz @ Wx.T
        dh_next = dz @ Wh.T
        dc_next = dc * f
    return dxs, dWx, dWh, db


LSTM_PRESETS = {
    "lstm-trace": {"hidden": 256, "epochs": 500, "loss": "l1"},
    "lstm-eol": {"hidden": 25, "epochs": 500, "loss": "l1"},
}


def seq2seq_init(hidden: int, rng: np.random.Generator) -> Params:
    p = {}
    p.update(lstm_init(1, hidden, rng, "enc0"))
    p.update(lstm_init(hidden, hidden, rng, "enc1"))
    p.update(lstm_init(hidden, hidden, rng, "dec"))
    k = 1.0 / np.sqrt(hidden)
    p["Wy"] = rng.uniform(-k, k, (hidden, 1))
    p["by"] = np.zeros(1)
    return p


def _layer(p, name):
    return p[f"{name}.Wx"], p[f"{name}.Wh"], p[f"{name}.b"]


def seq2seq_forward(p: Params, X: np.ndarray, reverse: bool):
    """X: (B, T) inputs in encoder order unless ``reverse`` -> (B, T) outputs."""
    xs = (X[:, ::-1] if reverse else X).T[:, :, None]
    h1, c1 = lstm_forward(*_layer(p, "enc0"), xs)
    h2, c2 = lstm_forward(*_layer(p, "enc1"), h1)
    T = X.shape[1]
    rep = np.broadcast_to(h2[-1], (T,) + h2[-1].shape).copy()
    hd, cd = lstm_forward(*_layer(p, "dec"), rep)
    out = (hd @ p["Wy"] + p["by"])[:, :, 0].T
    return out, (xs, h1, c1, h2, c2, rep, hd, cd)


def seq2seq_loss_grads(p: Params, X: np.ndarray, Y: np.ndarray, reverse: bool, kind: str):
    out, (xs, h1, c1, h2, c2, rep, hd, cd) = seq2seq_forward(p, X, reverse)
    loss, dout = _loss(out, Y, kind)
    dy = dout.T[:, :, None]                          # (T, B, 1)
    g: Params = {"Wy": np.einsum("tbh,tbo->ho", hd, dy), "by": dy.sum((0, 1))}
    dhd = dy @ p["Wy"].T
    drep, g["dec.Wx"], g["dec.Wh"], g["dec.b"] = lstm_backward(p["dec.Wx"], p["dec.Wh"], rep, cd, dhd)
    dh2 = np.zeros_like(h2)
    dh2[-1] = drep.sum(0)
    dh1, g["enc1.Wx"], g["enc1.Wh"], g["enc1.b"] = lstm_backward(p["enc1.Wx"], p["enc1.Wh"], h1, c2, dh2)
    _, g["enc0.Wx"], g["enc0.Wh"], g["enc0.b"] = lstm_backward(p["enc0.Wx"], p["enc0.Wh"], xs, c1, dh1)
    return loss, g


@dataclass
class LstmSeq2Seq:
    params: Params
    x_scaler: Scaler
    y_scaler: Scaler
    reverse: bool = True
    spec: TrainSpec = field(default_factory=TrainSpec)
    history: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def hidden(self) -> int:
        return self.params["dec.Wh"].shape[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        """(n, l) waveforms in time order -> (n, l) ΔVth traces in mV."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out, _ = seq2seq_forward(self.params, self.x_scaler.fwd(X), self.reverse)
        return self.y_scaler.inv(out)

    def predict_last(self, X: np.ndarray) -> np.ndarray:
        return self.predict(X)[:, -1]


def train_lstm(X: np.ndarray, Y: np.ndarray, spec: TrainSpec = TrainSpec(epochs=500, loss="l1"),
               hidden: int = 256, reverse: bool = True) -> LstmSeq2Seq:
    """Fit the encoder-decoder on (n, l) voltage sequences and (n, l) ΔVth traces.

    ``X`` is given in time order; reversal for the encoder happens internally.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.shape != X.shape:
        raise ValueError("ragged or mismatched sequence batch")
    if X.shape[1] > MAX_TRACE_LEN:
        log.warning("sequence length %d exceeds %d; accuracy degrades with longer traces", X.shape[1],
                    MAX_TRACE_LEN)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("non-finite training data")
    xs, ys = Scaler.fit(X), Scaler.fit(Y)
    Xn, Yn = xs.fwd(X), ys.fwd(Y)
    params = seq2seq_init(hidden, np.random.default_rng(spec.rng_seed))
    hist = _fit(params, lambda p, idx: seq2seq_loss_grads(p, Xn[idx], Yn[idx], reverse, spec.loss),
                len(X), spec, f"lstm{hidden}")
    return LstmSeq2Seq(_to_f32(params), xs, ys, reverse, spec, hist)


def predict_trace_lstm(model: LstmSeq2Seq, volts) -> np.ndarray:
    return model.predict(np.asarray(volts, dtype=float)[None, :])[0]


# ------------------------------------------------------------ grad checking

def gradient_check(loss_and_grads: Callable[[Params], tuple[float, Params]], params: Params,
                   n_checks: int = 20, eps: float = 1e-6, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples ``n_checks`` random coordinates across all tensors.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_and_grads(params)
    # differences are taken in extended precision so rounding does not swamp
    # the small coordinates
    params = {k: v.astype(np.longdouble) for k, v in params.items()}
    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    worst = 0.0
    for _ in range(n_checks):
        k = names[rng.choice(len(names), p=sizes / sizes.sum())]
        flat = params[k].reshape(-1)
        j = int(rng.integers(flat.size))
        old = flat[j]
        flat[j] = old + eps
        lp, _ = loss_and_grads(params)
        flat[j] = old - eps
        lm, _ = loss_and_grads(params)
        flat[j] = old
        num = float((lp - lm) / (2 * eps))
        ana = float(grads[k].reshape(-1)[j])
        denom = max(abs(num), abs(ana), 1e-8)
        worst = max(worst, abs(num - ana) / denom)
    return worst


# ------------------------------------------------------------- weight file
#
# Little-endian layout:
#   8s   magic b"AGKNN001"
#   u32  n = length of the JSON header
#   n    UTF-8 JSON, sorted keys: kind ("mlp" | "lstm"), scalers, reverse,
#        train spec, meta, and the tensor table [{name, shape}] in storage order
#   ...  each tensor as float32 "<f4", C order, concatenated in table order

_MAGIC = b"AGKNN001"


def dumps_nn(model: MlpModel | LstmSeq2Seq) -> bytes:
    kind = "mlp" if isinstance(model, MlpModel) else "lstm"
    names = sorted(model.params)
    header = {
        "kind": kind,
        "x_scaler": asdict(model.x_scaler),
        "y_scaler": asdict(model.y_scaler),
        "spec": asdict(model.spec),
        "meta": model.meta,
        "tensors": [{"name": k, "shape": list(model.params[k].shape)} for k in names],
    }
    if kind == "lstm":
        header["reverse"] = model.reverse
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = io.BytesIO()
    for k in names:
        body.write(np.ascontiguousarray(model.params[k], dtype="<f4").tobytes())
    return _MAGIC + struct.pack("<I", len(blob)) + blob + body.getvalue()


def loads_nn(data: bytes) -> MlpModel | LstmSeq2Seq:
    if data[:8] != _MAGIC:
        raise ValueError("not a neural weight file")
    (n,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12:12 + n])
    off = 12 + n
    params = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"]))
        params[t["name"]] = np.frombuffer(data, "<f4", count, off).reshape(t["shape"]).astype(np.float64)
        off += 4 * count
    if off != len(data):
        raise ValueError("weight file size does not match its tensor table")
    xs, ys = Scaler(**header["x_scaler"]), Scaler(**header["y_scaler"])
    spec = TrainSpec(**header["spec"])
    meta = header.get("meta", {})
    if header["kind"] == "mlp":
        return MlpModel(params, xs, ys, spec, meta=meta)
    return LstmSeq2Seq(params, xs, ys, header["reverse"], spec, meta=meta)


def save_nn(path: str | Path, model) -> None:
    Path(path).write_bytes(dumps_nn(model))


def load_nn(path: str | Path):
    return loads_nn(Path(path).read_bytes())
