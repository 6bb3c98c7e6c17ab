"""MAP-B hyperdimensional classifier with OnlineHD-style retraining.

Samples are sequences of discrete symbols (quantized voltages and ΔVth
classes). Each symbol's item hypervector is bound to a per-position random
vector, the bound vectors are bundled by summation and binarised by sign.
Class hypervectors are real accumulators compared by cosine similarity.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .core import DEFAULT_VDD, QuantizerSpec, dequantize, quantize

log = logging.getLogger(__name__)

VOLT = "volt"
DVT = "dvt"
_KIND_CODE = {VOLT: 1, DVT: 2, "pos": 3}
N_VOLT_LEVELS = 10


def voltage_symbols(v, vdd: float = DEFAULT_VDD, n_levels: int = N_VOLT_LEVELS):
    """Nearest of ``n_levels`` evenly spaced levels from 0 V to Vdd (both corners included)."""
    idx = np.rint(np.clip(np.asarray(v, dtype=float) / vdd, 0.0, 1.0) * (n_levels - 1))
    return idx.astype(np.int64)


def _bipolar(rng: np.random.Generator, dim: int) -> np.ndarray:
    return (rng.integers(0, 2, size=dim, dtype=np.int8) * 2 - 1).astype(np.int8)


class ItemMemory:
    """Symbol -> bipolar hypervector, generated on first use and cached.

    Every vector is seeded from (seed, kind, value), so the memory is
    reproducible regardless of lookup order.
    """

    def __init__(self, dim: int, seed: int = 0):
        if not 1000 <= dim <= 20000:
            raise ValueError("hypervector dimension must lie in [1000, 20000]")
        self.dim = dim
        self.seed = seed
        self._cache: dict[tuple[str, int], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._cache)

    def get(self, kind: str, value: int) -> np.ndarray:
        key = (kind, int(value))
        vec = self._cache.get(key)
        if vec is None:
            rng = np.random.default_rng([self.seed, _KIND_CODE[kind], int(value)])
            vec = _bipolar(rng, self.dim)
            vec.setflags(write=False)
            self._cache[key] = vec
        return vec

    def position(self, k: int) -> np.ndarray:
        return self.get("pos", k)


class Encoder(Protocol):
    def encode(self, symbols: np.ndarray) -> np.ndarray: ...


class BindBundleEncoder:
    """Bind each feature's item vector with its position vector, bundle, take sign (ties -> +1)."""

    def __init__(self, im: ItemMemory, layout: Sequence[str], n_symbols: Sequence[int]):
        self.im = im
        self.layout = tuple(layout)
        self.n_symbols = tuple(n_symbols)
        self._tables: list[np.ndarray | None] = [None] * len(self.layout)

    def table(self, k: int) -> np.ndarray:
        t = self._tables[k]
        if t is None:
            pos = self.im.position(k)
            t = np.stack([self.im.get(self.layout[k], s) * pos for s in range(self.n_symbols[k])])
            self._tables[k] = t
        return t

    def bundle(self, symbols: np.ndarray) -> np.ndarray:
        symbols = np.atleast_2d(symbols)
        acc = np.zeros((symbols.shape[0], self.im.dim), dtype=np.int16)
        for k in range(len(self.layout)):
            acc += self.table(k)[symbols[:, k]]
        return acc

    def encode(self, symbols: np.ndarray) -> np.ndarray:
        out = (self.bundle(symbols) >= 0).view(np.int8)
        out *= 2
        out -= 1
        return out


@dataclass(frozen=True)
class HdcParams:
    dim: int = 10000
    epochs: int = 50
    learn_rate: float = 0.01
    seed: int = 0
    batch_size: int = 1024


def _unit_rows(C: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(C, axis=1, keepdims=True)
    return np.divide(C, norms, out=np.zeros_like(C), where=norms > 0)


@dataclass
class HdcModel:
    """Trained class hypervectors plus everything needed to re-encode samples.

    ``layout`` gives the symbol kind of every feature position; ``meta`` holds
    feature conventions (history length, quantizer, Vdd) used by callers.
    """

    params: HdcParams
    n_classes: int
    layout: tuple[str, ...]
    classes: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.classes = np.ascontiguousarray(self.classes, dtype=np.float32)
        self.im = ItemMemory(self.params.dim, self.params.seed)
        self.encoder = BindBundleEncoder(self.im, self.layout, self._n_symbols())
        self._unit: np.ndarray | None = None

    def _n_symbols(self) -> list[int]:
        return [N_VOLT_LEVELS if k == VOLT else self.n_classes for k in self.layout]

    @property
    def dim(self) -> int:
        return self.params.dim

    def unit_classes(self) -> np.ndarray:
        if self._unit is None:
            self._unit = _unit_rows(self.classes)
        return self._unit

    def similarities(self, encoded: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(encoded).astype(np.float32)
        qn = np.linalg.norm(q, axis=1, keepdims=True)
        qn[qn == 0] = 1.0
        return (q @ self.unit_classes().T) / qn

    def predict_symbols(self, symbols: np.ndarray) -> np.ndarray:
        """Argmax cosine class for each symbol row; ties resolve to the lowest class."""
        return np.argmax(self.similarities(self.encoder.encode(symbols)), axis=1)

    def predict_encoded(self, encoded: np.ndarray) -> np.ndarray:
        return np.argmax(self.similarities(encoded), axis=1)


def train_hdc(symbols: np.ndarray, labels: np.ndarray, n_classes: int, layout: Sequence[str],
              params: HdcParams = HdcParams(), meta: dict | None = None) -> HdcModel:
    """Single-pass bundling followed by ``epochs`` of similarity-weighted retraining.

    Retraining works in fixed-order mini-batches: for each mispredicted query q,
    c_true += lr * (1 - cos_true) * q and c_pred -= lr * (1 - cos_pred) * q.
    """
    symbols = np.atleast_2d(np.asarray(symbols, dtype=np.int64))
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("cannot train on an empty dataset")
    model = HdcModel(params, n_classes, tuple(layout), np.zeros((n_classes, params.dim), np.float32), meta or {})
    enc = model.encoder.encode(symbols)
    C = model.classes
    bs = params.batch_size
    for lo in range(0, len(labels), bs):
        onehot = np.zeros((n_classes, min(bs, len(labels) - lo)), np.float32)
        onehot[labels[lo:lo + bs], np.arange(onehot.shape[1])] = 1.0
        C += onehot @ enc[lo:lo + bs].astype(np.float32)
    lr = np.float32(params.learn_rate)
    history = []
    for epoch in range(params.epochs):
        wrong_total = 0
        for lo in range(0, len(labels), bs):
            q = enc[lo:lo + bs].astype(np.float32)
            y = labels[lo:lo + bs]
            sims = (q @ _unit_rows(C).T) / np.float32(np.sqrt(params.dim))
            pred = np.argmax(sims, axis=1)
            wrong = np.nonzero(pred != y)[0]
            wrong_total += len(wrong)
            if len(wrong) == 0:
                continue
            a_true = lr * (1.0 - sims[wrong, y[wrong]])
            a_pred = lr * (1.0 - sims[wrong, pred[wrong]])
            coef = np.zeros((n_classes, len(wrong)), np.float32)
            coef[y[wrong], np.arange(len(wrong))] += a_true
            coef[pred[wrong], np.arange(len(wrong))] -= a_pred
            C += coef @ q[wrong]
        history.append(1.0 - wrong_total / len(labels))
        if wrong_total == 0:
            break
    model.meta.setdefault("train_accuracy", history)
    model._unit = None
    return model


# ------------------------------------------------------- regression helpers

@dataclass
class HdcHistoryRegressor:
    """History-window ΔVth predictor (recursive trace inference)."""

    model: HdcModel
    h: int
    quantizer: QuantizerSpec
    vdd: float = DEFAULT_VDD

    def symbols(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        h = self.h
        out = np.empty(X.shape, dtype=np.int64)
        out[:, :h + 1] = voltage_symbols(X[:, :h + 1], self.vdd)
        out[:, h + 1:] = quantize(self.quantizer, X[:, h + 1:])
        return out

    def predict_class(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict_symbols(self.symbols(X))

    def predict_mv(self, X: np.ndarray) -> np.ndarray:
        return dequantize(self.quantizer, self.predict_class(X))


def history_layout(h: int) -> tuple[str, ...]:
    return (VOLT,) * (h + 1) + (DVT,) * h


def train_history_hdc(X: np.ndarray, y_mv: np.ndarray, h: int, q: QuantizerSpec,
                      params: HdcParams = HdcParams(), vdd: float = DEFAULT_VDD) -> HdcHistoryRegressor:
    reg = HdcHistoryRegressor(None, h, q, vdd)  # type: ignore[arg-type]
    meta = {"task": "history", "h": h, "vdd": vdd, "quantizer": [q.min_mv, q.max_mv, q.n_bins]}
    reg.model = train_hdc(reg.symbols(X), quantize(q, y_mv), q.n_bins, history_layout(h), params, meta)
    return reg


@dataclass
class HdcEolRegressor:
    """Final-ΔVth regression by classifying quantized labels from all segment voltages."""

    model: HdcModel
    quantizer: QuantizerSpec
    vdd: float = DEFAULT_VDD

    def predict_mv(self, X: np.ndarray) -> np.ndarray:
        return dequantize(self.quantizer, self.model.predict_symbols(voltage_symbols(X, self.vdd)))


def train_eol_hdc(X: np.ndarray, y_mv: np.ndarray, q: QuantizerSpec, params: HdcParams = HdcParams(),
                  vdd: float = DEFAULT_VDD) -> HdcEolRegressor:
    layout = (VOLT,) * X.shape[1]
    meta = {"task": "eol", "vdd": vdd, "quantizer": [q.min_mv, q.max_mv, q.n_bins]}
    model = train_hdc(voltage_symbols(X, vdd), quantize(q, y_mv), q.n_bins, layout, params, meta)
    return HdcEolRegressor(model, q, vdd)


# --------------------------------------------------------------- model file
#
# Little-endian layout:
#   8s   magic b"AGKHDC01"
#   u32  dimension D
#   u32  number of classes K
#   u64  item-memory seed
#   u32  n = length of the JSON block
#   n    UTF-8 JSON (layout, epochs, learn_rate, batch_size, meta), sorted keys
#   K*D  float32 class vectors, row-major

_MAGIC = b"AGKHDC01"
_HEAD = struct.Struct("<8sIIQI")


def dumps_hdc(model: HdcModel) -> bytes:
    p = model.params
    info = {"layout": list(model.layout), "epochs": p.epochs, "learn_rate": p.learn_rate,
            "batch_size": p.batch_size, "meta": model.meta}
    blob = json.dumps(info, sort_keys=True, separators=(",", ":")).encode()
    head = _HEAD.pack(_MAGIC, p.dim, model.n_classes, p.seed, len(blob))
    return head + blob + model.classes.astype("<f4").tobytes()


def loads_hdc(data: bytes) -> HdcModel:
    magic, dim, k, seed, n = _HEAD.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not an HDC model file")
    off = _HEAD.size
    info = json.loads(data[off:off + n])
    off += n
    classes = np.frombuffer(data, dtype="<f4", count=k * dim, offset=off).reshape(k, dim)
    params = HdcParams(dim, info["epochs"], info["learn_rate"], seed, info["batch_size"])
    return HdcModel(params, k, tuple(info["layout"]), classes.astype(np.float32), info["meta"])


def save_hdc(path: str | Path, model: HdcModel) -> None:
    Path(path).write_bytes(dumps_hdc(model))


def load_hdc(path: str | Path) -> HdcModel:
    return loads_hdc(Path(path).read_bytes())


def regressor_from_model(model: HdcModel):
    meta = model.meta
    q = QuantizerSpec(*meta["quantizer"][:2], int(meta["quantizer"][2]))
    if meta.get("task") == "history":
        return HdcHistoryRegressor(model, int(meta["h"]), q, meta["vdd"])
    return HdcEolRegressor(model, q, meta["vdd"])
