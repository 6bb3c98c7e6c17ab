"""Training/evaluation datasets built from aligned (waveform, trace) pairs.

History samples describe segment i by the current voltage, the h previous
voltages and the h previous ΔVth values. Segments before the start of the
waveform are padded with an unstressed, unaged transistor (V = Vdd, 0 mV).
During training the ΔVth history comes from the oracle trace (teacher forcing);
the recursive predictor substitutes its own outputs at inference time.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import DEFAULT_VDD, FormatError, QuantizerSpec, Trace, Waveform, fmt_float, quantize

Pair = tuple[Waveform, Trace]


class HistorySample(NamedTuple):
    transistor_id: str
    segment: int
    features: np.ndarray
    label_mv: float


@dataclass(frozen=True)
class HistoryDataset:
    """Row i: [V_i, V_{i-1}..V_{i-h}, dvt_{i-1}..dvt_{i-h}] -> dvt_i (mV)."""

    h: int
    X: np.ndarray
    y: np.ndarray
    transistor_ids: tuple[str, ...]
    segments: np.ndarray
    vdd: float = DEFAULT_VDD

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> HistorySample:
        return HistorySample(self.transistor_ids[i], int(self.segments[i]), self.X[i], float(self.y[i]))

    def labels(self, q: QuantizerSpec) -> np.ndarray:
        return quantize(q, self.y)


def history_row(volts: Sequence[float], dvt_hist: Sequence[float], i: int, h: int, vdd: float) -> np.ndarray:
    """Feature row for segment ``i`` (0-based) given voltages and known ΔVth before i."""
    row = np.empty(2 * h + 1)
    row[0] = volts[i]
    for k in range(1, h + 1):
        j = i - k
        row[k] = volts[j] if j >= 0 else vdd
        row[h + k] = dvt_hist[j] if j >= 0 else 0.0
    return row


def build_history_dataset(pairs: Sequence[Pair], h: int, vdd: float = DEFAULT_VDD) -> HistoryDataset:
    if h < 0:
        raise ValueError("history length must be >= 0")
    rows, labels, ids, segs = [], [], [], []
    for w, t in pairs:
        if len(w) != len(t):
            raise ValueError(f"length mismatch for transistor {w.transistor_id!r}")
        v = w.volts
        d = t.values
        l = len(v)
        # padded arrays make the windowing a slice
        vp = np.concatenate([np.full(h, vdd), v])
        dp = np.concatenate([np.zeros(h), d])
        X = np.empty((l, 2 * h + 1))
        X[:, 0] = v
        for k in range(1, h + 1):
            X[:, k] = vp[h - k:h - k + l]
            X[:, h + k] = dp[h - k:h - k + l]
        rows.append(X)
        labels.append(d)
        ids.extend([w.transistor_id] * l)
        segs.append(np.arange(l))
    if not rows:
        return HistoryDataset(h, np.empty((0, 2 * h + 1)), np.empty(0), (), np.empty(0, dtype=int), vdd)
    return HistoryDataset(h, np.vstack(rows), np.concatenate(labels), tuple(ids), np.concatenate(segs), vdd)


@dataclass(frozen=True)
class EolDataset:
    """Row i: all segment voltages of one transistor -> its final ΔVth (mV)."""

    X: np.ndarray
    y: np.ndarray
    transistor_ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.y)


def build_eol_dataset(pairs: Sequence[Pair]) -> EolDataset:
    lengths = {len(w) for w, _ in pairs}
    if len(lengths) > 1:
        raise ValueError(f"ragged waveform lengths {sorted(lengths)}")
    for w, t in pairs:
        if len(w) != len(t):
            raise ValueError(f"length mismatch for transistor {w.transistor_id!r}")
    if not pairs:
        return EolDataset(np.empty((0, 0)), np.empty(0), ())
    X = np.array([w.segments for w, _ in pairs], dtype=float)
    y = np.array([t.last for _, t in pairs], dtype=float)
    return EolDataset(X, y, tuple(w.transistor_id for w, _ in pairs))


@dataclass(frozen=True)
class SeqDataset:
    inputs: np.ndarray   # (n, l) volts, reversed when ``reversed_input``
    targets: np.ndarray  # (n, l) mV
    transistor_ids: tuple[str, ...]
    reversed_input: bool = True


def build_seq_dataset(pairs: Sequence[Pair], reverse: bool = True) -> SeqDataset:
    eol = build_eol_dataset(pairs)
    targets = np.array([t.dvt for _, t in pairs], dtype=float).reshape(len(pairs), -1)
    inputs = eol.X[:, ::-1].copy() if reverse else eol.X.copy()
    return SeqDataset(inputs, targets, eol.transistor_ids, reverse)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


def split(pairs: Sequence[Pair], spec: SplitSpec = SplitSpec()) -> tuple[list[Pair], list[Pair]]:
    """Random split by transistor; each transistor lands entirely in one side."""
    ids = sorted({w.transistor_id for w, _ in pairs})
    if len(ids) < 2:
        raise ValueError("need at least two transistors to split")
    n_train = min(max(int(round(spec.train_fraction * len(ids))), 1), len(ids) - 1)
    perm = np.random.default_rng(spec.rng_seed).permutation(len(ids))
    train_ids = {ids[k] for k in perm[:n_train]}
    train = [p for p in pairs if p[0].transistor_id in train_ids]
    test = [p for p in pairs if p[0].transistor_id not in train_ids]
    return train, test


# ---------------------------------------------------------------------- CSV

def history_to_csv(ds: HistoryDataset, q: QuantizerSpec | None = None) -> str:
    h = ds.h
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    header = ["transistor_id", "segment", "v_i", *(f"v_i-{k}" for k in range(1, h + 1)),
              *(f"dvt_i-{k}_mv" for k in range(1, h + 1)), "label_mv"]
    if q is not None:
        header.append("label_class")
    wr.writerow(header)
    classes = ds.labels(q) if q is not None else None
    for i in range(len(ds)):
        row = [ds.transistor_ids[i], int(ds.segments[i]), *map(fmt_float, ds.X[i]), fmt_float(ds.y[i])]
        if classes is not None:
            row.append(int(classes[i]))
        wr.writerow(row)
    return buf.getvalue()


def history_from_csv(text: str, vdd: float = DEFAULT_VDD) -> HistoryDataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:3] != ["transistor_id", "segment", "v_i"]:
        raise FormatError("not a history dataset file")
    header = rows[0]
    h = sum(1 for c in header if c.startswith("v_i-"))
    if header[3 + 2 * h] != "label_mv":
        raise FormatError("history dataset header malformed")
    body = rows[1:]
    X = np.array([[float(v) for v in r[2:3 + 2 * h]] for r in body]).reshape(len(body), 2 * h + 1)
    y = np.array([float(r[3 + 2 * h]) for r in body])
    return HistoryDataset(h, X, y, tuple(r[0] for r in body), np.array([int(r[1]) for r in body]), vdd)


def eol_to_csv(ds: EolDataset) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    l = ds.X.shape[1]
    wr.writerow(["transistor_id", *(f"v{i}" for i in range(l)), "label_mv"])
    for tid, x, y in zip(ds.transistor_ids, ds.X, ds.y):
        wr.writerow([tid, *map(fmt_float, x), fmt_float(y)])
    return buf.getvalue()


def eol_from_csv(text: str) -> EolDataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:1] != ["transistor_id"] or rows[0][-1] != "label_mv":
        raise FormatError("not an EOL dataset file")
    body = rows[1:]
    l = len(rows[0]) - 2
    X = np.array([[float(v) for v in r[1:-1]] for r in body]).reshape(len(body), l)
    return EolDataset(X, np.array([float(r[-1]) for r in body]), tuple(r[0] for r in body))
