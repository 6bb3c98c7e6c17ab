"""Shared domain types, ΔVth quantization and the CSV / key-value file formats.

Units are fixed across the package: gate voltages in volts, ΔVth in millivolts,
time in seconds.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_VDD = 0.7
TEN_YEARS_S = 10 * 365 * 24 * 3600.0
MAX_SEGMENTS = 1024


class FormatError(ValueError):
    """A file does not match the expected schema."""


def fmt_float(x: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(x))


@dataclass(frozen=True)
class Waveform:
    """Gate-voltage activity of one transistor, split into equal-length segments."""

    transistor_id: str
    segment_duration: float
    segments: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(float(v) for v in self.segments))
        if len(self.segments) > MAX_SEGMENTS:
            raise ValueError(f"waveform {self.transistor_id!r} longer than {MAX_SEGMENTS} segments")
        if not self.segment_duration > 0:
            raise ValueError("segment duration must be positive")

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def volts(self) -> np.ndarray:
        return np.asarray(self.segments, dtype=float)

    def with_segments(self, segments: Iterable[float], transistor_id: str | None = None) -> "Waveform":
        return Waveform(transistor_id or self.transistor_id, self.segment_duration, tuple(segments))


@dataclass(frozen=True)
class Trace:
    """Cumulative ΔVth (mV) reported after each waveform segment."""

    transistor_id: str
    dvt: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "dvt", tuple(float(v) for v in self.dvt))

    def __len__(self) -> int:
        return len(self.dvt)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.dvt, dtype=float)

    @property
    def last(self) -> float:
        return self.dvt[-1]


def _stressed(volts: np.ndarray, vdd: float) -> np.ndarray:
    # pMOS NBTI: the device is under stress while its gate is pulled low
    return volts < 0.5 * vdd


def duty_cycle(w: Waveform, vdd: float = DEFAULT_VDD) -> float:
    """Fraction of segments in which the pMOS gate is below Vdd/2."""
    if len(w) == 0:
        raise ValueError("empty waveform")
    return float(np.count_nonzero(_stressed(w.volts, vdd))) / len(w)


def transition_count(w: Waveform) -> int:
    v = w.volts
    return int(np.count_nonzero(v[1:] != v[:-1]))


@dataclass(frozen=True)
class QuantizerSpec:
    """Uniform binning of ΔVth values into classification labels."""

    min_mv: float = 0.0
    max_mv: float = 64.0
    n_bins: int = 64

    def __post_init__(self):
        if not self.min_mv < self.max_mv:
            raise ValueError("quantizer needs min_mv < max_mv")
        if self.n_bins < 2:
            raise ValueError("quantizer needs at least 2 bins")

    @property
    def bin_width(self) -> float:
        return (self.max_mv - self.min_mv) / self.n_bins

    @classmethod
    def from_traces(cls, traces: Iterable[Trace], n_bins: int = 64, pad: float = 0.25) -> "QuantizerSpec":
        """Range [0, max + 25 %] over the given (training) traces."""
        top = max((max(t.dvt) for t in traces if len(t)), default=0.0)
        top = top * (1.0 + pad)
        return cls(0.0, top if top > 0 else 1.0, n_bins)


def quantize(q: QuantizerSpec, x):
    """Class index of ``x`` (mV); out-of-range values clamp to the edge bins."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot quantize non-finite ΔVth")
    idx = np.floor((arr - q.min_mv) / q.bin_width).astype(np.int64)
    idx = np.clip(idx, 0, q.n_bins - 1)
    return int(idx) if idx.ndim == 0 else idx


def dequantize(q: QuantizerSpec, c):
    """Bin midpoint (mV) of class ``c``."""
    arr = np.asarray(c)
    out = q.min_mv + (arr + 0.5) * q.bin_width
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RunConfig:
    vdd: float = DEFAULT_VDD
    temperature_c: float = 90.0
    segment_duration: float = 1e-3
    eol_seconds: float = TEN_YEARS_S
    rng_seed: int = 0

    def __post_init__(self):
        if not self.vdd > 0:
            raise ValueError("vdd must be positive")
        if not self.segment_duration > 0:
            raise ValueError("segment_duration must be positive")

    def check_window(self, n_segments: int) -> None:
        if not self.eol_seconds > n_segments * self.segment_duration:
            raise ValueError("eol_seconds must exceed the observed window")


# ---------------------------------------------------------------- key = value

def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def dump_kv(items: dict[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def load_run_config(path: str | Path) -> RunConfig:
    kv = parse_kv(Path(path).read_text())
    known = {f.name: f.type for f in fields(RunConfig)}
    unknown = set(kv) - set(known)
    if unknown:
        raise FormatError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in kv.items():
        kwargs[key] = int(value) if key == "rng_seed" else float(value)
    return RunConfig(**kwargs)


def dump_run_config(cfg: RunConfig) -> str:
    return dump_kv({f.name: getattr(cfg, f.name) for f in fields(RunConfig)})


# ---------------------------------------------------------------------- CSV

def _uniform_length(items: Sequence, what: str) -> int:
    lengths = {len(x) for x in items}
    if len(lengths) > 1:
        raise FormatError(f"{what} rows have differing lengths {sorted(lengths)}")
    return lengths.pop() if lengths else 0


def waveforms_to_csv(wfs: Sequence[Waveform]) -> str:
    n = _uniform_length(wfs, "waveform")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["transistor_id", "duration_s", *(f"v{i}" for i in range(n))])
    for w in wfs:
        writer.writerow([w.transistor_id, fmt_float(w.segment_duration), *map(fmt_float, w.segments)])
    return buf.getvalue()


def waveforms_from_csv(text: str) -> list[Waveform]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:2] != ["transistor_id", "duration_s"]:
        raise FormatError("waveform file must start with 'transistor_id,duration_s'")
    n = len(rows[0]) - 2
    if rows[0][2:] != [f"v{i}" for i in range(n)]:
        raise FormatError("waveform header columns must be v0..v{l-1}")
    out = []
    for row in rows[1:]:
        if len(row) != n + 2:
            raise FormatError(f"waveform row {row[:1]} has {len(row) - 2} segments, expected {n}")
        out.append(Waveform(row[0], float(row[1]), tuple(float(v) for v in row[2:])))
    return out


def traces_to_csv(traces: Sequence[Trace]) -> str:
    n = _uniform_length(traces, "trace")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["transistor_id", *(f"dvt{i}_mv" for i in range(n))])
    for t in traces:
        writer.writerow([t.transistor_id, *map(fmt_float, t.dvt)])
    return buf.getvalue()


def traces_from_csv(text: str) -> list[Trace]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:1] != ["transistor_id"]:
        raise FormatError("trace file must start with 'transistor_id'")
    n = len(rows[0]) - 1
    if rows[0][1:] != [f"dvt{i}_mv" for i in range(n)]:
        raise FormatError("trace header columns must be dvt0_mv..")
    out = []
    for row in rows[1:]:
        if len(row) != n + 1:
            raise FormatError(f"trace row {row[:1]} has {len(row) - 1} values, expected {n}")
        out.append(Trace(row[0], tuple(float(v) for v in row[1:])))
    return out


def read_waveforms(path: str | Path) -> list[Waveform]:
    return waveforms_from_csv(Path(path).read_text())


def write_waveforms(path: str | Path, wfs: Sequence[Waveform]) -> None:
    Path(path).write_text(waveforms_to_csv(wfs))


def read_traces(path: str | Path) -> list[Trace]:
    return traces_from_csv(Path(path).read_text())


def write_traces(path: str | Path, traces: Sequence[Trace]) -> None:
    Path(path).write_text(traces_to_csv(traces))


def align(wfs: Sequence[Waveform], traces: Sequence[Trace]) -> list[tuple[Waveform, Trace]]:
    """Pair waveforms with traces by transistor id, keeping waveform order."""
    by_id = {t.transistor_id: t for t in traces}
    pairs = []
    for w in wfs:
        t = by_id.get(w.transistor_id)
        if t is None:
            raise ValueError(f"no trace for transistor {w.transistor_id!r}")
        if len(t) != len(w):
            raise ValueError(f"length mismatch for transistor {w.transistor_id!r}: "
                             f"waveform {len(w)}, trace {len(t)}")
        pairs.append((w, t))
    return pairs

