"""Surrogate inference, error metrics and delay/guardband reporting."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .circuits import Netlist, critical_path
from .core import DEFAULT_VDD, RunConfig, Trace, Waveform, duty_cycle, fmt_float, transition_count
from .oracle import extrapolate_eol

log = logging.getLogger(__name__)

MIN_FINAL_MV = 0.1


class HistoryRegressor(Protocol):
    h: int
    vdd: float

    def predict_mv(self, X: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class BiasMultiplier:
    factor: float = 1.0

    def __post_init__(self):
        if not (self.factor > 0 and math.isfinite(self.factor)):
            raise ValueError("multiplier must be positive and finite")


# --------------------------------------------------------- recursive traces

def predict_traces_recursive(reg: HistoryRegressor, wfs: Sequence[Waveform],
                             mult: BiasMultiplier = BiasMultiplier(), h: int | None = None,
                             feedback: str = "scaled") -> list[Trace]:
    """Segment-by-segment inference where the ΔVth history is the model's own output.

    History starts at 0 mV. Each step's prediction is scaled by the multiplier;
    with ``feedback="scaled"`` later steps see the scaled value, with "raw" they
    see the model output and only the reported trace is scaled.
    """
    if feedback not in ("scaled", "raw"):
        raise ValueError(f"unknown feedback mode {feedback!r}")
    if h is not None and h != reg.h:
        raise ValueError(f"model was trained with h={reg.h}, caller asked for h={h}")
    if not wfs:
        return []
    lengths = {len(w) for w in wfs}
    if len(lengths) > 1:
        return [t for w in wfs for t in predict_traces_recursive(reg, [w], mult, None, feedback)]
    l = lengths.pop()
    h = reg.h
    V = np.array([w.segments for w in wfs], dtype=float)
    n = len(wfs)
    vpad = np.concatenate([np.full((n, h), reg.vdd), V], axis=1)
    dpad = np.zeros((n, h + l))
    for i in range(l):
        X = np.empty((n, 2 * h + 1))
        X[:, 0] = V[:, i]
        for k in range(1, h + 1):
            X[:, k] = vpad[:, h + i - k]
            X[:, h + k] = dpad[:, h + i - k]
        pred = np.asarray(reg.predict_mv(X), dtype=float)
        dpad[:, h + i] = pred * mult.factor if feedback == "scaled" and mult.factor != 1.0 else pred
    out = dpad[:, h:]
    if feedback == "raw" and mult.factor != 1.0:
        out = out * mult.factor
    return [Trace(w.transistor_id, row) for w, row in zip(wfs, out.tolist())]


def predict_trace_recursive(reg: HistoryRegressor, w: Waveform, h: int,
                            mult: BiasMultiplier = BiasMultiplier()) -> Trace:
    return predict_traces_recursive(reg, [w], mult, h)[0]


def predict_traces_teacher_forced(reg: HistoryRegressor, pairs: Sequence[tuple[Waveform, Trace]]) -> list[Trace]:
    """Every step sees the oracle history; isolates per-step error from accumulation."""
    from .dataset import build_history_dataset

    out = []
    for w, t in pairs:
        ds = build_history_dataset([(w, t)], reg.h, reg.vdd)
        out.append(Trace(w.transistor_id, np.asarray(reg.predict_mv(ds.X), dtype=float).tolist()))
    return out


def _train_bias(reg, wfs, bases, m: float, feedback: str) -> float:
    """Mean signed final-value deviation (pred - oracle) / oracle on training data."""
    preds = predict_traces_recursive(reg, wfs, BiasMultiplier(m), feedback=feedback)
    dev = [(p.last - b) / b for p, b in zip(preds, bases) if abs(b) >= MIN_FINAL_MV * 1e-3]
    return float(np.mean(dev)) if dev else 0.0


def fit_multiplier(reg: HistoryRegressor, train_pairs: Sequence[tuple[Waveform, Trace]],
                   min_pred_mv: float = 1e-3, lo: float = 0.5, hi: float = 2.0,
                   feedback: str = "scaled", refine: int = 4) -> BiasMultiplier:
    """Average oracle/predicted final ΔVth over the training waveforms, clamped to [lo, hi].

    With scaled feedback the factor also shifts the history the model sees, so
    the first estimate is refined by ``refine`` steps on the recursion itself:
    a fixed-point step m / (1 + bias) while it stays inside the bracket of
    known bias signs, a geometric bisection otherwise. The candidate with the
    smallest training bias wins, and 1.0 is always a candidate.
    """
    wfs = [w for w, _ in train_pairs]
    bases = [t.last for _, t in train_pairs]
    preds = predict_traces_recursive(reg, wfs)
    ratios = [t.last / p.last for (_, t), p in zip(train_pairs, preds) if p.last > min_pred_mv]
    if not ratios:
        log.warning("all training predictions are ~0 mV; multiplier left at 1")
        return BiasMultiplier(1.0)

    def clamp(f):
        return min(max(f, lo), hi)

    factor = float(np.mean(ratios))
    if clamp(factor) != factor:
        log.warning("multiplier %.4g clamped to %.4g", factor, clamp(factor))
    m = clamp(factor)
    bias_one = _train_bias(reg, wfs, bases, 1.0, feedback)
    best = (abs(bias_one), 1.0)
    below, above = lo, hi  # bias(below) < 0 < bias(above), as far as known
    if bias_one < 0:
        below = max(below, 1.0)
    elif bias_one > 0:
        above = min(above, 1.0)
    for _ in range(refine + 1):
        bias = _train_bias(reg, wfs, bases, m, feedback)
        best = min(best, (abs(bias), m))
        if bias == 0.0:
            break
        if bias < 0:
            below = max(below, m)
        else:
            above = min(above, m)
        nxt = m / (1.0 + bias) if bias > -1.0 else hi
        if not below < nxt < above:
            nxt = math.sqrt(below * above)
        if abs(nxt - m) <= 1e-12 * m:
            break
        m = nxt
    log.info("multiplier %.4f (training bias %.3g %%)", best[1], 100 * best[0])
    return BiasMultiplier(best[1])


# ------------------------------------------------------------------ metrics

def relative_error(ml: Trace | Sequence[float], base: Trace | Sequence[float]) -> np.ndarray:
    """Signed per-segment error in percent of the final baseline value."""
    m = ml.values if isinstance(ml, Trace) else np.asarray(ml, dtype=float)
    b = base.values if isinstance(base, Trace) else np.asarray(base, dtype=float)
    if m.shape != b.shape:
        raise ValueError("trace lengths differ")
    if b[-1] == 0:
        raise ValueError("relative error undefined for a zero final baseline")
    return (m - b) / b[-1] * 100.0


@dataclass(frozen=True)
class ReSummary:
    re: np.ndarray              # (n_included, l) signed percent
    included: tuple[str, ...]
    excluded: tuple[str, ...]

    @property
    def mean_abs_last(self) -> float:
        return float(np.mean(np.abs(self.re[:, -1]))) if len(self.re) else float("nan")

    @property
    def mean_last(self) -> float:
        return float(np.mean(self.re[:, -1])) if len(self.re) else float("nan")

    def mean_abs_by_segment(self) -> np.ndarray:
        return np.mean(np.abs(self.re), axis=0)


def re_summary(preds: Sequence[Trace], bases: Sequence[Trace], min_final: float = MIN_FINAL_MV) -> ReSummary:
    rows, inc, exc = [], [], []
    for p, b in zip(preds, bases):
        if abs(b.last) < min_final:
            exc.append(b.transistor_id)
            continue
        rows.append(relative_error(p, b))
        inc.append(b.transistor_id)
    if exc:
        log.info("%d transistor(s) excluded from RE (final baseline < %g mV)", len(exc), min_final)
    re = np.array(rows) if rows else np.empty((0, len(bases[0]) if bases else 0))
    return ReSummary(re, tuple(inc), tuple(exc))


def r2_score(pred: Sequence[float], base: Sequence[float]) -> float:
    p = np.asarray(pred, dtype=float)
    b = np.asarray(base, dtype=float)
    if len(b) < 2 or p.shape != b.shape:
        raise ValueError("r2 needs two or more aligned values")
    ss_tot = float(np.sum((b - b.mean()) ** 2))
    if ss_tot == 0:
        raise ValueError("r2 undefined for zero-variance baseline")
    return 1.0 - float(np.sum((b - p) ** 2)) / ss_tot


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    from scipy.stats import spearmanr

    return float(spearmanr(x, y).statistic)


# -------------------------------------------------------------------- delay

@dataclass(frozen=True)
class DelayModel:
    """Alpha-power gate delay: d0 * vdd / (vdd - vth0 - ΔVth) ** alpha, in ps."""

    vth0: float = 0.3
    alpha: float = 1.3
    d0: float = 10.0
    vdd: float = DEFAULT_VDD
    min_overdrive: float = 0.05

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (1, 2)")
        if not self.vdd - self.vth0 > self.min_overdrive:
            raise ValueError("fresh device has no overdrive")

    def overdrive(self, dvt_mv: float) -> float:
        return self.vdd - self.vth0 - dvt_mv * 1e-3

    def feasible(self, dvt_mv: float) -> bool:
        return self.overdrive(dvt_mv) > self.min_overdrive

    def delay(self, dvt_mv: float) -> float:
        """Gate delay; infeasible shifts are evaluated at the minimum overdrive."""
        od = max(self.overdrive(dvt_mv), self.min_overdrive)
        return self.d0 * self.vdd / od ** self.alpha

    def delta(self, dvt_mv: float) -> float:
        return self.delay(dvt_mv) - self.delay(0.0)


@dataclass
class DelayReport:
    gate_dvt: dict[str, float]          # worst ΔVth among the gate's pMOS, mV
    gate_delta: dict[str, float]        # ps
    infeasible: list[str]
    path: list[str]
    path_delta: float

    @property
    def deltas(self) -> np.ndarray:
        return np.array(list(self.gate_delta.values()))

    def summary(self) -> dict[str, float]:
        d = self.deltas
        return {"min": float(d.min()), "mean": float(d.mean()), "max": float(d.max()),
                "path": self.path_delta, "infeasible": len(self.infeasible)}


def delay_report(nl: Netlist, eol_dvt: Mapping[str, float], dm: DelayModel = DelayModel(),
                 path: list[str] | None = None) -> DelayReport:
    gate_dvt: dict[str, float] = {}
    for dev_id, inst, _ in nl.devices():
        if dev_id not in eol_dvt:
            raise KeyError(f"no ΔVth for device {dev_id!r}")
        v = float(eol_dvt[dev_id])
        if not math.isfinite(v):
            raise ValueError(f"non-finite ΔVth for device {dev_id!r}")
        gate_dvt[inst.name] = max(gate_dvt.get(inst.name, 0.0), v)
    deltas = {g: dm.delta(v) for g, v in gate_dvt.items()}
    infeasible = [g for g, v in gate_dvt.items() if not dm.feasible(v)]
    if infeasible:
        log.warning("%d gate(s) guardband infeasible (overdrive <= %g V)", len(infeasible), dm.min_overdrive)
    path = path if path is not None else critical_path(nl)
    return DelayReport(gate_dvt, deltas, infeasible, path, float(sum(deltas[g] for g in path)))


def eol_map(preds_last: Mapping[str, float], wfs: Mapping[str, Waveform], cfg: RunConfig = RunConfig()
            ) -> dict[str, float]:
    """Extrapolate per-device last-window ΔVth to end of life (negative predictions clip at 0)."""
    return {d: extrapolate_eol(max(float(v), 0.0), wfs[d], cfg) for d, v in preds_last.items()}


# ------------------------------------------------------------ error analysis

@dataclass
class ErrorAnalysis:
    rows: list[dict]
    summary: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["transistor_id", "duty_cycle", "transitions", "pred_mv", "base_mv", "error_mv", "error_class"])
        for r in self.rows:
            wr.writerow([r["transistor_id"], fmt_float(r["duty_cycle"]), r["transitions"], fmt_float(r["pred_mv"]),
                         fmt_float(r["base_mv"]), fmt_float(r["error_mv"]), r["error_class"]])
        return buf.getvalue()


def error_analysis(preds: Sequence[float], bases: Sequence[float], wfs: Sequence[Waveform],
                   low_duty: float = 0.2, vdd: float = DEFAULT_VDD, tol_mv: float = 0.05) -> ErrorAnalysis:
    """Signed final-value error per transistor against duty cycle and switching activity."""
    if not len(preds) == len(bases) == len(wfs):
        raise ValueError("inputs must be aligned")
    rows = []
    for p, b, w in zip(preds, bases, wfs):
        err = float(p) - float(b)
        cls = "over" if err > tol_mv else "under" if err < -tol_mv else "ok"
        rows.append({"transistor_id": w.transistor_id, "duty_cycle": duty_cycle(w, vdd),
                     "transitions": transition_count(w), "pred_mv": float(p), "base_mv": float(b),
                     "error_mv": err, "error_class": cls})
    low = [r["error_mv"] for r in rows if r["duty_cycle"] < low_duty]
    rest = [r["error_mv"] for r in rows if r["duty_cycle"] >= low_duty]
    summary: dict = {"n": len(rows), "low_duty_threshold": low_duty}
    if low:
        summary["low_duty"] = {"n": len(low), "mean_error_mv": float(np.mean(low))}
    if rest:
        summary["rest"] = {"n": len(rest), "mean_error_mv": float(np.mean(rest))}
    return ErrorAnalysis(rows, summary)


# --------------------------------------------------------------- EOL report

REPORT_COLUMNS = ("Baseline", "LSTM", "SVR", "HDC/MLP", "Worst Case")


@dataclass
class ModelEol:
    name: str
    last_mv: dict[str, float]
    eol_mv: dict[str, float]
    delay: DelayReport
    r2: float | None = None
    re: ReSummary | None = None


@dataclass
class EolReport:
    circuit: str
    baseline: ModelEol
    models: dict[str, ModelEol] = field(default_factory=dict)

    def column(self, name: str) -> ModelEol | None:
        if name == "Baseline":
            return self.baseline
        if name == "HDC/MLP":
            return self.models.get("HDC") or self.models.get("MLP")
        return self.models.get(name)

    def table(self) -> str:
        cols = [c for c in REPORT_COLUMNS if self.column(c) is not None]
        lines = [f"Aging-induced delay for {self.circuit} [ps]",
                 f"{'':>6} | " + " | ".join(f"{c:>10}" for c in cols)]
        for stat in ("min", "mean", "max"):
            vals = [self.column(c).delay.summary()[stat] for c in cols]
            lines.append(f"{stat:>6} | " + " | ".join(f"{v:10.2f}" for v in vals))
        vals = [self.column(c).delay.path_delta for c in cols]
        lines.append(f"{'path':>6} | " + " | ".join(f"{v:10.2f}" for v in vals))
        r2s = [self.column(c).r2 for c in cols]
        lines.append(f"{'r2':>6} | " + " | ".join(f"{v:10.3f}" if v is not None else f"{'-':>10}" for v in r2s))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        names = ["Baseline", *sorted(self.models)]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["transistor_id", *(f"{n}_last_mv" for n in names), *(f"{n}_eol_mv" for n in names)])
        cols = [self.baseline] + [self.models[n] for n in sorted(self.models)]
        for d in sorted(self.baseline.last_mv):
            wr.writerow([d, *(fmt_float(c.last_mv[d]) for c in cols), *(fmt_float(c.eol_mv[d]) for c in cols)])
        return buf.getvalue()
