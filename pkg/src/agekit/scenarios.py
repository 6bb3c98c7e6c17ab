"""Circuit -> waveform -> oracle trace corpora and the two end-to-end experiments.

Scenario 1 trains per-segment history models on standard cells and predicts
full adder traces recursively. Scenario 2 trains last-window ΔVth regressors on
the adder and applies them to an unseen MAC unit, then turns the predictions
into end-of-life delay estimates.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import circuits
from .core import QuantizerSpec, RunConfig, Trace, Waveform
from .dataset import build_eol_dataset, build_history_dataset, build_seq_dataset
from .hdc import HdcParams, train_eol_hdc, train_history_hdc
from .neural import LSTM_PRESETS, TrainSpec, train_lstm, train_mlp
from .oracle import OracleParams, run_traces, worst_case_trace, worst_case_waveform
from .predictor import (BiasMultiplier, DelayModel, EolReport, ModelEol, delay_report, eol_map, fit_multiplier,
                        predict_traces_recursive, r2_score, re_summary)
from .svm import SvmParams, SvrParams, grid_search, train_history_svm, train_svr

log = logging.getLogger(__name__)

Pair = tuple[Waveform, Trace]


@dataclass
class Corpus:
    name: str
    pairs: list[Pair]
    netlist: circuits.Netlist | None = None

    @property
    def waveforms(self) -> list[Waveform]:
        return [w for w, _ in self.pairs]

    @property
    def traces(self) -> list[Trace]:
        return [t for _, t in self.pairs]


def _with_traces(wfs: list[Waveform], p: OracleParams) -> list[Pair]:
    return list(zip(wfs, run_traces(wfs, p)))


def circuit_corpus(nl: circuits.Netlist, n_segments: int, seed: int, cfg: RunConfig = RunConfig(),
                   p: OracleParams = OracleParams(), tag: str | None = None) -> Corpus:
    wfs = circuits.simulate(nl, circuits.StimulusPlan(n_segments, seed), cfg)
    out = []
    for dev, w in wfs.items():
        out.append(w if tag is None else Waveform(f"{tag}/{dev}", w.segment_duration, w.segments))
    return Corpus(nl.name if tag is None else tag, _with_traces(out, p), nl)


def std_cell_corpus(n_segments: int = 32, seed: int = 0, repeats: int = 5, cfg: RunConfig = RunConfig(),
                    p: OracleParams = OracleParams()) -> Corpus:
    """Every library cell simulated standalone under ``repeats`` random stimuli."""
    wfs = []
    for cell in circuits.std_cell_library():
        nl = circuits.single_cell_netlist(cell)
        for r in range(repeats):
            sim = circuits.simulate(nl, circuits.StimulusPlan(n_segments, seed * 1000 + r), cfg)
            wfs.extend(Waveform(f"{cell.name}#{r}/{d}", w.segment_duration, w.segments) for d, w in sim.items())
    return Corpus("stdcells", _with_traces(wfs, p))


def multi_seed_corpus(name: str, seeds: Sequence[int], n_segments: int = 32, cfg: RunConfig = RunConfig(),
                      p: OracleParams = OracleParams()) -> Corpus:
    nl = circuits.build_named(name)
    pairs: list[Pair] = []
    for s in seeds:
        pairs.extend(circuit_corpus(nl, n_segments, s, cfg, p, tag=f"{name}#{s}").pairs)
    return Corpus(name, pairs, nl)


# --------------------------------------------------------------- scenario 1

@dataclass(frozen=True)
class Scenario1Config:
    seed: int = 0
    n_segments: int = 32
    repeats: int = 5
    svm_h: int = 8
    hdc_h: int = 7
    n_bins: int = 64
    svm: SvmParams = SvmParams()
    hdc: HdcParams = HdcParams()


@dataclass
class ModelRun:
    name: str
    preds: list[Trace]
    mult: BiasMultiplier
    train_seconds: float
    infer_seconds: float
    extra: dict = field(default_factory=dict)


@dataclass
class Scenario1Result:
    train: Corpus
    test: Corpus
    quantizer: QuantizerSpec
    runs: dict[str, ModelRun]
    models: dict = field(default_factory=dict)

    def summary(self, name: str):
        return re_summary(self.runs[name].preds, self.test.traces)


def run_scenario1(cfg: Scenario1Config = Scenario1Config(), models: Sequence[str] = ("SVM", "HDC"),
                  train: Corpus | None = None, test: Corpus | None = None) -> Scenario1Result:
    train = train or std_cell_corpus(cfg.n_segments, cfg.seed, cfg.repeats)
    test = test or circuit_corpus(circuits.build_adder8(), cfg.n_segments, cfg.seed + 1)
    q = QuantizerSpec.from_traces(train.traces, cfg.n_bins)
    runs, trained = {}, {}
    for name in models:
        t0 = time.perf_counter()
        if name == "SVM":
            ds = build_history_dataset(train.pairs, cfg.svm_h)
            reg = train_history_svm(ds.X, ds.y, cfg.svm_h, q, cfg.svm)
        elif name == "HDC":
            ds = build_history_dataset(train.pairs, cfg.hdc_h)
            reg = train_history_hdc(ds.X, ds.y, cfg.hdc_h, q, cfg.hdc)
        else:
            raise ValueError(f"unknown scenario-1 model {name!r}")
        t_train = time.perf_counter() - t0
        mult = fit_multiplier(reg, train.pairs)
        t0 = time.perf_counter()
        preds = predict_traces_recursive(reg, test.waveforms, mult)
        t_inf = time.perf_counter() - t0
        runs[name] = ModelRun(name, preds, mult, t_train, t_inf)
        trained[name] = reg
        log.info("scenario1 %s: train %.1fs, multiplier %.4f", name, t_train, mult.factor)
    return Scenario1Result(train, test, q, runs, trained)


# --------------------------------------------------------------- scenario 2

@dataclass(frozen=True)
class Scenario2Config:
    seed: int = 0
    n_segments: int = 32
    train_seeds: int = 5
    svr: SvrParams = SvrParams()
    grid: bool = True
    mlp: TrainSpec = TrainSpec(epochs=200)
    lstm: TrainSpec = TrainSpec(epochs=LSTM_PRESETS["lstm-eol"]["epochs"], loss="l1")
    lstm_hidden: int = LSTM_PRESETS["lstm-eol"]["hidden"]
    hdc: HdcParams = HdcParams()
    n_bins: int = 64
    eol: RunConfig = RunConfig()
    delay: DelayModel = DelayModel()


@dataclass
class Scenario2Result:
    train: Corpus
    test: Corpus
    report: EolReport
    r2: dict[str, float]
    timings: dict[str, float]
    grid: list[dict] = field(default_factory=list)
    models: dict = field(default_factory=dict)


def _features(X: np.ndarray, vdd: float) -> np.ndarray:
    return X / vdd


def train_eol_models(train: Corpus, cfg: Scenario2Config, models: Sequence[str], val: Corpus | None = None):
    ds = build_eol_dataset(train.pairs)
    X = _features(ds.X, cfg.eol.vdd)
    trained, timings, grid = {}, {}, []
    for name in models:
        t0 = time.perf_counter()
        if name == "SVR":
            params = cfg.svr
            if cfg.grid and val is not None:
                vds = build_eol_dataset(val.pairs)
                best, grid = grid_search(X, ds.y, _features(vds.X, cfg.eol.vdd), vds.y, "regression",
                                         epsilon=cfg.svr.epsilon)
                params = SvrParams(best["C"], best["gamma"], cfg.svr.epsilon, cfg.svr.tol)
            trained[name] = train_svr(X, ds.y, params)
        elif name == "MLP":
            trained[name] = train_mlp(X, ds.y, cfg.mlp)
        elif name == "LSTM":
            sds = build_seq_dataset(train.pairs, reverse=False)
            trained[name] = train_lstm(sds.inputs / cfg.eol.vdd, sds.targets, cfg.lstm, cfg.lstm_hidden)
        elif name == "HDC":
            q = QuantizerSpec.from_traces(train.traces, cfg.n_bins)
            trained[name] = train_eol_hdc(ds.X, ds.y, q, cfg.hdc, cfg.eol.vdd)
        else:
            raise ValueError(f"unknown scenario-2 model {name!r}")
        timings[f"{name} training"] = time.perf_counter() - t0
    return trained, timings, grid


def predict_last(name: str, model, wfs: Sequence[Waveform], vdd: float) -> np.ndarray:
    X = np.array([w.segments for w in wfs], dtype=float)
    if name == "LSTM":
        return model.predict_last(X / vdd)
    if name == "HDC":
        return model.predict_mv(X)
    return model.predict(_features(X, vdd))


def _device_map(test: Corpus) -> dict[str, str]:
    """Corpus transistor id -> netlist device id."""
    return {w.transistor_id: w.transistor_id.split("/", 1)[-1] for w in test.waveforms}


def eol_report(test: Corpus, preds: dict[str, np.ndarray], cfg: Scenario2Config,
               p: OracleParams = OracleParams()) -> tuple[EolReport, dict[str, float]]:
    nl = test.netlist
    dev = _device_map(test)
    wf_by_dev = {dev[w.transistor_id]: w for w in test.waveforms}
    path = circuits.critical_path(nl)

    def column(name, last: dict[str, float], wfs=wf_by_dev):
        eol = eol_map(last, wfs, cfg.eol)
        return ModelEol(name, last, eol, delay_report(nl, eol, cfg.delay, path))

    base_last = {dev[w.transistor_id]: t.last for w, t in test.pairs}
    report = EolReport(nl.name, column("Baseline", base_last))
    r2s = {}
    base_vec = np.array([t.last for t in test.traces])
    for name, vec in preds.items():
        last = {dev[w.transistor_id]: float(v) for w, v in zip(test.waveforms, vec)}
        col = column(name, last)
        col.r2 = r2_score(vec, base_vec)
        col.re = re_summary([Trace(w.transistor_id, [float(v)]) for w, v in zip(test.waveforms, vec)],
                            [Trace(t.transistor_id, [t.last]) for t in test.traces])
        r2s[name] = col.r2
        report.models[name] = col
    # constant-stress bound: the waveform fed to the projection is the stress one
    worst_wf = {d: worst_case_waveform(w, cfg.eol.vdd) for d, w in wf_by_dev.items()}
    worst_last = {d: worst_case_trace(w, p).last for d, w in wf_by_dev.items()}
    report.models["Worst Case"] = column("Worst Case", worst_last, worst_wf)
    return report, r2s


def run_scenario2(cfg: Scenario2Config = Scenario2Config(), models: Sequence[str] = ("SVR", "MLP", "LSTM"),
                  test_circuit: str = "mac32", train: Corpus | None = None, test: Corpus | None = None,
                  val: Corpus | None = None) -> Scenario2Result:
    s = cfg.seed * 100
    train = train or multi_seed_corpus("adder8", range(s + 1, s + 1 + cfg.train_seeds), cfg.n_segments)
    val = val or multi_seed_corpus("adder8", [s + 99], cfg.n_segments)
    test = test or multi_seed_corpus(test_circuit, [s + 50], cfg.n_segments)
    trained, timings, grid = train_eol_models(train, cfg, models, val)
    preds = {}
    for name, m in trained.items():
        t0 = time.perf_counter()
        preds[name] = predict_last(name, m, test.waveforms, cfg.eol.vdd)
        timings[f"{name} inference"] = time.perf_counter() - t0
    report, r2s = eol_report(test, preds, cfg)
    return Scenario2Result(train, test, report, r2s, timings, grid, trained)
