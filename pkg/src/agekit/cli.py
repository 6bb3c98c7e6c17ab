"""``agekit`` command-line front end.

Exit codes:
    0  success
    2  usage error (unknown flag, bad value)
    3  missing input file
    4  schema mismatch (malformed CSV, config or model file)
    5  runtime failure (numerical divergence, infeasible request)

Failures print one line to stderr: ``agekit: error code=<n> kind=<kind> msg=<json string>``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import platform
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, circuits
from .core import (FormatError, QuantizerSpec, RunConfig, Trace, Waveform, align, fmt_float, load_run_config,
                   read_traces, read_waveforms, traces_from_csv, traces_to_csv, waveforms_to_csv)
from .dataset import build_eol_dataset, build_history_dataset, eol_to_csv, history_to_csv
from .hdc import (HdcEolRegressor, HdcHistoryRegressor, HdcParams, loads_hdc, regressor_from_model, dumps_hdc,
                  train_eol_hdc, train_history_hdc)
from .neural import LSTM_PRESETS, LstmSeq2Seq, TrainSpec, dumps_nn, loads_nn, train_lstm, train_mlp
from .oracle import OracleParams, load_params, run_trace, run_traces, worst_case_trace, worst_case_waveform
from .predictor import (BiasMultiplier, DelayModel, EolReport, ModelEol, delay_report, eol_map, error_analysis,
                        fit_multiplier, predict_traces_recursive, r2_score, re_summary)
from .svm import (SvmModel, SvmParams, SvrModel, SvrParams, dumps_svm, grid_search, loads_svm,
                  svm_regressor_from_model, train_history_svm, train_svr)

log = logging.getLogger("agekit")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_SCHEMA, EXIT_RUNTIME = 0, 2, 3, 4, 5
MANIFEST_SCHEMA = "agekit-manifest/1"


class CliError(Exception):
    def __init__(self, code: int, kind: str, msg: str):
        super().__init__(msg)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


# ------------------------------------------------------------------ helpers

def _need(path: str | None) -> Path:
    if path is None:
        raise CliError(EXIT_USAGE, "usage", "missing required path")
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_MISSING, "missing-file", f"no such file: {path}")
    return p


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(path: str | Path, data: str | bytes, outputs: dict) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    raw = data.encode() if isinstance(data, str) else data
    path.write_bytes(raw)
    outputs[str(path)] = _sha256(raw)


def _versions() -> dict:
    import scipy

    return {"agekit": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _manifest(args: argparse.Namespace, outputs: dict) -> None:
    if not outputs:
        return
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "jobs", "verbose")}
    canon = json.dumps(cfg, sort_keys=True, default=str)
    doc = {
        "schema": MANIFEST_SCHEMA,
        "command": args.command,
        "seed": args.seed,
        "config": cfg,
        "config_hash": _sha256(canon.encode()),
        "versions": _versions(),
        "outputs": dict(sorted(outputs.items())),
    }
    first = Path(sorted(outputs)[0])
    first.with_name(first.name + ".manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True,
                                                                         default=str) + "\n")


def _run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_run_config(_need(args.config))
    else:
        cfg = RunConfig()
    if getattr(args, "vdd", None) is not None:
        cfg = RunConfig(args.vdd, cfg.temperature_c, cfg.segment_duration, cfg.eol_seconds, cfg.rng_seed)
    return cfg


def _oracle_params(args) -> OracleParams:
    p = load_params(_need(args.params)) if getattr(args, "params", None) else OracleParams()
    if getattr(args, "substeps", None):
        from dataclasses import replace

        p = replace(p, substeps=args.substeps)
    return p


def _jobs(args) -> int:
    return max(1, args.jobs or os.cpu_count() or 1)


def _chunks(items: list, n: int) -> list[list]:
    k, r = divmod(len(items), n)
    out, start = [], 0
    for i in range(n):
        end = start + k + (1 if i < r else 0)
        if end > start:
            out.append(items[start:end])
        start = end
    return out


def _oracle_parallel(wfs: list[Waveform], p: OracleParams, jobs: int) -> list[Trace]:
    """Row results do not depend on batching, so chunked workers match a single pass."""
    if jobs <= 1 or len(wfs) < 2 * jobs:
        return run_traces(wfs, p)
    with ProcessPoolExecutor(jobs) as pool:
        parts = list(pool.map(run_traces, _chunks(wfs, jobs), [p] * jobs))
    return [t for part in parts for t in part]


def _stdcell_waveforms(n_segments: int, seed: int, repeats: int, cfg: RunConfig) -> list[Waveform]:
    wfs = []
    for cell in circuits.std_cell_library():
        nl = circuits.single_cell_netlist(cell)
        for r in range(repeats):
            sim = circuits.simulate(nl, circuits.StimulusPlan(n_segments, seed * 1000 + r), cfg)
            wfs.extend(Waveform(f"{cell.name}#{r}/{d}", w.segment_duration, w.segments) for d, w in sim.items())
    return wfs


def _read_waveforms(path: str) -> list[Waveform]:
    try:
        return read_waveforms(_need(path))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _read_traces(path: str) -> list[Trace]:
    try:
        return read_traces(_need(path))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _pairs(args) -> list[tuple[Waveform, Trace]]:
    try:
        return align(_read_waveforms(args.waveforms), _read_traces(args.traces))
    except FormatError:
        raise
    except ValueError as exc:
        raise FormatError(str(exc)) from None


# ------------------------------------------------------------- model files

def load_model(path: str | Path):
    data = _need(str(path)).read_bytes()
    magic = data[:8]
    if magic == b"AGKHDC01":
        return regressor_from_model(loads_hdc(data))
    if magic == b"AGKSVM01":
        m = loads_svm(data)
        return svm_regressor_from_model(m) if isinstance(m, SvmModel) else m
    if magic == b"AGKNN001":
        return loads_nn(data)
    raise FormatError(f"unrecognised model file {path}")


def _model_bytes(model) -> bytes:
    if isinstance(model, (HdcHistoryRegressor, HdcEolRegressor)):
        return dumps_hdc(model.model)
    if isinstance(model, SvrModel):
        return dumps_svm(model)
    if hasattr(model, "model") and isinstance(model.model, SvmModel):
        return dumps_svm(model.model)
    return dumps_nn(model)


def _meta(model) -> dict:
    inner = getattr(model, "model", model)
    return inner.meta


def _is_history(model) -> bool:
    return _meta(model).get("task") == "history"


def _predict_last(model, wfs: list[Waveform], vdd: float) -> np.ndarray:
    X = np.array([w.segments for w in wfs], dtype=float)
    if isinstance(model, LstmSeq2Seq):
        return model.predict_last(X / vdd)
    if isinstance(model, HdcEolRegressor):
        return model.predict_mv(X)
    return model.predict(X / vdd)


# ------------------------------------------------------------- subcommands

def cmd_sim(args) -> dict:
    cfg = _run_config(args)
    cfg.check_window(args.segments)
    if args.netlist == "stdcells":
        wfs = _stdcell_waveforms(args.segments, args.seed, args.repeats, cfg)
    else:
        try:
            nl = circuits.build_named(args.netlist)
        except FileNotFoundError as exc:
            raise CliError(EXIT_MISSING, "missing-file", str(exc)) from None
        wfs = list(circuits.simulate(nl, circuits.StimulusPlan(args.segments, args.seed), cfg).values())
    out = {}
    _write(args.out, waveforms_to_csv(wfs), out)
    log.info("%d waveforms -> %s", len(wfs), args.out)
    return out


def cmd_oracle(args) -> dict:
    wfs = _read_waveforms(args.waveforms)
    p = _oracle_params(args)
    traces = _oracle_parallel(wfs, p, _jobs(args))
    out = {}
    _write(args.out, traces_to_csv(traces), out)
    if args.worst_case:
        _write(args.worst_case, traces_to_csv([worst_case_trace(w, p) for w in wfs]), out)
    return out


def cmd_dataset(args) -> dict:
    pairs = _pairs(args)
    out = {}
    if args.kind == "history":
        ds = build_history_dataset(pairs, args.h, _run_config(args).vdd)
        q = QuantizerSpec.from_traces([t for _, t in pairs], args.bins)
        _write(args.out, history_to_csv(ds, q), out)
    else:
        _write(args.out, eol_to_csv(build_eol_dataset(pairs)), out)
    return out


def cmd_train(args) -> dict:
    pairs = _pairs(args)
    vdd = _run_config(args).vdd
    traces = [t for _, t in pairs]
    kind = args.model
    if kind in ("svm", "hdc"):
        h = args.h if args.h is not None else (8 if kind == "svm" else 7)
        q = QuantizerSpec.from_traces(traces, args.bins)
        ds = build_history_dataset(pairs, h, vdd)
        if kind == "svm":
            model = train_history_svm(ds.X, ds.y, h, q, SvmParams(args.C, args.gamma), vdd)
        else:
            model = train_history_hdc(ds.X, ds.y, h, q, HdcParams(args.dim, args.epochs or 50, args.lr or 0.01,
                                                                  args.seed), vdd)
        mult = fit_multiplier(model, pairs) if not args.no_multiplier else BiasMultiplier(1.0)
        _meta(model)["multiplier"] = mult.factor
    elif kind == "svr":
        X = build_eol_dataset(pairs).X / vdd
        y = np.array([t.last for t in traces])
        C, gamma = args.C, args.gamma
        if args.grid:
            vpairs = align(_read_waveforms(args.val_waveforms), _read_traces(args.val_traces))
            vds = build_eol_dataset(vpairs)
            best, _ = grid_search(X, y, vds.X / vdd, vds.y, "regression")
            C, gamma = best["C"], best["gamma"]
        model = train_svr(X, y, SvrParams(C, gamma, args.epsilon), {"task": "eol", "vdd": vdd})
    elif kind == "mlp":
        ds = build_eol_dataset(pairs)
        model = train_mlp(ds.X / vdd, ds.y, TrainSpec(epochs=args.epochs or 200, learn_rate=args.lr or 1e-3,
                                                      rng_seed=args.seed, loss=args.loss or "mse"))
        model.meta.update({"task": "eol", "vdd": vdd})
    elif kind == "lstm":
        preset = LSTM_PRESETS[args.preset]
        ds = build_eol_dataset(pairs)
        Y = np.array([t.dvt for t in traces], dtype=float)
        spec = TrainSpec(epochs=args.epochs or preset["epochs"], learn_rate=args.lr or 1e-3, rng_seed=args.seed,
                         loss=args.loss or preset["loss"])
        model = train_lstm(ds.X / vdd, Y, spec, args.hidden or preset["hidden"], reverse=not args.no_reverse)
        model.meta.update({"task": "seq", "vdd": vdd, "preset": args.preset})
    elif kind == "hdc-eol":
        ds = build_eol_dataset(pairs)
        q = QuantizerSpec.from_traces(traces, args.bins)
        model = train_eol_hdc(ds.X, ds.y, q, HdcParams(args.dim, args.epochs or 50, args.lr or 0.01, args.seed),
                              vdd)
    else:  # pragma: no cover - argparse restricts choices
        raise CliError(EXIT_USAGE, "usage", f"unknown model {kind}")
    out = {}
    _write(args.out, _model_bytes(model), out)
    return out


def _last_csv(ids: Sequence[str], values: Sequence[float]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["transistor_id", "last_mv"])
    for i, v in zip(ids, values):
        wr.writerow([i, fmt_float(float(v))])
    return buf.getvalue()


def read_last(path: str | Path) -> dict[str, float]:
    """Per-transistor last ΔVth from either a ``last_mv`` file or a traces file."""
    text = _need(str(path)).read_text()
    head = text.split("\n", 1)[0].strip().split(",")
    if head == ["transistor_id", "last_mv"]:
        rows = list(csv.reader(io.StringIO(text)))[1:]
        return {r[0]: float(r[1]) for r in rows if r}
    return {t.transistor_id: t.last for t in traces_from_csv(text)}


def cmd_predict(args) -> dict:
    model = load_model(args.model)
    wfs = _read_waveforms(args.waveforms)
    vdd = _meta(model).get("vdd", _run_config(args).vdd)
    out = {}
    if _is_history(model):
        mult = BiasMultiplier(1.0 if args.no_multiplier else _meta(model).get("multiplier", 1.0))
        preds = predict_traces_recursive(model, wfs, mult)
        _write(args.out, traces_to_csv(preds), out)
    elif isinstance(model, LstmSeq2Seq):
        Y = model.predict(np.array([w.segments for w in wfs], dtype=float) / vdd)
        _write(args.out, traces_to_csv([Trace(w.transistor_id, y.tolist()) for w, y in zip(wfs, Y)]), out)
    else:
        _write(args.out, _last_csv([w.transistor_id for w in wfs], _predict_last(model, wfs, vdd)), out)
    return out


def cmd_eol(args) -> dict:
    cfg = _run_config(args)
    try:
        nl = circuits.build_named(args.netlist)
    except FileNotFoundError as exc:
        raise CliError(EXIT_MISSING, "missing-file", str(exc)) from None
    pairs = _pairs(args)
    dev = {w.transistor_id: w.transistor_id.split("/", 1)[-1] for w, _ in pairs}
    wf_by_dev = {dev[w.transistor_id]: w for w, _ in pairs}
    known = {d for d, _, _ in nl.devices()}
    if set(wf_by_dev) != known:
        raise FormatError(f"waveforms do not cover the devices of {nl.name}")
    dm = DelayModel(args.vth0, args.alpha, args.d0, cfg.vdd)
    path = circuits.critical_path(nl)

    def column(name, last, wfs=wf_by_dev):
        eol = eol_map(last, wfs, cfg)
        return ModelEol(name, last, eol, delay_report(nl, eol, dm, path))

    base_last = {dev[w.transistor_id]: t.last for w, t in pairs}
    report = EolReport(nl.name, column("Baseline", base_last))
    base_vec = np.array([base_last[d] for d in sorted(base_last)])
    for spec in args.pred or []:
        if "=" not in spec:
            raise CliError(EXIT_USAGE, "usage", f"--pred expects NAME=PATH, got {spec!r}")
        name, path_s = spec.split("=", 1)
        raw = read_last(path_s)
        last = {dev.get(k, k.split("/", 1)[-1]): v for k, v in raw.items()}
        if set(last) != set(base_last):
            raise FormatError(f"predictions in {path_s} do not match the baseline transistors")
        col = column(name, last)
        col.r2 = r2_score([last[d] for d in sorted(last)], base_vec)
        report.models[name] = col
    p = _oracle_params(args)
    worst_wf = {d: worst_case_waveform(w, cfg.vdd) for d, w in wf_by_dev.items()}
    report.models["Worst Case"] = column("Worst Case", {d: worst_case_trace(w, p).last for d, w in wf_by_dev.items()},
                                         worst_wf)
    out = {}
    _write(args.out, report.to_csv(), out)
    if args.table:
        _write(args.table, report.table(), out)
    if args.gates:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        cols = ["Baseline", *sorted(report.models)]
        wr.writerow(["gate", *(f"{c}_delta_ps" for c in cols), "infeasible_in"])
        all_cols = [report.baseline] + [report.models[c] for c in cols[1:]]
        for g in nl.order:
            bad = ";".join(c.name for c in all_cols if g in c.delay.infeasible)
            wr.writerow([g, *(fmt_float(c.delay.gate_delta[g]) for c in all_cols), bad])
        _write(args.gates, buf.getvalue(), out)
    sys.stdout.write(report.table())
    return out


def cmd_report(args) -> dict:
    pairs = _pairs(args)
    preds_raw = read_last(args.pred) if args.last_only else None
    out = {}
    bases = [t for _, t in pairs]
    if preds_raw is None:
        ptr = {t.transistor_id: t for t in traces_from_csv(_need(args.pred).read_text())}
        if set(ptr) != {t.transistor_id for t in bases}:
            raise FormatError("prediction ids do not match the baseline traces")
        preds = [ptr[t.transistor_id] for t in bases]
        s = re_summary(preds, bases)
        last = [p.last for p in preds]
        summary = {"mean_abs_re_last": s.mean_abs_last, "mean_re_last": s.mean_last,
                   "mean_abs_re_by_segment": s.mean_abs_by_segment().tolist(), "excluded": len(s.excluded)}
    else:
        if set(preds_raw) != {t.transistor_id for t in bases}:
            raise FormatError("prediction ids do not match the baseline traces")
        last = [preds_raw[t.transistor_id] for t in bases]
        s = re_summary([Trace(t.transistor_id, [v]) for t, v in zip(bases, last)],
                       [Trace(t.transistor_id, [t.last]) for t in bases])
        summary = {"mean_abs_re_last": s.mean_abs_last, "mean_re_last": s.mean_last, "excluded": len(s.excluded)}
    base_last = [t.last for t in bases]
    summary["r2_last"] = r2_score(last, base_last) if np.var(base_last) > 0 else None
    ea = error_analysis(last, base_last, [w for w, _ in pairs])
    summary["error_analysis"] = ea.summary
    _write(args.out, json.dumps(summary, indent=2, sort_keys=True) + "\n", out)
    if args.analysis:
        _write(args.analysis, ea.to_csv(), out)
    return out


def _median_per_trace(fn, items, runs: int) -> float:
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn(items)
        samples.append((time.perf_counter() - t0) / len(items))
    return statistics.median(samples)


def bench(model_name: str = "hdc", dim: int = 10000, runs: int = 30, n_segments: int = 32, seed: int = 0,
          epochs: int = 50, substeps: int = 100, model=None) -> dict:
    """Per-trace wall time of the oracle and a surrogate on adder traces (single thread)."""
    from .scenarios import circuit_corpus, std_cell_corpus
    from dataclasses import replace

    p = replace(OracleParams(), substeps=substeps)
    test = circuit_corpus(circuits.build_adder8(), n_segments, seed + 1, p=p)
    wfs = test.waveforms
    rows: dict[str, float] = {}
    train_s = None
    if model is None:
        train = std_cell_corpus(n_segments, seed, p=p)
        q = QuantizerSpec.from_traces(train.traces)
        t0 = time.perf_counter()
        if model_name == "hdc":
            ds = build_history_dataset(train.pairs, 7)
            model = train_history_hdc(ds.X, ds.y, 7, q, HdcParams(dim, epochs, 0.01, seed))
        elif model_name == "svm":
            ds = build_history_dataset(train.pairs, 8)
            model = train_history_svm(ds.X, ds.y, 8, q)
        else:
            raise ValueError(f"bench supports hdc and svm, not {model_name!r}")
        train_s = time.perf_counter() - t0
    rows["oracle per trace [s]"] = _median_per_trace(lambda ws: [run_trace(w, p) for w in ws], wfs, runs)
    rows["oracle batched per trace [s]"] = _median_per_trace(lambda ws: run_traces(ws, p), wfs, runs)
    rows[f"{model_name} per trace [s]"] = _median_per_trace(
        lambda ws: [predict_traces_recursive(model, [w]) for w in ws], wfs, runs)
    rows[f"{model_name} batched per trace [s]"] = _median_per_trace(
        lambda ws: predict_traces_recursive(model, ws), wfs, runs)
    if train_s is not None:
        rows[f"{model_name} training [s]"] = train_s
    rows["speedup per trace"] = rows["oracle per trace [s]"] / rows[f"{model_name} per trace [s]"]
    rows["speedup batched"] = rows["oracle batched per trace [s]"] / rows[f"{model_name} batched per trace [s]"]
    return rows


def cmd_bench(args) -> dict:
    model = load_model(args.model_file) if args.model_file else None
    rows = bench(args.model, args.dim, args.runs, args.segments, args.seed, args.epochs or 50,
                 args.substeps or 100, model)
    width = max(len(k) for k in rows)
    text = f"Execution times, adder8, {args.segments} segments (median of {args.runs} runs)\n"
    text += "".join(f"{k:<{width}}  {v:.6g}\n" for k, v in rows.items())
    sys.stdout.write(text)
    out = {}
    if args.out:
        _write(args.out, text, out)
    return out


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="agekit", description="Transistor aging surrogates: simulate, label, train, predict.")
    ap.add_argument("--version", action="version", version=f"agekit {__version__}")
    ap.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    ap.add_argument("--jobs", type=int, default=None, help="worker processes (default: logical cores)")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="overrides the global --seed")
        p.add_argument("--config", help="run-config key=value file")
        p.add_argument("--vdd", type=float, help="supply voltage [V]")

    p = sub.add_parser("sim", help="gate-level simulation -> per-pMOS waveforms CSV")
    common(p)
    p.add_argument("--netlist", required=True, help="adder8, mac32, stdcells, a cell name or a JSON netlist")
    p.add_argument("--segments", type=int, default=32)
    p.add_argument("--repeats", type=int, default=5, help="stimuli per cell for --netlist stdcells")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("oracle", help="label waveforms with oracle ΔVth traces")
    common(p)
    p.add_argument("action", nargs="?", choices=["run"], default="run")
    p.add_argument("--waveforms", required=True)
    p.add_argument("--params", help="oracle key=value parameter file")
    p.add_argument("--substeps", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--worst-case", help="also write constant-stress traces here")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("dataset", help="build a history or EOL dataset CSV")
    common(p)
    p.add_argument("--waveforms", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--mode", "--kind", dest="kind", choices=["history", "eol"], default="history")
    p.add_argument("--h", type=int, default=8)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a surrogate model")
    common(p)
    p.add_argument("--model", required=True, choices=["svm", "hdc", "svr", "mlp", "lstm", "hdc-eol"])
    p.add_argument("--waveforms", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--h", type=int, help="history length (svm 8, hdc 7)")
    p.add_argument("--bins", type=int, default=64, help="ΔVth classes for svm/hdc")
    p.add_argument("--C", type=float, default=100.0)
    p.add_argument("--gamma", type=float, default=0.001)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--grid", action="store_true", help="svr: grid search on --val-* data")
    p.add_argument("--val-waveforms")
    p.add_argument("--val-traces")
    p.add_argument("--dim", type=int, default=10000)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--loss", choices=["mse", "l1"])
    p.add_argument("--preset", choices=sorted(LSTM_PRESETS), default="lstm-eol")
    p.add_argument("--hidden", type=int)
    p.add_argument("--no-reverse", action="store_true", help="lstm: feed the encoder in time order")
    p.add_argument("--no-multiplier", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="apply a trained model to waveforms")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--waveforms", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-multiplier", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eol", help="end-of-life ΔVth and delay table")
    common(p)
    p.add_argument("--netlist", required=True)
    p.add_argument("--waveforms", required=True)
    p.add_argument("--traces", required=True, help="oracle traces (baseline)")
    p.add_argument("--pred", action="append", metavar="NAME=PATH", help="model predictions, repeatable")
    p.add_argument("--params", help="oracle parameter file for the worst-case column")
    p.add_argument("--substeps", type=int)
    p.add_argument("--vth0", type=float, default=0.3)
    p.add_argument("--alpha", type=float, default=1.3)
    p.add_argument("--d0", type=float, default=10.0)
    p.add_argument("--out", required=True, help="per-transistor CSV")
    p.add_argument("--table", help="text table")
    p.add_argument("--gates", help="per-gate delay CSV")
    p.set_defaults(func=cmd_eol)

    p = sub.add_parser("report", help="error metrics of predictions against oracle traces")
    common(p)
    p.add_argument("--waveforms", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--last-only", action="store_true", help="predictions are last-value files")
    p.add_argument("--out", required=True, help="summary JSON")
    p.add_argument("--analysis", help="per-transistor error analysis CSV")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bench", help="oracle vs surrogate per-trace timing")
    common(p)
    p.add_argument("--model", choices=["hdc", "svm"], default="hdc")
    p.add_argument("--model-file", help="use this trained model instead of training one")
    p.add_argument("--dim", type=int, default=10000)
    p.add_argument("--epochs", type=int)
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--segments", type=int, default=32)
    p.add_argument("--substeps", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return ap


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        outputs = args.func(args)
        _manifest(args, outputs)
        return EXIT_OK
    except CliError as exc:
        err = exc
    except FileNotFoundError as exc:
        err = CliError(EXIT_MISSING, "missing-file", str(exc))
    except (FormatError, KeyError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        err = CliError(EXIT_SCHEMA, "schema", str(exc))
    except (ValueError, FloatingPointError, ArithmeticError) as exc:
        err = CliError(EXIT_RUNTIME, "runtime", str(exc))
    sys.stderr.write(f"agekit: error code={err.code} kind={err.kind} msg={json.dumps(str(err))}\n")
    return err.code


def main() -> None:  # pragma: no cover - console entry point
    sys.exit(run())
