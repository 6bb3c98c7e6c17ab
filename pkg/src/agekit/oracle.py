"""Analytical NBTI trap capture/emission oracle.

This is a stand-in for a calibrated physics-based BTI model. Every trap species
relaxes towards an equilibrium occupancy set by the gate stress; a slowly
generated, slowly annealed permanent component is added on top. The ML
surrogates only ever see the waveform -> trace mapping it produces.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (DEFAULT_VDD, FormatError, RunConfig, Trace, Waveform, duty_cycle,
                   dump_kv, parse_kv)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrapSpecies:
    tau_capture: float
    tau_emission: float
    k_mv: float
    occupancy: float = 0.0

    def __post_init__(self):
        if not (self.tau_capture > 0 and self.tau_emission > 0):
            raise ValueError("trap time constants must be positive")
        if not self.k_mv > 0:
            raise ValueError("trap amplitude must be positive")
        if not 0.0 <= self.occupancy <= 1.0:
            raise ValueError("occupancy outside [0, 1]")


DEFAULT_SPECIES = (
    TrapSpecies(1e-3, 5e-3, 8.0),
    TrapSpecies(1e-1, 5e-1, 16.0),
    TrapSpecies(10.0, 50.0, 24.0),
)


@dataclass(frozen=True)
class OracleParams:
    species: tuple[TrapSpecies, ...] = DEFAULT_SPECIES
    gamma: float = 2.0
    perm_rate: float = 1e-3
    perm_anneal: float = 1e-4
    perm_max: float = 20.0
    substeps: int = 100
    vdd: float = DEFAULT_VDD

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        if not self.species:
            raise ValueError("need at least one trap species")
        if min(self.gamma, self.perm_rate, self.perm_anneal) < 0:
            raise ValueError("oracle rates must be non-negative")
        if not self.perm_max > 0:
            raise ValueError("perm_max must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    @property
    def saturation_mv(self) -> float:
        return sum(s.k_mv for s in self.species) + self.perm_max


@dataclass(frozen=True)
class OracleState:
    occupancies: tuple[float, ...]
    permanent_mv: float = 0.0

    @classmethod
    def fresh(cls, p: OracleParams) -> "OracleState":
        return cls(tuple(s.occupancy for s in p.species), 0.0)

    def dvt(self, p: OracleParams) -> float:
        return sum(s.k_mv * th for s, th in zip(p.species, self.occupancies)) + self.permanent_mv


def stress_level(v: float, vdd: float = DEFAULT_VDD) -> float:
    """Normalised gate stress, 1 with the gate at 0 V and 0 at Vdd."""
    if v < 0.0 or v > vdd:
        log.warning("gate voltage %.4g V outside [0, %.4g]; clamping", v, vdd)
        v = min(max(v, 0.0), vdd)
    return (vdd - v) / vdd


@dataclass(frozen=True)
class _SegmentCoeffs:
    theta_eq: tuple[float, ...]
    decay: tuple[float, ...]
    gen: float
    anneal: float


@lru_cache(maxsize=4096)
def _coeffs(p: OracleParams, v: float, dt_sub: float) -> _SegmentCoeffs:
    s = stress_level(v, p.vdd)
    sg = s ** p.gamma
    rg = (1.0 - s) ** p.gamma
    theta_eq, decay = [], []
    for sp in p.species:
        kc = sg / sp.tau_capture
        ke = rg / sp.tau_emission
        total = kc + ke
        theta_eq.append(kc / total if total > 0 else 0.0)
        decay.append(math.exp(-dt_sub * total))
    return _SegmentCoeffs(tuple(theta_eq), tuple(decay), p.perm_rate * sg, p.perm_anneal * (1.0 - s))


def step_segment(state: OracleState, p: OracleParams, v: float, dt: float) -> tuple[OracleState, float]:
    """Advance one segment held at gate voltage ``v`` for ``dt`` seconds."""
    if not dt > 0:
        raise ValueError("segment duration must be positive")
    n = p.substeps
    dt_sub = dt / n
    c = _coeffs(p, float(v), dt_sub)
    occ = list(state.occupancies)
    perm = state.permanent_mv
    pmax = p.perm_max
    for _ in range(n):
        for j in range(len(occ)):
            occ[j] = c.theta_eq[j] + (occ[j] - c.theta_eq[j]) * c.decay[j]
        perm = perm + dt_sub * (c.gen * (1.0 - perm / pmax) - c.anneal * perm)
    new = OracleState(tuple(occ), perm)
    dvt = new.dvt(p)
    if not (math.isfinite(dvt) and all(math.isfinite(o) for o in occ)):
        raise FloatingPointError("oracle diverged")
    return new, dvt


def run_trace(w: Waveform, p: OracleParams = OracleParams()) -> Trace:
    """Reference per-transistor evaluation: fold ``step_segment`` over the waveform."""
    state = OracleState.fresh(p)
    out = []
    for v in w.segments:
        state, dvt = step_segment(state, p, v, w.segment_duration)
        out.append(dvt)
    return Trace(w.transistor_id, out)


def run_traces(wfs: Sequence[Waveform], p: OracleParams = OracleParams()) -> list[Trace]:
    """Vectorised ``run_trace`` over many transistors.

    Performs the same floating-point operations in the same order as the scalar
    path, so the results are bit-identical to ``run_trace``.
    """
    if not wfs:
        return []
    lengths = {len(w) for w in wfs}
    durations = {w.segment_duration for w in wfs}
    if len(lengths) > 1 or len(durations) > 1:
        return [run_trace(w, p) for w in wfs]
    l = lengths.pop()
    dt_sub = durations.pop() / p.substeps
    volts = np.array([w.segments for w in wfs], dtype=float)
    n, m = volts.shape[0], len(p.species)
    occ = np.tile(np.array([s.occupancy for s in p.species]), (n, 1))
    perm = np.zeros(n)
    kmv = [s.k_mv for s in p.species]
    out = np.empty((n, l))
    for i in range(l):
        col = volts[:, i]
        levels, inverse = np.unique(col, return_inverse=True)
        cs = [_coeffs(p, float(v), dt_sub) for v in levels]
        teq = np.array([c.theta_eq for c in cs])[inverse]
        dec = np.array([c.decay for c in cs])[inverse]
        gen = np.array([c.gen for c in cs])[inverse]
        ann = np.array([c.anneal for c in cs])[inverse]
        for _ in range(p.substeps):
            occ = teq + (occ - teq) * dec
            perm = perm + dt_sub * (gen * (1.0 - perm / p.perm_max) - ann * perm)
        # same summation order as OracleState.dvt
        acc = 0.0 + kmv[0] * occ[:, 0]
        for j in range(1, m):
            acc = acc + kmv[j] * occ[:, j]
        out[:, i] = acc + perm
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("oracle diverged")
    return [Trace(w.transistor_id, row) for w, row in zip(wfs, out.tolist())]


def final_state(w: Waveform, p: OracleParams = OracleParams()) -> OracleState:
    state = OracleState.fresh(p)
    for v in w.segments:
        state, _ = step_segment(state, p, v, w.segment_duration)
    return state


def worst_case_waveform(w: Waveform, vdd: float = DEFAULT_VDD, release_last: bool = False) -> Waveform:
    """Constant full stress over the window of ``w``.

    With ``release_last`` the final segment is held at Vdd instead (device
    switched on only at the end of the window).
    """
    l = len(w)
    segs = [0.0] * l
    if release_last and l > 1:
        segs[-1] = vdd
    return w.with_segments(segs)


def worst_case_trace(w: Waveform, p: OracleParams = OracleParams(), release_last: bool = False) -> Trace:
    return run_trace(worst_case_waveform(w, p.vdd, release_last), p)


def extrapolate_eol(last_dvt_mv: float, w: Waveform, cfg: RunConfig = RunConfig(),
                    n_exp: float = 1.0 / 6.0) -> float:
    """Power-law projection of the last observed ΔVth to the end of lifetime.

    ΔVth(t_eol) = last * (t_eol / t_obs) ** (n_exp * (0.5 + 0.5 * duty)).
    """
    t_obs = len(w) * w.segment_duration
    if not cfg.eol_seconds > t_obs:
        raise ValueError("end-of-life horizon must exceed the observed window")
    if last_dvt_mv < 0:
        raise ValueError("last ΔVth must be non-negative")
    n_eff = n_exp * (0.5 + 0.5 * duty_cycle(w, cfg.vdd))
    return last_dvt_mv * (cfg.eol_seconds / t_obs) ** n_eff


# ------------------------------------------------------------- config file

_SPECIES_KEYS = ("tau_capture", "tau_emission", "k_mv")


def params_to_kv(p: OracleParams) -> str:
    items: dict[str, object] = {}
    for key in _SPECIES_KEYS:
        items[f"species_{key}"] = ", ".join(repr(getattr(s, key)) for s in p.species)
    for f in fields(OracleParams):
        if f.name != "species":
            items[f.name] = getattr(p, f.name)
    return dump_kv(items)


def params_from_kv(text: str) -> OracleParams:
    kv = parse_kv(text)
    p = OracleParams()
    kwargs: dict[str, object] = {}
    species_cols = {}
    for key, value in kv.items():
        if key.startswith("species_") and key[8:] in _SPECIES_KEYS:
            species_cols[key[8:]] = [float(x) for x in value.split(",")]
        elif key == "substeps":
            kwargs[key] = int(value)
        elif key in {f.name for f in fields(OracleParams)} and key != "species":
            kwargs[key] = float(value)
        else:
            raise FormatError(f"unknown oracle parameter {key!r}")
    if species_cols:
        cols = {k: species_cols.get(k, [getattr(s, k) for s in p.species]) for k in _SPECIES_KEYS}
        if len({len(c) for c in cols.values()}) != 1:
            raise FormatError("species_* lists must have equal length")
        kwargs["species"] = tuple(TrapSpecies(*vals) for vals in zip(*(cols[k] for k in _SPECIES_KEYS)))
    return replace(p, **kwargs)


def load_params(path: str | Path) -> OracleParams:
    return params_from_kv(Path(path).read_text())
