"""Gate-level netlists, zero-delay logic simulation and per-pMOS waveform extraction.

Cells carry the gate net of every pull-up pMOS of their canonical static-CMOS
implementation. Only pMOS devices are tracked (NBTI). Signals are simulated
segment by segment: one random input vector per waveform segment, with no
glitches or timing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .core import RunConfig, Waveform

Signals = Mapping[str, np.ndarray]
CellFn = Callable[[Signals], dict]


@dataclass(frozen=True)
class Cell:
    """A combinational standard cell.

    ``fn`` maps input arrays (numpy bool) to a dict holding every internal and
    output signal. ``pmos`` lists (device suffix, gate signal) for the pull-up
    devices; gate signals are cell-local names (input, internal or output).
    """

    name: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    pmos: tuple[tuple[str, str], ...]
    fn: CellFn = field(compare=False, repr=False)
    internals: tuple[str, ...] = ()
    topology: str = ""

    def __post_init__(self):
        if not 1 <= len(self.inputs) <= 5:
            raise ValueError(f"cell {self.name}: 1..5 inputs required")
        if not self.pmos:
            raise ValueError(f"cell {self.name}: needs at least one pMOS")
        local = set(self.inputs) | set(self.internals) | set(self.outputs)
        for dev, gate in self.pmos:
            if gate not in local:
                raise ValueError(f"cell {self.name}: pMOS {dev} gate {gate!r} is not a cell signal")

    def evaluate(self, values: Signals) -> dict:
        out = self.fn(values)
        missing = set(self.outputs) | set(self.internals)
        missing -= set(out)
        if missing:
            raise ValueError(f"cell {self.name} did not produce {sorted(missing)}")
        return out

    def truth_table(self) -> dict[str, str]:
        """Bit string per internal/output signal; row r sets input k to (r >> k) & 1."""
        rows = np.array(list(product([0, 1], repeat=len(self.inputs))))[:, ::-1].astype(bool)
        vals = {pin: rows[:, k] for k, pin in enumerate(self.inputs)}
        out = self.evaluate(vals)
        return {sig: "".join("1" if b else "0" for b in np.asarray(out[sig], dtype=bool))
                for sig in (*self.internals, *self.outputs)}


def _table_cell(name, inputs, outputs, internals, pmos, truth, topology="") -> Cell:
    tables = {sig: np.array([c == "1" for c in bits]) for sig, bits in truth.items()}
    for sig, t in tables.items():
        if len(t) != 2 ** len(inputs):
            raise ValueError(f"cell {name}: truth table of {sig} has wrong length")

    def fn(v):
        idx = sum(np.asarray(v[pin], dtype=np.int64) << k for k, pin in enumerate(inputs))
        return {sig: t[idx] for sig, t in tables.items()}

    return Cell(name, tuple(inputs), tuple(outputs), tuple(tuple(p) for p in pmos), fn,
                tuple(internals), topology)


# -------------------------------------------------------------- cell library

def _pm(*gates: str) -> tuple[tuple[str, str], ...]:
    return tuple((f"P{k}", g) for k, g in enumerate(gates))


def _and(*xs):
    out = xs[0]
    for x in xs[1:]:
        out = out & x
    return out


def _or(*xs):
    out = xs[0]
    for x in xs[1:]:
        out = out | x
    return out


def _nand_cell(n):
    ins = tuple("ABCD"[:n])
    return Cell(f"NAND{n}", ins, ("Y",), _pm(*ins),
                lambda v: {"Y": ~_and(*(v[p] for p in ins))},
                topology=f"{n} parallel pMOS")


def _nor_cell(n):
    ins = tuple("ABCD"[:n])
    return Cell(f"NOR{n}", ins, ("Y",), _pm(*ins),
                lambda v: {"Y": ~_or(*(v[p] for p in ins))},
                topology=f"{n}-high series pMOS stack")


def _and_cell(n):
    ins = tuple("ABCD"[:n])

    def fn(v):
        nz = ~_and(*(v[p] for p in ins))
        return {"NZ": nz, "Y": ~nz}

    return Cell(f"AND{n}", ins, ("Y",), _pm(*ins, "NZ"), fn, ("NZ",),
                topology=f"NAND{n} + INV")


def _or_cell(n):
    ins = tuple("ABCD"[:n])

    def fn(v):
        nz = ~_or(*(v[p] for p in ins))
        return {"NZ": nz, "Y": ~nz}

    return Cell(f"OR{n}", ins, ("Y",), _pm(*ins, "NZ"), fn, ("NZ",),
                topology=f"NOR{n} + INV")


def _xor(v):
    an, bn = ~v["A"], ~v["B"]
    return {"AN": an, "BN": bn, "Y": v["A"] ^ v["B"]}


def _xnor(v):
    an, bn = ~v["A"], ~v["B"]
    return {"AN": an, "BN": bn, "Y": ~(v["A"] ^ v["B"])}


def _mux(v):
    sn = ~v["S"]
    yn = ~((v["A"] & sn) | (v["B"] & v["S"]))
    return {"SN": sn, "YN": yn, "Y": ~yn}


def _ha(v):
    a, b = v["A"], v["B"]
    nab = ~(a & b)
    return {"AN": ~a, "BN": ~b, "NAB": nab, "S": a ^ b, "CO": ~nab}


def _fa_mirror(v):
    a, b, c = v["A"], v["B"], v["CI"]
    maj = (a & b) | (a & c) | (b & c)
    return {"CON": ~maj, "SN": ~(a ^ b ^ c)}


def std_cell_library() -> list[Cell]:
    """The shipped standard-cell set.

    pMOS counts follow the static-CMOS pull-up networks described in each
    cell's ``topology``; complemented inputs come from input inverters that
    are part of the cell.
    """
    cells = [
        Cell("INV", ("A",), ("Y",), _pm("A"), lambda v: {"Y": ~v["A"]}, topology="inverter"),
        Cell("BUF", ("A",), ("Y",), _pm("A", "AN"), lambda v: {"AN": ~v["A"], "Y": v["A"]}, ("AN",),
             topology="INV + INV"),
        *(_nand_cell(n) for n in (2, 3, 4)),
        *(_nor_cell(n) for n in (2, 3, 4)),
        *(_and_cell(n) for n in (2, 3, 4)),
        *(_or_cell(n) for n in (2, 3, 4)),
        Cell("XOR2", ("A", "B"), ("Y",), _pm("A", "B", "A", "B", "AN", "BN"), _xor, ("AN", "BN"),
             topology="input inverters + (A|B) in series with (AN|BN)"),
        Cell("XNOR2", ("A", "B"), ("Y",), _pm("A", "B", "A", "BN", "AN", "B"), _xnor, ("AN", "BN"),
             topology="input inverters + (A|BN) in series with (AN|B)"),
        Cell("AOI21", ("A1", "A2", "B"), ("Y",), _pm("A1", "A2", "B"),
             lambda v: {"Y": ~((v["A1"] & v["A2"]) | v["B"])},
             topology="(A1|A2) in series with B"),
        Cell("OAI21", ("A1", "A2", "B"), ("Y",), _pm("A1", "A2", "B"),
             lambda v: {"Y": ~((v["A1"] | v["A2"]) & v["B"])},
             topology="(A1 series A2) parallel B"),
        Cell("AOI22", ("A1", "A2", "B1", "B2"), ("Y",), _pm("A1", "A2", "B1", "B2"),
             lambda v: {"Y": ~((v["A1"] & v["A2"]) | (v["B1"] & v["B2"]))},
             topology="(A1|A2) in series with (B1|B2)"),
        Cell("OAI22", ("A1", "A2", "B1", "B2"), ("Y",), _pm("A1", "A2", "B1", "B2"),
             lambda v: {"Y": ~((v["A1"] | v["A2"]) & (v["B1"] | v["B2"]))},
             topology="(A1 series A2) parallel (B1 series B2)"),
        Cell("MUX2", ("A", "B", "S"), ("Y",), _pm("S", "A", "SN", "B", "S", "YN"), _mux, ("SN", "YN"),
             topology="INV(S) + AOI22(A,SN,B,S) + INV"),
        Cell("HA", ("A", "B"), ("S", "CO"), _pm("A", "B", "A", "B", "AN", "BN", "A", "B", "NAB"), _ha,
             ("AN", "BN", "NAB"), topology="XOR2 + NAND2 + INV"),
        # mirror adder core; outputs are complemented
        Cell("FA", ("A", "B", "CI"), ("CON", "SN"),
             _pm("A", "B", "CI", "A", "B", "A", "B", "CI", "CON", "A", "B", "CI"), _fa_mirror,
             topology="mirror adder: carry (A|B)-CI + A-B, sum (A|B|CI)-CON + A-B-CI"),
    ]
    return cells


def library_by_name() -> dict[str, Cell]:
    return {c.name: c for c in std_cell_library()}


# ----------------------------------------------------------------- netlists

@dataclass(frozen=True)
class Instance:
    name: str
    cell: str
    pins: tuple[tuple[str, str], ...]

    @property
    def pin_map(self) -> dict[str, str]:
        return dict(self.pins)


@dataclass(frozen=True)
class Netlist:
    name: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    instances: tuple[Instance, ...]
    cells: Mapping[str, Cell] = field(compare=False, repr=False)
    constants: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(_topological(self)))

    @property
    def order(self) -> tuple[str, ...]:
        return tuple(inst.name for inst in self.instances)

    def devices(self) -> list[tuple[str, Instance, str]]:
        """(device id, instance, cell-local gate signal) for every pMOS."""
        out = []
        for inst in self.instances:
            for dev, gate in self.cells[inst.cell].pmos:
                out.append((f"{inst.name}.{dev}", inst, gate))
        return out

    @property
    def n_pmos(self) -> int:
        return sum(len(self.cells[i.cell].pmos) for i in self.instances)


def _topological(nl: Netlist) -> list[Instance]:
    names = [i.name for i in nl.instances]
    if len(set(names)) != len(names):
        raise ValueError("duplicate instance names")
    driver: dict[str, str] = {}
    for inst in nl.instances:
        cell = nl.cells.get(inst.cell)
        if cell is None:
            raise ValueError(f"instance {inst.name}: unknown cell {inst.cell!r}")
        pins = inst.pin_map
        for pin in (*cell.inputs, *cell.outputs):
            if pin not in pins:
                raise ValueError(f"instance {inst.name}: pin {pin} unconnected")
        for pin in cell.outputs:
            net = pins[pin]
            if net in driver or net in nl.inputs or net in dict(nl.constants):
                raise ValueError(f"net {net!r} has multiple drivers")
            driver[net] = inst.name
    ready = set(nl.inputs) | set(dict(nl.constants))
    remaining = list(nl.instances)
    order = []
    while remaining:
        progressed = []
        for inst in remaining:
            cell = nl.cells[inst.cell]
            pins = inst.pin_map
            if all(pins[p] in ready for p in cell.inputs):
                progressed.append(inst)
        if not progressed:
            for inst in remaining:
                for p in nl.cells[inst.cell].inputs:
                    net = inst.pin_map[p]
                    if net not in ready and net not in driver:
                        raise ValueError(f"unconnected net {net!r} (instance {inst.name}, pin {p})")
            raise ValueError("combinational loop in netlist")
        for inst in progressed:
            order.append(inst)
            remaining.remove(inst)
            for p in nl.cells[inst.cell].outputs:
                ready.add(inst.pin_map[p])
    for net in nl.outputs:
        if net not in ready:
            raise ValueError(f"unconnected net {net!r} (primary output)")
    return order


class _Builder:
    def __init__(self, name: str):
        self.name = name
        self.lib = library_by_name()
        self.inputs: list[str] = []
        self.instances: list[Instance] = []
        self.constants: dict[str, int] = {}
        self._n = 0

    def const(self, value: int) -> str:
        net = f"tie{value}"
        self.constants[net] = value
        return net

    def add(self, cell: str, prefix: str, **pins: str) -> dict[str, str]:
        name = f"{prefix}{self._n}"
        self._n += 1
        c = self.lib[cell]
        out = {p: f"{name}.{p}" for p in c.outputs}
        pins.update({p: n for p, n in out.items() if p not in pins})
        self.instances.append(Instance(name, cell, tuple(sorted(pins.items()))))
        return {p: pins[p] for p in c.outputs}

    def full_adder(self, a: str, b: str, ci: str, s_net: str | None = None) -> tuple[str, str]:
        fa = self.add("FA", "fa", A=a, B=b, CI=ci)
        s = self.add("INV", "inv", A=fa["SN"], **({"Y": s_net} if s_net else {}))["Y"]
        co = self.add("INV", "inv", A=fa["CON"])["Y"]
        return s, co

    def build(self, outputs) -> Netlist:
        used = {c.cell for c in self.instances}
        cells = {n: self.lib[n] for n in sorted(used)}
        return Netlist(self.name, tuple(self.inputs), tuple(outputs), tuple(self.instances), cells,
                       tuple(sorted(self.constants.items())))


def build_adder8() -> Netlist:
    """8-bit ripple-carry adder: mirror full adders with output inverters."""
    b = _Builder("adder8")
    b.inputs = [*(f"a{i}" for i in range(8)), *(f"b{i}" for i in range(8)), "cin"]
    carry = "cin"
    outs = []
    for i in range(8):
        s, carry = b.full_adder(f"a{i}", f"b{i}", carry, s_net=f"s{i}")
        outs.append(s)
    b.instances[-1] = _rename_output(b.instances[-1], "Y", "cout")
    return b.build([*outs, "cout"])


def _rename_output(inst: Instance, pin: str, net: str) -> Instance:
    pins = dict(inst.pins)
    pins[pin] = net
    return Instance(inst.name, inst.cell, tuple(sorted(pins.items())))


def build_mac32() -> Netlist:
    """y = (w * x + acc) mod 2**32 for 8-bit w, x and 32-bit acc.

    AND-array partial products and the accumulator bits are reduced column by
    column with full adders (carry-save) to two rows, which a 32-bit
    ripple-carry adder sums. Missing second-row bits are tied low.
    """
    width = 32
    b = _Builder("mac32")
    b.inputs = [*(f"w{i}" for i in range(8)), *(f"x{i}" for i in range(8)), *(f"acc{i}" for i in range(width))]
    cols: list[list[str]] = [[] for _ in range(width)]
    for i in range(8):
        for j in range(8):
            cols[i + j].append(b.add("AND2", "and", A=f"w{j}", B=f"x{i}")["Y"])
    for k in range(width):
        cols[k].append(f"acc{k}")
    for k in range(width):
        while len(cols[k]) > 2:
            x, y, z = cols[k][:3]
            del cols[k][:3]
            s, co = b.full_adder(x, y, z)
            cols[k].append(s)
            if k + 1 < width:
                cols[k + 1].append(co)
    zero = b.const(0)
    carry = zero
    outs = []
    for k in range(width):
        x = cols[k][0]
        y = cols[k][1] if len(cols[k]) > 1 else zero
        s, carry = b.full_adder(x, y, carry, s_net=f"y{k}")
        outs.append(s)
    return b.build(outs)


def single_cell_netlist(cell: Cell) -> Netlist:
    inst = Instance("u0", cell.name, tuple(sorted({**{p: p for p in cell.inputs},
                                                   **{p: p for p in cell.outputs}}.items())))
    return Netlist(cell.name, cell.inputs, cell.outputs, (inst,), {cell.name: cell})


def build_named(name: str) -> Netlist:
    builders = {"adder8": build_adder8, "mac32": build_mac32}
    if name in builders:
        return builders[name]()
    lib = library_by_name()
    if name in lib:
        return single_cell_netlist(lib[name])
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        return netlist_from_json(path.read_text())
    raise ValueError(f"unknown netlist {name!r}")


# --------------------------------------------------------------- simulation

@dataclass(frozen=True)
class StimulusPlan:
    n_segments: int
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("need at least one segment")

    def vectors(self, inputs: tuple[str, ...]) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(self.rng_seed)
        bits = rng.integers(0, 2, size=(len(inputs), self.n_segments)).astype(bool)
        return {net: bits[k] for k, net in enumerate(inputs)}


def evaluate(nl: Netlist, stimulus: Mapping[str, np.ndarray]) -> tuple[dict, dict]:
    """Propagate input arrays; returns (net values, per-instance local signals)."""
    missing = [n for n in nl.inputs if n not in stimulus]
    if missing:
        raise ValueError(f"unconnected net {missing[0]!r} (no stimulus)")
    shape = np.shape(next(iter(stimulus.values()))) if stimulus else (1,)
    nets = {n: np.asarray(stimulus[n], dtype=bool) for n in nl.inputs}
    for net, val in nl.constants:
        nets[net] = np.full(shape, bool(val))
    local = {}
    for inst in nl.instances:
        cell = nl.cells[inst.cell]
        pins = inst.pin_map
        try:
            vals = {p: nets[pins[p]] for p in cell.inputs}
        except KeyError as exc:
            raise ValueError(f"unconnected net {exc.args[0]!r}") from None
        res = cell.evaluate(vals)
        for p in cell.outputs:
            nets[pins[p]] = np.asarray(res[p], dtype=bool)
        local[inst.name] = {**vals, **res}
    return nets, local


def simulate(nl: Netlist, plan: StimulusPlan, cfg: RunConfig = RunConfig(),
             stimulus: Mapping[str, np.ndarray] | None = None) -> dict[str, Waveform]:
    """Per-pMOS gate waveforms; segment i follows input vector i (0 -> 0 V, 1 -> Vdd)."""
    vec = dict(stimulus) if stimulus is not None else plan.vectors(nl.inputs)
    _, local = evaluate(nl, vec)
    out = {}
    for dev_id, inst, gate in nl.devices():
        bits = np.broadcast_to(local[inst.name][gate], (plan.n_segments,))
        out[dev_id] = Waveform(dev_id, cfg.segment_duration, np.where(bits, cfg.vdd, 0.0).tolist())
    return out


def to_bits(value: int, width: int) -> list[int]:
    return [(value >> k) & 1 for k in range(width)]


def _word(nets: Mapping[str, np.ndarray], names: list[str]) -> np.ndarray:
    out = np.zeros(np.shape(nets[names[0]]), dtype=np.int64)
    for k, n in enumerate(names):
        out |= nets[n].astype(np.int64) << k
    return out


def run_adder8(nl: Netlist, a, b, cin=0):
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    stim = {f"a{i}": (a >> i) & 1 for i in range(8)}
    stim.update({f"b{i}": (b >> i) & 1 for i in range(8)})
    stim["cin"] = np.broadcast_to(np.atleast_1d(cin), a.shape)
    nets, _ = evaluate(nl, {k: np.asarray(v, dtype=bool) for k, v in stim.items()})
    return _word(nets, [f"s{i}" for i in range(8)]), nets["cout"].astype(np.int64)


def run_mac32(nl: Netlist, w, x, acc):
    w, x, acc = (np.atleast_1d(np.asarray(v, dtype=np.int64)) for v in (w, x, acc))
    stim = {f"w{i}": (w >> i) & 1 for i in range(8)}
    stim.update({f"x{i}": (x >> i) & 1 for i in range(8)})
    stim.update({f"acc{i}": (acc >> i) & 1 for i in range(32)})
    nets, _ = evaluate(nl, {k: np.asarray(v, dtype=bool) for k, v in stim.items()})
    return _word(nets, [f"y{i}" for i in range(32)])


def critical_path(nl: Netlist) -> list[str]:
    """Longest chain of instances (by gate count) through the DAG."""
    driver = {}
    for inst in nl.instances:
        for p in nl.cells[inst.cell].outputs:
            driver[inst.pin_map[p]] = inst.name
    depth: dict[str, int] = {}
    prev: dict[str, str | None] = {}
    for inst in nl.instances:
        best, arg = 0, None
        for p in nl.cells[inst.cell].inputs:
            src = driver.get(inst.pin_map[p])
            if src is not None and depth[src] > best:
                best, arg = depth[src], src
        depth[inst.name] = best + 1
        prev[inst.name] = arg
    end = max(nl.order, key=lambda n: depth[n])
    path = []
    node: str | None = end
    while node is not None:
        path.append(node)
        node = prev[node]
    return path[::-1]


# --------------------------------------------------------------------- JSON

def netlist_to_json(nl: Netlist) -> str:
    cells = []
    for name in sorted(nl.cells):
        c = nl.cells[name]
        cells.append({"name": c.name, "inputs": list(c.inputs), "outputs": list(c.outputs),
                      "internals": list(c.internals), "pmos": [list(p) for p in c.pmos],
                      "truth": c.truth_table(), "topology": c.topology})
    doc = {
        "name": nl.name,
        "inputs": list(nl.inputs),
        "outputs": list(nl.outputs),
        "constants": dict(nl.constants),
        "cells": cells,
        "instances": [{"name": i.name, "cell": i.cell, "pins": dict(i.pins)} for i in nl.instances],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def netlist_from_json(text: str) -> Netlist:
    doc = json.loads(text)
    cells = {}
    for c in doc["cells"]:
        cells[c["name"]] = _table_cell(c["name"], c["inputs"], c["outputs"], c.get("internals", []),
                                       c["pmos"], c["truth"], c.get("topology", ""))
    insts = tuple(Instance(i["name"], i["cell"], tuple(sorted(i["pins"].items()))) for i in doc["instances"])
    return Netlist(doc.get("name", "netlist"), tuple(doc["inputs"]), tuple(doc.get("outputs", [])), insts,
                   cells, tuple(sorted((k, int(v)) for k, v in doc.get("constants", {}).items())))
