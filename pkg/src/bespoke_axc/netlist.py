"""Gate-level netlist IR, a simplifying builder, bit-parallel simulation,
constant propagation, area/activity/power proxies and export.

Net numbering: primary-input bits occupy nets ``0 .. n_pi-1``; gate ``k``
drives net ``n_pi + k``.  Gates are stored in topological order, so a gate
only reads nets driven by primary inputs or by earlier gates.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

GATE_KINDS = ("NOT", "AND2", "OR2", "NAND2", "NOR2", "XOR2", "XNOR2", "MUX2", "CONST0", "CONST1")
ARITY = {"NOT": 1, "AND2": 2, "OR2": 2, "NAND2": 2, "NOR2": 2, "XOR2": 2, "XNOR2": 2, "MUX2": 3,
         "CONST0": 0, "CONST1": 0}
COMMUTATIVE = {"AND2", "OR2", "NAND2", "NOR2", "XOR2", "XNOR2"}

# NAND2-equivalent cost of each cell
GATE_EQUIVALENTS = {"NOT": 0.5, "AND2": 1.0, "OR2": 1.0, "NAND2": 1.0, "NOR2": 1.0,
                    "XOR2": 2.0, "XNOR2": 2.0, "MUX2": 2.0, "CONST0": 0.0, "CONST1": 0.0}


class NetlistError(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    kind: str
    inputs: tuple[int, ...]  # MUX2: (select, when0, when1)


@dataclass(frozen=True)
class Netlist:
    n_pi: int
    gates: tuple[Gate, ...]
    inputs: dict[str, tuple[int, ...]]  # LSB first
    outputs: dict[str, tuple[int, ...]]
    signed_outputs: frozenset[str] = frozenset()
    name: str = "bespoke"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        seen = sum(len(v) for v in self.inputs.values())
        if seen != self.n_pi or sorted(b for v in self.inputs.values() for b in v) != list(range(self.n_pi)):
            raise NetlistError("primary inputs must cover nets 0..n_pi-1 exactly once")
        for k, g in enumerate(self.gates):
            if g.kind not in ARITY or len(g.inputs) != ARITY[g.kind]:
                raise NetlistError(f"gate {k}: bad kind/arity {g}")
            for i in g.inputs:
                if not 0 <= i < self.n_pi + k:
                    raise NetlistError(f"gate {k} reads net {i} which is not driven earlier")
        total = self.n_nets
        for name, bits in self.outputs.items():
            for b in bits:
                if not 0 <= b < total:
                    raise NetlistError(f"output {name} references undriven net {b}")

    @property
    def n_nets(self) -> int:
        return self.n_pi + len(self.gates)

    def gate_net(self, k: int) -> int:
        return self.n_pi + k

    @property
    def topo_order(self) -> range:
        return range(len(self.gates))

    def logic_gate_count(self) -> int:
        return sum(1 for g in self.gates if g.kind not in ("CONST0", "CONST1"))

    def structure(self) -> tuple:
        """Hashable view used for equality checks (ignores ``meta``)."""
        return (self.n_pi, self.gates, tuple(sorted(self.inputs.items())), tuple(sorted(self.outputs.items())),
                tuple(sorted(self.signed_outputs)))


class NetlistBuilder:
    """Incremental netlist construction with on-the-fly simplification.

    Every gate helper folds constants, applies the usual identities
    (``x & x``, ``x ^ ~x``, double negation, trivial muxes) and reuses an
    existing gate with identical kind and operands.  Building a generic
    circuit from constant operands therefore yields its constant-propagated
    form directly.
    """

    def __init__(self, name: str = "bespoke"):
        self.name = name
        self._inputs: dict[str, list[int]] = {}
        self._pi_count = 0
        self._gates: list[Gate] = []
        self._const: dict[int, int] = {}  # net -> 0/1
        self._const_net: dict[int, int] = {}
        self._inv: dict[int, int] = {}  # net -> its complement net
        self._strash: dict[tuple, int] = {}
        self.outputs: dict[str, tuple[int, ...]] = {}
        self.signed_outputs: set[str] = set()
        self.meta: dict = {}

    # Until build(), primary-input bit i is net -(i+1) and gate k is net k, so
    # inputs may be declared at any time.
    def input(self, name: str, width: int) -> list[int]:
        if name in self._inputs:
            raise NetlistError(f"duplicate input {name}")
        bits = [-(self._pi_count + i) - 1 for i in range(width)]
        self._pi_count += width
        self._inputs[name] = bits
        return list(bits)

    def _emit(self, kind: str, ins: tuple[int, ...]) -> int:
        key = (kind, ins)
        hit = self._strash.get(key)
        if hit is not None:
            return hit
        net = len(self._gates)
        self._gates.append(Gate(kind, ins))
        self._strash[key] = net
        return net

    def const(self, v: int) -> int:
        v = 1 if v else 0
        net = self._const_net.get(v)
        if net is None:
            net = self._emit("CONST1" if v else "CONST0", ())
            self._const_net[v] = net
            self._const[net] = v
        return net

    def value(self, net: int) -> Optional[int]:
        return self._const.get(net)

    def _complementary(self, a: int, b: int) -> bool:
        return self._inv.get(a) == b

    def not_(self, a: int) -> int:
        c = self._const.get(a)
        if c is not None:
            return self.const(1 - c)
        if a in self._inv:
            return self._inv[a]
        net = self._emit("NOT", (a,))
        self._inv[a] = net
        self._inv[net] = a
        return net

    def _absorb(self, x: int, y: int, kind: str):
        # y = kind(p, q); returns "self" if x is an operand, the other operand if ~x is one
        if y < 0 or self._gates[y].kind != kind:
            return None
        p, q = self._gates[y].inputs
        if x in (p, q):
            return "self"
        if self._complementary(x, p):
            return q
        if self._complementary(x, q):
            return p
        return None

    def _binary(self, kind: str, a: int, b: int) -> int:
        if a > b:
            a, b = b, a
        return self._emit(kind, (a, b))

    def and_(self, a: int, b: int) -> int:
        ca, cb = self._const.get(a), self._const.get(b)
        if ca == 0 or cb == 0:
            return self.const(0)
        if ca == 1:
            return b
        if cb == 1:
            return a
        if a == b:
            return a
        if self._complementary(a, b):
            return self.const(0)
        # absorption: a & (~a | g) -> a & g ; a & (a | g) -> a
        for x, y in ((a, b), (b, a)):
            other = self._absorb(x, y, "OR2")
            if other is not None:
                return x if other == "self" else self.and_(x, other)
        return self._binary("AND2", a, b)

    def or_(self, a: int, b: int) -> int:
        ca, cb = self._const.get(a), self._const.get(b)
        if ca == 1 or cb == 1:
            return self.const(1)
        if ca == 0:
            return b
        if cb == 0:
            return a
        if a == b:
            return a
        if self._complementary(a, b):
            return self.const(1)
        # absorption: a | (~a & g) -> a | g ; a | (a & g) -> a
        for x, y in ((a, b), (b, a)):
            other = self._absorb(x, y, "AND2")
            if other is not None:
                return x if other == "self" else self.or_(x, other)
        return self._binary("OR2", a, b)

    def nand(self, a: int, b: int) -> int:
        ca, cb = self._const.get(a), self._const.get(b)
        if ca is not None or cb is not None or a == b or self._complementary(a, b):
            return self.not_(self.and_(a, b))
        return self._binary("NAND2", a, b)

    def nor(self, a: int, b: int) -> int:
        ca, cb = self._const.get(a), self._const.get(b)
        if ca is not None or cb is not None or a == b or self._complementary(a, b):
            return self.not_(self.or_(a, b))
        return self._binary("NOR2", a, b)

    def xor(self, a: int, b: int) -> int:
        ca, cb = self._const.get(a), self._const.get(b)
        if ca is not None and cb is not None:
            return self.const(ca ^ cb)
        if ca is not None:
            return self.not_(b) if ca else b
        if cb is not None:
            return self.not_(a) if cb else a
        if a == b:
            return self.const(0)
        if self._complementary(a, b):
            return self.const(1)
        return self._binary("XOR2", a, b)

    def xnor(self, a: int, b: int) -> int:
        ca, cb = self._const.get(a), self._const.get(b)
        if ca is not None or cb is not None or a == b or self._complementary(a, b):
            return self.not_(self.xor(a, b))
        return self._binary("XNOR2", a, b)

    def mux(self, s: int, a: int, b: int) -> int:
        """``b`` when ``s`` is 1, else ``a``."""
        cs = self._const.get(s)
        if cs is not None:
            return b if cs else a
        if a == b:
            return a
        ca, cb = self._const.get(a), self._const.get(b)
        if ca is not None and cb is not None:
            return s if cb else self.not_(s)  # (0,1) -> s ; (1,0) -> ~s
        if ca == 0:
            return self.and_(s, b)
        if ca == 1:
            return self.or_(self.not_(s), b)
        if cb == 0:
            return self.and_(self.not_(s), a)
        if cb == 1:
            return self.or_(s, a)
        if a == s:
            return self.and_(s, b)
        if b == s:
            return self.or_(s, a)
        return self._emit("MUX2", (s, a, b))

    def gate(self, kind: str, ins: Sequence[int]) -> int:
        """Replay a gate of any kind through the simplifying helpers."""
        if kind == "CONST0":
            return self.const(0)
        if kind == "CONST1":
            return self.const(1)
        if kind == "NOT":
            return self.not_(ins[0])
        if kind == "MUX2":
            return self.mux(*ins)
        return {"AND2": self.and_, "OR2": self.or_, "NAND2": self.nand, "NOR2": self.nor,
                "XOR2": self.xor, "XNOR2": self.xnor}[kind](*ins)

    def output(self, name: str, bits: Iterable[int], signed: bool = False) -> None:
        if name in self.outputs:
            raise NetlistError(f"duplicate output {name}")
        self.outputs[name] = tuple(bits)
        if signed:
            self.signed_outputs.add(name)

    def build(self) -> Netlist:
        """Finalize: drop gates outside the output cones and renumber nets."""
        n_pi = self._pi_count
        live = [False] * len(self._gates)
        stack = [b for bits in self.outputs.values() for b in bits if b >= 0]
        while stack:
            k = stack.pop()
            if live[k]:
                continue
            live[k] = True
            stack.extend(i for i in self._gates[k].inputs if i >= 0 and not live[i])
        remap: dict[int, int] = {}

        def net_of(x: int) -> int:
            return -x - 1 if x < 0 else remap[x]

        gates = []
        for k, g in enumerate(self._gates):
            if not live[k]:
                continue
            gates.append(Gate(g.kind, tuple(net_of(i) for i in g.inputs)))
            remap[k] = n_pi + len(gates) - 1
        outputs = {n: tuple(net_of(b) for b in bits) for n, bits in self.outputs.items()}
        inputs = {n: tuple(-b - 1 for b in bits) for n, bits in self._inputs.items()}
        return Netlist(n_pi, tuple(gates), inputs, outputs, frozenset(self.signed_outputs), self.name,
                       dict(self.meta))


def rebuild(n: Netlist, forced: Optional[Mapping[int, int]] = None, name: Optional[str] = None) -> Netlist:
    """Replay ``n`` through a fresh builder: constant propagation plus dead-gate removal.

    ``forced`` maps gate ids of ``n`` to constant values that replace their outputs.
    """
    forced = forced or {}
    b = NetlistBuilder(name or n.name)
    net_map: dict[int, int] = {}
    for nm, bits in n.inputs.items():
        for old, new in zip(bits, b.input(nm, len(bits))):
            net_map[old] = new
    for k, g in enumerate(n.gates):
        if k in forced:
            net_map[n.n_pi + k] = b.const(forced[k])
        else:
            net_map[n.n_pi + k] = b.gate(g.kind, [net_map[i] for i in g.inputs])
    for nm, bits in n.outputs.items():
        b.output(nm, [net_map[x] for x in bits], signed=nm in n.signed_outputs)
    b.meta = dict(n.meta)
    return b.build()


def propagate_constants(n: Netlist) -> Netlist:
    return rebuild(n)


# ---------------------------------------------------------------------------
# simulation (bit-parallel over rows using Python integers as bit vectors)


def _pack(values: np.ndarray, bit: int) -> int:
    bits = ((values >> bit) & 1).astype(np.uint8)
    return int.from_bytes(np.packbits(bits, bitorder="little").tobytes(), "little")


def _unpack(word: int, rows: int) -> np.ndarray:
    raw = np.frombuffer(word.to_bytes((rows + 7) // 8, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:rows].astype(np.int64)


def _eval_words(n: Netlist, pi_words: list[int], rows: int, forced: Optional[Mapping[int, int]] = None) -> list[int]:
    mask = (1 << rows) - 1
    v = list(pi_words) + [0] * len(n.gates)
    base = n.n_pi
    forced = forced or {}
    for k, g in enumerate(n.gates):
        kind, ins = g.kind, g.inputs
        if k in forced:
            r = mask if forced[k] else 0
        elif kind == "AND2":
            r = v[ins[0]] & v[ins[1]]
        elif kind == "XOR2":
            r = v[ins[0]] ^ v[ins[1]]
        elif kind == "OR2":
            r = v[ins[0]] | v[ins[1]]
        elif kind == "NOT":
            r = v[ins[0]] ^ mask
        elif kind == "MUX2":
            s = v[ins[0]]
            r = (v[ins[1]] & (s ^ mask)) | (v[ins[2]] & s)
        elif kind == "NAND2":
            r = (v[ins[0]] & v[ins[1]]) ^ mask
        elif kind == "NOR2":
            r = (v[ins[0]] | v[ins[1]]) ^ mask
        elif kind == "XNOR2":
            r = v[ins[0]] ^ v[ins[1]] ^ mask
        elif kind == "CONST0":
            r = 0
        elif kind == "CONST1":
            r = mask
        else:  # pragma: no cover - guarded by Netlist validation
            raise NetlistError(kind)
        v[base + k] = r
    return v


def _input_words(n: Netlist, inputs: Mapping[str, object]) -> tuple[list[int], int]:
    missing = set(n.inputs) - set(inputs)
    extra = set(inputs) - set(n.inputs)
    if missing or extra:
        raise NetlistError(f"input mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    rows = None
    words = [0] * n.n_pi
    for name, bits in n.inputs.items():
        vals = np.atleast_1d(np.asarray(inputs[name], dtype=np.int64))
        if rows is None:
            rows = vals.shape[0]
        elif vals.shape[0] != rows:
            raise NetlistError("input vectors differ in row count")
        width = len(bits)
        if width < 63 and ((vals < 0) | (vals >= (1 << width))).any():
            raise NetlistError(f"input {name} has values outside {width} bits")
        for i, net in enumerate(bits):
            words[net] = _pack(vals, i)
    if rows is None:
        rows = 1
    return words, rows


def _decode(n: Netlist, v: list[int], rows: int) -> dict[str, np.ndarray]:
    out = {}
    for name, bits in n.outputs.items():
        acc = np.zeros(rows, dtype=object if len(bits) > 62 else np.int64)
        for i, net in enumerate(bits):
            acc = acc + (_unpack(v[net], rows).astype(acc.dtype) << i)
        if name in n.signed_outputs and bits:
            w = len(bits)
            acc = np.where(acc >= (1 << (w - 1)), acc - (1 << w), acc)
        out[name] = acc
    return out


def _chunks(rows: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, rows))
    edges = np.linspace(0, rows, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def simulate(
    n: Netlist, inputs: Mapping[str, object], workers: int = 1, forced: Optional[Mapping[int, int]] = None
) -> dict[str, np.ndarray]:
    """Evaluate ``n`` on rows of input values; returns integer output vectors.

    Inputs are unsigned bit patterns per named vector.  Outputs listed in
    ``signed_outputs`` are decoded as two's complement.  ``forced`` pins gate
    outputs to constants, which is equivalent to simulating
    ``rebuild(n, forced)``.
    """
    arrays = {k: np.atleast_1d(np.asarray(v, dtype=np.int64)) for k, v in inputs.items()}
    rows = next(iter(arrays.values())).shape[0] if arrays else 1
    if workers <= 1 or rows < 2 * workers:
        words, rows = _input_words(n, arrays)
        return _decode(n, _eval_words(n, words, rows, forced), rows)
    parts = _chunks(rows, workers)

    def run(span):
        a, b = span
        words, r = _input_words(n, {k: v[a:b] for k, v in arrays.items()})
        return _decode(n, _eval_words(n, words, r, forced), r)

    with ThreadPoolExecutor(max_workers=workers) as ex:
        results = list(ex.map(run, parts))
    return {k: np.concatenate([r[k] for r in results]) for k in n.outputs}


# ---------------------------------------------------------------------------
# area, activity, power


@dataclass(frozen=True)
class AreaReport:
    gate_equivalents: float
    per_gate_weights: dict[str, float]
    gate_counts: dict[str, int]


def area(n: Netlist, weights: Mapping[str, float] = GATE_EQUIVALENTS) -> AreaReport:
    counts = {k: 0 for k in GATE_KINDS}
    for g in n.gates:
        counts[g.kind] += 1
    total = sum(weights[k] * c for k, c in counts.items())
    return AreaReport(float(total), dict(weights), counts)


@dataclass(frozen=True)
class ActivityProfile:
    kinds: tuple[str, ...]
    toggle_rate: np.ndarray  # per gate
    ones: np.ndarray  # rows on which the gate output was 1
    rows: int
    stuck_value: dict[int, int]  # gate id -> constant observed value

    def majority(self, k: int) -> int:
        return 1 if 2 * int(self.ones[k]) > self.rows else 0


def _toggle_stats(words: list[int], base: int, count: int, rows: int):
    pair_mask = (1 << (rows - 1)) - 1 if rows > 1 else 0
    full = (1 << rows) - 1
    toggles = np.zeros(count, dtype=np.int64)
    ones = np.zeros(count, dtype=np.int64)
    first = np.zeros(count, dtype=np.int64)
    last = np.zeros(count, dtype=np.int64)
    for k in range(count):
        w = words[base + k] & full
        toggles[k] = ((w ^ (w >> 1)) & pair_mask).bit_count()
        ones[k] = w.bit_count()
        first[k] = w & 1
        last[k] = (w >> (rows - 1)) & 1
    return toggles, ones, first, last


def profile_activity(n: Netlist, stimuli: Mapping[str, object], workers: int = 1) -> ActivityProfile:
    """Per-gate toggle rates over consecutive stimulus rows (in the given order).

    Row partitions are merged associatively: toggles inside each chunk plus
    one boundary comparison between adjacent chunks.
    """
    arrays = {k: np.atleast_1d(np.asarray(v, dtype=np.int64)) for k, v in stimuli.items()}
    rows = next(iter(arrays.values())).shape[0]
    if rows < 1:
        raise ValueError("activity profiling needs at least one stimulus row")
    count = len(n.gates)
    parts = _chunks(rows, workers)

    def run(span):
        a, b = span
        words, r = _input_words(n, {k: v[a:b] for k, v in arrays.items()})
        return _toggle_stats(_eval_words(n, words, r), n.n_pi, count, r)

    if len(parts) == 1:
        results = [run(parts[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, parts))
    toggles = sum(r[0] for r in results)
    ones = sum(r[1] for r in results)
    for prev, nxt in zip(results[:-1], results[1:]):
        toggles = toggles + (prev[3] != nxt[2])
    rate = toggles / (rows - 1) if rows > 1 else np.zeros(count)
    stuck = {k: int(ones[k] == rows) for k in range(count) if toggles[k] == 0}
    return ActivityProfile(tuple(g.kind for g in n.gates), np.asarray(rate, dtype=np.float64),
                           np.asarray(ones), rows, stuck)


STATIC_POWER = 1.0


def power_proxy(a: AreaReport, act: Optional[ActivityProfile], static: float = STATIC_POWER) -> float:
    """Dynamic term (cell weight x toggle rate) plus ``static`` x gate-equivalents."""
    dynamic = 0.0
    if act is not None and len(act.kinds):
        w = np.array([a.per_gate_weights[k] for k in act.kinds])
        dynamic = float(np.dot(w, act.toggle_rate))
    return dynamic + static * a.gate_equivalents


# ---------------------------------------------------------------------------
# export


def to_json_dict(n: Netlist) -> dict:
    return {
        "name": n.name,
        "n_pi": n.n_pi,
        "inputs": {k: list(v) for k, v in n.inputs.items()},
        "outputs": {k: list(v) for k, v in n.outputs.items()},
        "signed_outputs": sorted(n.signed_outputs),
        "gates": [{"kind": g.kind, "inputs": list(g.inputs), "net": n.n_pi + k} for k, g in enumerate(n.gates)],
        "meta": n.meta,
    }


def from_json_dict(raw: dict) -> Netlist:
    return Netlist(
        int(raw["n_pi"]),
        tuple(Gate(g["kind"], tuple(g["inputs"])) for g in raw["gates"]),
        {k: tuple(v) for k, v in raw["inputs"].items()},
        {k: tuple(v) for k, v in raw["outputs"].items()},
        frozenset(raw.get("signed_outputs", [])),
        raw.get("name", "bespoke"),
        dict(raw.get("meta", {})),
    )


def to_json(n: Netlist) -> str:
    return json.dumps(to_json_dict(n), indent=None, separators=(",", ":"), sort_keys=True) + "\n"


_PRIMITIVE = {"NOT": "not", "AND2": "and", "OR2": "or", "NAND2": "nand", "NOR2": "nor",
              "XOR2": "xor", "XNOR2": "xnor"}


def _ident(name: str) -> str:
    s = "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in name)
    return s if s and not s[0].isdigit() else "m_" + s


def to_verilog(n: Netlist) -> str:
    """Structural Verilog-2001: primitive gates, ``assign`` for constants and muxes."""
    pi_name = {}
    for name, bits in n.inputs.items():
        for i, net in enumerate(bits):
            pi_name[net] = f"{_ident(name)}[{i}]"

    def ref(net: int) -> str:
        return pi_name[net] if net < n.n_pi else f"n{net}"

    ports = [_ident(k) for k in n.inputs] + [_ident(k) for k in n.outputs]
    lines = [f"module {_ident(n.name)} ({', '.join(ports)});"]
    for k, bits in n.inputs.items():
        lines.append(f"  input [{max(len(bits), 1) - 1}:0] {_ident(k)};")
    for k, bits in n.outputs.items():
        sign = " signed" if k in n.signed_outputs else ""
        lines.append(f"  output{sign} [{max(len(bits), 1) - 1}:0] {_ident(k)};")
    for k in range(len(n.gates)):
        lines.append(f"  wire n{n.n_pi + k};")
    for k, g in enumerate(n.gates):
        out = f"n{n.n_pi + k}"
        if g.kind == "CONST0":
            lines.append(f"  assign {out} = 1'b0;")
        elif g.kind == "CONST1":
            lines.append(f"  assign {out} = 1'b1;")
        elif g.kind == "MUX2":
            s, a, b = (ref(i) for i in g.inputs)
            lines.append(f"  assign {out} = {s} ? {b} : {a};")
        else:
            args = ", ".join([out] + [ref(i) for i in g.inputs])
            lines.append(f"  {_PRIMITIVE[g.kind]} g{k} ({args});")
    for k, bits in n.outputs.items():
        for i, net in enumerate(bits):
            lines.append(f"  assign {_ident(k)}[{i}] = {ref(net)};")
    lines.append("endmodule")
    return "\n".join(lines) + "\n"
