"""Bespoke circuit generation: CSD constant multipliers, constant comparators,
adder trees, argmax/vote logic and whole-model netlists.

All arithmetic is sized from exact value ranges, so no intermediate result
can overflow.  Constants enter as CONST nets and are folded away by the
simplifying :class:`~bespoke_axc.netlist.NetlistBuilder`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .fxp import QuantizedModel, signed_width
from .netlist import NetlistBuilder, Netlist, area

# ---------------------------------------------------------------------------
# canonical signed digits


@dataclass(frozen=True)
class CsdForm:
    coefficient: int
    digits: tuple[int, ...]  # LSB first, values in {-1, 0, +1}

    @property
    def nonzeros(self) -> int:
        return sum(1 for d in self.digits if d)

    def value(self) -> int:
        return sum(d << i for i, d in enumerate(self.digits))


def to_csd(c: int) -> CsdForm:
    """Non-adjacent form of ``c``: no two neighbouring nonzero digits, minimal weight."""
    if abs(c) >= 1 << 31:
        raise ValueError("coefficient magnitude must be < 2**31")
    digits = []
    n = c
    while n != 0:
        if n & 1:
            d = 2 - (n & 3)  # +1 if n = 1 mod 4, -1 if n = 3 mod 4
            n -= d
        else:
            d = 0
        digits.append(d)
        n >>= 1
    return CsdForm(c, tuple(digits))


# ---------------------------------------------------------------------------
# buses


@dataclass(frozen=True)
class Bus:
    """A word of nets (LSB first) holding an integer known to lie in [lo, hi].

    Two's complement when ``lo < 0``, unsigned otherwise.
    """

    bits: tuple[int, ...]
    lo: int
    hi: int

    @property
    def signed(self) -> bool:
        return self.lo < 0

    @property
    def width(self) -> int:
        return len(self.bits)


def width_for(lo: int, hi: int) -> int:
    if lo >= 0:
        return max(1, hi.bit_length())
    return signed_width(lo, hi)


def const_bus(b: NetlistBuilder, value: int) -> Bus:
    w = width_for(value, value)
    return Bus(tuple(b.const((value >> i) & 1) for i in range(w)), value, value)


def input_bus(bits, lo: int, hi: int) -> Bus:
    return Bus(tuple(bits), lo, hi)


def extend(b: NetlistBuilder, x: Bus, w: int) -> list[int]:
    bits = list(x.bits[:w])
    fill = x.bits[-1] if x.signed else b.const(0)
    bits.extend([fill] * (w - len(bits)))
    return bits


def shift_left(b: NetlistBuilder, x: Bus, s: int) -> Bus:
    if s == 0:
        return x
    return Bus((b.const(0),) * s + x.bits, x.lo << s, x.hi << s)


def full_add(b: NetlistBuilder, x: int, y: int, c: int) -> tuple[int, int]:
    """(sum, carry) of three bits, specialised when operands are constant."""
    ops = (x, y, c)
    k = sum(b.value(v) or 0 for v in ops)
    free = [v for v in ops if b.value(v) is None]
    if not free:
        return b.const(k & 1), b.const(k >> 1)
    if len(free) == 1:
        v = free[0]
        if k == 0:
            return v, b.const(0)
        if k == 1:
            return b.not_(v), v
        return v, b.const(1)
    if len(free) == 2:
        p, q = free
        if k == 0:
            return b.xor(p, q), b.and_(p, q)
        return b.xnor(p, q), b.or_(p, q)
    p = b.xor(x, y)
    return b.xor(p, c), b.mux(p, x, c)


def add(b: NetlistBuilder, x: Bus, y: Bus, subtract: bool = False) -> Bus:
    """Ripple-carry ``x + y`` (or ``x - y``) at the exact result width."""
    if subtract:
        lo, hi = x.lo - y.hi, x.hi - y.lo
    else:
        lo, hi = x.lo + y.lo, x.hi + y.hi
    w = width_for(lo, hi)
    xs = extend(b, x, w)
    ys = extend(b, y, w)
    if subtract:
        ys = [b.not_(v) for v in ys]
    carry = b.const(1 if subtract else 0)
    out = []
    for p, q in zip(xs, ys):
        s, carry = full_add(b, p, q, carry)
        out.append(s)
    return Bus(tuple(out), lo, hi)


def negate(b: NetlistBuilder, x: Bus) -> Bus:
    return add(b, const_bus(b, 0), x, subtract=True)


def signed_sum(b: NetlistBuilder, terms: list[tuple[Bus, bool]]) -> tuple[Bus, bool, int]:
    """Balanced adder tree over (bus, negated) terms.

    Returns (bus, negated, stages): the represented value is ``-bus`` when
    ``negated``.  A mixed-sign pair becomes one subtractor, so a negation is
    only left over when every term is negative.
    """
    if not terms:
        return const_bus(b, 0), False, 0
    stages = 0
    while len(terms) > 1:
        nxt = []
        for j in range(0, len(terms) - 1, 2):
            (p, pn), (q, qn) = terms[j], terms[j + 1]
            if pn == qn:
                nxt.append((add(b, p, q), pn))
            elif pn:
                nxt.append((add(b, q, p, subtract=True), False))
            else:
                nxt.append((add(b, p, q, subtract=True), False))
            stages += 1
        if len(terms) % 2:
            nxt.append(terms[-1])
        terms = nxt
    return terms[0][0], terms[0][1], stages


def const_mult(b: NetlistBuilder, x: Bus, c: int) -> tuple[Bus, bool, int]:
    """Shift-add product ``c * x`` as (bus, negated, adder stages)."""
    if c == 0:
        return const_bus(b, 0), False, 0
    csd = to_csd(c)
    terms = [(shift_left(b, x, i), d < 0) for i, d in enumerate(csd.digits) if d]
    return signed_sum(b, terms)


def resolve(b: NetlistBuilder, bus: Bus, negated: bool) -> Bus:
    return negate(b, bus) if negated else bus


def greater(b: NetlistBuilder, x: Bus, y: Bus) -> int:
    """Net that is 1 iff x > y (sign of y - x)."""
    if x.lo > y.hi:
        return b.const(1)
    if x.hi <= y.lo:
        return b.const(0)
    d = add(b, y, x, subtract=True)
    return d.bits[-1]


def ge_const(b: NetlistBuilder, x: Bus, t: int) -> int:
    """Net that is 1 iff x >= t for a constant t."""
    if t <= x.lo:
        return b.const(1)
    if t > x.hi:
        return b.const(0)
    if x.signed and t == 0:
        return b.not_(x.bits[-1])
    if x.signed:
        mag = Bus(x.bits[:-1], 0, (1 << (x.width - 1)) - 1)
        if t <= 0:
            # negative threshold: compare x - t >= 0 via subtraction
            d = add(b, x, const_bus(b, t), subtract=True)
            return b.not_(d.bits[-1])
        return b.and_(b.not_(x.bits[-1]), compare_ge(b, list(mag.bits), t))
    return compare_ge(b, list(x.bits), t)


def compare_ge(b: NetlistBuilder, bits: list[int], t: int) -> int:
    """Generic LSB-to-MSB magnitude comparator ``x >= t`` built against constant ``t``.

    The builder folds the constant operand, leaving an AND/OR chain whose
    length depends on the bit pattern of ``t``.
    """
    if t <= 0:
        return b.const(1)
    if t >= 1 << len(bits):
        return b.const(0)
    ge = b.const(1)  # equal so far counts as >=
    for i, xi in enumerate(bits):
        ti = b.const((t >> i) & 1)
        gt_here = b.and_(xi, b.not_(ti))
        eq_here = b.xnor(xi, ti)
        ge = b.or_(gt_here, b.and_(eq_here, ge))
    return ge


def mux_bus(b: NetlistBuilder, s: int, x: Bus, y: Bus) -> Bus:
    """``y`` when s else ``x``."""
    lo, hi = min(x.lo, y.lo), max(x.hi, y.hi)
    w = width_for(lo, hi)
    xs, ys = extend(b, x, w), extend(b, y, w)
    return Bus(tuple(b.mux(s, p, q) for p, q in zip(xs, ys)), lo, hi)


def argmax(b: NetlistBuilder, values: list[Bus]) -> Bus:
    """Index of the maximum; ties resolve to the lowest index (tournament tree)."""
    entries = [(v, const_bus(b, i)) for i, v in enumerate(values)]
    while len(entries) > 1:
        nxt = []
        for j in range(0, len(entries) - 1, 2):
            (lv, li), (rv, ri) = entries[j], entries[j + 1]
            pick_right = greater(b, rv, lv)
            nxt.append((mux_bus(b, pick_right, lv, rv), mux_bus(b, pick_right, li, ri)))
        if len(entries) % 2:
            nxt.append(entries[-1])
        entries = nxt
    return entries[0][1]


def relu(b: NetlistBuilder, x: Bus) -> Bus:
    if x.lo >= 0:
        return x
    if x.hi <= 0:
        return const_bus(b, 0)
    keep = b.not_(x.bits[-1])
    w = width_for(0, x.hi)
    return Bus(tuple(b.and_(keep, v) for v in x.bits[:w]), 0, x.hi)


def shift_right(b: NetlistBuilder, x: Bus, s: int) -> Bus:
    """Arithmetic shift (floor division by 2**s)."""
    if s == 0:
        return x
    bits = extend(b, x, max(x.width, s + 1))
    return Bus(tuple(bits[s:]), x.lo >> s, x.hi >> s)


def label_bus(b: NetlistBuilder, x: Bus, width: int) -> tuple[int, ...]:
    return tuple(extend(b, x, width))


def label_width(class_count: int) -> int:
    return max(1, (class_count - 1).bit_length())


# ---------------------------------------------------------------------------
# fragments


def synth_const_mult(c: int, in_bits: int, in_signed: bool = False) -> Netlist:
    """Standalone ``p = c * x`` multiplier; ``meta`` records adder stages and negators."""
    b = NetlistBuilder(f"cmul_{'m' if c < 0 else ''}{abs(c)}_{in_bits}")
    lo, hi = (-(1 << (in_bits - 1)), (1 << (in_bits - 1)) - 1) if in_signed else (0, (1 << in_bits) - 1)
    x = input_bus(b.input("x", in_bits), lo, hi)
    bus, neg, stages = const_mult(b, x, c)
    if neg:
        bus = negate(b, bus)
    out_lo, out_hi = min(c * lo, c * hi), max(c * lo, c * hi)
    b.output("p", extend(b, bus, signed_width(out_lo, out_hi)), signed=True)
    b.meta = {"adder_stages": stages, "negators": int(neg), "csd_nonzeros": to_csd(c).nonzeros}
    return b.build()


def synth_comparator(t: int, in_bits: int) -> Netlist:
    """``ge = [x >= t]`` for an unsigned ``in_bits`` input and constant ``t``."""
    if not 0 <= t < 1 << in_bits:
        raise ValueError(f"threshold {t} outside {in_bits}-bit unsigned range")
    b = NetlistBuilder(f"cmp_{t}_{in_bits}")
    x = b.input("x", in_bits)
    b.output("ge", [compare_ge(b, x, t)])
    return b.build()


@lru_cache(maxsize=None)
def mult_area(c: int, in_bits: int, in_signed: bool = False) -> float:
    return area(synth_const_mult(c, in_bits, in_signed)).gate_equivalents


@lru_cache(maxsize=None)
def comparator_area(t: int, in_bits: int) -> float:
    return area(synth_comparator(t, in_bits)).gate_equivalents


# ---------------------------------------------------------------------------
# whole models


def _weighted_sum(b: NetlistBuilder, acts: list[Bus], weights, bias: int) -> Bus:
    terms = []
    for x, w in zip(acts, weights):
        if w == 0 or x.hi == x.lo == 0:
            continue
        p, neg, _ = const_mult(b, x, w)
        terms.append((p, neg))
    if bias:
        terms.append((const_bus(b, bias), False))
    bus, neg, _ = signed_sum(b, terms)
    return resolve(b, bus, neg)


def _feature_inputs(b: NetlistBuilder, q: QuantizedModel) -> list[Bus]:
    width = q.input_format.total_bits
    return [input_bus(b.input(f"x{j}", width), 0, q.input_format.max_code) for j in range(q.input_count)]


def synth_model(q: QuantizedModel, name: str = "") -> Netlist:
    """Combinational classifier with hardwired coefficients.

    Inputs ``x0..x{n-1}`` carry the unsigned input codes; output ``label`` is
    the predicted class and, for MLP/SVM models, ``out{k}`` are the signed
    raw accumulators that :func:`~bespoke_axc.fxp.predict_codes` reports.
    """
    b = NetlistBuilder(name or q.name or "bespoke")
    xs = _feature_inputs(b, q)
    lw = label_width(q.class_count)
    if q.is_tree:
        b.output("label", _tree_logic(b, q, xs, lw))
        b.meta = {"kind": q.kind}
        return b.build()

    if q.layers:
        acts = xs
        for L in q.layers:
            outs = [_weighted_sum(b, acts, row, bias) for row, bias in zip(L.weights, L.bias)]
            acts = [relu(b, o) for o in outs] if L.relu else outs
        raw = acts
    else:
        raw = [_weighted_sum(b, xs, c.weights, c.bias) for c in q.classifiers]

    if q.kind == "mlp-regressor":
        label = _regressor_label(b, raw[0], q.output_fraction_bits, q.class_count)
    elif q.kind == "svm-classifier":
        label = argmax(b, _vote_counts(b, q, raw))
    else:
        label = argmax(b, raw)
    b.output("label", label_bus(b, label, lw))
    for k, acc in enumerate(raw):
        b.output(f"out{k}", extend(b, acc, signed_width(acc.lo, acc.hi)), signed=True)
    b.meta = {"kind": q.kind}
    return b.build()


def _vote_counts(b: NetlistBuilder, q: QuantizedModel, scores: list[Bus]) -> list[Bus]:
    ballots: list[list[Bus]] = [[] for _ in range(q.class_count)]
    for s, c in zip(scores, q.classifiers):
        pos = ge_const(b, s, 0)
        ballots[c.positive].append(Bus((pos,), 0, 1))
        ballots[c.negative].append(Bus((b.not_(pos),), 0, 1))
    return [signed_sum(b, [(v, False) for v in votes])[0] for votes in ballots]


def _regressor_label(b: NetlistBuilder, acc: Bus, frac: int, classes: int) -> Bus:
    r = acc
    if frac > 0:
        r = add(b, acc, const_bus(b, 1 << (frac - 1)))
    r = shift_right(b, r, frac)
    top = classes - 1
    lw = label_width(classes)
    over = ge_const(b, r, top)
    neg = b.const(0) if r.lo >= 0 else r.bits[-1]
    low = extend(b, r, lw)
    bits = []
    for i in range(lw):
        v = b.and_(low[i], b.not_(neg))
        bits.append(b.mux(over, v, b.const((top >> i) & 1)))
    return Bus(tuple(bits), 0, top)


def _tree_logic(b: NetlistBuilder, q: QuantizedModel, xs: list[Bus], lw: int) -> list[int]:
    index = {n.id: n for n in q.nodes}
    full = q.input_format.total_bits

    def emit(nid: int) -> list[int]:
        n = index[nid]
        if n.is_leaf:
            return [b.const((n.label >> i) & 1) for i in range(lw)]
        bits = n.bits or full
        drop = full - bits
        sel = compare_ge(b, list(xs[n.feature].bits[drop:]), n.threshold >> drop)
        left, right = emit(n.left), emit(n.right)
        return [b.mux(sel, p, r) for p, r in zip(left, right)]

    return emit(q.root)


def model_inputs(q: QuantizedModel, codes) -> dict[str, object]:
    """Map a (rows, inputs) code matrix onto the netlist's named input vectors."""
    return {f"x{j}": codes[:, j] for j in range(q.input_count)}
