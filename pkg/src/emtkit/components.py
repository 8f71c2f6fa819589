"""Power-system equipment expanded into circuit primitives.

Three-phase buses are named ``bus`` and own the nodes ``bus.a``, ``bus.b``
and ``bus.c``; ground is ``0`` (``gnd``/``ground`` are accepted).
Every spec expands through :func:`expand` into a list of primitives whose
internal nodes are named after the component, so expansion is hermetic and
repeatable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import singledispatch
from typing import Sequence

from .circuit import (
    CCCS,
    SWITCH_R_OFF,
    SWITCH_R_ON,
    VCVS,
    Capacitor,
    Inductor,
    Primitive,
    Resistor,
    Sine,
    Switch,
    VoltageSource,
    is_ground,
)
from .errors import InvalidSpec

PHASES = ("a", "b", "c")
SEQUENCE_SHIFT = {"abc": -2.0 * math.pi / 3.0, "acb": 2.0 * math.pi / 3.0}


def phase_node(bus: str, phase: str) -> str:
    return "0" if is_ground(bus) else f"{bus}.{phase}"


class NodeAllocator:
    """Hands out internal node names under a component prefix and records them."""

    def __init__(self, prefix: str = ""):
        self.prefix = prefix
        self.allocated: list[str] = []

    def new(self, *parts: str) -> str:
        name = ".".join((self.prefix,) + parts) if self.prefix else ".".join(parts)
        if name in self.allocated:
            raise InvalidSpec(f"internal node {name!r} allocated twice")
        self.allocated.append(name)
        return name


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class PiLineSpec:
    """Per-phase series R-L with half the shunt capacitance at each end."""

    name: str
    from_bus: str
    to_bus: str
    r: float
    l: float
    c_total: float
    phases: tuple[str, ...] = PHASES

    def validate(self):
        if self.r < 0 or not self.l > 0 or self.c_total < 0:
            raise InvalidSpec(f"{self.name}: need R >= 0, L > 0, C_total >= 0")


@dataclass(frozen=True)
class Winding:
    """One winding: terminals, ratings for the turns ratio and leakage R/L (ohms, henries)."""

    p: str
    n: str
    v_rated: float
    v_base: float
    r: float = 0.0
    l: float = 0.0

    @property
    def tk(self) -> float:
        # off-nominal turns ratio: rated over base voltage
        return self.v_rated / self.v_base


@dataclass(frozen=True)
class Transformer2WSpec:
    """Single-phase two-winding transformer (VCVS/CCCS core).

    ``r_mag``/``l_mag`` form an optional parallel magnetizing branch referred
    to winding 1; omitted means infinite magnetizing impedance.
    """

    name: str
    w1: Winding
    w2: Winding
    r_mag: float | None = None
    l_mag: float | None = None

    @property
    def windings(self) -> tuple[Winding, ...]:
        return (self.w1, self.w2)

    def validate(self):
        _validate_windings(self.name, self.windings, self.r_mag, self.l_mag)


@dataclass(frozen=True)
class Transformer3WSpec:
    name: str
    w1: Winding
    w2: Winding
    w3: Winding
    r_mag: float | None = None
    l_mag: float | None = None

    @property
    def windings(self) -> tuple[Winding, ...]:
        return (self.w1, self.w2, self.w3)

    def validate(self):
        _validate_windings(self.name, self.windings, self.r_mag, self.l_mag)


def _validate_windings(name, windings, r_mag, l_mag):
    for k, w in enumerate(windings, 1):
        if not (w.v_rated > 0 and w.v_base > 0):
            raise InvalidSpec(f"{name}: winding {k} turns ratio must be > 0 (V_rated={w.v_rated}, V_base={w.v_base})")
        if w.r < 0 or w.l < 0:
            raise InvalidSpec(f"{name}: winding {k} leakage must be >= 0")
    if (r_mag is not None and not r_mag > 0) or (l_mag is not None and not l_mag > 0):
        raise InvalidSpec(f"{name}: magnetizing R/L must be > 0 when given")


@dataclass(frozen=True)
class DeltaWyeBankSpec:
    """Three single-phase units: windings 1 in delta on ``delta_bus``
    (a-b, b-c, c-a), windings 2 in grounded wye on ``wye_bus``.

    With this wiring the wye-side voltages lead the delta-side ones by 30
    degrees for positive-sequence excitation.
    """

    name: str
    delta_bus: str
    wye_bus: str
    v_rated_delta: float
    v_rated_wye: float
    v_base_delta: float | None = None
    v_base_wye: float | None = None
    r1: float = 0.0
    l1: float = 0.0
    r2: float = 0.0
    l2: float = 0.0

    def unit(self, k: int) -> Transformer2WSpec:
        a, b = PHASES[k], PHASES[(k + 1) % 3]
        w1 = Winding(phase_node(self.delta_bus, a), phase_node(self.delta_bus, b), self.v_rated_delta,
                     self.v_base_delta or self.v_rated_delta, self.r1, self.l1)
        w2 = Winding(phase_node(self.wye_bus, a), "0", self.v_rated_wye,
                     self.v_base_wye or self.v_rated_wye, self.r2, self.l2)
        return Transformer2WSpec(f"{self.name}.{a}", w1, w2)

    def validate(self):
        for k in range(3):
            self.unit(k).validate()


@dataclass(frozen=True)
class SeriesRlcSpec:
    """Per-phase R, L and C in series between two buses (or bus and ground).

    A zero R or L is left out; ``c = 0`` means no series capacitor.
    """

    name: str
    from_bus: str
    to_bus: str
    r: float
    l: float
    c: float
    phases: tuple[str, ...] = PHASES

    def validate(self):
        if self.r < 0 or self.l < 0 or self.c < 0:
            raise InvalidSpec(f"{self.name}: R, L, C must be >= 0")
        if self.r == 0 and self.l == 0 and self.c == 0:
            raise InvalidSpec(f"{self.name}: series RLC with no element")


@dataclass(frozen=True)
class NonIdealSourceSpec:
    """Three-phase sinusoidal EMF (peak line-to-ground volts) behind series R-L."""

    name: str
    bus: str
    amplitude: float
    frequency: float
    phase: float = 0.0  # radians, phase a
    r: float = 0.0
    l: float = 0.0
    sequence: str = "abc"

    def validate(self):
        if self.amplitude < 0 or not self.frequency > 0:
            raise InvalidSpec(f"{self.name}: need amplitude >= 0 and frequency > 0")
        if self.r < 0 or self.l < 0:
            raise InvalidSpec(f"{self.name}: R, L must be >= 0")
        if self.r == 0 and self.l == 0:
            raise InvalidSpec(f"{self.name}: a non-ideal source needs a series impedance")
        if self.sequence not in SEQUENCE_SHIFT:
            raise InvalidSpec(f"{self.name}: sequence must be 'abc' or 'acb'")


@dataclass(frozen=True)
class BreakerSpec:
    """Three-phase circuit breaker realized as per-phase two-state resistors."""

    name: str
    from_bus: str
    to_bus: str
    closed: bool = True
    r_on: float = SWITCH_R_ON
    r_off: float = SWITCH_R_OFF

    def validate(self):
        if not 0 < self.r_on < self.r_off:
            raise InvalidSpec(f"{self.name}: need 0 < r_on < r_off")

    def switch_names(self) -> list[str]:
        return [f"{self.name}.{ph}" for ph in PHASES]


# ---------------------------------------------------------------------------
# expansion


def ideal_coupling(primary: Sequence[str], secondary: Sequence[str], ratio: float,
                   name: str = "K") -> tuple[VCVS, CCCS]:
    """Ideal transformer as a VCVS on the secondary and a CCCS on the primary.

    Enforces ``v2 = ratio * v1`` and ``i1 = ratio * i2`` where ``i1`` enters
    the primary's positive terminal and ``i2`` leaves the secondary's, so
    ``v1 * i1 == v2 * i2``.
    """
    if not ratio > 0:
        raise InvalidSpec(f"{name}: coupling ratio must be > 0, got {ratio}")
    e = VCVS(f"{name}.E", secondary[0], secondary[1], primary[0], primary[1], ratio)
    # the VCVS branch current enters its + terminal, i.e. i2 = -I(E)
    f = CCCS(f"{name}.F", primary[0], primary[1], e.name, -ratio)
    return e, f


def _series_rl(name: str, a: str, b: str, r: float, l: float, alloc: NodeAllocator, tag: str) -> list[Primitive]:
    """R then L from ``a`` to ``b``; zero-valued elements are left out."""
    out: list[Primitive] = []
    if r > 0 and l > 0:
        mid = alloc.new(tag, "m")
        out.append(Resistor(f"{name}.R", a, mid, r))
        out.append(Inductor(f"{name}.L", mid, b, l))
    elif r > 0:
        out.append(Resistor(f"{name}.R", a, b, r))
    elif l > 0:
        out.append(Inductor(f"{name}.L", a, b, l))
    return out


@singledispatch
def expand(spec, alloc: NodeAllocator | None = None) -> tuple[list[Primitive], list[str]]:
    """Primitives realizing ``spec`` and the internal nodes they introduced."""
    raise InvalidSpec(f"no expansion for {type(spec).__name__}")


@expand.register
def _(spec: PiLineSpec, alloc=None):
    spec.validate()
    alloc = alloc or NodeAllocator(spec.name)
    prims: list[Primitive] = []
    for ph in spec.phases:
        a, b = phase_node(spec.from_bus, ph), phase_node(spec.to_bus, ph)
        prims += _series_rl(f"{spec.name}.{ph}", a, b, spec.r, spec.l, alloc, ph)
        if spec.c_total > 0:
            prims.append(Capacitor(f"{spec.name}.{ph}.C1", a, "0", spec.c_total / 2.0))
            prims.append(Capacitor(f"{spec.name}.{ph}.C2", b, "0", spec.c_total / 2.0))
    return prims, list(alloc.allocated)


def _expand_transformer(name, windings, r_mag, l_mag, alloc):
    core = alloc.new("core")
    base = windings[0].v_base
    g1 = windings[0].tk
    prims: list[Primitive] = []
    for k, w in enumerate(windings, 1):
        gain = w.tk * w.v_base / base
        if w.r > 0 or w.l > 0:
            inner = alloc.new(f"w{k}")
            prims += _series_rl(f"{name}.w{k}", w.p, inner, w.r, w.l, alloc, f"w{k}")
        else:
            inner = w.p
        prims += ideal_coupling((core, "0"), (inner, w.n), gain, f"{name}.K{k}")
    # magnetizing impedance referred from winding 1 into core units
    if r_mag is not None:
        prims.append(Resistor(f"{name}.Rm", core, "0", r_mag / (g1 * g1)))
    if l_mag is not None:
        prims.append(Inductor(f"{name}.Lm", core, "0", l_mag / (g1 * g1)))
    return prims


@expand.register
def _(spec: Transformer2WSpec, alloc=None):
    spec.validate()
    alloc = alloc or NodeAllocator(spec.name)
    return _expand_transformer(spec.name, spec.windings, spec.r_mag, spec.l_mag, alloc), list(alloc.allocated)


@expand.register
def _(spec: Transformer3WSpec, alloc=None):
    spec.validate()
    alloc = alloc or NodeAllocator(spec.name)
    return _expand_transformer(spec.name, spec.windings, spec.r_mag, spec.l_mag, alloc), list(alloc.allocated)


@expand.register
def _(spec: DeltaWyeBankSpec, alloc=None):
    spec.validate()
    alloc = alloc or NodeAllocator(spec.name)
    prims: list[Primitive] = []
    for k in range(3):
        unit = spec.unit(k)
        sub = NodeAllocator(unit.name)
        p, _ = expand(unit, sub)
        alloc.allocated.extend(sub.allocated)
        prims += p
    return prims, list(alloc.allocated)


@expand.register
def _(spec: SeriesRlcSpec, alloc=None):
    spec.validate()
    alloc = alloc or NodeAllocator(spec.name)
    prims: list[Primitive] = []
    for ph in spec.phases:
        a, b = phase_node(spec.from_bus, ph), phase_node(spec.to_bus, ph)
        if spec.c > 0:
            mid = a
            if spec.r > 0 or spec.l > 0:
                mid = alloc.new(ph, "c")
                prims += _series_rl(f"{spec.name}.{ph}", a, mid, spec.r, spec.l, alloc, ph)
            prims.append(Capacitor(f"{spec.name}.{ph}.C", mid, b, spec.c))
        else:
            prims += _series_rl(f"{spec.name}.{ph}", a, b, spec.r, spec.l, alloc, ph)
    return prims, list(alloc.allocated)


@expand.register
def _(spec: NonIdealSourceSpec, alloc=None):
    spec.validate()
    alloc = alloc or NodeAllocator(spec.name)
    prims: list[Primitive] = []
    shift = SEQUENCE_SHIFT[spec.sequence]
    for k, ph in enumerate(PHASES):
        emf = alloc.new(ph, "emf")
        wave = Sine(spec.amplitude, spec.frequency, spec.phase + k * shift)
        prims.append(VoltageSource(f"{spec.name}.{ph}.E", emf, "0", wave))
        prims += _series_rl(f"{spec.name}.{ph}", emf, phase_node(spec.bus, ph), spec.r, spec.l, alloc, ph)
    return prims, list(alloc.allocated)


@expand.register
def _(spec: BreakerSpec, alloc=None):
    spec.validate()
    alloc = alloc or NodeAllocator(spec.name)
    prims = [Switch(f"{spec.name}.{ph}", phase_node(spec.from_bus, ph), phase_node(spec.to_bus, ph),
                    r_on=spec.r_on, r_off=spec.r_off, closed=spec.closed) for ph in PHASES]
    return prims, list(alloc.allocated)
