"""Circuit primitives, unknown layout and Modified Nodal Analysis stamping.

Sign conventions follow SPICE:

* branch currents of two-terminal elements flow from the ``p`` terminal
  through the element to ``n``;
* the residual row of a node is the sum of currents *leaving* that node,
  so the system solved is ``F(x) = A x - b + f_nl(x) = 0``.

Unknowns are ordered node voltages first (in order of first appearance),
then branch currents in declaration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import SingularStamp, UnknownNode
from .expr import GROUND_NAMES, Expr, VarKey, affine_coefficients

NodeId = int
GROUND: NodeId = 0


# ---------------------------------------------------------------------------
# source waveforms


@dataclass(frozen=True)
class DC:
    value: float

    def __call__(self, t: float) -> float:
        return self.value

    def __str__(self):
        return f"DC {self.value!r}"


@dataclass(frozen=True)
class Sine:
    """``offset + amplitude * cos(2*pi*frequency*t + phase)``, phase in radians."""

    amplitude: float
    frequency: float
    phase: float = 0.0
    offset: float = 0.0

    def __call__(self, t: float) -> float:
        return self.offset + self.amplitude * math.cos(2.0 * math.pi * self.frequency * t + self.phase)

    def __str__(self):
        return f"COS({self.offset!r} {self.amplitude!r} {self.frequency!r} {self.phase!r})"


@dataclass(frozen=True)
class Step:
    """``before`` for ``t < at``, ``after`` from ``at`` on."""

    before: float
    after: float
    at: float = 0.0

    def __call__(self, t: float) -> float:
        return self.after if t >= self.at else self.before

    def __str__(self):
        return f"STEP({self.before!r} {self.after!r} {self.at!r})"


SourceValue = Union[float, Callable[[float], float]]


def _as_waveform(value: SourceValue):
    if callable(value):
        return value
    return DC(float(value))


# ---------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class Primitive:
    name: str
    p: str
    n: str

    has_branch = False
    is_reactive = False

    @property
    def terminals(self) -> tuple[str, ...]:
        return (self.p, self.n)

    def node_refs(self) -> tuple[str, ...]:
        """All nodes touched, including control terminals."""
        return self.terminals

    def branch_refs(self) -> tuple[str, ...]:
        return ()


@dataclass(frozen=True)
class Resistor(Primitive):
    ohms: float

    def __post_init__(self):
        if not self.ohms > 0:
            raise SingularStamp(f"{self.name}: resistance must be > 0, got {self.ohms}")


@dataclass(frozen=True)
class Inductor(Primitive):
    henries: float
    initial_current: float | None = None

    has_branch = True
    is_reactive = True

    def __post_init__(self):
        if not self.henries > 0:
            raise SingularStamp(f"{self.name}: inductance must be > 0, got {self.henries}")


@dataclass(frozen=True)
class Capacitor(Primitive):
    farads: float
    initial_voltage: float | None = None

    is_reactive = True

    def __post_init__(self):
        if not self.farads > 0:
            raise SingularStamp(f"{self.name}: capacitance must be > 0, got {self.farads}")

    @property
    def has_branch(self):
        # a capacitor with an initial condition is held by a branch row at DC
        return self.initial_voltage is not None


@dataclass(frozen=True)
class VoltageSource(Primitive):
    waveform: SourceValue = 0.0

    has_branch = True

    def __post_init__(self):
        object.__setattr__(self, "waveform", _as_waveform(self.waveform))


@dataclass(frozen=True)
class CurrentSource(Primitive):
    """Drives ``waveform(t)`` amperes from ``p`` through the source to ``n``."""

    waveform: SourceValue = 0.0

    def __post_init__(self):
        object.__setattr__(self, "waveform", _as_waveform(self.waveform))


@dataclass(frozen=True)
class VCVS(Primitive):
    cp: str
    cn: str
    gain: float

    has_branch = True

    def node_refs(self):
        return (self.p, self.n, self.cp, self.cn)

    @property
    def terminals(self):
        return (self.p, self.n, self.cp, self.cn)


@dataclass(frozen=True)
class VCCS(Primitive):
    cp: str
    cn: str
    transconductance: float

    def node_refs(self):
        return (self.p, self.n, self.cp, self.cn)

    @property
    def terminals(self):
        return (self.p, self.n, self.cp, self.cn)


@dataclass(frozen=True)
class CCVS(Primitive):
    control: str
    transresistance: float

    has_branch = True

    def branch_refs(self):
        return (self.control,)


@dataclass(frozen=True)
class CCCS(Primitive):
    """Drives ``gain * I(control)`` from ``p`` through the element to ``n``."""

    control: str
    gain: float

    def branch_refs(self):
        return (self.control,)


@dataclass(frozen=True)
class BehavioralVoltage(Primitive):
    expr: Expr

    has_branch = True

    def node_refs(self):
        return (self.p, self.n) + tuple(k[1] for k in self.expr.variables() if k[0] == "v")

    def branch_refs(self):
        return tuple(k[1] for k in self.expr.variables() if k[0] == "i")


@dataclass(frozen=True)
class BehavioralCurrent(Primitive):
    """Drives ``expr`` amperes from ``p`` through the element to ``n``."""

    expr: Expr

    def node_refs(self):
        return (self.p, self.n) + tuple(k[1] for k in self.expr.variables() if k[0] == "v")

    def branch_refs(self):
        return tuple(k[1] for k in self.expr.variables() if k[0] == "i")


# Default breaker/fault switch resistances.
SWITCH_R_ON = 1e-6
SWITCH_R_OFF = 1e9


@dataclass(frozen=True)
class Switch(Primitive):
    """Two-state resistor; ``closed`` is the initial state."""

    r_on: float = SWITCH_R_ON
    r_off: float = SWITCH_R_OFF
    closed: bool = False

    def __post_init__(self):
        if not 0 < self.r_on < self.r_off:
            raise SingularStamp(f"{self.name}: need 0 < r_on < r_off, got {self.r_on}, {self.r_off}")


BEHAVIORAL = (BehavioralVoltage, BehavioralCurrent)


def _wave_text(w) -> str:
    text = str(w)
    return text if not text.startswith("<") else "FUNC"


def netlist_line(prim: Primitive) -> str:
    """One SPICE-like card: ``<letter>_<name> <nodes...> <value> [options]``."""
    head = f"{prim.name} {prim.p} {prim.n}"
    if isinstance(prim, Resistor):
        return f"R_{head} {prim.ohms!r}"
    if isinstance(prim, Inductor):
        ic = "" if prim.initial_current is None else f" IC={prim.initial_current!r}"
        return f"L_{head} {prim.henries!r}{ic}"
    if isinstance(prim, Capacitor):
        ic = "" if prim.initial_voltage is None else f" IC={prim.initial_voltage!r}"
        return f"C_{head} {prim.farads!r}{ic}"
    if isinstance(prim, VoltageSource):
        return f"V_{head} {_wave_text(prim.waveform)}"
    if isinstance(prim, CurrentSource):
        return f"I_{head} {_wave_text(prim.waveform)}"
    if isinstance(prim, VCVS):
        return f"E_{head} {prim.cp} {prim.cn} {prim.gain!r}"
    if isinstance(prim, VCCS):
        return f"G_{head} {prim.cp} {prim.cn} {prim.transconductance!r}"
    if isinstance(prim, CCVS):
        return f"H_{head} {prim.control} {prim.transresistance!r}"
    if isinstance(prim, CCCS):
        return f"F_{head} {prim.control} {prim.gain!r}"
    if isinstance(prim, BehavioralVoltage):
        return f"B_{head} V={prim.expr}"
    if isinstance(prim, BehavioralCurrent):
        return f"B_{head} I={prim.expr}"
    if isinstance(prim, Switch):
        state = "ON" if prim.closed else "OFF"
        return f"S_{head} RON={prim.r_on!r} ROFF={prim.r_off!r} {state}"
    raise TypeError(f"no netlist form for {type(prim).__name__}")  # pragma: no cover


# ---------------------------------------------------------------------------
# circuit container and layout


def is_ground(node: str) -> bool:
    return node in GROUND_NAMES


class Circuit:
    """An ordered, name-unique collection of primitives."""

    def __init__(self, primitives: Iterable[Primitive] = ()):
        self.primitives: list[Primitive] = []
        self._names: dict[str, Primitive] = {}
        for p in primitives:
            self.add(p)

    def add(self, prim: Primitive) -> Primitive:
        if prim.name in self._names:
            raise ValueError(f"duplicate primitive name {prim.name!r}")
        self.primitives.append(prim)
        self._names[prim.name] = prim
        return prim

    def extend(self, prims: Iterable[Primitive]) -> None:
        for p in prims:
            self.add(p)

    def __getitem__(self, name: str) -> Primitive:
        return self._names[name]

    def __contains__(self, name: str) -> bool:
        return name in self._names

    def __iter__(self):
        return iter(self.primitives)

    def __len__(self):
        return len(self.primitives)

    def nodes(self) -> list[str]:
        seen: dict[str, None] = {}
        for p in self.primitives:
            for nd in p.terminals:
                if not is_ground(nd):
                    seen.setdefault(nd, None)
        return list(seen)


class Layout:
    """Bijection between unknown indices and node voltages / branch currents."""

    def __init__(self, nodes: Sequence[str], branches: Sequence[str]):
        self.nodes = list(nodes)
        self.branches = list(branches)
        self.node_id = {nd: i + 1 for i, nd in enumerate(self.nodes)}
        self.branch_row = {br: len(self.nodes) + i for i, br in enumerate(self.branches)}
        self.n_nodes = len(self.nodes)
        self.size = len(self.nodes) + len(self.branches)

    @classmethod
    def of(cls, circuit: Circuit) -> "Layout":
        branches = [p.name for p in circuit if p.has_branch]
        layout = cls(circuit.nodes(), branches)
        for p in circuit:
            for nd in p.node_refs():
                layout.node(nd)
            for br in p.branch_refs():
                if br not in layout.branch_row:
                    raise UnknownNode(f"{p.name}: branch current I({br}) is not an unknown of this circuit")
        return layout

    def node(self, name: str) -> NodeId:
        if is_ground(name):
            return GROUND
        try:
            return self.node_id[name]
        except KeyError:
            raise UnknownNode(f"node {name!r} is not in the layout") from None

    def row(self, name: str) -> int:
        """Unknown index of a node voltage, or -1 for ground."""
        return self.node(name) - 1

    def branch(self, name: str) -> int:
        try:
            return self.branch_row[name]
        except KeyError:
            raise UnknownNode(f"branch {name!r} is not in the layout") from None

    def index_of(self, key: VarKey) -> int:
        kind, name = key
        if kind == "v":
            r = self.row(name)
            if r < 0:
                raise UnknownNode("ground is not an unknown")
            return r
        return self.branch(name)

    def labels(self) -> list[str]:
        return [f"V({n})" for n in self.nodes] + [f"I({b})" for b in self.branches]

    def label(self, k: int) -> str:
        return self.labels()[k]

    def env(self, x: np.ndarray) -> dict[VarKey, float]:
        out = {("v", n): float(x[i]) for i, n in enumerate(self.nodes)}
        out.update({("i", b): float(x[r]) for b, r in self.branch_row.items()})
        return out


# ---------------------------------------------------------------------------
# MNA system


@dataclass
class IntegratorCompanion:
    """Per-call integration context for stamping.

    ``dt is None`` selects the static (DC) model: inductors short, capacitors
    open, except that with ``use_ic`` reactive elements carrying an initial
    condition are held at it.  ``history`` maps reactive primitive names to
    ``(state, derivative-term)`` pairs: ``(v_C, i_C)`` for capacitors and
    ``(i_L, v_L)`` for inductors at the last accepted time point.
    """

    dt: float | None = None
    t: float = 0.0
    history: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    switches: Mapping[str, bool] = field(default_factory=dict)
    iterate: np.ndarray | None = None
    use_ic: bool = True

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")


@dataclass
class NonlinearTerm:
    expr: Expr
    rows: tuple[tuple[int, float], ...]  # (residual row, sign)
    owner: str


class MnaSystem:
    """Triplet-form MNA matrix, right-hand side and nonlinear terms."""

    def __init__(self, layout: Layout):
        self.layout = layout
        self.n = layout.size
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.b = np.zeros(self.n)
        self.nonlinear: list[NonlinearTerm] = []

    def add(self, r: int, c: int, v: float) -> None:
        if r >= 0 and c >= 0 and v != 0.0:
            self.rows.append(r)
            self.cols.append(c)
            self.vals.append(float(v))

    def rhs(self, r: int, v: float) -> None:
        if r >= 0:
            self.b[r] += v

    def conductance(self, a: int, b: int, g: float) -> None:
        self.add(a, a, g)
        self.add(b, b, g)
        self.add(a, b, -g)
        self.add(b, a, -g)

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Canonical triplets: sorted by (row, col, value) and summed."""
        r = np.asarray(self.rows, dtype=np.int64)
        c = np.asarray(self.cols, dtype=np.int64)
        v = np.asarray(self.vals, dtype=float)
        if r.size == 0:
            return r, c, v
        order = np.lexsort((v, c, r))
        r, c, v = r[order], c[order], v[order]
        key = r * self.n + c
        starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
        sums = np.array([math.fsum(v[s:e]) for s, e in zip(starts, np.r_[starts[1:], v.size])])
        return r[starts], c[starts], sums

    @property
    def G(self) -> sp.csr_matrix:
        r, c, v = self.triplets()
        return sp.csr_matrix((v, (r, c)), shape=(self.n, self.n))

    def dense(self) -> np.ndarray:
        r, c, v = self.triplets()
        out = np.zeros((self.n, self.n))
        out[r, c] = v
        return out

    def residual(self, x: np.ndarray, t: float = 0.0) -> np.ndarray:
        F = self.G @ x - self.b
        env = None
        for term in self.nonlinear:
            if env is None:
                env = self.layout.env(x)
            val, _ = term.expr.evaluate(env, t)
            for r, s in term.rows:
                F[r] += s * val
        return F


def _branch_incidence(sys: MnaSystem, p: int, n: int, br: int) -> None:
    # KCL: branch current leaves p, enters n; branch row gets v_p - v_n
    sys.add(p, br, 1.0)
    sys.add(n, br, -1.0)
    sys.add(br, p, 1.0)
    sys.add(br, n, -1.0)


def stamp(prim: Primitive, state: IntegratorCompanion, sys: MnaSystem) -> MnaSystem:
    """Add one primitive's contribution to ``sys`` (in place) and return it.

    Behavioral sources with affine, time-invariant expressions are stamped
    as constants; all others register a :class:`NonlinearTerm` and, when
    ``state.iterate`` is given, are linearized there (value + Jacobian row).
    """
    L = sys.layout
    p, n = L.row(prim.p), L.row(prim.n)
    dt = state.dt

    if isinstance(prim, Resistor):
        sys.conductance(p, n, 1.0 / prim.ohms)

    elif isinstance(prim, Switch):
        closed = state.switches.get(prim.name, prim.closed)
        sys.conductance(p, n, 1.0 / (prim.r_on if closed else prim.r_off))

    elif isinstance(prim, Capacitor):
        hold = prim.initial_voltage is not None
        if dt is None:
            if hold:
                br = L.branch(prim.name)
                sys.add(p, br, 1.0)
                sys.add(n, br, -1.0)
                if state.use_ic:
                    sys.add(br, p, 1.0)
                    sys.add(br, n, -1.0)
                    sys.rhs(br, prim.initial_voltage)
                else:
                    sys.add(br, br, 1.0)  # open: i_C = 0
        else:
            geq = 2.0 * prim.farads / dt
            v0, i0 = state.history.get(prim.name, (0.0, 0.0))
            ieq = geq * v0 + i0
            if hold:
                # i = geq*(v_p - v_n) - ieq, carried by the branch unknown
                br = L.branch(prim.name)
                sys.add(p, br, 1.0)
                sys.add(n, br, -1.0)
                sys.add(br, p, geq)
                sys.add(br, n, -geq)
                sys.add(br, br, -1.0)
                sys.rhs(br, ieq)
            else:
                sys.conductance(p, n, geq)
                sys.rhs(p, ieq)
                sys.rhs(n, -ieq)

    elif isinstance(prim, Inductor):
        br = L.branch(prim.name)
        if dt is None:
            if prim.initial_current is not None and state.use_ic:
                sys.add(p, br, 1.0)
                sys.add(n, br, -1.0)
                sys.add(br, br, 1.0)
                sys.rhs(br, prim.initial_current)
            else:
                _branch_incidence(sys, p, n, br)
        else:
            req = 2.0 * prim.henries / dt
            i0, v0 = state.history.get(prim.name, (0.0, 0.0))
            _branch_incidence(sys, p, n, br)
            sys.add(br, br, -req)
            sys.rhs(br, -(req * i0 + v0))

    elif isinstance(prim, VoltageSource):
        br = L.branch(prim.name)
        _branch_incidence(sys, p, n, br)
        sys.rhs(br, prim.waveform(state.t))

    elif isinstance(prim, CurrentSource):
        val = prim.waveform(state.t)
        sys.rhs(p, -val)
        sys.rhs(n, val)

    elif isinstance(prim, VCVS):
        br = L.branch(prim.name)
        cp, cn = L.row(prim.cp), L.row(prim.cn)
        _branch_incidence(sys, p, n, br)
        sys.add(br, cp, -prim.gain)
        sys.add(br, cn, prim.gain)

    elif isinstance(prim, VCCS):
        cp, cn = L.row(prim.cp), L.row(prim.cn)
        g = prim.transconductance
        sys.add(p, cp, g)
        sys.add(p, cn, -g)
        sys.add(n, cp, -g)
        sys.add(n, cn, g)

    elif isinstance(prim, CCVS):
        br = L.branch(prim.name)
        ctrl = L.branch(prim.control)
        _branch_incidence(sys, p, n, br)
        sys.add(br, ctrl, -prim.transresistance)

    elif isinstance(prim, CCCS):
        ctrl = L.branch(prim.control)
        sys.add(p, ctrl, prim.gain)
        sys.add(n, ctrl, -prim.gain)

    elif isinstance(prim, BEHAVIORAL):
        _check_expr(prim, L)
        if isinstance(prim, BehavioralVoltage):
            br = L.branch(prim.name)
            _branch_incidence(sys, p, n, br)
            rows = ((br, -1.0),)
        else:
            rows = tuple((r, s) for r, s in ((p, 1.0), (n, -1.0)) if r >= 0)
        if prim.expr.is_affine():
            c0, grad = affine_coefficients(prim.expr)
            for r, s in rows:
                sys.rhs(r, -s * c0)
                for key, d in grad.items():
                    sys.add(r, L.index_of(key), s * d)
        else:
            sys.nonlinear.append(NonlinearTerm(prim.expr, rows, prim.name))
            if state.iterate is not None:
                # Newton linearization: f(x) ~ f(x0) + J (x - x0)
                val, grad = prim.expr.evaluate(L.env(state.iterate), state.t)
                lin = val - sum(d * state.iterate[L.index_of(k)] for k, d in grad.items())
                for r, s in rows:
                    sys.rhs(r, -s * lin)
                    for key, d in grad.items():
                        sys.add(r, L.index_of(key), s * d)

    else:  # pragma: no cover - defensive
        raise TypeError(f"cannot stamp {type(prim).__name__}")
    return sys


def _check_expr(prim, layout: Layout) -> None:
    for key in prim.expr.variables():
        try:
            layout.index_of(key)
        except UnknownNode as exc:
            raise UnknownNode(f"{prim.name}: expression references {key[0].upper()}({key[1]}): {exc}") from None


def assemble(circuit: Circuit, state: IntegratorCompanion, layout: Layout | None = None) -> MnaSystem:
    """Stamp every primitive of ``circuit`` into a fresh :class:`MnaSystem`."""
    layout = layout or Layout.of(circuit)
    sys = MnaSystem(layout)
    for prim in circuit:
        stamp(prim, state, sys)
    return sys


def eval_behavioral(expr: Expr, solution: np.ndarray | Mapping[VarKey, float], layout: Layout | None = None,
                    t: float = 0.0) -> tuple[float, dict[VarKey, float]]:
    """Value of ``expr`` at a candidate solution and its exact partials."""
    if layout is not None:
        env = layout.env(np.asarray(solution, dtype=float))
    else:
        env = solution
    missing = [k for k in expr.variables() if k not in env]
    if missing:
        raise UnknownNode(f"unresolved references: {sorted(missing)}")
    return expr.evaluate(env, t)
