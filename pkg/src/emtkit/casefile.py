"""Case files: a line-oriented sectioned text format for three-phase studies.

Layout::

    [system]
    frequency = 50          # Hz, exactly one per case

    [buses]
    b1 b2 b3                # whitespace separated, may span lines

    [line L12]              # typed stanza: [<kind> <name>]
    from = b1
    to = b2
    r = 5.29
    l = 0.1347
    c = 1.2e-6

    [events]
    10.0 fault b4 resistance=1e-4
    10.06 clear b4

    [solver]
    t_end = 20

    [probes]
    v4a = v b4.a            # v <node> [<node>] or i <branch>

``#`` and ``;`` start comments.  Keys are strict: unknown or repeated keys,
missing required keys and references to undeclared buses are reported with
the line and column where they occur.  Values are SI units except where a
stanza documents per-unit fields; angles are in degrees.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields
from typing import Any

from .circuit import SWITCH_R_OFF, SWITCH_R_ON, Circuit, is_ground, netlist_line
from .components import (
    PHASES,
    BreakerSpec,
    DeltaWyeBankSpec,
    NonIdealSourceSpec,
    PiLineSpec,
    SeriesRlcSpec,
    Transformer2WSpec,
    Winding,
    expand,
    phase_node,
)
from .controls import DC1ASpec, IEEEG3Spec
from .errors import CaseSyntaxError, CaseValidationError, InvalidSpec
from .machine import GeneratorSpec
from .solver import Action, Probe, SimEvent, SolverConfig

SETTLING_TIME = 1.0  # no events before this when a machine must settle

# ---------------------------------------------------------------------------
# schema

REQUIRED = object()


@dataclass(frozen=True)
class Key:
    type: str  # float, int, bool, bus, bus0 (bus or ground), name, choice
    default: Any = REQUIRED
    choices: tuple[str, ...] = ()


def _f(default=REQUIRED):
    return Key("float", default)


SCHEMAS: dict[str, dict[str, Key]] = {
    "source": {"bus": Key("bus"), "v_ll": _f(), "angle": _f(0.0), "r": _f(0.0), "l": _f(0.0),
               "sequence": Key("choice", "abc", ("abc", "acb"))},
    "line": {"from": Key("bus"), "to": Key("bus"), "r": _f(), "l": _f(), "c": _f(0.0)},
    "rlc": {"from": Key("bus"), "to": Key("bus0", "ground"), "r": _f(0.0), "l": _f(0.0), "c": _f(0.0)},
    "resistor": {"from": Key("bus"), "to": Key("bus0", "ground"), "r": _f()},
    "breaker": {"from": Key("bus"), "to": Key("bus"), "closed": Key("bool", True),
                "r_on": _f(SWITCH_R_ON), "r_off": _f(SWITCH_R_OFF)},
    "transformer": {"from": Key("bus"), "to": Key("bus"), "connection": Key("choice", "yy", ("yy", "dy")),
                    "v1": _f(), "v2": _f(), "v1_base": _f(0.0), "v2_base": _f(0.0),
                    "r1": _f(0.0), "l1": _f(0.0), "r2": _f(0.0), "l2": _f(0.0)},
    "generator": {"bus": Key("bus"), "s_base": _f(), "v_base": _f(), "h": _f(), "d": _f(0.0), "ra": _f(0.0),
                  "xd": _f(), "xq": _f(), "xdp": _f(), "xqp": _f(), "xdpp": _f(), "xqpp": _f(),
                  "td0p": _f(), "tq0p": _f(), "td0pp": _f(), "tq0pp": _f(),
                  "p": _f(), "q": _f(0.0), "v": _f(1.0), "angle": _f(0.0),
                  "init": Key("choice", "given", ("given", "steady_state"))},
    "governor": {"generator": Key("name"), **{k: _f() for k in (
        "tg", "tp", "uo", "uc", "pmax", "pmin", "sigma", "delta", "tr", "tw", "a11", "a13", "a21", "a23")}},
    "exciter": {"generator": Key("name"), **{k: _f() for k in (
        "ka", "ta", "ke", "te", "kf", "tf", "vrmax", "vrmin")},
        "a_ex": _f(0.0), "b_ex": _f(0.0), "tr": _f(0.0), "tb": _f(0.0), "tc": _f(0.0),
        "saturation": Key("choice", "exponential", ("exponential", "quadratic"))},
}

SYSTEM_KEYS = {"frequency": _f(), "name": Key("name", "")}
_SOLVER_TYPES = {"fixed_dt": "optfloat", "newton_max_iter": "int", "reuse_jacobian": "bool",
                 "euler_restart": "bool", "dt_levels": "int"}
SOLVER_KEYS = {f.name: Key(_SOLVER_TYPES.get(f.name, "float"), f.default) for f in fields(SolverConfig)}

SECTION_ORDER = ("system", "buses", "solver")
ACTIONS = {"fault": Action.APPLY_FAULT, "clear": Action.CLEAR_FAULT,
           "open": Action.SWITCH_OPEN, "close": Action.SWITCH_CLOSE}
ACTION_NAMES = {v: k for k, v in ACTIONS.items()}
NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_\-]*\Z")
NODE_RE = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_.\-]*\Z")


# ---------------------------------------------------------------------------
# parsed form


@dataclass(eq=True)
class Stanza:
    kind: str
    name: str
    params: dict[str, Any]
    line: int = field(default=0, compare=False)
    where: dict[str, tuple[int, int]] = field(default_factory=dict, compare=False, repr=False)


@dataclass(eq=True)
class EventLine:
    time: float
    action: str
    target: str
    resistance: float | None = None
    line: int = field(default=0, compare=False)


@dataclass(eq=True)
class ProbeLine:
    label: str
    kind: str
    p: str
    n: str = "0"
    line: int = field(default=0, compare=False)


@dataclass(eq=True)
class CaseFile:
    system: dict[str, Any]
    buses: list[str]
    stanzas: list[Stanza]
    events: list[EventLine]
    solver: dict[str, Any]
    probes: list[ProbeLine]

    @property
    def frequency(self) -> float:
        return self.system["frequency"]

    @property
    def name(self) -> str:
        return self.system.get("name", "")

    def of_kind(self, kind: str) -> list[Stanza]:
        return [s for s in self.stanzas if s.kind == kind]

    def stanza(self, name: str) -> Stanza:
        for s in self.stanzas:
            if s.name == name:
                return s
        raise KeyError(name)

    def solver_config(self, **overrides) -> SolverConfig:
        return SolverConfig(**{**self.solver, **overrides})


# ---------------------------------------------------------------------------
# lexing


def _strip_comment(text: str) -> str:
    for i, ch in enumerate(text):
        if ch in "#;":
            return text[:i]
    return text


def _tokens(text: str, lineno: int):
    """Whitespace-separated tokens with their 1-based columns."""
    return [(m.group(0), m.start() + 1) for m in re.finditer(r"\S+", text)]


def _number(tok: str, line: int, col: int, what: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise CaseSyntaxError(f"{what}: expected a number, got {tok!r}", line, col) from None
    if not math.isfinite(v):
        raise CaseSyntaxError(f"{what}: number must be finite, got {tok!r}", line, col)
    return v


def _convert(key: Key, raw: str, line: int, col: int, what: str):
    if key.type in ("float", "optfloat"):
        if key.type == "optfloat" and raw.lower() == "none":
            return None
        return _number(raw, line, col, what)
    if key.type == "int":
        try:
            return int(raw)
        except ValueError:
            raise CaseSyntaxError(f"{what}: expected an integer, got {raw!r}", line, col) from None
    if key.type == "bool":
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise CaseSyntaxError(f"{what}: expected true/false, got {raw!r}", line, col)
    if key.type == "choice":
        if raw not in key.choices:
            raise CaseValidationError(f"{what}: expected one of {', '.join(key.choices)}, got {raw!r}", line, col)
        return raw
    if key.type in ("bus", "bus0", "name"):
        if key.type == "bus0" and is_ground(raw):
            return "ground"
        if not NAME_RE.match(raw):
            raise CaseSyntaxError(f"{what}: invalid name {raw!r}", line, col)
        return raw
    raise AssertionError(key.type)  # pragma: no cover


# ---------------------------------------------------------------------------
# parsing


class _Section:
    def __init__(self, kind: str, name: str | None, line: int):
        self.kind, self.name, self.line = kind, name, line
        self.items: list[tuple[str, str, int, int, int]] = []  # key, value, line, kcol, vcol
        self.lines: list[tuple[str, int, int]] = []  # raw text, line, column offset


def _split(text: str) -> list[_Section]:
    sections: list[_Section] = []
    current: _Section | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = _strip_comment(raw)
        stripped = body.strip()
        if not stripped:
            continue
        col = len(body) - len(body.lstrip()) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise CaseSyntaxError("section header must end with ']'", lineno, col + len(stripped))
            parts = stripped[1:-1].split()
            if not parts:
                raise CaseSyntaxError("empty section header", lineno, col)
            kind = parts[0]
            if kind in SECTION_ORDER or kind in ("events", "probes"):
                if len(parts) != 1:
                    raise CaseSyntaxError(f"section [{kind}] takes no name", lineno, col)
                name = None
            elif kind in SCHEMAS:
                if len(parts) != 2:
                    raise CaseSyntaxError(f"stanza [{kind}] needs exactly one name", lineno, col)
                name = parts[1]
                if not NAME_RE.match(name):
                    raise CaseSyntaxError(f"invalid component name {name!r}", lineno, col + stripped.index(name))
            else:
                raise CaseSyntaxError(f"unknown section kind {kind!r}", lineno, col + 1)
            current = _Section(kind, name, lineno)
            sections.append(current)
            continue
        if current is None:
            raise CaseSyntaxError("content before the first section header", lineno, col)
        if current.kind in ("buses", "events"):
            current.lines.append((body, lineno, 0))
            continue
        if "=" not in body:
            raise CaseSyntaxError("expected 'key = value'", lineno, col)
        eq = body.index("=")
        key = body[:eq].strip()
        value = body[eq + 1:].strip()
        vcol = eq + 2 + (len(body[eq + 1:]) - len(body[eq + 1:].lstrip()))
        if not key:
            raise CaseSyntaxError("missing key before '='", lineno, col)
        if not value:
            raise CaseSyntaxError(f"missing value for {key!r}", lineno, eq + 2)
        current.items.append((key, value, lineno, col, vcol))
    return sections


def _keyed(sec: _Section, schema: dict[str, Key], what: str) -> tuple[dict[str, Any], dict[str, tuple[int, int]]]:
    out: dict[str, Any] = {}
    where: dict[str, tuple[int, int]] = {}
    for key, value, line, kcol, vcol in sec.items:
        if key not in schema:
            raise CaseValidationError(f"{what}: unknown key {key!r}", line, kcol)
        if key in out:
            raise CaseValidationError(f"{what}: key {key!r} given twice", line, kcol)
        if len(value.split()) != 1:
            raise CaseSyntaxError(f"{what}: value of {key!r} must be a single token", line, vcol)
        out[key] = _convert(schema[key], value, line, vcol, f"{what}.{key}")
        where[key] = (line, vcol)
    for key, spec in schema.items():
        if key not in out:
            if spec.default is REQUIRED:
                raise CaseValidationError(f"{what}: missing required key {key!r}", sec.line, 1)
            out[key] = spec.default
    return {k: out[k] for k in schema}, where


def parse_case(text: str | bytes) -> CaseFile:
    """Parse and validate case text; raises :class:`CaseSyntaxError` or
    :class:`CaseValidationError` at the first problem found."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            prefix = bytes(text)[:exc.start]
            line = prefix.count(b"\n") + 1
            col = exc.start - (prefix.rfind(b"\n") + 1) + 1
            raise CaseSyntaxError("invalid UTF-8", line, col) from None
    if "\x00" in text:
        idx = text.index("\x00")
        raise CaseSyntaxError("NUL character", text.count("\n", 0, idx) + 1, idx - (text.rfind("\n", 0, idx) + 1) + 1)
    sections = _split(text)

    system = None
    buses: list[str] = []
    bus_lines: dict[str, tuple[int, int]] = {}
    solver: dict[str, Any] | None = None
    stanzas: list[Stanza] = []
    events: list[EventLine] = []
    probes: list[ProbeLine] = []
    seen = set()
    names: dict[str, int] = {}
    for sec in sections:
        if sec.kind in ("system", "buses", "solver", "events", "probes"):
            if sec.kind in seen:
                raise CaseValidationError(f"section [{sec.kind}] given twice", sec.line, 1)
            seen.add(sec.kind)
        if sec.kind == "system":
            system, _ = _keyed(sec, SYSTEM_KEYS, "system")
            if not system["frequency"] > 0:
                raise CaseValidationError("system frequency must be > 0", sec.line, 1)
        elif sec.kind == "buses":
            for body, line, _ in sec.lines:
                for tok, col in _tokens(body, line):
                    if not NAME_RE.match(tok) or is_ground(tok):
                        raise CaseSyntaxError(f"invalid bus name {tok!r}", line, col)
                    if tok in bus_lines:
                        raise CaseValidationError(f"bus {tok!r} declared twice", line, col)
                    bus_lines[tok] = (line, col)
                    buses.append(tok)
        elif sec.kind == "solver":
            solver, _ = _keyed(sec, SOLVER_KEYS, "solver")
        elif sec.kind == "events":
            for body, line, _ in sec.lines:
                events.append(_parse_event(body, line))
        elif sec.kind == "probes":
            for key, value, line, kcol, vcol in sec.items:
                probes.append(_parse_probe(key, value, line, kcol, vcol))
        else:
            if sec.name in names:
                raise CaseValidationError(f"component name {sec.name!r} already used on line {names[sec.name]}",
                                          sec.line, 1)
            names[sec.name] = sec.line
            params, where = _keyed(sec, SCHEMAS[sec.kind], f"{sec.kind} {sec.name}")
            stanzas.append(Stanza(sec.kind, sec.name, params, sec.line, where))
    if system is None:
        raise CaseValidationError("missing [system] section with the system frequency", 1, 1)
    if solver is None:
        solver = {k: v.default for k, v in SOLVER_KEYS.items()}
    case = CaseFile(system, buses, stanzas, events, solver, probes)
    _validate(case)
    return case


def _parse_event(body: str, line: int) -> EventLine:
    toks = _tokens(body, line)
    if len(toks) < 3:
        raise CaseSyntaxError("event needs '<time> <action> <target>'", line, toks[0][1] if toks else 1)
    t = _number(toks[0][0], line, toks[0][1], "event time")
    action, acol = toks[1]
    if action not in ACTIONS:
        raise CaseValidationError(f"unknown event action {action!r} (use {', '.join(ACTIONS)})", line, acol)
    target, tcol = toks[2]
    if not NAME_RE.match(target):
        raise CaseSyntaxError(f"invalid event target {target!r}", line, tcol)
    resistance = None
    for tok, col in toks[3:]:
        key, _, val = tok.partition("=")
        if key != "resistance" or action != "fault":
            raise CaseValidationError(f"unexpected event option {tok!r}", line, col)
        if resistance is not None:
            raise CaseValidationError("resistance given twice", line, col)
        resistance = _number(val, line, col + len(key) + 1, "fault resistance")
        if not resistance > 0:
            raise CaseValidationError("fault resistance must be > 0", line, col + len(key) + 1)
    return EventLine(t, action, target, resistance, line)


def _parse_probe(label: str, value: str, line: int, kcol: int, vcol: int) -> ProbeLine:
    if not NODE_RE.match(label):
        raise CaseSyntaxError(f"invalid probe label {label!r}", line, kcol)
    toks = value.split()
    kind = toks[0]
    if kind not in ("v", "i") or len(toks) < 2 or len(toks) > (3 if kind == "v" else 2):
        raise CaseSyntaxError("probe must be 'v <node> [<node>]' or 'i <branch>'", line, vcol)
    for tok in toks[1:]:
        if not NODE_RE.match(tok):
            raise CaseSyntaxError(f"invalid probe reference {tok!r}", line, vcol + value.index(tok))
    return ProbeLine(label, kind, toks[1], toks[2] if len(toks) == 3 else "0", line)


# ---------------------------------------------------------------------------
# validation


def _validate(case: CaseFile) -> None:
    declared = set(case.buses)
    for s in case.stanzas:
        for key, spec in SCHEMAS[s.kind].items():
            if spec.type in ("bus", "bus0"):
                v = s.params[key]
                if spec.type == "bus0" and v == "ground":
                    continue
                if v not in declared:
                    line, col = s.where.get(key, (s.line, 1))
                    raise CaseValidationError(f"{s.kind} {s.name}: bus {v!r} is not declared", line, col)
    gens = {s.name: s for s in case.of_kind("generator")}
    for kind in ("governor", "exciter"):
        owners: dict[str, str] = {}
        for s in case.of_kind(kind):
            gname = s.params["generator"]
            line, col = s.where.get("generator", (s.line, 1))
            if gname not in gens:
                raise CaseValidationError(f"{kind} {s.name}: unknown generator {gname!r}", line, col)
            if gname in owners:
                raise CaseValidationError(f"{gname} already has {kind} {owners[gname]}", line, col)
            owners[gname] = s.name
    try:
        cfg = case.solver_config()
    except (InvalidSpec, TypeError, ValueError) as exc:
        raise CaseValidationError(f"solver: {exc}", 1, 1) from None
    breakers = {s.name for s in case.of_kind("breaker")}
    for ev in case.events:
        if ev.action in ("fault", "clear"):
            if ev.target not in declared:
                raise CaseValidationError(f"event target bus {ev.target!r} is not declared", ev.line, 1)
        elif ev.target not in breakers:
            raise CaseValidationError(f"event target breaker {ev.target!r} is not declared", ev.line, 1)
        if not 0 < ev.time <= cfg.t_end:
            raise CaseValidationError(f"event time {ev.time} outside (0, t_end={cfg.t_end}]", ev.line, 1)
        if gens and ev.time < SETTLING_TIME:
            raise CaseValidationError(
                f"event at {ev.time} s: machines need {SETTLING_TIME} s of settling before events", ev.line, 1)
    labels = set()
    for pr in case.probes:
        if pr.label in labels:
            raise CaseValidationError(f"probe label {pr.label!r} used twice", pr.line, 1)
        labels.add(pr.label)
    if case.probes:
        try:
            circuit = build_circuit(case)
        except InvalidSpec as exc:
            raise CaseValidationError(str(exc), 1, 1) from None
        nodes = set(circuit.nodes())
        branches = {p.name for p in circuit if p.has_branch}
        for pr in case.probes:
            refs = [pr.p] if pr.kind == "i" else [r for r in (pr.p, pr.n) if not is_ground(r)]
            pool = branches if pr.kind == "i" else nodes
            for r in refs:
                if r not in pool:
                    what = "branch" if pr.kind == "i" else "node"
                    raise CaseValidationError(f"probe {pr.label}: no {what} {r!r}", pr.line, 1)


# ---------------------------------------------------------------------------
# building


def _bus(v: str) -> str:
    return "0" if v == "ground" else v


def component_specs(case: CaseFile) -> list:
    """Equipment specs in declaration order (governors/exciters folded into generators)."""
    f0 = case.frequency
    gov = {s.params["generator"]: s for s in case.of_kind("governor")}
    exc = {s.params["generator"]: s for s in case.of_kind("exciter")}
    specs = []
    for s in case.stanzas:
        p = s.params
        if s.kind == "source":
            specs.append(NonIdealSourceSpec(s.name, p["bus"], p["v_ll"] * math.sqrt(2.0 / 3.0), f0,
                                            math.radians(p["angle"]), p["r"], p["l"], p["sequence"]))
        elif s.kind == "line":
            specs.append(PiLineSpec(s.name, p["from"], p["to"], p["r"], p["l"], p["c"]))
        elif s.kind == "rlc":
            specs.append(SeriesRlcSpec(s.name, p["from"], _bus(p["to"]), p["r"], p["l"], p["c"]))
        elif s.kind == "resistor":
            specs.append(SeriesRlcSpec(s.name, p["from"], _bus(p["to"]), p["r"], 0.0, 0.0))
        elif s.kind == "breaker":
            specs.append(BreakerSpec(s.name, p["from"], p["to"], p["closed"], p["r_on"], p["r_off"]))
        elif s.kind == "transformer":
            b1 = p["v1_base"] or p["v1"]
            b2 = p["v2_base"] or p["v2"]
            if p["connection"] == "dy":
                specs.append(DeltaWyeBankSpec(s.name, p["from"], p["to"], p["v1"], p["v2"] / math.sqrt(3.0),
                                              b1, b2 / math.sqrt(3.0), p["r1"], p["l1"], p["r2"], p["l2"]))
            else:
                for ph in PHASES:
                    w1 = Winding(phase_node(p["from"], ph), "0", p["v1"], b1, p["r1"], p["l1"])
                    w2 = Winding(phase_node(p["to"], ph), "0", p["v2"], b2, p["r2"], p["l2"])
                    specs.append(Transformer2WSpec(f"{s.name}.{ph}", w1, w2))
        elif s.kind == "generator":
            g = {k: v for k, v in p.items() if k not in ("angle", "init")}
            governor = exciter = None
            if s.name in gov:
                governor = IEEEG3Spec(**{k: v for k, v in gov[s.name].params.items() if k != "generator"})
            if s.name in exc:
                exciter = DC1ASpec(**{k: v for k, v in exc[s.name].params.items() if k != "generator"})
            specs.append(GeneratorSpec(s.name, frequency=f0, angle=math.radians(p["angle"]),
                                       governor=governor, exciter=exciter, **g))
    return specs


def build_circuit(case: CaseFile) -> Circuit:
    circuit = Circuit()
    for spec in component_specs(case):
        prims, _ = expand(spec)
        circuit.extend(prims)
    return circuit


def build_events(case: CaseFile) -> list[SimEvent]:
    out = []
    for ev in case.events:
        kw = {} if ev.resistance is None else {"resistance": ev.resistance}
        out.append(SimEvent(ev.time, ACTIONS[ev.action], ev.target, **kw))
    return out


def bus_probes(case: CaseFile) -> list[Probe]:
    return [Probe(f"{b}.{ph}", phase_node(b, ph)) for b in case.buses for ph in PHASES]


def build_probes(case: CaseFile) -> list[Probe]:
    """Every bus phase voltage, each machine's speed and angle, then the declared probes."""
    probes = bus_probes(case)
    for g in case.of_kind("generator"):
        probes += [Probe(f"{g.name}.omega", f"{g.name}.omega"), Probe(f"{g.name}.delta", f"{g.name}.delta")]
    taken = {p.label for p in probes}
    for pr in case.probes:
        if pr.label not in taken:
            probes.append(Probe(pr.label, pr.p, pr.n, pr.kind))
    return probes


@dataclass
class Scenario:
    case: CaseFile
    circuit: Circuit
    events: list[SimEvent]
    config: SolverConfig
    probes: list[Probe]


def resolve_operating_points(case: CaseFile) -> CaseFile:
    """Fill ``q``/``angle`` of generators marked ``init = steady_state``."""
    if not any(g.params["init"] == "steady_state" for g in case.of_kind("generator")):
        return case
    from .phasor import with_operating_points

    return with_operating_points(case)


def build_scenario(case: CaseFile, **solver_overrides) -> Scenario:
    try:
        case = resolve_operating_points(case)
        circuit = build_circuit(case)
        config = case.solver_config(**solver_overrides)
    except InvalidSpec as exc:
        raise CaseValidationError(str(exc), 1, 1) from None
    # a shortened horizon simply drops the events beyond it
    events = [e for e in build_events(case) if e.time <= config.t_end]
    return Scenario(case, circuit, events, config, build_probes(case))


def load_case(path) -> CaseFile:
    with open(path, "rb") as fh:
        return parse_case(fh.read())


# ---------------------------------------------------------------------------
# serialization


def _fmt(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_case(case: CaseFile) -> str:
    """Canonical text: fixed section order, every key written, shortest round-trip floats."""
    out = ["[system]"]
    out += [f"{k} = {_fmt(case.system[k])}" for k in SYSTEM_KEYS if case.system.get(k, "") != ""]
    out += ["", "[buses]"]
    out += [" ".join(case.buses)] if case.buses else []
    out += ["", "[solver]"]
    out += [f"{k} = {_fmt(case.solver[k])}" for k in SOLVER_KEYS]
    for s in case.stanzas:
        out += ["", f"[{s.kind} {s.name}]"]
        out += [f"{k} = {_fmt(s.params[k])}" for k in SCHEMAS[s.kind]]
    if case.events:
        out += ["", "[events]"]
        for ev in case.events:
            extra = f" resistance={_fmt(ev.resistance)}" if ev.resistance is not None else ""
            out.append(f"{_fmt(ev.time)} {ev.action} {ev.target}{extra}")
    if case.probes:
        out += ["", "[probes]"]
        for pr in case.probes:
            refs = pr.p if pr.kind == "i" or is_ground(pr.n) else f"{pr.p} {pr.n}"
            out.append(f"{pr.label} = {pr.kind} {refs}")
    return "\n".join(out) + "\n"


def emit_netlist(circuit: Circuit) -> str:
    """SPICE-like listing of the expanded primitives."""
    return "\n".join(netlist_line(p) for p in circuit) + "\n"
