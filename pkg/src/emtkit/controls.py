"""Control blocks realized as circuits, and the IEEEG3 / DC1A models built from them.

Every signal is the voltage of a node (per-unit values as volts).  A dynamic
block stores its state on a capacitor whose capacitance is the block's time
constant, charged by a behavioral current source, so ``dV/dt = f(u) / C``.
Blocks therefore integrate with exactly the same trapezoidal rule as the
network they are attached to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

from .circuit import (
    BehavioralCurrent,
    BehavioralVoltage,
    Capacitor,
    Circuit,
    Primitive,
    VoltageSource,
)
from .errors import InvalidSpec
from .expr import Const, Expr, V, clamp, exp, maximum


# ---------------------------------------------------------------------------
# saturation


def saturation_se(efd: float, a_ex: float, b_ex: float, form: str = "exponential") -> float:
    """Exciter saturation function S_E(E_FD).

    ``exponential``: ``a_ex * exp(b_ex * efd)``.
    ``quadratic``: ``b_ex * (efd - a_ex)**2 / efd`` above ``a_ex``, else 0.
    """
    if efd < 0:
        raise ValueError(f"E_FD must be >= 0, got {efd}")
    if form == "exponential":
        return a_ex * math.exp(b_ex * efd)
    if form == "quadratic":
        return b_ex * (efd - a_ex) ** 2 / efd if efd > a_ex else 0.0
    raise ValueError(f"unknown saturation form {form!r}")


def saturation_expr(u: Expr, a_ex: float, b_ex: float, form: str = "exponential") -> Expr:
    """``S_E(u) * u`` as an expression (the voltage subtracted in the exciter loop)."""
    if form == "exponential":
        if a_ex == 0.0:
            return Const(0.0)
        return a_ex * exp(b_ex * u) * u
    if form == "quadratic":
        m = maximum(u - a_ex, 0.0)
        return b_ex * m * m
    raise ValueError(f"unknown saturation form {form!r}")


# ---------------------------------------------------------------------------
# blocks


def _positive(name, **vals):
    for k, v in vals.items():
        if not v > 0:
            raise InvalidSpec(f"{name}: {k} must be > 0, got {v}")


@dataclass(frozen=True)
class Gain:
    k: float

    def output(self, u0: float) -> float:
        return self.k * u0

    def primitives(self, out, inp, u0=0.0, y0=None):
        return [BehavioralVoltage(f"{out}.B", out, "0", self.k * V(inp))]


@dataclass(frozen=True)
class Adder:
    """Signed sum of the inputs plus a constant ``bias``."""

    signs: tuple[float, ...]
    bias: float = 0.0

    def output(self, u0: Sequence[float]) -> float:
        return self.bias + sum(s * u for s, u in zip(self.signs, u0))

    def primitives(self, out, inp, u0=None, y0=None):
        if len(inp) != len(self.signs):
            raise InvalidSpec(f"{out}: adder has {len(self.signs)} signs but {len(inp)} inputs")
        e: Expr = Const(self.bias)
        for s, i in zip(self.signs, inp):
            e = e + s * V(i)
        return [BehavioralVoltage(f"{out}.B", out, "0", e)]


@dataclass(frozen=True)
class Integrator:
    """``tau * dy/dt = u``; the capacitance is ``tau``."""

    tau: float = 1.0

    def output(self, u0: float) -> float:
        if u0 != 0.0:
            raise InvalidSpec("an integrator has no equilibrium for non-zero input")
        return 0.0

    def primitives(self, out, inp, u0=0.0, y0=0.0):
        _positive("Integrator", tau=self.tau)
        return [Capacitor(f"{out}.C", out, "0", self.tau, initial_voltage=0.0 if y0 is None else y0),
                BehavioralCurrent(f"{out}.G", "0", out, V(inp))]


@dataclass(frozen=True)
class LowPass:
    """``K / (1 + sT)``."""

    k: float
    t: float

    def output(self, u0: float) -> float:
        return self.k * u0

    def primitives(self, out, inp, u0=0.0, y0=None):
        _positive("LowPass", T=self.t)
        y0 = self.k * u0 if y0 is None else y0
        return [Capacitor(f"{out}.C", out, "0", self.t, initial_voltage=y0),
                BehavioralCurrent(f"{out}.G", "0", out, self.k * V(inp) - V(out))]


@dataclass(frozen=True)
class HighPass:
    """``K sT / (1 + sT)``, computed as ``K u - x`` with ``T dx/dt = K u - x``."""

    k: float
    t: float

    def output(self, u0: float) -> float:
        return 0.0

    def primitives(self, out, inp, u0=0.0, y0=None):
        _positive("HighPass", T=self.t)
        x = f"{out}.x"
        return [Capacitor(f"{x}.C", x, "0", self.t, initial_voltage=self.k * u0),
                BehavioralCurrent(f"{x}.G", "0", x, self.k * V(inp) - V(x)),
                BehavioralVoltage(f"{out}.B", out, "0", self.k * V(inp) - V(x))]


@dataclass(frozen=True)
class LeadLag:
    """``(1 + sT1) / (1 + sT2)`` as the sum of ``LowPass(1, T2)`` and
    ``HighPass(T1/T2, T2)``.  ``T1`` may be zero or negative."""

    t1: float
    t2: float

    def output(self, u0: float) -> float:
        return u0

    def parts(self) -> tuple[LowPass, HighPass]:
        return LowPass(1.0, self.t2), HighPass(self.t1 / self.t2, self.t2)

    def primitives(self, out, inp, u0=0.0, y0=None):
        _positive("LeadLag", T2=self.t2)
        lp, hp = self.parts()
        a, b = f"{out}.lp", f"{out}.hp"
        return (lp.primitives(a, inp, u0) + hp.primitives(b, inp, u0)
                + Adder((1.0, 1.0)).primitives(out, (a, b)))


@dataclass(frozen=True)
class LeadLagDirect:
    """Single-state realization of ``(1 + sT1) / (1 + sT2)``:
    ``T2 dx/dt = u - x``, ``y = x + (T1/T2)(u - x)``."""

    t1: float
    t2: float

    def output(self, u0: float) -> float:
        return u0

    def primitives(self, out, inp, u0=0.0, y0=None):
        _positive("LeadLag", T2=self.t2)
        x = f"{out}.x"
        r = self.t1 / self.t2
        return [Capacitor(f"{x}.C", x, "0", self.t2, initial_voltage=u0),
                BehavioralCurrent(f"{x}.G", "0", x, V(inp) - V(x)),
                BehavioralVoltage(f"{out}.B", out, "0", V(x) + r * (V(inp) - V(x)))]


@dataclass(frozen=True)
class Limiter:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InvalidSpec(f"Limiter needs min < max, got {self.lo}, {self.hi}")

    def output(self, u0: float) -> float:
        return min(max(u0, self.lo), self.hi)

    def primitives(self, out, inp, u0=0.0, y0=None):
        return [BehavioralVoltage(f"{out}.B", out, "0", clamp(V(inp), self.lo, self.hi))]


@dataclass(frozen=True)
class Saturation:
    """Output ``S_E(u) * u``."""

    a: float
    b: float
    form: str = "exponential"

    def output(self, u0: float) -> float:
        return saturation_se(max(u0, 0.0), self.a, self.b, self.form) * u0

    def primitives(self, out, inp, u0=0.0, y0=None):
        return [BehavioralVoltage(f"{out}.B", out, "0", saturation_expr(V(inp), self.a, self.b, self.form))]


ControlBlock = Union[Gain, Adder, Integrator, LowPass, HighPass, LeadLag, LeadLagDirect, Limiter, Saturation]
DYNAMIC = (Integrator, LowPass, HighPass, LeadLag, LeadLagDirect)


class Diagram:
    """Collects blocks wired by node name under a common prefix."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self.primitives: list[Primitive] = []

    def node(self, signal: str) -> str:
        return f"{self.prefix}.{signal}"

    def add(self, block, out: str, inp, u0=0.0, y0=None) -> str:
        node = self.node(out)
        self.primitives += block.primitives(node, inp, u0, y0)
        return node

    def constant(self, out: str, value: float) -> str:
        node = self.node(out)
        self.primitives.append(VoltageSource(f"{node}.V", node, "0", value))
        return node


# ---------------------------------------------------------------------------
# single-block simulation


class _Held:
    """Piecewise-constant input whose value is read by the driving source."""

    def __init__(self, value: float):
        self.value = value

    def __call__(self, t: float) -> float:
        return self.value


class BlockSim:
    """Runs one block, driven by a controllable input, in its own circuit."""

    def __init__(self, block, u0: float = 0.0, y0: float | None = None, u: float | None = None):
        from .solver import SolverConfig, TransientEngine

        self.block = block
        self.input = _Held(u0 if u is None else u)
        prims: list[Primitive] = [VoltageSource("U", "u", "0", self.input)]
        inputs = ("u",) if not isinstance(block, Adder) else ("u",) * len(block.signs)
        inp = inputs if isinstance(block, Adder) else "u"
        prims += block.primitives("y", inp, u0, y0)
        self.circuit = Circuit(prims)
        self.engine = TransientEngine(self.circuit, SolverConfig(t_end=1e30, dt_max=1e30, dt_init=1e-9, dt_min=1e-12))
        self.engine.initialize()
        self.out = self.engine.layout.row("y")

    @property
    def t(self) -> float:
        return self.engine.t

    @property
    def output(self) -> float:
        return float(self.engine.x[self.out])

    def step(self, u: float, dt: float) -> float:
        """Advance by ``dt`` with the input at ``u`` at the end of the step."""
        if not dt > 0:
            raise ValueError("dt must be > 0")
        self.input.value = u
        res = self.engine.integrate_step(dt, check_lte=False)
        if not res.accepted:  # pragma: no cover - Newton failure on a single block
            raise RuntimeError(res.reason)
        return self.output


def step_block(block, u: float, dt: float, steps: int = 1, u0: float = 0.0) -> float:
    """Output of ``block`` after ``steps`` trapezoidal steps of input ``u``,
    starting from equilibrium at input ``u0`` with ``u`` applied at ``t = 0+``."""
    sim = BlockSim(block, u0=u0, u=u)
    for _ in range(steps):
        sim.step(u, dt)
    return sim.output


# ---------------------------------------------------------------------------
# governor and exciter


@dataclass(frozen=True)
class IEEEG3Spec:
    """IEEEG3 hydro governor parameters (per unit on the machine base, seconds).

    All fields are required; there are no defaults.
    """

    tg: float
    tp: float
    uo: float
    uc: float
    pmax: float
    pmin: float
    sigma: float
    delta: float
    tr: float
    tw: float
    a11: float
    a13: float
    a21: float
    a23: float

    def validate(self):
        _positive("IEEEG3", TG=self.tg, TP=self.tp, TR=self.tr, TW=self.tw, a11=self.a11, a23=self.a23)
        if not self.uc < self.uo:
            raise InvalidSpec("IEEEG3: need UC < UO")
        if not self.pmin < self.pmax:
            raise InvalidSpec("IEEEG3: need PMIN < PMAX")

    def water_column(self) -> LeadLag:
        t2 = self.a11 * self.tw
        t1 = (self.a11 * self.a23 - self.a13 * self.a21) * self.tw / self.a23
        return LeadLag(t1, t2)

    def build(self, prefix: str, speed: str, pm0: float) -> tuple[list[Primitive], str]:
        """Blocks from rotor speed node ``speed`` (pu) to mechanical power; returns
        the primitives and the output node.  ``pm0`` sets the initial gate."""
        self.validate()
        g0 = pm0 / self.a23
        if not self.pmin <= g0 <= self.pmax:
            raise InvalidSpec(f"IEEEG3: initial gate {g0} outside [{self.pmin}, {self.pmax}]")
        d = Diagram(prefix)
        gate, tdroop = d.node("gate"), d.node("tdroop")
        # e = P_ref - (w - 1) - sigma*G - transient droop, P_ref = sigma*G0
        d.add(Adder((-1.0, -self.sigma, -1.0), bias=1.0 + self.sigma * g0), "err", (speed, gate, tdroop))
        d.add(LowPass(1.0 / self.tg, self.tp), "pilot", d.node("err"), 0.0)
        d.add(Limiter(self.uc, self.uo), "rate", d.node("pilot"))
        d.add(Integrator(1.0), "graw", d.node("rate"), y0=g0)
        d.add(Limiter(self.pmin, self.pmax), "gate", d.node("graw"))
        d.add(HighPass(self.delta, self.tr), "tdroop", gate, g0)
        d.add(self.water_column(), "water", gate, g0)
        pm = d.add(Gain(self.a23), "pm", d.node("water"))
        return d.primitives, pm


@dataclass(frozen=True)
class DC1ASpec:
    """IEEE DC1A exciter parameters (per unit, seconds).

    ``tb = 0`` bypasses the lead-lag; ``tr = 0`` bypasses the voltage transducer.
    """

    ka: float
    ta: float
    ke: float
    te: float
    kf: float
    tf: float
    vrmax: float
    vrmin: float
    a_ex: float = 0.0
    b_ex: float = 0.0
    tr: float = 0.0
    tb: float = 0.0
    tc: float = 0.0
    saturation: str = "exponential"

    def validate(self):
        _positive("DC1A", KA=self.ka, TA=self.ta, TE=self.te, TF=self.tf)
        if not self.vrmin < self.vrmax:
            raise InvalidSpec("DC1A: need VRMIN < VRMAX")
        if self.tr < 0 or self.tb < 0 or self.tc < 0:
            raise InvalidSpec("DC1A: time constants must be >= 0")
        if self.saturation not in ("exponential", "quadratic"):
            raise InvalidSpec(f"DC1A: unknown saturation form {self.saturation!r}")

    def initial(self, efd0: float, vc0: float) -> dict[str, float]:
        """Steady-state signals for field voltage ``efd0`` at terminal voltage ``vc0``."""
        vx = saturation_se(efd0, self.a_ex, self.b_ex, self.saturation) * efd0
        vr = self.ke * efd0 + vx
        if not self.vrmin <= vr <= self.vrmax:
            raise InvalidSpec(f"DC1A: initial regulator output {vr} outside [{self.vrmin}, {self.vrmax}]")
        return {"vr": vr, "vx": vx, "vref": vc0 + vr / self.ka}

    def build(self, prefix: str, vt: str, efd0: float, vc0: float) -> tuple[list[Primitive], str]:
        """Blocks from terminal-voltage magnitude node ``vt`` to field voltage."""
        self.validate()
        init = self.initial(efd0, vc0)
        d = Diagram(prefix)
        vc = d.add(LowPass(1.0, self.tr), "vc", vt, vc0) if self.tr > 0 else vt
        efd, vf = d.node("efd"), d.node("vf")
        d.add(Adder((-1.0, -1.0), bias=init["vref"]), "err", (vc, vf))
        err0 = init["vr"] / self.ka
        if self.tb > 0:
            d.add(LeadLag(self.tc, self.tb), "ll", d.node("err"), err0)
            reg_in = d.node("ll")
        else:
            reg_in = d.node("err")
        d.add(LowPass(self.ka, self.ta), "vra", reg_in, err0)
        d.add(Limiter(self.vrmin, self.vrmax), "vr", d.node("vra"))
        d.add(Saturation(self.a_ex, self.b_ex, self.saturation), "vx", efd)
        d.add(Adder((1.0, -self.ke, -1.0)), "efd_in", (d.node("vr"), efd, d.node("vx")))
        d.add(Integrator(self.te), "efd", d.node("efd_in"), y0=efd0)
        d.add(HighPass(self.kf / self.tf, self.tf), "vf", efd, efd0)
        return d.primitives, efd
