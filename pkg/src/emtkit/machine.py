"""Park transform and the 6th-order synchronous generator as a circuit device.

Park matrix (rows d, q, 0)::

    K(θ) = √(2/3) [[cos θ,  cos(θ - 2π/3),  cos(θ + 2π/3)],
                   [sin θ,  sin(θ - 2π/3),  sin(θ + 2π/3)],
                   [1/√2,   1/√2,           1/√2        ]]

With the ``+sin`` second row the q component produced by :func:`park` lags
the d axis by 90°.  The machine equations below use the common convention
where q leads d, so inside the generator ``q = -park(...)[1]``.

The rotor angle ``δ`` locates the d axis: ``θ = ω_s t + δ``.  Per-unit dq
quantities use the line-to-line rms voltage as the voltage base and
``S_base / V_base`` as the current base, which makes ``v_d i_d + v_q i_q``
the per-unit three-phase power.

The generator is realized with behavioral sources: each differential state
is a capacitor (capacitance equal to its time constant) charged by a
behavioral current, the stator algebra and the Park projections are
behavioral voltages, and the bus sees three behavioral current injections.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .circuit import BehavioralCurrent, BehavioralVoltage, Capacitor, Primitive, VoltageSource
from .components import PHASES, NodeAllocator, expand, phase_node
from .controls import DC1ASpec, IEEEG3Spec
from .errors import InvalidSpec, NotInitialized
from .expr import TIME, Expr, V, cos, sin, sqrt

SQ23 = math.sqrt(2.0 / 3.0)
SHIFT = 2.0 * math.pi / 3.0
PHASE_OFFSET = (0.0, -SHIFT, SHIFT)


def park_matrix(theta: float) -> np.ndarray:
    rows = [[math.cos(theta + o) for o in PHASE_OFFSET],
            [math.sin(theta + o) for o in PHASE_OFFSET],
            [1.0 / math.sqrt(2.0)] * 3]
    return SQ23 * np.array(rows)


def park(theta: float, x_abc) -> np.ndarray:
    """``K(θ) · x_abc``."""
    return park_matrix(theta) @ np.asarray(x_abc, dtype=float)


def inverse_park(theta: float, x_dq0) -> np.ndarray:
    """``K(θ)ᵀ · x_dq0``; ``K`` is orthogonal so this inverts :func:`park`."""
    return park_matrix(theta).T @ np.asarray(x_dq0, dtype=float)


@dataclass(frozen=True)
class GeneratorSpec:
    """Round-rotor synchronous generator with two rotor circuits per axis.

    Reactances and resistance are per unit on ``s_base``/``v_base``
    (line-to-line rms volts); time constants in seconds.  ``p``, ``q``, ``v``
    and ``angle`` (radians, phase-a cosine reference) give the terminal
    operating point used to back-solve the initial states.
    """

    name: str
    bus: str
    s_base: float
    v_base: float
    h: float
    xd: float
    xq: float
    xdp: float
    xqp: float
    xdpp: float
    xqpp: float
    td0p: float
    tq0p: float
    td0pp: float
    tq0pp: float
    p: float
    q: float = 0.0
    v: float = 1.0
    angle: float = 0.0
    ra: float = 0.0
    d: float = 0.0
    frequency: float = 50.0
    governor: Optional[IEEEG3Spec] = None
    exciter: Optional[DC1ASpec] = None

    def validate(self):
        for k in ("s_base", "v_base", "h", "td0p", "tq0p", "td0pp", "tq0pp", "frequency", "v"):
            if not getattr(self, k) > 0:
                raise InvalidSpec(f"{self.name}: {k} must be > 0")
        if self.ra < 0 or self.d < 0:
            raise InvalidSpec(f"{self.name}: ra and d must be >= 0")
        if not 0 < self.xdpp <= self.xdp <= self.xd:
            raise InvalidSpec(f"{self.name}: need 0 < X''d <= X'd <= Xd")
        if not 0 < self.xqpp <= self.xqp <= self.xq:
            raise InvalidSpec(f"{self.name}: need 0 < X''q <= X'q <= Xq")

    @property
    def omega_s(self) -> float:
        return 2.0 * math.pi * self.frequency

    @property
    def i_base(self) -> float:
        """dq-axis current base in amperes."""
        return self.s_base / self.v_base


@dataclass(frozen=True)
class GeneratorState:
    """The six differential states plus the two inputs, all per unit."""

    delta: float
    omega: float
    eqp: float
    edp: float
    eqpp: float
    edpp: float
    efd: float
    pm: float
    initialized: bool = False

    def perturbed(self, **changes) -> "GeneratorState":
        return replace(self, **changes)


def stator_currents(g: GeneratorSpec, s: GeneratorState, vd: float, vq: float) -> tuple[float, float]:
    """Solve ``E''q - vq = Ra iq + X''d id`` and ``E''d - vd = Ra id - X''q iq``."""
    a, b = s.eqpp - vq, s.edpp - vd
    det = g.ra * g.ra + g.xdpp * g.xqpp
    return (g.ra * b + g.xqpp * a) / det, (g.ra * a - g.xdpp * b) / det


def electrical_torque(g: GeneratorSpec, s: GeneratorState, i_d: float, i_q: float) -> float:
    return s.eqpp * i_q + s.edpp * i_d + (g.xdpp - g.xqpp) * i_d * i_q


def initialize_generator(g: GeneratorSpec) -> GeneratorState:
    """Steady state delivering ``p + jq`` at terminal voltage ``v∠angle``."""
    g.validate()
    vt = cmath.rect(g.v, g.angle)
    it = ((g.p + 1j * g.q) / vt).conjugate()
    eq_axis = vt + complex(g.ra, g.xq) * it
    delta = cmath.phase(eq_axis) - math.pi / 2.0
    rot = cmath.rect(1.0, -delta)
    vdq, idq = vt * rot, it * rot
    vd, vq, i_d, i_q = vdq.real, vdq.imag, idq.real, idq.imag
    eqpp = vq + g.ra * i_q + g.xdpp * i_d
    edpp = vd + g.ra * i_d - g.xqpp * i_q
    edp = (g.xq - g.xqp) * i_q
    eqp = eqpp + (g.xdp - g.xdpp) * i_d
    efd = eqp + (g.xd - g.xdp) * i_d
    pm = eqpp * i_q + edpp * i_d + (g.xdpp - g.xqpp) * i_d * i_q
    return GeneratorState(delta, 1.0, eqp, edp, eqpp, edpp, efd, pm, initialized=True)


def derivatives(g: GeneratorSpec, s: GeneratorState, vd: float, vq: float) -> dict[str, float]:
    """Right-hand sides of the six state equations (``d/dt``, per second)."""
    i_d, i_q = stator_currents(g, s, vd, vq)
    te = electrical_torque(g, s, i_d, i_q)
    return {
        "delta": g.omega_s * (s.omega - 1.0),
        "omega": (s.pm / s.omega - te - g.d * (s.omega - 1.0)) / (2.0 * g.h),
        "eqp": (s.efd - s.eqp - (g.xd - g.xdp) * i_d) / g.td0p,
        "edp": (-s.edp + (g.xq - g.xqp) * i_q) / g.tq0p,
        "eqpp": (s.eqp - s.eqpp - (g.xdp - g.xdpp) * i_d) / g.td0pp,
        "edpp": (s.edp - s.edpp + (g.xqp - g.xqpp) * i_q) / g.tq0pp,
    }


def generator_interface(g: GeneratorSpec, state: GeneratorState, v_abc, t: float) -> np.ndarray:
    """Phase currents (A) the machine injects into its bus for bus voltages ``v_abc`` (V)."""
    if state is None or not state.initialized:
        raise NotInitialized(f"{g.name}: generator state has not been initialized")
    theta = g.omega_s * t + state.delta
    d, qp, _ = park(theta, v_abc) / g.v_base
    i_d, i_q = stator_currents(g, state, d, -qp)
    return inverse_park(theta, (i_d, -i_q, 0.0)) * g.i_base


def generator_nodes(name: str) -> dict[str, str]:
    keys = ("delta", "omega", "eqp", "edp", "eqpp", "edpp", "vd", "vq", "id", "iq", "te", "vt", "pm", "efd")
    return {k: f"{name}.{k}" for k in keys}


def expand_generator(g: GeneratorSpec, state: GeneratorState | None = None,
                     pm: Callable[[float], float] | float | None = None,
                     efd: Callable[[float], float] | float | None = None,
                     alloc: NodeAllocator | None = None) -> tuple[list[Primitive], list[str]]:
    """Primitives for ``g``, its governor and its exciter.

    ``state`` defaults to :func:`initialize_generator`.  Without a governor
    (exciter) the mechanical power (field voltage) is the source ``pm``
    (``efd``), constant at the initial value unless given.
    """
    g.validate()
    state = state or initialize_generator(g)
    if not state.initialized:
        raise NotInitialized(f"{g.name}: generator state has not been initialized")
    alloc = alloc or NodeAllocator(g.name)
    n = generator_nodes(g.name)
    for k in n:
        alloc.new(k)
    v = {k: V(node) for k, node in n.items()}
    theta = g.omega_s * TIME + v["delta"]
    bus = [V(phase_node(g.bus, ph)) for ph in PHASES]
    c = [cos(theta + o) for o in PHASE_OFFSET]
    s = [sin(theta + o) for o in PHASE_OFFSET]
    k = SQ23 / g.v_base
    d_expr: Expr = k * (c[0] * bus[0] + c[1] * bus[1] + c[2] * bus[2])
    q_expr: Expr = -k * (s[0] * bus[0] + s[1] * bus[1] + s[2] * bus[2])

    det = g.ra * g.ra + g.xdpp * g.xqpp
    a = v["eqpp"] - v["vq"]
    b = v["edpp"] - v["vd"]
    prims: list[Primitive] = [
        BehavioralVoltage(f"{g.name}.Bvd", n["vd"], "0", d_expr),
        BehavioralVoltage(f"{g.name}.Bvq", n["vq"], "0", q_expr),
        BehavioralVoltage(f"{g.name}.Bid", n["id"], "0", (g.ra * b + g.xqpp * a) / det),
        BehavioralVoltage(f"{g.name}.Biq", n["iq"], "0", (g.ra * a - g.xdpp * b) / det),
        BehavioralVoltage(f"{g.name}.Bte", n["te"], "0",
                          v["eqpp"] * v["iq"] + v["edpp"] * v["id"] + (g.xdpp - g.xqpp) * v["id"] * v["iq"]),
        BehavioralVoltage(f"{g.name}.Bvt", n["vt"], "0", sqrt(v["vd"] * v["vd"] + v["vq"] * v["vq"])),
    ]

    def integrator(key, tau, ic, rate):
        prims.append(Capacitor(f"{g.name}.C{key}", n[key], "0", tau, initial_voltage=ic))
        prims.append(BehavioralCurrent(f"{g.name}.G{key}", "0", n[key], rate))

    integrator("delta", 1.0, state.delta, g.omega_s * (v["omega"] - 1.0))
    integrator("omega", 2.0 * g.h, state.omega,
               v["pm"] / v["omega"] - v["te"] - g.d * (v["omega"] - 1.0))
    integrator("eqp", g.td0p, state.eqp, v["efd"] - v["eqp"] - (g.xd - g.xdp) * v["id"])
    integrator("edp", g.tq0p, state.edp, (g.xq - g.xqp) * v["iq"] - v["edp"])
    integrator("eqpp", g.td0pp, state.eqpp, v["eqp"] - v["eqpp"] - (g.xdp - g.xdpp) * v["id"])
    integrator("edpp", g.tq0pp, state.edpp, v["edp"] - v["edpp"] + (g.xqp - g.xqpp) * v["iq"])

    for ph, cc, ss in zip(PHASES, c, s):
        inj = (g.i_base * SQ23) * (cc * v["id"] - ss * v["iq"])
        prims.append(BehavioralCurrent(f"{g.name}.I{ph}", "0", phase_node(g.bus, ph), inj))

    if g.governor is not None:
        gp, out = g.governor.build(f"{g.name}.gov", n["omega"], state.pm)
        prims += gp
        prims.append(BehavioralVoltage(f"{g.name}.Bpm", n["pm"], "0", V(out)))
    else:
        prims.append(VoltageSource(f"{g.name}.Vpm", n["pm"], "0", state.pm if pm is None else pm))
    if g.exciter is not None:
        vt0 = math.hypot(*_vdq(state, g))
        ep, out = g.exciter.build(f"{g.name}.exc", n["vt"], state.efd, vt0)
        prims += ep
        prims.append(BehavioralVoltage(f"{g.name}.Befd", n["efd"], "0", V(out)))
    else:
        prims.append(VoltageSource(f"{g.name}.Vefd", n["efd"], "0", state.efd if efd is None else efd))
    return prims, list(alloc.allocated)


def _vdq(state: GeneratorState, g: GeneratorSpec) -> tuple[float, float]:
    """Terminal dq voltage implied by ``state`` at the operating point of ``g``."""
    vdq = cmath.rect(g.v, g.angle - state.delta)
    return vdq.real, vdq.imag


@expand.register
def _(spec: GeneratorSpec, alloc=None):
    return expand_generator(spec, alloc=alloc)
