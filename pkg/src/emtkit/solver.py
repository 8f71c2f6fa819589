"""Transient engine: operating point, Newton solves, trapezoidal stepping,
LTE-driven step control and event breakpoints."""

from __future__ import annotations

import logging
import math
import time as _time
import warnings
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .circuit import (
    BEHAVIORAL,
    Capacitor,
    Circuit,
    CurrentSource,
    IntegratorCompanion,
    Inductor,
    Layout,
    MnaSystem,
    Switch,
    VoltageSource,
    is_ground,
    stamp,
)
from .errors import NonConvergence, SimulationError, SingularJacobian, StepTooSmall
from .expr import compile_exprs

log = logging.getLogger(__name__)

# Systems up to this many unknowns are factorized with dense LAPACK LU.
DENSE_LIMIT = 400
# Conductance from every node to ground during the operating-point solve.
GMIN = 1e-12
GMIN_POLISH_RTOL = 1e-6
# Relative pivot size below which the Jacobian is reported singular.
PIVOT_TOL = 1e-14
# Length of the backward-Euler micro-step used to re-initialize after events.
REINIT_FRACTION = 1e-6
REINIT_RELAX_STEPS = 3
DEFAULT_FAULT_RESISTANCE = 1e-4
PHASES = ("a", "b", "c")


# ---------------------------------------------------------------------------
# configuration and events


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping parameters, all in seconds except the tolerances.

    ``lte_tol`` bounds the local truncation error of every reactive state
    relative to the largest magnitude that state has reached so far (floored
    at ``lte_abstol``).  ``newton_tol`` bounds every residual row relative to
    the magnitude of the terms in that row (plus one unit).
    ``fixed_dt`` switches step control off.  ``dt_levels > 0`` rounds
    every adapted step down to ``dt_max * 2**(-k / dt_levels)`` so that
    step sizes, and therefore matrix factorizations, repeat.
    ``gear_window > 0`` integrates that many seconds after every event with
    the second-order Gear formula (BDF2), which damps the ringing of modes
    too fast for the step size; the first step after the event is then a
    backward-Euler step.  ``euler_restart`` alone makes only that first step
    backward Euler.
    """

    t_end: float = 1.0
    dt_init: float = 20e-6
    dt_min: float = 1e-9
    dt_max: float = 2e-3
    lte_tol: float = 1e-3
    lte_abstol: float = 1e-6
    newton_tol: float = 1e-9
    newton_max_iter: int = 50
    step_growth_factor: float = 2.0
    step_shrink_factor: float = 0.25
    safety: float = 0.75
    fixed_dt: float | None = None
    reuse_jacobian: bool = True
    euler_restart: bool = False
    dt_levels: int = 0
    gear_window: float = 0.0

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError(f"need 0 < dt_min <= dt_init <= dt_max, got {self.dt_min}, {self.dt_init}, {self.dt_max}")
        if not (self.lte_tol > 0 and self.newton_tol > 0 and self.lte_abstol > 0):
            raise ValueError("tolerances must be > 0")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be > 0, got {self.t_end}")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")
        if not self.step_growth_factor >= 1.0 or not 0 < self.step_shrink_factor < 1.0:
            raise ValueError("need step_growth_factor >= 1 and 0 < step_shrink_factor < 1")
        if self.fixed_dt is not None and not self.fixed_dt > 0:
            raise ValueError("fixed_dt must be > 0")
        if self.dt_levels < 0:
            raise ValueError("dt_levels must be >= 0")
        if not self.gear_window >= 0:
            raise ValueError("gear_window must be >= 0")


class Action(str, Enum):
    SWITCH_CLOSE = "switch_close"
    SWITCH_OPEN = "switch_open"
    APPLY_FAULT = "apply_fault"
    CLEAR_FAULT = "clear_fault"


@dataclass(frozen=True)
class SimEvent:
    time: float
    action: Action
    target: str
    resistance: float = DEFAULT_FAULT_RESISTANCE

    def __post_init__(self):
        object.__setattr__(self, "action", Action(self.action))
        if not math.isfinite(self.time) or self.time < 0:
            raise ValueError(f"event time must be finite and >= 0, got {self.time}")
        if not self.resistance > 0:
            raise ValueError("fault resistance must be > 0")


def fault_switch_name(bus: str, phase: str | None) -> str:
    return f"FAULT.{bus}" + (f".{phase}" if phase else "")


def validate_events(events: Sequence[SimEvent], t_end: float) -> list[SimEvent]:
    evs = sorted(events, key=lambda e: e.time)
    applied: dict[str, float] = {}
    for e in evs:
        if e.time > t_end:
            raise ValueError(f"event at {e.time} s lies beyond t_end={t_end} s")
        if e.action is Action.APPLY_FAULT:
            applied[e.target] = e.time
        elif e.action is Action.CLEAR_FAULT and e.target not in applied:
            raise ValueError(f"fault at {e.target!r} is cleared at {e.time} s before being applied")
    return evs


def add_fault_switches(circuit: Circuit, events: Iterable[SimEvent]) -> Circuit:
    """Add (open) per-phase fault switches for every faulted bus.

    A three-phase bus ``X`` owns nodes ``X.a``, ``X.b``, ``X.c``; a plain node
    name is faulted as a single phase.  The switch's on-resistance is the
    fault resistance.
    """
    nodes = set(circuit.nodes())
    resist: dict[str, float] = {}
    for e in events:
        if e.action is Action.APPLY_FAULT:
            if e.target in resist and resist[e.target] != e.resistance:
                raise ValueError(f"conflicting fault resistances for bus {e.target!r}")
            resist[e.target] = e.resistance
    for bus, r in resist.items():
        phases = [ph for ph in PHASES if f"{bus}.{ph}" in nodes]
        if phases:
            for ph in phases:
                name = fault_switch_name(bus, ph)
                if name not in circuit:
                    circuit.add(Switch(name, f"{bus}.{ph}", "0", r_on=r, closed=False))
        elif bus in nodes:
            name = fault_switch_name(bus, None)
            if name not in circuit:
                circuit.add(Switch(name, bus, "0", r_on=r, closed=False))
        else:
            raise ValueError(f"faulted bus {bus!r} does not exist")
    return circuit


# ---------------------------------------------------------------------------
# results


@dataclass
class StepResult:
    accepted: bool
    solution: np.ndarray
    lte_estimate: float
    newton_iterations: int
    dt_used: float
    reason: str = ""


@dataclass
class Probe:
    label: str
    p: str
    n: str = "0"
    kind: str = "v"  # "v" node/differential voltage, "i" branch current


@dataclass
class TransientResult:
    """Probed waveforms on the accepted time grid plus step statistics."""

    time: np.ndarray
    values: dict[str, np.ndarray]
    dt: np.ndarray
    accepted_steps: int
    rejected_steps: int
    newton_iterations: int
    wall_time: float
    event_times: list[float]
    lte: np.ndarray
    max_residual: float

    def waveform(self, label: str):
        from .analysis import Waveform

        return Waveform(self.time, self.values[label], label)

    def waveforms(self):
        return [self.waveform(k) for k in self.values]

    def dt_trace(self):
        from .analysis import Waveform

        return Waveform(self.time[1:], self.dt, "dt")


# ---------------------------------------------------------------------------
# linear algebra helpers


class _Factor:
    def __init__(self, J, labels):
        self.dense = not sp.issparse(J)
        if self.dense:
            # rows are equilibrated so the pivot test does not depend on units
            rmax = np.max(np.abs(J), axis=1) if J.size else np.ones(0)
            self.rs = 1.0 / np.where(rmax > 0, rmax, 1.0)
            with warnings.catch_warnings():
                # zero pivots are reported below with the unknown's name
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu, piv = sla.lu_factor(J * self.rs[:, None], check_finite=False)
            d = np.abs(np.diag(lu))
            bad = np.flatnonzero(~np.isfinite(d) | (d <= PIVOT_TOL) | (rmax == 0))
            if bad.size:
                raise SingularJacobian(f"singular Jacobian at unknown {labels[bad[0]]}", labels[bad[0]])
            self.lu = (lu, piv)
        else:
            try:
                self.lu = spla.splu(sp.csc_matrix(J))
            except RuntimeError as exc:
                raise SingularJacobian(f"singular Jacobian: {exc}") from None

    def solve(self, r):
        if self.dense:
            rs = self.rs if np.ndim(r) == 1 else self.rs[:, None]
            return sla.lu_solve(self.lu, r * rs, check_finite=False)
        return self.lu.solve(r)


class _LowRank:
    """Exact Newton solves for ``A + E_R Jr`` from a factorization of ``A``.

    ``Jr`` holds the nonlinear Jacobian rows ``R``; with ``k = |R|`` small,
    each iteration costs one k-by-k factorization (Woodbury identity).
    """

    def __init__(self, base: _Factor, rows: np.ndarray, n: int, labels):
        self.base = base
        self.rows = rows
        self.labels = labels
        E = np.zeros((n, rows.size))
        E[rows, np.arange(rows.size)] = 1.0
        self.W = np.asarray(base.solve(E)).reshape(n, rows.size)

    def with_jacobian(self, ridx, cols, jv):
        k = self.rows.size
        Jr = np.zeros((k, self.W.shape[0]))
        Jr[ridx, cols] = jv
        M = np.eye(k) + Jr @ self.W
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(M, check_finite=False)
        d = np.abs(np.diag(lu))
        bad = np.flatnonzero(~np.isfinite(d) | (d <= PIVOT_TOL * max(float(np.max(np.abs(M))), 1.0)))
        if bad.size:
            row = int(self.rows[bad[0]])
            raise SingularJacobian(f"singular Jacobian at unknown {self.labels[row]}", self.labels[row])
        self.Jr, self.m = Jr, (lu, piv)
        return self

    def solve(self, r):
        y = self.base.solve(r)
        return y - self.W @ sla.lu_solve(self.m, self.Jr @ y, check_finite=False)


class _Nonlinear:
    """Compiled behavioral terms: residual contributions and Jacobian entries."""

    def __init__(self, terms, layout: Layout, dense: bool):
        n = layout.size
        self.count = len(terms)
        self.n = n
        if not terms:
            return
        index = {}
        for t in terms:
            for k in t.expr.variables():
                index[k] = layout.index_of(k)
        self.fn, slots = compile_exprs([t.expr for t in terms], index)
        self.f = np.zeros(self.count)
        self.jv = np.zeros(max(self.fn.n_partials, 1))
        rows, cols, slot, sign = [], [], [], []
        S = np.zeros((n, self.count))
        for k, t in enumerate(terms):
            for r, s in t.rows:
                S[r, k] += s
                for var, j in slots[k]:
                    rows.append(r)
                    cols.append(index[var])
                    slot.append(j)
                    sign.append(s)
        self.S = S if dense else sp.csr_matrix(S)
        self.absS = np.abs(S) if dense else abs(self.S)
        flat = np.asarray(rows, dtype=np.int64) * n + np.asarray(cols, dtype=np.int64)
        self.uflat, self.uidx = np.unique(flat, return_inverse=True)
        self.urow = self.uflat // n
        self.ucol = self.uflat % n
        self.slot = np.asarray(slot, dtype=np.int64)
        self.sign = np.asarray(sign, dtype=float)
        self.rows, self.ridx = np.unique(self.urow, return_inverse=True)

    def eval(self, x, t):
        self.fn(x, t, self.f, self.jv)
        vals = np.bincount(self.uidx, weights=self.sign * self.jv[self.slot], minlength=self.uflat.size)
        return self.f, vals


# ---------------------------------------------------------------------------
# engine


class TransientEngine:
    """Owns the compiled circuit, its integration history and the step loop."""

    def __init__(self, circuit: Circuit, config: SolverConfig | None = None,
                 events: Sequence[SimEvent] = (), probes: Sequence[Probe] | None = None):
        self.config = config or SolverConfig()
        self.events = validate_events(events, self.config.t_end)
        circuit = Circuit(circuit.primitives)
        add_fault_switches(circuit, self.events)
        self.circuit = circuit
        self.layout = Layout.of(circuit)
        L = self.layout
        n = self.n = L.size
        self.dense = n <= DENSE_LIMIT
        self.labels = L.labels()

        # stamping a nonlinear source without an iterate only adds its incidence
        self.linear = list(circuit)
        probe_sys = MnaSystem(L)
        for p in circuit:
            if isinstance(p, BEHAVIORAL):
                stamp(p, IntegratorCompanion(dt=1.0), probe_sys)
        self.nl = _Nonlinear(probe_sys.nonlinear, L, self.dense)
        # constant right-hand side of affine behavioral sources
        self.b_const = probe_sys.b.copy()

        ext = lambda nd: n if is_ground(nd) else L.row(nd)  # noqa: E731
        self.caps = [p for p in circuit if isinstance(p, Capacitor)]
        self.inds = [p for p in circuit if isinstance(p, Inductor)]
        self.cap_p = np.array([ext(c.p) for c in self.caps], dtype=np.int64)
        self.cap_n = np.array([ext(c.n) for c in self.caps], dtype=np.int64)
        self.cap_C = np.array([c.farads for c in self.caps])
        self.ind_p = np.array([ext(c.p) for c in self.inds], dtype=np.int64)
        self.ind_n = np.array([ext(c.n) for c in self.inds], dtype=np.int64)
        self.ind_br = np.array([L.branch(c.name) for c in self.inds], dtype=np.int64)
        self.ind_L = np.array([c.henries for c in self.inds])
        Mc = np.zeros((n + 1, len(self.caps)))
        for k, c in enumerate(self.caps):
            if c.has_branch:
                Mc[L.branch(c.name), k] = 1.0
            else:
                Mc[self.cap_p[k], k] += 1.0
                Mc[self.cap_n[k], k] -= 1.0
        self.Mc = Mc[:n] if self.dense else sp.csr_matrix(Mc[:n])
        self.sources = []
        for p in circuit:
            if isinstance(p, VoltageSource):
                self.sources.append((p.waveform, L.branch(p.name), -1, 1.0))
            elif isinstance(p, CurrentSource):
                self.sources.append((p.waveform, L.row(p.p), L.row(p.n), -1.0))
        self.switch_names = [p.name for p in circuit if isinstance(p, Switch)]
        self.switches = {p.name: p.closed for p in circuit if isinstance(p, Switch)}

        self.probes = list(probes) if probes is not None else default_probes(circuit)
        self.probe_p = np.array([self._probe_index(pr.p, pr.kind) for pr in self.probes], dtype=np.int64)
        self.probe_n = np.array([self._probe_index(pr.n, pr.kind) if pr.kind == "v" else n
                                 for pr in self.probes], dtype=np.int64)

        self._mats: OrderedDict = OrderedDict()
        self._split_matrices()
        self._lus: OrderedDict = OrderedDict()
        self.initialized = False
        self.max_residual = 0.0
        self.dc_iterations = 0

    # -- helpers --------------------------------------------------------
    def _probe_index(self, ref: str, kind: str) -> int:
        if kind == "i":
            return self.layout.branch(ref)
        return self.n if is_ground(ref) else self.layout.row(ref)

    def _stamped(self, prims, dt):
        sys = MnaSystem(self.layout)
        state = IntegratorCompanion(dt=dt, switches=self.switches)
        for p in prims:
            stamp(p, state, sys)
        return sys.dense() if self.dense else sys.G.tocsr()

    def _split_matrices(self):
        """Transient matrix pieces: ``A = S0 + R0 + s R1 + sum g_k P_k`` with
        ``s = 2/dt`` (trapezoidal) or ``1/dt`` (backward Euler)."""
        circuit = self.circuit
        static = [p for p in circuit if not (p.is_reactive or isinstance(p, Switch))]
        reactive = [p for p in circuit if p.is_reactive]
        a1 = self._stamped(reactive, 2.0)  # s = 1
        a2 = self._stamped(reactive, 1.0)  # s = 2
        self._R1 = a2 - a1
        self._S0 = self._stamped(static, 1.0) + (a1 - self._R1)
        self._P = []
        for name in self.switch_names:
            sw = self.circuit[name]
            sys = MnaSystem(self.layout)
            sys.conductance(self.layout.row(sw.p), self.layout.row(sw.n), 1.0)
            self._P.append((sw, sys.dense() if self.dense else sys.G.tocsr()))
        self._bases: OrderedDict = OrderedDict()

    def _base(self, sw_key):
        hit = self._bases.get(sw_key)
        if hit is None:
            hit = self._S0.copy()
            for (sw, P), closed in zip(self._P, sw_key):
                hit = hit + (1.0 / (sw.r_on if closed else sw.r_off)) * P
            self._bases[sw_key] = hit
            if len(self._bases) > 8:
                self._bases.popitem(last=False)
        return hit

    def _coeffs(self, dt: float, method: str) -> tuple[float, float, float]:
        """``(a0, a1, a2)`` of ``dx/dt ~ a0 x1 + a1 x0 + a2 x_prev`` for the
        implicit formulas; the trapezoidal rule only uses ``a0 = 2/dt``."""
        if method == "trap":
            return 2.0 / dt, 0.0, 0.0
        if method == "euler":
            return 1.0 / dt, -1.0 / dt, 0.0
        rho = dt / (self.t - self.t_prev)
        return (1.0 + 2.0 * rho) / (dt * (1.0 + rho)), -(1.0 + rho) / dt, rho * rho / (dt * (1.0 + rho))

    def _matrix(self, dt: float | None, method: str = "trap", gmin: bool = True):
        sw_key = tuple(self.switches[s] for s in self.switch_names)
        a0 = None if dt is None else self._coeffs(dt, method)[0]
        key = (a0 if gmin else "bare", sw_key)
        hit = self._mats.get(key)
        if hit is not None:
            self._mats.move_to_end(key)
            return key, hit
        if dt is None:
            g = np.zeros(self.n)
            g[:self.layout.n_nodes] = GMIN if gmin else 0.0
            A = self._stamped(self.linear, None) + (np.diag(g) if self.dense else sp.diags(g))
        else:
            A = self._base(sw_key) + a0 * self._R1
        absA = np.abs(A) if self.dense else abs(A)
        self._mats[key] = (A, absA)
        if len(self._mats) > 4:
            self._mats.popitem(last=False)
        return key, (A, absA)

    def _rhs_sources(self, t: float) -> np.ndarray:
        b = self.b_const.copy()
        for w, r1, r2, s in self.sources:
            v = w(t)
            if r1 >= 0:
                b[r1] += s * v
            if r2 >= 0:
                b[r2] -= s * v
        return b

    def _hist_rhs(self, dt: float, method: str) -> np.ndarray:
        if method == "trap":
            ieq = (2.0 * self.cap_C / dt) * self.cap_v + self.cap_i
            veq = (2.0 * self.ind_L / dt) * self.ind_i + self.ind_v
        else:  # backward Euler or Gear-2
            _, a1, a2 = self._coeffs(dt, method)
            vp, ip = self._prev_states()
            ieq = -self.cap_C * (a1 * self.cap_v + a2 * vp)
            veq = -self.ind_L * (a1 * self.ind_i + a2 * ip)
        b = self.Mc @ ieq if len(self.caps) else np.zeros(self.n)
        if len(self.inds):
            b[self.ind_br] -= veq
        return b

    def _states(self, x: np.ndarray, dt: float | None, method: str):
        xe = np.append(x, 0.0)
        cv = xe[self.cap_p] - xe[self.cap_n]
        ii = x[self.ind_br] if len(self.inds) else np.zeros(0)
        iv = xe[self.ind_p] - xe[self.ind_n]
        if dt is None:
            return cv, None, ii, iv
        if method == "trap":
            ci = (2.0 * self.cap_C / dt) * (cv - self.cap_v) - self.cap_i
        else:
            a0, a1, a2 = self._coeffs(dt, method)
            ci = self.cap_C * (a0 * cv + a1 * self.cap_v + a2 * self._prev_states()[0])
        return cv, ci, ii, iv

    def _prev_states(self):
        if self.s_prev is None:
            return np.zeros(len(self.caps)), np.zeros(len(self.inds))
        return self.s_prev[:len(self.caps)], self.s_prev[len(self.caps):]

    # -- Newton -------------------------------------------------------------
    def _residual(self, A, absA, b, x, t):
        F = A @ x - b
        s = 1.0 + absA @ np.abs(x) + np.abs(b)
        jv = None
        if self.nl.count:
            f, jv = self.nl.eval(x, t)
            F += self.nl.S @ f
            s += self.nl.absS @ np.abs(f)
        return F, s, jv

    def _jacobian(self, A, jv):
        if jv is None:
            return A
        if self.dense:
            J = A.copy()
            J.flat[self.nl.uflat] += jv
            return J
        return A + sp.csr_matrix((jv, (self.nl.urow, self.nl.ucol)), shape=A.shape)

    def _cache(self, key, lu):
        self._lus[key] = lu
        self._lus.move_to_end(key)
        if len(self._lus) > 8:
            self._lus.popitem(last=False)

    def _low_rank(self, key, A, jv):
        """Woodbury solver around the factorized linear matrix, or None when
        the nonlinear part is too wide or the linear matrix is singular."""
        nl = self.nl
        if jv is None or nl.rows.size == 0 or nl.rows.size > min(64, self.n // 4):
            return None
        k = ("lowrank", key)
        lr = self._lus.get(k)
        if lr is None:
            try:
                lr = _LowRank(_Factor(A, self.labels), nl.rows, self.n, self.labels)
            except SingularJacobian:
                lr = False
            self._cache(k, lr)
        else:
            self._lus.move_to_end(k)
        return lr.with_jacobian(nl.ridx, nl.ucol, jv) if lr else None

    def newton(self, key, A, absA, b, x0, t, tol=None, max_iter=None):
        """Solve ``A x - b + f_nl(x) = 0`` from ``x0``.

        Returns ``(x, iterations, normalized residual)``.  With
        ``reuse_jacobian`` the last LU factorization is kept while it
        contracts the residual fast enough (chord iteration); it is rebuilt
        otherwise.  Full steps are damped by halving while the scaled
        residual norm does not decrease.
        """
        cfg = self.config
        tol = cfg.newton_tol if tol is None else tol
        max_iter = cfg.newton_max_iter if max_iter is None else max_iter
        x = x0.copy()
        F, s, jv = self._residual(A, absA, b, x, t)
        r = F / s
        rmax = float(np.max(np.abs(r))) if r.size else 0.0
        if rmax <= tol:
            return x, 0, rmax
        merit = float(r @ r)
        linear = self.nl.count == 0  # J == A
        refresh = not cfg.reuse_jacobian
        for it in range(1, max_iter + 1):
            lu = self._low_rank(key, A, jv) if cfg.reuse_jacobian else None
            if lu is not None:
                exact = True
            else:
                lu = None if refresh else self._lus.get(key)
                if lu is None:
                    lu = _Factor(self._jacobian(A, jv), self.labels)
                    self._cache(key, lu)
                    exact = True
                else:
                    self._lus.move_to_end(key)
                    exact = linear
            dx = -lu.solve(F)
            alpha = 1.0
            ok = False
            for _ in range(40):
                xt = x + alpha * dx
                Ft, st, jvt = self._residual(A, absA, b, xt, t)
                rt = Ft / st
                mt = float(rt @ rt)
                if np.isfinite(mt) and (mt < merit or float(np.max(np.abs(rt))) <= tol):
                    ok = True
                    break
                if not exact:
                    break
                alpha *= 0.5
            if not ok:
                if not exact:
                    refresh = True  # stale Jacobian: rebuild before damping
                    continue
                break
            slow = mt > 0.01 * merit  # under 10x norm contraction per iteration
            x, F, s, jv, r, merit = xt, Ft, st, jvt, rt, mt
            rmax = float(np.max(np.abs(r)))
            if rmax <= tol:
                return x, it, rmax
            refresh = not cfg.reuse_jacobian or (slow and not exact)
        worst = self.labels[int(np.argmax(np.abs(r)))]
        raise NonConvergence(f"Newton did not converge in {max_iter} iterations (worst {worst}, {rmax:.3g})",
                             worst, rmax)

    # -- operating point ----------------------------------------------------
    def dc_operating_point(self, t: float = 0.0) -> np.ndarray:
        """Static solution with L shorted and C open (or held at their initial conditions)."""
        key, (A, absA) = self._matrix(None)
        state = IntegratorCompanion(dt=None, t=t, switches=self.switches)
        sys = MnaSystem(self.layout)
        for p in self.linear:
            stamp(p, state, sys)
        b = sys.b
        max_iter = max(self.config.newton_max_iter, 100)
        x, self.dc_iterations, _ = self.newton(key, A, absA, b, self._dc_guess(), t, max_iter=max_iter)
        # drop the GMIN shunts again unless that leaves a floating node
        _, (A0, absA0) = self._matrix(None, gmin=False)
        F, _, jv = self._residual(A0, absA0, b, x, t)
        try:
            x0 = x - _Factor(self._jacobian(A0, jv), self.labels).solve(F)
        except SingularJacobian:
            return x
        F0, s0, _ = self._residual(A0, absA0, b, x0, t)
        if (np.all(np.abs(x0 - x) <= GMIN_POLISH_RTOL * (np.abs(x) + 1.0))
                and np.max(np.abs(F0 / s0), initial=0.0) <= self.config.newton_tol):
            return x0
        return x

    def _dc_guess(self) -> np.ndarray:
        # start from the capacitor initial conditions so held states are exact
        x = np.zeros(self.n)
        L = self.layout
        for c in self.caps:
            if c.initial_voltage is None:
                continue
            if is_ground(c.n) and not is_ground(c.p):
                x[L.row(c.p)] = c.initial_voltage
            elif is_ground(c.p) and not is_ground(c.n):
                x[L.row(c.n)] = -c.initial_voltage
        return x

    def initialize(self, x0: np.ndarray | None = None) -> np.ndarray:
        """Seed histories from the operating point at ``t = 0``."""
        x = self.dc_operating_point(0.0) if x0 is None else np.asarray(x0, dtype=float)
        cv, _, ii, iv = self._states(x, None, "trap")
        self.cap_v = cv
        # held capacitors carry their DC current on their branch unknown
        self.cap_i = np.array([x[self.layout.branch(c.name)] if c.has_branch else 0.0 for c in self.caps])
        self.ind_i = ii
        self.ind_v = iv
        self.t = 0.0
        self.restart_time = -math.inf
        self.x = x
        self.x_prev = None
        self.t_prev = None
        self.s_prev = None
        self.scale = np.maximum(np.abs(self._state_vector()), 0.0)
        self.initialized = True
        self.since_restart = 0
        return x

    def _state_vector(self):
        return np.concatenate([self.cap_v, self.ind_i])

    def _deriv_vector(self):
        C = self.cap_C if len(self.caps) else np.zeros(0)
        return np.concatenate([self.cap_i / C if len(self.caps) else np.zeros(0),
                               self.ind_v / self.ind_L if len(self.inds) else np.zeros(0)])

    # -- stepping -----------------------------------------------------------
    def lte_estimate(self, s1: np.ndarray, dt: float, method: str = "trap") -> float:
        """Normalized LTE of a step of length ``dt`` ending in states ``s1``.

        The predictor is the quadratic through the previous state, the
        current state and the current derivative.  Its error and the local
        error of the corrector are both proportional to the third derivative,
        so the corrector's share of ``|s1 - pred|`` is known (Milne's device):
        ``dt / (3 dt + 2 h_prev)`` for the trapezoidal rule.  Right after a
        (re)start only the current point is known and the linear
        predictor's full difference is used, which over-estimates the error.
        """
        if s1.size == 0:
            return 0.0
        s0 = self._state_vector()
        d0 = self._deriv_vector()
        if self.s_prev is None:
            err = np.abs(s1 - (s0 + dt * d0))
        else:
            hp = self.t - self.t_prev
            c = (self.s_prev - s0 + d0 * hp) / (hp * hp)
            pred = s0 + d0 * dt + c * dt * dt
            c_pred = dt * dt * (dt + hp) / 6.0
            if method == "gear":
                a0, a1, a2 = self._coeffs(dt, method)
                c_corr = (a1 * dt ** 3 + a2 * (dt + hp) ** 3) / (6.0 * a0)
            else:
                c_corr = dt ** 3 / 12.0
            err = np.abs(s1 - pred) * (c_corr / (c_corr + c_pred))
        scale = np.maximum(np.maximum(self.scale, np.abs(s1)), self.config.lte_abstol)
        return float(np.max(err / scale))

    def integrate_step(self, dt: float, method: str = "trap", check_lte: bool = True) -> StepResult:
        """Attempt one step of length ``dt``; commit it when accepted."""
        if not self.initialized:
            self.initialize()
        cfg = self.config
        t1 = self.t + dt
        key, (A, absA) = self._matrix(dt, method)
        b = self._rhs_sources(t1) + self._hist_rhs(dt, method)
        if self.x_prev is not None and self.t_prev is not None:
            hp = self.t - self.t_prev
            guess = self.x + (dt / hp) * (self.x - self.x_prev)
        else:
            guess = self.x
        try:
            x1, iters, resid = self.newton(key, A, absA, b, guess, t1)
        except (NonConvergence, SingularJacobian) as exc:
            if isinstance(exc, SingularJacobian) and self.nl.count == 0:
                raise
            try:
                x1, iters, resid = self.newton(key, A, absA, b, self.x, t1)
            except NonConvergence as exc2:
                return StepResult(False, self.x, math.inf, cfg.newton_max_iter, dt, f"newton: {exc2}")
        cv, ci, ii, iv = self._states(x1, dt, method)
        s1 = np.concatenate([cv, ii])
        lte = self.lte_estimate(s1, dt, method)
        if check_lte and lte > cfg.lte_tol:
            return StepResult(False, x1, lte, iters, dt, "lte")
        # commit
        self.x_prev, self.t_prev, self.s_prev = self.x, self.t, self._state_vector()
        self.x, self.t = x1, t1
        self.cap_v, self.cap_i, self.ind_i, self.ind_v = cv, ci, ii, iv
        self.scale = np.maximum(self.scale, np.abs(s1))
        self.max_residual = max(self.max_residual, resid)
        self.since_restart += 1
        return StepResult(True, x1, lte, iters, dt)

    def reinitialize(self) -> None:
        """Consistent restart after a topology change at the current time.

        Reactive states first relax through ``REINIT_RELAX_STEPS``
        backward-Euler steps of ``dt_min`` without advancing time, so modes far
        faster than any resolvable step (a capacitor discharging into a fault)
        settle instead of ringing.  A final micro-step of
        ``REINIT_FRACTION * dt_init`` recomputes the algebraic unknowns and
        the state derivatives.
        """
        cfg = self.config
        max_iter = max(cfg.newton_max_iter, 100)
        x = self.x
        steps = [cfg.dt_min] * REINIT_RELAX_STEPS + [REINIT_FRACTION * cfg.dt_init]
        for k, h in enumerate(steps):
            key, (A, absA) = self._matrix(h, "euler")
            b = self._rhs_sources(self.t) + self._hist_rhs(h, "euler")
            x, _, _ = self.newton(key, A, absA, b, x, self.t, max_iter=max_iter)
            cv, ci, ii, iv = self._states(x, h, "euler")
            if k < REINIT_RELAX_STEPS:
                self.cap_v, self.ind_i = cv, ii
        self.cap_i = ci
        self.ind_v = iv
        self.x = x
        self.x_prev = self.t_prev = self.s_prev = None
        self.since_restart = 0
        if self.t > 0:
            self.restart_time = self.t

    def apply_event(self, ev: SimEvent) -> None:
        a = ev.action
        if a in (Action.SWITCH_CLOSE, Action.SWITCH_OPEN):
            # a multi-phase breaker is addressed by its name prefix
            names = [ev.target] if ev.target in self.switches else \
                [s for s in self.switch_names if s.startswith(ev.target + ".")]
            if not names:
                raise ValueError(f"unknown switch {ev.target!r}")
            closed = a is Action.SWITCH_CLOSE
        else:
            names = [s for s in self.switch_names
                     if s == fault_switch_name(ev.target, None) or s.startswith(fault_switch_name(ev.target, None) + ".")]
            closed = a is Action.APPLY_FAULT
        for s in names:
            self.switches[s] = closed

    def adapt_dt(self, lte: float, dt: float, accepted: bool = True, t: float | None = None,
                 next_break: float | None = None) -> float:
        """Next step size from the LTE controller, clamped to ``[dt_min, dt_max]``
        and to the next breakpoint when ``t`` and ``next_break`` are given."""
        cfg = self.config
        if accepted:
            if lte <= 0.0:
                grow = cfg.step_growth_factor
            else:
                grow = min(cfg.step_growth_factor, cfg.safety * (cfg.lte_tol / lte) ** (1.0 / 3.0))
            dt_next = min(cfg.dt_max, dt * grow)
        else:
            dt_next = max(cfg.dt_min, dt * cfg.step_shrink_factor)
        if cfg.dt_levels and dt_next < cfg.dt_max:
            k = math.ceil(math.log2(cfg.dt_max / dt_next) * cfg.dt_levels - 1e-9)
            dt_next = cfg.dt_max * 2.0 ** (-k / cfg.dt_levels)
        dt_next = max(dt_next, cfg.dt_min)
        if t is not None and next_break is not None:
            dt_next = clamp_to_breakpoint(t, dt_next, next_break, cfg.dt_min)
        return dt_next

    # -- driver -------------------------------------------------------------
    def _method(self) -> str:
        cfg = self.config
        if self.since_restart == 0 and self.t > 0 and (cfg.euler_restart or cfg.gear_window > 0):
            return "euler"
        if self.s_prev is not None and self.t - self.restart_time < cfg.gear_window:
            return "gear"
        return "trap"

    def run(self) -> TransientResult:
        """Integrate from 0 to ``t_end`` honouring every event breakpoint."""
        cfg = self.config
        wall0 = _time.perf_counter()
        if not self.initialized:
            self.initialize()
        buf = _Recorder(len(self.probes))
        buf.add(self.t, self._probe_values(self.x), 0.0)
        breaks = sorted({e.time for e in self.events if e.time > 0.0} | {cfg.t_end})
        pending = list(self.events)
        # events scheduled at t=0 act on the initial state
        while pending and pending[0].time == 0.0:
            self.apply_event(pending.pop(0))
            self.reinitialize()
        fixed = cfg.fixed_dt
        dt = fixed if fixed is not None else cfg.dt_init
        accepted = rejected = iters = 0
        bi = 0
        seg_start, seg_steps = self.t, 0
        while self.t < cfg.t_end:
            while breaks[bi] <= self.t:
                bi += 1
            nb = breaks[bi]
            if fixed is not None:
                # multiples of the fixed step from the last breakpoint avoid drift
                target = seg_start + (seg_steps + 1) * fixed
                if target >= nb - 1e-9 * fixed:
                    target = nb
                step = target - self.t
            else:
                step = clamp_to_breakpoint(self.t, dt, nb, cfg.dt_min)
            method = self._method()
            try:
                res = self.integrate_step(step, method, check_lte=fixed is None)
            except (SingularJacobian, NonConvergence) as exc:
                raise SimulationError(str(exc), self.t) from exc
            iters += res.newton_iterations
            if not res.accepted:
                rejected += 1
                if fixed is not None:
                    raise SimulationError(f"fixed step failed: {res.reason}", self.t)
                if step <= cfg.dt_min * (1 + 1e-12):
                    raise SimulationError(f"step rejected at dt_min ({res.reason})",
                                          self.t) from StepTooSmall(res.reason)
                dt = self.adapt_dt(res.lte_estimate, step, accepted=False)
                continue
            accepted += 1
            seg_steps += 1
            buf.add(self.t, self._probe_values(self.x), res.lte_estimate)
            if fixed is None:
                dt = self.adapt_dt(res.lte_estimate, step, accepted=True)
            fired = False
            while pending and pending[0].time <= self.t:
                self.apply_event(pending.pop(0))
                fired = True
            if fired:
                self.reinitialize()
                if fixed is None:
                    dt = cfg.dt_init
            if self.t == nb:
                seg_start, seg_steps = self.t, 0
        t_arr, vals, lte = buf.arrays()
        wall = _time.perf_counter() - wall0
        return TransientResult(
            time=t_arr,
            values={pr.label: vals[:, k] for k, pr in enumerate(self.probes)},
            dt=np.diff(t_arr),
            accepted_steps=accepted,
            rejected_steps=rejected,
            newton_iterations=iters,
            wall_time=wall,
            event_times=[e.time for e in self.events],
            lte=lte[1:],
            max_residual=self.max_residual,
        )

    def _probe_values(self, x):
        xe = np.append(x, 0.0)
        return xe[self.probe_p] - xe[self.probe_n]


def clamp_to_breakpoint(t: float, dt: float, t_break: float, dt_min: float) -> float:
    """Shorten ``dt`` so the step lands exactly on ``t_break`` when it would
    overshoot it, or splits the remainder evenly instead of leaving a sliver
    shorter than ``dt_min``."""
    remaining = t_break - t
    if dt >= remaining:
        return remaining
    if remaining - dt < dt_min:
        return 0.5 * remaining
    return dt


class _Recorder:
    def __init__(self, width: int, chunk: int = 8192):
        self.width = width
        self.chunk = chunk
        self.t = np.empty(chunk)
        self.v = np.empty((chunk, width))
        self.e = np.empty(chunk)
        self.k = 0

    def add(self, t, vals, lte):
        if self.k == self.t.size:
            grow = self.t.size
            self.t = np.concatenate([self.t, np.empty(grow)])
            self.v = np.concatenate([self.v, np.empty((grow, self.width))])
            self.e = np.concatenate([self.e, np.empty(grow)])
        self.t[self.k] = t
        self.v[self.k] = vals
        self.e[self.k] = lte
        self.k += 1

    def arrays(self):
        return self.t[: self.k].copy(), self.v[: self.k].copy(), self.e[: self.k].copy()


def default_probes(circuit: Circuit) -> list[Probe]:
    return [Probe(f"V({nd})", nd) for nd in circuit.nodes()]


# ---------------------------------------------------------------------------
# functional entry points


def dc_operating_point(circuit: Circuit) -> np.ndarray:
    """Newton-converged static solution of ``circuit`` (L shorted, C open)."""
    return TransientEngine(circuit, SolverConfig()).dc_operating_point()


def newton_step(sys: MnaSystem, iterate: np.ndarray, t: float = 0.0) -> tuple[np.ndarray, float]:
    """One undamped Newton iteration on an assembled :class:`MnaSystem`.

    Returns the next iterate and the 2-norm of the residual at it.
    """
    x = np.asarray(iterate, dtype=float)
    lin = MnaSystem(sys.layout)
    lin.rows, lin.cols, lin.vals = list(sys.rows), list(sys.cols), list(sys.vals)
    J = lin.G.tolil()
    F = sys.residual(x, t)
    if sys.nonlinear:
        env = sys.layout.env(x)
        for term in sys.nonlinear:
            _, grad = term.expr.evaluate(env, t)
            for r, s in term.rows:
                for k, d in grad.items():
                    J[r, sys.layout.index_of(k)] += s * d
    J = J.tocsc() if sys.n > DENSE_LIMIT else J.toarray()
    dx = -_Factor(J, sys.layout.labels()).solve(F)
    x1 = x + dx
    return x1, float(np.linalg.norm(sys.residual(x1, t)))


def run_transient(circuit: Circuit, events: Sequence[SimEvent] = (), config: SolverConfig | None = None,
                  probes: Sequence[Probe] | None = None, x0: np.ndarray | None = None) -> TransientResult:
    """Integrate ``circuit`` from its operating point to ``config.t_end``."""
    eng = TransientEngine(circuit, config, events, probes)
    eng.initialize(x0)
    return eng.run()
