"""Balanced sinusoidal steady state of a case, per phase, in rms volts.

Used to give generators an operating point consistent with the network they
are connected to: each generator is a PV bus (real power and voltage
magnitude fixed) and the solution supplies its reactive power and terminal
angle.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from scipy.optimize import fsolve

from .casefile import CaseFile
from .errors import InvalidSpec


def _admittance(case: CaseFile) -> tuple[np.ndarray, np.ndarray, dict[str, int]]:
    w = 2.0 * math.pi * case.frequency
    idx = {b: k for k, b in enumerate(case.buses)}
    n = len(idx)
    Y = np.zeros((n, n), dtype=complex)
    I = np.zeros(n, dtype=complex)

    def series(a, b, z):
        y = 1.0 / z
        i = idx[a]
        Y[i, i] += y
        if b in idx:
            j = idx[b]
            Y[j, j] += y
            Y[i, j] -= y
            Y[j, i] -= y

    for s in case.stanzas:
        p = s.params
        if s.kind == "line":
            series(p["from"], p["to"], complex(p["r"], w * p["l"]))
            for bus in (p["from"], p["to"]):
                Y[idx[bus], idx[bus]] += 0.5j * w * p["c"]
        elif s.kind in ("rlc", "resistor"):
            z = complex(p["r"], w * p.get("l", 0.0))
            if p.get("c", 0.0) > 0:
                z += 1.0 / (1j * w * p["c"])
            series(p["from"], p["to"], z)
        elif s.kind == "breaker":
            series(p["from"], p["to"], p["r_on"] if p["closed"] else p["r_off"])
        elif s.kind == "source":
            if p["sequence"] != "abc":
                raise InvalidSpec(f"{s.name}: steady state needs positive-sequence sources")
            z = complex(p["r"], w * p["l"])
            e = p["v_ll"] / math.sqrt(3.0) * np.exp(1j * math.radians(p["angle"]))
            Y[idx[p["bus"]], idx[p["bus"]]] += 1.0 / z
            I[idx[p["bus"]]] += e / z
        elif s.kind in ("generator", "governor", "exciter"):
            continue
        else:
            raise InvalidSpec(f"{s.kind} {s.name}: not supported by the steady-state solver")
    return Y, I, idx


def steady_state(case: CaseFile) -> dict[str, complex]:
    """Phase-a rms voltage phasor of every bus (cosine reference).

    Generators inject their stanza's ``p`` at voltage magnitude ``v``.
    """
    return _solve(case)[0]


def _solve(case: CaseFile) -> tuple[dict[str, complex], np.ndarray]:
    Y, I, idx = _admittance(case)
    gens = case.of_kind("generator")
    n = len(idx)

    def unpack(z):
        return z[:n] + 1j * z[n:2 * n], z[2 * n:]

    def residual(z):
        V, q = unpack(z)
        inj = I.copy()
        extra = []
        for k, g in enumerate(gens):
            p = g.params
            i = idx[p["bus"]]
            s_phase = (p["p"] + 1j * q[k]) * p["s_base"] / 3.0
            inj[i] += np.conj(s_phase / V[i])
            extra.append(abs(V[i]) - p["v"] * p["v_base"] / math.sqrt(3.0))
        r = Y @ V - inj
        scale = max(abs(I).max(), 1.0)
        return np.concatenate([r.real / scale, r.imag / scale, np.array(extra) / 1e3])

    v0 = np.linalg.solve(Y, I) if n else np.zeros(0)
    z0 = np.concatenate([v0.real, v0.imag, np.zeros(len(gens))])
    z, info, ok, msg = fsolve(residual, z0, full_output=True, xtol=1e-13)
    if ok != 1 or np.max(np.abs(residual(z))) > 1e-8:
        raise InvalidSpec(f"steady-state solution failed: {msg}")
    V, q = unpack(z)
    return {b: complex(V[k]) for b, k in idx.items()}, q


def with_operating_points(case: CaseFile) -> CaseFile:
    """Copy of ``case`` whose generators carry the solved ``q`` and ``angle``."""
    gens = case.of_kind("generator")
    if not gens:
        return case
    V, q = _solve(case)
    k = 0
    stanzas = []
    for s in case.stanzas:
        if s.kind == "generator" and s.params["init"] == "steady_state":
            vb = V[s.params["bus"]]
            params = {**s.params, "q": float(q[k]), "angle": math.degrees(float(np.angle(vb)))}
            s = replace(s, params=params)
        if s.kind == "generator":
            k += 1
        stanzas.append(s)
    return replace(case, stanzas=stanzas)
