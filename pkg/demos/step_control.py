"""
How the step controller reacts to a switching event
====================================================

A series RL branch is switched onto a DC source.  The LTE controller
starts from dt_init, grows the step as the transient dies out and restarts
when the breaker opens again.
"""

import numpy as np

from emtkit.circuit import DC, Circuit, Inductor, Resistor, Switch, VoltageSource
from emtkit.solver import Probe, SimEvent, SolverConfig, run_transient

R, L = 2.0, 4e-3
circuit = Circuit([
    VoltageSource("V", "a", "0", DC(1.0)),
    Switch("S", "a", "b", closed=False),
    Resistor("R", "b", "c", R),
    Inductor("L", "c", "0", L),
    Resistor("Rdis", "c", "0", 50.0),
])
events = [SimEvent(0.0, "switch_close", "S"), SimEvent(0.03, "switch_open", "S")]

for tol in (1e-2, 1e-3, 1e-4):
    res = run_transient(circuit, events, SolverConfig(t_end=0.06, lte_tol=tol, dt_max=5e-3),
                        probes=[Probe("i", "L", kind="i")])
    print(f"lte_tol {tol:g}: {res.accepted_steps} steps, smallest {res.dt.min():.2e} s, "
          f"largest {res.dt.max():.2e} s")

# the closing transient against its closed form (Thevenin equivalent seen by L)
res = run_transient(circuit, events, SolverConfig(t_end=0.03, lte_tol=1e-4), probes=[Probe("i", "L", kind="i")])
r_th = R * 50.0 / (R + 50.0)
v_th = 50.0 / (R + 50.0)
tau = L / r_th
exact = v_th / r_th * (1 - np.exp(-res.time / tau))
print(f"max error while charging: {np.max(np.abs(res.values['i'] - exact)):.2e} A")
print(f"time constant {tau * 1e3:.2f} ms, after opening {L / 50.0 * 1e3:.2f} ms")
