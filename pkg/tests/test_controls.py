import math

import numpy as np
import pytest

from emtkit.circuit import Circuit, Sine, VoltageSource
from emtkit.controls import (
    Adder,
    BlockSim,
    DC1ASpec,
    Gain,
    HighPass,
    IEEEG3Spec,
    Integrator,
    LeadLag,
    LeadLagDirect,
    Limiter,
    LowPass,
    Saturation,
    saturation_se,
    step_block,
)
from emtkit.errors import InvalidSpec
from emtkit.machine import GeneratorSpec, expand_generator, initialize_generator
from emtkit.solver import Probe, SolverConfig, run_transient

DT = 1e-5


def _step_response(block, t_span):
    sim = BlockSim(block, u0=0.0, u=1.0)
    n = int(round(t_span / DT))
    t = DT * np.arange(1, n + 1)
    y = np.array([sim.step(1.0, DT) for _ in range(n)])
    return t, y


@pytest.mark.parametrize("block, exact, tau", [
    (LowPass(2.0, 0.01), lambda t: 2.0 * (1 - np.exp(-t / 0.01)), 0.01),
    (HighPass(1.5, 0.01), lambda t: 1.5 * np.exp(-t / 0.01), 0.01),
    (Integrator(0.02), lambda t: t / 0.02, 0.02),
    (LeadLag(0.03, 0.01), lambda t: 1 + (3.0 - 1) * np.exp(-t / 0.01), 0.01),
    (LeadLag(-0.005, 0.01), lambda t: 1 + (-0.5 - 1) * np.exp(-t / 0.01), 0.01),
    (LeadLagDirect(0.03, 0.01), lambda t: 1 + (3.0 - 1) * np.exp(-t / 0.01), 0.01),
])
def test_unit_step_matches_transfer_function(block, exact, tau):
    t, y = _step_response(block, 5 * tau)
    assert np.max(np.abs(y - exact(t))) < 1e-3


def test_integrator_of_unit_input_for_one_second():
    assert step_block(Integrator(1.0), 1.0, 1e-3, steps=1000) == pytest.approx(1.0, abs=1e-3)


def test_low_pass_example_at_one_time_constant():
    assert step_block(LowPass(1.0, 0.1), 1.0, 1e-4, steps=1000) == pytest.approx(1 - math.exp(-1), abs=1e-3)


def test_static_blocks():
    assert step_block(Limiter(0.0, 1.0), 1.5, 1e-3) == pytest.approx(1.0)
    assert step_block(Limiter(0.0, 1.0), -0.5, 1e-3) == pytest.approx(0.0)
    assert step_block(Gain(-3.0), 2.0, 1e-3) == pytest.approx(-6.0)
    assert step_block(Adder((1.0, -2.0), bias=0.5), 2.0, 1e-3) == pytest.approx(-1.5)
    sat = Saturation(0.0039, 1.555)
    assert step_block(sat, 3.0, 1e-3) == pytest.approx(saturation_se(3.0, 0.0039, 1.555) * 3.0)


def test_lead_lag_sum_equals_direct_form():
    prims = [VoltageSource("U", "u", "0", Sine(1.0, 3.0, 0.4, offset=0.2))]
    prims += LeadLag(0.07, 0.02).primitives("sum", "u", 1.2)
    prims += LeadLagDirect(0.07, 0.02).primitives("direct", "u", 1.2)
    res = run_transient(Circuit(prims), config=SolverConfig(t_end=1.0, lte_tol=1e-4),
                        probes=[Probe("sum", "sum"), Probe("direct", "direct")])
    assert np.max(np.abs(res.values["sum"] - res.values["direct"])) < 1e-9


def test_saturation_examples():
    assert saturation_se(2.0, 0.0, 1.555) == 0.0
    assert saturation_se(0.0, 0.0, 3.0) == 0.0
    assert saturation_se(1.7, 0.1, 0.0) == 0.1
    # 0.0039 * e^4.665, evaluated independently
    assert saturation_se(3.0, 0.0039, 1.555) == pytest.approx(0.41404578236570, abs=1e-12)
    assert saturation_se(3.0, 1.0, 0.5, "quadratic") == pytest.approx(0.5 * 4.0 / 3.0)
    assert saturation_se(0.5, 1.0, 0.5, "quadratic") == 0.0
    with pytest.raises(ValueError):
        saturation_se(-1.0, 0.1, 0.1)


def test_block_parameters_are_validated():
    with pytest.raises(InvalidSpec):
        Limiter(1.0, 1.0)
    with pytest.raises(InvalidSpec):
        LowPass(1.0, 0.0).primitives("y", "u")
    with pytest.raises(InvalidSpec):
        Adder((1.0, 1.0)).primitives("y", ("u",))


GOV = IEEEG3Spec(tg=0.05, tp=0.04, uo=0.1, uc=-0.1, pmax=1.0, pmin=0.0, sigma=0.04, delta=0.3, tr=5.0, tw=1.0,
                 a11=0.5, a13=1.0, a21=1.5, a23=1.0)
EXC = DC1ASpec(ka=400, ta=0.02, ke=1.0, te=0.8, kf=0.03, tf=1.0, vrmax=7.0, vrmin=-7.0, a_ex=0.0039, b_ex=1.555,
               tr=0.02)


def test_governor_and_exciter_start_in_equilibrium():
    g = GeneratorSpec("G", "b", 200e6, 230e3, h=4.0, xd=1.8, xq=1.7, xdp=0.3, xqp=0.55, xdpp=0.25, xqpp=0.25,
                      td0p=8.0, tq0p=0.4, td0pp=0.03, tq0pp=0.05, p=0.5, q=0.1, v=1.02, d=2.0,
                      governor=GOV, exciter=EXC)
    s = initialize_generator(g)
    prims, _ = expand_generator(g, s)
    amp = g.v * g.v_base * math.sqrt(2.0 / 3.0)
    prims += [VoltageSource(f"V{ph}", f"b.{ph}", "0", Sine(amp, 50.0, -2 * math.pi / 3 * k))
              for k, ph in enumerate("abc")]
    probes = [Probe(k, f"G.{k}") for k in ("omega", "pm", "efd", "eqp")]
    res = run_transient(Circuit(prims), config=SolverConfig(t_end=1.0, fixed_dt=1e-3), probes=probes)
    assert np.max(np.abs(res.values["omega"] - 1.0)) < 1e-8
    assert np.max(np.abs(res.values["pm"] - s.pm)) < 1e-8
    assert np.max(np.abs(res.values["efd"] - s.efd)) < 1e-8
    assert np.max(np.abs(res.values["eqp"] - s.eqp)) < 1e-8


def test_governor_rejects_gate_outside_limits():
    with pytest.raises(InvalidSpec):
        GOV.build("gov", "w", pm0=1.5)


def test_exciter_rejects_regulator_outside_limits():
    with pytest.raises(InvalidSpec):
        DC1ASpec(ka=400, ta=0.02, ke=1.0, te=0.8, kf=0.03, tf=1.0, vrmax=1.0, vrmin=-1.0).build("exc", "vt", 2.0, 1.0)
