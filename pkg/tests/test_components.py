import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emtkit.analysis import fundamental_phasor
from emtkit.circuit import (
    CCCS,
    DC,
    VCVS,
    Capacitor,
    Circuit,
    CurrentSource,
    Inductor,
    Layout,
    Resistor,
    Sine,
    Switch,
    VoltageSource,
)
from emtkit.components import (
    BreakerSpec,
    DeltaWyeBankSpec,
    NonIdealSourceSpec,
    PiLineSpec,
    SeriesRlcSpec,
    Transformer2WSpec,
    Transformer3WSpec,
    Winding,
    expand,
    ideal_coupling,
)
from emtkit.errors import InvalidSpec
from emtkit.solver import Probe, SolverConfig, dc_operating_point, run_transient


def test_pi_line_structure():
    prims, internal = expand(PiLineSpec("L1", "b1", "b2", r=1.0, l=0.01, c_total=2e-6))
    assert len(prims) == 12
    kinds = [type(p) for p in prims]
    assert kinds.count(Resistor) == 3 and kinds.count(Inductor) == 3 and kinds.count(Capacitor) == 6
    assert all(p.farads == 1e-6 for p in prims if isinstance(p, Capacitor))
    assert all(nd.startswith("L1.") for nd in internal)


def test_unit_ratio_transformer_has_unit_gains():
    spec = Transformer2WSpec("T", Winding("p", "0", 11e3, 11e3), Winding("s", "0", 11e3, 11e3))
    prims, _ = expand(spec)
    assert [p.gain for p in prims if isinstance(p, VCVS)] == [1.0, 1.0]
    assert [p.gain for p in prims if isinstance(p, CCCS)] == [-1.0, -1.0]


def test_three_winding_uses_three_coupling_pairs():
    spec = Transformer3WSpec("T3", Winding("a", "0", 2.0, 1.0), Winding("b", "0", 1.0, 1.0),
                             Winding("c", "0", 0.5, 1.0))
    prims, _ = expand(spec)
    assert sum(isinstance(p, VCVS) for p in prims) == 3
    assert sum(isinstance(p, CCCS) for p in prims) == 3


def _coupled(ratio, load):
    e, f = ideal_coupling(("p", "0"), ("s", "0"), ratio, "K")
    c = Circuit([VoltageSource("V1", "p", "0", DC(5.0)), e, f, Resistor("RL", "s", "0", load)])
    x = dc_operating_point(c)
    L = Layout.of(c)
    # the source branch current enters its + terminal
    return x[L.row("p")], x[L.row("s")], -x[L.branch("V1")]


def test_ideal_coupling_dc_example():
    v1, v2, i1 = _coupled(2.0, 10.0)
    assert v2 == pytest.approx(10.0, abs=1e-12)
    i2 = v2 / 10.0
    assert i2 == pytest.approx(1.0, abs=1e-12)
    assert i1 == pytest.approx(2.0, abs=1e-12)
    assert v1 * i1 == pytest.approx(v2 * i2, abs=1e-12)


def test_ideal_coupling_open_secondary_draws_nothing():
    e, f = ideal_coupling(("p", "0"), ("s", "0"), 0.5, "K")
    c = Circuit([VoltageSource("V1", "p", "0", DC(5.0)), e, f])
    x = dc_operating_point(c)
    L = Layout.of(c)
    assert x[L.row("s")] == pytest.approx(2.5)
    assert x[L.branch("V1")] == 0.0


def test_ideal_coupling_rejects_nonpositive_ratio():
    with pytest.raises(InvalidSpec):
        ideal_coupling(("p", "0"), ("s", "0"), 0.0)


@pytest.mark.parametrize("spec", [
    PiLineSpec("L", "a", "b", -1.0, 0.1, 0.0),
    PiLineSpec("L", "a", "b", 1.0, 0.0, 0.0),
    Transformer2WSpec("T", Winding("p", "0", 0.0, 1.0), Winding("s", "0", 1.0, 1.0)),
    Transformer2WSpec("T", Winding("p", "0", 1.0, 1.0), Winding("s", "0", 1.0, 1.0), r_mag=-5.0),
    SeriesRlcSpec("S", "a", "0", 0.0, 0.0, 0.0),
    NonIdealSourceSpec("G", "a", 1.0, 50.0),
    NonIdealSourceSpec("G", "a", 1.0, 50.0, l=0.1, sequence="cab"),
    BreakerSpec("B", "a", "b", r_on=2.0, r_off=1.0),
])
def test_invalid_specs_raise(spec):
    with pytest.raises(InvalidSpec):
        expand(spec)


specs = st.one_of(
    st.builds(PiLineSpec, st.just("L"), st.just("x"), st.just("y"), st.floats(0, 10), st.floats(1e-4, 1),
              st.floats(0, 1e-5)),
    st.builds(SeriesRlcSpec, st.just("S"), st.just("x"), st.sampled_from(["y", "0"]), st.floats(0.1, 10),
              st.floats(0, 1), st.floats(0, 1e-3)),
    st.builds(NonIdealSourceSpec, st.just("G"), st.just("x"), st.floats(0, 1e5), st.just(50.0),
              st.floats(-3, 3), st.floats(0.01, 1), st.floats(0, 0.1)),
    st.builds(DeltaWyeBankSpec, st.just("T"), st.just("x"), st.just("y"), st.floats(1, 1e5), st.floats(1, 1e5),
              r1=st.floats(0, 1), l1=st.floats(0, 0.1)),
)


@given(specs)
def test_expansion_is_deterministic_and_hermetic(spec):
    a, nodes_a = expand(spec)
    b, nodes_b = expand(spec)
    assert a == b and nodes_a == nodes_b
    assert len({p.name for p in a}) == len(a)
    external = {"x.a", "x.b", "x.c", "y.a", "y.b", "y.c", "0"}
    for p in a:
        for nd in (p.p, p.n):
            assert nd in external or nd in nodes_a


def _phasors(spec):
    prims, _ = expand(spec)
    return np.array([cmath.exp(1j * p.waveform.phase) for p in prims if isinstance(p, VoltageSource)])


def test_source_phases_are_120_degrees_apart():
    a = cmath.exp(2j * math.pi / 3)
    got = _phasors(NonIdealSourceSpec("G", "b", 100.0, 50.0, phase=0.2, l=0.01))
    assert np.allclose(got, cmath.exp(0.2j) * np.array([1, a * a, a]), atol=1e-12)
    got = _phasors(NonIdealSourceSpec("G", "b", 100.0, 50.0, l=0.01, sequence="acb"))
    assert np.allclose(got, [1, a, a * a], atol=1e-12)


def test_breaker_expands_to_three_switches():
    prims, _ = expand(BreakerSpec("CB", "x", "y", closed=False))
    assert [p.name for p in prims] == ["CB.a", "CB.b", "CB.c"]
    assert all(isinstance(p, Switch) and not p.closed for p in prims)


def test_delta_wye_bank_shifts_positive_sequence_by_30_degrees():
    f0 = 50.0
    prims, _ = expand(DeltaWyeBankSpec("T", "hv", "lv", 1.0, 1.0 / math.sqrt(3.0), r2=1e-3))
    c = Circuit(prims)
    for k, ph in enumerate("abc"):
        c.add(VoltageSource(f"V{ph}", f"hv.{ph}", "0", Sine(1.0, f0, -2 * math.pi / 3 * k)))
        c.add(Resistor(f"R{ph}", f"lv.{ph}", "0", 10.0))
    probes = [Probe(f"{bus}.{ph}", f"{bus}.{ph}") for bus in ("hv", "lv") for ph in "abc"]
    res = run_transient(c, config=SolverConfig(t_end=0.06, fixed_dt=1e-5), probes=probes)
    for ph in "abc":
        hv = fundamental_phasor(res.waveform(f"hv.{ph}"), f0, 0.06)
        lv = fundamental_phasor(res.waveform(f"lv.{ph}"), f0, 0.06)
        ratio = lv / hv
        assert math.degrees(cmath.phase(ratio)) == pytest.approx(30.0, abs=0.05)
        assert abs(ratio) == pytest.approx(10.0 / (10.0 + 1e-3), rel=1e-4)


def test_delta_wye_zero_sequence_circulates_in_the_delta():
    prims, _ = expand(DeltaWyeBankSpec("T", "hv", "lv", 1.0, 0.5, r1=0.1, l1=0.0, r2=0.01))
    c = Circuit(prims)
    for ph in "abc":
        c.add(VoltageSource(f"V{ph}", f"hv.{ph}", "0", DC(0.0)))
        c.add(CurrentSource(f"I{ph}", "0", f"lv.{ph}", DC(3.0)))
    x = dc_operating_point(c)
    L = Layout.of(c)
    line = np.array([x[L.branch(f"V{ph}")] for ph in "abc"])
    winding = np.array([x[L.branch(f"T.{ph}.K1.E")] for ph in "abc"])
    assert np.max(np.abs(line)) < 1e-9 * 3.0
    # the delta windings themselves do carry the circulating current
    assert np.all(np.abs(winding) > 1.0)


def test_pi_line_dc_is_a_series_resistance():
    prims, _ = expand(PiLineSpec("L", "s", "r", 2.0, 0.1, 1e-6, phases=("a",)))
    c = Circuit(prims + [VoltageSource("V", "s.a", "0", DC(10.0)), Resistor("RL", "r.a", "0", 3.0)])
    x = dc_operating_point(c)
    assert x[Layout.of(c).row("r.a")] == pytest.approx(6.0, abs=1e-12)
