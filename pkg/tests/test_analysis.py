import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emtkit.analysis import (
    A,
    Waveform,
    bus_positive_sequence,
    compare_runs,
    export_csv,
    fundamental_phasor,
    negative_sequence,
    phasor_series,
    positive_sequence,
    read_csv,
    rms_envelope,
    zero_sequence,
)
from emtkit.circuit import DC, Circuit, Inductor, Resistor, Switch, VoltageSource
from emtkit.errors import WindowOutOfRange
from emtkit.solver import Probe, SimEvent, SolverConfig, run_transient

F0 = 50.0


def _sampled(fn, t_end=0.1, n=5001):
    t = np.linspace(0.0, t_end, n)
    return Waveform(t, fn(t), "w")


def test_cosine_reads_zero_degrees():
    ph = fundamental_phasor(_sampled(lambda t: np.cos(2 * np.pi * F0 * t)), F0, 0.05)
    assert abs(ph) == pytest.approx(1.0, abs=1e-3)
    assert cmath.phase(ph) == pytest.approx(0.0, abs=1e-3)


def test_sine_reads_minus_ninety_degrees():
    ph = fundamental_phasor(_sampled(lambda t: np.sin(2 * np.pi * F0 * t)), F0, 0.05)
    assert abs(ph) == pytest.approx(1.0, abs=1e-3)
    assert math.degrees(cmath.phase(ph)) == pytest.approx(-90.0, abs=0.1)


def test_third_harmonic_is_rejected():
    w = _sampled(lambda t: np.cos(2 * np.pi * F0 * t) + 0.2 * np.cos(2 * np.pi * 3 * F0 * t))
    assert abs(fundamental_phasor(w, F0, 0.07)) == pytest.approx(1.0, abs=1e-3)


def test_rms_scaling():
    w = _sampled(lambda t: 3.0 * np.cos(2 * np.pi * F0 * t + 0.4))
    peak = fundamental_phasor(w, F0, 0.05)
    assert fundamental_phasor(w, F0, 0.05, rms=True) == pytest.approx(peak / math.sqrt(2.0))
    env = rms_envelope(w, F0, step=0.01)
    assert np.allclose(env.values, 3.0 / math.sqrt(2.0), rtol=1e-3)


def test_window_outside_span():
    w = _sampled(lambda t: np.cos(2 * np.pi * F0 * t))
    with pytest.raises(WindowOutOfRange):
        fundamental_phasor(w, F0, 0.01)
    with pytest.raises(WindowOutOfRange):
        fundamental_phasor(w, F0, 0.2)
    with pytest.raises(WindowOutOfRange):
        phasor_series(w, F0, times=[0.05, 0.15])


def test_phasor_series_tracks_a_step_in_amplitude():
    w = _sampled(lambda t: np.where(t < 0.05, 1.0, 2.0) * np.cos(2 * np.pi * F0 * t), t_end=0.12, n=12001)
    ps = phasor_series(w, F0, step=0.01)
    assert ps.time[0] == pytest.approx(0.02)
    assert ps.magnitude[0] == pytest.approx(1.0, abs=1e-3)
    assert ps.magnitude[-1] == pytest.approx(2.0, abs=1e-3)


def test_sequence_examples():
    bal = (1.0, cmath.rect(1.0, -2 * math.pi / 3), cmath.rect(1.0, 2 * math.pi / 3))
    assert positive_sequence(*bal) == pytest.approx(1.0, abs=1e-15)
    assert abs(negative_sequence(*bal)) < 1e-15
    assert abs(positive_sequence(1.0, 1.0, 1.0)) < 1e-15
    assert zero_sequence(1.0, 1.0, 1.0) == pytest.approx(1.0)
    v1 = positive_sequence(1.0, cmath.rect(0.5, -2 * math.pi / 3), cmath.rect(0.5, 2 * math.pi / 3))
    assert v1 == pytest.approx(2.0 / 3.0, abs=1e-15)


cplx = st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False)


@given(st.tuples(cplx, cplx, cplx), st.tuples(cplx, cplx, cplx), cplx, cplx)
def test_positive_sequence_is_linear(x, y, alpha, beta):
    mixed = [alpha * a + beta * b for a, b in zip(x, y)]
    lhs = positive_sequence(*mixed)
    rhs = alpha * positive_sequence(*x) + beta * positive_sequence(*y)
    scale = max(1.0, abs(alpha) * max(map(abs, x)) + abs(beta) * max(map(abs, y)))
    assert abs(lhs - rhs) <= 1e-12 * scale


def test_a_operator():
    assert A ** 3 == pytest.approx(1.0)
    assert 1 + A + A * A == pytest.approx(0.0, abs=1e-15)


def test_bus_sequence_of_a_balanced_set():
    t = np.linspace(0.0, 0.06, 6001)
    waves = [Waveform(t, 2.0 * np.cos(2 * np.pi * F0 * t - 2 * np.pi / 3 * k), ph) for k, ph in enumerate("abc")]
    ps = bus_positive_sequence(waves, F0, step=0.005)
    assert np.allclose(ps.magnitude, 2.0, rtol=1e-3)


def test_csv_layout(tmp_path):
    path = tmp_path / "w.csv"
    export_csv([Waveform([0.0, 1e-5, 3e-5], [1.0, -2.5, 0.1], "V(a)")], path)
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == "time,V(a)"
    assert lines[3] == "3e-05,0.1"


@given(st.lists(st.floats(-1e300, 1e300, allow_nan=False, allow_subnormal=True), min_size=1, max_size=40))
def test_csv_round_trip_is_bit_exact(values):
    import tempfile
    from pathlib import Path

    t = np.cumsum(np.linspace(1e-7, 3e-3, len(values)))
    w = Waveform(t, values, "x")
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "x.csv"
        export_csv([w, Waveform(t, -np.asarray(values), "y")], path)
        back = read_csv(path)
    assert [b.label for b in back] == ["x", "y"]
    assert np.array_equal(back[0].time, t) and np.array_equal(back[0].values, w.values)
    assert np.array_equal(back[1].values, -w.values)


def test_csv_rejects_mismatched_grids(tmp_path):
    with pytest.raises(ValueError):
        export_csv([Waveform([0.0, 1.0], [0.0, 0.0], "a"), Waveform([0.0, 2.0], [0.0, 0.0], "b")],
                   tmp_path / "x.csv")
    with pytest.raises(ValueError):
        export_csv([], tmp_path / "x.csv")


def test_waveform_invariants():
    with pytest.raises(ValueError):
        Waveform([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        Waveform([0.0, 1.0], [1.0])


def _rl(config):
    c = Circuit([VoltageSource("V", "a", "0", DC(1.0)), Switch("S", "a", "b", closed=False),
                 Resistor("R", "b", "c", 2.0), Inductor("L", "c", "0", 4e-3)])
    return run_transient(c, [SimEvent(0.0, "switch_close", "S")], config, probes=[Probe("i", "L", kind="i")])


def test_identical_runs_compare_to_zero():
    a = _rl(SolverConfig(t_end=0.01, lte_tol=1e-3))
    rep = compare_runs(a, a)
    assert rep.max_abs == 0.0 and rep["i"].rms == 0.0
    assert "signal" in rep.table() and rep.to_csv().startswith("signal,max_abs,rms\n")


def test_adaptive_rl_against_fine_fixed_reference():
    tol = 1e-3
    adaptive = _rl(SolverConfig(t_end=0.01, lte_tol=tol))
    reference = _rl(SolverConfig(t_end=0.01, fixed_dt=1e-7))
    assert compare_runs(adaptive, reference)["i"].max_abs < 10 * tol


def test_compare_restricts_to_overlap_and_window():
    t1 = np.linspace(0.0, 1.0, 11)
    t2 = np.linspace(0.5, 2.0, 7)
    a = [Waveform(t1, t1, "x")]
    b = [Waveform(t2, t2 + np.where(t2 > 0.9, 1.0, 0.0), "x")]
    assert compare_runs(a, b, window=(0.5, 0.75))["x"].max_abs == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        compare_runs(a, [Waveform([3.0, 4.0], [0.0, 0.0], "x")])
