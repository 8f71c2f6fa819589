"""Post-processing: fundamental phasors, symmetrical components, CSV and run comparison.

Phasor convention: magnitudes are peak values and angles are measured
against ``cos(2π f0 t)`` on the absolute time axis, so ``cos`` reads 0° and
``sin`` reads -90°.  Divide by √2 (``rms=True``) for rms magnitudes.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import WindowOutOfRange

A = complex(-0.5, math.sqrt(3.0) / 2.0)  # e^{j2π/3}
SAMPLES_PER_CYCLE = 128


@dataclass(frozen=True)
class Waveform:
    time: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.time, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise ValueError(f"{self.label}: time and values must be 1-D of equal length")
        if t.size and np.any(np.diff(t) <= 0):
            raise ValueError(f"{self.label}: time must be strictly increasing")
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.time.size

    def at(self, t) -> np.ndarray:
        """Linear interpolation at ``t`` (held at the end values outside the span)."""
        return np.interp(t, self.time, self.values)


@dataclass(frozen=True)
class PhasorSeries:
    """Fundamental phasors from a sliding one-cycle window ending at each ``time``."""

    time: np.ndarray
    phasor: np.ndarray
    f0: float
    label: str = ""

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.phasor)

    @property
    def angle(self) -> np.ndarray:
        return np.angle(self.phasor)

    def magnitude_waveform(self, label: str | None = None) -> Waveform:
        return Waveform(self.time, self.magnitude, label or self.label)


def _check_window(w: Waveform, f0: float, t: np.ndarray) -> None:
    if not f0 > 0:
        raise ValueError("f0 must be > 0")
    if len(w) < 2:
        raise WindowOutOfRange(f"{w.label}: waveform has fewer than two samples")
    span = 1.0 / f0
    slack = 1e-9 * max(1.0, abs(w.time[-1]))
    lo, hi = float(np.min(t)) - span, float(np.max(t))
    if lo < w.time[0] - slack or hi > w.time[-1] + slack:
        raise WindowOutOfRange(
            f"{w.label}: window [{lo:.6g}, {hi:.6g}] s outside waveform span "
            f"[{w.time[0]:.6g}, {w.time[-1]:.6g}] s")


def _dft(w: Waveform, f0: float, t: np.ndarray, n: int) -> np.ndarray:
    span = 1.0 / f0
    k = np.arange(n) / n
    grid = t[:, None] - span + span * k[None, :]
    x = np.interp(grid, w.time, w.values)
    return (2.0 / n) * np.sum(x * np.exp(-2j * math.pi * f0 * grid), axis=1)


def fundamental_phasor(w: Waveform, f0: float, t: float, samples: int = SAMPLES_PER_CYCLE,
                       rms: bool = False) -> complex:
    """Single-bin DFT at ``f0`` over ``[t - 1/f0, t)``.

    The window is resampled to ``samples`` uniform points by linear
    interpolation of ``w``.
    """
    tt = np.array([float(t)])
    _check_window(w, f0, tt)
    ph = complex(_dft(w, f0, tt, samples)[0])
    return ph / math.sqrt(2.0) if rms else ph


def phasor_series(w: Waveform, f0: float, times: Sequence[float] | None = None, step: float | None = None,
                  samples: int = SAMPLES_PER_CYCLE, rms: bool = False) -> PhasorSeries:
    """Phasors at ``times`` (default: every ``step``, one cycle by default, from the
    first full cycle to the end of ``w``)."""
    if times is None:
        step = step or 1.0 / f0
        first = w.time[0] + 1.0 / f0
        count = int(math.floor((w.time[-1] - first) / step * (1 + 1e-12))) + 1
        t = first + step * np.arange(max(count, 0))
    else:
        t = np.asarray(times, dtype=float)
    if t.size:
        _check_window(w, f0, t)
        ph = _dft(w, f0, t, samples)
    else:
        ph = np.zeros(0, dtype=complex)
    if rms:
        ph = ph / math.sqrt(2.0)
    return PhasorSeries(t, ph, f0, w.label)


def positive_sequence(va, vb, vc):
    """``(va + a vb + a² vc) / 3``; works on scalars and arrays."""
    return (va + A * vb + A * A * vc) / 3.0


def negative_sequence(va, vb, vc):
    return (va + A * A * vb + A * vc) / 3.0


def zero_sequence(va, vb, vc):
    return (va + vb + vc) / 3.0


def bus_positive_sequence(waves: Sequence[Waveform], f0: float, times=None, step=None, rms=False,
                          label: str = "") -> PhasorSeries:
    """Positive-sequence phasor series of the three phase waveforms of a bus."""
    if len(waves) != 3:
        raise ValueError("need exactly three phase waveforms")
    series = [phasor_series(w, f0, times=times, step=step, rms=rms) for w in waves]
    return PhasorSeries(series[0].time, positive_sequence(*(s.phasor for s in series)), f0, label)


def rms_envelope(w: Waveform, f0: float, times=None, step=None, samples: int = SAMPLES_PER_CYCLE) -> Waveform:
    """True rms over a sliding one-cycle window."""
    if times is None:
        step = step or 1.0 / f0
        first = w.time[0] + 1.0 / f0
        count = int(math.floor((w.time[-1] - first) / step * (1 + 1e-12))) + 1
        t = first + step * np.arange(max(count, 0))
    else:
        t = np.asarray(times, dtype=float)
    _check_window(w, f0, t)
    span = 1.0 / f0
    grid = t[:, None] - span + span * (np.arange(samples) / samples)[None, :]
    x = np.interp(grid, w.time, w.values)
    return Waveform(t, np.sqrt(np.mean(x * x, axis=1)), w.label)


# ---------------------------------------------------------------------------
# CSV


def _common_time(waveforms: Sequence[Waveform]) -> np.ndarray:
    t = waveforms[0].time
    for w in waveforms[1:]:
        if w.time.shape != t.shape or not np.array_equal(w.time, t):
            raise ValueError("waveforms written to one CSV must share their time grid")
    return t


def export_csv(waveforms: Sequence[Waveform], path: str | os.PathLike) -> None:
    """Write ``time,<labels...>`` with shortest round-trip float formatting."""
    waveforms = list(waveforms)
    if not waveforms:
        raise ValueError("nothing to export")
    t = _common_time(waveforms)
    cols = [w.values for w in waveforms]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["time"] + [w.label for w in waveforms])
        for i in range(t.size):
            out.writerow([repr(float(t[i]))] + [repr(float(c[i])) for c in cols])


def read_csv(path: str | os.PathLike) -> list[Waveform]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "time":
        raise ValueError(f"{path}: missing 'time' header")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(rows[0]))
    return [Waveform(data[:, 0], data[:, k], label) for k, label in enumerate(rows[0][1:], start=1)]


# ---------------------------------------------------------------------------
# comparison


@dataclass
class Deviation:
    label: str
    max_abs: float
    rms: float


@dataclass
class ComparisonReport:
    deviations: list[Deviation] = field(default_factory=list)

    @property
    def max_abs(self) -> float:
        return max((d.max_abs for d in self.deviations), default=0.0)

    def __getitem__(self, label: str) -> Deviation:
        for d in self.deviations:
            if d.label == label:
                return d
        raise KeyError(label)

    def table(self) -> str:
        width = max([len(d.label) for d in self.deviations] + [6])
        lines = [f"{'signal':<{width}}  {'max_abs':>12}  {'rms':>12}"]
        lines += [f"{d.label:<{width}}  {d.max_abs:12.5g}  {d.rms:12.5g}" for d in self.deviations]
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["signal", "max_abs", "rms"])
        for d in self.deviations:
            out.writerow([d.label, repr(d.max_abs), repr(d.rms)])
        return buf.getvalue()


def _as_map(run) -> Mapping[str, Waveform]:
    if isinstance(run, Mapping):
        return run
    if hasattr(run, "waveforms"):
        run = run.waveforms()
    return {w.label: w for w in run}


def compare_runs(run_a, run_b, labels: Iterable[str] | None = None,
                 window: tuple[float, float] | None = None) -> ComparisonReport:
    """Max and rms deviation per common signal on the union of both time grids.

    Runs may be :class:`TransientResult` objects, lists of waveforms or
    label -> waveform mappings.  Only the overlap of the two spans (further
    restricted to ``window``) is compared.
    """
    a, b = _as_map(run_a), _as_map(run_b)
    names = list(labels) if labels is not None else [k for k in a if k in b]
    report = ComparisonReport()
    for name in names:
        wa, wb = a[name], b[name]
        lo = max(wa.time[0], wb.time[0])
        hi = min(wa.time[-1], wb.time[-1])
        if window is not None:
            lo, hi = max(lo, window[0]), min(hi, window[1])
        t = np.union1d(wa.time, wb.time)
        t = t[(t >= lo) & (t <= hi)]
        if t.size == 0:
            raise ValueError(f"{name}: runs do not overlap in time")
        d = wa.at(t) - wb.at(t)
        report.deviations.append(Deviation(name, float(np.max(np.abs(d))), float(np.sqrt(np.mean(d * d)))))
    return report
