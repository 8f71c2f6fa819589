"""Command-line entry point.

    emtkit run CASE [CASE ...] [--fixed-dt S] [--t-end S] [--out DIR]
                   [--rms] [--emit-netlist] [--jobs N]

A single case writes into ``DIR``, several cases into ``DIR/<case name>/``:

* ``probes/<label>.csv``: one waveform per probe (``time,<label>``)
* ``dt.csv``: accepted step size against the time the step ended
* ``seq_<bus>.csv``: positive-sequence magnitude and angle of every bus
* ``netlist.cir`` with ``--emit-netlist``
* ``report.txt``: run statistics

Artifacts are staged and moved into place only when the run succeeds.
Exit status: 0 success, 1 usage, 2 case parse or validation error,
3 solver failure.  ``EMTKIT_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import Waveform, bus_positive_sequence, export_csv
from .casefile import build_scenario, emit_netlist, load_case
from .errors import CaseError, EmtError
from .solver import TransientEngine

log = logging.getLogger("emtkit")

EXIT_OK, EXIT_USAGE, EXIT_CASE, EXIT_SOLVER = 0, 1, 2, 3
SEQ_POINTS_PER_CYCLE = 20


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(text: str) -> float:
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text!r}")
    return v


def _jobs(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="emtkit", description="Electromagnetic-transient simulation of case files.")
    p.add_argument("--version", action="version", version=f"emtkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="simulate one or more case files")
    run.add_argument("cases", nargs="+", metavar="CASE")
    run.add_argument("--fixed-dt", type=_positive, metavar="S", help="fixed step size in seconds")
    run.add_argument("--t-end", type=_positive, metavar="S", help="override the end time in seconds")
    run.add_argument("--out", default="emtkit-out", metavar="DIR", help="output directory (default: %(default)s)")
    run.add_argument("--rms", action="store_true", help="report rms instead of peak phasor magnitudes")
    run.add_argument("--emit-netlist", action="store_true", help="also write the expanded primitive netlist")
    run.add_argument("--jobs", type=_jobs, default=1, metavar="N", help="cases simulated in parallel")
    return p


@dataclass
class Outcome:
    case: str
    status: int
    message: str = ""
    out_dir: str = ""


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in label)


def _write_artifacts(stage: Path, scenario, result, rms: bool, netlist: bool) -> None:
    (stage / "probes").mkdir()
    for w in result.waveforms():
        export_csv([w], stage / "probes" / f"{_safe(w.label)}.csv")
    export_csv([result.dt_trace()], stage / "dt.csv")
    f0 = scenario.case.frequency
    t_end = float(result.time[-1])
    if t_end - float(result.time[0]) >= 1.0 / f0:
        step = 1.0 / (SEQ_POINTS_PER_CYCLE * f0)
        for bus in scenario.case.buses:
            ps = bus_positive_sequence([result.waveform(f"{bus}.{ph}") for ph in "abc"], f0, step=step, rms=rms)
            export_csv([Waveform(ps.time, ps.magnitude, "magnitude"),
                        Waveform(ps.time, np.degrees(ps.angle), "angle_deg")],
                       stage / f"seq_{_safe(bus)}.csv")
    else:
        log.warning("run shorter than one cycle: no positive-sequence output")
    if netlist:
        (stage / "netlist.cir").write_text(emit_netlist(scenario.circuit))
    dt = result.dt
    lines = [
        f"case            {scenario.case.name or '-'}",
        f"t_end           {t_end!r} s",
        f"mode            {'fixed dt ' + repr(scenario.config.fixed_dt) if scenario.config.fixed_dt else 'adaptive'}",
        f"accepted steps  {result.accepted_steps}",
        f"rejected steps  {result.rejected_steps}",
        f"newton iters    {result.newton_iterations}",
        f"dt min/max      {float(dt.min()) if dt.size else 0.0!r} / {float(dt.max()) if dt.size else 0.0!r} s",
        f"events          {', '.join(repr(t) for t in result.event_times) or '-'}",
        f"wall time       {result.wall_time:.3f} s",
    ]
    (stage / "report.txt").write_text("\n".join(lines) + "\n")


def run_case(path: str, out: str, fixed_dt=None, t_end=None, rms=False, netlist=False, nested=False) -> Outcome:
    """Simulate one case file; artifacts appear only if the whole run succeeds."""
    _setup_logging()
    try:
        case = load_case(path)
    except OSError as exc:
        return Outcome(path, EXIT_USAGE, f"cannot read {path}: {exc.strerror or exc}")
    except CaseError as exc:
        return Outcome(path, EXIT_CASE, f"{path}: {exc}")
    overrides = {k: v for k, v in (("fixed_dt", fixed_dt), ("t_end", t_end)) if v is not None}
    try:
        scenario = build_scenario(case, **overrides)
    except CaseError as exc:
        return Outcome(path, EXIT_CASE, f"{path}: {exc}")
    except ValueError as exc:
        return Outcome(path, EXIT_CASE, f"{path}: {exc}")
    name = _safe(case.name or Path(path).stem)
    target = Path(out) / name if nested else Path(out)
    log.info("%s: %d primitives, %d events", path, len(scenario.circuit), len(scenario.events))
    try:
        engine = TransientEngine(scenario.circuit, scenario.config, scenario.events, scenario.probes)
        result = engine.run()
    except EmtError as exc:
        return Outcome(path, EXIT_SOLVER, f"{path}: solver failure: {exc}")
    log.info("%s: %d steps in %.2f s", path, result.accepted_steps, result.wall_time)
    target.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{name}-", dir=target.parent))
    try:
        _write_artifacts(stage, scenario, result, rms, netlist)
        if target.exists():
            shutil.rmtree(target)
        os.replace(stage, target)
    finally:
        if stage.exists():
            shutil.rmtree(stage, ignore_errors=True)
    return Outcome(path, EXIT_OK, f"{path}: {result.accepted_steps} steps -> {target}", str(target))


def _setup_logging() -> None:
    level = os.environ.get("EMTKIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    nested = len(args.cases) > 1
    if nested and len({Path(c).stem for c in args.cases}) < len(args.cases):
        log.warning("case names repeat; later runs overwrite earlier output directories")
    kw = dict(out=args.out, fixed_dt=args.fixed_dt, t_end=args.t_end, rms=args.rms,
              netlist=args.emit_netlist, nested=nested)
    if args.jobs > 1 and nested:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_run_kw, [(c, kw) for c in args.cases]))
    else:
        outcomes = [run_case(c, **kw) for c in args.cases]
    status = EXIT_OK
    for o in outcomes:
        if o.status == EXIT_OK:
            print(o.message)
        else:
            print(o.message, file=sys.stderr)
        status = max(status, o.status)
    return status


def _run_kw(item):
    path, kw = item
    return run_case(path, **kw)


if __name__ == "__main__":
    sys.exit(main())
