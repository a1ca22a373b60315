#!/usr/bin/env python3
"""
vflow
Two-phase compressible flow simulator with a certifier for dissipative
varifold solutions. Commands: simulate, certify, calibrate, convergence,
prox-table
"""

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config_manager import Scenario, emit_scenario, emit_tolerances, get_scenario_manager, refine
from errors import ParseError, SelfIntersection, VFlowError
from history import SnapshotSeries, atomic_write_text
from logger import log_certify_result, log_error, log_info, log_run_start, log_run_stop, run_log
from physics.certify import calibrate_tolerances, certify_all
from physics.dynamics import DIAGNOSTIC_COLUMNS, diagnostics_row, hypothesis_check, iterate
from physics.rheology import (
    DissipationPotential,
    compose,
    eval_potential,
    potential_from_spec,
    prox,
    tensor_norm,
)


EXIT_OK = 0
EXIT_PARSE = 2
EXIT_TOPOLOGY = 3
EXIT_NUMERIC = 4
EXIT_CERTIFY_FAIL = 5

DEFAULT_PROX_EPS = (1.0, 0.1, 0.01)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def run_scenario(scenario: Scenario, out_dir: Path) -> int:
    """Run to t_end storing every snapshot_every-th state; returns an exit code"""
    with run_log(out_dir, mode='w'):
        return _run_to_end(scenario, out_dir)


def _run_to_end(scenario: Scenario, out_dir: Path) -> int:
    name = str(out_dir)
    log_run_start(name, scenario.grid.n, scenario.step.dt, scenario.step.t_end)
    series = SnapshotSeries.create(out_dir, emit_scenario(scenario), scenario.step.eps, scenario.grid.n)
    state = scenario.initial_state()
    series.append(state)
    rows = [diagnostics_row(state)]
    last_stored = state.step_index
    status, code, stop_time = 'completed', EXIT_OK, None
    try:
        for state in iterate(state, scenario.step, scenario.model):
            rows.append(diagnostics_row(state))
            if state.step_index % scenario.snapshot_every == 0:
                series.append(state)
                last_stored = state.step_index
    except SelfIntersection as e:
        status, code = 'topology_stop', EXIT_TOPOLOGY
        stop_time = e.time if e.time is not None else state.time
    except VFlowError as e:
        log_error(f"{name}: {e}")
        status, code, stop_time = 'numeric_failure', EXIT_NUMERIC, state.time
    if state.step_index != last_stored:
        series.append(state)
    series.write_diagnostics(DIAGNOSTIC_COLUMNS, rows)
    series.finalize(status, stop_time)
    log_run_stop(name, status, state.time if stop_time is None else stop_time)
    return code


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = get_scenario_manager().load(args.scenario)
    out_dir = Path(args.out) if args.out else scenario.output_dir
    report = hypothesis_check(scenario.model, scenario.step)
    print(report.summary())
    code = run_scenario(scenario, out_dir)
    print(f"series written to {out_dir} (exit {code})")
    return code


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------

def cmd_certify(args: argparse.Namespace) -> int:
    series = SnapshotSeries.open(Path(args.series))
    trajectory = series.load_trajectory()
    seed = args.seed if args.seed is not None else series.scenario().seed
    tolerances = get_scenario_manager().load_tolerances(args.tolerances) if args.tolerances else None
    out_dir = Path(args.out) if args.out else series.series_dir
    with run_log(out_dir):
        report = certify_all(trajectory, args.tests, seed, tolerances)
        atomic_write_text(out_dir / 'certify_report.txt', report.to_text())
        atomic_write_text(out_dir / 'certify_report.csv', report.to_csv())
        log_certify_result(str(series.series_dir), report.verdict, report.failed_clauses)
    print(report.to_text())
    return EXIT_OK if report.verdict else EXIT_CERTIFY_FAIL


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

DEFAULT_CALIBRATION_SAFETY = 10.0


def calibrate_series(series_dirs: Sequence[Path], n_tests: int,
                     safety: float = DEFAULT_CALIBRATION_SAFETY) -> Tuple[Dict[str, float], List[Dict[str, object]]]:
    """Tolerance constants fitted on reference series whose exact residuals vanish"""
    reports, references = [], []
    for path in series_dirs:
        series = SnapshotSeries.open(Path(path))
        trajectory = series.load_trajectory()
        seed = series.scenario().seed
        reports.append(certify_all(trajectory, n_tests, seed))
        references.append({'series': str(series.series_dir), 'seed': seed, 'n': trajectory.grid.n,
                           'h': trajectory.h, 'dt_snap': trajectory.dt_snap})
    constants = calibrate_tolerances(reports, safety)
    log_info("calibrated tolerances: " + ', '.join(f"{k}={v:.3e}" for k, v in sorted(constants.items())))
    return constants, references


def cmd_calibrate(args: argparse.Namespace) -> int:
    constants, references = calibrate_series(args.series, args.tests, args.safety)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out, emit_tolerances(constants, references, args.tests, args.safety))
    for clause, value in sorted(constants.items()):
        print(f"{clause}: {value:.6g}")
    print(f"tolerances written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------

CONVERGENCE_COLUMNS = ('transport', 'mass', 'energy')


def fitted_order(h: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log error against log h; nan when an error vanishes"""
    errors = np.asarray(errors, dtype=float)
    if len(errors) < 2 or np.any(errors <= 0):
        return math.nan
    slope, _ = np.polyfit(np.log(np.asarray(h, dtype=float)), np.log(errors), 1)
    return float(slope)


def convergence_study(base: Scenario, levels: int, n_tests: int) -> List[Dict[str, float]]:
    rows = []
    for level in range(levels):
        scenario = refine(base, level)
        code = run_scenario(scenario, scenario.output_dir)
        if code != EXIT_OK:
            raise VFlowError(f"refinement level {level} stopped with exit code {code}")
        series = SnapshotSeries.open(scenario.output_dir)
        report = certify_all(series.load_trajectory(), n_tests, scenario.seed)
        with open(scenario.output_dir / SnapshotSeries.DIAGNOSTICS_FILENAME, 'r', encoding='utf-8') as f:
            balance = [float(r['balance_residual']) for r in csv.DictReader(f)]
        row = {'level': level, 'n': scenario.grid.n, 'h': scenario.grid.h, 'dt': scenario.step.dt}
        for clause in ('transport', 'mass'):
            row[clause] = max((abs(r.residual) for r in report.clause_rows(clause)), default=0.0)
        row['energy'] = max(0.0, max(balance))
        rows.append(row)
        log_info(f"convergence level {level}: " + ', '.join(f"{c}={row[c]:.3e}" for c in CONVERGENCE_COLUMNS))
    return rows


def convergence_csv(rows: List[Dict[str, float]]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['level', 'n', 'h', 'dt'] + list(CONVERGENCE_COLUMNS))
    for row in rows:
        writer.writerow([row['level'], row['n'], repr(row['h']), repr(row['dt'])]
                        + [repr(row[c]) for c in CONVERGENCE_COLUMNS])
    h = [row['h'] for row in rows]
    writer.writerow(['order', '', '', ''] + [repr(fitted_order(h, [row[c] for row in rows]))
                                             for c in CONVERGENCE_COLUMNS])
    return out.getvalue()


def cmd_convergence(args: argparse.Namespace) -> int:
    base = get_scenario_manager().load(args.scenario)
    rows = convergence_study(base, args.levels, args.tests)
    text = convergence_csv(rows)
    path = base.output_dir / 'convergence.csv'
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, text)
    print(text, end='')
    return EXIT_OK


# ---------------------------------------------------------------------------
# prox-table
# ---------------------------------------------------------------------------

PROX_DIRECTIONS = {
    'trace': (1.0, 0.0, 0.0),
    'deviatoric': (0.0, 1.0, 0.0),
    'shear': (0.0, 0.0, 1.0),
}


def _sample_tensors(max_magnitude: float, count: int) -> List[tuple]:
    """(direction, magnitude, d) along unit rays in the (trace, deviatoric, shear) coordinates"""
    samples = []
    for direction, (t, p, q) in PROX_DIRECTIONS.items():
        for s in np.linspace(0.0, max_magnitude, count):
            # every ray has |d| = s
            d = compose(np.array(s * p / math.sqrt(2.0)), np.array(s * q / math.sqrt(2.0)),
                        np.array(math.sqrt(2.0) * t * s))
            samples.append((direction, float(s), d))
    return samples


def prox_table(potentials: Dict[str, DissipationPotential], eps_values: Sequence[float],
               max_magnitude: float = 4.0, count: int = 9) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['potential', 'direction', 'magnitude', 'dxx', 'dxy', 'dyy', 'eps', 'F', 'F_eps', 'stress_norm'])
    for name, f in potentials.items():
        for direction, magnitude, d in _sample_tensors(max_magnitude, count):
            value = eval_potential(f, d)
            for eps in eps_values:
                result = prox(f, d, eps)
                writer.writerow([
                    name, direction, repr(magnitude),
                    repr(float(d[0])), repr(float(d[1])), repr(float(d[2])),
                    repr(float(eps)), repr(float(value)), repr(float(result.envelope_value)),
                    repr(float(tensor_norm(result.stress))),
                ])
    return out.getvalue()


def _load_potentials(path: Path) -> Dict[str, DissipationPotential]:
    text = Path(path).read_text(encoding='utf-8')
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.lineno, e.msg) from e
    if isinstance(document, dict) and 'family' in document:
        try:
            return {'F': potential_from_spec(document)}
        except (KeyError, ValueError, TypeError) as e:
            raise ParseError(1, f"potential: {e}") from e
    scenario = get_scenario_manager().load(path)
    return {'F1': scenario.model.potentials.f1, 'F2': scenario.model.potentials.f2}


def cmd_prox_table(args: argparse.Namespace) -> int:
    potentials = _load_potentials(Path(args.source))
    eps_values = args.eps or list(DEFAULT_PROX_EPS)
    text = prox_table(potentials, eps_values, args.max_magnitude, args.samples)
    if args.out:
        atomic_write_text(Path(args.out), text)
    else:
        print(text, end='')
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='vflow', description="Two-phase compressible flow simulator and certifier")
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', help="run a scenario and store a snapshot series")
    simulate.add_argument('scenario', help="scenario JSON file")
    simulate.add_argument('--out', help="series directory (default: output.dir of the scenario)")
    simulate.set_defaults(handler=cmd_simulate)

    certify = commands.add_parser('certify', help="check a stored series against the solution clauses")
    certify.add_argument('series', help="series directory or its manifest.json")
    certify.add_argument('--tests', type=int, default=50, help="random test functions (default 50)")
    certify.add_argument('--seed', type=int, default=None, help="seed (default: output.seed of the scenario)")
    certify.add_argument('--out', help="report directory (default: the series directory)")
    certify.add_argument('--tolerances', help="calibration file from the calibrate command")
    certify.set_defaults(handler=cmd_certify)

    calibrate = commands.add_parser('calibrate', help="fit tolerance constants on reference series")
    calibrate.add_argument('series', nargs='+', help="reference series directories")
    calibrate.add_argument('--tests', type=int, default=50, help="random test functions (default 50)")
    calibrate.add_argument('--safety', type=float, default=DEFAULT_CALIBRATION_SAFETY,
                           help="factor over the worst observed ratio (default 10)")
    calibrate.add_argument('--out', default='tolerances.json', help="calibration file (default tolerances.json)")
    calibrate.set_defaults(handler=cmd_calibrate)

    convergence = commands.add_parser('convergence', help="residuals under simultaneous h and dt refinement")
    convergence.add_argument('scenario', help="scenario JSON file")
    convergence.add_argument('--levels', type=int, default=3)
    convergence.add_argument('--tests', type=int, default=10)
    convergence.set_defaults(handler=cmd_convergence)

    table = commands.add_parser('prox-table', help="potential, Moreau envelope and stress on sample tensors")
    table.add_argument('source', help="potential spec JSON or scenario JSON")
    table.add_argument('--eps', type=float, nargs='+', help="Moreau parameters (default 1 0.1 0.01)")
    table.add_argument('--max-magnitude', type=float, default=4.0)
    table.add_argument('--samples', type=int, default=9)
    table.add_argument('--out', help="CSV file (default: stdout)")
    table.set_defaults(handler=cmd_prox_table)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point"""
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        log_error(f"parse error: {e}")
        return EXIT_PARSE
    except VFlowError as e:
        print(f"error: {e}", file=sys.stderr)
        log_error(str(e))
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
