"""
Config Manager for vflow
Scenario files in JSON format: defaults, validation with located errors,
canonical serialisation and the thread cap for the spectral transforms
"""

import copy
import json
import math
import os
import re
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from errors import OutOfRange, ParseError

if TYPE_CHECKING:
    from physics.dynamics import Model, SimState, StepConfig
    from physics.fields import PeriodicGrid, ScalarField, VectorField
    from physics.interface import MarkerCurve


# Default scenario; None marks a required value
DEFAULT_SCENARIO = {
    'grid': {
        'n': 64,
    },
    'step': {
        'dt': None,
        't_end': None,
        'N': None,  # None = n // 4
        'eps': 1e-3,
        'delta': 'auto',
        'm': 5,
        'kappa': 0.0,
    },
    'characteristics': {
        'substeps': 2,
        'max_displacement': 0.05,
    },
    'potentials': {
        'f1': None,
        'f2': None,  # None = same as f1
        'comparability_k': None,
    },
    'pressures': {
        'p1': None,
        'p2': None,  # None = same as p1
    },
    'initial': {
        'density': {'constant': 1.0, 'modes': []},
        'velocity': {'modes': []},
        'interface': {'kind': 'none', 'phase': 1},
    },
    'bounds': {
        'rho_lo': None,  # None = min of the initial density
        'rho_hi': None,
    },
    'output': {
        'snapshot_every': 10,
        'dir': 'runs/out',
        'seed': 0,
    },
}

INTERFACE_KEYS = {
    'none': {'kind', 'phase'},
    'circle': {'kind', 'center', 'radius', 'markers'},
    'ellipse': {'kind', 'center', 'a', 'b', 'angle', 'markers'},
    'polygon': {'kind', 'points', 'spacing'},
}


def get_thread_count() -> int:
    """Worker threads for scipy.fft, capped by VFLOW_THREADS (default 1)"""
    raw = os.environ.get('VFLOW_THREADS', '').strip()
    if not raw:
        return 1
    try:
        count = int(raw)
    except ValueError:
        return 1
    return max(1, count)


# ---------------------------------------------------------------------------
# located errors
# ---------------------------------------------------------------------------

def _line_of(text: Optional[str], path: Sequence[str]) -> int:
    """Line of the innermost key of path found in document order; 0 without text"""
    if not text:
        return 0
    pos = 0
    for key in path:
        match = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if match is None:
            break
        pos = match.start()
    return text.count('\n', 0, pos) + 1


@contextmanager
def _located(text: Optional[str], *path: str) -> Iterator[None]:
    try:
        yield
    except ParseError:
        raise
    except KeyError as e:
        raise ParseError(_line_of(text, path), f"{'.'.join(path)}: missing key {e}") from e
    except (ValueError, TypeError, OutOfRange, OSError) as e:
        raise ParseError(_line_of(text, path), f"{'.'.join(path)}: {e}") from e


def _merge(defaults: Dict[str, Any], loaded: Dict[str, Any], text: Optional[str]) -> Dict[str, Any]:
    """Two-level merge of the user document over DEFAULT_SCENARIO"""
    if not isinstance(loaded, dict):
        raise ParseError(1, "scenario must be a JSON object")
    merged = copy.deepcopy(defaults)
    for section, values in loaded.items():
        if section not in defaults:
            raise ParseError(_line_of(text, [section]), f"unknown section '{section}'")
        if not isinstance(values, dict):
            raise ParseError(_line_of(text, [section]), f"section '{section}' must be an object")
        for key, value in values.items():
            if key not in defaults[section]:
                raise ParseError(_line_of(text, [section, key]), f"unknown key '{section}.{key}'")
            merged[section][key] = value
    for section, values in merged.items():
        for key, value in values.items():
            if value is None and key in ('dt', 't_end', 'f1', 'p1'):
                raise ParseError(_line_of(text, [section]), f"missing required key '{section}.{key}'")
    return merged


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Scenario:
    """Validated scenario; equality is equality of the canonical documents"""
    document: Dict[str, Any]
    grid: 'PeriodicGrid'
    step: 'StepConfig'
    model: 'Model'
    curve: Optional['MarkerCurve']
    phase: float
    rho_bounds: Tuple[float, float]
    snapshot_every: int
    output_dir: Path
    seed: int
    base_dir: Path

    def __eq__(self, other) -> bool:
        return isinstance(other, Scenario) and self.document == other.document

    __hash__ = None

    def initial_density(self) -> 'ScalarField':
        from physics.fields import ScalarField
        return ScalarField.from_function(self.grid, lambda x, y: _density_values(self.document, x, y))

    def initial_velocity(self) -> 'VectorField':
        from physics.fields import VectorField
        return VectorField.from_function(self.grid, lambda x, y: _velocity_values(self.document, x, y))

    def initial_state(self) -> 'SimState':
        from physics.dynamics import initial_state
        return initial_state(self.initial_density(), self.initial_velocity(), self.model, self.step,
                             curve=self.curve, phase=self.phase)


def _modes(spec: Dict[str, Any], vector: bool) -> List[Tuple[np.ndarray, Any, float]]:
    modes = []
    for mode in spec.get('modes', []):
        unknown = set(mode) - {'k', 'amplitude', 'phase'}
        if unknown:
            raise ValueError(f"unknown mode keys: {', '.join(sorted(unknown))}")
        k = np.asarray(mode['k'], dtype=float)
        if k.shape != (2,) or np.any(k != np.round(k)):
            raise ValueError(f"mode wavevector must be two integers, got {mode['k']}")
        amplitude = np.asarray(mode['amplitude'], dtype=float)
        if vector and amplitude.shape != (2,):
            raise ValueError(f"velocity mode amplitude must be a pair, got {mode['amplitude']}")
        if not vector and amplitude.shape != ():
            raise ValueError(f"density mode amplitude must be a number, got {mode['amplitude']}")
        modes.append((k, amplitude, float(mode.get('phase', 0.0))))
    return modes


def _density_values(doc: Dict[str, Any], x, y):
    spec = doc['initial']['density']
    value = float(spec['constant']) + 0.0 * x
    for k, amplitude, phase in _modes(spec, vector=False):
        value = value + amplitude * np.sin(2.0 * np.pi * (k[0] * x + k[1] * y) + phase)
    return value


def _velocity_values(doc: Dict[str, Any], x, y):
    ux, uy = 0.0 * x, 0.0 * x
    for k, amplitude, phase in _modes(doc['initial']['velocity'], vector=True):
        wave = np.sin(2.0 * np.pi * (k[0] * x + k[1] * y) + phase)
        ux = ux + amplitude[0] * wave
        uy = uy + amplitude[1] * wave
    return ux, uy


def _build_interface(spec: Dict[str, Any], grid) -> Tuple[Any, float, Dict[str, Any]]:
    from physics.interface import circle, count_for, ellipse, polygon

    kind = spec.get('kind')
    if kind not in INTERFACE_KEYS:
        raise ValueError(f"unknown interface kind {kind!r} (circle, ellipse, polygon or none)")
    unknown = set(spec) - INTERFACE_KEYS[kind]
    if unknown:
        raise ValueError(f"unknown keys for {kind} interface: {', '.join(sorted(unknown))}")
    canonical = dict(spec)
    if kind == 'none':
        phase = float(spec.get('phase', 1))
        if phase not in (0.0, 1.0):
            raise ValueError(f"single-phase indicator must be 0 or 1, got {phase}")
        canonical['phase'] = int(phase)
        return None, phase, canonical
    if kind == 'circle':
        radius = float(spec['radius'])
        if not 0 < radius < 0.5:
            raise ValueError(f"circle radius must lie in (0, 0.5), got {radius}")
        markers = int(spec.get('markers') or count_for(2.0 * math.pi * radius, grid.h))
        canonical.update(center=[float(c) for c in spec['center']], radius=radius, markers=markers)
        return circle(canonical['center'], radius, markers), 1.0, canonical
    if kind == 'ellipse':
        a, b = float(spec['a']), float(spec['b'])
        angle = float(spec.get('angle', 0.0))
        # Ramanujan's perimeter approximation for the default marker count
        length = math.pi * (3 * (a + b) - math.sqrt((3 * a + b) * (a + 3 * b)))
        markers = int(spec.get('markers') or count_for(length, grid.h))
        canonical.update(center=[float(c) for c in spec['center']], a=a, b=b, angle=angle, markers=markers)
        return ellipse(canonical['center'], a, b, angle, markers), 1.0, canonical
    spacing = float(spec.get('spacing') or grid.h)
    points = [[float(p[0]), float(p[1])] for p in spec['points']]
    canonical.update(points=points, spacing=spacing)
    return polygon(points, spacing), 1.0, canonical


def parse_document(loaded: Dict[str, Any], text: Optional[str] = None,
                   base_dir: Optional[Path] = None) -> Scenario:
    """Validate a decoded scenario document"""
    from physics.dynamics import Model, StepConfig, auto_delta
    from physics.fields import PeriodicGrid
    from physics.flowmap import CharacteristicConfig
    from physics.rheology import MixturePotential, potential_from_spec
    from physics.thermo import MixturePressure, pressure_from_spec

    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    doc = _merge(DEFAULT_SCENARIO, loaded, text)

    with _located(text, 'grid', 'n'):
        if not isinstance(doc['grid']['n'], int):
            raise ValueError(f"grid size must be an integer, got {doc['grid']['n']!r}")
        grid = PeriodicGrid(doc['grid']['n'])

    s = doc['step']
    with _located(text, 'step', 'N'):
        if s['N'] is None:
            s['N'] = grid.n // 4
        if not isinstance(s['N'], int):
            raise ValueError(f"band limit must be an integer, got {s['N']!r}")
    with _located(text, 'step', 'delta'):
        if s['delta'] == 'auto':
            delta = auto_delta(s['N'], int(s['m']))
        elif isinstance(s['delta'], (int, float)):
            delta = float(s['delta'])
        else:
            raise ValueError(f"delta must be a number or \"auto\", got {s['delta']!r}")
    with _located(text, 'step'):
        step = StepConfig(dt=float(s['dt']), N=s['N'], eps=float(s['eps']), delta=delta, m=int(s['m']),
                          kappa=float(s['kappa']), t_end=float(s['t_end']))
        if not step.t_end > 0:
            raise ValueError(f"t_end must be > 0, got {step.t_end}")
    with _located(text, 'step', 'N'):
        step.check_grid(grid)

    with _located(text, 'characteristics'):
        chars = CharacteristicConfig(substeps=int(doc['characteristics']['substeps']),
                                     max_displacement=float(doc['characteristics']['max_displacement']))

    pot = doc['potentials']
    with _located(text, 'potentials', 'f1'):
        f1 = potential_from_spec(pot['f1'])
    with _located(text, 'potentials', 'f2'):
        f2 = potential_from_spec(pot['f2']) if pot['f2'] is not None else f1
    with _located(text, 'potentials', 'comparability_k'):
        k = pot['comparability_k']
        potentials = MixturePotential(f1, f2, None if k is None else float(k))
    doc['potentials'] = {'f1': f1.to_spec(), 'f2': f2.to_spec(), 'comparability_k': potentials.comparability_k}

    pr = doc['pressures']
    with _located(text, 'pressures', 'p1'):
        p1 = pressure_from_spec(pr['p1'], base_dir)
    with _located(text, 'pressures', 'p2'):
        p2 = pressure_from_spec(pr['p2'], base_dir) if pr['p2'] is not None else p1
    doc['pressures'] = {'p1': p1.to_spec(), 'p2': p2.to_spec()}
    model = Model(potentials, MixturePressure(p1, p2), chars)

    with _located(text, 'initial', 'interface'):
        curve, phase, doc['initial']['interface'] = _build_interface(doc['initial']['interface'], grid)
    with _located(text, 'initial', 'density'):
        spec = doc['initial']['density']
        unknown = set(spec) - {'constant', 'modes'}
        if unknown:
            raise ValueError(f"unknown keys: {', '.join(sorted(unknown))}")
        spec.setdefault('constant', 1.0)
        spec.setdefault('modes', [])
        x, y = grid.coords
        rho0 = _density_values(doc, x, y)
        if np.any(rho0 <= 0):
            raise ValueError("initial density must be > 0 everywhere")
    with _located(text, 'initial', 'velocity'):
        spec = doc['initial']['velocity']
        unknown = set(spec) - {'modes'}
        if unknown:
            raise ValueError(f"unknown keys: {', '.join(sorted(unknown))}")
        spec.setdefault('modes', [])
        _velocity_values(doc, x, y)

    b = doc['bounds']
    with _located(text, 'bounds'):
        lo = float(rho0.min()) if b['rho_lo'] is None else float(b['rho_lo'])
        hi = float(rho0.max()) if b['rho_hi'] is None else float(b['rho_hi'])
        if not 0 < lo <= hi:
            raise ValueError(f"density bounds need 0 < rho_lo <= rho_hi, got {lo}, {hi}")
        if rho0.min() < lo or rho0.max() > hi:
            raise ValueError(f"initial density range [{rho0.min():g}, {rho0.max():g}] "
                             f"leaves [rho_lo, rho_hi] = [{lo:g}, {hi:g}]")

    out = doc['output']
    with _located(text, 'output'):
        every = out['snapshot_every']
        if not isinstance(every, int) or every < 1:
            raise ValueError(f"snapshot_every must be a positive integer, got {every!r}")
        seed = out['seed']
        if not isinstance(seed, int) or seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
        output_dir = Path(str(out['dir']))
        if not output_dir.is_absolute():
            output_dir = base_dir / output_dir

    return Scenario(
        document=doc,
        grid=grid,
        step=step,
        model=model,
        curve=curve,
        phase=phase,
        rho_bounds=(lo, hi),
        snapshot_every=every,
        output_dir=output_dir,
        seed=seed,
        base_dir=base_dir,
    )


def parse_scenario(text: str, base_dir: Optional[Path] = None) -> Scenario:
    """Parse scenario JSON text; errors carry the line of the offending key"""
    try:
        loaded = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.lineno, e.msg) from e
    return parse_document(loaded, text, base_dir)


def emit_scenario(scenario: Scenario) -> str:
    """Canonical serialisation: sorted keys, defaults filled in"""
    return json.dumps(scenario.document, indent=2, sort_keys=True, ensure_ascii=False) + '\n'


def refine(scenario: Scenario, level: int) -> Scenario:
    """Scenario with h, dt and the snapshot spacing halved level times, written to a level dir"""
    doc = copy.deepcopy(scenario.document)
    factor = 2 ** level
    doc['grid']['n'] = scenario.grid.n * factor
    doc['step']['dt'] = scenario.step.dt / factor
    doc['output']['dir'] = str(scenario.output_dir / f'level{level}')
    return parse_document(doc, None, scenario.base_dir)


# ---------------------------------------------------------------------------
# calibrated tolerance constants
# ---------------------------------------------------------------------------

def parse_tolerances(text: str) -> Dict[str, float]:
    """Constants C_c of a calibration file; clauses it leaves out keep their defaults"""
    from physics.certify import DEFAULT_TOLERANCES

    try:
        loaded = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.lineno, e.msg) from e
    if not isinstance(loaded, dict) or not isinstance(loaded.get('tolerances'), dict):
        raise ParseError(1, "calibration file needs a 'tolerances' object")
    constants = {}
    for clause, value in loaded['tolerances'].items():
        line = _line_of(text, ('tolerances', clause))
        if clause not in DEFAULT_TOLERANCES:
            raise ParseError(line, f"tolerances.{clause}: unknown clause (known: {', '.join(DEFAULT_TOLERANCES)})")
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not (math.isfinite(value) and value > 0):
            raise ParseError(line, f"tolerances.{clause}: constant must be a finite number > 0, got {value!r}")
        constants[clause] = float(value)
    return constants


def emit_tolerances(constants: Dict[str, float], references: List[Dict[str, Any]],
                    n_tests: int, safety: float) -> str:
    """Calibration file with the series the constants were fitted on"""
    document = {
        'tolerances': {k: float(v) for k, v in constants.items()},
        'safety': float(safety),
        'tests': int(n_tests),
        'references': references,
    }
    return json.dumps(document, indent=2, sort_keys=True) + '\n'


class ScenarioManager:
    """Loads, validates and caches scenario files"""

    SCENARIO_SUFFIX = '.json'

    def __init__(self, app_dir: Path = None):
        if app_dir is None:
            app_dir = Path(__file__).parent.resolve()
        self.app_dir = app_dir
        self._cache: Dict[Path, Scenario] = {}

    def _resolve(self, path) -> Path:
        path = Path(path)
        if not path.is_absolute():
            path = Path.cwd() / path
        return path.resolve()

    def load(self, path) -> Scenario:
        """Load a scenario file, reusing the parsed result for the same path"""
        path = self._resolve(path)
        if path not in self._cache:
            try:
                text = path.read_text(encoding='utf-8')
            except OSError as e:
                raise ParseError(0, f"cannot read scenario {path}: {e}") from e
            self._cache[path] = parse_scenario(text, base_dir=path.parent)
        return self._cache[path]

    def load_tolerances(self, path) -> Dict[str, float]:
        """Read a calibration file written by the calibrate command"""
        path = self._resolve(path)
        try:
            text = path.read_text(encoding='utf-8')
        except OSError as e:
            raise ParseError(0, f"cannot read calibration file {path}: {e}") from e
        return parse_tolerances(text)

    def save(self, scenario: Scenario, path) -> Path:
        """Write the canonical form atomically"""
        path = self._resolve(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + '.tmp')
        tmp.write_text(emit_scenario(scenario), encoding='utf-8')
        os.replace(tmp, path)
        self._cache[path] = scenario
        return path

    def get(self, path, section: str, key: str, default: Any = None) -> Any:
        """One value of the canonical document"""
        return self.load(path).document.get(section, {}).get(key, default)

    def clear(self) -> None:
        self._cache.clear()


# Global instance
_scenario_manager = None


def get_scenario_manager(app_dir: Path = None) -> ScenarioManager:
    """Get or create the global scenario manager instance"""
    global _scenario_manager
    if _scenario_manager is None:
        _scenario_manager = ScenarioManager(app_dir)
    return _scenario_manager
