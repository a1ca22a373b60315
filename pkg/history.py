"""
Snapshot Series Manager
Stores the snapshots of a run (binary fields, marker curve and varifold
CSVs), the per-step diagnostics table and a manifest listing times and
SHA-256 hashes; verifies and reloads a series for certification
"""

import csv
import hashlib
import io
import json
import os
import struct
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np

from errors import MalformedTrajectory
from logger import log_debug, log_info


SNAPSHOT_MAGIC = b'VFLW'
SNAPSHOT_VERSION = 1
# magic, version, n, field count, time, padding to 32 bytes
SNAPSHOT_HEADER = struct.Struct('<4sIIId8x')
FIELD_NAMES = ('rho', 'chi', 'ux', 'uy')


def sha256_of(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write to a temporary sibling, then rename over the target"""
    path = Path(path)
    tmp = path.with_name(path.name + '.tmp')
    with open(tmp, 'wb') as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode('utf-8'))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def encode_snapshot(time: float, rho: np.ndarray, chi: np.ndarray, u: np.ndarray) -> bytes:
    """Header, then rho, chi, ux, uy as little-endian float64 in row-major [ix, iy] order"""
    n = rho.shape[-1]
    header = SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, n, len(FIELD_NAMES), float(time))
    body = np.stack([rho, chi, u[0], u[1]]).astype('<f8').tobytes()
    return header + body


def decode_snapshot(data: bytes, source: str = 'snapshot') -> Tuple[float, np.ndarray]:
    """Returns (time, array of shape (4, n, n))"""
    if len(data) < SNAPSHOT_HEADER.size:
        raise MalformedTrajectory(f"{source}: truncated header")
    magic, version, n, count, time = SNAPSHOT_HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise MalformedTrajectory(f"{source}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise MalformedTrajectory(f"{source}: unsupported version {version}")
    if count != len(FIELD_NAMES):
        raise MalformedTrajectory(f"{source}: expected {len(FIELD_NAMES)} fields, found {count}")
    expected = SNAPSHOT_HEADER.size + 8 * count * n * n
    if len(data) != expected:
        raise MalformedTrajectory(f"{source}: {len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype='<f8', offset=SNAPSHOT_HEADER.size).reshape(count, n, n)
    return float(time), values.astype(float)


def encode_curve_csv(points: np.ndarray) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['index', 'x', 'y'])
    for i, (x, y) in enumerate(points):
        writer.writerow([i, repr(float(x)), repr(float(y))])
    return out.getvalue()


def decode_curve_csv(text: str) -> np.ndarray:
    rows = list(csv.DictReader(io.StringIO(text)))
    return np.array([[float(r['x']), float(r['y'])] for r in rows]).reshape(-1, 2)


def encode_varifold_csv(x: np.ndarray, z: np.ndarray, w: np.ndarray) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['x', 'y', 'zx', 'zy', 'w'])
    for (px, py), (zx, zy), wj in zip(x, z, w):
        writer.writerow([repr(float(v)) for v in (px, py, zx, zy, wj)])
    return out.getvalue()


def decode_varifold_csv(text: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = list(csv.DictReader(io.StringIO(text)))
    x = np.array([[float(r['x']), float(r['y'])] for r in rows]).reshape(-1, 2)
    z = np.array([[float(r['zx']), float(r['zy'])] for r in rows]).reshape(-1, 2)
    w = np.array([float(r['w']) for r in rows])
    return x, z, w


def encode_diagnostics_csv(columns: Iterable[str], rows: Iterable[Dict[str, float]]) -> str:
    columns = list(columns)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['step'] + columns)
    for step, row in enumerate(rows):
        writer.writerow([step] + [repr(float(row[c])) for c in columns])
    return out.getvalue()


# ---------------------------------------------------------------------------
# series
# ---------------------------------------------------------------------------

class SnapshotSeries:
    """Snapshot files of one run plus the manifest that lists them"""

    MANIFEST_FILENAME = 'manifest.json'
    SCENARIO_FILENAME = 'scenario.json'
    DIAGNOSTICS_FILENAME = 'diagnostics.csv'
    FORMAT = 'vflow-series'

    def __init__(self, series_dir: Path):
        self.series_dir = Path(series_dir)
        self.manifest_file = self.series_dir / self.MANIFEST_FILENAME
        self._manifest = None

    @property
    def manifest(self) -> Dict[str, Any]:
        """Manifest, loading from file if needed"""
        if self._manifest is None:
            self._manifest = self._load_manifest()
        return self._manifest

    def _load_manifest(self) -> Dict[str, Any]:
        try:
            with open(self.manifest_file, 'r', encoding='utf-8') as f:
                manifest = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise MalformedTrajectory(f"cannot read manifest {self.manifest_file}: {e}") from e
        if manifest.get('format') != self.FORMAT:
            raise MalformedTrajectory(f"{self.manifest_file} is not a snapshot series manifest")
        return manifest

    def _save_manifest(self) -> None:
        atomic_write_text(self.manifest_file, json.dumps(self._manifest, indent=2, sort_keys=True) + '\n')

    # -- writing --------------------------------------------------------------

    @classmethod
    def create(cls, series_dir: Path, scenario_text: str, eps: float, n: int) -> 'SnapshotSeries':
        """Start an empty series holding the canonical scenario"""
        series = cls(series_dir)
        series.series_dir.mkdir(parents=True, exist_ok=True)
        scenario_path = series.series_dir / cls.SCENARIO_FILENAME
        atomic_write_text(scenario_path, scenario_text)
        series._manifest = {
            'format': cls.FORMAT,
            'version': SNAPSHOT_VERSION,
            'scenario': {'name': cls.SCENARIO_FILENAME, 'sha256': sha256_of(scenario_path)},
            'n': int(n),
            'eps': float(eps),
            'status': 'running',
            'stop_time': None,
            'snapshots': [],
            'diagnostics': None,
        }
        series._save_manifest()
        log_debug(f"series created in {series.series_dir}")
        return series

    def _write(self, name: str, data: bytes) -> Dict[str, str]:
        path = self.series_dir / name
        atomic_write_bytes(path, data)
        return {'name': name, 'sha256': hashlib.sha256(data).hexdigest()}

    def append(self, state) -> Dict[str, Any]:
        """Store one SimState; returns its manifest entry"""
        from physics.interface import varifold_from_curve

        index = len(self.manifest['snapshots'])
        entries = self.manifest['snapshots']
        if entries and state.time <= entries[-1]['time']:
            raise MalformedTrajectory(f"snapshot time {state.time} does not follow {entries[-1]['time']}")
        stem = f'snap_{index:05d}'
        files = {'fields': self._write(f'{stem}.bin', encode_snapshot(
            state.time, state.rho.values, state.chi.values, state.u.values))}
        if state.curve is not None:
            varifold = varifold_from_curve(state.curve)
            files['curve'] = self._write(f'{stem}_curve.csv', encode_curve_csv(state.curve.points).encode('utf-8'))
            files['varifold'] = self._write(f'{stem}_varifold.csv', encode_varifold_csv(
                varifold.x, varifold.z, varifold.w).encode('utf-8'))
        entry = {
            'index': index,
            'step': int(state.step_index),
            'time': float(state.time),
            'files': files,
        }
        entries.append(entry)
        self._save_manifest()
        return entry

    def write_diagnostics(self, columns: Iterable[str], rows: List[Dict[str, float]]) -> None:
        data = encode_diagnostics_csv(columns, rows).encode('utf-8')
        self.manifest['diagnostics'] = self._write(self.DIAGNOSTICS_FILENAME, data)
        self._save_manifest()

    def finalize(self, status: str, stop_time: Optional[float] = None) -> None:
        """Record the run status; 'completed', 'topology_stop' or 'numeric_failure'"""
        self.manifest['status'] = status
        self.manifest['stop_time'] = None if stop_time is None else float(stop_time)
        self._save_manifest()
        log_info(f"series {self.series_dir}: {len(self.manifest['snapshots'])} snapshots, status {status}")

    # -- reading --------------------------------------------------------------

    @classmethod
    def open(cls, path: Path) -> 'SnapshotSeries':
        """Open from the series directory or its manifest file"""
        path = Path(path)
        if path.is_dir():
            return cls(path)
        if path.name != cls.MANIFEST_FILENAME:
            raise MalformedTrajectory(f"{path} is neither a series directory nor a manifest")
        return cls(path.parent)

    @property
    def times(self) -> List[float]:
        return [e['time'] for e in self.manifest['snapshots']]

    @property
    def status(self) -> str:
        return self.manifest['status']

    def _read_verified(self, record: Dict[str, str]) -> bytes:
        path = self.series_dir / record['name']
        try:
            data = path.read_bytes()
        except OSError as e:
            raise MalformedTrajectory(f"missing series file {record['name']}") from e
        if hashlib.sha256(data).hexdigest() != record['sha256']:
            raise MalformedTrajectory(f"hash mismatch for {record['name']}")
        return data

    def verify(self) -> None:
        """Check every listed hash and the ordering of times"""
        self._read_verified(self.manifest['scenario'])
        times = self.times
        if any(b <= a for a, b in zip(times, times[1:])):
            raise MalformedTrajectory("manifest times are not strictly increasing")
        for entry in self.manifest['snapshots']:
            for record in entry['files'].values():
                self._read_verified(record)
        if self.manifest.get('diagnostics'):
            self._read_verified(self.manifest['diagnostics'])

    def scenario_text(self) -> str:
        return self._read_verified(self.manifest['scenario']).decode('utf-8')

    def scenario(self):
        """The stored canonical scenario, parsed"""
        from config_manager import parse_scenario
        return parse_scenario(self.scenario_text(), base_dir=self.series_dir)

    def read_snapshot(self, index: int) -> Dict[str, Any]:
        """Fields (and curve points, if stored) of one snapshot"""
        entry = self.manifest['snapshots'][index]
        record = entry['files']['fields']
        time, values = decode_snapshot(self._read_verified(record), record['name'])
        if time != entry['time']:
            raise MalformedTrajectory(f"{record['name']}: time {time} differs from manifest {entry['time']}")
        if values.shape[-1] != self.manifest['n']:
            raise MalformedTrajectory(f"{record['name']}: grid {values.shape[-1]} differs from manifest")
        snapshot = {'time': time, 'step': entry['step'], 'fields': values, 'curve': None, 'varifold': None}
        if 'curve' in entry['files']:
            snapshot['curve'] = decode_curve_csv(self._read_verified(entry['files']['curve']).decode('utf-8'))
        if 'varifold' in entry['files']:
            snapshot['varifold'] = decode_varifold_csv(
                self._read_verified(entry['files']['varifold']).decode('utf-8'))
        return snapshot

    def load_trajectory(self):
        """Verified snapshots plus the scenario's model, ready for certification"""
        from physics.certify import Trajectory
        from physics.fields import ScalarField, VectorField
        from physics.interface import curve_from_points

        self.verify()
        scenario = self.scenario()
        if scenario.grid.n != self.manifest['n']:
            raise MalformedTrajectory("scenario grid differs from the stored snapshots")
        grid = scenario.grid
        times, rho, chi, u, curves = [], [], [], [], []
        for index in range(len(self.manifest['snapshots'])):
            snap = self.read_snapshot(index)
            fields = snap['fields']
            times.append(snap['time'])
            rho.append(ScalarField(grid, fields[0]))
            chi.append(ScalarField(grid, fields[1]))
            u.append(VectorField(grid, fields[2:4]))
            curves.append(None if snap['curve'] is None else curve_from_points(snap['curve']))
        return Trajectory(times, rho, chi, u, curves, scenario.model, scenario.step, scenario.rho_bounds)
