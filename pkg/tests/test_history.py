"""
Tests for snapshot storage and the series manifest
"""

import json

import numpy as np
import pytest

from config_manager import emit_scenario, parse_document
from errors import MalformedTrajectory
from history import (
    SNAPSHOT_HEADER,
    SnapshotSeries,
    decode_curve_csv,
    decode_snapshot,
    decode_varifold_csv,
    encode_curve_csv,
    encode_diagnostics_csv,
    encode_snapshot,
    encode_varifold_csv,
)
from physics.dynamics import DIAGNOSTIC_COLUMNS, diagnostics_row
from physics.interface import perimeter

from conftest import equilibrium_document, run_states


@pytest.fixture(scope='module')
def equilibrium_run():
    scenario = parse_document(equilibrium_document())
    return scenario, run_states(scenario)


def write_series(path, scenario, states):
    series = SnapshotSeries.create(path, emit_scenario(scenario), scenario.step.eps, scenario.grid.n)
    for state in states:
        series.append(state)
    series.write_diagnostics(DIAGNOSTIC_COLUMNS, [diagnostics_row(s) for s in states])
    series.finalize('completed')
    return series


class TestSnapshotFormat:
    """Binary field files"""

    def test_header_layout(self):
        assert SNAPSHOT_HEADER.size == 32
        data = encode_snapshot(0.25, np.ones((8, 8)), np.zeros((8, 8)), np.zeros((2, 8, 8)))
        assert data[:4] == b'VFLW'
        assert len(data) == 32 + 4 * 8 * 64

    def test_decode_restores_fields(self, rng):
        rho = 1.0 + rng.random((8, 8))
        u = rng.standard_normal((2, 8, 8))
        time, values = decode_snapshot(encode_snapshot(0.5, rho, np.ones((8, 8)), u))
        assert time == 0.5
        np.testing.assert_array_equal(values[0], rho)
        np.testing.assert_array_equal(values[2:], u)

    def test_bad_magic(self):
        data = bytearray(encode_snapshot(0.0, np.ones((8, 8)), np.ones((8, 8)), np.zeros((2, 8, 8))))
        data[:4] = b'XXXX'
        with pytest.raises(MalformedTrajectory, match='bad magic'):
            decode_snapshot(bytes(data))

    def test_truncated(self):
        data = encode_snapshot(0.0, np.ones((8, 8)), np.ones((8, 8)), np.zeros((2, 8, 8)))
        with pytest.raises(MalformedTrajectory, match='bytes, expected'):
            decode_snapshot(data[:-8])
        with pytest.raises(MalformedTrajectory, match='truncated header'):
            decode_snapshot(data[:10])

    def test_curve_and_varifold_csv(self):
        points = np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.1]])
        text = encode_curve_csv(points)
        assert text.splitlines()[0] == 'index,x,y'
        np.testing.assert_array_equal(decode_curve_csv(text), points)
        z = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
        w = np.array([0.1, 0.2, 0.3])
        x2, z2, w2 = decode_varifold_csv(encode_varifold_csv(points, z, w))
        np.testing.assert_array_equal(z2, z)
        np.testing.assert_array_equal(w2, w)

    def test_diagnostics_csv(self):
        text = encode_diagnostics_csv(['time', 'kinetic'], [{'time': 0.0, 'kinetic': 1.0}, {'time': 0.1, 'kinetic': 0.5}])
        lines = text.splitlines()
        assert lines[0] == 'step,time,kinetic'
        assert lines[2] == '1,0.1,0.5'


class TestSeries:
    """Manifest writing, verification and reload"""

    def test_write_and_reload(self, tmp_path, equilibrium_run):
        scenario, run = equilibrium_run
        write_series(tmp_path / 'run', scenario, run['states'])
        series = SnapshotSeries.open(tmp_path / 'run' / 'manifest.json')
        series.verify()
        assert series.status == 'completed'
        assert series.times == [s.time for s in run['states']]
        traj = series.load_trajectory()
        assert len(traj.times) == len(run['states'])
        np.testing.assert_array_equal(traj.u[-1].values, run['states'][-1].u.values)
        assert traj.rho_bounds == scenario.rho_bounds

    def test_hash_mismatch(self, tmp_path, equilibrium_run):
        scenario, run = equilibrium_run
        write_series(tmp_path / 'run', scenario, run['states'])
        target = tmp_path / 'run' / 'snap_00002.bin'
        data = bytearray(target.read_bytes())
        data[-1] ^= 0xFF
        target.write_bytes(bytes(data))
        with pytest.raises(MalformedTrajectory, match='hash mismatch for snap_00002.bin'):
            SnapshotSeries.open(tmp_path / 'run').verify()

    def test_missing_file(self, tmp_path, equilibrium_run):
        scenario, run = equilibrium_run
        write_series(tmp_path / 'run', scenario, run['states'])
        (tmp_path / 'run' / 'diagnostics.csv').unlink()
        with pytest.raises(MalformedTrajectory, match='missing series file'):
            SnapshotSeries.open(tmp_path / 'run').verify()

    def test_times_must_increase(self, tmp_path, equilibrium_run):
        scenario, run = equilibrium_run
        series = SnapshotSeries.create(tmp_path / 'run', emit_scenario(scenario), scenario.step.eps, scenario.grid.n)
        series.append(run['states'][1])
        with pytest.raises(MalformedTrajectory, match='does not follow'):
            series.append(run['states'][0])

    def test_not_a_manifest(self, tmp_path):
        (tmp_path / 'manifest.json').write_text(json.dumps({'format': 'other'}), encoding='utf-8')
        with pytest.raises(MalformedTrajectory, match='not a snapshot series'):
            SnapshotSeries.open(tmp_path).verify()
        with pytest.raises(MalformedTrajectory, match='neither'):
            SnapshotSeries.open(tmp_path / 'other.txt')

    def test_curve_files(self, tmp_path, doc_factory):
        scenario = parse_document(doc_factory('bubble', kappa=0.01))
        state = scenario.initial_state()
        series = SnapshotSeries.create(tmp_path / 'run', emit_scenario(scenario), scenario.step.eps, scenario.grid.n)
        entry = series.append(state)
        assert set(entry['files']) == {'fields', 'curve', 'varifold'}
        snap = series.read_snapshot(0)
        np.testing.assert_array_equal(snap['curve'], state.curve.points)
        x, z, w = snap['varifold']
        assert w.sum() == pytest.approx(perimeter(state.curve))
