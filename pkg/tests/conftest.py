"""
Shared fixtures: scenario documents and cached solver runs
"""

import copy
import math
from typing import Any, Dict, List

import numpy as np
import pytest

import logger
from config_manager import parse_document
from physics.dynamics import iterate


@pytest.fixture(scope='session', autouse=True)
def log_to_tmp(tmp_path_factory):
    logger._logger = logger.setup_logger(tmp_path_factory.mktemp('logs'))
    yield


def quadratic(mu: float, lam: float = 0.0) -> Dict[str, Any]:
    return {'family': 'quadratic', 'mu': mu, 'lambda': lam}


def isothermal(a: float = 1.0) -> Dict[str, Any]:
    return {'family': 'isothermal', 'a': a}


def shear_document(n: int = 128, dt: float = 1e-3, t_end: float = 0.2, mu: float = 0.05,
                   amplitude: float = 0.1, every: int = 10) -> Dict[str, Any]:
    """u_y = A sin(2 pi x): steady shear profile decaying at rate mu (2 pi)^2 in energy"""
    return {
        'grid': {'n': n},
        'step': {'dt': dt, 't_end': t_end, 'N': 8},
        'potentials': {'f1': quadratic(mu)},
        'pressures': {'p1': isothermal(1.0)},
        'initial': {'velocity': {'modes': [{'k': [1, 0], 'amplitude': [0.0, amplitude]}]}},
        'output': {'snapshot_every': every},
    }


def bubble_document(kappa: float = 0.0, n: int = 64, dt: float = 1e-3, t_end: float = 0.02,
                    every: int = 4) -> Dict[str, Any]:
    """Circle of phase 1 at rest; equal isothermal pressures, different viscosities"""
    return {
        'grid': {'n': n},
        'step': {'dt': dt, 't_end': t_end, 'N': 8, 'kappa': kappa},
        'potentials': {'f1': quadratic(0.1), 'f2': quadratic(0.05), 'comparability_k': 2.0},
        'pressures': {'p1': isothermal(1.0), 'p2': isothermal(1.0)},
        'initial': {'interface': {'kind': 'circle', 'center': [0.5, 0.5], 'radius': 0.25}},
        'output': {'snapshot_every': every},
    }


def equilibrium_document(n: int = 32, steps: int = 20) -> Dict[str, Any]:
    return {
        'grid': {'n': n},
        'step': {'dt': 1e-3, 't_end': steps * 1e-3, 'N': 4},
        'potentials': {'f1': quadratic(0.1)},
        'pressures': {'p1': isothermal(1.0)},
        'output': {'snapshot_every': 5},
    }


def translation_document(n: int = 128, dt: float = 1e-3, steps: int = 100, every: int = 10,
                         interface: bool = True) -> Dict[str, Any]:
    """Uniform velocity (0.3125, 0.15625) carrying a density wave and a circle; nearly pressureless"""
    doc = {
        'grid': {'n': n},
        'step': {'dt': dt, 't_end': steps * dt, 'N': 8},
        'potentials': {'f1': quadratic(0.05)},
        'pressures': {'p1': isothermal(1e-8)},
        'initial': {
            'density': {'constant': 1.0, 'modes': [{'k': [1, 1], 'amplitude': 0.05}]},
            'velocity': {'modes': [{'k': [0, 0], 'amplitude': [0.3125, 0.15625], 'phase': math.pi / 2}]},
        },
        'output': {'snapshot_every': every},
    }
    if interface:
        doc['initial']['interface'] = {'kind': 'circle', 'center': [0.503, 0.498], 'radius': 0.2}
    return doc


def run_states(scenario) -> Dict[str, List]:
    """Stored snapshots and every ledger of a run"""
    state = scenario.initial_state()
    states, ledgers = [state], [state.ledger]
    for state in iterate(state, scenario.step, scenario.model):
        ledgers.append(state.ledger)
        if state.step_index % scenario.snapshot_every == 0:
            states.append(state)
    return {'states': states, 'ledgers': ledgers}


@pytest.fixture(scope='session')
def shear_scenario():
    return parse_document(shear_document())


@pytest.fixture(scope='session')
def shear_run(shear_scenario):
    return run_states(shear_scenario)


@pytest.fixture(scope='session')
def bubble_runs():
    runs = {}
    for kappa in (0.0, 0.01):
        scenario = parse_document(bubble_document(kappa))
        runs[kappa] = (scenario, run_states(scenario))
    return runs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def doc_factory():
    """Deep copies of the named scenario documents"""
    documents = {
        'shear': shear_document,
        'bubble': bubble_document,
        'equilibrium': equilibrium_document,
        'translation': translation_document,
    }

    def make(name: str, **kwargs) -> Dict[str, Any]:
        return copy.deepcopy(documents[name](**kwargs))

    return make
