"""
Tests for the Galerkin momentum solver, the energy ledger and hypothesis checks
"""

import copy
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from config_manager import ScenarioManager, parse_document
from physics.certify import Trajectory, bounds_check, trace_bound
from physics.dynamics import (
    DIAGNOSTIC_COLUMNS,
    EnergyLedger,
    Model,
    StepConfig,
    assemble_rhs,
    auto_delta,
    diagnostics_row,
    energy_report,
    hypothesis_check,
    initial_state,
    kinetic_energy,
    solve_weighted_projection,
    step,
)
from physics.fields import PeriodicGrid, ScalarField, VectorField, divergence, integrate, project_bandlimit
from physics.interface import first_variation_modes, varifold_from_curve
from physics.rheology import MixturePotential, PowerLaw, Quadratic, TraceBounded
from physics.thermo import Isothermal, MixturePressure, TabulatedMonotone

from conftest import run_states, shear_document, translation_document

TWO_PI = 2.0 * np.pi
SCENARIO_DIR = Path(__file__).resolve().parent.parent / 'scenarios'


def model_of(f1, f2=None, p1=None, p2=None, k=None):
    p1 = p1 or Isothermal(1.0)
    return Model(MixturePotential(f1, f2 or f1, k), MixturePressure(p1, p2 or p1))


class TestStepConfig:
    """Parameter validation"""

    def test_hyperviscosity_order(self):
        with pytest.raises(ValueError, match='>= 5'):
            StepConfig(dt=1e-3, N=4, delta=1e-12, m=3)
        StepConfig(dt=1e-3, N=4, delta=0.0, m=3)

    def test_band_limit_against_grid(self):
        with pytest.raises(ValueError, match='dealiasing'):
            StepConfig(dt=1e-3, N=12).check_grid(PeriodicGrid(32))

    def test_step_count(self):
        assert StepConfig(dt=1e-3, N=4, t_end=0.2).step_count == 200

    def test_auto_delta_only_touches_tail(self):
        delta = auto_delta(8, 5)
        assert 0 < delta * (TWO_PI * 8) ** 20 <= 1e-8 * (1 + 1e-12)


class TestLedger:
    """Energy bookkeeping"""

    def test_balance_residual(self):
        start = EnergyLedger(kinetic=1.0, internal=0.5, interface=0.0)
        later = EnergyLedger(kinetic=0.8, internal=0.5, interface=0.0, dissipated_cum=0.19,
                             initial_total=start.total)
        assert later.balance_residual == pytest.approx(-0.01)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match='non-finite'):
            EnergyLedger(kinetic=math.nan, internal=0.0, interface=0.0)

    def test_kinetic_energy(self):
        grid = PeriodicGrid(16)
        rho = ScalarField.from_function(grid, lambda x, y: 2.0)
        u = VectorField.from_function(grid, lambda x, y: (np.sin(TWO_PI * x), 0.0 * y))
        assert kinetic_energy(rho, u) == pytest.approx(0.5)


class TestInitialState:
    """Construction of the t = 0 state"""

    def test_rejects_nonpositive_density(self):
        grid = PeriodicGrid(16)
        rho = ScalarField.from_function(grid, lambda x, y: np.sin(TWO_PI * x))
        with pytest.raises(ValueError, match='> 0'):
            initial_state(rho, VectorField.zeros(grid), model_of(Quadratic(0.1)), StepConfig(dt=1e-3, N=4))

    def test_rejects_fractional_phase(self):
        grid = PeriodicGrid(16)
        rho = ScalarField.from_function(grid, lambda x, y: 1.0)
        with pytest.raises(ValueError, match='0 or 1'):
            initial_state(rho, VectorField.zeros(grid), model_of(Quadratic(0.1)), StepConfig(dt=1e-3, N=4),
                          phase=0.5)

    def test_velocity_is_band_limited(self):
        grid = PeriodicGrid(32)
        rho = ScalarField.from_function(grid, lambda x, y: 1.0)
        u = VectorField.from_function(grid, lambda x, y: (np.sin(TWO_PI * 9 * x), np.sin(TWO_PI * y)))
        s = initial_state(rho, u, model_of(Quadratic(0.1)), StepConfig(dt=1e-3, N=4))
        np.testing.assert_allclose(s.u.values[0], 0.0, atol=1e-12)
        assert s.ledger.initial_total == s.ledger.total


class TestWeightedProjection:
    """Density-weighted Galerkin mass solve"""

    def test_constant_density(self):
        grid = PeriodicGrid(32)
        rho = ScalarField.from_function(grid, lambda x, y: 2.0)
        rhs = VectorField.from_function(grid, lambda x, y: (np.cos(TWO_PI * x), np.sin(TWO_PI * 2 * y)))
        w = solve_weighted_projection(rho, rhs, 4)
        np.testing.assert_allclose(w.values, 0.5 * rhs.values, atol=1e-9)

    def test_variable_density_galerkin_identity(self):
        grid = PeriodicGrid(32)
        rho = ScalarField.from_function(grid, lambda x, y: 1.0 + 0.3 * np.sin(TWO_PI * x))
        rhs = VectorField.from_function(grid, lambda x, y: (np.cos(TWO_PI * y), 0.0 * x))
        w = solve_weighted_projection(rho, rhs, 4)
        test = VectorField.from_function(grid, lambda x, y: (np.cos(TWO_PI * y) * np.cos(TWO_PI * x), 0.0 * x))
        lhs = grid.cell_area * float(np.sum(rho.values * w.values * test.values))
        right = grid.cell_area * float(np.sum(rhs.values * test.values))
        assert lhs == pytest.approx(right, abs=1e-9)

    def test_zero_rhs(self):
        grid = PeriodicGrid(16)
        w = solve_weighted_projection(ScalarField.from_function(grid, lambda x, y: 1.0), VectorField.zeros(grid), 4)
        assert w.max_abs() == 0.0


class TestAssembleRhs:
    """Momentum functional of a single state"""

    def test_rest_state_has_no_force(self):
        grid = PeriodicGrid(16)
        rho = ScalarField.from_function(grid, lambda x, y: 1.0 + 0.0 * x)
        cfg = StepConfig(dt=1e-3, N=4)
        s = initial_state(rho, VectorField.zeros(grid), model_of(Quadratic(0.1)), cfg)
        assert assemble_rhs(s, cfg, model_of(Quadratic(0.1))).max_abs() < 1e-12

    def test_constant_velocity_persists(self):
        grid = PeriodicGrid(16)
        rho = ScalarField.from_function(grid, lambda x, y: 1.0 + 0.0 * x)
        u = VectorField.from_function(grid, lambda x, y: (0.3 + 0.0 * x, -0.2 + 0.0 * y))
        cfg = StepConfig(dt=1e-3, N=4, delta=auto_delta(4, 5))
        model = model_of(Quadratic(0.1))
        s = initial_state(rho, u, model, cfg)
        assert assemble_rhs(s, cfg, model).max_abs() < 1e-12

    def test_bubble_force_is_surface_term(self, doc_factory):
        scenario = parse_document(doc_factory('bubble', kappa=0.01))
        s = scenario.initial_state()
        rhs = assemble_rhs(s, scenario.step, scenario.model)
        surface = first_variation_modes(varifold_from_curve(s.curve), s.grid, scenario.step.N)
        expected = project_bandlimit(-0.01 * surface, scenario.step.N)
        assert rhs.max_abs() > 0
        np.testing.assert_allclose(rhs.values, expected.values, atol=1e-10 * expected.max_abs())


class TestEnergyReport:
    """Recomputed energies against the carried ledger"""

    def test_initial_residual_is_zero(self, doc_factory):
        scenario = parse_document(doc_factory('bubble', kappa=0.01))
        s = scenario.initial_state()
        ledger, residual = energy_report(s, scenario.model, scenario.step)
        assert residual == 0.0
        assert ledger.interface == pytest.approx(0.01 * 2 * np.pi * 0.25, rel=1e-2)
        assert ledger.kinetic == 0.0


@pytest.mark.slow
class TestShearDecay:
    """u_y = 0.1 sin(2 pi x) under a Newtonian potential"""

    def test_energy_decay_rate(self, shear_scenario, shear_run):
        mu, eps = 0.05, shear_scenario.step.eps
        ledgers = shear_run['ledgers']
        rate = -math.log(ledgers[-1].kinetic / ledgers[0].kinetic) / 0.2
        expected = mu * TWO_PI ** 2 / (1.0 + eps * mu)
        assert rate == pytest.approx(expected, rel=0.05)

    def test_energy_inequality(self, shear_run):
        ledgers = shear_run['ledgers']
        e0 = ledgers[0].total
        kinetic0 = ledgers[0].kinetic
        assert max(ledger.balance_residual for ledger in ledgers) <= 1e-3 * kinetic0
        totals = [ledger.total for ledger in ledgers]
        assert all(b <= a + 1e-12 * abs(e0) for a, b in zip(totals, totals[1:]))

    def test_density_and_mass(self, shear_run):
        states = shear_run['states']
        last = states[-1]
        assert integrate(last.rho) == pytest.approx(integrate(states[0].rho), rel=1e-8)
        np.testing.assert_allclose(last.rho.values, 1.0, atol=1e-6)
        assert divergence(last.u).max_abs() < 1e-8

    def test_diagnostics_row(self, shear_run):
        row = diagnostics_row(shear_run['states'][-1])
        assert tuple(row) == DIAGNOSTIC_COLUMNS
        assert row['perimeter'] == 0.0
        assert row['time'] == pytest.approx(0.2)


@pytest.mark.slow
class TestRestStates:
    """States that must not move"""

    def test_uniform_equilibrium(self, doc_factory):
        scenario = parse_document(doc_factory('equilibrium'))
        run = run_states(scenario)
        last = run['states'][-1]
        assert last.u.max_abs() < 1e-12
        np.testing.assert_allclose(last.rho.values, 1.0, atol=1e-12)
        assert abs(last.ledger.balance_residual) < 1e-12

    def test_bubble_without_surface_tension(self, bubble_runs):
        scenario, run = bubble_runs[0.0]
        last = run['states'][-1]
        assert last.u.max_abs() < 1e-12
        assert np.count_nonzero(last.chi.values != run['states'][0].chi.values) <= 2

    def test_bubble_with_surface_tension_moves_slowly(self, bubble_runs):
        scenario, run = bubble_runs[0.01]
        states = run['states']
        assert 0.0 < states[-1].u.max_abs() < 0.05
        assert states[-1].ledger.interface == pytest.approx(states[0].ledger.interface, rel=1e-2)
        assert max(ledger.balance_residual for ledger in run['ledgers']) <= 1e-2 * states[0].ledger.interface


class TestHypotheses:
    """Advisory classification against the existence results"""

    def test_power_law_alpha_two(self):
        report = hypothesis_check(model_of(PowerLaw(1.0, 2.0)), StepConfig(dt=1e-3, N=4))
        assert report.general_compliant
        assert report.classification == 'general+isothermal'

    def test_low_alpha(self):
        report = hypothesis_check(model_of(PowerLaw(1.0, 1.2)), StepConfig(dt=1e-3, N=4))
        assert not report.general_compliant
        assert any('< 2' in v for v in report.general_violations)
        assert report.classification == 'isothermal'

    def test_surface_tension_needs_isothermal_pressure(self):
        table = TabulatedMonotone((0.5, 1.0, 2.0), (0.5, 1.0, 2.0))
        report = hypothesis_check(model_of(Quadratic(0.1), p1=table), StepConfig(dt=1e-3, N=4, kappa=0.1))
        assert report.classification == 'non-compliant'
        assert any('isothermal' in v for v in report.isothermal_violations)

    def test_distinct_potentials_need_comparability(self):
        report = hypothesis_check(model_of(Quadratic(0.1), Quadratic(0.2)), StepConfig(dt=1e-3, N=4))
        assert any('comparability' in v for v in report.general_violations)
        report = hypothesis_check(model_of(Quadratic(0.1), Quadratic(0.2), k=2.0), StepConfig(dt=1e-3, N=4))
        assert report.general_compliant

    def test_trace_bound_warning(self):
        plain = hypothesis_check(model_of(Quadratic(0.1)), StepConfig(dt=1e-3, N=4))
        assert any('trace bound' in w for w in plain.warnings)
        bounded = hypothesis_check(model_of(TraceBounded(Quadratic(0.1), 1.0)), StepConfig(dt=1e-3, N=4))
        assert not bounded.warnings
        assert 'classification' in bounded.summary()


def disk_indicator(grid, center=(0.5, 0.5), radius=0.25):
    x, y = grid.coords
    return ScalarField(grid, (((x - center[0]) ** 2 + (y - center[1]) ** 2) < radius ** 2).astype(float))


def advance(s, cfg, model, steps):
    for _ in range(steps):
        s = step(s, cfg, model)
    return s


class TestSymmetries:
    """Grid shifts and phase relabelling commute with the step"""

    def test_discrete_translation_equivariance(self):
        scenario = parse_document(translation_document(n=32, interface=False))
        grid, shift = scenario.grid, (5, 3)
        wave = VectorField.from_function(grid, lambda x, y: (0.05 * np.sin(2 * np.pi * y), 0.02 * np.cos(2 * np.pi * x)))
        rho = scenario.initial_density()
        u = scenario.initial_velocity() + wave
        s = initial_state(rho, u, scenario.model, scenario.step)
        shifted = initial_state(
            ScalarField(grid, np.roll(rho.values, shift, axis=(0, 1))),
            VectorField(grid, np.roll(u.values, shift, axis=(1, 2))),
            scenario.model, scenario.step,
        )
        a = advance(s, scenario.step, scenario.model, 10)
        b = advance(shifted, scenario.step, scenario.model, 10)
        np.testing.assert_allclose(b.rho.values, np.roll(a.rho.values, shift, axis=(0, 1)), atol=1e-8)
        np.testing.assert_allclose(b.u.values, np.roll(a.u.values, shift, axis=(1, 2)), atol=1e-8)
        assert b.ledger.total == pytest.approx(a.ledger.total, rel=1e-9)

    def test_phase_slots_mirror_under_inverted_indicator(self):
        grid = PeriodicGrid(32)
        cfg = StepConfig(dt=1e-3, N=8, t_end=5e-3)
        f1, f2 = Quadratic(0.1, 0.02), PowerLaw(0.05, 2.5)
        p1, p2 = Isothermal(1.0), Isothermal(2.0)
        forward = Model(MixturePotential(f1, f2, 2.0), MixturePressure(p1, p2))
        mirrored = Model(MixturePotential(f2, f1, 2.0), MixturePressure(p2, p1))
        rho = ScalarField.from_function(grid, lambda x, y: 1.0 + 0.1 * np.sin(2 * np.pi * x))
        u = VectorField.from_function(grid, lambda x, y: (0.05 * np.sin(2 * np.pi * y), 0.05 * np.sin(2 * np.pi * x)))
        chi = disk_indicator(grid)
        base = initial_state(rho, u, forward, cfg)
        a = replace(base, chi=chi)
        b = replace(base, chi=ScalarField(grid, 1.0 - chi.values))
        a = advance(a, cfg, forward, 5)
        b = advance(b, cfg, mirrored, 5)
        np.testing.assert_allclose(b.rho.values, a.rho.values, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(b.u.values, a.u.values, rtol=1e-10, atol=1e-14)
        assert b.ledger.dissipated_cum == pytest.approx(a.ledger.dissipated_cum, rel=1e-10)
        assert b.ledger.internal == pytest.approx(a.ledger.internal, rel=1e-12)


class TestTimeStepRefinement:
    """Energy-inequality residual under dt refinement"""

    def test_halving_dt_shrinks_energy_residual(self):
        residuals = []
        for dt in (2e-3, 1e-3):
            scenario = parse_document(shear_document(n=32, dt=dt, t_end=0.05, every=5))
            residuals.append(run_states(scenario)['ledgers'][-1].balance_residual)
        coarse, fine = residuals
        assert fine > 0.0
        assert coarse / fine >= 1.5


@pytest.mark.slow
class TestUniformTranslation:
    """Constant velocity: indicator and density are shifted copies"""

    def test_shift_after_hundred_steps(self):
        # 100 steps of (0.3125, 0.15625) * 1e-3 move everything by (4h, 2h) on n = 128
        scenario = ScenarioManager(SCENARIO_DIR).load(SCENARIO_DIR / 'uniform_translation.json')
        run = run_states(scenario)
        first, last = run['states'][0], run['states'][-1]
        assert last.step_index == 100
        np.testing.assert_array_equal(last.chi.values, np.roll(first.chi.values, (4, 2), axis=(0, 1)))
        np.testing.assert_allclose(last.rho.values, np.roll(first.rho.values, (4, 2), axis=(0, 1)), atol=1e-4)
        np.testing.assert_allclose(last.u.values[0], 0.3125, atol=5e-5)
        np.testing.assert_allclose(last.u.values[1], 0.15625, atol=5e-5)
        assert integrate(last.rho) == pytest.approx(integrate(first.rho), rel=1e-6)


@pytest.mark.slow
class TestTraceBoundedRun:
    """Bundled compression scenario on a coarser grid"""

    def test_divergence_and_density_stay_bounded(self):
        scenario = ScenarioManager(SCENARIO_DIR).load(SCENARIO_DIR / 'trace_bounded_compression.json')
        doc = copy.deepcopy(scenario.document)
        doc['grid']['n'] = 32
        doc['step']['t_end'] = 0.05
        doc['output']['snapshot_every'] = 5
        coarse = parse_document(doc, None, scenario.base_dir)
        states = run_states(coarse)['states']
        traj = Trajectory.from_states(states, coarse.model, coarse.step, coarse.rho_bounds)
        dbar = trace_bound(coarse.model)
        assert dbar == 2.0
        rho_lo, rho_hi = coarse.rho_bounds
        report = bounds_check(traj, dbar, rho_lo, rho_hi)
        assert report.passed
        assert report.max_divergence <= 1.05 * dbar
        for s in states:
            assert rho_lo <= s.rho.values.min() and s.rho.values.max() <= rho_hi
