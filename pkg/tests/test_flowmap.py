"""
Tests for characteristics, density transport and renormalised residuals
"""

import numpy as np
import pytest

from errors import CflViolation
from physics.fields import PeriodicGrid, ScalarField, VectorField, gradient, integrate
from physics.flowmap import (
    CharacteristicConfig,
    TrajectorySegment,
    VelocitySegment,
    backward_foot,
    forward_positions,
    internal_energy_residual,
    renormalized_residual,
    transport_density,
    transport_indicator_grid,
)
from physics.thermo import Isothermal, MixturePressure

TWO_PI = 2.0 * np.pi


class FixedTest:
    """Time-independent test function on a stored trajectory"""

    def __init__(self, field: ScalarField):
        self.field = field
        self._gradient = gradient(field).values

    def value(self, i):
        return self.field.values

    def gradient(self, i):
        return self._gradient


@pytest.fixture
def grid():
    return PeriodicGrid(32)


def uniform(grid, cx, cy):
    return VectorField.from_function(grid, lambda x, y: (cx + 0.0 * x, cy + 0.0 * y))


def translated_segment(grid, c=0.5, steps=10, dt=0.01):
    """rho = 1 + 0.5 sin(2 pi (x - c t)) advected by u = (c, 0)"""
    times = [k * dt for k in range(steps + 1)]
    rho = [ScalarField.from_function(grid, lambda x, y, t=t: 1.0 + 0.5 * np.sin(TWO_PI * (x - c * t)))
           for t in times]
    chi = [ScalarField.from_function(grid, lambda x, y: 1.0)] * len(times)
    return TrajectorySegment(times, chi, rho, [uniform(grid, c, 0.0)] * len(times))


class TestCharacteristics:
    """RK4 feet of the flow"""

    def test_uniform_translation_foot(self, grid):
        seg = VelocitySegment.steady(uniform(grid, 0.1, -0.2), 0.0, 0.01)
        foot = backward_foot(seg, np.array([[0.5, 0.5], [0.0, 0.0]]), CharacteristicConfig())
        np.testing.assert_allclose(foot, [[0.499, 0.502], [0.999, 0.002]], atol=1e-12)

    def test_forward_inverts_backward(self, grid):
        u = VectorField.from_function(grid, lambda x, y: (0.2 * np.sin(TWO_PI * y), 0.1 * np.cos(TWO_PI * x)))
        seg = VelocitySegment.steady(u, 0.0, 0.01)
        cfg = CharacteristicConfig(substeps=4)
        start = np.array([[0.3, 0.7], [0.55, 0.1]])
        there = forward_positions(seg, start, cfg)
        back = backward_foot(seg, np.mod(there, 1.0), cfg)
        np.testing.assert_allclose(back, start, atol=1e-8)

    def test_displacement_guard(self, grid):
        seg = VelocitySegment.steady(uniform(grid, 10.0, 0.0), 0.0, 0.01)
        with pytest.raises(CflViolation):
            backward_foot(seg, np.array([[0.5, 0.5]]), CharacteristicConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CharacteristicConfig(substeps=0)
        with pytest.raises(ValueError):
            CharacteristicConfig(max_displacement=0.0)

    def test_segment_order(self, grid):
        with pytest.raises(ValueError, match='precedes'):
            VelocitySegment.steady(uniform(grid, 0.0, 0.0), 1.0, 0.5)


class TestTransport:
    """Density and indicator pull-back"""

    def test_translated_density(self, grid):
        rho = ScalarField.from_function(grid, lambda x, y: 1.0 + 0.5 * np.sin(TWO_PI * x))
        seg = VelocitySegment.steady(uniform(grid, 0.1, 0.0), 0.0, 0.01)
        out = transport_density(rho, seg, CharacteristicConfig())
        x, _ = grid.coords
        np.testing.assert_allclose(out.values, 1.0 + 0.5 * np.sin(TWO_PI * (x - 0.001)), atol=1e-4)

    def test_compressive_flow_keeps_mass_and_positivity(self, grid):
        rho = ScalarField.from_function(grid, lambda x, y: 1.0 + 0.0 * x)
        u = VectorField.from_function(grid, lambda x, y: (0.1 * np.sin(TWO_PI * x), 0.0 * y))
        seg = VelocitySegment.steady(u, 0.0, 0.02)
        out = transport_density(rho, seg, CharacteristicConfig())
        assert out.values.min() > 0
        assert integrate(out) == pytest.approx(integrate(rho), rel=1e-4)
        # converging flow around x = 1/2 piles up mass there
        assert out.values[16, 0] > 1.0 > out.values[0, 0]

    def test_indicator_stays_binary(self, grid):
        chi = ScalarField.from_function(grid, lambda x, y: ((x - 0.5) ** 2 + (y - 0.5) ** 2 < 0.0625).astype(float))
        u = VectorField.from_function(grid, lambda x, y: (0.3 * np.sin(TWO_PI * y), 0.0 * x))
        out = transport_indicator_grid(chi, VelocitySegment.steady(u, 0.0, 0.01), CharacteristicConfig())
        assert set(np.unique(out.values)) <= {0.0, 1.0}


class TestRenormalizedResidual:
    """Space-time residual of the renormalised continuity equation"""

    def test_mass_residual_on_exact_translation(self, grid):
        segment = translated_segment(grid)
        phi = FixedTest(ScalarField.from_function(grid, lambda x, y: np.cos(TWO_PI * x)))
        residual = renormalized_residual(lambda chi, rho: rho, lambda chi, rho: np.ones_like(rho), segment, phi)
        assert abs(residual) < 1e-4

    def test_internal_energy_residual_on_exact_translation(self, grid):
        segment = translated_segment(grid)
        phi = FixedTest(ScalarField.from_function(grid, lambda x, y: np.cos(TWO_PI * x)))
        pressures = MixturePressure(Isothermal(1.0), Isothermal(1.0))
        assert abs(internal_energy_residual(segment, pressures, phi)) < 1e-4

    def test_wrong_velocity_detected(self, grid):
        segment = translated_segment(grid)
        wrong = TrajectorySegment(segment.times, segment.chi, segment.rho,
                                  [uniform(grid, 0.0, 0.0)] * len(segment.times))
        phi = FixedTest(ScalarField.from_function(grid, lambda x, y: np.cos(TWO_PI * x)))
        residual = renormalized_residual(lambda chi, rho: rho, lambda chi, rho: np.ones_like(rho), wrong, phi)
        # pairing moves by -0.25 sin(2 pi c T) with nothing to balance it
        assert abs(residual) == pytest.approx(0.25 * np.sin(TWO_PI * 0.05), rel=1e-3)

    def test_times_must_increase(self, grid):
        segment = translated_segment(grid, steps=2)
        with pytest.raises(ValueError, match='increasing'):
            TrajectorySegment([0.0, 0.0, 0.1], segment.chi, segment.rho, segment.u)
