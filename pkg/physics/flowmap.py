"""
Flowmap - Lagrangian characteristics and semi-Lagrangian transport
Backward RK4 feet of the flow of a velocity segment, transport of the
density by the characteristics formula

    rho(t1, x) = rho(t0, X(t0)) exp(-int_{t0}^{t1} div u(s, X(s)) ds)

nearest-node transport of the phase indicator, and the space-time residual
of the renormalised continuity equation.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from errors import CflViolation
from logger import log_debug

from .fields import (
    PeriodicGrid,
    ScalarField,
    VectorField,
    divergence,
    interpolate,
    nearest_node,
    stencil_bounds,
)
from .thermo import MixturePressure, mixture_potential, mixture_pressure


@dataclass(frozen=True)
class CharacteristicConfig:
    """RK4 substeps per transport step and displacement guard"""
    substeps: int = 2
    max_displacement: float = 0.05

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")
        if not self.max_displacement > 0:
            raise ValueError(f"max_displacement must be > 0, got {self.max_displacement}")

    def guard(self, grid: PeriodicGrid) -> float:
        return min(self.max_displacement, 0.5 * grid.h)


@dataclass(frozen=True, eq=False)
class VelocitySegment:
    """Velocity on [t0, t1], linear in time between two endpoint fields"""
    u0: VectorField
    u1: VectorField
    t0: float
    t1: float

    def __post_init__(self):
        if self.t1 < self.t0:
            raise ValueError(f"segment end {self.t1} precedes start {self.t0}")

    @classmethod
    def steady(cls, u: VectorField, t0: float, t1: float) -> 'VelocitySegment':
        return cls(u, u, t0, t1)

    @property
    def grid(self) -> PeriodicGrid:
        return self.u0.grid

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    @cached_property
    def _divergences(self) -> Tuple[ScalarField, ScalarField]:
        d0 = divergence(self.u0)
        return d0, (d0 if self.u1 is self.u0 else divergence(self.u1))

    def _weight(self, t: float) -> float:
        if self.t1 == self.t0:
            return 0.0
        return (t - self.t0) / (self.t1 - self.t0)

    def velocity(self, t: float, points: np.ndarray) -> np.ndarray:
        theta = self._weight(t)
        v0 = interpolate(self.u0, points)
        if self.u1 is self.u0 or theta == 0.0:
            return v0
        return (1.0 - theta) * v0 + theta * interpolate(self.u1, points)

    def divergence(self, t: float, points: np.ndarray) -> np.ndarray:
        theta = self._weight(t)
        d0, d1 = self._divergences
        v0 = interpolate(d0, points)
        if d1 is d0 or theta == 0.0:
            return v0
        return (1.0 - theta) * v0 + theta * interpolate(d1, points)


def _integrate_backward(seg: VelocitySegment, x: np.ndarray, cfg: CharacteristicConfig,
                        track_divergence: bool) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """RK4 from (t1, x) back to t0 in lifted coordinates"""
    X = np.array(x, dtype=float)
    if seg.duration == 0:
        return X, (np.zeros(X.shape[:-1]) if track_divergence else None)
    delta = seg.duration / cfg.substeps
    limit = cfg.guard(seg.grid)
    integral = np.zeros(X.shape[:-1]) if track_divergence else None
    t = seg.t1
    u_here = seg.velocity(t, X)
    for _ in range(cfg.substeps):
        k1 = u_here
        k2 = seg.velocity(t - 0.5 * delta, X - 0.5 * delta * k1)
        k3 = seg.velocity(t - 0.5 * delta, X - 0.5 * delta * k2)
        k4 = seg.velocity(t - delta, X - delta * k3)
        X_next = X - delta / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        displacement = float(np.max(np.linalg.norm(X_next - X, axis=-1), initial=0.0))
        if displacement > limit:
            raise CflViolation(displacement, limit)
        u_next = seg.velocity(t - delta, X_next)
        if track_divergence:
            # cubic Hermite midpoint of the path, then Simpson in time
            X_mid = 0.5 * (X + X_next) + delta * (u_next - u_here) / 8.0
            integral += delta / 6.0 * (
                seg.divergence(t, X)
                + 4.0 * seg.divergence(t - 0.5 * delta, X_mid)
                + seg.divergence(t - delta, X_next)
            )
        X = X_next
        u_here = u_next
        t -= delta
    return X, integral


def backward_foot(seg: VelocitySegment, x, cfg: CharacteristicConfig) -> np.ndarray:
    """Foot at t0 of the characteristic through (t1, x), wrapped into [0,1)^2"""
    foot, _ = _integrate_backward(seg, np.asarray(x, dtype=float), cfg, track_divergence=False)
    return np.mod(foot, 1.0)


def forward_positions(seg: VelocitySegment, x, cfg: CharacteristicConfig) -> np.ndarray:
    """Forward RK4 images at t1 of points given at t0 (lifted, not wrapped)"""
    reversed_seg = VelocitySegment(-1.0 * seg.u1, -1.0 * seg.u0, -seg.t1, -seg.t0)
    positions, _ = _integrate_backward(reversed_seg, np.asarray(x, dtype=float), cfg, track_divergence=False)
    return positions


def node_points(grid: PeriodicGrid) -> np.ndarray:
    x, y = grid.coords
    return np.stack([x, y], axis=-1)


def transport_density(rho_prev: ScalarField, seg: VelocitySegment, cfg: CharacteristicConfig) -> ScalarField:
    points = node_points(rho_prev.grid)
    foot, integral = _integrate_backward(seg, points, cfg, track_divergence=True)
    foot = np.mod(foot, 1.0)
    value = interpolate(rho_prev, foot)
    undershoot = value <= 0
    if np.any(undershoot):
        lo, _ = stencil_bounds(rho_prev, foot)
        value = np.where(undershoot, lo, value)
        log_debug(f"transport: clipped {int(np.count_nonzero(undershoot))} nonpositive interpolant(s)")
    return ScalarField(rho_prev.grid, value * np.exp(-integral))


def transport_indicator_grid(chi_prev: ScalarField, seg: VelocitySegment,
                             cfg: CharacteristicConfig) -> ScalarField:
    """Nearest-node pull-back; keeps values in {0, 1}"""
    foot = backward_foot(seg, node_points(chi_prev.grid), cfg)
    return ScalarField(chi_prev.grid, nearest_node(chi_prev, foot))


# ---------------------------------------------------------------------------
# renormalised continuity residual
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrajectorySegment:
    """Stored states on a strictly increasing list of times"""
    times: Sequence[float]
    chi: Sequence[ScalarField]
    rho: Sequence[ScalarField]
    u: Sequence[VectorField]

    def __post_init__(self):
        count = len(self.times)
        if count < 2 or not (len(self.chi) == len(self.rho) == len(self.u) == count):
            raise ValueError("trajectory segment needs >= 2 times and one state per time")
        if np.any(np.diff(np.asarray(self.times, dtype=float)) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    @cached_property
    def divergences(self) -> Tuple[ScalarField, ...]:
        return tuple(divergence(u) for u in self.u)


@dataclass(frozen=True, eq=False)
class WeakSeries:
    """Per-time terms of a weak transport identity tested against phi.

    rate holds int_0^t_i int b dt phi, integrated interval by interval as
    int b_bar (phi_{i+1} - phi_i); this is exact when b and phi are linear
    in time between stored states.
    """
    times: np.ndarray
    pairings: np.ndarray
    rate: np.ndarray
    rate_magnitude: np.ndarray
    volume: np.ndarray
    magnitude: np.ndarray

    def residuals(self) -> np.ndarray:
        return (self.pairings - self.pairings[0] - self.rate
                - cumulative_trapezoid(self.volume, self.times, initial=0.0))

    def scales(self) -> np.ndarray:
        return (np.abs(self.pairings) + abs(self.pairings[0]) + self.rate_magnitude
                + cumulative_trapezoid(self.magnitude, self.times, initial=0.0))


def interval_rates(weights: Sequence[np.ndarray], phi, area: float) -> Tuple[np.ndarray, np.ndarray]:
    """Cumulative int w_bar . (phi_{i+1} - phi_i) and its absolute counterpart"""
    count = len(weights)
    rate = np.zeros(count)
    rate_magnitude = np.zeros(count)
    previous = phi.value(0)
    for i in range(1, count):
        value = phi.value(i)
        increment = area * float(np.sum(0.5 * (weights[i - 1] + weights[i]) * (value - previous)))
        rate[i] = rate[i - 1] + increment
        rate_magnitude[i] = rate_magnitude[i - 1] + abs(increment)
        previous = value
    return rate, rate_magnitude


def renormalized_series(b: Callable, db: Callable, segment: TrajectorySegment, phi) -> WeakSeries:
    """Pairings int b phi and the volume terms at every segment time.

    b(chi, rho) and its rho-derivative db(chi, rho) act on nodal arrays;
    phi provides value(i) and gradient(i) at the segment's time indices.
    """
    area = segment.rho[0].grid.cell_area
    count = len(segment.times)
    pairings = np.empty(count)
    volume = np.empty(count)
    magnitude = np.empty(count)
    weights = []
    for i in range(count):
        chi = segment.chi[i].values
        rho = segment.rho[i].values
        bval = b(chi, rho)
        weights.append(bval)
        value = phi.value(i)
        grad_phi = phi.gradient(i)
        u = segment.u[i].values
        parts = (
            bval * (u[0] * grad_phi[0] + u[1] * grad_phi[1]),
            (bval - rho * db(chi, rho)) * segment.divergences[i].values * value,
        )
        sums = [area * float(np.sum(p)) for p in parts]
        pairings[i] = area * float(np.sum(bval * value))
        volume[i] = sum(sums)
        magnitude[i] = sum(abs(s) for s in sums)
    rate, rate_magnitude = interval_rates(weights, phi, area)
    return WeakSeries(np.asarray(segment.times, dtype=float), pairings, rate, rate_magnitude, volume, magnitude)


def renormalized_residual(b: Callable, db: Callable, segment: TrajectorySegment, phi) -> float:
    """[int b phi] - int int (b dt phi + b u.grad phi + (b - rho db) div u phi)"""
    return float(renormalized_series(b, db, segment, phi).residuals()[-1])


def internal_energy_residual(segment: TrajectorySegment, pressures: MixturePressure, phi) -> float:
    """Renormalised residual for b = P(chi, rho): P' rho - P = p"""

    def b(chi, rho):
        return mixture_potential(pressures, chi, rho)

    def db(chi, rho):
        return (mixture_pressure(pressures, chi, rho) + mixture_potential(pressures, chi, rho)) / rho

    return renormalized_residual(b, db, segment, phi)
