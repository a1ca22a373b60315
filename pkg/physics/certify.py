"""
Certify - residual checks of the dissipative varifold solution clauses
Evaluates the weak transport, mass, momentum-energy and varifold
compatibility relations plus the density/indicator/divergence
bounds on a stored trajectory, against seeded random band-limited test
functions, the zero test function and a Steklov-mollified copy of the
velocity.  Time integrals use the trapezoid rule on the stored snapshots;
the solver is never re-run.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline

from errors import InadmissibleTest, MalformedTrajectory
from logger import log_debug, log_info, log_warning

from .dynamics import Model, SimState, StepConfig, internal_energy, kinetic_energy
from .fields import (
    PeriodicGrid,
    ScalarField,
    SymTensorField,
    VectorField,
    forward,
    interpolate,
    inverse,
    sym_gradient,
)
from .flowmap import TrajectorySegment, interval_rates, renormalized_series
from .interface import (
    DiscreteVarifold,
    MarkerCurve,
    compatibility_residual,
    first_variation,
    perimeter,
    varifold_from_curve,
)
from .rheology import TraceBounded, mixture_envelope, mixture_eval, tensor_norm
from .thermo import mixture_pressure


# C_c in tau_c = C_c (h + dt_snap) S_c
DEFAULT_TOLERANCES: Dict[str, float] = {
    'transport': 1.0,
    'mass': 1.0,
    'momentum_energy': 1.0,
    'varifold': 1.0,
}
DENSITY_SLACK = 1e-8
DIVERGENCE_SLACK = 0.05
CLAUSE_ORDER = ('transport', 'mass', 'momentum_energy', 'varifold', 'bounds')


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Trajectory:
    """Stored snapshots of one run with the constitutive data it used"""
    times: Tuple[float, ...]
    rho: Tuple[ScalarField, ...]
    chi: Tuple[ScalarField, ...]
    u: Tuple[VectorField, ...]
    curves: Tuple[Optional[MarkerCurve], ...]
    model: Model
    cfg: StepConfig
    rho_bounds: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, 'times', tuple(float(t) for t in self.times))
        for name in ('rho', 'chi', 'u', 'curves'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        count = len(self.times)
        if count < 2:
            raise MalformedTrajectory("trajectory needs at least two snapshots")
        if not (len(self.rho) == len(self.chi) == len(self.u) == len(self.curves) == count):
            raise MalformedTrajectory("snapshot lists differ in length")
        n = self.rho[0].grid.n
        for i in range(count):
            for f in (self.rho[i], self.chi[i], self.u[i]):
                if f.grid.n != n:
                    raise MalformedTrajectory(f"snapshot {i} is on a {f.grid.n}-grid, expected {n}")
        if np.any(np.diff(np.asarray(self.times, dtype=float)) <= 0):
            raise MalformedTrajectory("snapshot times must be strictly increasing")

    @classmethod
    def from_states(cls, states: Sequence[SimState], model: Model, cfg: StepConfig,
                    rho_bounds: Optional[Tuple[float, float]] = None) -> 'Trajectory':
        return cls(
            times=tuple(s.time for s in states),
            rho=tuple(s.rho for s in states),
            chi=tuple(s.chi for s in states),
            u=tuple(s.u for s in states),
            curves=tuple(s.curve for s in states),
            model=model,
            cfg=cfg,
            rho_bounds=rho_bounds,
        )

    @property
    def grid(self) -> PeriodicGrid:
        return self.rho[0].grid

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def dt_snap(self) -> float:
        return float(np.max(np.diff(self.times)))

    @cached_property
    def segment(self) -> TrajectorySegment:
        return TrajectorySegment(self.times, self.chi, self.rho, self.u)

    @cached_property
    def varifolds(self) -> Tuple[Optional[DiscreteVarifold], ...]:
        return tuple(None if c is None else varifold_from_curve(c) for c in self.curves)

    @cached_property
    def energies(self) -> np.ndarray:
        """kinetic + internal + kappa perimeter per snapshot"""
        kappa = self.cfg.kappa
        return np.array([
            kinetic_energy(self.rho[i], self.u[i])
            + internal_energy(self.chi[i], self.rho[i], self.model.pressures)
            + (kappa * perimeter(self.curves[i]) if self.curves[i] is not None else 0.0)
            for i in range(len(self.times))
        ])

    @property
    def density_range(self) -> Tuple[float, float]:
        """Declared (rho_lo, rho_hi), else the range of the initial density"""
        if self.rho_bounds is not None:
            return self.rho_bounds
        rho0 = self.rho[0].values
        return float(rho0.min()), float(rho0.max())

    def tau_index(self, tau: float) -> int:
        matches = np.flatnonzero(np.isclose(self.times, tau, rtol=0.0, atol=1e-12))
        if matches.size == 0:
            raise ValueError(f"tau = {tau} is not a stored snapshot time")
        return int(matches[0])

    def scaled_momentum(self, factor: float, after: float) -> 'Trajectory':
        """Copy with u multiplied by factor on snapshots at t >= after"""
        u = tuple(factor * v if t >= after else v for t, v in zip(self.times, self.u))
        return Trajectory(self.times, self.rho, self.chi, u, self.curves, self.model, self.cfg, self.rho_bounds)


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TestFunction:
    """phi(t_i, x) = sum_r profiles[i, r] spatial[r](x) on the trajectory times"""
    __test__ = False

    grid: PeriodicGrid
    times: np.ndarray
    spatial: np.ndarray
    profiles: np.ndarray
    kind: str
    test_id: str

    def __post_init__(self):
        if self.kind not in ('scalar', 'vector'):
            raise ValueError(f"test function kind must be scalar or vector, got {self.kind}")
        times = np.asarray(self.times, dtype=float)
        profiles = np.asarray(self.profiles, dtype=float)
        spatial = np.asarray(self.spatial, dtype=float)
        if profiles.shape != (len(times), len(spatial)):
            raise ValueError(f"profiles must have shape {(len(times), len(spatial))}, got {profiles.shape}")
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'profiles', profiles)
        object.__setattr__(self, 'spatial', spatial)

    @cached_property
    def _rates(self) -> np.ndarray:
        if not np.any(np.diff(self.profiles, axis=0)):
            return np.zeros_like(self.profiles)
        return CubicSpline(self.times, self.profiles, axis=0)(self.times, 1)

    @cached_property
    def _spatial_gradients(self) -> np.ndarray:
        """scalar: (R, 2, n, n); vector: (R, 2, 2, n, n) with [a, b] = d_b phi_a"""
        ikx, iky = self.grid.derivative_symbols
        c = forward(self.spatial)
        return np.stack([inverse(ikx * c), inverse(iky * c)], axis=-3)

    def _combine(self, weights: np.ndarray, data: np.ndarray) -> np.ndarray:
        return np.tensordot(weights, data, axes=1)

    def value(self, i: int) -> np.ndarray:
        return self._combine(self.profiles[i], self.spatial)

    def time_derivative(self, i: int) -> np.ndarray:
        """Derivative of the cubic-spline profile at t_i"""
        return self._combine(self._rates[i], self.spatial)

    def gradient(self, i: int) -> np.ndarray:
        return self._combine(self.profiles[i], self._spatial_gradients)

    def sym_gradient(self, i: int) -> np.ndarray:
        """(n, n, 3) tensor array"""
        G = self.gradient(i)
        return np.stack([G[0, 0], 0.5 * (G[0, 1] + G[1, 0]), G[1, 1]], axis=-1)

    def divergence(self, i: int) -> np.ndarray:
        G = self.gradient(i)
        return G[0, 0] + G[1, 1]

    def at_points(self, i: int, points) -> np.ndarray:
        return interpolate(VectorField(self.grid, self.value(i)), points)

    def gradient_at_points(self, i: int, points) -> np.ndarray:
        G = self.gradient(i)
        comps = np.stack([interpolate(ScalarField(self.grid, G[a, b]), points)
                          for a in range(2) for b in range(2)], axis=-1)
        return comps.reshape(comps.shape[:-1] + (2, 2))

    @cached_property
    def admissibility_scale(self) -> float:
        """sup over space-time of |D phi|"""
        if self.kind != 'vector':
            return 0.0
        return max(float(np.max(tensor_norm(self.sym_gradient(i)))) for i in range(len(self.times)))

    def scaled(self, factor: float) -> 'TestFunction':
        return TestFunction(self.grid, self.times, self.spatial * factor, self.profiles, self.kind, self.test_id)


def constant_test(grid: PeriodicGrid, times, value: float = 1.0, test_id: str = 'one') -> TestFunction:
    spatial = np.full((1, grid.n, grid.n), float(value))
    return TestFunction(grid, times, spatial, np.ones((len(times), 1)), 'scalar', test_id)


def zero_test(grid: PeriodicGrid, times, test_id: str = 'zero') -> TestFunction:
    return TestFunction(grid, times, np.zeros((1, 2, grid.n, grid.n)), np.ones((len(times), 1)), 'vector', test_id)


def _random_band_limited(grid: PeriodicGrid, K: int, rng: np.random.Generator, components: int) -> np.ndarray:
    kx, ky = grid.wavenumbers
    box = grid.k_max <= K
    decay = 1.0 / (1.0 + kx ** 2 + ky ** 2)
    shape = (components, grid.n, grid.n)
    coeffs = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.where(box, decay, 0.0)
    values = inverse(coeffs)
    return values / max(float(np.max(np.abs(values))), 1e-300)


def _random_profile(times: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    span = max(float(times[-1] - times[0]), 1e-300)
    s = (times - times[0]) / span
    a, b, c = rng.standard_normal(3)
    return (1.0 + 0.5 * a * np.sin(np.pi * s) + 0.5 * b * np.cos(2.0 * np.pi * s) + 0.25 * c * s)[:, None]


def domain_rescale(phi: TestFunction, r0: float) -> TestFunction:
    """Shrink phi so that |D phi| <= r0 / 2 everywhere"""
    scale = phi.admissibility_scale
    if math.isinf(r0) or scale <= 0.5 * r0:
        return phi
    return phi.scaled(0.5 * r0 / scale)


def random_test_functions(traj: Trajectory, count: int, rng: np.random.Generator,
                          K: Optional[int] = None) -> Tuple[List[TestFunction], List[TestFunction]]:
    """Seeded scalar and vector band-limited test functions; vectors are admissible"""
    if K is None:
        K = max(1, traj.cfg.N // 2)
    times = np.asarray(traj.times, dtype=float)
    r0 = traj.model.potentials.domain_radius
    scalars, vectors = [], []
    for j in range(count):
        scalar = _random_band_limited(traj.grid, K, rng, 1)
        scalars.append(TestFunction(traj.grid, times, scalar, _random_profile(times, rng), 'scalar', f'rand{j:03d}'))
        vector = _random_band_limited(traj.grid, K, rng, 2)[None]
        phi = TestFunction(traj.grid, times, vector, _random_profile(times, rng), 'vector', f'rand{j:03d}')
        vectors.append(domain_rescale(phi, r0))
    return scalars, vectors


def check_admissible(phi: TestFunction, traj: Trajectory) -> None:
    mixture = traj.model.potentials
    for i in range(len(phi.times)):
        d = phi.sym_gradient(i)
        if not (np.all(np.isfinite(mixture.f1.evaluate(d))) and np.all(np.isfinite(mixture.f2.evaluate(d)))):
            raise InadmissibleTest(phi.test_id)


# ---------------------------------------------------------------------------
# Steklov mollifier and Jensen property
# ---------------------------------------------------------------------------

def _smooth_step(r: np.ndarray) -> np.ndarray:
    r = np.clip(r, 0.0, 1.0)
    with np.errstate(divide='ignore', over='ignore'):
        a = np.where(r > 0, np.exp(-1.0 / np.where(r > 0, r, 1.0)), 0.0)
        b = np.where(r < 1, np.exp(-1.0 / np.where(r < 1, 1.0 - r, 1.0)), 0.0)
    return a / (a + b)


def temporal_cutoff(times: np.ndarray, eps_cut: float) -> np.ndarray:
    """Smooth cutoff: 0 at both ends, 1 on [t0 + eps_cut, tau - eps_cut]"""
    t0, tau = times[0], times[-1]
    return _smooth_step(np.minimum(times - t0, tau - times) / eps_cut)


def steklov_weights(times: np.ndarray, h_time: float, nodes: int = 65) -> np.ndarray:
    """Matrix W with (W f)_i the two-sided Steklov average of piecewise-linear f at t_i"""
    s = np.linspace(-h_time, h_time, nodes)
    kernel = (1.0 - np.abs(s) / h_time) / h_time
    quad = np.full(nodes, s[1] - s[0])
    quad[[0, -1]] *= 0.5
    factor = quad * kernel
    targets = times[:, None] + s[None, :]
    eye = np.eye(len(times))
    W = np.empty((len(times), len(times)))
    for j in range(len(times)):
        W[:, j] = np.interp(targets, times, eye[j]) @ factor
    return W


def steklov_mollify(traj: Trajectory, h_time: float, eps_cut: float,
                    test_id: str = 'steklov') -> TestFunction:
    """xi [eta_-h * eta_h * (xi u)], rescaled into the potentials' domain"""
    times = np.asarray(traj.times, dtype=float)
    tau = times[-1] - times[0]
    if not 0 < h_time < eps_cut < 0.5 * tau:
        raise ValueError(f"Steklov parameters need 0 < h_time < eps_cut < tau/2, got {h_time}, {eps_cut}, {tau}")
    xi = temporal_cutoff(times, eps_cut)
    W = steklov_weights(times, h_time)
    profiles = xi[:, None] * W * xi[None, :]
    spatial = np.stack([v.values for v in traj.u])
    phi = TestFunction(traj.grid, times, spatial, profiles, 'vector', test_id)
    return domain_rescale(phi, traj.model.potentials.domain_radius)


def jensen_mollification_check(f, field_series: Sequence, times, h_time: float) -> float:
    """max of F(mollified D) - mollified F(D); <= 0 for convex F"""
    times = np.asarray(times, dtype=float)
    D = np.stack([
        s.as_tensor_array() if isinstance(s, SymTensorField) else np.asarray(s, dtype=float)
        for s in field_series
    ])
    W = steklov_weights(times, h_time)
    mollified_d = np.tensordot(W, D, axes=1)
    mollified_f = np.tensordot(W, f.evaluate(D), axes=1)
    return float(np.max(f.evaluate(mollified_d) - mollified_f))


# ---------------------------------------------------------------------------
# clause series over all stored times
# ---------------------------------------------------------------------------

def _weak_series(traj: Trajectory, phi: TestFunction, b, db) -> Tuple[np.ndarray, np.ndarray]:
    series = renormalized_series(b, db, traj.segment, phi)
    return series.residuals(), series.scales()


def _indicator(chi, rho):
    return chi


def _zero(chi, rho):
    return np.zeros_like(rho)


def _density(chi, rho):
    return rho


def _one(chi, rho):
    return np.ones_like(rho)


def transport_series(traj: Trajectory, phi: TestFunction) -> Tuple[np.ndarray, np.ndarray]:
    return _weak_series(traj, phi, _indicator, _zero)


def mass_series(traj: Trajectory, phi: TestFunction) -> Tuple[np.ndarray, np.ndarray]:
    return _weak_series(traj, phi, _density, _one)


def momentum_energy_series(traj: Trajectory, phi: TestFunction) -> Tuple[np.ndarray, np.ndarray]:
    """LHS - RHS of the momentum-energy inequality at every stored tau"""
    mixture = traj.model.potentials
    kappa = traj.cfg.kappa
    eps = traj.cfg.eps
    area = traj.grid.cell_area
    count = len(traj.times)
    f_phi = np.empty(count)
    f_u = np.empty(count)
    pairing = np.empty(count)
    volume = np.empty(count)
    volume_abs = np.empty(count)
    surface = np.zeros(count)
    momenta = []
    for i in range(count):
        chi = traj.chi[i].values
        rho = traj.rho[i].values
        u = traj.u[i].values
        d_phi = phi.sym_gradient(i)
        value_phi = mixture_eval(mixture, chi, d_phi)
        if not np.all(np.isfinite(value_phi)):
            raise InadmissibleTest(phi.test_id)
        f_phi[i] = area * float(np.sum(value_phi))
        d_u = sym_gradient(traj.u[i]).as_tensor_array()
        f_u[i] = area * float(np.sum(mixture_envelope(mixture, chi, d_u, eps)))
        value = phi.value(i)
        G = phi.gradient(i)
        m = rho * u
        momenta.append(m)
        pairing[i] = area * float(np.sum(m * value))
        parts = (
            np.sum(m[:, None] * u[None, :] * G),
            np.sum(mixture_pressure(traj.model.pressures, chi, rho) * (G[0, 0] + G[1, 1])),
        )
        volume[i] = area * float(sum(parts))
        volume_abs[i] = area * float(sum(abs(p) for p in parts))
        varifold = traj.varifolds[i]
        if kappa > 0 and varifold is not None:
            surface[i] = first_variation(varifold, lambda pts, i=i: phi.gradient_at_points(i, pts))
    times = np.asarray(traj.times, dtype=float)
    rate, rate_magnitude = interval_rates(momenta, phi, area)

    def cum(y):
        return cumulative_trapezoid(y, times, initial=0.0)

    bracket = (traj.energies - pairing) - (traj.energies[0] - pairing[0])
    value = cum(f_phi - f_u) - (bracket + rate + cum(volume) - kappa * cum(surface))
    scale = (
        cum(np.abs(f_phi) + np.abs(f_u))
        + np.abs(traj.energies) + abs(traj.energies[0]) + np.abs(pairing) + abs(pairing[0])
        + rate_magnitude + cum(volume_abs) + kappa * cum(np.abs(surface))
    )
    return value, scale


def residual_transport(traj: Trajectory, phi: TestFunction, tau: float) -> float:
    """[int chi phi]_0^tau - int int chi (dt phi + u.grad phi + div u phi)"""
    residual, _ = transport_series(traj, phi)
    return float(residual[traj.tau_index(tau)])


def residual_mass(traj: Trajectory, phi: TestFunction, tau: float) -> float:
    residual, _ = mass_series(traj, phi)
    return float(residual[traj.tau_index(tau)])


def inequality_momentum_energy(traj: Trajectory, phi: TestFunction, tau: float) -> float:
    """Must be >= -tol for a dissipative solution"""
    value, _ = momentum_energy_series(traj, phi)
    return float(value[traj.tau_index(tau)])


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------

def trace_bound(model: Model) -> Optional[float]:
    """Divergence bound dbar when both phases carry a trace bound"""
    bounds = []
    for f in (model.potentials.f1, model.potentials.f2):
        found = None
        while f is not None:
            if isinstance(f, TraceBounded):
                found = f.dbar if found is None else min(found, f.dbar)
            f = getattr(f, 'inner', None)
        if found is None:
            return None
        bounds.append(found)
    return max(bounds)


@dataclass(frozen=True)
class BoundsViolation:
    """One located failure of a bound"""
    time: float
    kind: str
    location: Tuple[int, int]
    value: float
    limit: float


@dataclass
class BoundsReport:
    """Per-snapshot indicator, density envelope and divergence checks"""
    violations: List[BoundsViolation] = field(default_factory=list)
    worst_excess: Dict[str, float] = field(default_factory=dict)
    max_divergence: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.violations


def bounds_check(traj: Trajectory, dbar: Optional[float], rho_lo: float, rho_hi: float) -> BoundsReport:
    """Indicator binary, density envelope, divergence bound; without dbar only rho > 0"""
    report = BoundsReport(worst_excess={'chi': 0.0, 'rho': -math.inf})
    if dbar is not None:
        report.worst_excess['div'] = -math.inf
    for i, t in enumerate(traj.times):
        chi = traj.chi[i].values
        distance = np.minimum(np.abs(chi), np.abs(chi - 1.0))
        report.worst_excess['chi'] = max(report.worst_excess['chi'], float(distance.max()))
        if np.any(distance > 0):
            ix, iy = np.unravel_index(np.argmax(distance), distance.shape)
            report.violations.append(BoundsViolation(t, 'chi', (int(ix), int(iy)), float(chi[ix, iy]), 1.0))

        rho = traj.rho[i].values
        if dbar is None:
            lower, upper = 0.0, math.inf
            excess = -rho
            violated = float(excess.max()) >= 0
        else:
            lower = rho_lo * math.exp(-t * dbar) - DENSITY_SLACK
            upper = rho_hi * math.exp(t * dbar) + DENSITY_SLACK
            excess = np.maximum(lower - rho, rho - upper)
            violated = float(excess.max()) > 0
        report.worst_excess['rho'] = max(report.worst_excess['rho'], float(excess.max()))
        if violated:
            ix, iy = np.unravel_index(np.argmax(excess), excess.shape)
            limit = lower if rho[ix, iy] <= lower else upper
            report.violations.append(BoundsViolation(t, 'rho', (int(ix), int(iy)), float(rho[ix, iy]), limit))

        div = np.abs(traj.segment.divergences[i].values)
        report.max_divergence = max(report.max_divergence, float(div.max()))
        if dbar is not None:
            cap = dbar * (1.0 + DIVERGENCE_SLACK)
            worst_div = float(div.max()) - cap
            report.worst_excess['div'] = max(report.worst_excess['div'], worst_div)
            if worst_div > 0:
                ix, iy = np.unravel_index(np.argmax(div), div.shape)
                report.violations.append(BoundsViolation(t, 'div', (int(ix), int(iy)), float(div[ix, iy]), cap))
    for v in report.violations:
        log_warning(f"bounds: {v.kind} = {v.value:.6g} at node {v.location}, t = {v.time:g} (limit {v.limit:.6g})")
    return report


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualRow:
    """One clause evaluation"""
    clause: str
    test_id: str
    tau: float
    residual: float
    tolerance: float
    passed: bool
    scale: float = 0.0


@dataclass
class ResidualReport:
    """All clause rows and the verdict"""
    rows: List[ResidualRow]
    tolerances: Dict[str, float]
    h: float
    dt_snap: float
    n_tests: int
    seed: int

    @property
    def verdict(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def failed_clauses(self) -> List[str]:
        failed = {r.clause for r in self.rows if not r.passed}
        return [c for c in CLAUSE_ORDER if c in failed]

    def clause_rows(self, clause: str) -> List[ResidualRow]:
        return [r for r in self.rows if r.clause == clause]

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(f"verdict: {'PASS' if self.verdict else 'FAIL'}\n")
        out.write(f"h = {self.h:.6g}, dt_snap = {self.dt_snap:.6g}, tests = {self.n_tests}, seed = {self.seed}\n")
        out.write("tolerance constants: " + ', '.join(f"{k}={v:g}" for k, v in sorted(self.tolerances.items())) + '\n')
        for clause in CLAUSE_ORDER:
            rows = self.clause_rows(clause)
            if not rows:
                continue
            failed = [r for r in rows if not r.passed]
            out.write(f"\n[{clause}] {len(rows) - len(failed)}/{len(rows)} passed\n")
            worst = min(rows, key=lambda r: r.tolerance - abs(r.residual) if clause != 'momentum_energy' else r.residual + r.tolerance)
            out.write(f"  worst: test {worst.test_id} tau={worst.tau:g} residual={worst.residual:+.3e} tol={worst.tolerance:.3e}\n")
            for r in failed:
                out.write(f"  FAIL: test {r.test_id} tau={r.tau:g} residual={r.residual:+.3e} tol={r.tolerance:.3e}\n")
        return out.getvalue()

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(['clause', 'test_id', 'tau', 'residual', 'tol', 'pass'])
        for r in self.rows:
            writer.writerow([r.clause, r.test_id, repr(r.tau), repr(r.residual), repr(r.tolerance), int(r.passed)])
        return out.getvalue()


def _rows_from_series(clause: str, test_id: str, traj: Trajectory, residual: np.ndarray, scale: np.ndarray,
                      constant: float, one_sided: bool) -> List[ResidualRow]:
    unit = traj.h + traj.dt_snap
    rows = []
    for i in range(1, len(traj.times)):
        tol = constant * unit * scale[i]
        value = float(residual[i])
        passed = value >= -tol if one_sided else abs(value) <= tol
        rows.append(ResidualRow(clause, test_id, float(traj.times[i]), value, tol, passed, unit * scale[i]))
    return rows


def _unit_mode_field(grid: PeriodicGrid) -> VectorField:
    return VectorField.from_function(grid, lambda x, y: (np.sin(2 * np.pi * y), np.cos(2 * np.pi * x)))


def compatibility_rows(traj: Trajectory, vectors: Sequence[TestFunction], constant: float) -> List[ResidualRow]:
    unit = traj.h + traj.dt_snap
    rows = []
    basis = _unit_mode_field(traj.grid)
    for i, (curve, varifold) in enumerate(zip(traj.curves, traj.varifolds)):
        if curve is None:
            continue
        candidates = [('basis', lambda pts: interpolate(basis, pts))]
        candidates += [(phi.test_id, lambda pts, phi=phi, i=i: phi.at_points(i, pts)) for phi in vectors]
        for test_id, fn in candidates:
            value = compatibility_residual(varifold, curve, fn)
            magnitude = 2.0 * float(np.sum(varifold.w * np.linalg.norm(fn(varifold.x), axis=1)))
            tol = constant * unit * magnitude
            rows.append(ResidualRow('varifold', test_id, float(traj.times[i]), value, tol, abs(value) <= tol, unit * magnitude))
    return rows


def certify_all(traj: Trajectory, n_tests: int, seed: int,
                tolerances: Optional[Dict[str, float]] = None) -> ResidualReport:
    """Run every clause check at every stored time"""
    constants = dict(DEFAULT_TOLERANCES)
    if tolerances:
        constants.update(tolerances)
    rng = np.random.default_rng(seed)
    rows: List[ResidualRow] = []

    scalars, vectors = random_test_functions(traj, n_tests, rng)
    if n_tests > 0:
        times = np.asarray(traj.times, dtype=float)
        scalars = [constant_test(traj.grid, times)] + scalars
        suite = [zero_test(traj.grid, times)]
        tau = times[-1] - times[0]
        if len(times) >= 5 and tau > 0:
            eps_cut = tau / 8.0
            h_time = min(tau / 16.0, 2.0 * traj.dt_snap)
            suite.append(steklov_mollify(traj, h_time, eps_cut))
        vectors = suite + vectors
    for phi in vectors:
        check_admissible(phi, traj)

    for phi in scalars:
        residual, scale = transport_series(traj, phi)
        rows += _rows_from_series('transport', phi.test_id, traj, residual, scale, constants['transport'], one_sided=False)
        residual, scale = mass_series(traj, phi)
        rows += _rows_from_series('mass', phi.test_id, traj, residual, scale, constants['mass'], one_sided=False)
    for phi in vectors:
        value, scale = momentum_energy_series(traj, phi)
        rows += _rows_from_series('momentum_energy', phi.test_id, traj, value, scale, constants['momentum_energy'], one_sided=True)

    if traj.cfg.kappa > 0:
        rows += compatibility_rows(traj, [v for v in vectors if v.test_id.startswith('rand')], constants['varifold'])

    lo, hi = traj.density_range
    bounds = bounds_check(traj, trace_bound(traj.model), lo, hi)
    failed_kinds = {v.kind for v in bounds.violations}
    for kind, excess in sorted(bounds.worst_excess.items()):
        rows.append(ResidualRow('bounds', kind, float(traj.times[-1]), excess, 0.0, kind not in failed_kinds))

    report = ResidualReport(rows, constants, traj.h, traj.dt_snap, n_tests, seed)
    log_debug(f"certify: {len(rows)} rows, verdict {report.verdict}")
    if not report.verdict:
        log_info(f"certify: failed clauses {', '.join(report.failed_clauses)}")
    return report


def calibrate_tolerances(reports: Sequence[ResidualReport], safety: float = 10.0) -> Dict[str, float]:
    """C_c from reference runs whose exact residuals vanish"""
    constants = dict(DEFAULT_TOLERANCES)
    for clause in DEFAULT_TOLERANCES:
        ratios = []
        for report in reports:
            for r in report.clause_rows(clause):
                if r.scale <= 0:
                    continue
                excess = max(-r.residual, 0.0) if clause == 'momentum_energy' else abs(r.residual)
                ratios.append(excess / r.scale)
        if ratios:
            constants[clause] = max(safety * max(ratios), 1e-12)
    return constants
