"""
Dynamics - Faedo-Galerkin momentum solver and time stepping
Band-limited momentum balance with a density-weighted mass operator,
Moreau-Yosida viscous stress, barotropic pressure, hyperviscosity and
surface tension from the tracked interface; the energy ledger and the
advisory check of the existence-theorem hypotheses.

One step is a first-order splitting: transport density and interface
with the current velocity, then advance momentum with the right-hand side
evaluated on the post-transport state.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from errors import IterationLimit
from logger import log_debug, log_step, log_warning

from .fields import (
    PeriodicGrid,
    ScalarField,
    SymTensorField,
    VectorField,
    bandlimit_mode_count,
    dealias,
    divergence,
    forward,
    gradient,
    hyper_apply,
    inner,
    integrate,
    inverse,
    project_bandlimit,
    sym_gradient,
    tensor_divergence,
)
from .flowmap import CharacteristicConfig, VelocitySegment, transport_density
from .interface import (
    MarkerCurve,
    advect_markers,
    first_variation_modes,
    perimeter,
    rasterize_chi,
    varifold_from_curve,
)
from .rheology import (
    MixturePotential,
    TraceBounded,
    check_comparability,
    contract,
    default_samples,
    mixture_prox,
)
from .thermo import Isothermal, MixturePressure, mixture_potential, mixture_pressure


CG_TOLERANCE = 1e-10


def auto_delta(N: int, m: int) -> float:
    """Hyperviscosity coefficient that only damps the spectral tail"""
    return 1e-8 * (2.0 * math.pi * N) ** (-4 * m)


@dataclass(frozen=True)
class StepConfig:
    """Time step, Galerkin cutoff and regularisation parameters"""
    dt: float
    N: int
    eps: float = 1e-3
    delta: float = 0.0
    m: int = 5
    kappa: float = 0.0
    t_end: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.N < 1:
            raise ValueError(f"band limit N must be >= 1, got {self.N}")
        if not self.eps > 0:
            raise ValueError(f"Moreau parameter eps must be > 0, got {self.eps}")
        if self.delta < 0:
            raise ValueError(f"hyperviscosity delta must be >= 0, got {self.delta}")
        if self.m < 1:
            raise ValueError(f"hyperviscosity order m must be >= 1, got {self.m}")
        if self.delta > 0 and self.m < 5:
            raise ValueError(f"hyperviscosity order m must be >= 5 when delta > 0, got {self.m}")
        if self.kappa < 0:
            raise ValueError(f"surface tension kappa must be >= 0, got {self.kappa}")
        if self.t_end < 0:
            raise ValueError(f"t_end must be >= 0, got {self.t_end}")

    def check_grid(self, grid: PeriodicGrid) -> None:
        if self.N > grid.n // 3:
            raise ValueError(f"band limit N = {self.N} exceeds the dealiasing margin n/3 = {grid.n // 3}")

    @property
    def step_count(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class Model:
    """Constitutive data of a run"""
    potentials: MixturePotential
    pressures: MixturePressure
    characteristics: CharacteristicConfig = field(default_factory=CharacteristicConfig)


@dataclass(frozen=True)
class EnergyLedger:
    """Energies at the current time and cumulative dissipation"""
    kinetic: float
    internal: float
    interface: float
    dissipated_cum: float = 0.0
    hyper_cum: float = 0.0
    initial_total: Optional[float] = None

    def __post_init__(self):
        values = (self.kinetic, self.internal, self.interface, self.dissipated_cum, self.hyper_cum)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"energy ledger has non-finite entries: {values}")
        if self.initial_total is None:
            object.__setattr__(self, 'initial_total', self.total)

    @property
    def total(self) -> float:
        return self.kinetic + self.internal + self.interface

    @property
    def balance_residual(self) -> float:
        """E(t) - E(0) + dissipation; <= 0 up to discretisation error"""
        return self.total - self.initial_total + self.dissipated_cum + self.hyper_cum


@dataclass(frozen=True, eq=False)
class SimState:
    """Approximate solution at one time"""
    time: float
    rho: ScalarField
    chi: ScalarField
    u: VectorField
    ledger: EnergyLedger
    curve: Optional[MarkerCurve] = None
    step_index: int = 0

    @property
    def grid(self) -> PeriodicGrid:
        return self.rho.grid


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------

def kinetic_energy(rho: ScalarField, u: VectorField) -> float:
    return 0.5 * rho.grid.cell_area * float(np.sum(rho.values * (u.values[0] ** 2 + u.values[1] ** 2)))


def internal_energy(chi: ScalarField, rho: ScalarField, pressures: MixturePressure) -> float:
    return rho.grid.cell_area * float(np.sum(mixture_potential(pressures, chi.values, rho.values)))


def interface_energy(curve: Optional[MarkerCurve], kappa: float) -> float:
    if curve is None or kappa == 0:
        return 0.0
    return kappa * perimeter(curve)


def _ledger_at(rho, chi, u, curve, model: Model, cfg: StepConfig, previous: Optional[EnergyLedger] = None,
               dissipated: float = 0.0, hyper: float = 0.0) -> EnergyLedger:
    return EnergyLedger(
        kinetic=kinetic_energy(rho, u),
        internal=internal_energy(chi, rho, model.pressures),
        interface=interface_energy(curve, cfg.kappa),
        dissipated_cum=dissipated,
        hyper_cum=hyper,
        initial_total=None if previous is None else previous.initial_total,
    )


def energy_report(s: SimState, model: Model, cfg: StepConfig) -> Tuple[EnergyLedger, float]:
    """Recompute energies of s; cumulative terms come from its ledger"""
    ledger = _ledger_at(s.rho, s.chi, s.u, s.curve, model, cfg, previous=s.ledger,
                        dissipated=s.ledger.dissipated_cum, hyper=s.ledger.hyper_cum)
    return ledger, ledger.balance_residual


def initial_state(rho: ScalarField, u: VectorField, model: Model, cfg: StepConfig,
                  curve: Optional[MarkerCurve] = None, phase: float = 1.0) -> SimState:
    """State at t = 0; without a curve the indicator is the constant phase"""
    grid = rho.grid
    cfg.check_grid(grid)
    if np.any(rho.values <= 0):
        raise ValueError("initial density must be > 0 everywhere")
    if curve is not None:
        chi = rasterize_chi(curve, grid)
    else:
        if phase not in (0.0, 1.0):
            raise ValueError(f"single-phase indicator must be 0 or 1, got {phase}")
        chi = ScalarField(grid, np.full((grid.n, grid.n), float(phase)))
    u = project_bandlimit(u, cfg.N)
    ledger = _ledger_at(rho, chi, u, curve, model, cfg)
    return SimState(time=0.0, rho=rho, chi=chi, u=u, ledger=ledger, curve=curve)


# ---------------------------------------------------------------------------
# momentum
# ---------------------------------------------------------------------------

def viscous_stress(s: SimState, cfg: StepConfig, model: Model) -> SymTensorField:
    """Gradient of the Moreau envelope of the phase-selected potential at D u"""
    d = sym_gradient(s.u)
    result = mixture_prox(model.potentials, s.chi.values, d.as_tensor_array(), cfg.eps)
    return SymTensorField.from_tensor_array(s.grid, result.stress)


def _assemble(s: SimState, cfg: StepConfig, model: Model) -> Tuple[VectorField, SymTensorField]:
    grid = s.grid
    rho = s.rho.values
    u = s.u.values
    flux = SymTensorField(grid, np.stack([rho * u[0] * u[0], rho * u[0] * u[1], rho * u[1] * u[1]]))
    convection = -1.0 * tensor_divergence(dealias(flux))
    p = ScalarField(grid, mixture_pressure(model.pressures, s.chi.values, rho))
    pressure_force = -1.0 * gradient(dealias(p))
    stress = viscous_stress(s, cfg, model)
    viscous = tensor_divergence(dealias(stress))
    total = convection + pressure_force + viscous
    if cfg.delta > 0:
        total = total - hyper_apply(s.u, cfg.m, cfg.delta)
    if cfg.kappa > 0 and s.curve is not None:
        surface = first_variation_modes(varifold_from_curve(s.curve), grid, cfg.N)
        total = total - cfg.kappa * surface
    return project_bandlimit(total, cfg.N), stress


def assemble_rhs(s: SimState, cfg: StepConfig, model: Model) -> VectorField:
    """Band-limited representer R of the momentum functional: rhs(phi) = <R, phi>"""
    rhs, _ = _assemble(s, cfg, model)
    return rhs


def solve_weighted_projection(rho: ScalarField, rhs: VectorField, N: int) -> VectorField:
    """Band-limited w with <rho w, phi> = <rhs, phi> for every mode |k| <= N"""
    grid = rho.grid
    n = grid.n
    keep = grid.k_max <= N
    weight = rho.values
    shape = (2, n, n)

    def project(a: np.ndarray) -> np.ndarray:
        return inverse(np.where(keep, forward(a), 0.0))

    def apply_mass(flat: np.ndarray) -> np.ndarray:
        w = project(flat.reshape(shape))
        return project(weight * w).ravel()

    def apply_preconditioner(flat: np.ndarray) -> np.ndarray:
        return project(flat.reshape(shape) / weight).ravel()

    size = 2 * n * n
    mass = LinearOperator((size, size), matvec=apply_mass, dtype=float)
    preconditioner = LinearOperator((size, size), matvec=apply_preconditioner, dtype=float)
    b = project(rhs.values).ravel()
    if not np.any(b):
        return VectorField.zeros(grid)
    max_iterations = 10 * bandlimit_mode_count(N)
    solution, info = cg(mass, b, rtol=CG_TOLERANCE, atol=0.0, maxiter=max_iterations, M=preconditioner)
    if info != 0:
        raise IterationLimit(max_iterations if info > 0 else 0)
    return project_bandlimit(VectorField(grid, solution.reshape(shape)), N)


def step(s: SimState, cfg: StepConfig, model: Model) -> SimState:
    """Advance one time step"""
    index = s.step_index + 1
    t_new = index * cfg.dt
    seg = VelocitySegment.steady(s.u, s.time, t_new)

    rho_new = transport_density(s.rho, seg, model.characteristics)
    curve_new = s.curve
    chi_new = s.chi
    if s.curve is not None:
        curve_new = advect_markers(s.curve, seg, model.characteristics, step=index)
        chi_new = rasterize_chi(curve_new, s.grid)
    mid = replace(s, rho=rho_new, chi=chi_new, curve=curve_new)

    rhs, stress = _assemble(mid, cfg, model)
    momentum = project_bandlimit(VectorField(s.grid, s.rho.values * s.u.values), cfg.N) + cfg.dt * rhs
    u_new = solve_weighted_projection(rho_new, momentum, cfg.N)

    dissipated = s.ledger.dissipated_cum + cfg.dt * s.grid.cell_area * float(
        np.sum(contract(stress.as_tensor_array(), sym_gradient(s.u).as_tensor_array()))
    )
    hyper = s.ledger.hyper_cum
    if cfg.delta > 0:
        hyper += cfg.dt * inner(hyper_apply(s.u, cfg.m, cfg.delta), s.u)

    ledger = _ledger_at(rho_new, chi_new, u_new, curve_new, model, cfg, previous=s.ledger,
                        dissipated=dissipated, hyper=hyper)
    log_step(index, t_new, ledger.kinetic, ledger.balance_residual)
    return SimState(time=t_new, rho=rho_new, chi=chi_new, u=u_new, ledger=ledger,
                    curve=curve_new, step_index=index)


def iterate(s: SimState, cfg: StepConfig, model: Model) -> Iterator[SimState]:
    """Yield states after each step until t_end"""
    while s.step_index < cfg.step_count:
        s = step(s, cfg, model)
        yield s


def diagnostics_row(s: SimState) -> Dict[str, float]:
    """One line of the per-step diagnostics table"""
    ledger = s.ledger
    return {
        'time': s.time,
        'kinetic': ledger.kinetic,
        'internal': ledger.internal,
        'interface': ledger.interface,
        'dissipated_cum': ledger.dissipated_cum,
        'hyper_cum': ledger.hyper_cum,
        'balance_residual': ledger.balance_residual,
        'mass': integrate(s.rho),
        'max_div_u': divergence(s.u).max_abs(),
        'min_rho': float(s.rho.values.min()),
        'max_rho': float(s.rho.values.max()),
        'perimeter': perimeter(s.curve) if s.curve is not None else 0.0,
    }


DIAGNOSTIC_COLUMNS = (
    'time', 'kinetic', 'internal', 'interface', 'dissipated_cum', 'hyper_cum',
    'balance_residual', 'mass', 'max_div_u', 'min_rho', 'max_rho', 'perimeter',
)


# ---------------------------------------------------------------------------
# existence hypotheses
# ---------------------------------------------------------------------------

@dataclass
class HypothesisReport:
    """Advisory classification of a scenario against the existence results"""
    general_violations: List[str] = field(default_factory=list)
    isothermal_violations: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def general_compliant(self) -> bool:
        return not self.general_violations

    @property
    def isothermal_compliant(self) -> bool:
        return not self.isothermal_violations

    @property
    def classification(self) -> str:
        if self.general_compliant and self.isothermal_compliant:
            return 'general+isothermal'
        if self.general_compliant:
            return 'general'
        if self.isothermal_compliant:
            return 'isothermal'
        return 'non-compliant'

    def summary(self) -> str:
        lines = [f"classification: {self.classification}"]
        lines += [f"  general-pressure violation: {v}" for v in self.general_violations]
        lines += [f"  isothermal violation: {v}" for v in self.isothermal_violations]
        lines += [f"  warning: {w}" for w in self.warnings]
        lines += [f"  note: {n}" for n in self.notes]
        return '\n'.join(lines)


def _has_trace_bound(f) -> bool:
    while f is not None:
        if isinstance(f, TraceBounded):
            return True
        f = getattr(f, 'inner', None)
    return False


def hypothesis_check(model: Model, cfg: StepConfig) -> HypothesisReport:
    """Check potential regularity and growth, the alpha threshold, comparability and the pressure class"""
    report = HypothesisReport()
    mixture = model.potentials
    common: List[str] = []
    zero = np.zeros(3)
    for name, f in (('F1', mixture.f1), ('F2', mixture.f2)):
        if f.evaluate(zero) != 0:
            common.append(f"{name}(0) != 0")
        if not f.domain_radius > 0:
            common.append(f"0 is not interior to Dom {name}")
        if not f.growth_exponent > 1:
            common.append(f"{name} growth exponent {f.growth_exponent:g} <= 1")
        if not _has_trace_bound(f):
            report.warnings.append(f"{name} has no trace bound; no uniform divergence bound")
    report.general_violations.extend(common)
    report.isothermal_violations.extend(common)

    if cfg.kappa > 0:
        report.general_violations.append(f"surface tension kappa = {cfg.kappa:g} > 0")
    for name, f in (('F1', mixture.f1), ('F2', mixture.f2)):
        if f.growth_exponent < 2:
            report.general_violations.append(f"{name} growth exponent {f.growth_exponent:g} < 2")
    if mixture.comparability_k is not None:
        comparison = check_comparability(mixture, default_samples())
        if not comparison.holds:
            report.general_violations.append(
                f"growth comparability with k = {mixture.comparability_k:g} fails "
                f"(worst margin {comparison.worst_margin:.3e})"
            )
    elif mixture.f1 != mixture.f2:
        report.general_violations.append("no comparability constant declared for distinct potentials")

    for name, law in (('p1', model.pressures.p1), ('p2', model.pressures.p2)):
        if not isinstance(law, Isothermal):
            report.isothermal_violations.append(f"{name} is not isothermal (p = a rho)")

    report.notes.append("incompressible variants are not checked")
    if not report.general_compliant and not report.isothermal_compliant:
        log_warning(f"scenario outside both existence results: {report.classification}")
    log_debug(report.summary())
    return report
