"""
Thermo - barotropic pressure laws
Pressure p(rho), pressure potential P(rho) with P'(rho) rho - P(rho) = p(rho)
and P(1) = 0, and the phase-selected mixtures of both.
"""

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
from scipy.integrate import quad_vec
from scipy.interpolate import PchipInterpolator

from errors import OutOfRange


QUADRATURE_TOLERANCE = 1e-10

Density = Union[float, np.ndarray]


class PressureLaw:
    """Nondecreasing barotropic law"""

    family = ''

    def pressure(self, rho: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def potential(self, rho: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_spec(self) -> Dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class Isothermal(PressureLaw):
    """p = a rho"""
    a: float

    family = 'isothermal'

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"isothermal constant a must be > 0, got {self.a}")

    def pressure(self, rho):
        return self.a * rho

    def potential(self, rho):
        return self.a * rho * np.log(rho)

    def to_spec(self):
        return {'family': 'isothermal', 'a': self.a}


@dataclass(frozen=True)
class TabulatedMonotone(PressureLaw):
    """Monotone cubic (PCHIP) interpolant through (rho, p) nodes"""
    rho_nodes: Tuple[float, ...]
    p_values: Tuple[float, ...]
    source: str = field(default='', compare=False)

    family = 'table'

    def __post_init__(self):
        object.__setattr__(self, 'rho_nodes', tuple(float(r) for r in self.rho_nodes))
        object.__setattr__(self, 'p_values', tuple(float(p) for p in self.p_values))
        rho = np.asarray(self.rho_nodes)
        p = np.asarray(self.p_values)
        if rho.size < 2 or rho.size != p.size:
            raise ValueError("pressure table needs at least two (rho, p) rows of equal length")
        if np.any(rho <= 0) or np.any(np.diff(rho) <= 0):
            raise ValueError("pressure table densities must be positive and strictly increasing")
        if np.any(p < 0) or np.any(np.diff(p) < 0):
            raise ValueError("pressure table values must be nonnegative and nondecreasing")
        if not rho[0] <= 1.0 <= rho[-1]:
            raise ValueError(
                f"pressure table must bracket rho = 1 for the P(1) = 0 normalisation, "
                f"covers [{rho[0]:g}, {rho[-1]:g}]"
            )

    @cached_property
    def _interpolant(self) -> PchipInterpolator:
        return PchipInterpolator(self.rho_nodes, self.p_values, extrapolate=False)

    @property
    def rho_range(self) -> Tuple[float, float]:
        return self.rho_nodes[0], self.rho_nodes[-1]

    def _check_range(self, rho: np.ndarray) -> None:
        lo, hi = self.rho_range
        if np.any(rho < lo) or np.any(rho > hi):
            bad = rho[(rho < lo) | (rho > hi)]
            raise OutOfRange(
                f"density {float(bad.flat[0]):g} outside tabulated range [{lo:g}, {hi:g}]"
            )

    def pressure(self, rho):
        rho = np.asarray(rho, dtype=float)
        self._check_range(rho)
        return self._interpolant(rho)

    def potential(self, rho):
        rho = np.asarray(rho, dtype=float)
        self._check_range(rho)
        flat = rho.ravel()
        span = flat - 1.0

        # P(rho) = rho * int_1^rho p(z) / z^2 dz, with z = 1 + s (rho - 1)
        def integrand(s):
            z = 1.0 + s * span
            return self._interpolant(z) / (z * z) * span

        integral, _ = quad_vec(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=QUADRATURE_TOLERANCE)
        return (flat * integral).reshape(rho.shape)

    def to_spec(self):
        if self.source:
            return {'family': 'table', 'file': self.source}
        return {'family': 'table', 'rho': list(self.rho_nodes), 'p': list(self.p_values)}


def load_table_csv(path: Union[str, Path]) -> TabulatedMonotone:
    """Read a two-column (rho, p) CSV; a non-numeric first row is a header"""
    path = Path(path)
    rho, p = [], []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        for row_number, row in enumerate(csv.reader(f)):
            if not row or not ''.join(row).strip():
                continue
            try:
                r_val, p_val = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if row_number == 0:
                    continue
                raise ValueError(f"{path.name}: malformed row {row_number + 1}: {row}")
            rho.append(r_val)
            p.append(p_val)
    return TabulatedMonotone(tuple(rho), tuple(p), source=str(path))


def pressure_from_spec(spec: Dict[str, Any], base_dir: Path = None) -> PressureLaw:
    spec = dict(spec)
    family = spec.pop('family', None)
    if family == 'isothermal':
        law = Isothermal(a=float(spec.pop('a')))
    elif family == 'table' and 'file' in spec:
        table_path = Path(spec.pop('file'))
        if base_dir is not None and not table_path.is_absolute():
            table_path = base_dir / table_path
        law = load_table_csv(table_path)
    elif family == 'table':
        law = TabulatedMonotone(tuple(spec.pop('rho')), tuple(spec.pop('p')))
    else:
        raise ValueError(f"unknown pressure family: {family!r}")
    if spec:
        raise ValueError(f"unknown keys for {family} pressure: {', '.join(sorted(spec))}")
    return law


def _positive(rho: Density) -> Tuple[np.ndarray, bool]:
    scalar = np.ndim(rho) == 0
    arr = np.asarray(rho, dtype=float)
    if np.any(arr <= 0):
        raise OutOfRange("density must be > 0")
    return arr, scalar


def pressure(law: PressureLaw, rho: Density) -> Density:
    arr, scalar = _positive(rho)
    value = law.pressure(arr)
    return float(value) if scalar else value


def pressure_potential(law: PressureLaw, rho: Density) -> Density:
    """P(rho), normalised by P(1) = 0"""
    arr, scalar = _positive(rho)
    value = law.potential(arr)
    return float(value) if scalar else value


@dataclass(frozen=True)
class MixturePressure:
    """chi p1 + (1 - chi) p2"""
    p1: PressureLaw
    p2: PressureLaw

    @property
    def isothermal(self) -> bool:
        return isinstance(self.p1, Isothermal) and isinstance(self.p2, Isothermal)


def _select(m: MixturePressure, chi, rho: Density, op) -> Density:
    arr, scalar = _positive(rho)
    chi = np.asarray(chi, dtype=float)
    if not np.all((chi == 0.0) | (chi == 1.0)):
        raise ValueError("phase indicator must take values in {0, 1}")
    if scalar and chi.ndim == 0:
        return float(op(m.p1 if chi == 1.0 else m.p2, arr))
    arr, chi = np.broadcast_arrays(arr, chi)
    mask = chi == 1.0
    out = np.empty(arr.shape)
    for law, where in ((m.p1, mask), (m.p2, ~mask)):
        if np.any(where):
            out[where] = op(law, arr[where])
    return out


def mixture_pressure(m: MixturePressure, chi, rho: Density) -> Density:
    return _select(m, chi, rho, lambda law, r: law.pressure(r))


def mixture_potential(m: MixturePressure, chi, rho: Density) -> Density:
    return _select(m, chi, rho, lambda law, r: law.potential(r))
