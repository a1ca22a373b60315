"""
Fields - periodic grid fields on the unit torus [0,1)^2
Scalar, vector and symmetric-tensor nodal fields with cached spectral views,
exact spectral differential operators, band-limit projection, the
hyperviscosity multiplier and periodic cubic-spline interpolation.

Arrays are indexed [ix, iy] (y fastest in row-major order); node (ix, iy)
sits at (ix h, iy h).  Spectral coefficients are normalised so that
f(x) = sum_k c_k exp(2 pi i k.x).
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Tuple, Type, TypeVar, Union

import numpy as np
import scipy.fft
from scipy import ndimage

import config_manager


@dataclass(frozen=True)
class PeriodicGrid:
    """n x n nodes on [0,1)^2"""
    n: int

    def __post_init__(self):
        n = self.n
        if not isinstance(n, (int, np.integer)) or n < 16 or n & (n - 1):
            raise ValueError(f"grid size must be a power of two >= 16, got {n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @cached_property
    def k(self) -> np.ndarray:
        """Integer wavenumbers in FFT order"""
        return np.fft.fftfreq(self.n, d=1.0 / self.n).round().astype(int)

    @cached_property
    def wavenumbers(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.k, self.k, indexing='ij')

    @cached_property
    def derivative_symbols(self) -> Tuple[np.ndarray, np.ndarray]:
        """2 pi i k with the Nyquist row/column zeroed (odd derivatives)"""
        k = self.k.astype(float)
        k[self.n // 2] = 0.0
        kx, ky = np.meshgrid(k, k, indexing='ij')
        return 2j * np.pi * kx, 2j * np.pi * ky

    @cached_property
    def k_squared(self) -> np.ndarray:
        """|2 pi k|^2"""
        kx, ky = self.wavenumbers
        return (2.0 * np.pi) ** 2 * (kx ** 2 + ky ** 2)

    @cached_property
    def k_max(self) -> np.ndarray:
        kx, ky = self.wavenumbers
        return np.maximum(np.abs(kx), np.abs(ky))

    @cached_property
    def coords(self) -> Tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.n) * self.h
        return np.meshgrid(x, x, indexing='ij')


def forward(values: np.ndarray) -> np.ndarray:
    n = values.shape[-1]
    return scipy.fft.fft2(values, axes=(-2, -1), workers=config_manager.get_thread_count()) / (n * n)


def inverse(coeffs: np.ndarray) -> np.ndarray:
    n = coeffs.shape[-1]
    return scipy.fft.ifft2(coeffs * (n * n), axes=(-2, -1), workers=config_manager.get_thread_count()).real


F = TypeVar('F', bound='GridField')


@dataclass(frozen=True, eq=False)
class GridField:
    """Immutable nodal values plus a lazily computed spectral view"""
    grid: PeriodicGrid
    values: np.ndarray

    components = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        shape = (self.grid.n, self.grid.n)
        if self.components:
            shape = (self.components,) + shape
        if values.shape != shape:
            raise ValueError(f"{type(self).__name__} expects shape {shape}, got {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @cached_property
    def spectral(self) -> np.ndarray:
        return forward(self.values)

    @classmethod
    def from_spectral(cls: Type[F], grid: PeriodicGrid, coeffs: np.ndarray) -> F:
        return cls(grid, inverse(coeffs))

    @classmethod
    def zeros(cls: Type[F], grid: PeriodicGrid) -> F:
        shape = (grid.n, grid.n) if not cls.components else (cls.components, grid.n, grid.n)
        return cls(grid, np.zeros(shape))

    @classmethod
    def from_function(cls: Type[F], grid: PeriodicGrid, fn: Callable) -> F:
        """Sample fn(x, y) at the nodes"""
        x, y = grid.coords
        shape = (grid.n, grid.n)
        raw = fn(x, y)
        if cls.components:
            values = np.stack([np.broadcast_to(np.asarray(c, dtype=float), shape) for c in raw])
        else:
            values = np.broadcast_to(np.asarray(raw, dtype=float), shape)
        return cls(grid, values)

    def _like(self: F, values: np.ndarray) -> F:
        return type(self)(self.grid, values)

    def __add__(self: F, other) -> F:
        return self._like(self.values + _raw(other))

    def __sub__(self: F, other) -> F:
        return self._like(self.values - _raw(other))

    def __mul__(self: F, scale) -> F:
        return self._like(self.values * _raw(scale))

    __rmul__ = __mul__

    def __neg__(self: F) -> F:
        return self._like(-self.values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    @cached_property
    def _spline_coefficients(self) -> np.ndarray:
        if self.components:
            return np.stack([
                ndimage.spline_filter(c, order=3, mode='grid-wrap') for c in self.values
            ])
        return ndimage.spline_filter(self.values, order=3, mode='grid-wrap')


def _raw(other) -> Union[float, np.ndarray]:
    return other.values if isinstance(other, GridField) else other


@dataclass(frozen=True, eq=False)
class ScalarField(GridField):
    """Nodal scalar"""
    components = 0


@dataclass(frozen=True, eq=False)
class VectorField(GridField):
    """Two components (vx, vy)"""
    components = 2


@dataclass(frozen=True, eq=False)
class SymTensorField(GridField):
    """Three components (dxx, dxy, dyy)"""
    components = 3

    def as_tensor_array(self) -> np.ndarray:
        """(n, n, 3) view for the pointwise rheology kernels"""
        return np.moveaxis(self.values, 0, -1)

    @classmethod
    def from_tensor_array(cls, grid: PeriodicGrid, arr: np.ndarray) -> 'SymTensorField':
        return cls(grid, np.moveaxis(np.asarray(arr), -1, 0))


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------

def gradient(f: ScalarField) -> VectorField:
    ikx, iky = f.grid.derivative_symbols
    c = f.spectral
    return VectorField(f.grid, np.stack([inverse(ikx * c), inverse(iky * c)]))


def divergence(v: VectorField) -> ScalarField:
    ikx, iky = v.grid.derivative_symbols
    c = v.spectral
    return ScalarField(v.grid, inverse(ikx * c[0] + iky * c[1]))


def sym_gradient(v: VectorField) -> SymTensorField:
    """(grad v + grad v^T) / 2"""
    ikx, iky = v.grid.derivative_symbols
    c = v.spectral
    dxx = inverse(ikx * c[0])
    dyy = inverse(iky * c[1])
    dxy = 0.5 * inverse(iky * c[0] + ikx * c[1])
    return SymTensorField(v.grid, np.stack([dxx, dxy, dyy]))


def velocity_gradient(v: VectorField) -> np.ndarray:
    """Full gradient, array [a, b] = d_b v_a of shape (2, 2, n, n)"""
    ikx, iky = v.grid.derivative_symbols
    c = v.spectral
    return np.array([[inverse(ikx * c[a]), inverse(iky * c[a])] for a in range(2)])


def tensor_divergence(s: SymTensorField) -> VectorField:
    """Row-wise divergence of a symmetric tensor field"""
    ikx, iky = s.grid.derivative_symbols
    c = s.spectral
    return VectorField(s.grid, np.stack([
        inverse(ikx * c[0] + iky * c[1]),
        inverse(ikx * c[1] + iky * c[2]),
    ]))


def laplacian(f: F) -> F:
    return type(f).from_spectral(f.grid, -f.grid.k_squared * f.spectral)


def hyper_apply(v: F, m: int, delta: float) -> F:
    """Multiply every mode by delta |2 pi k|^(4m)"""
    if m < 1:
        raise ValueError(f"hyperviscosity order must be >= 1, got {m}")
    if delta == 0:
        return type(v).zeros(v.grid)
    return type(v).from_spectral(v.grid, delta * v.grid.k_squared ** (2 * m) * v.spectral)


# ---------------------------------------------------------------------------
# quadrature and projections
# ---------------------------------------------------------------------------

def integrate(f: ScalarField) -> float:
    return float(f.grid.cell_area * np.sum(f.values))


def inner(a: GridField, b: GridField) -> float:
    """Discrete L2 pairing summed over components"""
    return float(a.grid.cell_area * np.sum(a.values * b.values))


def project_bandlimit(v: F, N: int) -> F:
    """Zero every mode with max(|k1|, |k2|) > N"""
    if N > v.grid.n // 2:
        raise ValueError(f"band limit {N} exceeds n/2 = {v.grid.n // 2}")
    return type(v).from_spectral(v.grid, np.where(v.grid.k_max > N, 0.0, v.spectral))


def dealias(f: F) -> F:
    """Two-thirds rule truncation"""
    return type(f).from_spectral(f.grid, np.where(f.grid.k_max > f.grid.n // 3, 0.0, f.spectral))


def bandlimit_mode_count(N: int, components: int = 2) -> int:
    return components * (2 * N + 1) ** 2


# ---------------------------------------------------------------------------
# off-grid evaluation
# ---------------------------------------------------------------------------

def interpolate(f: GridField, points) -> np.ndarray:
    """Periodic cubic-spline interpolation at points of shape (..., 2).

    Scalar fields return shape (...), vector/tensor fields (..., components).
    Nodal values are reproduced at grid nodes.
    """
    points = np.asarray(points, dtype=float)
    lead = points.shape[:-1]
    flat = points.reshape(-1, 2)
    coords = (flat * f.grid.n).T
    coeffs = f._spline_coefficients
    if not f.components:
        out = ndimage.map_coordinates(coeffs, coords, order=3, mode='grid-wrap', prefilter=False)
        return out.reshape(lead)
    out = np.stack([
        ndimage.map_coordinates(c, coords, order=3, mode='grid-wrap', prefilter=False)
        for c in coeffs
    ], axis=-1)
    return out.reshape(lead + (f.components,))


def stencil_bounds(f: ScalarField, points) -> Tuple[np.ndarray, np.ndarray]:
    """Min and max of the 4x4 nodal stencil around each point"""
    points = np.asarray(points, dtype=float)
    n = f.grid.n
    base = np.floor(points * n).astype(int) - 1
    offsets = np.arange(4)
    ix = (base[..., 0, None, None] + offsets[:, None]) % n
    iy = (base[..., 1, None, None] + offsets[None, :]) % n
    stencil = f.values[ix, iy]
    return stencil.min(axis=(-2, -1)), stencil.max(axis=(-2, -1))


def nearest_node(f: ScalarField, points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    n = f.grid.n
    idx = np.rint(points * n).astype(int) % n
    return f.values[idx[..., 0], idx[..., 1]]
