"""
Interface - front-tracked phase boundary on the torus
Closed counterclockwise marker polylines around phase 1, their advection
and arclength resampling, rasterisation to the phase indicator, the
discrete varifold carried by the curve, its first variation (weak surface
tension) and the varifold/indicator compatibility residual.

Curves store lifted coordinates: consecutive markers differ by their
minimal periodic image, so lengths and normals are continuous across the
seam.  Varifold normals z point out of phase 1; the gradient measure of
the indicator is -z times arclength.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from errors import SelfIntersection
from logger import log_debug

from .fields import PeriodicGrid, ScalarField, VectorField
from .flowmap import CharacteristicConfig, VelocitySegment, forward_positions


MIN_MARKERS = 16
SPLINE_SUBDIVISION = 16


def lift(points) -> np.ndarray:
    """Unwrap consecutive points by their minimal periodic difference"""
    points = np.asarray(points, dtype=float)
    steps = np.diff(points, axis=0)
    steps -= np.round(steps)
    return np.concatenate([points[:1], points[:1] + np.cumsum(steps, axis=0)])


def _signed_area(p: np.ndarray) -> float:
    q = np.roll(p, -1, axis=0)
    return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


def _segments_cross(p: np.ndarray) -> bool:
    """Any proper crossing between non-adjacent segments of the closed polyline"""
    a = p
    b = np.roll(p, -1, axis=0)
    count = len(p)

    def orient(o, e, x):
        return (e[..., 0] - o[..., 0]) * (x[..., 1] - o[..., 1]) - (e[..., 1] - o[..., 1]) * (x[..., 0] - o[..., 0])

    block = 256
    idx = np.arange(count)
    for start in range(0, count, block):
        i = idx[start:start + block]
        ai, bi = a[i][:, None, :], b[i][:, None, :]
        aj, bj = a[None, :, :], b[None, :, :]
        o1 = orient(ai, bi, aj)
        o2 = orient(ai, bi, bj)
        o3 = orient(aj, bj, ai)
        o4 = orient(aj, bj, bi)
        crossing = (o1 * o2 < 0) & (o3 * o4 < 0)
        gap = np.abs(i[:, None] - idx[None, :])
        adjacent = (gap <= 1) | (gap == count - 1)
        if np.any(crossing & ~adjacent):
            return True
    return False


@dataclass(frozen=True, eq=False)
class MarkerCurve:
    """Closed simple counterclockwise polyline in lifted coordinates"""
    points: np.ndarray
    target_spacing: float

    def __post_init__(self):
        lifted = lift(self.points)
        if lifted.ndim != 2 or lifted.shape[1] != 2 or len(lifted) < 3:
            raise ValueError("marker curve needs at least three (x, y) points")
        if not np.all(np.isfinite(lifted)):
            raise ValueError("marker coordinates must be finite")
        if np.any(np.round(lifted[0] - lifted[-1]) != 0):
            raise ValueError("marker curve winds around the torus")
        extent = lifted.max(axis=0) - lifted.min(axis=0)
        if np.any(extent >= 1.0):
            raise ValueError("marker curve spans the whole period")
        if not self.target_spacing > 0:
            raise ValueError(f"target spacing must be > 0, got {self.target_spacing}")
        if _signed_area(lifted) <= 0:
            raise ValueError("marker curve must be counterclockwise (positive signed area)")
        if _segments_cross(lifted):
            raise ValueError("marker curve intersects itself")
        lifted.setflags(write=False)
        object.__setattr__(self, 'points', lifted)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def closed_points(self) -> np.ndarray:
        return np.concatenate([self.points, self.points[:1]])

    @property
    def segment_vectors(self) -> np.ndarray:
        return np.roll(self.points, -1, axis=0) - self.points

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.segment_vectors, axis=1)

    def wrapped(self) -> np.ndarray:
        return np.mod(self.points, 1.0)


def signed_area(c: MarkerCurve) -> float:
    return _signed_area(c.points)


def perimeter(c: MarkerCurve) -> float:
    return float(np.sum(c.segment_lengths))


def is_simple(points) -> bool:
    return not _segments_cross(lift(points))


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def circle(center, radius: float, count: int) -> MarkerCurve:
    """Regular inscribed polygon; spacing target is its side length"""
    if count < 3:
        raise ValueError("circle needs at least three markers")
    theta = 2.0 * np.pi * np.arange(count) / count
    pts = np.asarray(center, dtype=float) + radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return MarkerCurve(pts, target_spacing=2.0 * radius * math.sin(math.pi / count))


def ellipse(center, a: float, b: float, angle: float, count: int) -> MarkerCurve:
    theta = 2.0 * np.pi * np.arange(count) / count
    local = np.stack([a * np.cos(theta), b * np.sin(theta)], axis=1)
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    pts = np.asarray(center, dtype=float) + local @ rot.T
    curve = MarkerCurve(pts, target_spacing=1.0)
    return MarkerCurve(curve.points, target_spacing=perimeter(curve) / count)


def polygon(vertices, target_spacing: float) -> MarkerCurve:
    """Straight-sided polygon, edges subdivided to the spacing target; vertices kept"""
    v = lift(vertices)
    if _signed_area(v) < 0:
        v = v[::-1]
    edges = np.roll(v, -1, axis=0) - v
    pieces = []
    for start, edge in zip(v, edges):
        parts = max(1, int(math.ceil(np.linalg.norm(edge) / target_spacing - 1e-9)))
        frac = np.arange(parts)[:, None] / parts
        pieces.append(start + frac * edge)
    return MarkerCurve(np.concatenate(pieces), target_spacing=target_spacing)


def count_for(length: float, target_spacing: float) -> int:
    return max(MIN_MARKERS, int(round(length / target_spacing)))


# ---------------------------------------------------------------------------
# resampling and advection
# ---------------------------------------------------------------------------

def resample(points, target_spacing: float) -> np.ndarray:
    """Uniform-arclength resampling of the periodic chord-length cubic spline"""
    p = lift(points)
    closed = np.concatenate([p, p[:1]])
    chords = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    if np.any(chords == 0):
        keep = chords > 0
        p = p[keep]
        closed = np.concatenate([p, p[:1]])
        chords = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(chords)])
    spline = CubicSpline(s, closed, bc_type='periodic')
    fine = np.concatenate([
        np.linspace(s[i], s[i + 1], SPLINE_SUBDIVISION, endpoint=False) for i in range(len(chords))
    ] + [s[-1:]])
    fine_points = spline(fine)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(fine_points, axis=0), axis=1))])
    count = count_for(arc[-1], target_spacing)
    targets = arc[-1] * np.arange(count) / count
    return spline(np.interp(targets, arc, fine))


def advect_markers(c: MarkerCurve, seg: VelocitySegment, cfg: CharacteristicConfig,
                   step: int = 0) -> MarkerCurve:
    """Move markers forward along the flow, then resample by arclength"""
    moved = forward_positions(seg, c.points, cfg)
    moved = moved - np.floor(moved[0])
    if _segments_cross(moved) or _signed_area(moved) <= 0:
        raise SelfIntersection(step, seg.t1)
    resampled = resample(moved, c.target_spacing)
    if _segments_cross(resampled) or _signed_area(resampled) <= 0:
        raise SelfIntersection(step, seg.t1)
    extent = resampled.max(axis=0) - resampled.min(axis=0)
    if np.any(extent >= 1.0):
        raise SelfIntersection(step, seg.t1)
    log_debug(f"markers: {len(c)} -> {len(resampled)} after step {step}")
    return MarkerCurve(resampled, c.target_spacing)


# ---------------------------------------------------------------------------
# rasterisation
# ---------------------------------------------------------------------------

def rasterize_chi(c: MarkerCurve, g: PeriodicGrid) -> ScalarField:
    """Nodal indicator of the curve interior (crossing-number rule, all periodic images)"""
    a = c.points
    b = np.roll(a, -1, axis=0)
    nodes = np.arange(g.n) * g.h
    chi = np.zeros((g.n, g.n), dtype=bool)
    lo, hi = a[:, 1].min(), a[:, 1].max()
    for iy, y0 in enumerate(nodes):
        for shift_y in (-1.0, 0.0, 1.0):
            y = y0 + shift_y
            if y < lo or y > hi:
                continue
            upward = (a[:, 1] <= y) & (b[:, 1] > y)
            downward = (a[:, 1] > y) & (b[:, 1] <= y)
            crossing = upward | downward
            if not np.any(crossing):
                continue
            ya, yb = a[crossing, 1], b[crossing, 1]
            xa, xb = a[crossing, 0], b[crossing, 0]
            xs = np.sort(xa + (y - ya) / (yb - ya) * (xb - xa))
            for shift_x in (-1.0, 0.0, 1.0):
                x = nodes + shift_x
                # crossings strictly to the right of each node
                right = len(xs) - np.searchsorted(xs, x, side='right')
                chi[:, iy] |= (right % 2 == 1)
    return ScalarField(g, chi.astype(float))


# ---------------------------------------------------------------------------
# varifold
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscreteVarifold:
    """Atoms (x, z, w): position, unit normal, weight"""
    x: np.ndarray
    z: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1, 2)
        z = np.array(self.z, dtype=float).reshape(-1, 2)
        w = np.array(self.w, dtype=float).reshape(-1)
        if not (len(x) == len(z) == len(w)):
            raise ValueError("varifold atom arrays differ in length")
        if np.any(w <= 0):
            raise ValueError("varifold weights must be > 0")
        if np.any(np.abs(np.linalg.norm(z, axis=1) - 1.0) > 1e-9):
            raise ValueError("varifold directions must be unit vectors")
        for arr in (x, z, w):
            arr.setflags(write=False)
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'z', z)
        object.__setattr__(self, 'w', w)

    def __len__(self) -> int:
        return len(self.w)

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.w))

    @property
    def projections(self) -> np.ndarray:
        """I - z z^T per atom, shape (M, 2, 2)"""
        return np.eye(2)[None] - self.z[:, :, None] * self.z[:, None, :]


def _segment_normals(c: MarkerCurve):
    t = c.segment_vectors
    lengths = np.linalg.norm(t, axis=1)
    z = np.stack([t[:, 1], -t[:, 0]], axis=1) / lengths[:, None]
    mid = c.points + 0.5 * t
    return mid, z, lengths


def varifold_from_curve(c: MarkerCurve) -> DiscreteVarifold:
    mid, z, lengths = _segment_normals(c)
    return DiscreteVarifold(np.mod(mid, 1.0), z, lengths)


def first_variation(v: DiscreteVarifold, grad_phi: Callable) -> float:
    """sum_j w_j (I - z_j z_j) : grad phi(x_j); grad_phi(points)[j, a, b] = d_b phi_a"""
    G = np.asarray(grad_phi(v.x), dtype=float)
    trace = G[:, 0, 0] + G[:, 1, 1]
    normal = np.einsum('ja,jab,jb->j', v.z, G, v.z)
    return float(np.sum(v.w * (trace - normal)))


def compatibility_residual(v: DiscreteVarifold, c: MarkerCurve, phi: Callable) -> float:
    """int phi.z dV + int phi.d(grad chi), the latter carried by the curve as -z ds"""
    varifold_part = np.sum(v.w * np.einsum('ja,ja->j', np.asarray(phi(v.x), dtype=float), v.z))
    mid, z, lengths = _segment_normals(c)
    curve_part = -np.sum(lengths * np.einsum('ja,ja->j', np.asarray(phi(np.mod(mid, 1.0)), dtype=float), z))
    return float(varifold_part + curve_part)


def first_variation_modes(v: DiscreteVarifold, grid: PeriodicGrid, N: int) -> VectorField:
    """Band-limited field R with <R, phi> = first_variation(v, grad phi) for every mode |k| <= N"""
    k = np.arange(-N, N + 1)
    phase_x = np.exp(-2j * np.pi * k[:, None] * v.x[None, :, 0])
    phase_y = np.exp(-2j * np.pi * k[:, None] * v.x[None, :, 1])
    weighted = v.w[:, None, None] * v.projections
    coeffs = np.zeros((2, grid.n, grid.n), dtype=complex)
    idx = k % grid.n
    for a in range(2):
        by_x = (phase_x * weighted[None, :, a, 0]) @ phase_y.T
        by_y = (phase_x * weighted[None, :, a, 1]) @ phase_y.T
        block = -2j * np.pi * (k[:, None] * by_x + k[None, :] * by_y)
        coeffs[a][np.ix_(idx, idx)] = block
    return VectorField.from_spectral(grid, coeffs)


def curve_from_points(points: Sequence, target_spacing: Optional[float] = None) -> MarkerCurve:
    """Curve through stored markers, spacing target defaulting to the mean segment length"""
    p = lift(points)
    if target_spacing is None:
        target_spacing = float(np.mean(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)))
    return MarkerCurve(p, target_spacing)
