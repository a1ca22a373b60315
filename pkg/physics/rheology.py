"""
Rheology - convex dissipation potentials on symmetric 2x2 tensors
Values, convex conjugates, Moreau-Yosida envelopes and proximal maps,
plus the two-phase mixture potential selected by the phase indicator.

Every family is split into a deviatoric part acting on |dev D| and a
trace part acting on tr D:

    F(D) = g(|dev D|) + h(tr D)

so proximal maps and conjugates reduce to one-dimensional problems.
Tensors are either SymTensor2 instances or float arrays with a trailing
axis of length 3 holding (xx, xy, yy).
"""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import InfiniteOperand, NonConvergence, NumericFailure
from logger import log_debug, log_warning


NEWTON_MAX_ITERATIONS = 64
NEWTON_TOLERANCE = 1e-12
# relative size below which a stress component counts as zero for conjugates
ZERO_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SymTensor2:
    """Symmetric 2x2 tensor (dxx, dxy, dyy)"""
    dxx: float = 0.0
    dxy: float = 0.0
    dyy: float = 0.0

    @classmethod
    def from_array(cls, a) -> 'SymTensor2':
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    @classmethod
    def diag(cls, a: float, b: float) -> 'SymTensor2':
        return cls(a, 0.0, b)

    def as_array(self) -> np.ndarray:
        return np.array([self.dxx, self.dxy, self.dyy], dtype=float)

    @property
    def trace(self) -> float:
        return self.dxx + self.dyy

    def deviatoric(self) -> 'SymTensor2':
        """dev D = D - (tr D / 2) I, traceless by construction"""
        p = 0.5 * (self.dxx - self.dyy)
        return SymTensor2(p, self.dxy, -p)

    def norm(self) -> float:
        return math.sqrt(self.dxx ** 2 + 2.0 * self.dxy ** 2 + self.dyy ** 2)

    def contract(self, other: 'SymTensor2') -> float:
        return self.dxx * other.dxx + 2.0 * self.dxy * other.dxy + self.dyy * other.dyy

    def __add__(self, other: 'SymTensor2') -> 'SymTensor2':
        return SymTensor2(self.dxx + other.dxx, self.dxy + other.dxy, self.dyy + other.dyy)

    def __sub__(self, other: 'SymTensor2') -> 'SymTensor2':
        return SymTensor2(self.dxx - other.dxx, self.dxy - other.dxy, self.dyy - other.dyy)

    def __mul__(self, scale: float) -> 'SymTensor2':
        return SymTensor2(scale * self.dxx, scale * self.dxy, scale * self.dyy)

    __rmul__ = __mul__


TensorLike = Union[SymTensor2, np.ndarray]


# ---------------------------------------------------------------------------
# array helpers on (..., 3) tensor arrays
# ---------------------------------------------------------------------------

def decompose(d: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split into deviatoric coordinates (p, q) and trace t.

    dev D = [[p, q], [q, -p]] with |dev D|^2 = 2 (p^2 + q^2).
    """
    d = np.asarray(d, dtype=float)
    p = 0.5 * (d[..., 0] - d[..., 2])
    q = d[..., 1]
    t = d[..., 0] + d[..., 2]
    return p, q, t


def compose(p: np.ndarray, q: np.ndarray, t: np.ndarray) -> np.ndarray:
    half = 0.5 * np.asarray(t, dtype=float)
    return np.stack([p + half, np.broadcast_to(q, half.shape), -p + half], axis=-1)


def tensor_norm(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    return np.sqrt(d[..., 0] ** 2 + 2.0 * d[..., 1] ** 2 + d[..., 2] ** 2)


def contract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 0] + 2.0 * a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _as_array(d: TensorLike) -> Tuple[np.ndarray, bool]:
    if isinstance(d, SymTensor2):
        return d.as_array(), True
    arr = np.asarray(d, dtype=float)
    if arr.shape[-1:] != (3,):
        raise ValueError(f"tensor arrays need a trailing axis of length 3, got {arr.shape}")
    return arr, False


def _scalar(value: np.ndarray) -> float:
    return float(np.asarray(value).reshape(()))


# ---------------------------------------------------------------------------
# one-dimensional convex profiles
# ---------------------------------------------------------------------------

class _Profile:
    """Convex function of one real variable, +inf above `upper`"""

    upper = math.inf

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def prox(self, x: np.ndarray, eps: float) -> np.ndarray:
        """argmin_y (y - x)^2 / (2 eps) + g(y)"""
        raise NotImplementedError

    def argmax(self, s: np.ndarray) -> np.ndarray:
        """Maximiser of s*y - g(y); may be +-inf"""
        raise NotImplementedError

    def conj(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _QuadraticProfile(_Profile):
    def __init__(self, c: float):
        self.c = c

    def value(self, x):
        return 0.5 * self.c * np.square(x)

    def prox(self, x, eps):
        return np.asarray(x, dtype=float) / (1.0 + eps * self.c)

    def argmax(self, s):
        s = np.asarray(s, dtype=float)
        if self.c > 0:
            return s / self.c
        return np.where(s > 0, np.inf, np.where(s < 0, -np.inf, 0.0))

    def conj(self, s):
        s = np.asarray(s, dtype=float)
        if self.c > 0:
            return np.square(s) / (2.0 * self.c)
        return np.where(s == 0, 0.0, np.inf)


class _PowerProfile(_Profile):
    """(c / alpha) y^alpha on y >= 0 (deviatoric magnitudes only)"""

    def __init__(self, c: float, alpha: float):
        self.c = c
        self.alpha = alpha

    def value(self, x):
        return (self.c / self.alpha) * np.power(np.abs(x), self.alpha)

    def prox(self, x, eps):
        # solve y + eps c y^(alpha-1) = x on the bracket [0, x]
        x = np.asarray(x, dtype=float)
        ec = eps * self.c
        a = self.alpha
        lo = np.zeros_like(x)
        hi = x.copy()
        y = x.copy()
        tol = NEWTON_TOLERANCE * np.maximum(1.0, x)
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            for _ in range(NEWTON_MAX_ITERATIONS):
                g = y - x + ec * np.power(y, a - 1.0)
                done = np.abs(g) <= tol
                if np.all(done):
                    return y
                lo = np.where(g < 0, y, lo)
                hi = np.where(g > 0, y, hi)
                dg = 1.0 + ec * (a - 1.0) * np.power(y, a - 2.0)
                step = y - g / dg
                outside = ~np.isfinite(step) | (step <= lo) | (step >= hi)
                step = np.where(outside, 0.5 * (lo + hi), step)
                y = np.where(done, y, step)
        raise NonConvergence(NEWTON_MAX_ITERATIONS)

    def argmax(self, s):
        s = np.maximum(np.asarray(s, dtype=float), 0.0)
        return np.power(s / self.c, 1.0 / (self.alpha - 1.0))

    def conj(self, s):
        s = np.maximum(np.asarray(s, dtype=float), 0.0)
        a = self.alpha
        return (a - 1.0) / a * self.c ** (-1.0 / (a - 1.0)) * np.power(s, a / (a - 1.0))


class _BoundedProfile(_Profile):
    """Inner profile restricted to y <= upper"""

    def __init__(self, inner: _Profile, upper: float):
        self.inner = inner
        self.upper = min(upper, inner.upper)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > self.upper, np.inf, self.inner.value(np.minimum(x, self.upper)))

    def prox(self, x, eps):
        # convex 1-D problem: the constrained minimiser is the clipped free one
        return np.minimum(self.inner.prox(x, eps), self.upper)

    def argmax(self, s):
        return np.minimum(self.inner.argmax(s), self.upper)

    def conj(self, s):
        s = np.asarray(s, dtype=float)
        free = self.inner.argmax(s)
        if np.any(np.isnan(free)):
            raise NumericFailure("one-dimensional conjugate maximiser is undefined")
        clipped = np.minimum(free, self.upper)
        with np.errstate(invalid='ignore'):
            at_bound = s * self.upper - self.inner.value(self.upper)
        value = np.where(free <= self.upper, self.inner.conj(s), at_bound)
        return np.where(np.isneginf(clipped), np.inf, value)


# ---------------------------------------------------------------------------
# potential families
# ---------------------------------------------------------------------------

class DissipationPotential:
    """Extended-real convex potential with F(0) = 0"""

    family = ''

    @property
    def dev_profile(self) -> _Profile:
        raise NotImplementedError

    @property
    def trace_profile(self) -> _Profile:
        raise NotImplementedError

    @property
    def domain_radius(self) -> float:
        """r0 such that F is finite on the ball |D| <= r0"""
        raise NotImplementedError

    @property
    def growth_exponent(self) -> float:
        """Exponent alpha of the deviatoric lower growth |dev D|^alpha"""
        raise NotImplementedError

    def to_spec(self) -> Dict[str, Any]:
        raise NotImplementedError

    def evaluate(self, d: np.ndarray) -> np.ndarray:
        p, q, t = decompose(d)
        r = np.sqrt(2.0 * (p * p + q * q))
        return self.dev_profile.value(r) + self.trace_profile.value(t)


@dataclass(frozen=True)
class Quadratic(DissipationPotential):
    """Newtonian potential (mu/2)|dev D|^2 + (lambda/2)(tr D)^2"""
    mu: float
    lam: float = 0.0

    family = 'quadratic'

    def __post_init__(self):
        if not (self.mu >= 0 and self.lam >= 0):
            raise ValueError(f"quadratic potential needs mu >= 0 and lambda >= 0, got {self.mu}, {self.lam}")

    @cached_property
    def dev_profile(self):
        return _QuadraticProfile(self.mu)

    @cached_property
    def trace_profile(self):
        return _QuadraticProfile(self.lam)

    @property
    def domain_radius(self):
        return math.inf

    @property
    def growth_exponent(self):
        return 2.0 if self.mu > 0 else 0.0

    def to_spec(self):
        return {'family': 'quadratic', 'mu': self.mu, 'lambda': self.lam}


@dataclass(frozen=True)
class PowerLaw(DissipationPotential):
    """(mu/alpha)|dev D|^alpha + (lambda/2)(tr D)^2"""
    mu: float
    alpha: float
    lam: float = 0.0

    family = 'power'

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"power-law potential needs mu > 0, got {self.mu}")
        if not self.alpha > 1:
            raise ValueError(f"power-law potential needs alpha > 1, got {self.alpha}")
        if not self.lam >= 0:
            raise ValueError(f"power-law trace coefficient must be >= 0, got {self.lam}")

    @cached_property
    def dev_profile(self):
        return _PowerProfile(self.mu, self.alpha)

    @cached_property
    def trace_profile(self):
        return _QuadraticProfile(self.lam)

    @property
    def domain_radius(self):
        return math.inf

    @property
    def growth_exponent(self):
        return self.alpha

    def to_spec(self):
        return {'family': 'power', 'mu': self.mu, 'alpha': self.alpha, 'lambda': self.lam}


@dataclass(frozen=True)
class TraceBounded(DissipationPotential):
    """Inner potential, +inf whenever tr D > dbar"""
    inner: DissipationPotential
    dbar: float

    family = 'trace_bounded'

    def __post_init__(self):
        if not self.dbar >= 0:
            raise ValueError(f"trace bound dbar must be >= 0, got {self.dbar}")

    @property
    def dev_profile(self):
        return self.inner.dev_profile

    @cached_property
    def trace_profile(self):
        return _BoundedProfile(self.inner.trace_profile, self.dbar)

    @property
    def domain_radius(self):
        return min(self.inner.domain_radius, self.dbar / math.sqrt(2.0))

    @property
    def growth_exponent(self):
        return self.inner.growth_exponent

    def to_spec(self):
        return {'family': 'trace_bounded', 'dbar': self.dbar, 'inner': self.inner.to_spec()}


@dataclass(frozen=True)
class DeviatoricCap(DissipationPotential):
    """Inner potential, +inf whenever |dev D| > radius (thick fluid)"""
    inner: DissipationPotential
    radius: float

    family = 'dev_cap'

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"deviatoric cap radius must be > 0, got {self.radius}")

    @cached_property
    def dev_profile(self):
        return _BoundedProfile(self.inner.dev_profile, self.radius)

    @property
    def trace_profile(self):
        return self.inner.trace_profile

    @property
    def domain_radius(self):
        return min(self.inner.domain_radius, self.radius)

    @property
    def growth_exponent(self):
        return math.inf

    def to_spec(self):
        return {'family': 'dev_cap', 'radius': self.radius, 'inner': self.inner.to_spec()}


def potential_from_spec(spec: Dict[str, Any]) -> DissipationPotential:
    """Build a potential from its scenario description"""
    spec = dict(spec)
    family = spec.pop('family', None)
    if family == 'quadratic':
        return Quadratic(mu=float(spec.pop('mu')), lam=float(spec.pop('lambda', 0.0)))._checked(spec)
    if family == 'power':
        return PowerLaw(
            mu=float(spec.pop('mu')),
            alpha=float(spec.pop('alpha')),
            lam=float(spec.pop('lambda', 0.0)),
        )._checked(spec)
    if family == 'trace_bounded':
        inner = potential_from_spec(spec.pop('inner'))
        return TraceBounded(inner=inner, dbar=float(spec.pop('dbar')))._checked(spec)
    if family == 'dev_cap':
        inner = potential_from_spec(spec.pop('inner'))
        return DeviatoricCap(inner=inner, radius=float(spec.pop('radius')))._checked(spec)
    raise ValueError(f"unknown potential family: {family!r}")


def _checked(self, leftover: Dict[str, Any]) -> DissipationPotential:
    if leftover:
        raise ValueError(f"unknown keys for {self.family} potential: {', '.join(sorted(leftover))}")
    return self


DissipationPotential._checked = _checked


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProxResult:
    """Proximal point, Moreau envelope value and envelope gradient (stress)"""
    minimizer: Any
    envelope_value: Any
    stress: Any


def eval_potential(f: DissipationPotential, d: TensorLike):
    """F(d); +inf outside the effective domain"""
    arr, scalar = _as_array(d)
    value = f.evaluate(arr)
    return _scalar(value) if scalar else value


def conjugate(f: DissipationPotential, s: TensorLike):
    """F*(s) = sup_D { s:D - F(D) } via the (dev, trace) decomposition"""
    arr, scalar = _as_array(s)
    p, q, t = decompose(arr)
    size = 1.0 + tensor_norm(arr)
    dev_mag = np.sqrt(2.0 * (p * p + q * q))
    dev_mag = np.where(dev_mag <= ZERO_TOLERANCE * size, 0.0, dev_mag)
    # tr S tr D / 2 is the spherical part of S:D
    sigma = 0.5 * t
    sigma = np.where(np.abs(sigma) <= ZERO_TOLERANCE * size, 0.0, sigma)
    value = f.dev_profile.conj(dev_mag) + f.trace_profile.conj(sigma)
    return _scalar(value) if scalar else value


def prox(f: DissipationPotential, d: TensorLike, eps: float) -> ProxResult:
    """Proximal point of F at d with parameter eps.

    Array input gives array fields in the result; SymTensor2 input gives
    SymTensor2 minimizer/stress and a float envelope value.
    """
    if not eps > 0:
        raise ValueError(f"Moreau parameter must be > 0, got {eps}")
    arr, scalar = _as_array(d)
    p, q, t = decompose(arr)
    r = np.sqrt(2.0 * (p * p + q * q))
    r_m = f.dev_profile.prox(r, eps)
    # |sph D|^2 = t^2 / 2, so the trace problem carries parameter 2 eps
    t_m = f.trace_profile.prox(t, 2.0 * eps)
    with np.errstate(invalid='ignore', divide='ignore'):
        shrink = np.where(r > 0, r_m / np.where(r > 0, r, 1.0), 0.0)
    minimizer = compose(shrink * p, shrink * q, t_m)
    envelope = (
        np.square(r - r_m) / (2.0 * eps)
        + np.square(t - t_m) / (4.0 * eps)
        + f.dev_profile.value(r_m)
        + f.trace_profile.value(t_m)
    )
    stress = compose((1.0 - shrink) * p / eps, (1.0 - shrink) * q / eps, (t - t_m) / eps)
    if scalar:
        return ProxResult(
            minimizer=SymTensor2.from_array(minimizer),
            envelope_value=_scalar(envelope),
            stress=SymTensor2.from_array(stress),
        )
    return ProxResult(minimizer=minimizer, envelope_value=envelope, stress=stress)


def envelope(f: DissipationPotential, d: TensorLike, eps: float):
    """Moreau-Yosida envelope F^eps(d)"""
    return prox(f, d, eps).envelope_value


def fenchel_gap(f: DissipationPotential, d: TensorLike, s: TensorLike):
    """F(d) + F*(s) - s:d; zero exactly on subgradient pairs"""
    f_d = eval_potential(f, d)
    f_s = conjugate(f, s)
    if np.any(np.isinf(f_d)) or np.any(np.isinf(f_s)):
        raise InfiniteOperand("Fenchel gap needs finite F(d) and F*(s)")
    d_arr, scalar = _as_array(d)
    s_arr, _ = _as_array(s)
    gap = f_d + f_s - contract(s_arr, d_arr)
    return float(gap) if scalar else gap


@dataclass(frozen=True)
class MixturePotential:
    """chi F1 + (1 - chi) F2 with optional growth comparability constant k"""
    f1: DissipationPotential
    f2: DissipationPotential
    comparability_k: Optional[float] = None

    def __post_init__(self):
        if self.comparability_k is not None and not self.comparability_k > 0:
            raise ValueError(f"comparability constant k must be > 0, got {self.comparability_k}")

    @property
    def domain_radius(self) -> float:
        return min(self.f1.domain_radius, self.f2.domain_radius)


def _phase_mask(chi) -> np.ndarray:
    chi = np.asarray(chi, dtype=float)
    if not np.all((chi == 0.0) | (chi == 1.0)):
        raise ValueError("phase indicator must take values in {0, 1}")
    return chi == 1.0


def mixture_eval(m: MixturePotential, chi, d: TensorLike):
    """F1(d) where chi = 1, F2(d) where chi = 0 (no blending)"""
    arr, scalar = _as_array(d)
    mask = _phase_mask(chi)
    value = np.where(mask, m.f1.evaluate(arr), m.f2.evaluate(arr))
    return _scalar(value) if scalar else value


def mixture_envelope(m: MixturePotential, chi, d: np.ndarray, eps: float) -> np.ndarray:
    return mixture_prox(m, chi, d, eps).envelope_value


def mixture_prox(m: MixturePotential, chi, d: TensorLike, eps: float) -> ProxResult:
    """Proximal map of the phase-selected potential"""
    arr, scalar = _as_array(d)
    mask = np.broadcast_to(_phase_mask(chi), arr.shape[:-1])
    if scalar:
        return prox(m.f1 if bool(mask) else m.f2, d, eps)
    minimizer = np.empty_like(arr)
    stress = np.empty_like(arr)
    value = np.empty(arr.shape[:-1])
    for potential, where in ((m.f1, mask), (m.f2, ~mask)):
        if not np.any(where):
            continue
        part = prox(potential, arr[where], eps)
        minimizer[where] = part.minimizer
        stress[where] = part.stress
        value[where] = part.envelope_value
    return ProxResult(minimizer=minimizer, envelope_value=value, stress=stress)


@dataclass(frozen=True)
class ComparabilityReport:
    """Sampled check of (1/k) F1 - k <= F2 <= k (F1 + 1)"""
    holds: bool
    worst_margin: float
    skipped: int = 0


def check_comparability(m: MixturePotential, samples: Sequence[TensorLike]) -> ComparabilityReport:
    if m.comparability_k is None:
        raise ValueError("mixture has no comparability constant")
    k = m.comparability_k
    arr = np.stack([_as_array(s)[0] for s in samples]) if len(samples) else np.zeros((0, 3))
    f1 = m.f1.evaluate(arr)
    f2 = m.f2.evaluate(arr)
    finite = np.isfinite(f1) & np.isfinite(f2)
    skipped = int(np.count_nonzero(~finite))
    if skipped:
        log_warning(f"comparability: {skipped} sample(s) outside a potential's domain were skipped")
    f1 = f1[finite]
    f2 = f2[finite]
    if f1.size == 0:
        return ComparabilityReport(holds=True, worst_margin=math.inf, skipped=skipped)
    lower = f2 - (f1 / k - k)
    upper = k * (f1 + 1.0) - f2
    worst = float(min(lower.min(), upper.min()))
    log_debug(f"comparability k={k:g}: worst margin {worst:.3e} over {f1.size} samples")
    return ComparabilityReport(holds=worst >= -1e-12, worst_margin=worst, skipped=skipped)


def default_samples(max_magnitude: float = 100.0, count: int = 24) -> List[SymTensor2]:
    """Deterministic sample set: pure shear, pure trace and mixed rays"""
    samples = [SymTensor2()]
    for s in np.geomspace(1e-2, max_magnitude, count):
        s = float(s)
        samples.extend([
            SymTensor2(s, 0.0, -s),
            SymTensor2(0.0, s, 0.0),
            SymTensor2.diag(s, s),
            SymTensor2.diag(-s, -s),
            SymTensor2(s, 0.5 * s, 0.0),
        ])
    return samples
