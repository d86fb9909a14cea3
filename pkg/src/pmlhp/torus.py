"""FFT functional calculus of ``-hbar^2 Lap`` on the torus ``[-R, R)^d``.

Fields are sampled at ``x_m = -R + 2R m / N`` along each axis.  In the
orthonormal basis ``e_j(x) = (2R)^{-d/2} exp(i pi j.x / R)`` the operator
``-hbar^2 Lap`` is diagonal with eigenvalues ``lambda_j = hbar^2 |j|^2 pi^2 / R^2``
(``hbar = 1/k``), so every multiplier ``f(-hbar^2 Lap)`` is a pointwise
product in Fourier space.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from math import factorial
from typing import Callable, Optional, Sequence

import numpy as np

from .smoothstep import plateau

__all__ = [
    "TorusGrid",
    "TorusField",
    "MultiplierSpec",
    "apply_multiplier",
    "Cutoffs",
    "build_cutoffs",
    "make_phi_tr",
    "Decomposition",
    "decompose_solution",
    "auto_mu",
    "spectral_derivative",
    "multi_indices",
    "derivative_table",
    "heat_propagator",
    "heat_derivative_bound",
    "fit_heat_envelope",
    "classify_derivative_growth",
    "GROWTH_CLASSES",
]

GROWTH_CLASSES = ("entire", "radius ~ 1/k", "radius k-independent", "none")


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on ``[-R_sharp, R_sharp)^d``.

    Parameters
    ----------
    R_sharp : float
        Half-period.
    N : int
        Points per dimension, a power of two.
    d : int
        Dimension, 1 or 2.
    """

    R_sharp: float
    N: int
    d: int = 2

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")
        if self.N < 2 or self.N & (self.N - 1):
            raise ValueError("N must be a power of two")
        if not self.R_sharp > 0:
            raise ValueError("R_sharp must be positive")

    @classmethod
    def for_wavenumber(cls, k: float, R_sharp: float, d: int = 2, factor: float = 4.0) -> "TorusGrid":
        """Smallest power-of-two grid whose Nyquist wavenumber is at least ``factor * k``."""
        N = 2
        while np.pi * N / (2 * R_sharp) < factor * k:
            N *= 2
        return cls(R_sharp, N, d)

    @property
    def spacing(self) -> float:
        return 2.0 * self.R_sharp / self.N

    @property
    def nyquist(self) -> float:
        return np.pi * self.N / (2.0 * self.R_sharp)

    @property
    def shape(self):
        return (self.N,) * self.d

    def check_resolution(self, k: float, factor: float = 4.0):
        """Raise unless the Nyquist wavenumber is at least ``factor * k``."""
        if self.nyquist < factor * k:
            raise ValueError(f"grid Nyquist wavenumber {self.nyquist:.3g} below {factor:g} k = {factor * k:.3g}")

    def axis(self):
        return -self.R_sharp + self.spacing * np.arange(self.N)

    def coordinates(self):
        """Arrays ``x`` (and ``y``) of shape ``grid.shape``."""
        ax = self.axis()
        if self.d == 1:
            return (ax,)
        return tuple(np.meshgrid(ax, ax, indexing="ij"))

    def points(self):
        """Grid points as an array of shape ``(N**d, d)``."""
        return np.stack([c.ravel() for c in self.coordinates()], axis=-1)

    def radius(self):
        c = self.coordinates()
        return np.sqrt(sum(ci**2 for ci in c))

    def indices(self):
        """Integer frequency vectors ``j`` as arrays of shape ``grid.shape``."""
        f = np.fft.fftfreq(self.N, 1.0 / self.N)
        if self.d == 1:
            return (f,)
        return tuple(np.meshgrid(f, f, indexing="ij"))

    def eigenvalues(self, k: float):
        """``lambda_j = |j|^2 pi^2 / (k R)^2`` on the FFT layout."""
        j = self.indices()
        return sum(ji**2 for ji in j) * (np.pi / (k * self.R_sharp)) ** 2


@dataclass
class TorusField:
    """Complex samples of a function on a :class:`TorusGrid`."""

    values: np.ndarray
    grid: TorusGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values must have shape {self.grid.shape}")

    def norm(self, mask=None) -> float:
        """``L^2`` norm ``(Delta^d sum |v|^2)^{1/2}``, optionally over a mask."""
        v = self.values if mask is None else self.values[mask]
        return float(np.sqrt(self.grid.spacing**self.grid.d * np.sum(np.abs(v) ** 2)))

    def coefficients(self):
        """Coefficients in the basis ``e_j`` (FFT layout)."""
        g = self.grid
        sign = (-1.0) ** sum(j.astype(int) for j in g.indices())
        return g.spacing**g.d * (2 * g.R_sharp) ** (-g.d / 2) * sign * np.fft.fftn(self.values)

    @classmethod
    def from_coefficients(cls, coeffs, grid: TorusGrid) -> "TorusField":
        sign = (-1.0) ** sum(j.astype(int) for j in grid.indices())
        vals = np.fft.ifftn(np.asarray(coeffs) * sign) / (grid.spacing**grid.d * (2 * grid.R_sharp) ** (-grid.d / 2))
        return cls(vals, grid)

    @classmethod
    def from_function(cls, f: Callable, grid: TorusGrid) -> "TorusField":
        return cls(np.asarray(f(grid.points())).reshape(grid.shape), grid)

    @classmethod
    def basis(cls, j: Sequence[int], grid: TorusGrid) -> "TorusField":
        """The eigenfunction ``e_j`` sampled on the grid."""
        c = grid.coordinates()
        phase = sum(ji * ci for ji, ci in zip(j, c)) * np.pi / grid.R_sharp
        return cls((2 * grid.R_sharp) ** (-grid.d / 2) * np.exp(1j * phase), grid)

    def _like(self, values) -> "TorusField":
        return TorusField(values, self.grid)

    def __add__(self, other):
        return self._like(self.values + other.values)

    def __sub__(self, other):
        return self._like(self.values - other.values)

    def __mul__(self, other):
        if isinstance(other, TorusField):
            return self._like(self.values * other.values)
        return self._like(self.values * other)

    __rmul__ = __mul__


@dataclass(frozen=True)
class MultiplierSpec:
    """Scalar function ``f`` of the eigenvalue ``lambda`` of ``-hbar^2 Lap``, ``hbar = 1/k``."""

    f: Callable
    k: float

    def on_spectrum(self, grid: TorusGrid):
        return np.broadcast_to(np.asarray(self.f(grid.eigenvalues(self.k))), grid.shape)

    def sup(self, grid: TorusGrid) -> float:
        """``max |f|`` over the discrete spectrum."""
        return float(np.abs(self.on_spectrum(grid)).max())


def _apply_symbol(field: TorusField, symbol) -> TorusField:
    return field._like(np.fft.ifftn(np.fft.fftn(field.values) * symbol))


def apply_multiplier(field: TorusField, spec: MultiplierSpec) -> TorusField:
    """``f(-hbar^2 Lap) v = sum_j v^(j) f(lambda_j) e_j``."""
    return _apply_symbol(field, spec.on_spectrum(field.grid))


@dataclass(frozen=True)
class Cutoffs:
    """Frequency cutoffs ``psi_mu``, ``psi_mu'`` and the bound ``Lambda = 2 mu``."""

    mu: float
    mu_prime: float

    @property
    def Lambda(self) -> float:
        return 2.0 * self.mu

    def psi_mu(self, s):
        return psi(np.asarray(s, dtype=float) / self.mu)

    def psi_mu_prime(self, s):
        return psi(np.asarray(s, dtype=float) / self.mu_prime)

    def low(self, k: float) -> MultiplierSpec:
        return MultiplierSpec(self.psi_mu, k)

    def high(self, k: float) -> MultiplierSpec:
        return MultiplierSpec(lambda s: 1.0 - self.psi_mu(s), k)

    def high_prime(self, k: float) -> MultiplierSpec:
        return MultiplierSpec(lambda s: 1.0 - self.psi_mu_prime(s), k)


def psi(s):
    """``1`` on ``|s| <= 1``, ``1 - S(|s| - 1)`` on ``1 < |s| < 2``, ``0`` beyond."""
    return plateau(s, 1.0, 2.0)


def build_cutoffs(mu: float, mu_prime: Optional[float] = None) -> Cutoffs:
    """Cutoffs at scale ``mu > 2`` with ``mu' in [1, mu/2]`` (default ``mu/2``).

    Raises
    ------
    ValueError
        If ``mu <= 2`` or ``mu'`` lies outside ``[1, mu/2]``.
    """
    if not mu > 2:
        raise ValueError("mu must exceed 2")
    mp = 0.5 * mu if mu_prime is None else float(mu_prime)
    if not (1.0 <= mp <= 0.5 * mu):
        raise ValueError("mu' must lie in [1, mu/2]")
    return Cutoffs(float(mu), mp)


def make_phi_tr(grid: TorusGrid, R1: float, delta: float) -> TorusField:
    """Radial cutoff equal to 1 on ``B_{R1(1+delta)}`` and 0 outside ``B_{R1(1+2 delta)}``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    return TorusField(plateau(grid.radius(), R1 * (1 + delta), R1 * (1 + 2 * delta)), grid)


@dataclass
class Decomposition:
    """``v = v_High + v_Low + v_PML`` on the grid."""

    v_High: TorusField
    v_Low: TorusField
    v_PML: TorusField
    cutoffs: Cutoffs
    k: float

    def reconstruction_error(self, v: TorusField) -> float:
        return float(np.abs((self.v_High + self.v_Low + self.v_PML).values - v.values).max())


def decompose_solution(v: TorusField, phi_tr: TorusField, mu: float, k: float, R1: float, delta: float) -> Decomposition:
    """Split ``v`` into ``Pi_High(phi v) + Pi_Low(phi v) + (1 - phi) v``.

    Parameters
    ----------
    v : TorusField
        Layer solution extended by zero outside the computational domain.
    phi_tr : TorusField
        Cutoff claimed to equal 1 on ``B_{R1(1+delta)}`` and vanish outside
        ``B_{R1(1+2 delta)}``; both properties are verified on the grid.

    Raises
    ------
    ValueError
        If ``phi_tr`` violates its support constraints or the grids differ.
    """
    if v.grid != phi_tr.grid:
        raise ValueError("v and phi_tr must live on the same grid")
    r = v.grid.radius()
    inner = r <= R1 * (1 + delta)
    outer = r >= R1 * (1 + 2 * delta)
    if np.any(np.abs(phi_tr.values[inner] - 1) > 1e-14) or np.any(np.abs(phi_tr.values[outer]) > 1e-14):
        raise ValueError("phi_tr must be 1 on B_{R1(1+delta)} and vanish outside B_{R1(1+2delta)}")
    cut = build_cutoffs(mu)
    w = phi_tr * v
    low = apply_multiplier(w, cut.low(k))
    high = apply_multiplier(w, cut.high(k))
    pml = v._like((1.0 - phi_tr.values) * v.values)
    return Decomposition(high, low, pml, cut, float(k))


def auto_mu(field: TorusField, k: float, mass: float = 1e-3, mu_min: float = 4.0, step: float = 0.25) -> float:
    """Smallest ``mu >= mu_min`` (on a grid of ``step``) with spectral mass above ``lambda = mu`` below ``mass``."""
    lam = field.grid.eigenvalues(k)
    c2 = np.abs(np.fft.fftn(field.values)) ** 2
    tot = c2.sum()
    if tot == 0:
        return float(mu_min)
    mu = mu_min
    lam_max = lam.max()
    while mu < lam_max:
        if c2[lam > mu].sum() < mass * tot:
            return float(mu)
        mu += step
    raise ValueError("no admissible mu below the grid's largest eigenvalue")


def spectral_derivative(field: TorusField, alpha: Sequence[int], k: Optional[float] = None) -> TorusField:
    """``d^alpha`` by Fourier multiplication with ``(i pi j / R)^alpha``.

    With ``k`` given the semiclassical ``(hbar D)^alpha``, ``hbar = 1/k`` and
    ``D = -i d``, is returned instead.

    Raises
    ------
    ValueError
        If ``|alpha| > 8`` or ``alpha`` has the wrong length.
    """
    alpha = tuple(int(a) for a in alpha)
    g = field.grid
    if len(alpha) != g.d or min(alpha) < 0:
        raise ValueError("alpha must be a nonnegative multi-index of length d")
    if sum(alpha) > 8:
        raise ValueError("|alpha| must not exceed 8")
    sym = np.ones(g.shape, dtype=complex)
    for a, j in zip(alpha, g.indices()):
        if a:
            xi = np.pi * j / g.R_sharp
            sym = sym * ((xi / k) ** a if k is not None else (1j * xi) ** a)
    return _apply_symbol(field, sym)


def multi_indices(m: int, d: int):
    """All multi-indices of order ``m`` in ``d`` variables."""
    return [a for a in product(range(m + 1), repeat=d) if sum(a) == m]


def derivative_table(field: TorusField, m_max: int, mask=None):
    """``max_{|alpha| = m} ||d^alpha field||`` for ``m = 0..m_max``."""
    return np.array(
        [max(spectral_derivative(field, a).norm(mask) for a in multi_indices(m, field.grid.d)) for m in range(m_max + 1)]
    )


def heat_propagator(field: TorusField, t: float, k: float) -> TorusField:
    """``exp(-t lambda)`` applied as a multiplier.

    Raises
    ------
    ValueError
        If ``t <= 0``.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    return apply_multiplier(field, MultiplierSpec(lambda s: np.exp(-t * s), k))


def heat_derivative_bound(m: int, t: float, k: float) -> float:
    """``sup_xi |xi|^m exp(-t |xi|^2 / k^2) = k^m (m / (2 e t))^{m/2}``."""
    if m == 0:
        return 1.0
    return float(k**m * (m / (2 * np.e * t)) ** (m / 2))


def fit_heat_envelope(ts, ms, ratios, k: float, tau: float = 0.5):
    """Smallest ``C`` with ``ratio <= exp(t^-tau) m! C^m t^{(tau-1) m/2} k^m`` on the data.

    Returns ``C`` and the largest data-to-envelope ratio (1 by construction
    at the maximizing sample).
    """
    ts, ms, ratios = map(np.asarray, (ts, ms, ratios))
    pos = ms > 0
    base = np.exp(ts**-tau) * np.array([factorial(int(m)) for m in ms]) * ts ** ((tau - 1) * ms / 2) * k**ms
    if np.any(ratios[~pos] > base[~pos]):
        raise ValueError("order-zero data exceed the envelope prefactor")
    C = float(np.max((ratios[pos] / base[pos]) ** (1.0 / ms[pos]))) if np.any(pos) else 0.0
    env = base * C**ms
    return C, float(np.max(ratios / env))


def _linfit(x, y):
    A = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    sse = float(res @ res)
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    return coef, sse, r2


def classify_derivative_growth(norms, k: float, rel_tie: float = 1e-9) -> dict:
    """Classify ``N_m = ||d^alpha w||`` (``|alpha| = m``) against three growth laws.

    The laws are ``C_u (Ck)^m`` ("entire"), ``C_u (Ck)^m m!`` ("radius ~ 1/k")
    and ``C_u C^m max(m, k)^m`` ("radius k-independent"); each becomes a
    straight line after subtracting ``0``, ``log m!`` or ``m log max(m, k)``
    from ``log N_m``.  The law with the smallest residual wins; near-ties
    (the third law coincides with the first when ``m <= k``) go to the law
    listed first.

    Returns
    -------
    dict
        ``cls``, ``r2`` and ``C`` of the chosen law plus ``sse`` of all three.
        A table with nonpositive entries or fewer than five orders is
        classified ``"none"``.
    """
    N = np.asarray(norms, dtype=float)
    if N.ndim != 1 or N.size < 5 or not np.all(np.isfinite(N)) or np.any(N <= 0):
        return {"cls": "none", "r2": np.nan, "C": np.nan, "sse": (np.nan,) * 3}
    m = np.arange(N.size, dtype=float)
    y = np.log(N)
    logfact = np.array([np.log(float(factorial(int(i)))) for i in m])
    shifts = (np.zeros_like(m), logfact, m * np.log(np.maximum(m, k)))
    fits = [_linfit(m, y - s) for s in shifts]
    sse = np.array([f[1] for f in fits])
    scale = max(float(((y - y.mean()) ** 2).sum()), 1e-300)
    best = 0
    for i in (1, 2):
        if sse[i] < sse[best] - rel_tie * scale:
            best = i
    coef, _, r2 = fits[best]
    C = float(np.exp(coef[1]) / k) if best < 2 else float(np.exp(coef[1]))
    return {"cls": GROWTH_CLASSES[best], "r2": float(r2), "C": C, "sse": tuple(float(s) for s in sse)}
