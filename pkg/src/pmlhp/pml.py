"""Radial PML scaling functions and the complex coefficients of the truncated problem.

Outside ``B_{R1}`` the coordinate ``r`` is complexified to ``r + i f_theta(r)``
with ``f_theta = f tan(theta)``.  With ``alpha = 1 + i f_theta'`` and
``beta = 1 + i f_theta / r`` the scaled operator is written in divergence form
with

* ``A = H D H^T``, ``D = diag(beta/alpha, alpha/beta)`` in 2D and
  ``D = diag(beta^2/alpha, alpha, alpha)`` in 3D,
* ``c^{-2} = alpha beta^{d-1}``,

where the columns of ``H`` are the radial and tangential unit vectors at ``x``.
Inside ``B_{R1}`` the scatterer coefficients ``A_scat`` and ``c_scat`` apply.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .smoothstep import plateau, step

__all__ = [
    "ScalingFunction",
    "PmlSetup",
    "MediumSpec",
    "CoefficientSample",
    "CoefficientBounds",
    "evaluate_scaling",
    "pml_tensor",
    "re_part_spectrum",
    "re_d_closed_form",
    "operator_consistency_residual",
    "plane_wave_field",
    "assumption_report",
    "scan_constants",
]


@dataclass(frozen=True)
class ScalingFunction:
    """PML profile ``f`` with ``f = f' = 0`` on ``r <= R1`` and ``f = r`` on ``r >= R2``.

    The default profile is ``f(r) = r S((r - R1)/(R2 - R1))`` with ``S`` the
    smooth step of :mod:`pmlhp.smoothstep`.  A custom ``profile`` callable
    returning ``(f, f', f'')`` may be supplied for diagnostics; it bypasses the
    constraints, which are then the caller's responsibility.
    """

    R1: float
    R2: float
    profile: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.R1 > 0 and self.R2 > self.R1):
            raise ValueError("need 0 < R1 < R2")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.profile is not None:
            f, df, d2f = self.profile(r)
            return (np.asarray(f, float), np.asarray(df, float), np.asarray(d2f, float))
        L = self.R2 - self.R1
        s, ds, d2s = step((r - self.R1) / L, 2)
        f = r * s
        df = s + r * ds / L
        d2f = 2.0 * ds / L + r * d2s / L**2
        return f, df, d2f


def evaluate_scaling(s: ScalingFunction, r):
    """Return ``(f, f', f'')`` at ``r`` with closed-form derivatives.

    Raises
    ------
    ValueError
        If any ``r`` is negative.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("scaling function is defined for r >= 0 only")
    return s(r)


@dataclass(frozen=True)
class PmlSetup:
    """PML angle, profile, dimension and truncation radius."""

    theta: float
    scaling: ScalingFunction
    R_tr: float
    d: int = 2
    eps: float = 1e-4

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        if not (self.eps <= self.theta <= np.pi / 2 - self.eps):
            raise ValueError(
                f"theta={self.theta} outside [eps, pi/2 - eps] with eps={self.eps}"
            )
        if not self.R_tr > self.scaling.R1:
            raise ValueError("R_tr must exceed R1")

    @property
    def R1(self) -> float:
        return self.scaling.R1

    @property
    def R2(self) -> float:
        return self.scaling.R2

    def radial(self, r):
        """Complex stretching data at radii ``r``.

        Returns a dict with ``ft, dft, d2ft`` (the scaled profile and its
        derivatives), ``alpha, beta`` and their radial derivatives ``dalpha,
        dbeta``.  At ``r = 0`` the ratio ``f/r`` is taken as 0 (``f`` vanishes
        identically near the origin).
        """
        r = np.asarray(r, dtype=float)
        tan = np.tan(self.theta)
        f, df, d2f = self.scaling(r)
        ft, dft, d2ft = f * tan, df * tan, d2f * tan
        safe = np.where(r > 0, r, 1.0)
        g = np.where(r > 0, ft / safe, 0.0)
        dg = np.where(r > 0, dft / safe - ft / safe**2, 0.0)
        alpha = 1.0 + 1j * dft
        beta = 1.0 + 1j * g
        return {
            "ft": ft,
            "dft": dft,
            "d2ft": d2ft,
            "alpha": alpha,
            "beta": beta,
            "dalpha": 1j * d2ft,
            "dbeta": 1j * dg,
        }

    def diag_entries(self, r):
        """Diagonal of ``D`` at radii ``r``, shape ``r.shape + (d,)``."""
        q = self.radial(r)
        a, b = q["alpha"], q["beta"]
        if self.d == 2:
            return np.stack([b / a, a / b], axis=-1)
        return np.stack([b * b / a, a, a], axis=-1)

    def c_inv2(self, r):
        """``alpha beta^{d-1}`` at radii ``r``."""
        q = self.radial(r)
        return q["alpha"] * q["beta"] ** (self.d - 1)


def _identity_field(x):
    return 1.0


@dataclass(frozen=True)
class MediumSpec:
    """Scatterer coefficients supported in ``B_{R_scat}``.

    Parameters
    ----------
    R_scat : float
        Support radius of ``I - A_scat`` and ``1 - c_scat``.
    c_scat : callable, optional
        ``x -> c`` for points ``x`` of shape ``(..., d)``; default ``c = 1``.
    A_scat : callable, optional
        ``x -> A`` of shape ``(..., d, d)``; default identity.
    radial_c_inv2 : callable, optional
        ``r -> c^{-2}(r)`` for radially symmetric media.  When set it takes
        precedence over ``c_scat`` and marks the medium as radial.
    name : str
        Label recorded in experiment manifests.
    breaks : tuple of float
        Radii where the radial profile fails to be analytic; the radial
        spectral-element solver grades its subdomains toward them.
    """

    R_scat: float
    c_scat: Optional[Callable] = field(default=None, compare=False)
    A_scat: Optional[Callable] = field(default=None, compare=False)
    radial_c_inv2: Optional[Callable] = field(default=None, compare=False)
    name: str = "homogeneous"
    breaks: tuple = ()

    @classmethod
    def homogeneous(cls, R_scat: float = 0.5) -> "MediumSpec":
        return cls(R_scat=R_scat, name="homogeneous")

    @classmethod
    def radial_bump(cls, R_scat: float = 0.5, amplitude: float = 0.5) -> "MediumSpec":
        """``c^{-2} = 1 + amplitude * b(r)`` with a smooth plateau ``b``.

        ``b = 1`` on ``r <= R_scat/2`` and ``b = 0`` on ``r >= R_scat``.
        """
        if amplitude <= -1:
            raise ValueError("amplitude must exceed -1 so that c is real and positive")

        def c_inv2(r):
            return 1.0 + amplitude * plateau(r, 0.5 * R_scat, R_scat)

        return cls(R_scat=R_scat, radial_c_inv2=c_inv2, name=f"radial_bump({amplitude:g})",
                   breaks=(0.5 * R_scat, R_scat))

    @property
    def is_radial(self) -> bool:
        return self.A_scat is None and (self.c_scat is None or self.radial_c_inv2 is not None)

    def c_inv2_at(self, x):
        """``c_scat(x)^{-2}`` at points of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        if self.radial_c_inv2 is not None:
            return np.broadcast_to(self.radial_c_inv2(np.linalg.norm(x, axis=-1)), shape).astype(float)
        if self.c_scat is not None:
            c = np.broadcast_to(self.c_scat(x), shape)
            return 1.0 / c**2
        return np.ones(shape)

    def c_inv2_radial(self, r):
        """Radial profile of ``c^{-2}``; only for radial media."""
        if not self.is_radial:
            raise ValueError("medium is not radially symmetric")
        r = np.asarray(r, dtype=float)
        if self.radial_c_inv2 is not None:
            return np.broadcast_to(self.radial_c_inv2(r), r.shape).astype(float)
        return np.ones_like(r)

    def A_at(self, x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        if self.A_scat is None:
            return np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d))
        return np.asarray(self.A_scat(x), dtype=float)


@dataclass
class CoefficientSample:
    """Pointwise coefficient data; every field carries the leading shape of ``x``."""

    alpha: np.ndarray
    beta: np.ndarray
    D: np.ndarray
    H: np.ndarray
    A: np.ndarray
    c_inv2: np.ndarray


def _frame(x):
    """Orthonormal frame with the radial unit vector as first column."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    r = np.linalg.norm(x, axis=-1)
    H = np.zeros(x.shape + (d,))
    if d == 2:
        phi = np.arctan2(x[..., 1], x[..., 0])
        c, s = np.cos(phi), np.sin(phi)
        H[..., 0, 0], H[..., 1, 0] = c, s
        H[..., 0, 1], H[..., 1, 1] = -s, c
        return H
    th = np.arccos(np.clip(np.where(r > 0, x[..., 2] / np.where(r > 0, r, 1.0), 1.0), -1, 1))
    phi = np.arctan2(x[..., 1], x[..., 0])
    ct, st, cp, sp = np.cos(th), np.sin(th), np.cos(phi), np.sin(phi)
    H[..., :, 0] = np.stack([st * cp, st * sp, ct], axis=-1)
    H[..., :, 1] = np.stack([ct * cp, ct * sp, -st], axis=-1)
    H[..., :, 2] = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
    return H


def pml_tensor(setup: PmlSetup, medium: MediumSpec, x) -> CoefficientSample:
    """Coefficients ``A(x)`` and ``c^{-2}(x)`` of the truncated PML problem.

    Parameters
    ----------
    setup : PmlSetup
    medium : MediumSpec
    x : array_like, shape (..., d)

    Returns
    -------
    CoefficientSample
    """
    x = np.asarray(x, dtype=float)
    d = setup.d
    if x.shape[-1] != d:
        raise ValueError(f"points must have trailing dimension {d}")
    if medium.R_scat >= setup.R1:
        raise ValueError("R_scat must be smaller than R1")
    r = np.linalg.norm(x, axis=-1)
    q = setup.radial(r)
    alpha, beta = q["alpha"], q["beta"]
    Ddiag = setup.diag_entries(r)
    D = np.zeros(r.shape + (d, d), dtype=complex)
    idx = np.arange(d)
    D[..., idx, idx] = Ddiag
    H = _frame(x)
    A = np.einsum("...ij,...j,...kj->...ik", H, Ddiag, H)
    A = 0.5 * (A + np.swapaxes(A, -1, -2))  # exact symmetry, not just up to roundoff
    cinv2 = alpha * beta ** (d - 1)
    inner = r < setup.R1
    if np.any(inner):
        A = np.where(inner[..., None, None], medium.A_at(x).astype(complex), A)
        cinv2 = np.where(inner, medium.c_inv2_at(x), cinv2)
    return CoefficientSample(alpha=alpha, beta=beta, D=D, H=H, A=A, c_inv2=cinv2)


def re_part_spectrum(setup: PmlSetup, r):
    """Eigenvalues of ``Re D`` at radius ``r`` (ascending, trailing axis).

    Raises
    ------
    ValueError
        If ``r < R1``, where ``D`` is not defined.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < setup.R1):
        raise ValueError("Re D is only defined for r >= R1")
    return np.sort(setup.diag_entries(r).real, axis=-1)


def re_d_closed_form(setup: PmlSetup, r):
    """Real part of ``D`` from the expanded closed form, in the order of ``D``.

    With ``a = f_theta'`` and ``g = f_theta / r``:

    * 2D: ``(1 + g a)/(1 + a^2)`` and ``(1 + g a)/(1 + g^2)``;
    * 3D: ``(1 - g^2 + 2 g a)/(1 + a^2)``, ``1``, ``1``.
    """
    r = np.asarray(r, dtype=float)
    q = setup.radial(r)
    a = q["dft"]
    g = q["beta"].imag
    if setup.d == 2:
        return np.stack([(1 + g * a) / (1 + a * a), (1 + g * a) / (1 + g * g)], axis=-1)
    one = np.ones_like(a)
    return np.stack([(1 - g * g + 2 * g * a) / (1 + a * a), one, one], axis=-1)


def plane_wave_field(k: float, a):
    """Return ``x -> (u, grad u, hess u)`` for ``u = exp(i k a.x)``."""
    a = np.asarray(a, dtype=float)
    a = a / np.linalg.norm(a)

    def field_(x):
        x = np.asarray(x, dtype=float)
        u = np.exp(1j * k * (x @ a))
        grad = 1j * k * a * u[..., None]
        hess = -(k**2) * np.einsum("i,j->ij", a, a) * u[..., None, None]
        return u, grad, hess

    return field_


def operator_consistency_residual(setup: PmlSetup, medium: MediumSpec, u, x):
    """Relative mismatch between the divergence form and the polar form of the scaled Laplacian.

    The first value is ``c^2 div(A grad u)`` with ``A`` from :func:`pml_tensor`
    and ``div A`` from the radial derivatives of ``D``.  The second is the
    polar form
    ``(1/alpha) d_r((1/alpha) d_r u) + (d-1)/((r + i f_theta) alpha) d_r u
    + Delta_omega u / (r + i f_theta)^2``.

    Parameters
    ----------
    u : callable
        ``x -> (u, grad, hess)``, e.g. :func:`plane_wave_field`.
    x : array_like, shape (..., d)
        Points with ``|x| > R1``.

    Returns
    -------
    ndarray
        ``|c^2 div(A grad u) - Delta_theta u| / max(1, |Delta_theta u|)``.
    """
    x = np.asarray(x, dtype=float)
    d = setup.d
    r = np.linalg.norm(x, axis=-1)
    if np.any(r <= setup.R1):
        raise ValueError("consistency identity is only claimed for |x| > R1")
    val, grad, hess = u(x)
    coef = pml_tensor(setup, medium, x)
    q = setup.radial(r)
    a, b, da, db = q["alpha"], q["beta"], q["dalpha"], q["dbeta"]
    rhat = x / r[..., None]

    # divergence form: div(A grad u) = (div A) . grad u + A : hess u
    if d == 2:
        D11, D22 = b / a, a / b
        dD11 = (db * a - b * da) / a**2
    else:
        D11, D22 = b * b / a, a
        dD11 = (2 * b * db * a - b * b * da) / a**2
    divA = (dD11 + (D11 - D22) * (d - 1) / r)[..., None] * rhat
    div_form = np.einsum("...i,...i->...", divA, grad) + np.einsum("...ij,...ij->...", coef.A, hess)
    lhs = div_form / coef.c_inv2

    # polar form
    ur = np.einsum("...i,...i->...", rhat, grad)
    urr = np.einsum("...i,...ij,...j->...", rhat, hess, rhat)
    lap = np.trace(hess, axis1=-2, axis2=-1)
    lap_omega = r**2 * (lap - urr - (d - 1) * ur / r)
    rt = r + 1j * q["ft"]
    rhs = urr / a**2 - da * ur / a**3 + (d - 1) * ur / (rt * a) + lap_omega / rt**2
    return np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs))


def _half_plane_fit(z):
    """Smallest closed sector containing all ``z``; returns (width, centre angle)."""
    ang = np.sort(np.mod(np.angle(z[np.abs(z) > 0]), 2 * np.pi))
    if ang.size == 0:
        return 0.0, 0.0
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
    j = int(np.argmax(gaps))
    width = 2 * np.pi - gaps[j]
    start = ang[(j + 1) % ang.size]
    return width, start + 0.5 * width


def assumption_report(setup: PmlSetup, n: int = 4000) -> dict:
    """Scan the PML profile for the monotonicity and half-plane properties.

    Over ``r`` in ``[R1, R_tr]`` this checks that ``f_theta / r`` is
    nondecreasing and whether ``alpha, beta^2/alpha, beta/alpha, alpha/beta``
    all lie in one closed half-plane.

    Returns
    -------
    dict
        ``monotone`` (bool), ``monotone_violations`` (radii), ``half_plane``
        (bool), ``sector_width`` (radians), ``violation_radii`` (radii whose
        values leave the best half-plane), ``max_spread_alpha_b2a`` and
        ``spread_radii`` (radii where ``|arg(beta^2/alpha) - arg(alpha)| >
        pi/2``), ``max_imag_abs`` (largest imaginary part over the scan).
    """
    r = np.linspace(setup.R1, setup.R_tr, n)
    q = setup.radial(r)
    a, b = q["alpha"], q["beta"]
    g = b.imag
    dg = np.diff(g)
    mono_bad = r[1:][dg < -1e-12 * np.maximum(1.0, np.abs(g[1:]))]
    vals = np.stack([a, b * b / a, b / a, a / b], axis=-1)
    width, centre = _half_plane_fit(vals.ravel())
    proj = np.real(vals * np.exp(-1j * centre))
    tol = 1e-12 * np.abs(vals)
    if width <= np.pi + 1e-12:
        viol = r[np.any(proj < -tol, axis=-1)]
    else:
        # no half-plane exists; flag radii outside the half-plane that fits best
        viol = r[np.any(proj < -tol, axis=-1)]
        if viol.size == 0:
            viol = r[[int(np.argmin(proj.min(axis=-1)))]]
    spread = np.abs(np.angle(b * b / a / a))
    return {
        "monotone": mono_bad.size == 0,
        "monotone_violations": mono_bad,
        "half_plane": bool(width <= np.pi + 1e-12),
        "sector_width": float(width),
        "violation_radii": viol,
        "max_spread_alpha_b2a": float(spread.max()),
        "spread_radii": r[spread > np.pi / 2],
        "max_imag_abs": float(np.abs(vals.imag).max()),
    }


@dataclass(frozen=True)
class CoefficientBounds:
    """Scanned ellipticity and continuity constants (margins already applied)."""

    A_minus: float
    A_plus: float
    c_inv2_max: float
    margin: float

    @property
    def C_cont(self) -> float:
        return max(self.A_plus, self.c_inv2_max)

    def schatz_threshold(self) -> float:
        """``(1/C_cont) sqrt(A_+ / (2 (A_- + c^{-2})))`` with ``A_+`` in the numerator."""
        return np.sqrt(self.A_plus / (2 * (self.A_minus + self.c_inv2_max))) / self.C_cont

    def qo_bound(self) -> float:
        """``2 C_cont / A_-``."""
        return 2 * self.C_cont / self.A_minus

    def as_dict(self) -> dict:
        return {
            "A_minus": self.A_minus,
            "A_plus": self.A_plus,
            "c_inv2_max": self.c_inv2_max,
            "c_minus": float(self.c_inv2_max ** -0.5),
            "C_cont": self.C_cont,
            "margin": self.margin,
        }


def scan_constants(
    setup: PmlSetup, medium: MediumSpec, n: int = 2000, margin: float = 0.05, seed: int = 0
) -> CoefficientBounds:
    """Grid scan of ``A_-``, ``A_+`` and ``max |c^{-2}|`` over ``B_{R_tr}``.

    ``A_-`` is the least eigenvalue of ``Re A`` (``Re D`` in the layer),
    ``A_+`` the largest modulus of an entry of ``D`` (largest eigenvalue of
    ``A_scat`` inside), and the third constant the largest ``|c^{-2}|``.  The
    constants are widened by ``margin`` (``A_-`` shrunk, the others grown).
    Non-radial scatterer coefficients are sampled at ``n`` seeded random
    points of ``B_{R_scat}``.
    """
    r = np.linspace(setup.R1, setup.R_tr, n)
    Dd = setup.diag_entries(r)
    cin = setup.c_inv2(r)
    a_minus = Dd.real.min()
    a_plus = np.abs(Dd).max()
    c_max = np.abs(cin).max()
    d = setup.d
    if medium.is_radial:
        rr = np.linspace(0.0, setup.R1, n)
        pts = np.zeros((n, d))
        pts[:, 0] = rr
    else:
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(n, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        pts = z * (medium.R_scat * rng.random(n) ** (1.0 / d))[:, None]
        pts = np.concatenate([pts, np.zeros((1, d))])
    eig = np.linalg.eigvalsh(medium.A_at(pts))
    a_minus = min(a_minus, eig.min())
    a_plus = max(a_plus, eig.max())
    c_max = max(c_max, np.abs(medium.c_inv2_at(pts)).max())
    return CoefficientBounds(
        A_minus=float(a_minus * (1 - margin)),
        A_plus=float(a_plus * (1 + margin)),
        c_inv2_max=float(c_max * (1 + margin)),
        margin=margin,
    )
