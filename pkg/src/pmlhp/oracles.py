"""Bessel-function oracles: DtN coefficients and sound-soft disk scattering."""

from __future__ import annotations

import numpy as np
from scipy.special import h1vp, hankel1, jv, jvp, yv, yvp

__all__ = [
    "bessel_pair",
    "wronskian_residual",
    "recurrence_residual",
    "hankel_ratio",
    "dtn_coefficient",
    "dtn_coefficients",
    "disk_scattering_series",
    "disk_modes",
    "disk_far_field",
    "optical_theorem_check",
]

N_MAX = 2000
Z_MIN, Z_MAX = 1e-8, 1e4
Z_HANKEL = 100.0
BIG = 1e280  # library accuracy degrades within a few decades of the float64 limits


def bessel_pair(n: int, z):
    """``J_n, J_n', Y_n, Y_n', H_n, H_n'`` (first-kind Hankel) at real ``z``.

    Parameters
    ----------
    n : int
        Order, ``0 <= n <= 2000``.
    z : float or array_like
        Arguments in ``[1e-8, 1e4]``.

    Raises
    ------
    ValueError
        For orders or arguments outside the supported range, or where
        ``|Y_n|`` exceeds ``1e280`` or ``|J_n|`` drops below ``1e-280``
        (small ``z``, large ``n``), since relative accuracy is lost there.
    """
    if int(n) != n or not (0 <= n <= N_MAX):
        raise ValueError(f"order must be an integer in [0, {N_MAX}]")
    z = np.asarray(z, dtype=float)
    if np.any(z < Z_MIN) or np.any(z > Z_MAX):
        raise ValueError(f"argument must lie in [{Z_MIN}, {Z_MAX}]")
    with np.errstate(all="ignore"):  # overflow is checked below
        J, dJ = jv(n, z), jvp(n, z)
        Y, dY = yv(n, z), yvp(n, z)
    large = z >= Z_HANKEL
    if np.any(large):
        # the complex Hankel routine is more accurate far out on the oscillatory range
        H, dH = hankel1(n, z), h1vp(n, z)
        J, dJ = np.where(large, H.real, J), np.where(large, dH.real, dJ)
        Y, dY = np.where(large, H.imag, Y), np.where(large, dH.imag, dY)
    if not (np.all(np.abs(Y) < BIG) and np.all(np.abs(dY) < BIG)):
        raise ValueError("Y_n overflows at this (n, z)")
    # below the turning point J_n has no zeros, so a tiny value means underflow
    if np.any((np.abs(J) < 1.0 / BIG) & (z < n)):
        raise ValueError("J_n underflows at this (n, z)")
    return J, dJ, Y, dY, J + 1j * Y, dJ + 1j * dY


def wronskian_residual(n, z):
    """``|J Y' - J' Y - 2/(pi z)| * pi z / 2``."""
    J, dJ, Y, dY, _, _ = bessel_pair(n, z)
    return np.abs(J * dY - dJ * Y - 2.0 / (np.pi * z)) * np.pi * np.asarray(z) / 2.0


def recurrence_residual(n, z):
    """``|J_{n-1} + J_{n+1} - (2n/z) J_n|`` over the largest of the three terms."""
    if n < 1:
        raise ValueError("recurrence needs n >= 1")
    z = np.asarray(z, dtype=float)
    a, b, c = jv(n - 1, z), jv(n + 1, z), (2.0 * n / z) * jv(n, z)
    scale = np.maximum.reduce([np.abs(a), np.abs(b), np.abs(c)])
    return np.abs(a + b - c) / scale


def hankel_ratio(n_max: int, z):
    """``rho_m = H_m(z) / H_{m-1}(z)`` for ``m = 1..n_max`` by forward recurrence.

    The recurrence ``rho_{m+1} = 2m/z - 1/rho_m`` is stable for the
    dominant first-kind Hankel function and never overflows.
    """
    z = np.asarray(z, dtype=complex)
    rho = np.empty((n_max,) + z.shape, dtype=complex)
    if n_max == 0:
        return rho
    rho[0] = hankel1(1, z) / hankel1(0, z)
    for m in range(1, n_max):
        rho[m] = 2.0 * m / z - 1.0 / rho[m - 1]
    return rho


def dtn_coefficients(n_max: int, k: float, R: float):
    """``k H_n'(kR) / H_n(kR)`` for ``n = 0..n_max`` (also valid for ``-n``)."""
    z = k * R
    out = np.empty(n_max + 1, dtype=complex)
    out[0] = k * (-hankel1(1, z) / hankel1(0, z))
    if n_max:
        rho = hankel_ratio(n_max, z)
        m = np.arange(1, n_max + 1)
        out[1:] = k * (1.0 / rho - m / z)
    return out


def dtn_coefficient(n: int, k: float, R: float) -> complex:
    """Exterior Dirichlet-to-Neumann symbol ``k H_n'(kR) / H_n(kR)`` of mode ``n``.

    Raises
    ------
    ValueError
        If ``kR`` is outside the supported range or the Hankel value vanishes.
    """
    z = k * R
    if not (Z_MIN <= z <= Z_MAX):
        raise ValueError("kR outside the supported range")
    n = abs(int(n))
    if n <= 50 * max(1.0, z):
        H, dH = hankel1(n, z), h1vp(n, z)
        if np.isfinite(H) and abs(H) > 0:
            # Im part from the Wronskian, 2/(pi R |H|^2), keeps its sign when
            # it is far below rounding level relative to the real part
            H2 = abs(H) ** 2
            re = k * (H.real * dH.real + H.imag * dH.imag) / H2
            return complex(re, 2.0 / (np.pi * R * H2))
    val = dtn_coefficients(n, k, R)[n]
    if not np.isfinite(val):
        raise ValueError("Hankel function vanished or overflowed")
    return complex(val)


def _mode_count(ka: float, extra: int = 25) -> int:
    return int(np.ceil(ka + 2.0 * ka ** (1 / 3) + extra))


def disk_modes(k: float, a: float, n_max=None):
    """Scattering coefficients ``c_n = J_n(ka) / H_n(ka)`` for ``|n| <= n_max``."""
    ka = k * a
    if n_max is None:
        n_max = _mode_count(ka)
        while abs(jv(n_max, ka)) > 1e-17 and n_max < N_MAX:
            n_max += 5
    n = np.arange(-n_max, n_max + 1)
    J = jv(n, ka)
    with np.errstate(invalid="ignore", over="ignore"):
        c = J / hankel1(n, ka)
    # |c_n| <= |J_n(ka)|; modes whose J_n underflows carry nothing
    c[np.abs(J) < 1e-300] = 0.0
    return n, c


def disk_scattering_series(k: float, a: float, incidence, points, n_max=None, scattered_only: bool = False):
    """Total field ``u_I + u_S`` for plane-wave scattering by the sound-soft disk ``B_a``.

    ``u_S = -sum_n i^n (J_n(ka)/H_n(ka)) H_n(kr) exp(i n (phi - phi_inc))``.

    Parameters
    ----------
    incidence : float or array_like
        Incidence angle ``phi_inc`` or a direction vector.
    points : array_like, shape (m, 2)
        Evaluation points with ``|x| >= a``.

    Raises
    ------
    ValueError
        If a point lies inside the obstacle.
    """
    if not a > 0:
        raise ValueError("obstacle radius must be positive")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    inc = np.asarray(incidence, dtype=float)
    phi_inc = float(np.arctan2(inc[1], inc[0])) if inc.ndim else float(inc)
    r = np.linalg.norm(pts, axis=1)
    if np.any(r < a * (1 - 1e-12)):
        raise ValueError("evaluation point inside the obstacle")
    n, c = disk_modes(k, a, n_max)
    live = c != 0
    n = n[live]
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    # H_n(kr)/H_n(ka) is bounded by ~1 for r >= a; evaluate through it for stability
    Hr = hankel1(n[None, :], k * r[:, None])
    Ha = hankel1(n, k * a)
    Jn = jv(n, k * a)
    terms = (1j**n) * Jn * (Hr / Ha) * np.exp(1j * n * (phi[:, None] - phi_inc))
    us = -np.sum(terms, axis=1)
    if scattered_only:
        return us
    ui = np.exp(1j * k * (pts[:, 0] * np.cos(phi_inc) + pts[:, 1] * np.sin(phi_inc)))
    return ui + us


def disk_far_field(k: float, a: float, psi):
    """Far-field pattern ``F(psi) = -sum_n c_n exp(i n psi)``, ``psi = phi - phi_inc``.

    Normalized so that ``u_S ~ sqrt(2/(pi k r)) exp(i(kr - pi/4)) F(psi)``.
    """
    n, c = disk_modes(k, a)
    psi = np.asarray(psi, dtype=float)
    return -np.sum(c * np.exp(1j * n * psi[..., None]), axis=-1)


def optical_theorem_check(k: float, a: float, n_angles: int = 0):
    """Total cross-section by two independent formulas.

    Returns
    -------
    sigma_angular : float
        ``(2/(pi k)) int |F|^2 dpsi`` by the trapezoidal rule on the circle.
    sigma_forward : float
        ``-(4/k) Re F(0)`` from the forward amplitude.
    """
    n, _ = disk_modes(k, a)
    m = n_angles or 4 * (int(n.max()) + 1)
    psi = 2 * np.pi * np.arange(m) / m
    F = disk_far_field(k, a, psi)
    sigma_angular = (2.0 / (np.pi * k)) * (2 * np.pi / m) * np.sum(np.abs(F) ** 2)
    sigma_forward = -(4.0 / k) * disk_far_field(k, a, 0.0).real
    return float(sigma_angular), float(sigma_forward)
