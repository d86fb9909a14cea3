import numpy as np
import pytest
from scipy.special import hankel1, h1vp

from pmlhp.oracles import (
    bessel_pair,
    disk_far_field,
    disk_scattering_series,
    dtn_coefficient,
    dtn_coefficients,
    optical_theorem_check,
    recurrence_residual,
    wronskian_residual,
)

N_TOP = 3 * int(np.ceil(10 * 1.5)) + 40  # order range needed at k=10, R_tr=1.5


def representable_samples(rng, count):
    """Random ``(n, z)`` in the supported range where float64 can hold ``J_n`` and ``Y_n``."""
    out = []
    while len(out) < count:
        n = int(rng.integers(0, N_TOP + 1))
        z = float(10 ** rng.uniform(-8, 4))
        try:
            bessel_pair(n, z)
        except ValueError:
            continue
        out.append((n, z))
    return out


class TestBesselPair:
    def test_wronskian(self, rng):
        res = [float(wronskian_residual(n, z)) for n, z in representable_samples(rng, 1000)]
        assert max(res) <= 1e-12

    def test_wronskian_vectorized(self):
        z = np.logspace(-2, 4, 200)
        assert np.all(wronskian_residual(3, z) <= 1e-12)

    def test_small_argument_limits(self):
        J, _, Y, _, _, _ = bessel_pair(0, 1e-6)
        assert J == pytest.approx(1.0, abs=1e-12)
        assert Y < -8

    @pytest.mark.parametrize("n", [1, 5, 20, 60])
    def test_recurrence(self, n):
        z = np.linspace(0.1, 200, 500)
        assert np.all(recurrence_residual(n, z) <= 1e-11)

    @pytest.mark.parametrize("n, z", [(-1, 1.0), (2001, 1.0), (0, 0.0), (0, 2e4), (1.5, 1.0)])
    def test_out_of_range(self, n, z):
        with pytest.raises(ValueError):
            bessel_pair(n, z)

    def test_unrepresentable(self):
        with pytest.raises(ValueError):
            bessel_pair(80, 1e-6)

    def test_hankel_combination(self):
        J, dJ, Y, dY, H, dH = bessel_pair(4, 2.5)
        assert H == pytest.approx(hankel1(4, 2.5), rel=1e-14)
        assert dH == pytest.approx(h1vp(4, 2.5), rel=1e-14)


class TestDtN:
    def test_outgoing_sign(self):
        for kR in np.linspace(1, 100, 40):
            for n in range(0, int(2 * kR) + 1, max(1, int(kR) // 5)):
                assert dtn_coefficient(n, kR, 1.0).imag > 0

    @pytest.mark.parametrize("k, R", [(100.0, 1.0), (50.0, 4.0), (1000.0, 0.5)])
    def test_large_argument(self, k, R):
        assert abs(dtn_coefficient(0, k, R) - 1j * k) <= 1.0 / R

    @pytest.mark.parametrize("n", [0, 1, 7, 30])
    def test_definition(self, n):
        k, R = 10.0, 1.0
        assert dtn_coefficient(n, k, R) == pytest.approx(k * h1vp(n, k * R) / hankel1(n, k * R), rel=1e-10)

    def test_table_matches_single(self):
        T = dtn_coefficients(60, 10.0, 1.0)
        for n in (0, 3, 10, 25, 60):
            assert T[n] == pytest.approx(dtn_coefficient(n, 10.0, 1.0), rel=1e-10)

    def test_symmetric_in_n(self):
        assert dtn_coefficient(-4, 3.0, 1.0) == dtn_coefficient(4, 3.0, 1.0)

    def test_high_order_no_overflow(self):
        val = dtn_coefficient(1500, 10.0, 1.0)
        assert np.isfinite(val) and val.real < 0

    def test_bad_argument(self):
        with pytest.raises(ValueError):
            dtn_coefficient(0, 0.0, 1.0)


class TestDiskScattering:
    def test_boundary_residual(self):
        phi = np.linspace(0, 2 * np.pi, 257)
        pts = 0.5 * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        assert np.abs(disk_scattering_series(10.0, 0.5, 0.3, pts)).max() <= 1e-10

    def test_direction_vector(self):
        pts = np.array([[1.0, 0.2], [-0.3, 0.9]])
        a = disk_scattering_series(4.0, 0.5, np.pi / 3, pts)
        b = disk_scattering_series(4.0, 0.5, [0.5, np.sqrt(3) / 2], pts)
        assert np.allclose(a, b, atol=1e-14)

    def test_small_obstacle_monopole(self):
        # logarithmic capacity: u^S ~ c_0 H_0(kr) with c_0 ~ 1 / (1 + (2i/pi)(log(ka/2) + gamma))
        k, a = 10.0, 1e-6
        pts = np.array([[1.0, 0.0], [0.0, 1.0]])
        us = disk_scattering_series(k, a, 0.0, pts, scattered_only=True)
        c0 = 1.0 / (1.0 + (2j / np.pi) * (np.log(k * a / 2) + np.euler_gamma))
        assert np.allclose(us, -c0 * hankel1(0, k), rtol=1e-6)

    def test_vanishing_obstacle(self):
        sizes = [abs(disk_scattering_series(10.0, a, 0.0, [[1.0, 0.0]], scattered_only=True)[0])
                 for a in (1e-3, 1e-6, 1e-12, 1e-100)]
        assert np.all(np.diff(sizes) < 0) and sizes[-1] <= 2e-3

    @pytest.mark.parametrize("k, a", [(10.0, 0.5), (1.0, 1.0), (40.0, 0.3)])
    def test_optical_theorem(self, k, a):
        s1, s2 = optical_theorem_check(k, a)
        assert abs(s1 - s2) <= 1e-8 * abs(s2)

    def test_far_field_limit(self):
        k, a, r = 5.0, 0.5, 4000.0
        us = disk_scattering_series(k, a, 0.0, [[r, 0.0]], scattered_only=True)[0]
        F = disk_far_field(k, a, 0.0)
        asym = np.sqrt(2 / (np.pi * k * r)) * np.exp(1j * (k * r - np.pi / 4)) * F
        assert abs(us - asym) <= 1e-3 * abs(asym)

    def test_point_inside(self):
        with pytest.raises(ValueError):
            disk_scattering_series(5.0, 0.5, 0.0, [[0.1, 0.0]])

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            disk_scattering_series(5.0, 0.0, 0.0, [[1.0, 0.0]])
