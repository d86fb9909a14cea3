import numpy as np
import pytest

from pmlhp.pml import (
    MediumSpec,
    PmlSetup,
    ScalingFunction,
    assumption_report,
    evaluate_scaling,
    operator_consistency_residual,
    plane_wave_field,
    pml_tensor,
    re_d_closed_form,
    re_part_spectrum,
    scan_constants,
)
from pmlhp.smoothstep import plateau, step


def constant_field(x):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    return np.ones(x.shape[:-1], complex), np.zeros(x.shape, complex), np.zeros(x.shape + (d,), complex)


class TestSmoothStep:
    def test_end_values(self):
        t = np.array([-1.0, 0.0, 1.0, 2.0])
        assert np.array_equal(step(t), [0.0, 0.0, 1.0, 1.0])

    def test_symmetry(self):
        t = np.linspace(0.01, 0.99, 99)
        assert np.allclose(step(t) + step(1 - t), 1.0, atol=1e-15)

    @pytest.mark.parametrize("order", [1, 2])
    def test_derivatives_match_differences(self, order):
        t = np.linspace(0.05, 0.95, 41)
        d = 1e-5
        vals = step(t, 2)
        if order == 1:
            num = (step(t + d) - step(t - d)) / (2 * d)
        else:
            num = (step(t + d, 1)[1] - step(t - d, 1)[1]) / (2 * d)
        assert np.allclose(vals[order], num, atol=1e-5 * max(1.0, np.abs(vals[order]).max()))

    def test_plateau(self):
        s = np.array([0.0, 0.9, 1.0, 2.0, 2.5, -2.5])
        assert np.array_equal(plateau(s, 1.0, 2.0), [1.0, 1.0, 1.0, 0.0, 0.0, 0.0])


class TestScaling:
    def setup_method(self):
        self.s = ScalingFunction(1.0, 1.25)

    def test_inner_zero(self):
        assert evaluate_scaling(self.s, 0.5) == (0.0, 0.0, 0.0)

    def test_outer_identity(self):
        f, df, d2f = evaluate_scaling(self.s, 2.5)
        assert (f, df, d2f) == (2.5, 1.0, 0.0)

    def test_central_difference(self):
        r = np.random.default_rng(0).uniform(1.0, 1.25, 200)
        d = 1e-5
        f, df, _ = evaluate_scaling(self.s, r)
        num = (evaluate_scaling(self.s, r + d)[0] - evaluate_scaling(self.s, r - d)[0]) / (2 * d)
        assert np.all(df >= 0)
        assert np.abs(df - num).max() <= 1e-6

    def test_zero_sets_coincide(self):
        # exp(-1/t) underflows for t < 1/745, so a thin band past R1 also reads 0
        r = np.linspace(0.0, 3.0, 10_000)
        f, df, _ = evaluate_scaling(self.s, r)
        band = (r > 1.0) & (r < 1.0 + 0.25 / 700)
        assert np.array_equal((f == 0) & ~band, r <= 1.0)
        assert np.array_equal((df == 0) & ~band, r <= 1.0)
        assert np.all(f[r >= 1.0 + 0.25 / 700] > 0)

    def test_ratio_nondecreasing(self):
        r = np.linspace(1e-3, 3.0, 10_000)
        q = evaluate_scaling(self.s, r)[0] / r
        assert np.all(np.diff(q) >= -1e-15)

    def test_negative_radius(self):
        with pytest.raises(ValueError):
            evaluate_scaling(self.s, -0.1)

    @pytest.mark.parametrize("R1,R2", [(1.0, 1.0), (0.0, 1.0), (1.2, 1.1)])
    def test_invalid(self, R1, R2):
        with pytest.raises(ValueError):
            ScalingFunction(R1, R2)


class TestSetup:
    @pytest.mark.parametrize("theta", [0.0, np.pi / 2, 2.0])
    def test_theta_range(self, theta):
        with pytest.raises(ValueError):
            PmlSetup(theta, ScalingFunction(1.0, 1.25), 1.5)

    def test_truncation_radius(self):
        with pytest.raises(ValueError):
            PmlSetup(0.5, ScalingFunction(1.0, 1.25), 1.0)


class TestTensor:
    def test_identity_at_R1(self, setup, homogeneous):
        c = pml_tensor(setup, homogeneous, np.array([[0.6, 0.8]]))
        assert np.allclose(c.A[0], np.eye(2), atol=1e-15)
        assert abs(c.c_inv2[0] - 1) < 1e-15

    def test_outer_values(self, setup, homogeneous):
        c = pml_tensor(setup, homogeneous, np.array([[1.0, 1.0]]))
        assert np.allclose([c.alpha[0], c.beta[0]], [1 + 1j, 1 + 1j], atol=1e-14)
        assert np.allclose(c.A[0], np.eye(2), atol=1e-14)
        assert abs(c.c_inv2[0] - 2j) < 1e-14

    def test_inner_homogeneous(self, setup, homogeneous):
        c = pml_tensor(setup, homogeneous, np.array([[0.1, -0.2]]))
        assert np.allclose(c.A[0], np.eye(2)) and c.c_inv2[0] == 1

    @pytest.mark.parametrize("d", [2, 3])
    def test_symmetric_and_orthogonal(self, d, homogeneous, rng):
        s = PmlSetup(np.pi / 3, ScalingFunction(1.0, 1.25), 1.5, d=d)
        x = rng.normal(size=(200, d))
        x *= (rng.uniform(1.0, 1.5, 200) / np.linalg.norm(x, axis=1))[:, None]
        c = pml_tensor(s, homogeneous, x)
        assert np.array_equal(c.A, np.swapaxes(c.A, -1, -2))
        assert np.allclose(c.H @ np.swapaxes(c.H, -1, -2), np.eye(d), atol=1e-14)

    def test_continuity_at_R1(self, setup, homogeneous):
        u = np.array([0.6, 0.8])
        c = pml_tensor(setup, homogeneous, np.stack([(1 - 1e-9) * u, (1 + 1e-9) * u]))
        assert np.abs(c.A[0] - c.A[1]).max() <= 1e-12
        assert abs(c.c_inv2[0] - c.c_inv2[1]) <= 1e-12


class TestRePart:
    @pytest.mark.parametrize("theta", [np.pi / 12, np.pi / 4, 5 * np.pi / 12])
    def test_outer_2d(self, theta):
        s = PmlSetup(theta, ScalingFunction(1.0, 1.25), 3.0)
        assert np.allclose(re_part_spectrum(s, np.array([1.5, 2.5])), 1.0, atol=1e-14)

    def test_outer_3d(self):
        s = PmlSetup(np.pi / 4, ScalingFunction(1.0, 1.25), 3.0, d=3)
        assert np.allclose(re_part_spectrum(s, np.array([2.0])), 1.0, atol=1e-14)

    @pytest.mark.parametrize("d", [2, 3])
    def test_closed_form_matches_complex_entries(self, d):
        s = PmlSetup(np.pi / 3, ScalingFunction(1.0, 1.25), 1.5, d=d)
        r = np.linspace(1.0, 1.5, 301)
        assert np.allclose(re_d_closed_form(s, r), s.diag_entries(r).real, atol=1e-13)

    def test_3d_entry_shares_2d_denominator(self):
        s2 = PmlSetup(np.pi / 3, ScalingFunction(1.0, 1.25), 1.5)
        s3 = PmlSetup(np.pi / 3, ScalingFunction(1.0, 1.25), 1.5, d=3)
        r = np.linspace(1.01, 1.5, 50)
        q = s2.radial(r)
        a, g = q["dft"], q["beta"].imag
        # first entries in 2D and 3D both carry 1 + (f_theta')^2 below
        assert np.allclose(re_d_closed_form(s2, r)[:, 0] * (1 + a * a), 1 + g * a)
        assert np.allclose(re_d_closed_form(s3, r)[:, 0] * (1 + a * a), 1 - g * g + 2 * g * a)

    def test_positive_on_scan(self):
        r = np.linspace(1.0, 2.5, 2000)
        for th in np.linspace(np.pi / 12, 5 * np.pi / 12, 11):
            s = PmlSetup(th, ScalingFunction(1.0, 1.25), 2.5)
            assert re_part_spectrum(s, r).min() > 0

    def test_inside_rejected(self, setup):
        with pytest.raises(ValueError):
            re_part_spectrum(setup, np.array([0.5]))


class TestConsistency:
    def test_plane_wave(self, homogeneous):
        s = PmlSetup(np.pi / 3, ScalingFunction(1.0, 1.25), 1.5)
        x = np.array([[1.1 * np.cos(0.4), 1.1 * np.sin(0.4)]])
        assert operator_consistency_residual(s, homogeneous, plane_wave_field(10.0, [0.3, 1.0]), x)[0] <= 1e-8

    def test_constant_field(self, setup, homogeneous):
        x = np.array([[1.2, 0.3], [0.0, 1.4]])
        assert np.abs(operator_consistency_residual(setup, homogeneous, constant_field, x)).max() <= 1e-14

    @pytest.mark.parametrize("d", [2, 3])
    def test_random(self, d, homogeneous, rng):
        s = PmlSetup(np.pi / 4, ScalingFunction(1.0, 1.25), 1.5, d=d)
        worst = 0.0
        for _ in range(100):
            z = rng.normal(size=d)
            x = rng.uniform(1.0, 1.5) * z / np.linalg.norm(z)
            res = operator_consistency_residual(s, homogeneous, plane_wave_field(rng.uniform(1, 50), rng.normal(size=d)), x[None])
            worst = max(worst, res[0])
        assert worst <= 1e-8

    def test_inside_rejected(self, setup, homogeneous):
        with pytest.raises(ValueError):
            operator_consistency_residual(setup, homogeneous, constant_field, np.array([[0.5, 0.0]]))


class TestAssumptions:
    def test_smooth_step_3d(self):
        rep = assumption_report(PmlSetup(np.pi / 4, ScalingFunction(1.0, 1.25), 1.5, d=3))
        assert rep["monotone"] and rep["monotone_violations"].size == 0

    def test_constructed_counterexample(self):
        # plateau of f/r then a steep rise: beta^2/alpha and alpha spread apart
        R1, R2 = 1.0, 2.0

        def profile(r):
            s1, d1, e1 = step((r - R1) / 0.05, 2)
            s2, d2, e2 = step((r - 1.6) / 0.05, 2)
            g = 0.02 * s1 + s2
            dg = 0.02 * d1 / 0.05 + d2 / 0.05
            d2g = 0.02 * e1 / 0.05**2 + e2 / 0.05**2
            return r * g, g + r * dg, 2 * dg + r * d2g

        s = PmlSetup(1.4, ScalingFunction(R1, R2, profile=profile), 2.0)
        rep = assumption_report(s)
        assert rep["max_spread_alpha_b2a"] > np.pi / 2
        assert rep["spread_radii"].size > 0

    def test_small_angle(self):
        rep = assumption_report(PmlSetup(1e-3, ScalingFunction(1.0, 1.25), 1.5, eps=1e-4))
        assert rep["max_imag_abs"] < 1e-2


class TestConstants:
    def test_scan(self, setup, bump):
        b = scan_constants(setup, bump)
        assert 0 < b.A_minus < 1 < b.A_plus
        assert b.C_cont == max(b.A_plus, b.c_inv2_max)
        assert b.qo_bound() == pytest.approx(2 * b.C_cont / b.A_minus)

    def test_non_radial_medium_seeded(self, setup):
        med = MediumSpec(0.5, c_scat=lambda x: 1.0 + 0.1 * np.tanh(x[..., 0]), name="tilted")
        assert scan_constants(setup, med, seed=3) == scan_constants(setup, med, seed=3)
