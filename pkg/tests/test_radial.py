import numpy as np
import pytest

from pmlhp.fem import PlaneWaveSource, WindowedWaveSource
from pmlhp.pml import MediumSpec, PmlSetup, ScalingFunction
from pmlhp.radial import (
    RadialConvergenceError,
    RadialGrid,
    build_grid,
    gll_nodes,
    layer_mismatch,
    modal_solution,
    pml_truncation_error,
    radial_mode_pml_solve,
    source_modes,
)
from pmlhp.oracles import dtn_coefficients


def self_convergence_order(setup, medium, source, k, n=1, N=4, levels=5):
    base = build_grid(0.0, setup.R_tr, lambda r: k * np.ones_like(r),
                      [setup.R1, setup.scaling.R2, *medium.breaks, *source.breaks], N=N, grade=1, kl_max=2.0)
    pts = np.linspace(0.05, setup.R_tr - 0.05, 57)
    g, vals, hs = base, [], []
    for _ in range(levels):
        vals.append(radial_mode_pml_solve(n, k, setup, medium, g_n=source.window, grid=g, tol=None)(pts))
        hs.append(g.h.max())
        g = g.refined()
    diffs = [np.abs(vals[i + 1] - vals[i]).max() for i in range(levels - 1)]
    return np.polyfit(np.log(hs[:-1]), np.log(diffs), 1)[0]


class TestGrid:
    def test_gll_nodes(self):
        x = gll_nodes(8)
        assert x.size == 9 and x[0] == -1 and x[-1] == 1
        assert np.allclose(x, -x[::-1], atol=1e-15)
        dP = np.polynomial.legendre.Legendre.basis(8).deriv()
        assert np.abs(dP(x[1:-1])).max() <= 1e-12

    def test_refined_halves(self):
        g = RadialGrid([0.0, 0.5, 1.5], 4)
        assert np.allclose(g.refined().edges, [0, 0.25, 0.5, 1.0, 1.5])

    def test_breaks_are_edges(self, setup, bump):
        g = build_grid(0.0, 1.5, lambda r: 10 * np.ones_like(r), [0.25, 0.5, 1.0, 1.25])
        for b in (0.25, 0.5, 1.0, 1.25, 1.5):
            assert np.min(np.abs(g.edges - b)) < 1e-14

    def test_bad_interval(self):
        with pytest.raises(ValueError):
            build_grid(1.0, 0.5, lambda r: r)


class TestRadialSolve:
    def test_zero_source(self, setup, bump):
        sol = radial_mode_pml_solve(2, 10.0, setup, bump)
        assert not np.any(sol.values)

    @pytest.mark.parametrize("n", [0, 1, 5])
    def test_self_convergence_order(self, setup, bump, n):
        order = self_convergence_order(setup, bump, WindowedWaveSource(0.5, 1.0), 5.0, n=n)
        assert order >= 4.5

    def test_dirichlet_at_truncation(self, setup, bump):
        src = WindowedWaveSource(0.5, 1.0)
        sol = radial_mode_pml_solve(3, 8.0, setup, bump, g_n=src.window, breaks=src.breaks)
        assert sol.at_outer()[0] == 0

    def test_degree_stability(self, setup, bump):
        src = WindowedWaveSource(0.5, 1.0)
        a = radial_mode_pml_solve(1, 10.0, setup, bump, g_n=src.window, breaks=src.breaks, N=16)
        b = radial_mode_pml_solve(1, 10.0, setup, bump, g_n=src.window, breaks=src.breaks, N=22)
        r = np.linspace(0.01, 1.5, 101)
        assert np.abs(a(r) - b(r)).max() <= 1e-8 * np.abs(b(r)).max()

    def test_non_radial_medium(self, setup):
        med = MediumSpec(R_scat=0.5, c_scat=lambda x: 1 + 0.1 * x[..., 0])
        with pytest.raises(ValueError):
            radial_mode_pml_solve(0, 5.0, setup, med)
        with pytest.raises(ValueError):
            modal_solution(5.0, setup, med, PlaneWaveSource(0.0, 0.5, 1.0))

    def test_unresolved_grid_raises(self, setup, homogeneous):
        src = WindowedWaveSource(0.5, 1.0)
        coarse = RadialGrid([0.0, 0.5, 1.0, 1.25, 1.5], 3)
        with pytest.raises(RadialConvergenceError):
            radial_mode_pml_solve(0, 40.0, setup, homogeneous, g_n=src.window, grid=coarse)


class TestModalSolution:
    def test_plane_wave_without_scatterer(self, setup, homogeneous):
        k = 10.0
        src = PlaneWaveSource(0.3, 0.5, 1.0)
        v = modal_solution(k, setup, homogeneous, src)
        rng = np.random.default_rng(7)
        pts = rng.uniform(-1.0, 1.0, size=(200, 2))
        pts = pts[np.linalg.norm(pts, axis=1) < 1.45]
        exact = src.chi(np.linalg.norm(pts, axis=1)) * src.incident(k, pts)
        assert np.abs(v.evaluate(pts) - exact).max() <= 1e-8

    def test_source_modes_sampling_invariance(self):
        src = WindowedWaveSource(0.5, 1.0, ((1, 1, 0.3), (1, 3, 2.0)))
        r = np.linspace(0.5, 1.0, 13)
        n1, G1 = source_modes(lambda x: src.data(10.0, x), r)
        n2, G2 = source_modes(lambda x: src.data(10.0, x), r, n_angles=4 * 64)
        common = np.intersect1d(n1, n2)
        i1, i2 = np.searchsorted(n1, common), np.searchsorted(n2, common)
        assert np.abs(G1[:, i1] - G2[:, i2]).max() <= 1e-13 * np.abs(G2).max()

    def test_mode_count_stability(self, setup, bump):
        src = PlaneWaveSource(0.0, 0.5, 1.0)
        a = modal_solution(10.0, setup, bump, src, N=16)
        b = modal_solution(10.0, setup, bump, src, N=20)
        pts = np.array([[0.2, 0.1], [0.7, -0.3], [-0.9, 0.2], [1.2, 0.6]])
        assert np.abs(a.evaluate(pts) - b.evaluate(pts)).max() <= 1e-8
        assert a.tail <= 1e-12

    def test_exact_kind_matches_dtn(self, setup, homogeneous):
        k = 6.0
        src = WindowedWaveSource(0.5, 0.9, ((1.0, 1.0, 0.3),))
        u = modal_solution(k, setup, homogeneous, src, kind="exact")
        T = dtn_coefficients(u.n_modes, k, 1.0)
        for n in (0, 1, -1):
            V, dV = u.modes[n].at_outer()
            assert abs(dV - T[abs(n)] * V) <= 1e-8 * max(1.0, abs(V))

    def test_h1k_norm_breakpoint(self, setup, bump):
        v = modal_solution(5.0, setup, bump, PlaneWaveSource(0.0, 0.5, 1.0))
        assert v.h1k_norm(r_max=1.0) <= v.h1k_norm()
        with pytest.raises(ValueError):
            v.h1k_norm(r_max=0.777)

    def test_bad_kind(self, setup, bump):
        with pytest.raises(ValueError):
            modal_solution(5.0, setup, bump, PlaneWaveSource(0.0, 0.5, 1.0), kind="other")


class TestTruncationError:
    @pytest.mark.parametrize("theta", [np.pi / 12, np.pi / 6])
    def test_routes_agree(self, theta, bump):
        setup = PmlSetup(theta, ScalingFunction(1.0, 1.25), 1.5)
        src = PlaneWaveSource(0.0, 0.5, 1.0)
        a = pml_truncation_error(5.0, setup, bump, src, method="analytic")
        d = pml_truncation_error(5.0, setup, bump, src, method="direct")
        assert a["err"] > 1e-6
        assert a["err"] == pytest.approx(d["err"], rel=1e-6)

    def test_zero_without_scatterer(self, setup, homogeneous):
        rec = pml_truncation_error(10.0, setup, homogeneous, PlaneWaveSource(0.0, 0.5, 1.0))
        assert rec["ratio"] <= 1e-14

    def test_decreases_with_k(self, setup, bump):
        src = PlaneWaveSource(0.0, 0.5, 1.0)
        ratios = [pml_truncation_error(k, setup, bump, src)["ratio"] for k in (10.0, 20.0, 40.0)]
        assert ratios[0] > ratios[1] > ratios[2] > 0

    def test_mismatch_small_for_wide_layer(self):
        narrow = PmlSetup(np.pi / 4, ScalingFunction(1.0, 1.25), 1.5)
        wide = PmlSetup(np.pi / 4, ScalingFunction(1.0, 1.25), 2.0)
        a = np.abs(layer_mismatch(10, 10.0, narrow))
        b = np.abs(layer_mismatch(10, 10.0, wide))
        assert np.all(b < a)

    def test_bad_method(self, setup, bump):
        with pytest.raises(ValueError):
            pml_truncation_error(5.0, setup, bump, PlaneWaveSource(0.0, 0.5, 1.0), method="other")


@pytest.mark.slow
class TestFemCrossCheck:
    def test_graded_fem_matches_modal(self, setup, homogeneous):
        from pmlhp.fem import assemble, solve
        from pmlhp.mesh import generate_mesh
        from pmlhp.space import build_space, evaluate_function

        k = 10.0
        src = WindowedWaveSource(0.5, 1.0)
        space = build_space(generate_mesh(1.5, 0.1, grading=(1.0, 1.25, 0.02)), 8)
        uh = solve(assemble(space, setup, homogeneous, k, src)).coefficients
        V = radial_mode_pml_solve(0, k, setup, homogeneous, g_n=src.window, breaks=src.breaks)
        phi = np.linspace(0, 2 * np.pi, 9)[:-1]
        pts = 0.5 * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        assert np.abs(evaluate_function(space, uh, pts) - V(0.5)).max() <= 1e-6
