import numpy as np
import pytest

from pmlhp.fem import (
    PlaneWaveSource,
    PointEvaluator,
    WindowedWaveSource,
    assemble,
    estimate_eta,
    h1k_error,
    h1k_norm,
    l2_load,
    quasioptimality_report,
    solve,
    stability_checks,
)
from pmlhp.mesh import generate_mesh, refine, straight_mesh
from pmlhp.pml import PmlSetup, ScalingFunction, scan_constants
from pmlhp.space import build_space, evaluate_function


@pytest.fixture(scope="module")
def space():
    return build_space(generate_mesh(1.5, 0.25), 3)


def random_free(space, rng):
    c = np.zeros(space.n_dofs, complex)
    c[space.free] = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
    return c


class TestAssembly:
    def test_symmetry(self, space, setup, bump):
        system = assemble(space, setup, bump, 10.0, PlaneWaveSource(0.3, 0.5, 1.0))
        assert system.symmetry_defect() <= 1e-12

    def test_inner_block_real(self, space, setup, homogeneous):
        k = 7.0
        system = assemble(space, setup, homogeneous, k)
        S, M = space.gram()
        m = space.mesh
        inside_cells = np.linalg.norm(m.vertices[m.cells], axis=-1).max(axis=1) < 0.95
        outside = np.unique(space.cell_dofs[~inside_cells])
        keep = np.setdiff1d(np.arange(space.n_dofs), outside)
        pos = np.searchsorted(space.free, keep)
        assert np.all(space.free[pos] == keep) and keep.size > 20
        block = system.matrix[pos][:, pos].toarray()
        ref = (S - k * k * M)[keep][:, keep].toarray()
        assert np.abs(block.imag).max() <= 1e-12 * np.abs(block).max()
        assert np.allclose(block, ref, atol=1e-11 * np.abs(ref).max())

    def test_plane_wave_load_vanishes_inside(self, setup, homogeneous):
        h = 0.1
        s = build_space(generate_mesh(1.5, h), 2)
        system = assemble(s, setup, homogeneous, 10.0, PlaneWaveSource(0.0, 0.5, 1.0))
        m = s.mesh
        far = np.linalg.norm(m.vertices[m.cells], axis=-1).max(axis=1) < 0.5 - h
        dofs = np.unique(s.cell_dofs[far])
        touching = np.unique(s.cell_dofs[~far])
        dofs = np.setdiff1d(dofs, touching)
        load = system.full_vector(system.load)
        assert dofs.size > 0
        assert np.abs(load[dofs]).max() <= 1e-14 * np.abs(load).max()

    def test_windowed_source_support(self):
        src = WindowedWaveSource(0.5, 1.0)
        x = np.array([[0.4, 0.0], [0.75, 0.0], [1.1, 0.0]])
        assert np.allclose(src.data(10.0, x), [0, 1, 0])

    def test_invalid_k(self, space, setup, homogeneous):
        with pytest.raises(ValueError):
            assemble(space, setup, homogeneous, 0.0)

    def test_source_outside_R1_rejected(self, space, setup, homogeneous):
        with pytest.raises(ValueError):
            assemble(space, setup, homogeneous, 5.0, WindowedWaveSource(1.0, 1.4))


class TestSolve:
    def test_manufactured(self, space, setup, bump, rng):
        system = assemble(space, setup, bump, 10.0)
        c = random_free(space, rng)
        sol = solve(system, load=system.matrix @ c[system.free])
        assert np.abs(sol.coefficients - c).max() <= 1e-10 * np.abs(c).max()
        assert sol.residual <= 1e-10

    def test_zero_load(self, space, setup, homogeneous):
        system = assemble(space, setup, homogeneous, 5.0)
        assert not np.any(solve(system).coefficients)

    def test_adjoint_identity(self, space, setup, bump, rng):
        system = assemble(space, setup, bump, 10.0)
        for _ in range(3):
            f = rng.normal(size=space.n_dofs) + 1j * rng.normal(size=space.n_dofs)
            z = solve(system, adjoint=True, load=f).coefficients
            v = solve(system, load=np.conj(f)).coefficients
            assert np.linalg.norm(np.conj(z) - v) <= 1e-10 * np.linalg.norm(v)

    def test_adjoint_residual(self, space, setup, bump, rng):
        system = assemble(space, setup, bump, 10.0)
        sol = solve(system, adjoint=True, load=rng.normal(size=system.free.size) + 0j)
        assert sol.adjoint and sol.residual <= 1e-10


class TestNorms:
    def test_constant_on_patch(self):
        s = build_space(straight_mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]]), 2)
        c = np.zeros(s.n_dofs)
        c[:4] = 1.0
        assert h1k_norm(s, c, 3.0) == pytest.approx(3.0, rel=1e-12)

    def test_constant_on_disk(self):
        s = build_space(generate_mesh(1.5, 0.3), 2)
        c = np.zeros(s.n_dofs)
        c[: s.mesh.n_vertices] = 1.0
        assert h1k_norm(s, c, 2.0) == pytest.approx(2.0 * np.sqrt(np.pi * 2.25), rel=1e-8)

    def test_zero_and_scaling(self, space, rng):
        c = random_free(space, rng)
        assert h1k_norm(space, np.zeros(space.n_dofs), 4.0) == 0.0
        assert h1k_norm(space, 2 * c, 4.0) == pytest.approx(2 * h1k_norm(space, c, 4.0), rel=1e-13)

    def test_regions_split(self, space, rng):
        c = random_free(space, rng)
        tot = h1k_norm(space, c, 4.0)
        inner = h1k_norm(space, c, 4.0, "inner", R1=1.0)
        outer = h1k_norm(space, c, 4.0, "annulus", R1=1.0)
        assert inner**2 + outer**2 >= tot**2 * (1 - 1e-12)

    def test_point_evaluator_matches(self, space, rng):
        c = random_free(space, rng)
        pts = rng.uniform(-1, 1, size=(20, 2))
        v, g = PointEvaluator(space, pts)(c)
        v2, g2 = evaluate_function(space, c, pts, gradient=True)
        assert np.allclose(v, v2, atol=1e-12) and np.allclose(g, g2, atol=1e-10)


class TestStability:
    @pytest.mark.parametrize("theta", [np.pi / 12, np.pi / 4, 5 * np.pi / 12])
    def test_garding_and_continuity(self, theta, homogeneous):
        setup = PmlSetup(theta, ScalingFunction(1.0, 1.25), 1.5)
        s = build_space(generate_mesh(1.5, 0.3), 2)
        system = assemble(s, setup, homogeneous, 8.0)
        e1 = np.zeros(s.dim)
        e1[0] = 1.0
        rep = stability_checks(system, n_samples=1000, extra_vectors=e1)
        assert rep["garding_ok"] and rep["continuity_ok"]
        assert rep["garding_pass"] == rep["continuity_pass"] == 1001


class TestQuasiOptimality:
    def test_reference_in_space(self, space, setup, bump, rng):
        system = assemble(space, setup, bump, 6.0)
        c = random_free(space, rng)
        sol = solve(system, load=system.matrix @ c[system.free])

        def ref(x):
            return evaluate_function(space, c, x, gradient=True)

        rep = quasioptimality_report(space, system, ref, 6.0, solution=sol)
        assert rep["C_qo"] == pytest.approx(1.0, abs=1e-6)

    def test_reference_budget(self, space, setup, bump, rng):
        system = assemble(space, setup, bump, 6.0)
        c = random_free(space, rng)

        def ref(x):
            return evaluate_function(space, c, x, gradient=True)

        with pytest.raises(ValueError):
            quasioptimality_report(space, system, ref, 6.0, reference_error=1.0)

    @pytest.mark.parametrize("p", [2, 3, 4])
    def test_finite_at_fixed_ratio(self, p, setup, bump):
        from pmlhp.radial import modal_solution

        k = 10.0
        src = PlaneWaveSource(0.0, 0.5, 1.0)
        ref = modal_solution(k, setup, bump, src)
        s = build_space(generate_mesh(1.5, 0.5 * p / k), p)
        rep = quasioptimality_report(s, assemble(s, setup, bump, k, src), ref, k)
        assert np.isfinite(rep["C_qo"]) and rep["C_qo"] >= 1.0


class TestEta:
    def test_overkill_itself(self, setup, homogeneous):
        s = build_space(generate_mesh(1.5, 0.5), 2)
        assert estimate_eta(s, setup, homogeneous, 3.0, n_rhs=2, overkill=s) <= 1e-8

    def test_refinement_monotone(self, setup, homogeneous):
        m = generate_mesh(1.5, 0.5)
        ok = build_space(refine(refine(m)), 3)
        e_coarse = estimate_eta(build_space(m, 1), setup, homogeneous, 2.0, n_rhs=3, overkill=ok)
        e_fine = estimate_eta(build_space(refine(m), 1), setup, homogeneous, 2.0, n_rhs=3, overkill=ok)
        assert e_fine <= e_coarse

    def test_threshold_implication(self, setup, homogeneous):
        k = 2.0
        s = build_space(generate_mesh(1.5, 0.3), 3)
        eta = estimate_eta(s, setup, homogeneous, k, n_rhs=2)
        bounds = scan_constants(setup, homogeneous)
        src = WindowedWaveSource(0.2, 0.8)
        system = assemble(s, setup, homogeneous, k, src)
        fine = build_space(refine(s.mesh), 6)
        ref_sol = solve(assemble(fine, setup, homogeneous, k, src)).coefficients

        def ref(x):
            return evaluate_function(fine, ref_sol, x, gradient=True)

        rep = quasioptimality_report(s, system, ref, k)
        if k * eta <= bounds.schatz_threshold():
            assert rep["C_qo"] <= bounds.qo_bound()
        assert np.isfinite(eta) and eta > 0
