"""Galerkin assembly and solution of the PML Helmholtz problem.

The sesquilinear form is

``a(v, w) = int A grad v . conj(grad w) - k^2 c^{-2} v conj(w)``

and, with real basis functions, the matrix ``Mat[i, j] = a(phi_j, phi_i)`` is
complex symmetric.  For a coefficient vector ``w`` the form evaluates as
``a(v, w) = w^H Mat v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import refine
from .pml import CoefficientBounds, MediumSpec, PmlSetup, pml_tensor, scan_constants
from .smoothstep import plateau
from .space import HpSpace, TabulatedField, build_space, locate_points, project_h1k, reference_basis, sample_reference

__all__ = [
    "PlaneWaveSource",
    "WindowedWaveSource",
    "AssembledSystem",
    "GalerkinSolution",
    "assemble",
    "l2_load",
    "solve",
    "h1k_norm",
    "h1k_error",
    "stability_checks",
    "quasioptimality_report",
    "estimate_eta",
    "PointEvaluator",
    "tabulate",
    "SingularSystemError",
]


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when the factorization meets a (numerically) zero pivot."""


@dataclass(frozen=True)
class PlaneWaveSource:
    """Data turning plane-wave scattering into a problem with an outgoing solution.

    With ``u_I = exp(i k a.x)`` and a smooth cutoff ``chi`` (1 on
    ``r <= R_scat``, 0 on ``r >= R1``) the field ``u - (1 - chi) u_I`` solves
    ``(P - k^2) u~ = -(2 grad chi . grad u_I + u_I lap chi)``.  The
    right-hand side returned by :meth:`data` carries that minus sign.
    """

    angle: float
    R_scat: float
    R1: float

    @property
    def direction(self):
        return np.array([np.cos(self.angle), np.sin(self.angle)])

    @property
    def breaks(self):
        return (self.R_scat, self.R1)

    def chi(self, r, nderiv: int = 0):
        return plateau(r, self.R_scat, self.R1, nderiv)

    def incident(self, k, x):
        return np.exp(1j * k * (np.asarray(x) @ self.direction))

    def data(self, k, x):
        """Right-hand side ``g`` at points ``x`` of shape ``(..., 2)``."""
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        _, c1, c2 = self.chi(r, 2)
        safe = np.where(r > 0, r, 1.0)
        a_dot_rhat = np.where(r > 0, (x @ self.direction) / safe, 0.0)
        lap_chi = c2 + np.where(r > 0, c1 / safe, 0.0)
        u = self.incident(k, x)
        return -(u * (2j * k * c1 * a_dot_rhat + lap_chi))


@dataclass(frozen=True)
class WindowedWaveSource:
    """Smooth annular window times a sum of plane waves.

    ``g(x) = w(r) sum_j amp_j exp(i m_j k (cos t_j, sin t_j) . x)`` where
    ``w`` rises from 0 at ``R_in`` to 1 at the mid-radius and falls back to 0
    at ``R_out``.  An empty ``waves`` tuple gives the radial ring ``g = w(r)``.

    Parameters
    ----------
    waves : tuple of (amp, m, angle)
        Amplitude, frequency multiple of ``k`` and propagation angle.
    """

    R_in: float
    R_out: float
    waves: tuple = ()

    def __post_init__(self):
        if not (0 <= self.R_in < self.R_out):
            raise ValueError("need 0 <= R_in < R_out")

    @property
    def breaks(self):
        return (self.R_in, 0.5 * (self.R_in + self.R_out), self.R_out)

    def window(self, r):
        c = 0.5 * (self.R_in + self.R_out)
        return plateau(np.asarray(r, dtype=float) - c, 0.0, 0.5 * (self.R_out - self.R_in))

    def data(self, k, x):
        x = np.asarray(x, dtype=float)
        w = self.window(np.linalg.norm(x, axis=-1))
        if not self.waves:
            return w.astype(complex)
        tot = np.zeros(x.shape[:-1], dtype=complex)
        for amp, m, t in self.waves:
            tot += amp * np.exp(1j * m * k * (x[..., 0] * np.cos(t) + x[..., 1] * np.sin(t)))
        return w * tot


SourceLike = Union[Callable, PlaneWaveSource, WindowedWaveSource, None]


def _check_pivots(lu, k):
    piv = np.abs(lu.U.diagonal())
    if piv.size and piv.min() <= 1e-14 * piv.max():
        raise SingularSystemError(f"numerically singular matrix at k={k}: smallest pivot {piv.min():.3e}")


class _CondensedLU:
    """``Mat x = b`` and ``Mat^H x = b`` by static condensation of trailing diagonal blocks.

    Parameters
    ----------
    M : sparse matrix
        Square matrix whose rows/columns ``n_s:`` form a block-diagonal
        part with equal blocks (the cell bubbles).
    n_s : int
        Number of leading (skeleton) unknowns.
    nbub : int
        Size of each trailing diagonal block.
    """

    def __init__(self, M, n_s: int, nbub: int, k: float):
        M = sp.csr_matrix(M)
        n = M.shape[0]
        nb_tot = n - n_s
        self.n_s = n_s
        try:
            if nb_tot == 0:
                self.Binv = None
                self.lu = splu(M.tocsc())
                _check_pivots(self.lu, k)
                return
            A_BB = M[n_s:, n_s:].tocoo()
            A_SB = M[:n_s, n_s:].tocsr()
            A_BS = M[n_s:, :n_s].tocsr()
            if nb_tot % nbub or np.any(A_BB.row // nbub != A_BB.col // nbub):
                raise ValueError("trailing unknowns do not form equal diagonal blocks")
            nc = nb_tot // nbub
            blocks = np.zeros((nc, nbub, nbub), dtype=complex)
            np.add.at(blocks, (A_BB.row // nbub, A_BB.row % nbub, A_BB.col % nbub), A_BB.data)
            inv = np.linalg.inv(blocks)
            if not np.all(np.isfinite(inv)):
                raise np.linalg.LinAlgError("singular bubble block")
            base = (np.arange(nc) * nbub)[:, None, None]
            r = np.broadcast_to(base + np.arange(nbub)[None, :, None], inv.shape).ravel()
            c = np.broadcast_to(base + np.arange(nbub)[None, None, :], inv.shape).ravel()
            self.Binv = sp.csr_matrix((inv.ravel(), (r, c)), shape=(nb_tot, nb_tot))
            self.A_SB, self.A_BS = A_SB, A_BS
            S = (M[:n_s, :n_s] - A_SB @ (self.Binv @ A_BS)).tocsc()
            self.lu = splu(S)
        except (RuntimeError, np.linalg.LinAlgError) as exc:
            raise SingularSystemError(f"factorization failed at k={k}: {exc}") from exc
        _check_pivots(self.lu, k)

    def solve(self, b, trans: str = "N"):
        b = np.asarray(b, dtype=complex)
        if self.Binv is None:
            return self.lu.solve(b, trans=trans)
        bS, bB = b[: self.n_s], b[self.n_s:]
        if trans == "N":
            xS = self.lu.solve(bS - self.A_SB @ (self.Binv @ bB))
            xB = self.Binv @ (bB - self.A_BS @ xS)
        elif trans == "H":
            BH = self.Binv.conj().T
            xS = self.lu.solve(bS - self.A_BS.conj().T @ (BH @ bB), trans="H")
            xB = BH @ (bB - self.A_SB.conj().T @ xS)
        else:
            raise ValueError("trans must be 'N' or 'H'")
        return np.concatenate([xS, xB])


@dataclass
class AssembledSystem:
    """Galerkin matrix and load restricted to the unmasked dofs."""

    matrix: sp.csc_matrix
    load: np.ndarray
    k: float
    space: HpSpace
    setup: PmlSetup
    medium: MediumSpec
    free: np.ndarray
    _lu: object = field(default=None, repr=False)

    def factor(self):
        """Factorization of the free-dof matrix, with element bubbles condensed out.

        Bubble dofs couple only within their cell, so their block is
        inverted cell by cell and the Schur complement on the remaining
        (vertex and edge) dofs is factorized with SuperLU.
        """
        if self._lu is None:
            p = self.space.p
            nbub = (p - 1) * (p - 2) // 2
            n_s = self.free.size - self.space.mesh.n_cells * nbub
            self._lu = _CondensedLU(self.matrix, n_s, max(nbub, 1), self.k)
        return self._lu

    def symmetry_defect(self) -> float:
        """``max |M_ij - M_ji| / max |M_ij|``."""
        M = self.matrix
        diff = abs(M - M.T)
        return float(diff.max() / abs(M).max()) if M.nnz else 0.0

    def full_vector(self, x):
        out = np.zeros(self.space.n_dofs, dtype=complex)
        out[self.free] = x
        return out


@dataclass
class GalerkinSolution:
    coefficients: np.ndarray  # over all dofs, zero on masked ones
    k: float
    residual: float
    adjoint: bool = False


def _coefficient_tables(space, setup, medium, cells):
    x, W, phi, dphi = space.cell_tables(cells)
    coef = pml_tensor(setup, medium, x)
    return x, W, phi, dphi, coef


def l2_load(space: HpSpace, f) -> np.ndarray:
    """``int f phi_i`` over all dofs, for ``f`` a callable of points ``(n, 2)``."""
    out = np.zeros(space.n_dofs, dtype=complex)
    for cells in space.chunks():
        x, W, phi, _ = space.cell_tables(cells)
        fv = np.asarray(f(x.reshape(-1, 2))).reshape(x.shape[:2])
        np.add.at(out, space.cell_dofs[cells], np.einsum("cq,cq,cqb->cb", W, fv, phi))
    return out


def assemble(space: HpSpace, setup: PmlSetup, medium: MediumSpec, k: float, source: SourceLike = None) -> AssembledSystem:
    """Assemble ``Mat[i, j] = int A grad phi_j . grad phi_i - k^2 c^{-2} phi_j phi_i``.

    Parameters
    ----------
    source : callable, source object or None
        Volume data ``g`` (callable of points ``(n, 2)``, supported in
        ``B_{R1}``) giving the load ``int g c^{-2} phi_i``, or an object with
        a ``data(k, x)`` method such as :class:`PlaneWaveSource`, or ``None``
        for a zero load.

    Raises
    ------
    ValueError
        If ``k <= 0`` or the source does not vanish outside ``B_{R1}``.
    """
    if not k > 0:
        raise ValueError("k must be positive")
    if setup.d != 2:
        raise ValueError("finite elements are two-dimensional")
    rows, cols, vals = [], [], []
    load = np.zeros(space.n_dofs, dtype=complex)
    gmax = 0.0
    gout = 0.0
    for cells in space.chunks():
        x, W, phi, dphi, coef = _coefficient_tables(space, setup, medium, cells)
        AG = np.einsum("cqij,cqbj->cqbi", coef.A, dphi)
        Xw = dphi * W[..., None, None]
        nb = phi.shape[-1]
        K = np.matmul(
            Xw.transpose(0, 2, 1, 3).reshape(len(cells), nb, -1),
            AG.transpose(0, 1, 3, 2).reshape(len(cells), -1, nb),
        )
        Mw = (W * coef.c_inv2)[..., None] * phi
        K -= k * k * np.einsum("cqa,cqb->cab", phi, Mw)
        dofs = space.cell_dofs[cells]
        rows.append(np.repeat(dofs, nb, axis=1).ravel())
        cols.append(np.tile(dofs, (1, nb)).ravel())
        vals.append(K.ravel())
        if source is not None:
            pts = x.reshape(-1, 2)
            if hasattr(source, "data"):
                g = source.data(k, pts).reshape(x.shape[:2])
            else:
                g = np.asarray(source(pts), dtype=complex).reshape(x.shape[:2])
            r = np.linalg.norm(x, axis=-1)
            gmax = max(gmax, float(np.abs(g).max(initial=0.0)))
            outside = r > setup.R1 * (1 + 1e-12)
            if np.any(outside):
                gout = max(gout, float(np.abs(g[outside]).max()))
            np.add.at(load, dofs, np.einsum("cq,cq,cqb->cb", W * coef.c_inv2, g, phi))
    if gout > 1e-13 * max(gmax, 1e-300):
        raise ValueError("source must vanish outside B_{R1}")
    n = space.n_dofs
    M = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    free = space.free
    Mf = M[free][:, free].tocsc()
    return AssembledSystem(matrix=Mf, load=load[free], k=float(k), space=space, setup=setup, medium=medium, free=free)


def solve(system: AssembledSystem, adjoint: bool = False, load=None) -> GalerkinSolution:
    """Solve ``Mat x = b`` (primal) or ``Mat^H x = b`` (adjoint).

    Parameters
    ----------
    load : ndarray, optional
        Right-hand side over the free dofs (or over all dofs); defaults to
        ``system.load``.  For adjoint data ``f`` use ``l2_load(space, f)``,
        so that the solution ``z`` satisfies ``a(v, z) = int v conj(f)``.

    Raises
    ------
    SingularSystemError
        When the matrix is numerically singular (``k`` near a discrete
        resonance).
    """
    b = system.load if load is None else np.asarray(load, dtype=complex)
    if b.shape[0] == system.space.n_dofs and b.shape[0] != system.free.size:
        b = b[system.free]
    lu = system.factor()
    x = lu.solve(b, trans="H" if adjoint else "N")
    Mop = system.matrix.conj().T if adjoint else system.matrix
    res = np.linalg.norm(Mop @ x - b) / max(np.linalg.norm(b), 1e-300)
    if np.linalg.norm(b) == 0:
        res = 0.0
    return GalerkinSolution(coefficients=system.full_vector(x), k=system.k, residual=float(res), adjoint=adjoint)


def _region_mask(x, region, R1):
    if region in (None, "all"):
        return None
    r = np.linalg.norm(x, axis=-1)
    if R1 is None:
        raise ValueError("region selection needs R1")
    if region in ("inner", "r<=R1"):
        return r <= R1
    if region in ("annulus", "layer", "r>=R1"):
        return r >= R1
    raise ValueError(f"unknown region {region!r}")


def h1k_norm(space: HpSpace, coefficients, k: float, region: str = "all", R1: Optional[float] = None) -> float:
    """Weighted norm ``(|grad w|^2 + k^2 |w|^2)^{1/2}`` by quadrature.

    ``region`` is ``"all"``, ``"inner"`` (``r <= R1``) or ``"annulus"``
    (``r >= R1``, the layer); the restriction is applied at quadrature points.
    """
    return h1k_error(space, coefficients, None, k, region=region, R1=R1)


def h1k_error(space, coefficients, reference, k, region="all", R1=None) -> float:
    """``|| reference - w ||`` in the weighted norm (``reference`` may be ``None``)."""
    c = np.asarray(coefficients)
    tot = 0.0
    for cells in space.chunks():
        x, W, phi, dphi = space.cell_tables(cells)
        loc = c[space.cell_dofs[cells]]
        val = np.einsum("cqb,cb->cq", phi, loc)
        grad = np.einsum("cqbi,cb->cqi", dphi, loc)
        if reference is not None:
            rv, rg = sample_reference(reference, cells, x)
            val = rv - val
            grad = rg - grad
        dens = np.sum(np.abs(grad) ** 2, axis=-1) + k * k * np.abs(val) ** 2
        mask = _region_mask(x, region, R1)
        if mask is not None:
            dens = dens * mask
        tot += float(np.sum(W * dens))
    return float(np.sqrt(tot))


def stability_checks(
    system: AssembledSystem,
    setup: Optional[PmlSetup] = None,
    n_samples: int = 1000,
    bounds: Optional[CoefficientBounds] = None,
    seed: int = 0,
    extra_vectors=None,
) -> dict:
    """Matrix-level Garding and continuity checks.

    For random complex vectors ``v, w`` over the free dofs this verifies

    * ``Re a(w, w) >= A_- ||w||^2 - (A_- + c2) k^2 ||w||_{L2}^2`` and
    * ``|a(v, w)| <= C_cont ||v|| ||w||``, ``C_cont = max(A_+, c2)``,

    with ``||.||`` the weighted ``H^1`` norm from the real stiffness and mass
    matrices and ``c2`` the scanned bound on ``|c^{-2}|``.

    Returns
    -------
    dict
        ``garding_ok``, ``continuity_ok``, pass counts, worst margins and the
        constants used.
    """
    setup = system.setup if setup is None else setup
    if bounds is None:
        bounds = scan_constants(setup, system.medium)
    k = system.k
    S, M = system.space.gram()
    f = system.free
    S, M = S[f][:, f], M[f][:, f]
    rng = np.random.default_rng(seed)
    n = f.size
    Wv = rng.normal(size=(n, n_samples)) + 1j * rng.normal(size=(n, n_samples))
    Vv = rng.normal(size=(n, n_samples)) + 1j * rng.normal(size=(n, n_samples))
    if extra_vectors is not None:
        E = np.asarray(extra_vectors, dtype=complex).reshape(n, -1)
        Wv = np.concatenate([Wv, E], axis=1)
        Vv = np.concatenate([Vv, E], axis=1)
    A = system.matrix
    AW = A @ Wv
    AV = A @ Vv
    l2w = np.real(np.sum(Wv.conj() * (M @ Wv), axis=0))
    nw = np.real(np.sum(Wv.conj() * (S @ Wv), axis=0)) + k * k * l2w
    nv = np.real(np.sum(Vv.conj() * (S @ Vv), axis=0)) + k * k * np.real(np.sum(Vv.conj() * (M @ Vv), axis=0))
    re_aww = np.real(np.sum(Wv.conj() * AW, axis=0))
    lower = bounds.A_minus * nw - (bounds.A_minus + bounds.c_inv2_max) * k * k * l2w
    slack = 1e-12 * np.abs(nw) * max(1.0, bounds.C_cont)
    g_ok = re_aww >= lower - slack
    a_vw = np.abs(np.sum(Wv.conj() * AV, axis=0))
    upper = bounds.C_cont * np.sqrt(nv * nw)
    c_ok = a_vw <= upper * (1 + 1e-12)
    return {
        "garding_ok": bool(g_ok.all()),
        "continuity_ok": bool(c_ok.all()),
        "garding_pass": int(g_ok.sum()),
        "continuity_pass": int(c_ok.sum()),
        "n_samples": int(g_ok.size),
        "garding_min_margin": float(np.min((re_aww - lower) / nw)),
        "continuity_max_ratio": float(np.max(a_vw / upper)),
        "constants": bounds.as_dict(),
        "seed": seed,
    }


def quasioptimality_report(space: HpSpace, system: AssembledSystem, reference, k: float, solution=None, reference_error: Optional[float] = None, exact_tol: float = 1e-10) -> dict:
    """Galerkin error, best-approximation error and their ratio ``C_qo``.

    Parameters
    ----------
    reference : callable
        ``x -> (values, gradients)`` of the exact (or overkill) solution.
    solution : GalerkinSolution, optional
        Computed if omitted.
    reference_error : float, optional
        Estimated weighted-norm error of the reference; it must stay below 1%
        of the best-approximation error.
    exact_tol : float
        Errors below ``exact_tol`` times the reference norm count as zero, so a
        reference lying in the space gives ``C_qo = 1`` instead of a ratio of
        roundoff values.

    Returns
    -------
    dict with ``err_galerkin``, ``err_best``, ``C_qo``, ``ref_norm``,
    ``rel_err`` (Galerkin error over the reference norm).
    """
    if solution is None:
        solution = solve(system)
    err_g = h1k_error(space, solution.coefficients, reference, k)
    best = project_h1k(space, reference, k)
    err_b = h1k_error(space, best, reference, k)
    if reference_error is not None and reference_error > 0.01 * err_b:
        raise ValueError(
            f"reference error {reference_error:.2e} exceeds 1% of the best-approximation error {err_b:.2e}"
        )
    ref_norm = h1k_error(space, np.zeros(space.n_dofs), reference, k)
    floor = exact_tol * ref_norm
    if err_b <= floor:
        c_qo = 1.0 if err_g <= floor else np.inf
    else:
        c_qo = err_g / err_b
    return {
        "err_galerkin": err_g,
        "err_best": err_b,
        "C_qo": c_qo,
        "ref_norm": ref_norm,
        "rel_err": err_g / ref_norm if ref_norm > 0 else np.nan,
    }


class PointEvaluator:
    """Repeated evaluation of finite element functions at fixed points."""

    def __init__(self, space: HpSpace, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cells, ref = locate_points(space, pts)
        if np.any(cells < 0):
            raise ValueError(f"{int((cells < 0).sum())} points lie outside the mesh")
        vals, grads = reference_basis(space.p, ref)
        _, J = space.mesh.map_points(ref[:, None, :], cells)
        Jinv = np.linalg.inv(J[:, 0])
        s = space.cell_signs[cells]
        self.dofs = space.cell_dofs[cells]
        self.vals = vals * s
        self.grads = np.einsum("nki,nbk->nbi", Jinv, grads) * s[..., None]

    def __call__(self, coeffs):
        loc = np.asarray(coeffs)[self.dofs]
        return np.sum(self.vals * loc, axis=1), np.einsum("nbi,nb->ni", self.grads, loc)


def tabulate(target: HpSpace, source: HpSpace, coeffs) -> TabulatedField:
    """Values and gradients of a function of ``source`` at the quadrature points of ``target``."""
    c = np.asarray(coeffs)
    if target is source:
        vals, grads = [], []
        for cells in target.chunks():
            _, _, phi, dphi = target.cell_tables(cells)
            loc = c[target.cell_dofs[cells]]
            vals.append(np.einsum("cqb,cb->cq", phi, loc))
            grads.append(np.einsum("cqbi,cb->cqi", dphi, loc))
        return TabulatedField(np.concatenate(vals), np.concatenate(grads))
    x, _ = target.mesh.map_points(target.quad_pts)
    v, g = PointEvaluator(source, x.reshape(-1, 2))(c)
    return TabulatedField(v.reshape(x.shape[:2]), g.reshape(x.shape))


def estimate_eta(
    space: HpSpace,
    setup: PmlSetup,
    medium: MediumSpec,
    k: float,
    n_rhs: int = 4,
    seed: int = 0,
    overkill: Optional[HpSpace] = None,
    return_details: bool = False,
):
    """Lower estimate of ``eta(V_N) = sup_f min_w ||S* f - w|| / ||f||``.

    Random ``f`` (unit ``L^2`` norm, random nodal values of a degree-1
    function on the overkill mesh) are mapped to ``S* f`` by an adjoint solve
    on the overkill space (degree ``p + 3``, two red refinements by default),
    then projected onto ``space``; the largest ratio is returned.
    """
    if n_rhs < 1:
        raise ValueError("n_rhs must be at least 1")
    if overkill is None:
        overkill = build_space(refine(refine(space.mesh)), min(space.p + 3, 12))
    sysf = assemble(overkill, setup, medium, k)
    rng = np.random.default_rng(seed)
    P1 = build_space(overkill.mesh, 1)
    _, M1 = P1.gram()
    ratios = []
    for _ in range(n_rhs):
        c1 = rng.normal(size=P1.n_dofs) + 1j * rng.normal(size=P1.n_dofs)
        c1 /= np.sqrt(np.real(np.vdot(c1, M1 @ c1)))
        F = _l2_load_p1(overkill, P1, c1)
        z = solve(sysf, adjoint=True, load=F).coefficients
        zt = tabulate(space, overkill, z)
        w = project_h1k(space, zt, k)
        ratios.append(h1k_error(space, w, zt, k))
    best = float(max(ratios))
    if return_details:
        return best, {"ratios": ratios, "overkill_dofs": overkill.dim}
    return best


def _l2_load_p1(space, P1, c1):
    """``int f phi_i`` with ``f`` a degree-1 function on the same mesh."""
    out = np.zeros(space.n_dofs, dtype=complex)
    vals1, _ = reference_basis(1, space.quad_pts)
    for cells in space.chunks():
        _, W, phi, _ = space.cell_tables(cells)
        fq = np.einsum("qb,cb->cq", vals1, c1[P1.cell_dofs[cells]])
        np.add.at(out, space.cell_dofs[cells], np.einsum("cq,cq,cqb->cb", W, fq, phi))
    return out
