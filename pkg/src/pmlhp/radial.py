"""Angular-mode solves for radially symmetric configurations.

Writing ``v = V(r) exp(i n phi)`` reduces the variational problem to the
radial two-point problem

``-(p V')' + w V = s``,  ``p = r D11``,  ``w = D22 n^2 / r - k^2 r c^{-2}``,
``s = r c^{-2} g_n``

with ``D11 = beta/alpha``, ``D22 = alpha/beta`` in the layer (both 1 inside
``B_{R1}``).  It is discretized in its weak form by a chain of high-degree
Lagrange elements on Gauss-Lobatto-Legendre nodes; flux continuity is then
natural and regularity at the origin is the condition ``V(0) = 0`` for
``n != 0``.  Elements are graded geometrically toward every radius where a
coefficient or the source stops being analytic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.special import hankel1, hankel1e, jv, jve

from .oracles import dtn_coefficients
from .pml import MediumSpec, PmlSetup

__all__ = [
    "RadialConvergenceError",
    "gll_nodes",
    "RadialGrid",
    "build_grid",
    "RadialProblem",
    "RadialSolution",
    "ModalExpansion",
    "source_modes",
    "radial_mode_pml_solve",
    "modal_solution",
    "layer_mismatch",
    "pml_truncation_error",
    "modal_error_rows",
]


class RadialConvergenceError(RuntimeError):
    """A radial solve or a modal sum failed its self-convergence check."""


def gll_nodes(N: int):
    """Gauss-Lobatto-Legendre nodes on ``[-1, 1]`` (ascending), degree ``N >= 1``."""
    if N < 1:
        raise ValueError("need N >= 1")
    inner = np.polynomial.legendre.Legendre.basis(N).deriv().roots() if N > 1 else np.array([])
    return np.concatenate([[-1.0], np.sort(inner.real), [1.0]])


def _bary_weights(x):
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, 1.0)
    w = 1.0 / np.prod(d, axis=1)
    return w / np.abs(w).max()


def _interp_matrix(nodes, weights, t):
    """Barycentric interpolation matrix from ``nodes`` to points ``t``."""
    t = np.asarray(t, dtype=float)
    diff = t[:, None] - nodes[None, :]
    hit = diff == 0
    diff[hit] = 1.0
    L = weights / diff
    L /= L.sum(axis=1, keepdims=True)
    rows = np.any(hit, axis=1)
    if np.any(rows):
        L[rows] = hit[rows].astype(float)
    return L


def _diff_matrix(x, w):
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, 1.0)
    D = (w[None, :] / w[:, None]) / d
    np.fill_diagonal(D, 0.0)
    D[np.diag_indices_from(D)] = -D.sum(axis=1)
    return D


class RadialGrid:
    """Chain of degree-``N`` Lagrange elements (GLL nodes) with breakpoints ``edges``.

    Attributes
    ----------
    nodes : ndarray
        Global nodes; element ``e`` owns ``nodes[e*N : e*N + N + 1]``.
    quad_r, quad_w : ndarray, shape (n_elements, Q)
        Gauss-Legendre points and weights, ``Q = N + 8`` per element.
    """

    def __init__(self, edges: Sequence[float], N: int):
        edges = np.asarray(edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing with at least two entries")
        if edges[0] < 0:
            raise ValueError("radii must be nonnegative")
        self.edges = edges
        self.N = int(N)
        self.xi = gll_nodes(self.N)
        self.bw = _bary_weights(self.xi)
        self.Dref = _diff_matrix(self.xi, self.bw)
        a, b = edges[:-1, None], edges[1:, None]
        self.h = (b - a).ravel()
        self.nodes = np.concatenate([(0.5 * (a + b) + 0.5 * (b - a) * self.xi)[:, :-1].ravel(), edges[-1:]])
        xq, wq = np.polynomial.legendre.leggauss(self.N + 8)
        self.quad_r = 0.5 * (a + b) + 0.5 * (b - a) * xq
        self.quad_w = 0.5 * (b - a) * wq
        self.Bq = _interp_matrix(self.xi, self.bw, xq)
        self.dBq = self.Bq @ self.Dref

    @property
    def n_elements(self) -> int:
        return self.edges.size - 1

    @property
    def inner(self) -> float:
        return float(self.edges[0])

    @property
    def outer(self) -> float:
        return float(self.edges[-1])

    @property
    def size(self) -> int:
        return self.nodes.size

    def element_dofs(self, e):
        return e * self.N + np.arange(self.N + 1)

    def refined(self) -> "RadialGrid":
        """Every element split at its midpoint (same degree)."""
        mids = 0.5 * (self.edges[:-1] + self.edges[1:])
        return RadialGrid(np.sort(np.concatenate([self.edges, mids])), self.N)

    def with_degree(self, N: int) -> "RadialGrid":
        return RadialGrid(self.edges, N)

    def locate(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < self.inner - 1e-12) or np.any(r > self.outer + 1e-12):
            raise ValueError("radius outside the grid")
        return np.clip(np.searchsorted(self.edges, r, side="right") - 1, 0, self.n_elements - 1)

    def interp(self, e: int, r, deriv: bool = False):
        """Interpolation (or differentiation) matrix of element ``e`` at radii ``r``."""
        xi = 2.0 * (np.asarray(r, dtype=float) - self.edges[e]) / self.h[e] - 1.0
        L = _interp_matrix(self.xi, self.bw, xi)
        if deriv:
            return L, (L @ self.Dref) * (2.0 / self.h[e])
        return L

    def gauss_points(self, m: Optional[int] = None):
        """Gauss-Legendre radii and weights, ``m`` per element (default ``2N``)."""
        m = m or 2 * self.N
        x, w = np.polynomial.legendre.leggauss(m)
        a, b = self.edges[:-1, None], self.edges[1:, None]
        return (0.5 * (a + b) + 0.5 * (b - a) * x).ravel(), (0.5 * (b - a) * w).ravel()


def build_grid(
    inner: float,
    outer: float,
    k_eff: Callable,
    breaks: Sequence[float] = (),
    N: int = 16,
    grade: int = 5,
    kl_max: float = 6.0,
) -> RadialGrid:
    """Element layout for ``[inner, outer]``.

    Each interval between consecutive ``breaks`` is cut geometrically
    (ratio 2, ``grade`` levels) toward its non-analytic ends; then every piece
    is split until ``int k_eff(r) dr <= kl_max`` over it.
    """
    if not outer > inner >= 0:
        raise ValueError("need 0 <= inner < outer")
    tol = 1e-12 * outer
    brk = sorted({float(b) for b in breaks if inner - tol <= b <= outer + tol})
    singular = [b for b in brk if b > 0]
    pts = sorted({inner, outer, *[b for b in brk if inner + tol < b < outer - tol]})
    edges = []
    for a, b in zip(pts[:-1], pts[1:]):
        L = b - a
        cuts = {a, b}
        left = any(abs(a - s) <= tol for s in singular)
        right = any(abs(b - s) <= tol for s in singular)
        for j in range(2, grade + 1):
            if left:
                cuts.add(a + L * 2.0**-j)
            if right:
                cuts.add(b - L * 2.0**-j)
        if left and right:
            cuts.add(a + 0.5 * L)
        cuts = sorted(cuts)
        for c0, c1 in zip(cuts[:-1], cuts[1:]):
            s = np.linspace(c0, c1, 65)
            kl = float(np.trapezoid(k_eff(s), s))
            parts = max(1, int(np.ceil(kl / kl_max)))
            edges.extend(np.linspace(c0, c1, parts + 1)[:-1])
    edges.append(outer)
    return RadialGrid(np.array(edges), N)


@dataclass
class RadialSolution:
    """Nodal values of one radial mode; calling it interpolates ``V`` (and ``V'``)."""

    grid: RadialGrid
    n: int
    values: np.ndarray

    def __call__(self, r, deriv: bool = False):
        r = np.asarray(r, dtype=float)
        flat = r.ravel()
        idx = self.grid.locate(flat)
        V = np.empty(flat.shape, dtype=complex)
        dV = np.empty(flat.shape, dtype=complex)
        for e in np.unique(idx):
            sel = idx == e
            v = self.values[self.grid.element_dofs(e)]
            L, dL = self.grid.interp(e, flat[sel], deriv=True)
            V[sel] = L @ v
            dV[sel] = dL @ v
        if deriv:
            return V.reshape(r.shape), dV.reshape(r.shape)
        return V.reshape(r.shape)

    def at_outer(self):
        """``V`` and ``V'`` at the outer end of the grid."""
        g = self.grid
        v = self.values[g.element_dofs(g.n_elements - 1)]
        return complex(v[-1]), complex((g.Dref @ v)[-1] * 2.0 / g.h[-1])


class RadialProblem:
    """Galerkin discretization of the radial weak form

    ``int p V' W' + w V W dr - p(R) (V'(R) W(R)) = int s W dr``

    on a fixed grid (real Lagrange basis, so the matrix is complex symmetric).

    Parameters
    ----------
    k : float
        Wavenumber.
    setup : PmlSetup or None
        Layer description; ``None`` gives unit layer coefficients.
    medium : MediumSpec
        Must be radially symmetric.
    grid : RadialGrid
        Discretization.  An inner end ``> 0`` carries ``V = 0``; at ``r = 0``
        regularity means ``V(0) = 0`` for ``n != 0`` and a natural condition
        for ``n = 0``.
    """

    def __init__(self, k: float, setup: Optional[PmlSetup], medium: MediumSpec, grid: RadialGrid):
        if not medium.is_radial:
            raise ValueError("radial solves need a radially symmetric medium")
        if not k > 0:
            raise ValueError("k must be positive")
        self.k = float(k)
        self.setup = setup
        self.medium = medium
        self.grid = grid
        self.p_out = self._coefficients(np.array([grid.outer]))[0][0]
        self.p, self.q, self.c2 = self._coefficients(grid.quad_r)

    def _coefficients(self, r):
        c2 = self.medium.c_inv2_radial(r).astype(complex)
        if self.setup is not None:
            rad = self.setup.radial(r)
            al, be = rad["alpha"], rad["beta"]
            D11, D22 = be / al, al / be
            c2 = c2 * al * be
        else:
            D11 = D22 = np.ones_like(r, dtype=complex)
        # p = r D11; the angular term is n^2 q with q = D22 / r
        return r * D11, D22 / r, c2

    def _element_matrices(self, n: int):
        g = self.grid
        wr = g.quad_w
        stiff = np.einsum("eq,qa,qb->eab", wr * self.p * (2.0 / g.h[:, None]) ** 2, g.dBq, g.dBq)
        w = n * n * self.q - self.k**2 * g.quad_r * self.c2
        mass = np.einsum("eq,qa,qb->eab", wr * w, g.Bq, g.Bq)
        return stiff + mass

    def assemble(self, n: int):
        g = self.grid
        Ke = self._element_matrices(n)
        dofs = np.stack([g.element_dofs(e) for e in range(g.n_elements)])
        nb = g.N + 1
        rows = np.repeat(dofs, nb, axis=1).ravel()
        cols = np.tile(dofs, (1, nb)).ravel()
        return sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(g.size, g.size))

    def load(self, g_quad):
        """``int r c^{-2} g_n phi_i dr`` from source values at the quadrature points."""
        g = self.grid
        f = np.einsum("eq,qa->ea", g.quad_w * g.quad_r * self.c2 * np.asarray(g_quad, dtype=complex).reshape(g.quad_r.shape), g.Bq)
        out = np.zeros(g.size, dtype=complex)
        np.add.at(out, np.stack([g.element_dofs(e) for e in range(g.n_elements)]), f)
        return out

    def solve(self, n: int, g_quad=None, outer="dirichlet", outer_value: complex = 0.0) -> RadialSolution:
        """Solve mode ``n``; ``g_quad`` holds ``g_n`` at ``grid.quad_r`` (``None`` for zero).

        The outer condition is ``V(R) = outer_value`` (``"dirichlet"``) or
        ``V'(R) - T V(R) = outer_value`` for ``outer = ("robin", T)``.
        """
        g = self.grid
        A = self.assemble(n).tolil()
        b = self.load(g_quad) if g_quad is not None else np.zeros(g.size, dtype=complex)
        fixed = {}
        if g.inner > 0 or n != 0:
            fixed[0] = 0.0
        last = g.size - 1
        if outer == "dirichlet":
            fixed[last] = complex(outer_value)
        else:
            _, T = outer
            A[last, last] = A[last, last] - self.p_out * T
            b[last] += self.p_out * outer_value
        A = A.tocsr()
        V = np.zeros(g.size, dtype=complex)
        idx = np.array(sorted(fixed), dtype=int)
        if idx.size:
            V[idx] = [fixed[i] for i in idx]
            b = b - A[:, idx] @ V[idx]
        free = np.setdiff1d(np.arange(g.size), idx)
        try:
            V[free] = splu(A[free][:, free].tocsc()).solve(b[free])
        except RuntimeError as exc:
            raise RadialConvergenceError(f"singular radial system for mode {n} at k={self.k}") from exc
        if not np.all(np.isfinite(V)):
            raise RadialConvergenceError(f"non-finite radial solution for mode {n} at k={self.k}")
        return RadialSolution(g, n, V)


def _source_callable(source, k):
    if source is None:
        return None
    if hasattr(source, "data"):
        return lambda x: source.data(k, x)
    return source


def source_modes(g: Callable, radii, tol: float = 1e-14, n_angles: int = 64, max_angles: int = 1 << 14):
    """Angular Fourier modes ``g_n(r)`` of ``g`` at the given radii.

    ``g = sum_n g_n(r) exp(i n phi)``.  The angular sample count doubles until
    the modes above a quarter of it are below ``tol`` relative to the largest.

    Returns
    -------
    n : ndarray of int
        Retained orders ``-n_max..n_max``.
    G : ndarray, shape (len(radii), len(n))
    """
    r = np.asarray(radii, dtype=float)
    M = n_angles
    while True:
        phi = 2 * np.pi * np.arange(M) / M
        pts = np.stack([r[:, None] * np.cos(phi), r[:, None] * np.sin(phi)], axis=-1)
        vals = np.asarray(g(pts.reshape(-1, 2)), dtype=complex).reshape(r.size, M)
        C = np.fft.fft(vals, axis=1) / M
        mag = np.abs(C).max(axis=0)
        top = mag.max()
        freqs = np.fft.fftfreq(M, 1.0 / M).astype(int)
        if top == 0:
            return np.array([0]), np.zeros((r.size, 1), dtype=complex)
        keep = mag > tol * top
        n_max = int(np.abs(freqs[keep]).max())
        if n_max < M // 4:
            n = np.arange(-n_max, n_max + 1)
            return n, C[:, n % M]
        if M >= max_angles:
            raise RadialConvergenceError("angular spectrum of the source is not resolved")
        M *= 2


def _k_eff(k, setup, medium):
    def f(r):
        c = np.sqrt(np.abs(medium.c_inv2_radial(r)))
        if setup is None:
            return k * c
        rad = setup.radial(r)
        return k * c * np.maximum(np.abs(rad["alpha"]), np.abs(rad["beta"]))

    return f


def _breaks(setup, medium, source, R_out):
    b = [medium.R_scat, *medium.breaks]
    if source is not None and hasattr(source, "breaks"):
        b.extend(source.breaks)
    if setup is not None:
        b.append(setup.R1)
        if setup.scaling.R2 < setup.R_tr:
            b.append(setup.scaling.R2)
    return [x for x in b if 0 < x <= R_out]


@dataclass
class ModalExpansion:
    """``u(r, phi) = sum_n V_n(r) exp(i n phi)`` with ``|n| <= n_modes``.

    Attributes
    ----------
    tail : float
        Relative size of the outermost retained modes (the source has no
        angular content beyond ``n_modes``, so this bounds the dropped tail).
    convergence : float
        Relative change of the checked modes when the element degree is
        raised by 6.
    """

    k: float
    modes: Dict[int, RadialSolution]
    n_modes: int
    tail: float = 0.0
    convergence: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def grid(self) -> RadialGrid:
        return next(iter(self.modes.values())).grid

    def _tables(self):
        if getattr(self, "_cache", None) is None:
            ns = np.array(sorted(self.modes))
            V = np.stack([self.modes[int(n)].values for n in ns], axis=1)
            self._cache = (ns, V)
        return self._cache

    def evaluate(self, points, gradient: bool = False, chunk: int = 4096):
        """Values (and Cartesian gradients) at points of shape ``(m, 2)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ns, Vall = self._tables()
        g = self.grid
        r = np.linalg.norm(pts, axis=1)
        phi = np.arctan2(pts[:, 1], pts[:, 0])
        idx = g.locate(r)
        vals = np.zeros(len(pts), dtype=complex)
        grads = np.zeros((len(pts), 2), dtype=complex)
        for e in np.unique(idx):
            sel = np.flatnonzero(idx == e)
            Ve = Vall[g.element_dofs(e)]
            for s in range(0, sel.size, chunk):
                ii = sel[s:s + chunk]
                L, dL = g.interp(e, r[ii], deriv=True)
                E = np.exp(1j * np.outer(phi[ii], ns))
                V = L @ Ve
                vals[ii] = np.sum(V * E, axis=1)
                if gradient:
                    ur = np.sum((dL @ Ve) * E, axis=1)
                    rs = np.maximum(r[ii], 1e-12)
                    uphi = np.sum(1j * ns * V * E, axis=1) / rs
                    c, sn = np.cos(phi[ii]), np.sin(phi[ii])
                    grads[ii, 0] = c * ur - sn * uphi
                    grads[ii, 1] = sn * ur + c * uphi
        return (vals, grads) if gradient else vals

    def __call__(self, points):
        """``(values, gradients)``: the reference-function convention of the FEM module."""
        return self.evaluate(points, gradient=True)

    def h1k_norm(self, k: Optional[float] = None, r_max: Optional[float] = None) -> float:
        """Weighted norm ``(||grad u||^2 + k^2 ||u||^2)^{1/2}`` over ``r <= r_max``.

        ``r_max`` must be an element breakpoint.
        """
        k = self.k if k is None else k
        rr, ww = self.grid.gauss_points()
        if r_max is not None:
            if not np.any(np.isclose(self.grid.edges, r_max)):
                raise ValueError("r_max must be an element breakpoint")
            keep = rr <= r_max
            rr, ww = rr[keep], ww[keep]
        tot = 0.0
        for n, sol in self.modes.items():
            V, dV = sol(rr, deriv=True)
            tot += 2 * np.pi * np.sum(ww * rr * (np.abs(dV) ** 2 + (n * n / rr**2 + k * k) * np.abs(V) ** 2))
        return float(np.sqrt(tot))


def _quad_modes(g, grid, ns=None):
    """Source modes at the quadrature radii of ``grid`` (restricted to ``ns`` if given)."""
    n, G = source_modes(g, grid.quad_r.ravel())
    if ns is None:
        return n, G
    out = np.zeros((G.shape[0], len(ns)), dtype=complex)
    pos = {int(m): j for j, m in enumerate(n)}
    for j, m in enumerate(ns):
        if int(m) in pos:
            out[:, j] = G[:, pos[int(m)]]
    return np.asarray(ns), out


def modal_solution(
    k: float,
    setup: PmlSetup,
    medium: MediumSpec,
    source,
    kind: str = "pml",
    obstacle_radius: Optional[float] = None,
    N: int = 16,
    tol: float = 1e-10,
    verify: bool = True,
    grid: Optional[RadialGrid] = None,
) -> ModalExpansion:
    """Modal solution of the layer problem (``kind="pml"``) or of the exact
    outgoing problem restricted to ``B_{R1}`` by the DtN condition (``kind="exact"``).

    Raises
    ------
    ValueError
        For a non-radial medium or unknown ``kind``.
    RadialConvergenceError
        If raising the element degree by 6 changes a checked mode by more
        than ``tol`` relative to the largest mode, or the angular tail is not
        negligible.
    """
    if not medium.is_radial:
        raise ValueError("modal solutions need a radially symmetric medium")
    if kind not in ("pml", "exact"):
        raise ValueError("kind must be 'pml' or 'exact'")
    inner = float(obstacle_radius or 0.0)
    R_out = setup.R_tr if kind == "pml" else setup.R1
    g = _source_callable(source, k)
    if grid is None:
        grid = build_grid(inner, R_out, _k_eff(k, setup, medium), _breaks(setup, medium, source, R_out), N=N)
    ns, G = _quad_modes(g, grid)
    n_max = int(ns.max())
    if kind == "pml":
        outer_for = lambda n: "dirichlet"  # noqa: E731
    else:
        T = dtn_coefficients(n_max, k, setup.R1)
        outer_for = lambda n: ("robin", T[abs(n)])  # noqa: E731
    prob = RadialProblem(k, setup, medium, grid)
    modes = {int(n): prob.solve(int(n), G[:, j], outer_for(int(n))) for j, n in enumerate(ns)}
    sizes = {n: float(np.abs(s.values).max()) for n, s in modes.items()}
    scale = max(sizes.values()) or 1.0
    tail = (sizes[n_max] + sizes[-n_max]) / scale if n_max > 0 else 0.0
    conv = 0.0
    if verify:
        fine = grid.with_degree(grid.N + 6)
        probf = RadialProblem(k, setup, medium, fine)
        check = sorted({0, n_max, -n_max, int(max(sizes, key=sizes.get))})
        _, Gf = _quad_modes(g, fine, check)
        for j, n in enumerate(check):
            sf = probf.solve(n, Gf[:, j], outer_for(n))
            diff = float(np.abs(sf(grid.nodes) - modes[n].values).max()) / scale
            conv = max(conv, diff)
            if diff > tol:
                raise RadialConvergenceError(f"radial solve not converged at k={k}, n={n}: change {diff:.2e}")
    if tail > 1e-12:
        raise RadialConvergenceError(f"angular tail {tail:.2e} too large at k={k}")
    return ModalExpansion(k=float(k), modes=modes, n_modes=n_max, tail=tail, convergence=conv,
                          info={"kind": kind, "elements": grid.n_elements, "N": grid.N})


def radial_mode_pml_solve(
    n: int,
    k: float,
    setup: PmlSetup,
    medium: MediumSpec,
    g_n: Optional[Callable] = None,
    obstacle_radius: Optional[float] = None,
    breaks: Sequence[float] = (),
    N: int = 16,
    tol: Optional[float] = 1e-10,
    grid: Optional[RadialGrid] = None,
) -> RadialSolution:
    """Radial coefficient ``V`` of the layer solution for one angular mode.

    Parameters
    ----------
    g_n : callable, optional
        ``r -> g_n(r)``, the mode-``n`` component of the source (supported in
        ``[R_scat, R1]``).  ``None`` means a zero source.
    breaks : sequence of float
        Extra radii where ``g_n`` is not analytic.
    tol : float or None
        Self-convergence tolerance; ``None`` skips the check.

    Raises
    ------
    ValueError
        For a non-radial medium.
    RadialConvergenceError
        If raising the element degree by 6 changes ``V`` by more than
        ``tol`` relative to its maximum.
    """
    if not medium.is_radial:
        raise ValueError("radial solves need a radially symmetric medium")
    inner = float(obstacle_radius or 0.0)
    if grid is None:
        brk = [*_breaks(setup, medium, None, setup.R_tr), *breaks]
        grid = build_grid(inner, setup.R_tr, _k_eff(k, setup, medium), brk, N=N)

    def run(gr):
        gq = None if g_n is None else np.asarray(g_n(gr.quad_r.ravel()), dtype=complex)
        return RadialProblem(k, setup, medium, gr).solve(int(n), gq)

    sol = run(grid)
    if tol is not None:
        fine = run(grid.with_degree(grid.N + 6))
        scale = float(np.abs(sol.values).max())
        if scale > 0:
            diff = float(np.abs(fine(grid.nodes) - sol.values).max()) / scale
            if diff > tol:
                raise RadialConvergenceError(f"radial solve not converged at k={k}, n={n}: change {diff:.2e}")
    return sol


def _pad_modes(g, radii, ns):
    """Modes ``ns`` of ``g`` at ``radii`` with enough angular samples to avoid aliasing."""
    M = 64
    while M < 4 * (int(np.abs(ns).max()) + 1):
        M *= 2
    phi = 2 * np.pi * np.arange(M) / M
    r = np.asarray(radii, dtype=float)
    pts = np.stack([r[:, None] * np.cos(phi), r[:, None] * np.sin(phi)], axis=-1)
    C = np.fft.fft(np.asarray(g(pts.reshape(-1, 2)), dtype=complex).reshape(r.size, M), axis=1) / M
    return C[:, np.asarray(ns) % M]


def layer_mismatch(n_max: int, k: float, setup: PmlSetup):
    """``T_v - T_u`` for ``|n| <= n_max`` without cancellation.

    ``T_u = k H_n'(kR1)/H_n(kR1)`` is the exact DtN symbol and ``T_v`` the
    one induced at ``R1`` by a homogeneous layer truncated with a Dirichlet
    condition at ``R_tr``.  With ``J~, H~`` the Bessel and Hankel functions
    at the complex radius ``k (R_tr + i f_theta(R_tr))``,

    ``T_v - T_u = k W Q / (H (H - Q J))``, ``Q = H~/J~``, ``W = 2i/(pi k R1)``.
    """
    z = k * setup.R1
    ft = float(setup.radial(np.array([setup.R_tr]))["ft"][0])
    zt = k * (setup.R_tr + 1j * ft)
    n = np.arange(n_max + 1)
    Hs, Js = hankel1e(n, zt), jve(n, zt)
    if not (np.all(np.isfinite(Hs)) and np.all(np.isfinite(Js))) or np.any(Js == 0):
        raise RadialConvergenceError("complex Bessel evaluation failed at the truncation radius")
    # hankel1e = H e^{-iz}, jve = J e^{-|Im z|}
    Q = (Hs / Js) * np.exp(1j * zt.real - 2.0 * abs(zt.imag))
    H = hankel1(n, z)
    J = jv(n, z)
    W = 2j / (np.pi * z)
    with np.errstate(over="ignore", invalid="ignore"):
        out = k * W * Q / (H * H) / (1.0 - Q * J / H)
    out[~np.isfinite(out)] = 0.0
    return out


def pml_truncation_error(
    k: float,
    setup: PmlSetup,
    medium: MediumSpec,
    source,
    obstacle_radius: Optional[float] = None,
    method: str = "analytic",
    N: int = 16,
    tol: float = 1e-10,
) -> dict:
    """``||u - v||`` in the weighted norm on ``B_{R1}`` (minus the obstacle).

    ``u`` is the outgoing solution (DtN-closed modal solve on ``B_{R1}``)
    and ``v`` the layer solution.  With ``method="analytic"`` the difference
    in each mode is ``delta_n Phi_n`` where ``Phi_n`` is the regular
    homogeneous solution normalized by ``Phi' - T_u Phi = 1`` at ``R1``:

    ``delta_n = (T_u - T_v) u_n(R1) / (1 + (T_u - T_v) Phi_n(R1))``,

    which stays accurate when ``u - v`` is far below rounding level relative
    to ``u``.  ``method="direct"`` subtracts the two modal solutions.

    Returns
    -------
    dict
        ``err`` (weighted norm of ``u - v``), ``g_norm`` (``L^2`` norm of
        the source), ``ratio``, ``u_norm``, ``modes`` (orders) and
        ``err_modes`` (per-mode contributions), ``n_modes``.
    """
    if method not in ("analytic", "direct"):
        raise ValueError("method must be 'analytic' or 'direct'")
    if not medium.is_radial:
        raise ValueError("pml_truncation_error needs a radially symmetric medium")
    u = modal_solution(k, setup, medium, source, kind="exact", obstacle_radius=obstacle_radius, N=N, tol=tol)
    grid = u.grid
    rr, ww = grid.gauss_points()
    ns = np.array(sorted(u.modes))
    g = _source_callable(source, k)
    Gq = _pad_modes(g, rr, ns)
    g_norm = float(np.sqrt(2 * np.pi * np.sum(ww * rr * np.sum(np.abs(Gq) ** 2, axis=1))))
    n_max = int(ns.max())
    err2 = np.zeros(ns.size)
    if method == "analytic":
        T = dtn_coefficients(n_max, k, setup.R1)
        dT = layer_mismatch(n_max, k, setup)  # T_v - T_u
        prob = RadialProblem(k, setup, medium, grid)
        for j, n in enumerate(ns):
            m = abs(int(n))
            phi = prob.solve(int(n), None, ("robin", T[m]), outer_value=1.0)
            uR, _ = u.modes[int(n)].at_outer()
            pR, _ = phi.at_outer()
            delta = -dT[m] * uR / (1.0 - dT[m] * pR)
            if delta == 0:
                continue
            V, dV = phi(rr, deriv=True)
            dens = np.abs(dV) ** 2 + (n * n / rr**2 + k * k) * np.abs(V) ** 2
            err2[j] = 2 * np.pi * abs(delta) ** 2 * np.sum(ww * rr * dens)
    else:
        v = modal_solution(k, setup, medium, source, kind="pml", obstacle_radius=obstacle_radius, N=N, tol=tol)
        for j, n in enumerate(ns):
            U, dU = u.modes[int(n)](rr, deriv=True)
            V, dV = v.modes[int(n)](rr, deriv=True) if int(n) in v.modes else (0 * U, 0 * U)
            E, dE = U - V, dU - dV
            dens = np.abs(dE) ** 2 + (n * n / rr**2 + k * k) * np.abs(E) ** 2
            err2[j] = 2 * np.pi * np.sum(ww * rr * dens)
    err = float(np.sqrt(err2.sum()))
    return {
        "err": err,
        "g_norm": g_norm,
        "ratio": err / g_norm if g_norm > 0 else np.nan,
        "u_norm": u.h1k_norm(),
        "modes": ns,
        "err_modes": np.sqrt(err2),
        "n_modes": n_max,
        "method": method,
    }


def modal_error_rows(record: dict, k: float, theta: float, R_tr: float):
    """Rows ``(k, theta, R_tr, n, err_mode, err_total)`` of a truncation-error record."""
    return [
        (float(k), float(theta), float(R_tr), int(n), float(e), float(record["err"]))
        for n, e in zip(record["modes"], record["err_modes"])
    ]
