"""Hierarchical H1-conforming triangle elements of degree 1 to 12.

Local basis on the reference triangle, in barycentric coordinates
``lam = (1 - xi - eta, xi, eta)``:

* vertex functions ``lam_i``;
* edge functions ``lam_a lam_b L_{j-2}(lam_b - lam_a, lam_a + lam_b)``,
  ``j = 2..p``, with ``L_m(x, t) = t^m P_m(x/t)`` the scaled Legendre
  polynomials;
* bubbles ``lam_0 lam_1 lam_2 L_i(lam_1 - lam_0, lam_0 + lam_1)
  P_j^{(2i+1, 0)}(2 lam_2 - 1)``, ``i + j <= p - 3``.

Edge functions are oriented from the lower to the higher global vertex
number; a reversed local edge multiplies the degree-``j`` function by
``(-1)^j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree
from scipy.special import eval_jacobi, roots_jacobi, roots_legendre

from .mesh import LOCAL_EDGES, Mesh

__all__ = [
    "triangle_quadrature",
    "reference_basis",
    "HpSpace",
    "build_space",
    "project_h1k",
    "evaluate_function",
    "locate_points",
    "TabulatedField",
    "sample_reference",
]

P_MAX = 12
_GRAD_LAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


@lru_cache(maxsize=None)
def triangle_quadrature(order: int):
    """Collapsed Gauss rule on the reference triangle, exact to degree ``order``.

    Uses Gauss-Legendre in the collapsed direction and Gauss-Jacobi with
    weight ``(1 - v)`` in the other.  All weights are positive; they sum to 1/2.

    Returns
    -------
    pts : ndarray, shape (nq, 2)
    w : ndarray, shape (nq,)
    """
    n = max(1, int(np.ceil((order + 1) / 2)))
    xu, wu = roots_legendre(n)
    xv, wv = roots_jacobi(n, 1.0, 0.0)
    u = 0.5 * (xu + 1.0)
    wu = 0.5 * wu
    v = 0.5 * (xv + 1.0)
    wv = 0.25 * wv
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    pts = np.stack([(U * (1.0 - V)).ravel(), V.ravel()], axis=-1)
    pts.setflags(write=False)
    w = W.ravel()
    w.setflags(write=False)
    return pts, w


def _scaled_legendre(m_max, x, t):
    """``L_m(x, t)`` and partial derivatives for ``m = 0..m_max``."""
    shape = (m_max + 1,) + np.shape(x)
    L = np.zeros(shape)
    Lx = np.zeros(shape)
    Lt = np.zeros(shape)
    L[0] = 1.0
    if m_max >= 1:
        L[1] = x
        Lx[1] = 1.0
    for m in range(1, m_max):
        L[m + 1] = ((2 * m + 1) * x * L[m] - m * t * t * L[m - 1]) / (m + 1)
        Lx[m + 1] = ((2 * m + 1) * (L[m] + x * Lx[m]) - m * t * t * Lx[m - 1]) / (m + 1)
        Lt[m + 1] = ((2 * m + 1) * x * Lt[m] - m * (2 * t * L[m - 1] + t * t * Lt[m - 1])) / (m + 1)
    return L, Lx, Lt


def n_local(p: int) -> int:
    return (p + 1) * (p + 2) // 2


def bubble_indices(p: int):
    return [(i, j) for s in range(p - 2) for i in range(s + 1) for j in [s - i]]


def reference_basis(p: int, pts):
    """Values and reference gradients of the local basis (reference orientation).

    Parameters
    ----------
    p : int
        Degree, 1 to 12.
    pts : array_like, shape (..., 2)

    Returns
    -------
    vals : ndarray, shape (..., nb)
    grads : ndarray, shape (..., nb, 2)
    """
    pts = np.asarray(pts, dtype=float)
    lam = np.stack([1.0 - pts[..., 0] - pts[..., 1], pts[..., 0], pts[..., 1]], axis=-1)
    vals = []
    dlam = []  # derivatives with respect to (lam0, lam1, lam2)
    zero = np.zeros(lam.shape[:-1])
    one = np.ones(lam.shape[:-1])
    for i in range(3):
        vals.append(lam[..., i])
        d = [zero, zero, zero]
        d[i] = one
        dlam.append(d)
    if p >= 2:
        for a, b in LOCAL_EDGES:
            la, lb = lam[..., a], lam[..., b]
            L, Lx, Lt = _scaled_legendre(p - 2, lb - la, la + lb)
            w = la * lb
            for m in range(p - 1):
                vals.append(w * L[m])
                d = [zero, zero, zero]
                d[a] = lb * L[m] + w * (-Lx[m] + Lt[m])
                d[b] = la * L[m] + w * (Lx[m] + Lt[m])
                dlam.append(d)
    if p >= 3:
        l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
        b0 = l0 * l1 * l2
        L, Lx, Lt = _scaled_legendre(p - 3, l1 - l0, l0 + l1)
        y = 2.0 * l2 - 1.0
        for i, j in bubble_indices(p):
            Pj = eval_jacobi(j, 2 * i + 1, 0, y)
            dPj = 0.0 if j == 0 else (j + 2 * i + 2) * eval_jacobi(j - 1, 2 * i + 2, 1, y)  # d/dl2
            f = L[i] * Pj
            vals.append(b0 * f)
            d0 = l1 * l2 * f + b0 * (-Lx[i] + Lt[i]) * Pj
            d1 = l0 * l2 * f + b0 * (Lx[i] + Lt[i]) * Pj
            d2 = l0 * l1 * f + b0 * L[i] * dPj
            dlam.append([d0, d1, d2])
    vals = np.stack(vals, axis=-1)
    D = np.stack([np.stack(d, axis=-1) for d in dlam], axis=-2)  # (..., nb, 3)
    grads = D @ _GRAD_LAM
    return vals, grads


@dataclass
class TabulatedField:
    """A function given by values and gradients at a space's quadrature points.

    Shapes are ``(nc, nq)`` and ``(nc, nq, 2)``, ordered like the cells.
    """

    values: np.ndarray
    gradients: np.ndarray


def sample_reference(v, cells, x):
    """Values and gradients of ``v`` on a block of cells (``x`` from ``cell_tables``)."""
    if isinstance(v, TabulatedField):
        return v.values[cells], v.gradients[cells]
    val, grad = v(x.reshape(-1, 2))
    return np.asarray(val).reshape(x.shape[:2]), np.asarray(grad).reshape(x.shape)


@dataclass
class HpSpace:
    """Degree-``p`` hierarchical space on a curved mesh.

    Attributes
    ----------
    mesh : Mesh
    p : int
    n_dofs : int
        Total number of basis functions, Dirichlet ones included.
    cell_dofs : ndarray, shape (nc, nb)
        Global index of each local basis function.
    cell_signs : ndarray, shape (nc, nb)
        Orientation signs of the local functions (+1 or -1).
    dirichlet : ndarray of bool, shape (n_dofs,)
        True for functions not vanishing on ``Gamma_tr`` or ``Gamma_D``.
    quad_pts, quad_w : reference quadrature rule of exactness ``2p + 2``.
    ref_vals, ref_grads : reference basis tables at the quadrature points.
    """

    mesh: Mesh
    p: int
    n_dofs: int
    cell_dofs: np.ndarray
    cell_signs: np.ndarray
    dirichlet: np.ndarray
    quad_pts: np.ndarray
    quad_w: np.ndarray
    ref_vals: np.ndarray
    ref_grads: np.ndarray
    _tree: object = field(default=None, repr=False)

    @property
    def free(self) -> np.ndarray:
        return np.nonzero(~self.dirichlet)[0]

    @property
    def dim(self) -> int:
        """Dimension of the space with homogeneous Dirichlet conditions."""
        return int((~self.dirichlet).sum())

    def cell_tables(self, cells=None):
        """Quadrature data on a set of cells.

        Returns
        -------
        x : ndarray (nc, nq, 2)
            Physical quadrature points.
        W : ndarray (nc, nq)
            Weights times Jacobian determinant.
        phi : ndarray (nc, nq, nb)
            Signed basis values.
        dphi : ndarray (nc, nq, nb, 2)
            Physical gradients.
        """
        cells = np.arange(self.mesh.n_cells) if cells is None else np.asarray(cells)
        x, J = self.mesh.map_points(self.quad_pts, cells)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        Jinv = np.empty_like(J)
        Jinv[..., 0, 0] = J[..., 1, 1] / det
        Jinv[..., 1, 1] = J[..., 0, 0] / det
        Jinv[..., 0, 1] = -J[..., 0, 1] / det
        Jinv[..., 1, 0] = -J[..., 1, 0] / det
        s = self.cell_signs[cells][:, None, :]
        phi = self.ref_vals[None] * s
        # grad_x phi = J^{-T} grad_ref phi
        dphi = np.einsum("cqki,qbk->cqbi", Jinv, self.ref_grads) * s[..., None]
        return x, det * self.quad_w, phi, dphi

    def chunks(self, size: int = 0):
        """Cell index blocks sized to bound the memory of :meth:`cell_tables`."""
        nb = self.cell_dofs.shape[1]
        nq = self.quad_w.size
        if size <= 0:
            size = max(1, int(4e6 // (nq * nb * 3)))
        nc = self.mesh.n_cells
        for start in range(0, nc, size):
            yield np.arange(start, min(nc, start + size))

    def gram(self, k: float = 0.0):
        """Real stiffness ``S`` and mass ``M`` matrices over all dofs."""
        rows, cols, sv, mv = [], [], [], []
        for cells in self.chunks():
            _, W, phi, dphi = self.cell_tables(cells)
            Se = np.einsum("cq,cqai,cqbi->cab", W, dphi, dphi, optimize=True)
            Me = np.einsum("cq,cqa,cqb->cab", W, phi, phi, optimize=True)
            dofs = self.cell_dofs[cells]
            rows.append(np.repeat(dofs, dofs.shape[1], axis=1).ravel())
            cols.append(np.tile(dofs, (1, dofs.shape[1])).ravel())
            sv.append(Se.ravel())
            mv.append(Me.ravel())
        r, c = np.concatenate(rows), np.concatenate(cols)
        n = self.n_dofs
        S = sp.csr_matrix((np.concatenate(sv), (r, c)), shape=(n, n))
        M = sp.csr_matrix((np.concatenate(mv), (r, c)), shape=(n, n))
        return S, M

    # point evaluation -----------------------------------------------------
    def _locator(self):
        if self._tree is None:
            c, _ = self.mesh.map_points(np.array([[1 / 3, 1 / 3]]))
            self._tree = cKDTree(c[:, 0, :])
        return self._tree


def build_space(mesh: Mesh, p: int) -> HpSpace:
    """Degree-``p`` space with quadrature of exactness ``2p + 2``.

    Raises
    ------
    ValueError
        If ``p`` is outside ``1..12``.
    """
    if not (1 <= int(p) <= P_MAX) or int(p) != p:
        raise ValueError(f"degree must be an integer in 1..{P_MAX}")
    p = int(p)
    edges, cell_edges = mesh.edges()
    nv, ne, nc = mesh.n_vertices, edges.shape[0], mesh.n_cells
    ned = p - 1
    nbub = (p - 1) * (p - 2) // 2
    nb = n_local(p)
    dofs = np.empty((nc, nb), dtype=np.int64)
    signs = np.ones((nc, nb))
    dofs[:, :3] = mesh.cells
    col = 3
    for le, (a, b) in enumerate(LOCAL_EDGES):
        flipped = mesh.cells[:, a] > mesh.cells[:, b]
        for m in range(ned):
            dofs[:, col] = nv + cell_edges[:, le] * ned + m
            j = m + 2
            if j % 2 == 1:
                signs[flipped, col] = -1.0
            col += 1
    base = nv + ne * ned
    for m in range(nbub):
        dofs[:, col] = base + np.arange(nc) * nbub + m
        col += 1
    n_dofs = base + nc * nbub
    mask = np.zeros(n_dofs, dtype=bool)
    mask[mesh.boundary_vertices()] = True
    if ned:
        eidx = {tuple(e): i for i, e in enumerate(edges.tolist())}
        for pq in np.sort(mesh.boundary_edges, axis=1).tolist():
            e = eidx[tuple(pq)]
            mask[nv + e * ned : nv + (e + 1) * ned] = True
    pts, w = triangle_quadrature(2 * p + 2)
    vals, grads = reference_basis(p, pts)
    return HpSpace(
        mesh=mesh,
        p=p,
        n_dofs=n_dofs,
        cell_dofs=dofs,
        cell_signs=signs,
        dirichlet=mask,
        quad_pts=pts,
        quad_w=w,
        ref_vals=vals,
        ref_grads=grads,
    )


def project_h1k(space: HpSpace, v, k: float, dirichlet: bool = True, return_residual: bool = False):
    """Best approximation of ``v`` in the weighted norm ``|grad w|^2 + k^2 |w|^2``.

    Parameters
    ----------
    space : HpSpace
    v : callable or TabulatedField
        ``x -> (values, gradients)`` for points of shape ``(n, 2)``, or
        values already tabulated at the quadrature points.
    k : float
        Weight of the ``L^2`` part (``k = 0`` gives the ``H^1`` seminorm and
        requires ``dirichlet=True``).
    dirichlet : bool
        Restrict to functions vanishing on the boundary (the Galerkin space).
    return_residual : bool
        Also return the relative residual of the normal equations.

    Returns
    -------
    ndarray
        Coefficient vector over all ``n_dofs`` (zero on masked dofs).
    """
    S, M = space.gram()
    G = (S + k * k * M).tocsc()
    rhs = np.zeros(space.n_dofs, dtype=complex)
    for cells in space.chunks():
        x, W, phi, dphi = space.cell_tables(cells)
        val, grad = sample_reference(v, cells, x)
        loc = np.einsum("cq,cqi,cqbi->cb", W, grad, dphi) + k * k * np.einsum("cq,cq,cqb->cb", W, val, phi)
        np.add.at(rhs, space.cell_dofs[cells], loc)
    idx = space.free if dirichlet else np.arange(space.n_dofs)
    if idx.size == 0:
        out = np.zeros(space.n_dofs, dtype=complex)
        return (out, 0.0) if return_residual else out
    Gf = G[idx][:, idx].tocsc()
    try:
        lu = splu(Gf)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError("singular Gram matrix; check the dof map") from exc
    b = rhs[idx]
    sol = lu.solve(b.real) + 1j * lu.solve(b.imag)
    out = np.zeros(space.n_dofs, dtype=complex)
    out[idx] = sol
    if return_residual:
        res = np.linalg.norm(Gf @ sol - b) / max(np.linalg.norm(b), 1e-300)
        return out, float(res)
    return out


def locate_points(space: HpSpace, points, n_candidates: int = 12, tol: float = 1e-9):
    """Find the cell and reference coordinates of physical points.

    Newton's method inverts the (possibly curved) cell maps of the nearest
    cells by centroid distance.  Points not found among the first
    ``n_candidates`` cells are retried with four times as many candidates
    (anisotropic cells can have distant centroids), up to 256.

    Returns
    -------
    cells : ndarray of int, shape (n,)
        -1 for points outside the mesh.
    ref : ndarray, shape (n, 2)
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[0]
    found = -np.ones(n, dtype=np.int64)
    ref = np.zeros((n, 2))
    tree = space._locator()
    start, kq = 0, min(n_candidates, space.mesh.n_cells)
    while True:
        todo_all = np.nonzero(found < 0)[0]
        if todo_all.size == 0:
            break
        _, cand = tree.query(pts[todo_all], k=kq)
        cand = np.asarray(cand).reshape(todo_all.size, kq)
        for j in range(start, kq):
            sub = np.nonzero(found[todo_all] < 0)[0]
            if sub.size == 0:
                break
            todo = todo_all[sub]
            cells = cand[sub, j]
            xi = np.full((todo.size, 1, 2), 1.0 / 3.0)
            for _ in range(30):
                x, J = space.mesh.map_points(xi, cells)
                r = pts[todo] - x[:, 0, :]
                step = np.linalg.solve(J[:, 0], r[..., None])[..., 0]
                xi[:, 0, :] += step
                xi = np.clip(xi, -0.5, 1.5)
                if np.max(np.abs(step)) < 1e-14:
                    break
            s = xi[:, 0, :]
            inside = (s[:, 0] >= -tol) & (s[:, 1] >= -tol) & (s.sum(axis=1) <= 1 + tol)
            x, _ = space.mesh.map_points(xi, cells)
            inside &= np.linalg.norm(x[:, 0, :] - pts[todo], axis=1) <= 1e-10 * max(1.0, space.mesh.R_tr)
            found[todo[inside]] = cells[inside]
            ref[todo[inside]] = s[inside]
        if kq >= min(256, space.mesh.n_cells):
            break
        start, kq = kq, min(4 * kq, 256, space.mesh.n_cells)
    return found, ref


def evaluate_function(space: HpSpace, coeffs, points, gradient: bool = False):
    """Evaluate a finite element function at physical points.

    Points outside the mesh get ``nan``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cells, ref = locate_points(space, pts)
    ok = cells >= 0
    out = np.full(pts.shape[0], np.nan + 0j)
    gout = np.full(pts.shape, np.nan + 0j)
    if np.any(ok):
        c = cells[ok]
        vals, grads = reference_basis(space.p, ref[ok])
        s = space.cell_signs[c]
        loc = np.asarray(coeffs)[space.cell_dofs[c]] * s
        out[ok] = np.sum(vals * loc, axis=1)
        if gradient:
            _, J = space.mesh.map_points(ref[ok][:, None, :], c)
            Jinv = np.linalg.inv(J[:, 0])
            gref = np.einsum("nb,nbi->ni", loc, grads)
            gout[ok] = np.einsum("nki,nk->ni", Jinv, gref)
    return (out, gout) if gradient else out
