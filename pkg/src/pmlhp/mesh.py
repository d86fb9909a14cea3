"""Curved triangular meshes of a disk or an annulus.

Vertices sit on concentric rings; consecutive rings are stitched by a zipper
triangulation.  Cells touching a boundary circle carry a blended geometry map
that reproduces the circular arc exactly:

``x(xi) = sum_i lam_i V_i + lam_a lam_b q(t)``,  ``t = (1 + lam_b - lam_a) / 2``,

with ``q(t) = (gamma(t) - (1-t) V_a - t V_b) / (t (1 - t))`` and ``gamma`` the
arc from ``V_a`` to ``V_b``.  The correction vanishes on the two straight
edges, so interior edges stay straight and conforming.

Refinement is red (one cell into four).  Children of a curved cell keep the
parent's map composed with an affine pre-map, so refined meshes are nested
and resolve the boundary exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["Mesh", "generate_mesh", "refine", "straight_mesh", "dump_mesh", "load_mesh", "LOCAL_EDGES"]

#: local vertex pairs of the three edges of a triangle
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))
TAG_NAMES = {0: "Gamma_tr", 1: "Gamma_D"}
_GRAD_LAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass
class Mesh:
    """Triangular mesh with exact circular boundary edges.

    Attributes
    ----------
    vertices : ndarray, shape (nv, 2)
    cells : ndarray of int, shape (nc, 3)
        Counter-clockwise vertex triples.
    geom_vertices : ndarray, shape (nc, 3, 2)
        Corners of the root cell whose map defines the geometry.
    geom_edge : ndarray of int, shape (nc,)
        Index into :data:`LOCAL_EDGES` of the root cell's arc, or -1 if affine.
    geom_radius : ndarray, shape (nc,)
        Radius of that arc (0 for affine cells).
    pre_A, pre_b : ndarray, shapes (nc, 2, 2) and (nc, 2)
        Affine map from the cell's reference triangle into the root's.
    boundary_edges : ndarray of int, shape (nb, 2)
    boundary_tags : ndarray of int, shape (nb,)
        0 for the truncation circle ``Gamma_tr``, 1 for the obstacle ``Gamma_D``.
    R_tr : float
    obstacle_radius : float or None
    """

    vertices: np.ndarray
    cells: np.ndarray
    geom_vertices: np.ndarray
    geom_edge: np.ndarray
    geom_radius: np.ndarray
    pre_A: np.ndarray
    pre_b: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    R_tr: float
    obstacle_radius: Optional[float] = None

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def edges(self):
        """Unique edges and the cell-to-edge incidence.

        Returns
        -------
        edges : ndarray, shape (ne, 2)
            Vertex pairs with ``edges[:, 0] < edges[:, 1]``.
        cell_edges : ndarray, shape (nc, 3)
            Edge index of each local edge of :data:`LOCAL_EDGES`.
        """
        pairs = np.concatenate([self.cells[:, [a, b]] for a, b in LOCAL_EDGES])
        pairs = np.sort(pairs, axis=1)
        edges, inv = np.unique(pairs, axis=0, return_inverse=True)
        return edges, inv.reshape(3, -1).T.copy()

    def cell_diameters(self):
        """Longest chord of each cell."""
        v = self.vertices[self.cells]
        return np.max(np.stack([np.linalg.norm(v[:, a] - v[:, b], axis=1) for a, b in LOCAL_EDGES]), axis=0)

    def quasi_uniformity(self) -> float:
        hT = self.cell_diameters()
        return float(hT.max() / hT.min())

    def boundary_vertices(self, tag: Optional[int] = None):
        sel = self.boundary_edges if tag is None else self.boundary_edges[self.boundary_tags == tag]
        return np.unique(sel)

    # geometry -------------------------------------------------------------
    def map_points(self, ref, cells=None):
        """Map reference points into physical space.

        Parameters
        ----------
        ref : ndarray, shape (nq, 2) or (nc, nq, 2)
            Points of the reference triangle ``{xi, eta >= 0, xi + eta <= 1}``.
        cells : array_like of int, optional
            Subset of cells (default all).

        Returns
        -------
        x : ndarray, shape (nc, nq, 2)
        J : ndarray, shape (nc, nq, 2, 2)
            ``J[..., i, j] = d x_i / d xi_j``.
        """
        cells = np.arange(self.n_cells) if cells is None else np.asarray(cells)
        ref = np.asarray(ref, dtype=float)
        A = self.pre_A[cells]
        if ref.ndim == 2:
            xr = np.einsum("cij,qj->cqi", A, ref) + self.pre_b[cells][:, None, :]
        else:
            xr = np.einsum("cij,cqj->cqi", A, ref) + self.pre_b[cells][:, None, :]
        V = self.geom_vertices[cells]
        lam = np.stack([1.0 - xr[..., 0] - xr[..., 1], xr[..., 0], xr[..., 1]], axis=-1)
        x = np.einsum("cqi,cid->cqd", lam, V)
        Jr = np.empty(xr.shape[:2] + (2, 2))
        Jr[...] = np.stack([V[:, 1] - V[:, 0], V[:, 2] - V[:, 0]], axis=-1)[:, None]
        curved = np.nonzero(self.geom_edge[cells] >= 0)[0]
        if curved.size:
            ge = self.geom_edge[cells[curved]]
            la_idx = np.array([LOCAL_EDGES[e][0] for e in ge])
            lb_idx = np.array([LOCAL_EDGES[e][1] for e in ge])
            lc = lam[curved]
            la = np.take_along_axis(lc, la_idx[:, None, None], axis=2)[..., 0]
            lb = np.take_along_axis(lc, lb_idx[:, None, None], axis=2)[..., 0]
            Va = V[curved, la_idx]
            Vb = V[curved, lb_idx]
            t = 0.5 * (1.0 + lb - la)
            q, dq = _arc_correction(Va, Vb, self.geom_radius[cells[curved]], t)
            w = la * lb
            x[curved] += w[..., None] * q
            ga = _GRAD_LAM[la_idx][:, None, :]
            gb = _GRAD_LAM[lb_idx][:, None, :]
            dw = lb[..., None] * ga + la[..., None] * gb
            dt = 0.5 * (gb - ga)
            Jr[curved] += q[..., :, None] * dw[..., None, :] + (w[..., None] * dq)[..., :, None] * dt[..., None, :]
        J = np.einsum("cqij,cjk->cqik", Jr, A)
        return x, J

    def validate(self, ref=None) -> float:
        """Smallest Jacobian determinant over the given reference points.

        Raises
        ------
        ValueError
            If a determinant is not positive (inverted or self-intersecting cell).
        """
        if ref is None:
            from .space import triangle_quadrature

            ref, _ = triangle_quadrature(8)
        _, J = self.map_points(ref)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        m = float(det.min())
        if not m > 0:
            raise ValueError(f"mesh has a non-positive Jacobian determinant ({m:.3e})")
        return m

    def area(self, order: int = 24) -> float:
        """Quadrature area of the mesh (exact geometry)."""
        from .space import triangle_quadrature

        ref, w = triangle_quadrature(order)
        _, J = self.map_points(ref)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        return float(np.sum(det * w))


def _arc_correction(Va, Vb, R, t):
    """Blend function ``q(t)`` and ``q'(t)`` of the arc from ``Va`` to ``Vb``.

    Points are handled as complex numbers.  Near the end points a third-order
    Taylor expansion replaces the quotient to avoid cancellation.
    """
    za = Va[:, 0] + 1j * Va[:, 1]
    zb = Vb[:, 0] + 1j * Vb[:, 1]
    pa = np.angle(za)
    delta = np.angle(zb / za)
    R = np.asarray(R, dtype=float)
    za_, zb_, pa_, de_, R_ = (v[:, None] for v in (za, zb, pa, delta, R))

    def series(z0, z1, p0, dl, s):
        # expansion of q around the end point z0 (s = distance in t from it)
        chord = z1 - z0
        d1 = R_ * 1j * dl * np.exp(1j * p0) - chord
        dj = [R_ * (1j * dl) ** j * np.exp(1j * p0) for j in (2, 3, 4)]
        c0 = d1
        c1 = d1 + dj[0] / 2
        c2 = d1 + dj[0] / 2 + dj[1] / 6
        c3 = d1 + dj[0] / 2 + dj[1] / 6 + dj[2] / 24
        return c0 + s * (c1 + s * (c2 + s * c3)), c1 + s * (2 * c2 + 3 * s * c3)

    tt = np.clip(t, 1e-3, 1 - 1e-3)
    gam = R_ * np.exp(1j * (pa_ + tt * de_))
    dgam = 1j * de_ * gam
    dd = gam - (1 - tt) * za_ - tt * zb_
    ddp = dgam - (zb_ - za_)
    den = tt * (1 - tt)
    q = dd / den
    dq = (ddp * den - dd * (1 - 2 * tt)) / den**2
    lo = t < 1e-3
    hi = t > 1 - 1e-3
    if np.any(lo):
        qs, dqs = series(za_, zb_, pa_, de_, t)
        q = np.where(lo, qs, q)
        dq = np.where(lo, dqs, dq)
    if np.any(hi):
        qs, dqs = series(zb_, za_, pa_ + de_, -de_, 1 - t)
        q = np.where(hi, qs, q)
        dq = np.where(hi, -dqs, dq)
    return np.stack([q.real, q.imag], axis=-1), np.stack([dq.real, dq.imag], axis=-1)


def _zipper(inner, outer, ang_in, ang_out):
    """Triangulate the strip between two closed rings of vertex indices."""
    ni, no = len(inner), len(outer)
    two_pi = 2 * np.pi
    j0 = int(np.argmin(np.abs(np.angle(np.exp(1j * (ang_out - ang_in[0]))))))
    ai = np.unwrap(np.concatenate([ang_in, [ang_in[0] + two_pi]]))
    ao_list = np.concatenate([ang_out[j0:], ang_out[:j0]])
    ao = np.unwrap(np.concatenate([ao_list, [ao_list[0] + two_pi]]))
    ao += two_pi * np.round((ai[0] - ao[0]) / two_pi)
    out_idx = np.concatenate([outer[j0:], outer[:j0]])
    tris = []
    i = j = 0
    while i < ni or j < no:
        adv_inner = j >= no or (i < ni and ai[i + 1] <= ao[j + 1])
        if adv_inner:
            tris.append((inner[i], inner[(i + 1) % ni], out_idx[j % no]))
            i += 1
        else:
            tris.append((inner[i % ni], out_idx[(j + 1) % no], out_idx[j % no]))
            j += 1
    return tris


def generate_mesh(R_tr: float, h: float, obstacle_radius: Optional[float] = None, grading=None) -> Mesh:
    """Quasi-uniform curved mesh of ``B_{R_tr}`` or ``B_{R_tr} minus B_a``.

    Rings are spaced by ``dr = width / ceil(width / h)`` and carry about
    ``2 pi r / dr`` vertices each (``6 j`` on the ``j``-th ring of the disk).
    With ``grading = (r0, r1, h_r)`` the rings inside ``[r0, r1]`` are
    instead spaced by about ``h_r`` while the vertex count per ring keeps
    following ``2 pi r / dr``; cells there are anisotropic (thin in the
    radial direction) and the mesh is no longer quasi-uniform.

    Parameters
    ----------
    R_tr : float
        Outer radius.
    h : float
        Target mesh width, at most ``R_tr / 2``.
    obstacle_radius : float, optional
        Radius ``a`` of a sound-soft disk removed from the domain.
    grading : tuple (r0, r1, h_r), optional
        Radial refinement band, used to resolve the steep part of the layer.

    Raises
    ------
    ValueError
        For infeasible ``h``, obstacle radius or grading band, or an invalid
        resulting mesh.
    """
    if not (0 < h <= R_tr / 2):
        raise ValueError("need 0 < h <= R_tr/2")
    a = obstacle_radius
    if a is not None and not (0 < a < R_tr - h):
        raise ValueError("obstacle radius must lie in (0, R_tr - h)")
    verts = []
    rings = []
    angles = []
    if a is None:
        M = int(np.ceil(R_tr / h))
        dr = R_tr / M
        verts.append((0.0, 0.0))
        radii = [dr * j for j in range(1, M + 1)]
    else:
        M = int(np.ceil((R_tr - a) / h))
        dr = (R_tr - a) / M
        radii = [a + dr * j for j in range(M + 1)]
    if grading is not None:
        r0, r1, hr = map(float, grading)
        lo = dr if a is None else a
        if not (lo <= r0 < r1 <= R_tr and 0 < hr < h):
            raise ValueError("grading band must satisfy inner ring <= r0 < r1 <= R_tr and 0 < h_r < h")
        band = list(np.linspace(r0, r1, int(np.ceil((r1 - r0) / hr)) + 1))
        keep = [r for r in radii if r < r0 - 0.5 * dr or r > r1 + 0.5 * dr]
        radii = sorted(keep + band)
        if radii[-1] < R_tr - 1e-12 * R_tr:
            raise ValueError("grading band dropped the outer ring")
    if a is None:
        counts = [max(6, int(round(6 * r / dr))) for r in radii]
    else:
        counts = [max(6, int(round(2 * np.pi * r / dr))) for r in radii]
    for j, (r, n) in enumerate(zip(radii, counts)):
        off = 0.0 if a is None else (0.5 * (j % 2)) * 2 * np.pi / n
        ang = off + 2 * np.pi * np.arange(n) / n
        start = len(verts)
        verts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
        rings.append(np.arange(start, start + n))
        angles.append(ang)
    verts = np.array(verts)
    tris = []
    if a is None:
        first = rings[0]
        for i in range(len(first)):
            tris.append((0, first[i], first[(i + 1) % len(first)]))
    for j in range(len(rings) - 1):
        tris.extend(_zipper(rings[j], rings[j + 1], angles[j], angles[j + 1]))
    cells = np.array(tris, dtype=np.int64)
    # enforce counter-clockwise orientation
    v = verts[cells]
    cross = (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1]) - (v[:, 1, 1] - v[:, 0, 1]) * (v[:, 2, 0] - v[:, 0, 0])
    flip = cross < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]

    bedges, btags = [], []
    outer = rings[-1]
    bedges += [(outer[i], outer[(i + 1) % len(outer)]) for i in range(len(outer))]
    btags += [0] * len(outer)
    if a is not None:
        inner = rings[0]
        bedges += [(inner[i], inner[(i + 1) % len(inner)]) for i in range(len(inner))]
        btags += [1] * len(inner)
    bedges = np.array(bedges, dtype=np.int64)
    btags = np.array(btags, dtype=np.int64)
    radius_of = {0: R_tr, 1: a}

    nc = cells.shape[0]
    geom_edge = -np.ones(nc, dtype=np.int64)
    geom_radius = np.zeros(nc)
    lookup = {tuple(sorted(e)): t for e, t in zip(bedges.tolist(), btags.tolist())}
    for c in range(nc):
        for le, (p, q) in enumerate(LOCAL_EDGES):
            key = tuple(sorted((cells[c, p], cells[c, q])))
            if key in lookup:
                if geom_edge[c] >= 0:
                    raise ValueError("cell with two boundary edges; decrease h")
                geom_edge[c] = le
                geom_radius[c] = radius_of[lookup[key]]
    mesh = Mesh(
        vertices=verts,
        cells=cells,
        geom_vertices=verts[cells].copy(),
        geom_edge=geom_edge,
        geom_radius=geom_radius,
        pre_A=np.broadcast_to(np.eye(2), (nc, 2, 2)).copy(),
        pre_b=np.zeros((nc, 2)),
        boundary_edges=bedges,
        boundary_tags=btags,
        R_tr=float(R_tr),
        obstacle_radius=None if a is None else float(a),
    )
    mesh.validate()
    return mesh


_CHILD_CORNERS = np.array(
    [
        [[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]],
        [[0.5, 0.0], [1.0, 0.0], [0.5, 0.5]],
        [[0.0, 0.5], [0.5, 0.5], [0.0, 1.0]],
        [[0.5, 0.5], [0.0, 0.5], [0.5, 0.0]],
    ]
)


def refine(mesh: Mesh) -> Mesh:
    """Red refinement: every cell is split into four similar children."""
    edges, cell_edges = mesh.edges()
    nv = mesh.n_vertices
    nc = mesh.n_cells
    # new vertex on each edge = image of the reference midpoint under the cell map
    mids_ref = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])  # for LOCAL_EDGES order
    xm, _ = mesh.map_points(mids_ref)
    new_vert = np.zeros((edges.shape[0], 2))
    new_vert[cell_edges.ravel()] = xm.reshape(-1, 2)
    vertices = np.concatenate([mesh.vertices, new_vert])
    m01, m12, m20 = (nv + cell_edges[:, i] for i in range(3))
    c0, c1, c2 = mesh.cells.T
    children = np.stack(
        [
            np.stack([c0, m01, m20], axis=1),
            np.stack([m01, c1, m12], axis=1),
            np.stack([m20, m12, c2], axis=1),
            np.stack([m12, m20, m01], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)
    # pre-maps: child ref -> parent ref -> root ref
    P = _CHILD_CORNERS
    cA = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=-1)  # (4,2,2)
    cb = P[:, 0]
    pre_A = np.einsum("cij,sjk->csik", mesh.pre_A, cA).reshape(-1, 2, 2)
    pre_b = (np.einsum("cij,sj->csi", mesh.pre_A, cb) + mesh.pre_b[:, None, :]).reshape(-1, 2)
    rep = np.repeat(np.arange(nc), 4)
    geom_edge = mesh.geom_edge[rep]
    geom_vertices = mesh.geom_vertices[rep].copy()
    affine = geom_edge < 0
    geom_vertices[affine] = vertices[children[affine]]
    pre_A[affine] = np.eye(2)
    pre_b[affine] = 0.0
    # boundary edges split in two
    eidx = {tuple(e): i for i, e in enumerate(edges.tolist())}
    bnew, tnew = [], []
    for (p, q), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags.tolist()):
        m = nv + eidx[tuple(sorted((p, q)))]
        bnew += [(p, m), (m, q)]
        tnew += [t, t]
    out = Mesh(
        vertices=vertices,
        cells=children,
        geom_vertices=geom_vertices,
        geom_edge=geom_edge,
        geom_radius=mesh.geom_radius[rep],
        pre_A=pre_A,
        pre_b=pre_b,
        boundary_edges=np.array(bnew, dtype=np.int64),
        boundary_tags=np.array(tnew, dtype=np.int64),
        R_tr=mesh.R_tr,
        obstacle_radius=mesh.obstacle_radius,
    )
    return out


def dump_mesh(mesh: Mesh, fh=None) -> str:
    """Write the plain-text mesh format (see README) and return it as a string."""
    buf = io.StringIO()
    w = buf.write
    w("# pmlhp mesh v1\n")
    w(f"R_tr {float(mesh.R_tr)!r}\n")
    w(f"obstacle_radius {'none' if mesh.obstacle_radius is None else repr(mesh.obstacle_radius)}\n")
    w(f"vertices {mesh.n_vertices}\n")
    for x, y in mesh.vertices:
        w(f"{float(x)!r} {float(y)!r}\n")
    w(f"cells {mesh.n_cells}\n")
    for a, b, c in mesh.cells:
        w(f"{a} {b} {c}\n")
    curved = np.nonzero(mesh.geom_edge >= 0)[0]
    w(f"curved {curved.size}\n")
    for c in curved:
        vals = [mesh.geom_radius[c], *mesh.geom_vertices[c].ravel(), *mesh.pre_A[c].ravel(), *mesh.pre_b[c]]
        w(f"{c} {mesh.geom_edge[c]} " + " ".join(repr(float(v)) for v in vals) + "\n")
    w(f"boundary {mesh.boundary_edges.shape[0]}\n")
    for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags):
        w(f"{a} {b} {TAG_NAMES[int(t)]}\n")
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def load_mesh(text: str) -> Mesh:
    """Parse the output of :func:`dump_mesh`."""
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    it = iter(lines)

    def header(name):
        key, val = next(it).split()
        if key != name:
            raise ValueError(f"expected section {name!r}, found {key!r}")
        return val

    R_tr = float(header("R_tr"))
    ob = header("obstacle_radius")
    nv = int(header("vertices"))
    vertices = np.array([[float(s) for s in next(it).split()] for _ in range(nv)])
    nc = int(header("cells"))
    cells = np.array([[int(s) for s in next(it).split()] for _ in range(nc)], dtype=np.int64)
    geom_vertices = vertices[cells].copy()
    geom_edge = -np.ones(nc, dtype=np.int64)
    geom_radius = np.zeros(nc)
    pre_A = np.broadcast_to(np.eye(2), (nc, 2, 2)).copy()
    pre_b = np.zeros((nc, 2))
    for _ in range(int(header("curved"))):
        parts = next(it).split()
        c, e = int(parts[0]), int(parts[1])
        vals = np.array([float(s) for s in parts[2:]])
        geom_edge[c] = e
        geom_radius[c] = vals[0]
        geom_vertices[c] = vals[1:7].reshape(3, 2)
        pre_A[c] = vals[7:11].reshape(2, 2)
        pre_b[c] = vals[11:13]
    nb = int(header("boundary"))
    names = {v: k for k, v in TAG_NAMES.items()}
    be, bt = [], []
    for _ in range(nb):
        a, b, t = next(it).split()
        be.append((int(a), int(b)))
        bt.append(names[t])
    return Mesh(
        vertices=vertices,
        cells=cells,
        geom_vertices=geom_vertices,
        geom_edge=geom_edge,
        geom_radius=geom_radius,
        pre_A=pre_A,
        pre_b=pre_b,
        boundary_edges=np.array(be, dtype=np.int64).reshape(-1, 2),
        boundary_tags=np.array(bt, dtype=np.int64),
        R_tr=R_tr,
        obstacle_radius=None if ob == "none" else float(ob),
    )


def straight_mesh(vertices, cells, R_tr: Optional[float] = None) -> Mesh:
    """Affine mesh from explicit triangles; every boundary edge is tagged ``Gamma_tr``.

    Useful for small patches in tests and for polynomial-reproduction checks,
    where no cell is curved.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64).copy()
    v = vertices[cells]
    cross = (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1]) - (v[:, 1, 1] - v[:, 0, 1]) * (v[:, 2, 0] - v[:, 0, 0])
    cells[cross < 0] = cells[cross < 0][:, [0, 2, 1]]
    pairs = np.sort(np.concatenate([cells[:, [a, b]] for a, b in LOCAL_EDGES]), axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    bedges = uniq[counts == 1]
    nc = cells.shape[0]
    return Mesh(
        vertices=vertices,
        cells=cells,
        geom_vertices=vertices[cells].copy(),
        geom_edge=-np.ones(nc, dtype=np.int64),
        geom_radius=np.zeros(nc),
        pre_A=np.broadcast_to(np.eye(2), (nc, 2, 2)).copy(),
        pre_b=np.zeros((nc, 2)),
        boundary_edges=bedges,
        boundary_tags=np.zeros(bedges.shape[0], dtype=np.int64),
        R_tr=float(np.linalg.norm(vertices, axis=1).max() if R_tr is None else R_tr),
    )
