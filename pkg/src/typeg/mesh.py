"""Meshes on intervals and planar triangulations, and P1 finite elements.

A :class:`Mesh` is a validated node/element table.  :func:`assemble_fem`
builds the diagonal mass matrix ``C``, the stiffness matrix ``G`` and the
dual-cell areas ``h`` used to discretise white noise; natural (Neumann)
boundary conditions are implicit.  :func:`observation_matrix` evaluates the
piecewise-linear basis at arbitrary points.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "MeshError",
    "Mesh",
    "FemMatrices",
    "load_mesh",
    "save_mesh",
    "interval_mesh",
    "grid_mesh",
    "assemble_fem",
    "observation_matrix",
    "padded_bounds",
    "padded_mesh",
]

MASS_TYPES = ("lumped", "diagonal_consistent")


class MeshError(ValueError):
    """Invalid mesh or query location."""


def _check_1d(nodes, elements):
    x = nodes[:, 0]
    lo = np.minimum(x[elements[:, 0]], x[elements[:, 1]])
    hi = np.maximum(x[elements[:, 0]], x[elements[:, 1]])
    if np.any(hi - lo <= 0):
        bad = int(np.argmax(hi - lo <= 0))
        raise MeshError(f"segment {bad} has zero length")
    order = np.argsort(lo, kind="stable")
    tol = 1e-12 * max(1.0, float(np.ptp(x)))
    if np.any(lo[order][1:] < hi[order][:-1] - tol):
        raise MeshError("segments overlap: mesh is not conforming")
    for e, (a, b) in enumerate(zip(lo, hi)):
        inside = (x > a + tol) & (x < b - tol)
        if inside.any():
            raise MeshError(f"node {int(np.argmax(inside))} lies inside segment {e}")


def _signed_areas(nodes, elements):
    p0, p1, p2 = (nodes[elements[:, k]] for k in range(3))
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def _check_2d(nodes, elements):
    area = _signed_areas(nodes, elements)
    scale = max(1.0, float(np.ptp(nodes, axis=0).max())) ** 2
    if np.any(np.abs(area) <= 1e-14 * scale):
        bad = int(np.argmax(np.abs(area) <= 1e-14 * scale))
        raise MeshError(f"triangle {bad} is degenerate")
    edges = np.concatenate([elements[:, [0, 1]], elements[:, [1, 2]], elements[:, [2, 0]]])
    opposite = np.concatenate([elements[:, 2], elements[:, 0], elements[:, 1]])
    edges = np.sort(edges, axis=1)
    key = edges[:, 0].astype(np.int64) * len(nodes) + edges[:, 1]
    uniq, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("an edge is shared by more than two triangles")
    # interior edges: the two opposite vertices must lie on different sides
    order = np.argsort(inv, kind="stable")
    inv_sorted = inv[order]
    pair = np.flatnonzero(inv_sorted[1:] == inv_sorted[:-1])
    if pair.size:
        e1, e2 = order[pair], order[pair + 1]
        a, b = nodes[edges[e1, 0]], nodes[edges[e1, 1]]

        def side(q):
            return (b[:, 0] - a[:, 0]) * (q[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (q[:, 0] - a[:, 0])

        if np.any(side(nodes[opposite[e1]]) * side(nodes[opposite[e2]]) >= 0):
            raise MeshError("triangles sharing an edge overlap")
    # hanging nodes on boundary edges
    bnd = np.flatnonzero(counts[inv] == 1)
    a, b = nodes[edges[bnd, 0]], nodes[edges[bnd, 1]]
    d = b - a
    len2 = np.einsum("ij,ij->i", d, d)
    tol = 1e-10
    for start in range(0, len(bnd), 256):
        sl = slice(start, start + 256)
        rel = nodes[None, :, :] - a[sl, None, :]
        t = np.einsum("enk,ek->en", rel, d[sl]) / len2[sl, None]
        cross = rel[:, :, 0] * d[sl, None, 1] - rel[:, :, 1] * d[sl, None, 0]
        hit = (t > tol) & (t < 1 - tol) & (np.abs(cross) <= tol * len2[sl, None])
        if hit.any():
            e, node = np.argwhere(hit)[0]
            raise MeshError(f"node {int(node)} hangs on boundary edge {tuple(edges[bnd[start + e]])}")


@dataclass(frozen=True)
class Mesh:
    """Validated mesh.

    Parameters
    ----------
    nodes : array_like, shape (n, d)
        Node coordinates, d in {1, 2}.
    elements : array_like of int, shape (m, d + 1)
        0-based node indices of segments (d=1) or triangles (d=2).
    """

    nodes: np.ndarray
    elements: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        elements = np.asarray(self.elements)
        if nodes.ndim != 2 or nodes.shape[1] not in (1, 2):
            raise MeshError("nodes must have shape (n, 1) or (n, 2)")
        d = nodes.shape[1]
        if elements.ndim != 2 or elements.shape[1] != d + 1 or len(elements) == 0:
            raise MeshError(f"elements must have shape (m, {d + 1}) with m >= 1")
        if not np.all(np.isfinite(nodes)):
            raise MeshError("node coordinates must be finite")
        if not np.issubdtype(elements.dtype, np.integer):
            if not np.all(elements == np.round(elements)):
                raise MeshError("element indices must be integers")
        elements = elements.astype(np.int64)
        n = len(nodes)
        if elements.min() < 0 or elements.max() >= n:
            raise MeshError(f"element index out of range [0, {n})")
        if np.any(np.diff(np.sort(elements, axis=1), axis=1) == 0):
            raise MeshError("element repeats a node")
        if np.setdiff1d(np.arange(n), elements.ravel()).size:
            raise MeshError("mesh has nodes that belong to no element")
        if d == 1:
            _check_1d(nodes, elements)
        else:
            _check_2d(nodes, elements)
            flip = _signed_areas(nodes, elements) < 0
            elements = elements.copy()
            elements[flip] = elements[flip][:, [0, 2, 1]]
        nodes.setflags(write=False)
        elements.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)

    @property
    def dimension(self):
        return self.nodes.shape[1]

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def element_sizes(self):
        """Segment lengths (d=1) or triangle areas (d=2)."""
        if self.dimension == 1:
            x = self.nodes[:, 0]
            return np.abs(x[self.elements[:, 1]] - x[self.elements[:, 0]])
        return _signed_areas(self.nodes, self.elements)

    def bounds(self):
        """(lower, upper) corners of the bounding box."""
        return self.nodes.min(axis=0), self.nodes.max(axis=0)


def load_mesh(path):
    """Read a mesh file: header ``d n m``, n coordinate lines, m element lines."""
    try:
        with open(path) as fh:
            rows = [line.split() for line in fh if line.strip() and not line.lstrip().startswith("#")]
    except OSError as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc}") from exc
    if not rows or len(rows[0]) != 3:
        raise MeshError("mesh header must be 'd n m'")
    try:
        d, n, m = (int(v) for v in rows[0])
    except ValueError as exc:
        raise MeshError("mesh header must hold three integers") from exc
    if d not in (1, 2):
        raise MeshError(f"unsupported dimension {d}")
    body = rows[1:]
    if len(body) != n + m:
        raise MeshError(f"expected {n} node and {m} element lines, found {len(body)} lines")
    try:
        nodes = np.array([[float(v) for v in r] for r in body[:n]], dtype=np.float64)
        elements = np.array([[int(v) for v in r] for r in body[n:]], dtype=np.int64)
    except ValueError as exc:
        raise MeshError(f"malformed mesh line: {exc}") from exc
    if nodes.shape != (n, d):
        raise MeshError(f"node lines must have {d} coordinates")
    if elements.shape != (m, d + 1):
        raise MeshError(f"element lines must have {d + 1} indices")
    return Mesh(nodes, elements)


def save_mesh(mesh, path):
    """Write ``mesh`` in the format read by :func:`load_mesh`."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.dimension} {mesh.n_nodes} {mesh.n_elements}\n")
        for row in mesh.nodes:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        for row in mesh.elements:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def interval_mesh(a, b, n):
    """Uniform mesh of [a, b] with ``n`` nodes."""
    if n < 2 or not b > a:
        raise MeshError("interval mesh needs b > a and n >= 2")
    x = np.linspace(a, b, int(n))
    el = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    return Mesh(x[:, None], el)


def grid_mesh(x0, x1, y0, y1, nx, ny):
    """Regular triangulation of a rectangle with ``nx`` × ``ny`` nodes.

    Each grid cell is split along alternating diagonals so that the mesh
    has no preferred direction at the scale of two cells.
    """
    nx, ny = int(nx), int(ny)
    if nx < 2 or ny < 2 or not (x1 > x0 and y1 > y0):
        raise MeshError("grid mesh needs x1 > x0, y1 > y0 and at least 2 nodes per axis")
    xs, ys = np.linspace(x0, x1, nx), np.linspace(y0, y1, ny)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    i, j = i.ravel(), j.ravel()
    a = j * nx + i
    b, c, e = a + 1, a + nx, a + nx + 1
    flip = (i + j) % 2 == 1
    t1 = np.where(flip[:, None], np.column_stack([a, b, c]), np.column_stack([a, b, e]))
    t2 = np.where(flip[:, None], np.column_stack([b, e, c]), np.column_stack([a, e, c]))
    return Mesh(nodes, np.concatenate([t1, t2]))


@dataclass(frozen=True)
class FemMatrices:
    """Assembled P1 matrices.

    Attributes
    ----------
    C : scipy.sparse.csr_matrix
        Diagonal mass matrix.
    G : scipy.sparse.csr_matrix
        Stiffness matrix, symmetric positive semi-definite with zero row sums.
    h : ndarray
        Dual-cell measures, summing to the domain measure.
    mass : str
        ``"lumped"`` (C_ii = ∫φ_i) or ``"diagonal_consistent"`` (C_ii = ∫φ_i²).
    """

    C: sp.csr_matrix
    G: sp.csr_matrix
    h: np.ndarray
    mass: str = "lumped"
    mesh: Mesh = field(default=None, repr=False, compare=False)

    @property
    def n(self):
        return self.h.shape[0]

    @property
    def c_diag(self):
        return self.C.diagonal()


def assemble_fem(mesh, mass="lumped"):
    """Assemble mass, stiffness and dual-cell areas on ``mesh``.

    Parameters
    ----------
    mesh : Mesh
    mass : {"lumped", "diagonal_consistent"}
        Lumped mass uses ∫φ_i, which equals ``h``; the alternative keeps
        only the diagonal ∫φ_i² of the consistent mass matrix.
    """
    if mass not in MASS_TYPES:
        raise ValueError(f"mass must be one of {MASS_TYPES}")
    n = mesh.n_nodes
    el = mesh.elements
    size = mesh.element_sizes()
    if mesh.dimension == 1:
        inv = 1.0 / size
        local = np.stack([np.stack([inv, -inv], -1), np.stack([-inv, inv], -1)], 1)
        nv = 2
        h_share = size / 2.0
        self_mass = size / 3.0
    else:
        P = [mesh.nodes[el[:, k]] for k in range(3)]
        bcoef = np.stack([P[1][:, 1] - P[2][:, 1], P[2][:, 1] - P[0][:, 1], P[0][:, 1] - P[1][:, 1]], 1)
        ccoef = np.stack([P[2][:, 0] - P[1][:, 0], P[0][:, 0] - P[2][:, 0], P[1][:, 0] - P[0][:, 0]], 1)
        local = (bcoef[:, :, None] * bcoef[:, None, :] + ccoef[:, :, None] * ccoef[:, None, :]) / (4.0 * size[:, None, None])
        nv = 3
        h_share = size / 3.0
        self_mass = size / 6.0
    rows = np.repeat(el, nv, axis=1).ravel()
    cols = np.tile(el, (1, nv)).ravel()
    G = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    G.sum_duplicates()
    G = ((G + G.T) * 0.5).tocsr()
    h = np.bincount(el.ravel(), weights=np.repeat(h_share, nv), minlength=n)
    if mass == "lumped":
        cdiag = h.copy()
    else:
        cdiag = np.bincount(el.ravel(), weights=np.repeat(self_mass, nv), minlength=n)
    C = sp.diags(cdiag).tocsr()
    return FemMatrices(C=C, G=G, h=h, mass=mass, mesh=mesh)


def observation_matrix(mesh, locations, tol=1e-10):
    """Sparse matrix of basis functions evaluated at ``locations``.

    Parameters
    ----------
    mesh : Mesh
    locations : array_like, shape (m, d) or (m,) for d = 1
    tol : float
        Relative slack for points on the hull boundary.

    Returns
    -------
    scipy.sparse.csr_matrix, shape (m, n)
    """
    loc = np.asarray(locations, dtype=np.float64)
    d = mesh.dimension
    if loc.ndim == 1:
        loc = loc[:, None] if d == 1 else loc[None, :]
    if loc.ndim != 2 or loc.shape[1] != d:
        raise MeshError(f"locations must have {d} coordinate(s)")
    m = loc.shape[0]
    if m == 0:
        return sp.csr_matrix((0, mesh.n_nodes))
    if not np.all(np.isfinite(loc)):
        raise MeshError("locations must be finite")
    scale = max(1.0, float(np.ptp(mesh.nodes, axis=0).max()))
    if d == 1:
        x = mesh.nodes[:, 0]
        a, b = x[mesh.elements[:, 0]], x[mesh.elements[:, 1]]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        order = np.argsort(lo)
        lo_s, hi_s = lo[order], hi[order]
        q = loc[:, 0]
        k = np.clip(np.searchsorted(lo_s, q, side="right") - 1, 0, len(lo_s) - 1)
        # a point on a shared node may fall just left of the next segment
        outside = (q < lo_s[k] - tol * scale) | (q > hi_s[k] + tol * scale)
        if outside.any():
            i = int(np.argmax(outside))
            raise MeshError(f"location {loc[i].tolist()} lies outside the mesh")
        e = order[k]
        ta = np.clip((q - a[e]) / (b[e] - a[e]), 0.0, 1.0)
        rows = np.repeat(np.arange(m), 2)
        cols = mesh.elements[e].ravel()
        vals = np.column_stack([1.0 - ta, ta]).ravel()
    else:
        el = mesh.elements
        P0 = mesh.nodes[el[:, 0]]
        e1 = mesh.nodes[el[:, 1]] - P0
        e2 = mesh.nodes[el[:, 2]] - P0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        best = np.empty(m, np.int64)
        bary = np.empty((m, 3))
        chunk = max(1, 2_000_000 // max(1, len(el)))
        for start in range(0, m, chunk):
            qs = loc[start:start + chunk]
            r = qs[:, None, :] - P0[None, :, :]
            l1 = (r[:, :, 0] * e2[None, :, 1] - r[:, :, 1] * e2[None, :, 0]) / det
            l2 = (e1[None, :, 0] * r[:, :, 1] - e1[None, :, 1] * r[:, :, 0]) / det
            l0 = 1.0 - l1 - l2
            worst = np.minimum(np.minimum(l0, l1), l2)
            t = np.argmax(worst, axis=1)
            idx = np.arange(len(qs))
            if np.any(worst[idx, t] < -tol):
                i = start + int(np.argmax(worst[idx, t] < -tol))
                raise MeshError(f"location {loc[i].tolist()} lies outside the mesh")
            best[start:start + len(qs)] = t
            bary[start:start + len(qs)] = np.column_stack([l0[idx, t], l1[idx, t], l2[idx, t]])
        bary = np.clip(bary, 0.0, None)
        bary /= bary.sum(axis=1, keepdims=True)
        rows = np.repeat(np.arange(m), 3)
        cols = el[best].ravel()
        vals = bary.ravel()
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, mesh.n_nodes))
    A.sum_duplicates()
    return A


def padded_bounds(points, kappa_min, factor=2.0):
    """Bounding box of ``points`` padded by ``factor / kappa_min`` on every side."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if not kappa_min > 0 or factor < 0:
        raise ValueError("kappa_min must be positive and factor non-negative")
    pad = factor / kappa_min
    return pts.min(axis=0) - pad, pts.max(axis=0) + pad


def padded_mesh(points, spacing, kappa_min, factor=2.0):
    """Regular mesh covering the padded bounding box of ``points``.

    The padding of ``factor`` correlation ranges (range taken as
    1/κ_min) keeps the Neumann boundary away from the data, where it
    would otherwise inflate the variance.
    """
    lo, hi = padded_bounds(points, kappa_min, factor)
    counts = np.maximum(2, np.ceil((hi - lo) / spacing).astype(int) + 1)
    if len(lo) == 1:
        return interval_mesh(lo[0], hi[0], counts[0])
    return grid_mesh(lo[0], hi[0], lo[1], hi[1], counts[0], counts[1])
