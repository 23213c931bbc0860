"""Staggered grid on an axis-aligned box and the discrete differential complex.

Degrees of freedom follow the classic Yee placement: scalar potentials on
nodes, electric field on edges, magnetic flux on faces, charges on cells.
The chain operators

    G : nodes -> edges   (gradient)
    C : edges -> faces   (curl)
    D : faces -> cells   (divergence)

are incidence stencils scaled by 1/h.  Their compositions C@G and D@C cancel
at the integer-stencil level, so the composed sparse matrices are *bitwise*
zero; this is what the constraint-preservation guarantees downstream rely on.

Flat DoF ordering is axis-major, then k, j, i (i fastest), matching the
snapshot payload layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class GridError(ValueError):
    """Invalid grid parameters."""


class ShapeError(ValueError):
    """Vector does not match the expected DoF count."""


AXES = (0, 1, 2)


def _axis_dims(n: int, kind: str, axis: int) -> tuple[int, int, int]:
    """(ni, nj, nk) index ranges of one orientation family."""
    if kind == "edge":
        dims = [n + 1, n + 1, n + 1]
        dims[axis] = n
    elif kind == "face":
        dims = [n, n, n]
        dims[axis] = n + 1
    else:
        raise ValueError(kind)
    return dims[0], dims[1], dims[2]


@dataclass(frozen=True)
class StaggeredGrid:
    """Axis-aligned box mesh with per-orientation DoF enumeration."""

    n: int
    length: float = 1.0

    @property
    def h(self) -> float:
        return self.length / self.n

    # --- counts ------------------------------------------------------------
    @property
    def node_count(self) -> int:
        return (self.n + 1) ** 3

    @property
    def edge_count_per_axis(self) -> int:
        return self.n * (self.n + 1) ** 2

    @property
    def edge_count(self) -> int:
        return 3 * self.edge_count_per_axis

    @property
    def face_count_per_axis(self) -> int:
        return self.n * self.n * (self.n + 1)

    @property
    def face_count(self) -> int:
        return 3 * self.face_count_per_axis

    @property
    def cell_count(self) -> int:
        return self.n**3

    # --- index maps ---------------------------------------------------------
    def node_index(self, i, j, k):
        m = self.n + 1
        return (np.asarray(k) * m + np.asarray(j)) * m + np.asarray(i)

    def cell_index(self, i, j, k):
        return (np.asarray(k) * self.n + np.asarray(j)) * self.n + np.asarray(i)

    def edge_index(self, axis, i, j, k):
        ni, nj, _ = _axis_dims(self.n, "edge", axis)
        return axis * self.edge_count_per_axis + (np.asarray(k) * nj + np.asarray(j)) * ni + np.asarray(i)

    def face_index(self, axis, i, j, k):
        ni, nj, _ = _axis_dims(self.n, "face", axis)
        return axis * self.face_count_per_axis + (np.asarray(k) * nj + np.asarray(j)) * ni + np.asarray(i)

    def edge_tuple(self, flat: int) -> tuple[int, int, int, int]:
        axis, r = divmod(flat, self.edge_count_per_axis)
        ni, nj, _ = _axis_dims(self.n, "edge", axis)
        k, r = divmod(r, ni * nj)
        j, i = divmod(r, ni)
        return axis, i, j, k

    def face_tuple(self, flat: int) -> tuple[int, int, int, int]:
        axis, r = divmod(flat, self.face_count_per_axis)
        ni, nj, _ = _axis_dims(self.n, "face", axis)
        k, r = divmod(r, ni * nj)
        j, i = divmod(r, ni)
        return axis, i, j, k

    def node_tuple(self, flat: int) -> tuple[int, int, int]:
        m = self.n + 1
        k, r = divmod(flat, m * m)
        j, i = divmod(r, m)
        return i, j, k

    def cell_tuple(self, flat: int) -> tuple[int, int, int]:
        k, r = divmod(flat, self.n * self.n)
        j, i = divmod(r, self.n)
        return i, j, k

    # --- grids of index tuples (vectorized helpers) -------------------------
    def _family(self, kind: str, axis: int):
        ni, nj, nk = _axis_dims(self.n, kind, axis)
        k, j, i = np.meshgrid(np.arange(nk), np.arange(nj), np.arange(ni), indexing="ij")
        return i.ravel(), j.ravel(), k.ravel()

    # --- geometric locations -------------------------------------------------
    def node_positions(self) -> np.ndarray:
        m = self.n + 1
        k, j, i = np.meshgrid(np.arange(m), np.arange(m), np.arange(m), indexing="ij")
        return np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1) * self.h

    def edge_midpoints(self) -> np.ndarray:
        out = np.empty((self.edge_count, 3))
        for axis in AXES:
            i, j, k = self._family("edge", axis)
            pos = np.stack([i, j, k], axis=1).astype(float)
            pos[:, axis] += 0.5
            sl = slice(axis * self.edge_count_per_axis, (axis + 1) * self.edge_count_per_axis)
            out[sl] = pos * self.h
        return out

    def face_centers(self) -> np.ndarray:
        out = np.empty((self.face_count, 3))
        for axis in AXES:
            i, j, k = self._family("face", axis)
            pos = np.stack([i, j, k], axis=1).astype(float)
            for t in AXES:
                if t != axis:
                    pos[:, t] += 0.5
            sl = slice(axis * self.face_count_per_axis, (axis + 1) * self.face_count_per_axis)
            out[sl] = pos * self.h
        return out

    def cell_centers(self) -> np.ndarray:
        k, j, i = np.meshgrid(np.arange(self.n), np.arange(self.n), np.arange(self.n), indexing="ij")
        return (np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1) + 0.5) * self.h

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        """Sup-norm distance of points to the box boundary."""
        pts = np.atleast_2d(points)
        return np.minimum(pts, self.length - pts).min(axis=1)


def build_grid(n: int, length: float = 1.0) -> StaggeredGrid:
    """Validate parameters and construct the staggered grid.

    Requires n >= 2 (a single cell carries no interior DoFs) and length > 0.
    """
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise GridError(f"grid.n must be an integer >= 2, got {n!r}")
    if not length > 0:
        raise GridError(f"grid.length must be positive, got {length!r}")
    return StaggeredGrid(int(n), float(length))


@dataclass
class DeRhamComplex:
    """Discrete gradient/curl/divergence with PEC boundary masking.

    G, C, D are CSR matrices with entries +-1/h.  ``C`` has the columns of
    PEC-masked (tangential boundary) edges zeroed, so curl outputs never see
    constrained DoFs and boundary faces receive exactly zero circulation.
    ``CG`` and ``DC`` are the composed products, kept around because their
    entries cancel exactly and constraint checks route through them.
    """

    grid: StaggeredGrid
    G: sp.csr_matrix
    C: sp.csr_matrix
    C_full: sp.csr_matrix
    D: sp.csr_matrix
    Gf: sp.csr_matrix
    Cw: sp.csr_matrix
    CG: sp.csr_matrix
    DC: sp.csr_matrix
    DCw: sp.csr_matrix
    pec_edge_mask: np.ndarray
    boundary_face_mask: np.ndarray
    interior_node_mask: np.ndarray
    _Gt: sp.csr_matrix = field(default=None, repr=False)
    _Ct: sp.csr_matrix = field(default=None, repr=False)
    _Cwt: sp.csr_matrix = field(default=None, repr=False)

    @property
    def Gt(self) -> sp.csr_matrix:
        if self._Gt is None:
            self._Gt = self.G.T.tocsr()
        return self._Gt

    @property
    def Ct(self) -> sp.csr_matrix:
        if self._Ct is None:
            self._Ct = self.C.T.tocsr()
        return self._Ct

    @property
    def Cwt(self) -> sp.csr_matrix:
        if self._Cwt is None:
            self._Cwt = self.Cw.T.tocsr()
        return self._Cwt

    @property
    def dual_node_count(self) -> int:
        """Cells plus one ghost node per boundary face (domain of Gf)."""
        return self.Gf.shape[1]


def _gradient(grid: StaggeredGrid) -> sp.csr_matrix:
    n = grid.n
    rows, cols, vals = [], [], []
    for axis in AXES:
        i, j, k = grid._family("edge", axis)
        e = grid.edge_index(axis, i, j, k)
        tail = grid.node_index(i, j, k)
        step = [0, 0, 0]
        step[axis] = 1
        head = grid.node_index(i + step[0], j + step[1], k + step[2])
        rows.append(np.concatenate([e, e]))
        cols.append(np.concatenate([tail, head]))
        vals.append(np.concatenate([-np.ones(e.size), np.ones(e.size)]))
    M = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.edge_count, grid.node_count),
    )
    return M * (1.0 / grid.h)


def _curl(grid: StaggeredGrid) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for axis in AXES:
        a1 = (axis + 1) % 3  # first transverse axis
        a2 = (axis + 2) % 3  # second transverse axis
        i, j, k = grid._family("face", axis)
        f = grid.face_index(axis, i, j, k)
        ijk = [i, j, k]

        def shifted(t):
            s = [np.array(v) for v in ijk]
            s[t] = s[t] + 1
            return s

        # (curl e)_axis = d_{a1} e_{a2} - d_{a2} e_{a1}
        e_a2_hi = grid.edge_index(a2, *shifted(a1))
        e_a2_lo = grid.edge_index(a2, *ijk)
        e_a1_hi = grid.edge_index(a1, *shifted(a2))
        e_a1_lo = grid.edge_index(a1, *ijk)
        rows.append(np.concatenate([f, f, f, f]))
        cols.append(np.concatenate([e_a2_hi, e_a2_lo, e_a1_hi, e_a1_lo]))
        one = np.ones(f.size)
        vals.append(np.concatenate([one, -one, -one, one]))
    M = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.face_count, grid.edge_count),
    )
    return M * (1.0 / grid.h)


def _divergence(grid: StaggeredGrid) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    n = grid.n
    k, j, i = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    c = grid.cell_index(i, j, k)
    for axis in AXES:
        step = [0, 0, 0]
        step[axis] = 1
        lo = grid.face_index(axis, i, j, k)
        hi = grid.face_index(axis, i + step[0], j + step[1], k + step[2])
        rows.append(np.concatenate([c, c]))
        cols.append(np.concatenate([hi, lo]))
        one = np.ones(c.size)
        vals.append(np.concatenate([one, -one]))
    M = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.cell_count, grid.face_count),
    )
    return M * (1.0 / grid.h)


def _dual_gradient(grid: StaggeredGrid) -> sp.csr_matrix:
    """Face-valued gradient of dual potentials (cells + boundary ghosts).

    Interior faces difference the two neighboring cells; each boundary face
    gets its own exterior ghost node.  The range of this operator is exactly
    the null space of C^T on PEC-retained edges, i.e. the discrete version of
    curl-free magnetic fields with free boundary values.
    """
    n = grid.n
    rows, cols, vals = [], [], []
    ghost = grid.cell_count  # next fresh dual-node id
    ghost_rows, ghost_cols, ghost_vals = [], [], []
    for axis in AXES:
        i, j, k = grid._family("face", axis)
        f = grid.face_index(axis, i, j, k)
        pos = [i, j, k]
        interior = (pos[axis] > 0) & (pos[axis] < n)
        lo = [np.array(v)[interior] for v in pos]
        lo[axis] = lo[axis] - 1
        hi = [np.array(v)[interior] for v in pos]
        c_lo = grid.cell_index(*lo)
        c_hi = grid.cell_index(*hi)
        fi = f[interior]
        rows.append(np.concatenate([fi, fi]))
        cols.append(np.concatenate([c_hi, c_lo]))
        one = np.ones(fi.size)
        vals.append(np.concatenate([one, -one]))
        for side, sign in ((0, -1.0), (n, 1.0)):
            sel = np.array(pos[axis]) == side
            fb = f[sel]
            cell = [np.array(v)[sel] for v in pos]
            cell[axis] = np.full(fb.size, 0 if side == 0 else n - 1)
            cb = grid.cell_index(*cell)
            gid = np.arange(ghost, ghost + fb.size)
            ghost += fb.size
            # ghost sits outside: gradient points from inner cell outward
            ghost_rows.append(np.concatenate([fb, fb]))
            ghost_cols.append(np.concatenate([gid, cb]))
            one = np.ones(fb.size)
            ghost_vals.append(np.concatenate([sign * one, -sign * one]))
    M = sp.csr_matrix(
        (
            np.concatenate(vals + ghost_vals),
            (np.concatenate(rows + ghost_rows), np.concatenate(cols + ghost_cols)),
        ),
        shape=(grid.face_count, ghost),
    )
    return M * (1.0 / grid.h)


def _pec_edge_mask(grid: StaggeredGrid) -> np.ndarray:
    """True on retained (non-boundary-tangential) edges."""
    n = grid.n
    mask = np.empty(grid.edge_count, dtype=bool)
    for axis in AXES:
        i, j, k = grid._family("edge", axis)
        pos = [i, j, k]
        on_boundary = np.zeros(i.size, dtype=bool)
        for t in AXES:
            if t != axis:
                on_boundary |= (pos[t] == 0) | (pos[t] == n)
        sl = slice(axis * grid.edge_count_per_axis, (axis + 1) * grid.edge_count_per_axis)
        mask[sl] = ~on_boundary
    return mask


def _boundary_face_mask(grid: StaggeredGrid) -> np.ndarray:
    n = grid.n
    mask = np.empty(grid.face_count, dtype=bool)
    for axis in AXES:
        i, j, k = grid._family("face", axis)
        pos = [i, j, k]
        sl = slice(axis * grid.face_count_per_axis, (axis + 1) * grid.face_count_per_axis)
        mask[sl] = (pos[axis] == 0) | (pos[axis] == n)
    return mask


_PEC_MASK_CACHE: dict = {}


def pec_edge_mask_cached(grid: StaggeredGrid) -> np.ndarray:
    key = (grid.n, grid.length)
    mask = _PEC_MASK_CACHE.get(key)
    if mask is None:
        mask = _pec_edge_mask(grid)
        mask.setflags(write=False)
        _PEC_MASK_CACHE[key] = mask
    return mask


def _interior_node_mask(grid: StaggeredGrid) -> np.ndarray:
    m = grid.n + 1
    k, j, i = np.meshgrid(np.arange(m), np.arange(m), np.arange(m), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    inner = np.ones(grid.node_count, dtype=bool)
    for v in (i, j, k):
        inner &= (v > 0) & (v < grid.n)
    return inner


def assemble_complex(grid: StaggeredGrid) -> DeRhamComplex:
    """Assemble G, C, D, the dual gradient, masks, and composed products.

    The composed C@G and D@C are checked to have cancelled bitwise; a failure
    here would mean the incidence stencils are inconsistent.
    """
    G = _gradient(grid)
    C_full = _curl(grid)
    D = _divergence(grid)
    Gf = _dual_gradient(grid)
    pec = _pec_edge_mask(grid)

    P_e = sp.diags(pec.astype(float), format="csr")
    C = (C_full @ P_e).tocsr()
    C.eliminate_zeros()
    # volume-weighted curl pairing the e/h energies: h^3 C.  Its rows at
    # boundary faces are structurally zero (all four edges PEC masked).
    Cw = (grid.h**3 * C).tocsr()

    CG = (C_full @ G).tocsr()
    CG.sum_duplicates()
    DC = (D @ C_full).tocsr()
    DC.sum_duplicates()
    DCw = (D @ Cw).tocsr()
    DCw.sum_duplicates()
    if CG.nnz and np.abs(CG.data).max() != 0.0:
        raise AssertionError("C@G did not cancel exactly")
    if DC.nnz and np.abs(DC.data).max() != 0.0:
        raise AssertionError("D@C did not cancel exactly")
    if DCw.nnz and np.abs(DCw.data).max() != 0.0:
        raise AssertionError("D@Cw did not cancel exactly")

    return DeRhamComplex(
        grid=grid,
        G=G,
        C=C,
        C_full=C_full,
        D=D,
        Gf=Gf,
        Cw=Cw,
        CG=CG,
        DC=DC,
        DCw=DCw,
        pec_edge_mask=pec,
        boundary_face_mask=_boundary_face_mask(grid),
        interior_node_mask=_interior_node_mask(grid),
    )


def apply_pec(cplx: DeRhamComplex, e: np.ndarray) -> np.ndarray:
    """Zero tangential boundary edges; interior entries pass through."""
    e = np.asarray(e, dtype=float)
    if e.shape != (cplx.grid.edge_count,):
        raise ShapeError(f"expected edge vector of length {cplx.grid.edge_count}, got shape {e.shape}")
    out = np.where(cplx.pec_edge_mask, e, 0.0)
    return out
