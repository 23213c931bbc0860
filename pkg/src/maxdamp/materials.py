"""Material tensors, mass matrices, collar geometry, and hypothesis checks.

Permittivity and permeability come from a fixed family of presets so their
radial derivatives are available analytically; conductivity is an isotropic
profile supported on the boundary collar N_a.  Mass matrices use
cell-centered sampling with diagonal lumping chosen so that diagonal tensors
reduce to the classic Yee weights exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import AXES, DeRhamComplex, StaggeredGrid
from .linalg import lanczos_extreme


class MaterialError(ValueError):
    """Preset produced an inadmissible tensor."""


PRESET_KINDS = ("constant", "radial_growth", "radial_decay", "diag_aniso", "rotated_aniso")
_PRESET_NPARAMS = {
    "constant": 1,
    "radial_growth": 2,
    "radial_decay": 1,
    "diag_aniso": 3,
    "rotated_aniso": 4,  # three diagonal values plus rotation angle (degrees, about z)
}


@dataclass(frozen=True)
class MaterialPreset:
    """Symmetric 3x3 tensor field on the closed box, with analytic radial derivative."""

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in PRESET_KINDS:
            raise MaterialError(f"unknown material preset {self.kind!r}")
        want = _PRESET_NPARAMS[self.kind]
        if len(self.params) != want:
            raise MaterialError(f"preset {self.kind!r} takes {want} parameters, got {len(self.params)}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def _base_matrix(self) -> np.ndarray:
        if self.kind == "diag_aniso":
            return np.diag(self.params)
        if self.kind == "rotated_aniso":
            d1, d2, d3, angle = self.params
            t = np.deg2rad(angle)
            R = np.array(
                [[np.cos(t), -np.sin(t), 0.0], [np.sin(t), np.cos(t), 0.0], [0.0, 0.0, 1.0]]
            )
            return R @ np.diag([d1, d2, d3]) @ R.T
        raise AssertionError(self.kind)

    def tensor(self, points: np.ndarray, x0: np.ndarray) -> np.ndarray:
        """Tensor values at points, shape (N, 3, 3)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        N = pts.shape[0]
        eye = np.eye(3)
        if self.kind == "constant":
            out = np.broadcast_to(self.params[0] * eye, (N, 3, 3)).copy()
        elif self.kind in ("diag_aniso", "rotated_aniso"):
            out = np.broadcast_to(self._base_matrix(), (N, 3, 3)).copy()
        elif self.kind == "radial_growth":
            c0, c1 = self.params
            r2 = ((pts - x0) ** 2).sum(axis=1)
            out = (c0 + c1 * r2)[:, None, None] * eye
        elif self.kind == "radial_decay":
            c = self.params[0]
            r2 = ((pts - x0) ** 2).sum(axis=1)
            out = np.exp(-c * r2)[:, None, None] * eye
        else:
            raise AssertionError(self.kind)
        return out

    def tensor_tilde(self, points: np.ndarray, x0: np.ndarray) -> np.ndarray:
        """Non-trapping combination: tensor + radial directional derivative."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        N = pts.shape[0]
        eye = np.eye(3)
        if self.kind in ("constant", "diag_aniso", "rotated_aniso"):
            return self.tensor(pts, x0)
        r2 = ((pts - x0) ** 2).sum(axis=1)
        if self.kind == "radial_growth":
            c0, c1 = self.params
            return (c0 + 3.0 * c1 * r2)[:, None, None] * eye
        if self.kind == "radial_decay":
            c = self.params[0]
            return ((1.0 - 2.0 * c * r2) * np.exp(-c * r2))[:, None, None] * eye
        raise AssertionError(self.kind)


@dataclass(frozen=True)
class SigmaSpec:
    """Conductivity: isotropic profile of strength sigma0 on the collar N_a."""

    sigma0: float
    a: float
    profile: str = "indicator"

    def __post_init__(self):
        if self.sigma0 < 0:
            raise MaterialError(f"sigma0 must be >= 0, got {self.sigma0}")
        if self.profile not in ("indicator", "smoothstep"):
            raise MaterialError(f"unknown sigma profile {self.profile!r}")

    def values(self, dist: np.ndarray) -> np.ndarray:
        """Scalar sigma at points with given boundary distance (ties inside)."""
        inside = dist < self.a * (1.0 + 1e-12)
        if self.profile == "indicator":
            return np.where(inside, self.sigma0, 0.0)
        t = np.clip(dist / self.a, 0.0, 1.0)
        ramp = 1.0 - (3.0 * t * t - 2.0 * t * t * t)
        return np.where(inside, self.sigma0 * ramp, 0.0)


@dataclass
class NonTrapReport:
    eta_eps: float
    eta_mu: float
    worst_point: np.ndarray
    passes: bool

    def __bool__(self) -> bool:
        return self.passes


@dataclass
class SigmaGapReport:
    passes: bool
    undamped: bool
    offending_cells: list

    def __bool__(self) -> bool:
        return self.passes


def collar_mask(grid: StaggeredGrid, a: float):
    """(edge mask, cell mask, upsilon cell mask) for the collar N_a.

    A DoF is in N_a iff its location is at sup-norm distance < a from the
    box boundary (ties within rounding count as inside, so a = h/2 marks the
    outermost cell layer); upsilon is the complement of the marked cells.
    """
    if not (0.0 < a < grid.length / 2):
        raise MaterialError(f"collar width must satisfy 0 < a < length/2, got a={a}")
    tie = 1e-12 * grid.h
    edge_mask = grid.boundary_distance(grid.edge_midpoints()) < a + tie
    cell_mask = grid.boundary_distance(grid.cell_centers()) < a + tie
    return edge_mask, cell_mask, ~cell_mask


def _edge_cell_incidence(grid: StaggeredGrid) -> sp.csr_matrix:
    """Sparse (edges x cells) map: 1 where the edge bounds the cell."""
    n = grid.n
    k, j, i = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    cells = grid.cell_index(i, j, k)
    rows, cols = [], []
    for axis in AXES:
        t1, t2 = (axis + 1) % 3, (axis + 2) % 3
        for d1 in (0, 1):
            for d2 in (0, 1):
                idx = [i.copy(), j.copy(), k.copy()]
                idx[t1] = idx[t1] + d1
                idx[t2] = idx[t2] + d2
                rows.append(grid.edge_index(axis, idx[0], idx[1], idx[2]))
                cols.append(cells)
    data = np.ones(sum(r.size for r in rows))
    return sp.csr_matrix(
        (data, (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.edge_count, grid.cell_count),
    )


def _face_cell_incidence(grid: StaggeredGrid) -> sp.csr_matrix:
    n = grid.n
    k, j, i = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    cells = grid.cell_index(i, j, k)
    rows, cols = [], []
    for axis in AXES:
        for d in (0, 1):
            idx = [i.copy(), j.copy(), k.copy()]
            idx[axis] = idx[axis] + d
            rows.append(grid.face_index(axis, idx[0], idx[1], idx[2]))
            cols.append(cells)
    data = np.ones(sum(r.size for r in rows))
    return sp.csr_matrix(
        (data, (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.face_count, grid.cell_count),
    )


def _edge_axis_of(grid: StaggeredGrid) -> np.ndarray:
    return np.repeat(np.arange(3), grid.edge_count_per_axis)


def _face_axis_of(grid: StaggeredGrid) -> np.ndarray:
    return np.repeat(np.arange(3), grid.face_count_per_axis)


def _assemble_mass(grid, incidence, axis_of, tensors, share):
    """Cell-quadrature mass matrix on edges (share=4) or faces (share=2).

    Diagonal tensor entries are lumped onto the DoFs of each cell; symmetric
    off-diagonal entries couple the axis families through the cell averages.
    """
    h3 = grid.h**3
    inc = {ax: incidence.multiply((axis_of == ax)[:, None]).tocsc() for ax in AXES}
    diag = np.zeros(incidence.shape[0])
    for ax in AXES:
        w = tensors[:, ax, ax] * (h3 / share)
        diag += inc[ax] @ w
    off_any = any(np.abs(tensors[:, a, b]).max() > 0 for a in AXES for b in AXES if a != b)
    M = sp.diags(diag, format="csr")
    if off_any:
        for a in AXES:
            for b in AXES:
                if a >= b:
                    continue
                w = tensors[:, a, b]
                if np.abs(w).max() == 0.0:
                    continue
                W = sp.diags(w * (h3 / share**2))
                cross = inc[a] @ W @ inc[b].T
                M = M + cross + cross.T
    M = M.tocsr()
    M.sum_duplicates()
    return M


@dataclass
class MaterialAssembly:
    """Sampled tensors, SPD mass matrices, and collar bookkeeping."""

    grid: StaggeredGrid
    eps_preset: MaterialPreset
    mu_preset: MaterialPreset
    sigma: SigmaSpec
    x0: np.ndarray
    M_eps: sp.csr_matrix
    M_mu: sp.csr_matrix
    M_sigma: sp.csr_matrix
    M1_edge: sp.csr_matrix
    M1_face: sp.csr_matrix
    sigma_cells: np.ndarray
    collar_edge_mask: np.ndarray
    collar_cell_mask: np.ndarray
    upsilon_cell_mask: np.ndarray
    eps_diag: bool
    mu_diag: bool
    _eps_solve: object = field(default=None, repr=False)
    _mu_solve: object = field(default=None, repr=False)
    _eps_pec_solve: object = field(default=None, repr=False)
    _eps_pec_ret: object = field(default=None, repr=False)

    def minv_eps(self, v: np.ndarray) -> np.ndarray:
        if self.eps_diag:
            return v / self.M_eps.diagonal()
        if self._eps_solve is None:
            self._eps_solve = spla.splu(self.M_eps.tocsc())
        return self._eps_solve.solve(v)

    def minv_eps_pec(self, v: np.ndarray) -> np.ndarray:
        """Solve M_eps on PEC-retained edges only (zero on constrained DoFs).

        For non-diagonal tensors the full inverse would leak the constrained
        rows' couplings into interior entries; the physical system lives on
        the retained subspace.
        """
        from .grid import pec_edge_mask_cached

        mask = pec_edge_mask_cached(self.grid)
        if self.eps_diag:
            return np.where(mask, v / self.M_eps.diagonal(), 0.0)
        if self._eps_pec_solve is None:
            ret = np.nonzero(mask)[0]
            self._eps_pec_ret = ret
            self._eps_pec_solve = spla.splu(self.M_eps[ret][:, ret].tocsc())
        out = np.zeros_like(v)
        out[self._eps_pec_ret] = self._eps_pec_solve.solve(v[self._eps_pec_ret])
        return out

    def minv_mu(self, v: np.ndarray) -> np.ndarray:
        if self.mu_diag:
            return v / self.M_mu.diagonal()
        if self._mu_solve is None:
            self._mu_solve = spla.splu(self.M_mu.tocsc())
        return self._mu_solve.solve(v)

    @property
    def sigma_edge_support(self) -> np.ndarray:
        """Edges carrying conductivity weight (the discrete omega on edges)."""
        return self.M_sigma.diagonal() > 0.0

    def upsilon_interior_nodes(self, cplx: DeRhamComplex) -> np.ndarray:
        """Nodes all of whose incident edges lie outside omega."""
        touch = (abs(cplx.G).T @ self.sigma_edge_support.astype(float)) > 0.0
        return cplx.interior_node_mask & ~touch

    def kernel_free_nodes(self, cplx: DeRhamComplex) -> np.ndarray:
        """Interior nodes not touching any sigma-supported cell.

        Potentials supported here generate the electric part of the
        equilibrium kernel: gradients vanishing on the collar.
        """
        inc = _edge_cell_incidence(self.grid)
        sigma_cells = self.sigma_cells > 0.0
        edge_touch = (inc @ sigma_cells.astype(float)) > 0.0
        node_touch = (abs(cplx.G).T @ edge_touch.astype(float)) > 0.0
        return cplx.interior_node_mask & ~node_touch


def sample_materials(
    grid: StaggeredGrid,
    eps_preset: MaterialPreset,
    mu_preset: MaterialPreset,
    sigma: SigmaSpec,
    x0=(0.5, 0.5, 0.5),
    spd_check: bool = True,
) -> MaterialAssembly:
    """Sample tensors at cell centers and build the mass matrices.

    Raises MaterialError naming the sample point if a preset fails to be
    positive definite anywhere on the closed box.
    """
    if not (0.0 < sigma.a < grid.length / 2):
        raise MaterialError(f"collar width must satisfy 0 < a < length/2, got a={sigma.a}")
    x0 = np.asarray(x0, dtype=float)
    centers = grid.cell_centers()
    eps_c = eps_preset.tensor(centers, x0)
    mu_c = mu_preset.tensor(centers, x0)
    for name, T in (("epsilon", eps_c), ("mu", mu_c)):
        lam = np.linalg.eigvalsh(T)
        bad = np.nonzero(lam[:, 0] <= 0.0)[0]
        if bad.size:
            pt = centers[bad[0]]
            raise MaterialError(
                f"{name} preset is not positive definite at point ({pt[0]:.6g}, {pt[1]:.6g}, {pt[2]:.6g})"
            )

    dist = grid.boundary_distance(centers)
    sig_c = sigma.values(dist)

    inc_e = _edge_cell_incidence(grid)
    inc_f = _face_cell_incidence(grid)
    eax = _edge_axis_of(grid)
    fax = _face_axis_of(grid)

    M_eps = _assemble_mass(grid, inc_e, eax, eps_c, share=4)
    M_mu = _assemble_mass(grid, inc_f, fax, mu_c, share=2)
    ident = np.broadcast_to(np.eye(3), (grid.cell_count, 3, 3))
    M1_edge = _assemble_mass(grid, inc_e, eax, ident, share=4)
    M1_face = _assemble_mass(grid, inc_f, fax, ident, share=2)
    sig_t = sig_c[:, None, None] * np.eye(3)
    M_sigma = _assemble_mass(grid, inc_e, eax, sig_t, share=4)

    edge_mask, cell_mask, ups_mask = collar_mask(grid, sigma.a)

    eps_diag = eps_preset.kind not in ("rotated_aniso",)
    mu_diag = mu_preset.kind not in ("rotated_aniso",)

    assembly = MaterialAssembly(
        grid=grid,
        eps_preset=eps_preset,
        mu_preset=mu_preset,
        sigma=sigma,
        x0=x0,
        M_eps=M_eps,
        M_mu=M_mu,
        M_sigma=M_sigma,
        M1_edge=M1_edge,
        M1_face=M1_face,
        sigma_cells=sig_c,
        collar_edge_mask=edge_mask,
        collar_cell_mask=cell_mask,
        upsilon_cell_mask=ups_mask,
        eps_diag=eps_diag,
        mu_diag=mu_diag,
    )
    if spd_check:
        verify_spd(assembly)
    return assembly


def verify_spd(assembly: MaterialAssembly, seed: int = 7, quotients: int = 200, lanczos_steps: int = 50):
    """Probabilistic SPD check used at build time.

    Diagonal matrices are checked exactly; otherwise 200 random Rayleigh
    quotients must be positive and the smallest Ritz value from 50 Lanczos
    steps must stay above zero.
    """
    rng = np.random.default_rng(seed)
    for name, M, is_diag in (
        ("M_eps", assembly.M_eps, assembly.eps_diag),
        ("M_mu", assembly.M_mu, assembly.mu_diag),
    ):
        if is_diag:
            if M.diagonal().min() <= 0.0:
                raise MaterialError(f"{name} has a non-positive diagonal entry")
            continue
        dim = M.shape[0]
        for _ in range(quotients):
            v = rng.standard_normal(dim)
            q = float(v @ (M @ v))
            if q <= 0.0:
                raise MaterialError(f"{name} failed a Rayleigh quotient positivity check")
        vals, _, _ = lanczos_extreme(
            lambda v: M @ v, lambda u, v: float(u @ v), rng.standard_normal(dim), lanczos_steps
        )
        if vals[0] <= 0.0:
            raise MaterialError(f"{name} smallest Ritz value {vals[0]:.3e} is not positive")
    if (assembly.M_sigma.diagonal() < 0.0).any():
        raise MaterialError("M_sigma has a negative entry")


def check_nontrapping(
    eps_preset: MaterialPreset,
    mu_preset: MaterialPreset,
    x0,
    grid: StaggeredGrid,
) -> NonTrapReport:
    """Largest eta with tensor_tilde >= eta * tensor over all cell centers."""
    x0 = np.asarray(x0, dtype=float)
    centers = grid.cell_centers()
    etas, points = [], []
    for preset in (eps_preset, mu_preset):
        T = preset.tensor(centers, x0)
        Tt = preset.tensor_tilde(centers, x0)
        eta_min = np.inf
        pt = centers[0]
        for idx in range(centers.shape[0]):
            lam = scipy.linalg.eigh(Tt[idx], T[idx], eigvals_only=True)[0]
            if lam < eta_min:
                eta_min = lam
                pt = centers[idx]
        etas.append(float(eta_min))
        points.append(pt)
    eta_eps, eta_mu = etas
    worst = points[0] if eta_eps <= eta_mu else points[1]
    return NonTrapReport(
        eta_eps=eta_eps,
        eta_mu=eta_mu,
        worst_point=np.asarray(worst),
        passes=min(eta_eps, eta_mu) > 0.0,
    )


def check_sigma_gap(assembly: MaterialAssembly, sigma0: float) -> SigmaGapReport:
    """Verify the conductivity floor: sigma >= sigma0 on omega, zero outside."""
    sig = assembly.sigma_cells
    omega = sig > 0.0
    if not omega.any():
        return SigmaGapReport(passes=True, undamped=True, offending_cells=[])
    offending = np.nonzero(omega & (sig < sigma0))[0]
    outside_bad = np.nonzero(~omega & (sig != 0.0))[0]
    bad = list(offending) + list(outside_bad)
    return SigmaGapReport(passes=len(bad) == 0, undamped=False, offending_cells=bad)
