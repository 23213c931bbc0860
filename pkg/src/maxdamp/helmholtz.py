"""Helmholtz decomposition and the homogeneous/inhomogeneous splitting.

The electric field splits as e = V + G p with p solving the weighted Poisson
problem (G^T M_eps G) p = G^T M_eps e on interior nodes (zero trace on the
single boundary component).  The trajectory then decomposes into a
conservative charge-free pair (V_h, W_h), an inhomogeneous pair (V_i, W_i)
driven by -M_sigma e - M_eps G dp/dt, and the gradient part G p.  The
inhomogeneous initial flux W_i0 is the minimal-mu-norm solution of
Cw^T W = M_sigma e0 + M_eps G dp(0), which makes the initial time derivative
of (V_i, W_i) vanish.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .evolution import ConsistencyError, FieldState, SimulationResult, energies, simulate
from .grid import DeRhamComplex
from .linalg import conjugate_gradient
from .materials import MaterialAssembly


class InterfaceError(ConsistencyError):
    """Mismatched time grids between coupled runs."""


@dataclass
class PotentialSolve:
    p: np.ndarray
    residual: float
    iterations: int


def sigma_free(assembly: MaterialAssembly) -> MaterialAssembly:
    """Copy of the assembly with the conductivity removed (the A_h generator)."""
    zero = sp.csr_matrix(assembly.M_sigma.shape)
    return replace(
        assembly,
        M_sigma=zero,
        sigma_cells=np.zeros_like(assembly.sigma_cells),
        _eps_solve=None,
        _mu_solve=None,
        _eps_pec_solve=None,
        _eps_pec_ret=None,
    )


class PotentialSolver:
    """Cached CG solver for the interior-node weighted Poisson operator."""

    def __init__(self, assembly: MaterialAssembly, cplx: DeRhamComplex, tol: float = 1e-12, max_iter: int = 10_000):
        self.assembly = assembly
        self.cplx = cplx
        self.tol = tol
        self.max_iter = max_iter
        self.interior = np.nonzero(cplx.interior_node_mask)[0]
        G_I = cplx.G[:, self.interior].tocsr()
        self.G_I = G_I
        self.L = (G_I.T @ assembly.M_eps @ G_I).tocsr()
        self._factor = spla.splu(self.L.tocsc())
        self.node_count = cplx.G.shape[1]

    def _solve(self, rhs_interior: np.ndarray, tol=None) -> PotentialSolve:
        tol = self.tol if tol is None else tol
        x, res, it = conjugate_gradient(
            lambda v: self.L @ v,
            rhs_interior,
            tol=tol,
            max_iter=self.max_iter,
            precond=self._factor.solve,
        )
        p = np.zeros(self.node_count)
        p[self.interior] = x
        return PotentialSolve(p=p, residual=res, iterations=it)

    def solve_p(self, e: np.ndarray, tol=None) -> PotentialSolve:
        rhs = self.G_I.T @ (self.assembly.M_eps @ e)
        return self._solve(rhs, tol)

    def solve_p_dot(self, e: np.ndarray, tol=None) -> PotentialSolve:
        rhs = -(self.G_I.T @ (self.assembly.M_sigma @ e))
        return self._solve(rhs, tol)

    def solve_p_ddot(self, de: np.ndarray, tol=None) -> PotentialSolve:
        return self.solve_p_dot(de, tol)

    def project_charge_free(self, e: np.ndarray, tol=None) -> np.ndarray:
        """Remove the gradient part: the weighted-L2-orthogonal projection."""
        return e - self.cplx.G @ self.solve_p(e, tol).p


def solve_p(e, assembly, cplx, tol: float = 1e-12) -> PotentialSolve:
    """Potential of the elliptic problem div_eps grad p = div_eps e, zero trace."""
    return PotentialSolver(assembly, cplx, tol).solve_p(e)


def solve_p_dot(e, assembly, cplx, tol: float = 1e-12) -> PotentialSolve:
    """Time derivative of the potential: rhs is the conductivity functional."""
    return PotentialSolver(assembly, cplx, tol).solve_p_dot(e)


class FluxProjector:
    """M_mu-orthogonal projection of face fields onto the flux-constrained space.

    The constraint space is {h : D(M_mu h) = 0, boundary flux 0}, whose
    M_mu-orthogonal complement is spanned by dual gradients Gf.  One dual
    node is pinned to remove the constant.
    """

    def __init__(self, assembly: MaterialAssembly, cplx: DeRhamComplex):
        self.assembly = assembly
        self.cplx = cplx
        self.keep = np.arange(1, cplx.Gf.shape[1])
        Gf_k = cplx.Gf[:, self.keep].tocsr()
        self.Gf_k = Gf_k
        self._factor = spla.splu((Gf_k.T @ assembly.M_mu @ Gf_k).tocsc())

    def project(self, h: np.ndarray) -> np.ndarray:
        psi = self._factor.solve(self.Gf_k.T @ (self.assembly.M_mu @ h))
        return h - self.Gf_k @ psi

    def complement(self, h: np.ndarray) -> np.ndarray:
        """The curl-free (dual gradient) component removed by project()."""
        psi = self._factor.solve(self.Gf_k.T @ (self.assembly.M_mu @ h))
        return self.Gf_k @ psi


class FluxLifter:
    """Minimal-mu-norm solve of Cw^T W = rhs via CG on Cw^T M_mu^{-1} Cw."""

    def __init__(self, assembly: MaterialAssembly, cplx: DeRhamComplex, max_iter: int = 20_000):
        self.assembly = assembly
        self.cplx = cplx
        self.max_iter = max_iter
        self.ret = np.nonzero(cplx.pec_edge_mask)[0]
        C_red = cplx.Cw[:, self.ret].tocsr()
        self.C_red = C_red
        inv_mu_d = sp.diags(1.0 / assembly.M_mu.diagonal())
        K_approx = (C_red.T @ inv_mu_d @ C_red).tocsr()
        # shifted factorization: the operator is singular on gradients
        shift = 1e-3 * K_approx.diagonal().mean()
        M1_red = assembly.M1_edge[self.ret][:, self.ret].tocsr()
        self._factor = spla.splu((K_approx + shift * M1_red).tocsc())

    def lift(self, rhs: np.ndarray, tol: float) -> tuple[np.ndarray, float, int]:
        rhs_red = rhs[self.ret]

        def apply(x):
            return self.C_red.T @ self.assembly.minv_mu(self.C_red @ x)

        lam, res, it = conjugate_gradient(
            apply, rhs_red, tol=tol, max_iter=self.max_iter, precond=self._factor.solve
        )
        W = self.assembly.minv_mu(self.C_red @ lam)
        return W, res, it


def build_Wi0(e0, assembly, cplx, tol: float = 1e-12, pdot0: np.ndarray | None = None):
    """Initial magnetic correction W_i0 with curl equal to the inhomogeneity.

    Returns (W_i0 face vector, residual, iterations).  Raises ConsistencyError
    if the compatibility condition (weak divergence of the right side) fails.
    """
    if pdot0 is None:
        pdot0 = PotentialSolver(assembly, cplx, tol).solve_p_dot(e0).p
    rhs = assembly.M_sigma @ e0 + assembly.M_eps @ (cplx.G @ pdot0)
    compat = cplx.Gt @ rhs
    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    if np.linalg.norm(compat[cplx.interior_node_mask]) > 10.0 * tol * scale:
        raise ConsistencyError(
            f"W_i0 compatibility residual {np.linalg.norm(compat[cplx.interior_node_mask]):.3e} "
            f"exceeds 10*tol*|rhs|"
        )
    if scale <= 1e-300 or not rhs.any():
        return np.zeros(cplx.grid.face_count), 0.0, 0
    W, res, it = FluxLifter(assembly, cplx).lift(rhs, tol)
    return W, res, it


@dataclass
class SplitTrajectory:
    """Recorded subsystem trajectories and reconstruction residuals."""

    full: SimulationResult
    hom: SimulationResult
    inh: SimulationResult
    p0: np.ndarray
    pdot0: np.ndarray
    wi0: np.ndarray
    p_records: list
    residuals: np.ndarray
    init_derivative_norm: float
    times: np.ndarray


def _check_charge_free(e, assembly, cplx, tol, what: str, scale: float | None = None):
    rho = (cplx.Gt @ (assembly.M_eps @ e))[cplx.interior_node_mask]
    own = float(np.sqrt(e @ (assembly.M_eps @ e))) / cplx.grid.h
    scale = max(own, scale if scale is not None else 0.0, 1e-300)
    if np.linalg.norm(rho) > tol * scale:
        raise ConsistencyError(f"{what} is not discretely charge-free: |rho| = {np.linalg.norm(rho):.3e}")


def evolve_homogeneous(
    initial: FieldState,
    assembly: MaterialAssembly,
    cplx: DeRhamComplex,
    dt: float,
    T: float,
    record_every: int = 1,
    tol: float = 1e-10,
    solver_tol: float = 1e-12,
    check_scale: float | None = None,
) -> SimulationResult:
    """Conservative sigma-free evolution of a charge-free pair.

    ``check_scale`` sets the reference magnitude for the admissibility
    checks; callers splitting a larger field pass its norm so that a nearly
    vanishing subsystem part is still accepted.
    """
    _check_charge_free(initial.e, assembly, cplx, tol, "homogeneous initial field", check_scale)
    div_b = initial.flux_divergence(cplx)
    scale = max(
        float(np.linalg.norm(initial.flux(cplx))) / cplx.grid.h,
        check_scale if check_scale is not None else 0.0,
        1e-300,
    )
    if np.linalg.norm(div_b) > tol * scale:
        raise ConsistencyError(f"homogeneous initial flux carries divergence {np.linalg.norm(div_b):.3e}")
    asm_h = sigma_free(assembly)
    return simulate(
        initial,
        asm_h,
        cplx,
        dt,
        T,
        record_every=record_every,
        solver_tol=solver_tol,
        record_states=True,
    )


def evolve_inhomogeneous(
    wi0: np.ndarray,
    forcing: np.ndarray,
    assembly: MaterialAssembly,
    cplx: DeRhamComplex,
    dt: float,
    T: float,
    record_every: int = 1,
    solver_tol: float = 1e-12,
    forcing_t0: np.ndarray | None = None,
    tol: float = 1e-9,
) -> SimulationResult:
    """Forced sigma-free evolution from (0, W_i0); forcing sampled at midpoints.

    When the t=0 forcing is supplied, the initial derivative of the pair is
    checked to vanish (the defining property of W_i0).
    """
    nsteps = int(round(T / dt))
    if forcing.shape[0] != nsteps:
        raise InterfaceError(
            f"forcing has {forcing.shape[0]} steps but the time grid needs {nsteps}"
        )
    asm_h = sigma_free(assembly)
    initial = FieldState.from_fields(np.zeros(cplx.grid.edge_count), wi0, asm_h)
    if forcing_t0 is not None:
        dv0 = asm_h.minv_eps_pec(cplx.Cwt @ wi0 + forcing_t0)
        dw0 = -asm_h.minv_mu(cplx.Cw @ initial.e)
        nrm = np.sqrt(
            float(dv0 @ (asm_h.M_eps @ dv0)) + float(dw0 @ (asm_h.M_mu @ dw0))
        )
        scale = max(float(np.linalg.norm(forcing_t0)), 1e-300)
        if nrm > 10.0 * tol * scale:
            raise ConsistencyError(f"initial derivative of the inhomogeneous pair is {nrm:.3e}")
    return simulate(
        initial,
        asm_h,
        cplx,
        dt,
        T,
        forcing=forcing,
        record_every=record_every,
        solver_tol=solver_tol,
        record_states=True,
    )


def run_split(
    initial: FieldState,
    assembly: MaterialAssembly,
    cplx: DeRhamComplex,
    dt: float,
    T: float,
    record_every: int = 1,
    solver_tol: float = 1e-12,
    tol: float = 1e-10,
) -> SplitTrajectory:
    """Full decomposition pipeline: simulate, split, co-evolve, reconstruct."""
    pot = PotentialSolver(assembly, cplx, tol=solver_tol)
    mids = []

    def collect(m, info, state, dstate):
        mids.append(info.e_mid)

    full = simulate(
        initial,
        assembly,
        cplx,
        dt,
        T,
        record_every=record_every,
        solver_tol=solver_tol,
        record_states=True,
        on_step=collect,
    )

    e0 = initial.e
    p0 = pot.solve_p(e0).p
    pdot0 = pot.solve_p_dot(e0).p
    wi0, _, _ = build_Wi0(e0, assembly, cplx, tol=solver_tol, pdot0=pdot0)

    # forcing at midpoint times, from the stored midpoint electric fields
    nsteps = len(mids)
    forcing = np.empty((nsteps, cplx.grid.edge_count))
    for m, e_mid in enumerate(mids):
        pd = pot.solve_p_dot(e_mid).p
        forcing[m] = -(assembly.M_sigma @ e_mid) - assembly.M_eps @ (cplx.G @ pd)
    forcing_t0 = -(assembly.M_sigma @ e0) - assembly.M_eps @ (cplx.G @ pdot0)

    hom_initial = FieldState.from_flux(
        e0 - cplx.G @ p0, initial.flux(cplx) - assembly.M_mu @ wi0, assembly
    )
    full_scale = float(np.sqrt(energies(initial, None, assembly)[0])) / cplx.grid.h
    hom = evolve_homogeneous(
        hom_initial,
        assembly,
        cplx,
        dt,
        T,
        record_every=record_every,
        tol=tol,
        solver_tol=solver_tol,
        check_scale=full_scale,
    )
    inh = evolve_inhomogeneous(
        wi0,
        forcing,
        assembly,
        cplx,
        dt,
        T,
        record_every=record_every,
        solver_tol=solver_tol,
        forcing_t0=forcing_t0,
    )

    dv0 = assembly.minv_eps_pec(cplx.Cwt @ wi0 + forcing_t0)
    init_norm = float(np.sqrt(dv0 @ (assembly.M_eps @ dv0)))

    residuals, p_records = verify_splitting(full, hom, inh, assembly, cplx, pot)
    times = full.series.t
    return SplitTrajectory(
        full=full,
        hom=hom,
        inh=inh,
        p0=p0,
        pdot0=pdot0,
        wi0=wi0,
        p_records=p_records,
        residuals=residuals,
        init_derivative_norm=init_norm,
        times=times,
    )


def verify_splitting(
    full: SimulationResult,
    hom: SimulationResult,
    inh: SimulationResult,
    assembly: MaterialAssembly,
    cplx: DeRhamComplex,
    pot: PotentialSolver | None = None,
):
    """Per-record reconstruction residual of V_h + V_i + G p against the field."""
    if full.states is None or hom.states is None or inh.states is None:
        raise InterfaceError("verify_splitting needs recorded states on all three runs")
    if not (len(full.states) == len(hom.states) == len(inh.states)):
        raise InterfaceError("trajectories were recorded on different time grids")
    if pot is None:
        pot = PotentialSolver(assembly, cplx)
    res, ps = [], []
    for st, sh, si in zip(full.states, hom.states, inh.states):
        p = pot.solve_p(st.e).p
        ps.append(p)
        de = sh.e + si.e + cplx.G @ p - st.e
        dh = sh.h + si.h - st.h
        num = np.sqrt(float(de @ (assembly.M_eps @ de)) + float(dh @ (assembly.M_mu @ dh)))
        den = np.sqrt(
            float(st.e @ (assembly.M_eps @ st.e)) + float(st.h @ (assembly.M_mu @ st.h))
        )
        res.append(num / max(den, 1e-300))
    return np.array(res), ps
