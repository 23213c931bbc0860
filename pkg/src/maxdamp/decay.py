"""Decay-rate measurement, equilibrium projection, and the dense oracle.

Everything here quantifies the stabilization chain: the energy/derivative
ratio, the horizon contraction factor, the fitted exponential rate with its
envelope prefactor, and the orthogonal projection onto stationary states
(curl-free fields whose electric part vanishes on the conductive collar).
A dense brute-force oracle on tiny grids cross-checks the iterative paths:
generator eigenvalues, kernel dimension, and matrix-exponential trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .evolution import FieldState, SimulationResult, TimeSeries, simulate
from .grid import DeRhamComplex
from .helmholtz import FluxProjector
from .materials import MaterialAssembly


class OracleBudgetError(RuntimeError):
    """Requested dense oracle exceeds the size budget."""


@dataclass
class DecayFit:
    omega_fit: float
    M_fit: float
    window: tuple
    fully_decayed: bool = False


@dataclass
class RatioReport:
    ratio_ED: float
    hypothesis_violation: bool


@dataclass
class DecayReport:
    """Aggregate stabilization measurements from one damped trajectory."""

    omega_fit: float
    M_fit: float
    window: tuple
    envelope_ok: bool
    gamma_table: list  # (T, gamma) pairs
    ratio_ED: float
    ratio_hypothesis_violation: bool
    dtH_constant: float
    result: SimulationResult


@dataclass
class EquilibriumProjection:
    e_part: np.ndarray
    h_part: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    kernel_dim_e: int
    kernel_dim_h: int
    curl_residual: float
    collar_residual: float

    @property
    def kernel_dim(self) -> int:
        return self.kernel_dim_e + self.kernel_dim_h


def fit_decay(series: TimeSeries, window) -> DecayFit:
    """Least-squares exponential rate of the energy over a time window.

    The energy is a squared norm, so omega_fit = -slope/2 of log E; M_fit
    makes the envelope M_fit * exp(-2 omega t) * E(0) dominate E on the
    window.
    """
    t1, t2 = window
    sel = (series.t >= t1) & (series.t <= t2)
    if not sel.any() or t1 < series.t[0] - 1e-12 or t2 > series.t[-1] + 1e-12:
        raise ValueError(f"window {window} is not covered by the series [{series.t[0]}, {series.t[-1]}]")
    t = series.t[sel]
    E = series.energy[sel]
    E0 = series.energy[0]
    if np.any(E <= 0.0) or E0 <= 0.0:
        return DecayFit(omega_fit=float("inf"), M_fit=1.0, window=(t1, t2), fully_decayed=True)
    slope, intercept = np.polyfit(t, np.log(E), 1)
    omega = -0.5 * float(slope)
    M_fit = float(np.max(E * np.exp(2.0 * omega * t)) / E0)
    return DecayFit(omega_fit=omega, M_fit=M_fit, window=(t1, t2))


def check_contraction(
    initial: FieldState,
    assembly: MaterialAssembly,
    cplx: DeRhamComplex,
    dt: float,
    T: float,
    solver_tol: float = 1e-12,
) -> float:
    """gamma_T = (E(T) + D(T)) / (E(0) + D(0)) for the damped flow."""
    res = simulate(initial, assembly, cplx, dt, T, record_every=max(int(round(T / dt)), 1), solver_tol=solver_tol)
    E0, D0 = res.series.energy[0], res.series.denergy[0]
    ET, DT = res.series.energy[-1], res.series.denergy[-1]
    return float((ET + DT) / (E0 + D0))


def check_E_dominated_by_D(series: TimeSeries, tol: float = 1e-12) -> RatioReport:
    """max_t E(t)/D(t); flags stationary-kernel data (D = 0 with E > 0)."""
    E, D = series.energy, series.denergy
    if np.any(np.isnan(D)):
        raise ValueError("series carries no derivative energy; rerun with the derivative pair")
    scale = max(E[0], 1.0)
    bad = (D <= tol * scale) & (E > tol * scale)
    if bad.any():
        return RatioReport(ratio_ED=float("inf"), hypothesis_violation=True)
    return RatioReport(ratio_ED=float(np.max(E / np.maximum(D, 1e-300))), hypothesis_violation=False)


def check_dtH_bound(result: SimulationResult, assembly: MaterialAssembly, sigma0: float) -> float:
    """Ratio of integrated |dH/dt|^2 to (1+T) integrated |dE/dt|^2 + dissipation.

    Time integrals use the trapezoid rule on the recorded derivative states;
    unweighted L2 norms in space.  Returns 0 for identically zero data.
    """
    if result.dstates is None or result.states is None:
        raise ValueError("check_dtH_bound needs record_states=True with the derivative pair")
    t = result.series.t
    T = t[-1] - t[0]
    dh2 = np.array([float(d.h @ (assembly.M1_face @ d.h)) for d in result.dstates])
    de2 = np.array([float(d.e @ (assembly.M1_edge @ d.e)) for d in result.dstates])
    see = np.array([float(s.e @ (assembly.M_sigma @ s.e)) for s in result.states])
    lhs = float(np.trapezoid(dh2, t))
    rhs = (1.0 + T) * float(np.trapezoid(de2, t)) + float(np.trapezoid(see, t))
    if lhs == 0.0 and rhs == 0.0:
        return 0.0
    return lhs / rhs


def run_decay_analysis(
    initial: FieldState,
    assembly: MaterialAssembly,
    cplx: DeRhamComplex,
    dt: float,
    T: float,
    gamma_horizons=(),
    window: tuple | None = None,
    record_every: int = 1,
    sigma0: float = 1.0,
    solver_tol: float = 1e-12,
) -> DecayReport:
    """One damped run feeding all decay measurements.

    The horizon list for the contraction factors must consist of record
    times; the fit window defaults to [0.25 T, 0.9 T].
    """
    T_all = max(tuple(gamma_horizons) + (T,))
    res = simulate(
        initial,
        assembly,
        cplx,
        dt,
        T_all,
        record_every=record_every,
        solver_tol=solver_tol,
        record_states=True,
    )
    if window is None or window[1] <= window[0]:
        window = (0.25 * T_all, 0.9 * T_all)
    fit = fit_decay(res.series, window)
    E, D, t = res.series.energy, res.series.denergy, res.series.t
    gammas = []
    for Tg in gamma_horizons:
        idx = int(np.argmin(np.abs(t - Tg)))
        gammas.append((float(t[idx]), float((E[idx] + D[idx]) / (E[0] + D[0]))))
    ratio = check_E_dominated_by_D(res.series)
    dtH = check_dtH_bound(res, assembly, sigma0)
    sel = (t >= window[0]) & (t <= window[1])
    envelope_ok = bool(
        np.all(E[sel] <= fit.M_fit * np.exp(-2.0 * fit.omega_fit * t[sel]) * E[0] * (1.0 + 1e-9))
    )
    return DecayReport(
        omega_fit=fit.omega_fit,
        M_fit=fit.M_fit,
        window=fit.window,
        envelope_ok=envelope_ok,
        gamma_table=gammas,
        ratio_ED=ratio.ratio_ED,
        ratio_hypothesis_violation=ratio.hypothesis_violation,
        dtH_constant=dtH,
        result=res,
    )


class KernelProjector:
    """Orthogonal projection P onto the equilibrium kernel of the extended flow.

    Electric part: gradients of potentials supported on interior nodes away
    from the conductive region (so the field vanishes on the collar);
    magnetic part: dual gradients (discrete curl-free fields with free
    boundary values).  Both least-squares problems are solved in the
    respective mass inner products.
    """

    def __init__(self, assembly: MaterialAssembly, cplx: DeRhamComplex):
        if not (assembly.sigma_cells > 0).any():
            raise ValueError("equilibrium projection needs a nonempty conductive collar")
        self.assembly = assembly
        self.cplx = cplx
        self.free_nodes = np.nonzero(assembly.kernel_free_nodes(cplx))[0]
        if self.free_nodes.size:
            G_F = cplx.G[:, self.free_nodes].tocsr()
            self.G_F = G_F
            self._e_factor = spla.splu((G_F.T @ assembly.M_eps @ G_F).tocsc())
        else:
            self.G_F = None
            self._e_factor = None
        self._flux = FluxProjector(assembly, cplx)

    @property
    def kernel_dim_e(self) -> int:
        return int(self.free_nodes.size)

    @property
    def kernel_dim_h(self) -> int:
        return int(self.cplx.Gf.shape[1] - 1)

    def apply(self, e0: np.ndarray, h0: np.ndarray) -> EquilibriumProjection:
        node_count = self.cplx.G.shape[1]
        phi = np.zeros(node_count)
        if self.G_F is not None:
            phi_f = self._e_factor.solve(self.G_F.T @ (self.assembly.M_eps @ e0))
            phi[self.free_nodes] = phi_f
            e_part = self.G_F @ phi_f
        else:
            e_part = np.zeros_like(e0)
        psi_full = np.zeros(self.cplx.Gf.shape[1])
        psi = self._flux._factor.solve(self._flux.Gf_k.T @ (self.assembly.M_mu @ h0))
        psi_full[1:] = psi
        h_part = self._flux.Gf_k @ psi
        curl_res = float(np.max(np.abs(self.cplx.CG @ phi))) if phi.any() else 0.0
        collar = self.assembly.collar_edge_mask
        collar_res = float(np.max(np.abs(e_part[collar]))) if collar.any() else 0.0
        return EquilibriumProjection(
            e_part=e_part,
            h_part=h_part,
            phi=phi,
            psi=psi_full,
            kernel_dim_e=self.kernel_dim_e,
            kernel_dim_h=self.kernel_dim_h,
            curl_residual=curl_res,
            collar_residual=collar_res,
        )


def project_equilibrium(e0, h0, assembly: MaterialAssembly, cplx: DeRhamComplex) -> EquilibriumProjection:
    """One-shot equilibrium projection (see KernelProjector)."""
    return KernelProjector(assembly, cplx).apply(np.asarray(e0, float), np.asarray(h0, float))


@dataclass
class ConvergenceReport:
    times: np.ndarray
    gaps: np.ndarray
    omega_fit: float
    envelope_M: float
    final_gap: float
    projection: EquilibriumProjection


def check_convergence_to_P(
    initial: FieldState,
    assembly: MaterialAssembly,
    cplx: DeRhamComplex,
    dt: float,
    T: float,
    record_every: int = 4,
    window: tuple | None = None,
    solver_tol: float = 1e-12,
) -> ConvergenceReport:
    """Track |z(t) - P z(0)|_X and fit its exponential envelope."""
    proj = project_equilibrium(initial.e, initial.h, assembly, cplx)
    res = simulate(
        initial,
        assembly,
        cplx,
        dt,
        T,
        record_every=record_every,
        solver_tol=solver_tol,
        record_states=True,
        co_evolve_derivative=False,
    )
    gaps = []
    for st in res.states:
        de = st.e - proj.e_part
        dh = st.h - proj.h_part
        gaps.append(
            float(np.sqrt(de @ (assembly.M_eps @ de) + dh @ (assembly.M_mu @ dh)))
        )
    gaps = np.array(gaps)
    t = res.series.t
    if window is None:
        window = (0.25 * T, 0.9 * T)
    sel = (t >= window[0]) & (t <= window[1]) & (gaps > 0)
    if sel.sum() >= 2:
        slope, _ = np.polyfit(t[sel], np.log(gaps[sel]), 1)
        omega = -float(slope)
        M_env = float(np.max(gaps[sel] * np.exp(omega * t[sel])) / max(gaps[0], 1e-300))
    else:
        omega, M_env = float("inf"), 1.0
    return ConvergenceReport(
        times=t,
        gaps=gaps,
        omega_fit=omega,
        envelope_M=M_env,
        final_gap=float(gaps[-1]),
        projection=proj,
    )


@dataclass
class DenseOracle:
    """Dense generator, spectrum, and exponential trajectories on tiny grids."""

    assembly: MaterialAssembly
    cplx: DeRhamComplex
    A: np.ndarray  # generator on (retained edges) + (faces), M-weighted similarity
    A_raw: np.ndarray  # generator in plain coordinates
    eigenvalues: np.ndarray
    kernel_dim: int
    spectral_abscissa: float
    ret: np.ndarray
    _Msqrt: np.ndarray
    _Minvsqrt: np.ndarray

    def pack(self, e, h):
        return np.concatenate([e[self.ret], h])

    def unpack(self, v):
        e = np.zeros(self.cplx.grid.edge_count)
        ne = self.ret.size
        e[self.ret] = v[:ne]
        return e, v[ne:]

    def expm_state(self, e0, h0, t: float):
        """exp(t A) applied to the initial pair via scaling-and-squaring."""
        v = self.pack(e0, h0)
        w = scipy.linalg.expm(t * self.A_raw) @ v
        return self.unpack(w)

    def cayley_step(self, e, h, dt: float):
        """One exact midpoint step: (I - dt/2 A)^{-1} (I + dt/2 A)."""
        v = self.pack(e, h)
        n = v.size
        I = np.eye(n)
        w = np.linalg.solve(I - 0.5 * dt * self.A_raw, (I + 0.5 * dt * self.A_raw) @ v)
        return self.unpack(w)


def dense_oracle(
    assembly: MaterialAssembly,
    cplx: DeRhamComplex,
    kernel_tol: float = 1e-10,
    dof_budget: int = 1500,
) -> DenseOracle:
    """Assemble the generator densely and diagonalize it.

    Refuses grids beyond n = 4 or the DoF budget.  Eigenvalues come from the
    similarity-transformed matrix, which is skew-symmetric plus a symmetric
    negative-semidefinite dissipation part, so the sigma = 0 spectrum is
    purely imaginary up to roundoff.  The kernel dimension is a numerical
    rank deficiency at the relative cutoff ``kernel_tol``.
    """
    grid = cplx.grid
    ret = np.nonzero(cplx.pec_edge_mask)[0]
    dofs = ret.size + grid.face_count
    if grid.n > 4 or dofs > dof_budget:
        raise OracleBudgetError(f"dense oracle refused: n={grid.n}, dofs={dofs} (budget {dof_budget})")

    Me = assembly.M_eps[ret][:, ret].toarray()
    Ms = assembly.M_sigma[ret][:, ret].toarray()
    Mm = assembly.M_mu.toarray()
    Cw = cplx.Cw[:, ret].toarray()

    Me_inv = np.linalg.inv(Me)
    Mm_inv = np.linalg.inv(Mm)
    A_raw = np.block(
        [
            [-Me_inv @ Ms, Me_inv @ Cw.T],
            [-Mm_inv @ Cw, np.zeros((grid.face_count, grid.face_count))],
        ]
    )

    def sqrt_spd(M):
        vals, vecs = np.linalg.eigh(M)
        return (vecs * np.sqrt(vals)) @ vecs.T, (vecs / np.sqrt(vals)) @ vecs.T

    Me_s, Me_is = sqrt_spd(Me)
    Mm_s, Mm_is = sqrt_spd(Mm)
    Msqrt = np.block(
        [
            [Me_s, np.zeros((ret.size, grid.face_count))],
            [np.zeros((grid.face_count, ret.size)), Mm_s],
        ]
    )
    Minvsqrt = np.block(
        [
            [Me_is, np.zeros((ret.size, grid.face_count))],
            [np.zeros((grid.face_count, ret.size)), Mm_is],
        ]
    )
    A_sym = Msqrt @ A_raw @ Minvsqrt

    eigvals = np.linalg.eigvals(A_sym)
    svals = np.linalg.svd(A_sym, compute_uv=False)
    cutoff = kernel_tol * svals[0]
    kernel_dim = int(np.sum(svals < cutoff))
    nonzero = eigvals[np.abs(eigvals) > cutoff]
    abscissa = float(np.max(nonzero.real)) if nonzero.size else float("-inf")

    return DenseOracle(
        assembly=assembly,
        cplx=cplx,
        A=A_sym,
        A_raw=A_raw,
        eigenvalues=eigvals,
        kernel_dim=kernel_dim,
        spectral_abscissa=abscissa,
        ret=ret,
        _Msqrt=Msqrt,
        _Minvsqrt=Minvsqrt,
    )


def predicted_kernel_dim(assembly: MaterialAssembly, cplx: DeRhamComplex) -> int:
    """Kernel dimension from the constrained-gradient parametrization."""
    n_free = int(assembly.kernel_free_nodes(cplx).sum())
    n = cplx.grid.n
    return n_free + (n**3 + 6 * n**2 - 1)
