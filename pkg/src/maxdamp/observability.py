"""Observability Gramians, constants, and HUM control synthesis.

For the conservative charge-free system, the horizon-T Gramian is

    Lambda_T = sum_m dt * V_m^* B V_m,     V_m = midpoint-state map at step m,

where B observes the electric field on the collar (or its time derivative,
or the collar curl for control synthesis).  Because the midpoint step is the
Cayley transform of a skew generator, the adjoint factor is realized exactly
by the time-reversed stepper with the observed quantity injected as midpoint
forcing, so one application costs one forward and one backward sweep.
Controls come from Hilbert-uniqueness duality: solve Lambda_T xi = S(T)^* d
in the X inner product and re-inject the observed adjoint trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .evolution import ConsistencyError, FieldState, MidpointStepper, simulate
from .grid import DeRhamComplex
from .helmholtz import FluxProjector, PotentialSolver, sigma_free
from .linalg import conjugate_gradient, lanczos_extreme
from .materials import MaterialAssembly, SigmaSpec, collar_mask, sample_materials


@dataclass
class ObservabilityReport:
    T: float
    a: float
    c_obs: float
    lambda_min: float
    lambda_max: float
    iterations: int
    observable: bool
    worst_e: np.ndarray
    worst_h: np.ndarray
    variant: str = "field"


@dataclass
class ControlSolve:
    J: np.ndarray  # (nsteps, edges) control current at midpoint times
    forcing: np.ndarray  # covector trajectory actually injected
    target_e: np.ndarray
    target_h: np.ndarray
    achieved_e: np.ndarray
    achieved_h: np.ndarray
    relative_miss: float
    cg_iterations: int
    cg_residual: float
    control_norm: float
    max_divergence: float


def collar_observation_mass(assembly: MaterialAssembly, cplx: DeRhamComplex, a: float) -> sp.csr_matrix:
    """Unweighted edge mass restricted to the collar (quadrature of chi_{N_a})."""
    probe = sample_materials(
        assembly.grid,
        assembly.eps_preset,
        assembly.mu_preset,
        SigmaSpec(1.0, a, "indicator"),
        x0=assembly.x0,
        spd_check=False,
    )
    return probe.M_sigma


def control_faces(cplx: DeRhamComplex, a: float) -> np.ndarray:
    """Faces all of whose bounding edges lie inside the collar edge mask.

    Face potentials supported here generate currents that are bitwise
    collar-supported and exactly weakly divergence-free.
    """
    edge_mask, _, _ = collar_mask(cplx.grid, a)
    outside = (~edge_mask).astype(float)
    touch = abs(cplx.C_full) @ outside
    return touch == 0.0


class Gramian:
    """Apply Lambda_T on the charge-free subspace for one observation variant."""

    def __init__(
        self,
        assembly: MaterialAssembly,
        cplx: DeRhamComplex,
        T: float,
        dt: float,
        a: float,
        variant: str = "field",
        solver_tol: float = 1e-12,
        max_iter: int = 10_000,
    ):
        if variant not in ("field", "derivative", "control"):
            raise ValueError(f"unknown gramian variant {variant!r}")
        self.assembly = sigma_free(assembly)
        self.cplx = cplx
        self.T = float(T)
        self.dt = float(dt)
        self.a = float(a)
        self.variant = variant
        self.nsteps = int(round(T / dt))
        if abs(self.nsteps * dt - T) > 1e-9 * max(T, 1.0):
            raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
        if variant == "control":
            faces = control_faces(cplx, a)
            chi = sp.diags(faces.astype(float))
            self.obs = (cplx.Cwt @ chi @ cplx.Cw).tocsr()
            self.control_face_mask = faces
        else:
            self.obs = collar_observation_mass(self.assembly, cplx, a)
        self._fwd = MidpointStepper(self.assembly, cplx, dt, solver_tol, max_iter)
        self._bwd = MidpointStepper(self.assembly, cplx, -dt, solver_tol, max_iter)
        self._pot = PotentialSolver(self.assembly, cplx, tol=solver_tol)
        self._flux_proj = FluxProjector(self.assembly, cplx)
        self.applies = 0

    # --- inner product and helpers -----------------------------------------
    def xdot(self, z1, z2) -> float:
        e1, h1 = z1
        e2, h2 = z2
        return float(e1 @ (self.assembly.M_eps @ e2) + h1 @ (self.assembly.M_mu @ h2))

    def xnorm(self, z) -> float:
        return float(np.sqrt(max(self.xdot(z, z), 0.0)))

    def project(self, z):
        """X-orthogonal projection onto X_h: charge-free e, constrained flux h."""
        e, h = z
        return self._pot.project_charge_free(e), self._flux_proj.project(h)

    def check_charge_free(self, z, tol=1e-8):
        e, _ = z
        rho = (self.cplx.Gt @ (self.assembly.M_eps @ e))[self.cplx.interior_node_mask]
        scale = max(np.sqrt(float(e @ (self.assembly.M_eps @ e))), 1e-300) / self.cplx.grid.h
        if np.linalg.norm(rho) > tol * scale:
            raise ConsistencyError(
                f"gramian input is not discretely charge-free: |rho| = {np.linalg.norm(rho):.3e}"
            )

    def _apply_generator(self, z):
        e, h = z
        de = self.assembly.minv_eps_pec(self.cplx.Cwt @ h)
        dh = -self.assembly.minv_mu(self.cplx.Cw @ e)
        return de, dh

    def _sweep(self, z):
        """Forward sweep, collar observation, adjoint (time-reversed) sweep."""
        e, h = z[0].copy(), z[1].copy()
        mids = np.empty((self.nsteps, e.size))
        for m in range(self.nsteps):
            e, h, e_mid = self._fwd.step_light(e, h)
            mids[m] = e_mid
        we = np.zeros_like(e)
        wh = np.zeros_like(h)
        for m in range(self.nsteps - 1, -1, -1):
            we, wh, _ = self._bwd.step_light(we, wh, forcing=-(self.obs @ mids[m]))
        return we, wh

    def apply(self, z):
        self.applies += 1
        if self.variant == "derivative":
            v = self._apply_generator(z)
            u = self._sweep(v)
            ue, uh = self._apply_generator(u)
            out = (-ue, -uh)
        else:
            out = self._sweep(z)
        return self.project(out)

    def quadrature(self, z) -> float:
        """<Lambda_T z, z>_X, the observed collar energy over [0, T]."""
        if self.variant == "derivative":
            z = self._apply_generator(z)
        e, h = z[0].copy(), z[1].copy()
        total = 0.0
        for _ in range(self.nsteps):
            e, h, e_mid = self._fwd.step_light(e, h)
            total += self.dt * float(e_mid @ (self.obs @ e_mid))
        return total

    def evolve(self, z, reverse=False):
        """Free evolution over [0, T] (S(T) or S(T)^*)."""
        stepper = self._bwd if reverse else self._fwd
        e, h = z[0].copy(), z[1].copy()
        for _ in range(self.nsteps):
            e, h, _ = stepper.step_light(e, h)
        return e, h


def gramian_apply(
    z,
    assembly: MaterialAssembly,
    cplx: DeRhamComplex,
    T: float,
    dt: float,
    a: float,
    variant: str = "field",
    solver_tol: float = 1e-12,
):
    """One-shot Gramian application (tests and small studies)."""
    g = Gramian(assembly, cplx, T, dt, a, variant, solver_tol)
    g.check_charge_free(z)
    return g.apply(z)


def random_charge_free_pair(assembly: MaterialAssembly, cplx: DeRhamComplex, rng, normalize=True):
    """Seeded random element of the discrete charge-free space X_h."""
    pot = PotentialSolver(assembly, cplx)
    e = np.where(cplx.pec_edge_mask, rng.standard_normal(cplx.grid.edge_count), 0.0)
    e = pot.project_charge_free(e)
    b = cplx.Cw @ rng.standard_normal(cplx.grid.edge_count)
    h = assembly.minv_mu(b)
    if normalize:
        nrm = np.sqrt(float(e @ (assembly.M_eps @ e)) + float(h @ (assembly.M_mu @ h)))
        e, h = e / nrm, h / nrm
    return e, h


def estimate_obs_constant(
    assembly: MaterialAssembly,
    cplx: DeRhamComplex,
    T: float,
    a: float,
    iters: int = 48,
    seed: int = 0,
    dt: float | None = None,
    variant: str = "field",
    restarts: int = 2,
    solver_tol: float = 1e-12,
) -> ObservabilityReport:
    """Smallest Rayleigh quotient of Lambda_T by restarted Lanczos iteration.

    c_obs = 1 / lambda_min is the discrete observability constant: the factor
    relating initial energy to observed collar energy over [0, T].
    Deterministic for fixed seed and iteration budget.
    """
    g = Gramian(assembly, cplx, T, dt if dt is not None else cplx.grid.h / 2, a, variant, solver_tol)
    rng = np.random.default_rng(seed)
    e0, h0 = random_charge_free_pair(g.assembly, cplx, rng)

    ne = e0.size

    def pack(z):
        return np.concatenate(z)

    def unpack(v):
        return v[:ne], v[ne:]

    def apply_op(v):
        return pack(g.apply(unpack(v)))

    def inner(u, v):
        return g.xdot(unpack(u), unpack(v))

    def reproject(v):
        return pack(g.project(unpack(v)))

    v = pack((e0, h0))
    lam_min, lam_max = np.inf, 0.0
    vec = v
    for _ in range(max(restarts, 1)):
        vals, vecs, basis = lanczos_extreme(apply_op, inner, vec, iters, postprocess=reproject)
        lam_max = max(lam_max, float(vals[-1]))
        if vals[0] < lam_min:
            lam_min = float(vals[0])
            vec = basis @ vecs[:, 0]
    lam_min = max(lam_min, 0.0)
    observable = lam_min > 1e-14 * max(lam_max, 1e-300)
    c_obs = 1.0 / lam_min if observable else float("inf")
    we, wh = unpack(vec)
    return ObservabilityReport(
        T=T,
        a=a,
        c_obs=c_obs,
        lambda_min=lam_min,
        lambda_max=lam_max,
        iterations=g.applies,
        observable=observable,
        worst_e=we,
        worst_h=wh,
        variant=variant,
    )


def observation_quotient(
    z,
    assembly: MaterialAssembly,
    cplx: DeRhamComplex,
    T: float,
    a: float,
    dt: float | None = None,
    solver_tol: float = 1e-12,
) -> float:
    """Rayleigh quotient |z|_X^2 / <Lambda_T z, z> for one datum."""
    g = Gramian(assembly, cplx, T, dt if dt is not None else cplx.grid.h / 2, a, "field", solver_tol)
    obs = g.quadrature(z)
    nrm2 = g.xdot(z, z)
    if obs <= 0.0:
        return float("inf")
    return nrm2 / obs


class ControlInfeasibleError(RuntimeError):
    def __init__(self, message, conditioning):
        super().__init__(message)
        self.conditioning = conditioning


def hum_control(
    target,
    assembly: MaterialAssembly,
    cplx: DeRhamComplex,
    T: float,
    a: float,
    tol: float = 1e-6,
    dt: float | None = None,
    initial=None,
    solver_tol: float = 1e-12,
    max_cg: int = 2000,
) -> ControlSolve:
    """Steer the charge-free system to the target with a collar-supported current.

    The control is parametrized through face potentials on the collar
    interior, which keeps the current bitwise collar-supported and exactly
    weakly divergence-free.  The achieved state is verified by an independent
    forward simulation with the synthesized forcing.
    """
    dt = cplx.grid.h / 2 if dt is None else dt
    g = Gramian(assembly, cplx, T, dt, a, "control", solver_tol)
    g.check_charge_free(target)
    te, th = np.asarray(target[0], dtype=float), np.asarray(target[1], dtype=float)

    if initial is None:
        z0 = (np.zeros_like(te), np.zeros_like(th))
        d = (te, th)
    else:
        z0 = (np.asarray(initial[0], dtype=float), np.asarray(initial[1], dtype=float))
        fe, fh = g.evolve(z0)
        d = (te - fe, th - fh)

    psi = g.project(g.evolve(d, reverse=True))

    ne = te.size

    def pack(z):
        return np.concatenate(z)

    def unpack(v):
        return v[:ne], v[ne:]

    try:
        xi_vec, res, it = conjugate_gradient(
            lambda v: pack(g.apply(unpack(v))),
            pack(psi),
            tol=tol / 10.0,
            max_iter=max_cg,
            inner=lambda u, v: g.xdot(unpack(u), unpack(v)),
        )
    except Exception as exc:  # CG divergence signals an unobservable horizon
        lam = estimate_obs_constant(assembly, cplx, T, a, iters=24, seed=1, dt=dt)
        raise ControlInfeasibleError(
            f"HUM system did not converge at horizon T={T}: {exc}", conditioning=lam.c_obs
        ) from exc

    # forward sweep of xi: collect observed collar-curl potentials
    xi = g.project(unpack(xi_vec))
    e, h = xi[0].copy(), xi[1].copy()
    nsteps = g.nsteps
    chi = g.control_face_mask
    q = np.empty((nsteps, th.size))
    for m in range(nsteps):
        e, h, e_mid = g._fwd.step_light(e, h)
        q[m] = np.where(chi, g.cplx.Cw @ e_mid, 0.0)

    forcing = np.empty((nsteps, ne))
    J = np.empty((nsteps, ne))
    for m in range(nsteps):
        f = g.cplx.Cwt @ q[m]
        forcing[m] = f
        J[m] = -g.assembly.minv_eps_pec(f)

    # independent verification run with the synthesized control
    init_state = FieldState.from_fields(z0[0], z0[1], g.assembly)
    check = simulate(
        init_state,
        g.assembly,
        cplx,
        dt,
        T,
        forcing=forcing,
        record_every=max(nsteps, 1),
        solver_tol=solver_tol,
        co_evolve_derivative=False,
    )
    ae, ah = check.state.e, check.state.h
    miss_vec = (ae - te, ah - th)
    denom = max(g.xnorm((te, th)), 1e-300)
    miss = g.xnorm(miss_vec) / denom

    # weak eps-divergence of the reported current field
    max_div = 0.0
    for m in range(nsteps):
        rho = (cplx.Gt @ (g.assembly.M_eps @ J[m]))[cplx.interior_node_mask]
        nrm = max(float(np.linalg.norm(J[m])), 1e-300)
        max_div = max(max_div, float(np.linalg.norm(rho)) / (nrm / cplx.grid.h))

    control_norm = float(np.sqrt(dt * sum(float(J[m] @ (g.assembly.M1_edge @ J[m])) for m in range(nsteps))))
    return ControlSolve(
        J=J,
        forcing=forcing,
        target_e=te,
        target_h=th,
        achieved_e=ae,
        achieved_h=ah,
        relative_miss=miss,
        cg_iterations=it,
        cg_residual=res,
        control_norm=control_norm,
        max_divergence=max_div,
    )
