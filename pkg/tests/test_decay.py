import numpy as np
import pytest

from maxdamp.decay import (
    KernelProjector,
    OracleBudgetError,
    check_contraction,
    check_convergence_to_P,
    check_dtH_bound,
    check_E_dominated_by_D,
    dense_oracle,
    fit_decay,
    predicted_kernel_dim,
    project_equilibrium,
)
from maxdamp.evolution import FieldState, MidpointStepper, TimeSeries, energies, simulate
from maxdamp.grid import assemble_complex, build_grid
from maxdamp.materials import MaterialPreset, SigmaSpec, sample_materials
from maxdamp.observability import random_charge_free_pair


def synthetic_series(fn, t):
    E = fn(t)
    z = np.zeros_like(t)
    return TimeSeries(
        t=t, energy=E, denergy=E.copy(), dissipation_cum=z, charge_upsilon=z,
        charge_total=z, split_residual=z, balance_E=z, balance_D=z, record_steps=np.arange(t.size),
    )


def x_state(cplx, asm, seed=0):
    rng = np.random.default_rng(seed)
    e, h = random_charge_free_pair(asm, cplx, rng)
    return FieldState.from_fields(e, h, asm)


def kernel_state(cplx, asm, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    kp = KernelProjector(asm, cplx)
    e = kp.G_F @ rng.standard_normal(kp.free_nodes.size) if kp.G_F is not None else np.zeros(cplx.grid.edge_count)
    h = cplx.Gf[:, 1:] @ rng.standard_normal(cplx.Gf.shape[1] - 1)
    st = FieldState.from_fields(e, h, asm)
    E0, _ = energies(st, None, asm)
    return FieldState.from_fields(scale * e / np.sqrt(E0), scale * h / np.sqrt(E0), asm)


# --- fit_decay -----------------------------------------------------------------


def test_fit_exact_exponential():
    t = np.linspace(0, 10, 201)
    fit = fit_decay(synthetic_series(lambda t: np.exp(-t), t), (0.0, 10.0))
    assert fit.omega_fit == pytest.approx(0.5, abs=1e-6)
    assert 1.0 <= fit.M_fit <= 1.001


def test_fit_conservative_run_zero_rate(grid8, cplx8, asm8_free):
    st = x_state(cplx8, asm8_free, seed=1)
    res = simulate(st, asm8_free, cplx8, dt=grid8.h / 2, T=4.0, record_every=4)
    fit = fit_decay(res.series, (0.0, 4.0))
    assert abs(fit.omega_fit) <= 1e-6


def test_fit_window_out_of_range():
    t = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        fit_decay(synthetic_series(lambda t: np.exp(-t), t), (0.0, 2.0))


def test_fit_scaling_invariance(grid8, cplx8, asm8):
    st = x_state(cplx8, asm8, seed=2)
    res1 = simulate(st, asm8, cplx8, dt=grid8.h / 2, T=8.0, record_every=4)
    st2 = FieldState.from_fields(2.0 * st.e, 2.0 * st.h, asm8)
    res2 = simulate(st2, asm8, cplx8, dt=grid8.h / 2, T=8.0, record_every=4)
    f1 = fit_decay(res1.series, (2.0, 7.0))
    f2 = fit_decay(res2.series, (2.0, 7.0))
    assert abs(f1.omega_fit - f2.omega_fit) <= 1e-8


# --- contraction ------------------------------------------------------------------


def test_contraction_sigma_zero_is_one(grid8, cplx8, asm8_free):
    st = x_state(cplx8, asm8_free, seed=3)
    gamma = check_contraction(st, asm8_free, cplx8, dt=grid8.h / 2, T=2.0)
    assert gamma == pytest.approx(1.0, abs=1e-9)


def test_contraction_damped(grid8, cplx8, asm8):
    st = x_state(cplx8, asm8, seed=4)
    gamma = check_contraction(st, asm8, cplx8, dt=grid8.h / 2, T=20.0)
    assert gamma < 1.0


def test_contraction_monotone_in_T(grid8, cplx8, asm8):
    st = x_state(cplx8, asm8, seed=5)
    g1 = check_contraction(st, asm8, cplx8, dt=grid8.h / 2, T=5.0)
    g2 = check_contraction(st, asm8, cplx8, dt=grid8.h / 2, T=10.0)
    assert g2 <= g1 + 1e-9


# --- E dominated by D ---------------------------------------------------------------


def test_ratio_finite_for_x_data(grid8, cplx8, asm8):
    st = x_state(cplx8, asm8, seed=6)
    res = simulate(st, asm8, cplx8, dt=grid8.h / 2, T=4.0, record_every=4)
    rep = check_E_dominated_by_D(res.series)
    assert not rep.hypothesis_violation
    assert np.isfinite(rep.ratio_ED)


def test_ratio_flags_kernel_data(grid8, cplx8, asm8):
    st = kernel_state(cplx8, asm8, seed=7)
    res = simulate(st, asm8, cplx8, dt=grid8.h / 2, T=0.5, record_every=2)
    rep = check_E_dominated_by_D(res.series)
    assert rep.hypothesis_violation


def test_ratio_stable_under_refinement():
    # same smooth continuum datum on both grids; white noise would carry
    # grid-dependent derivative energy and say nothing about stability
    from tests.test_evolution import standing_wave_state

    eps = MaterialPreset("constant", (1.0,))
    ratios = []
    for n in (8, 16):
        g = build_grid(n, 1.0)
        cx = assemble_complex(g)
        asm = sample_materials(g, eps, eps, SigmaSpec(1.0, 0.25))
        st = standing_wave_state(g, cx, asm)
        res = simulate(st, asm, cx, dt=g.h / 2, T=4.0, record_every=n // 2)
        ratios.append(check_E_dominated_by_D(res.series).ratio_ED)
    assert all(np.isfinite(r) for r in ratios)
    assert max(ratios) / min(ratios) < 2.0


def test_ratio_matches_eigenpair_on_oracle(grid3, cplx3):
    eps = MaterialPreset("constant", (1.0,))
    asm0 = sample_materials(grid3, eps, eps, SigmaSpec(0.0, 0.2))
    orc = dense_oracle(asm0, cplx3)
    vals, vecs = np.linalg.eig(orc.A)
    nz = np.abs(vals.imag) > 1e-6
    k = np.argmax(np.where(nz, vals.imag, -np.inf))
    lam = vals[k]
    x = vecs[:, k].real
    x = orc._Minvsqrt @ x  # back to field coordinates
    e, h = orc.unpack(x)
    st = FieldState.from_fields(e, h, asm0)
    from maxdamp.evolution import apply_generator

    dz = apply_generator(asm0, cplx3, st)
    E, _ = energies(st, None, asm0)
    D, _ = energies(dz, None, asm0)
    assert E / D == pytest.approx(1.0 / abs(lam) ** 2, rel=1e-6)


# --- dtH bound -------------------------------------------------------------------


def test_dtH_zero_data(grid8, cplx8, asm8):
    st = FieldState.zero(asm8)
    res = simulate(st, asm8, cplx8, dt=grid8.h / 2, T=0.5, record_states=True)
    assert check_dtH_bound(res, asm8, 1.0) == 0.0


def test_dtH_finite_sigma_zero(grid8, cplx8, asm8_free):
    st = x_state(cplx8, asm8_free, seed=9)
    res = simulate(st, asm8_free, cplx8, dt=grid8.h / 2, T=4.0, record_every=2, record_states=True)
    c = check_dtH_bound(res, asm8_free, 0.0)
    assert np.isfinite(c) and c > 0.0


def test_dtH_regression_ceiling(grid8, cplx8, asm8):
    st = x_state(cplx8, asm8, seed=10)
    res = simulate(st, asm8, cplx8, dt=grid8.h / 2, T=10.0, record_every=4, record_states=True)
    c = check_dtH_bound(res, asm8, 1.0)
    assert np.isfinite(c)
    assert c <= 10.0  # empirical ceiling from the first validated run


# --- equilibrium projection --------------------------------------------------------


def test_projection_idempotent_on_kernel(grid8, cplx8, asm8):
    st = kernel_state(cplx8, asm8, seed=11)
    proj = project_equilibrium(st.e, st.h, asm8, cplx8)
    de = proj.e_part - st.e
    dh = proj.h_part - st.h
    gap = np.sqrt(float(de @ (asm8.M_eps @ de)) + float(dh @ (asm8.M_mu @ dh)))
    assert gap <= 1e-9


def test_projection_annihilates_x_data(grid8, cplx8, asm8):
    st = x_state(cplx8, asm8, seed=12)
    proj = project_equilibrium(st.e, st.h, asm8, cplx8)
    nrm = np.sqrt(
        float(proj.e_part @ (asm8.M_eps @ proj.e_part)) + float(proj.h_part @ (asm8.M_mu @ proj.h_part))
    )
    assert nrm <= 1e-9


def test_projection_symmetric_and_idempotent(grid8, cplx8, asm8):
    rng = np.random.default_rng(13)
    kp = KernelProjector(asm8, cplx8)
    e1 = np.where(cplx8.pec_edge_mask, rng.standard_normal(grid8.edge_count), 0.0)
    h1 = rng.standard_normal(grid8.face_count)
    e2 = np.where(cplx8.pec_edge_mask, rng.standard_normal(grid8.edge_count), 0.0)
    h2 = rng.standard_normal(grid8.face_count)
    p1 = kp.apply(e1, h1)
    p2 = kp.apply(e2, h2)
    ip12 = float(p1.e_part @ (asm8.M_eps @ e2) + p1.h_part @ (asm8.M_mu @ h2))
    ip21 = float(e1 @ (asm8.M_eps @ p2.e_part) + h1 @ (asm8.M_mu @ p2.h_part))
    assert abs(ip12 - ip21) <= 1e-9 * max(abs(ip12), 1.0)
    twice = kp.apply(p1.e_part, p1.h_part)
    assert np.max(np.abs(twice.e_part - p1.e_part)) <= 1e-9
    assert np.max(np.abs(twice.h_part - p1.h_part)) <= 1e-9
    # orthogonality of the residual
    re, rh = e1 - p1.e_part, h1 - p1.h_part
    cross = float(re @ (asm8.M_eps @ p1.e_part) + rh @ (asm8.M_mu @ p1.h_part))
    assert abs(cross) <= 1e-8


def test_projection_structural_zeros(grid8, cplx8, asm8):
    rng = np.random.default_rng(14)
    e = np.where(cplx8.pec_edge_mask, rng.standard_normal(grid8.edge_count), 0.0)
    h = rng.standard_normal(grid8.face_count)
    proj = project_equilibrium(e, h, asm8, cplx8)
    # collar entries vanish bitwise; curl through the composed product is exact zero
    assert np.max(np.abs(proj.e_part[asm8.collar_edge_mask])) == 0.0
    assert proj.curl_residual == 0.0
    assert proj.collar_residual == 0.0


def test_projection_gradient_nonconstant_on_collar(grid3, cplx3, asm3):
    # potential varying inside omega: projection must differ from the field,
    # and the residual equals the distance to the constrained gradient space
    rng = np.random.default_rng(15)
    p0 = np.zeros(grid3.node_count)
    p0[cplx3.interior_node_mask] = rng.standard_normal(int(cplx3.interior_node_mask.sum()))
    e = cplx3.G @ p0
    proj = project_equilibrium(e, np.zeros(grid3.face_count), asm3, cplx3)
    diff = e - proj.e_part
    dist2 = float(diff @ (asm3.M_eps @ diff))
    assert dist2 > 0.0
    # dense oracle: constrained least squares over the free-node gradients
    kp = KernelProjector(asm3, cplx3)
    if kp.G_F is None:
        ref = e
    else:
        GF = kp.G_F.toarray()
        W = asm3.M_eps.toarray()
        sol = np.linalg.lstsq((GF.T @ W @ GF), GF.T @ (W @ e), rcond=None)[0]
        ref = e - GF @ sol
    ref2 = float(ref @ (asm3.M_eps @ ref))
    assert dist2 == pytest.approx(ref2, rel=1e-10)


def test_projection_commutes_with_flow(grid8, cplx8, asm8):
    st = kernel_state(cplx8, asm8, seed=16)
    res = simulate(st, asm8, cplx8, dt=grid8.h / 2, T=2.0, record_every=8, record_states=True)
    for s in res.states:
        gap = np.sqrt(
            float((s.e - st.e) @ (asm8.M_eps @ (s.e - st.e)))
            + float((s.h - st.h) @ (asm8.M_mu @ (s.h - st.h)))
        )
        assert gap <= 1e-8  # kernel states are stationary


def test_convergence_to_projection(grid8, cplx8):
    eps = MaterialPreset("constant", (1.0,))
    asm = sample_materials(grid8, eps, eps, SigmaSpec(2.0, 0.25))
    kern = kernel_state(cplx8, asm, seed=17)
    x = x_state(cplx8, asm, seed=18)
    st = FieldState.from_fields(kern.e + x.e, kern.h + x.h, asm)
    rep = check_convergence_to_P(st, asm, cplx8, dt=grid8.h / 4, T=40.0, record_every=32)
    assert rep.omega_fit > 0.0
    nrm = np.sqrt(float(st.e @ (asm.M_eps @ st.e)) + float(st.h @ (asm.M_mu @ st.h)))
    assert rep.final_gap <= 1e-6 * (1.0 + nrm)
    # the limit is the kernel part
    de = rep.projection.e_part - kern.e
    dh = rep.projection.h_part - kern.h
    assert np.sqrt(float(de @ (asm.M_eps @ de)) + float(dh @ (asm.M_mu @ dh))) <= 1e-8


# --- dense oracle ------------------------------------------------------------------


def test_oracle_budget(grid8, cplx8, asm8):
    with pytest.raises(OracleBudgetError):
        dense_oracle(asm8, cplx8)


def test_oracle_sigma_zero_spectrum_imaginary(grid3, cplx3):
    eps = MaterialPreset("constant", (1.0,))
    asm0 = sample_materials(grid3, eps, eps, SigmaSpec(0.0, 0.2))
    orc = dense_oracle(asm0, cplx3)
    assert np.max(np.abs(orc.eigenvalues.real)) <= 1e-8


def test_oracle_kernel_dimension_matches_parametrization(grid3, cplx3, asm3):
    orc = dense_oracle(asm3, cplx3)
    assert orc.kernel_dim == predicted_kernel_dim(asm3, cplx3)
    kp = KernelProjector(asm3, cplx3)
    assert orc.kernel_dim == kp.kernel_dim_e + kp.kernel_dim_h


def test_oracle_kernel_dimension_n4():
    g = build_grid(4, 1.0)
    cx = assemble_complex(g)
    eps = MaterialPreset("constant", (1.0,))
    asm = sample_materials(g, eps, eps, SigmaSpec(1.0, 0.2))
    orc = dense_oracle(asm, cx)
    assert orc.kernel_dim == predicted_kernel_dim(asm, cx)


def test_oracle_cayley_matches_midpoint(grid3, cplx3, asm3):
    st = x_state(cplx3, asm3, seed=19)
    orc = dense_oracle(asm3, cplx3)
    stepper = MidpointStepper(asm3, cplx3, grid3.h / 2, solver_tol=1e-14)
    s = st
    ec, hc = st.e.copy(), st.h.copy()
    for _ in range(25):
        s, _ = stepper.step(s)
        ec, hc = orc.cayley_step(ec, hc, grid3.h / 2)
        assert np.linalg.norm(s.e - ec) + np.linalg.norm(s.h - hc) <= 1e-12


def test_oracle_expm_richardson_slope(grid3, cplx3, asm3):
    st = x_state(cplx3, asm3, seed=20)
    orc = dense_oracle(asm3, cplx3)
    errs = []
    dts = [grid3.h / 2, grid3.h / 4, grid3.h / 8]
    for dt in dts:
        s = st
        stepper = MidpointStepper(asm3, cplx3, dt, solver_tol=1e-14)
        for _ in range(int(round(1.0 / dt))):
            s, _ = stepper.step(s)
        ee, hh = orc.expm_state(st.e, st.h, 1.0)
        de, dh = s.e - ee, s.h - hh
        errs.append(np.sqrt(float(de @ (asm3.M_eps @ de)) + float(dh @ (asm3.M_mu @ dh))))
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert 1.8 <= slope <= 2.2


def test_decay_rate_matches_oracle_abscissa(grid3, cplx3, asm3):
    orc = dense_oracle(asm3, cplx3)
    st = x_state(cplx3, asm3, seed=21)
    res = simulate(st, asm3, cplx3, dt=grid3.h / 8, T=40.0, record_every=16)
    fit = fit_decay(res.series, (10.0, 36.0))
    assert fit.omega_fit > 0.0
    assert abs(fit.omega_fit - (-orc.spectral_abscissa)) / fit.omega_fit <= 0.2


def test_run_decay_analysis_aggregate(grid8, cplx8, asm8):
    from maxdamp.decay import run_decay_analysis

    st = x_state(cplx8, asm8, seed=30)
    rep = run_decay_analysis(
        st, asm8, cplx8, dt=grid8.h / 2, T=20.0, gamma_horizons=(5.0, 10.0, 20.0),
        record_every=4, sigma0=1.0,
    )
    assert rep.omega_fit > 0.0
    assert rep.envelope_ok
    assert len(rep.gamma_table) == 3
    assert all(g < 1.0 for _, g in rep.gamma_table)
    gvals = [g for _, g in rep.gamma_table]
    assert gvals == sorted(gvals, reverse=True)
    assert np.isfinite(rep.ratio_ED)
    assert np.isfinite(rep.dtH_constant)
