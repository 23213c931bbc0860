import numpy as np
import pytest

from maxdamp.grid import build_grid
from maxdamp.linalg import lanczos_extreme
from maxdamp.materials import (
    MaterialError,
    MaterialPreset,
    SigmaSpec,
    check_nontrapping,
    check_sigma_gap,
    collar_mask,
    sample_materials,
)

X0 = (0.5, 0.5, 0.5)


def test_constant_preset_yields_yee_weights():
    g = build_grid(4, 1.0)
    eps = MaterialPreset("constant", (1.0,))
    asm = sample_materials(g, eps, eps, SigmaSpec(1.0, 0.2, "indicator"))
    h3 = g.h**3
    d = asm.M_eps.diagonal() / h3
    assert set(np.round(d, 12)) == {0.25, 0.5, 1.0}
    assert (asm.M_eps - asm.M_eps.T).nnz == 0
    dm = asm.M_mu.diagonal() / h3
    assert set(np.round(dm, 12)) == {0.5, 1.0}


def test_constant_scaling_exact():
    g = build_grid(3, 1.0)
    c = 2.5
    asm1 = sample_materials(g, MaterialPreset("constant", (1.0,)), MaterialPreset("constant", (1.0,)), SigmaSpec(0.0, 0.2))
    asmc = sample_materials(g, MaterialPreset("constant", (c,)), MaterialPreset("constant", (1.0,)), SigmaSpec(0.0, 0.2))
    rng = np.random.default_rng(0)
    e = rng.standard_normal(g.edge_count)
    assert float(e @ (asmc.M_eps @ e)) == pytest.approx(c * float(e @ (asm1.M_eps @ e)), rel=1e-14)


def test_diag_aniso_ratios():
    g = build_grid(4, 1.0)
    eps = MaterialPreset("diag_aniso", (1.0, 2.0, 4.0))
    asm = sample_materials(g, eps, MaterialPreset("constant", (1.0,)), SigmaSpec(0.0, 0.2))
    d = asm.M_eps.diagonal()
    per = g.edge_count_per_axis
    # interior edges carry the full weight h^3 * d_axis
    full = g.h**3
    x_w = d[:per].max() / full
    y_w = d[per : 2 * per].max() / full
    z_w = d[2 * per :].max() / full
    assert (x_w, y_w, z_w) == (1.0, 2.0, 4.0)
    # diagonal tensor -> diagonal matrix
    assert asm.M_eps.nnz == np.count_nonzero(asm.M_eps.diagonal())


def test_rotated_aniso_couples_and_is_spd():
    g = build_grid(8, 1.0)
    eps = MaterialPreset("rotated_aniso", (1.0, 4.0, 1.0, 45.0))
    asm = sample_materials(g, eps, eps, SigmaSpec(0.0, 0.25))  # spd check runs at build
    M = asm.M_eps
    per = g.edge_count_per_axis
    xy = M[:per, per : 2 * per]
    assert abs(xy).max() > 0.0
    assert (M - M.T).nnz == 0
    rng = np.random.default_rng(3)
    vals, _, _ = lanczos_extreme(lambda v: M @ v, lambda a, b: float(a @ b), rng.standard_normal(M.shape[0]), 50)
    assert vals[0] > 0.0
    for _ in range(200):
        v = rng.standard_normal(M.shape[0])
        assert float(v @ (M @ v)) > 0.0


def test_material_error_names_point():
    g = build_grid(3, 1.0)
    bad = MaterialPreset("diag_aniso", (1.0, -2.0, 4.0))
    with pytest.raises(MaterialError, match=r"not positive definite at point \("):
        sample_materials(g, bad, MaterialPreset("constant", (1.0,)), SigmaSpec(0.0, 0.2))


def test_sigma_zero_rows_outside_omega():
    g = build_grid(8, 1.0)
    eps = MaterialPreset("constant", (1.0,))
    asm = sample_materials(g, eps, eps, SigmaSpec(2.0, 0.25, "indicator"))
    d = asm.M_sigma.diagonal()
    mids = g.edge_midpoints()
    deep = g.boundary_distance(mids) > 0.25 + g.h  # strictly interior edges
    assert np.all(d[deep] == 0.0)
    assert (d > 0).any()


# --- non-trapping -----------------------------------------------------------


def test_nontrapping_constant():
    g = build_grid(4, 1.0)
    eps = MaterialPreset("constant", (3.0,))
    rep = check_nontrapping(eps, eps, X0, g)
    assert rep.eta_eps == pytest.approx(1.0, abs=1e-12)
    assert rep.eta_mu == pytest.approx(1.0, abs=1e-12)
    assert rep.passes


def test_nontrapping_radial_growth():
    g = build_grid(6, 1.0)
    eps = MaterialPreset("radial_growth", (1.0, 1.0))
    rep = check_nontrapping(eps, MaterialPreset("constant", (1.0,)), X0, g)
    assert rep.eta_eps >= 1.0 - 1e-12
    assert rep.passes


def test_nontrapping_radial_decay_fails():
    g = build_grid(6, 1.0)
    eps = MaterialPreset("radial_decay", (4.0,))
    rep = check_nontrapping(eps, MaterialPreset("constant", (1.0,)), X0, g)
    assert rep.eta_eps <= 0.0
    assert not rep.passes
    # the worst point is far from the radial center
    assert np.linalg.norm(rep.worst_point - np.array(X0)) ** 2 > 1.0 / 8.0


def test_radial_derivatives_match_finite_differences():
    rng = np.random.default_rng(5)
    x0 = np.array(X0)
    for preset in (MaterialPreset("radial_growth", (1.0, 2.0)), MaterialPreset("radial_decay", (4.0,))):
        pts = rng.uniform(0.05, 0.95, size=(100, 3))
        tilde = preset.tensor_tilde(pts, x0)
        base = preset.tensor(pts, x0)
        eps_fd = 1e-6
        m = pts - x0
        up = preset.tensor(pts + eps_fd * m, x0)
        dn = preset.tensor(pts - eps_fd * m, x0)
        fd = base + (up - dn) / (2 * eps_fd)
        assert np.max(np.abs(tilde - fd)) <= 1e-6


def test_nontrapping_scale_invariance():
    g = build_grid(4, 1.0)
    r1 = check_nontrapping(MaterialPreset("radial_growth", (1.0, 1.0)), MaterialPreset("constant", (1.0,)), X0, g)
    r2 = check_nontrapping(MaterialPreset("radial_growth", (5.0, 5.0)), MaterialPreset("constant", (1.0,)), X0, g)
    assert r1.eta_eps == pytest.approx(r2.eta_eps, rel=1e-10)


# --- collar -----------------------------------------------------------------


def test_collar_full_box():
    g = build_grid(8, 1.0)
    a = 0.5 - g.h / 4
    _, cells, ups = collar_mask(g, a)
    assert cells.all()
    assert not ups.any()


def test_collar_single_layer():
    g = build_grid(8, 1.0)
    _, cells, _ = collar_mask(g, g.h / 2)
    assert cells.sum() == 8**3 - 6**3


def test_collar_count_direct_enumeration():
    g = build_grid(8, 1.0)
    a = 0.25
    _, cells, ups = collar_mask(g, a)
    # independent oracle: explicit loop over cell centers
    count = 0
    for i in range(8):
        for j in range(8):
            for k in range(8):
                c = (np.array([i, j, k]) + 0.5) * g.h
                if min(c.min(), (1 - c).min()) < a:
                    count += 1
    assert cells.sum() == count == 448
    assert ups.sum() == 64


def test_collar_rejects_bad_width():
    g = build_grid(8, 1.0)
    with pytest.raises(MaterialError):
        collar_mask(g, 0.6)
    with pytest.raises(MaterialError):
        collar_mask(g, 0.0)


# --- sigma gap ---------------------------------------------------------------


def test_sigma_gap_indicator_passes():
    g = build_grid(6, 1.0)
    eps = MaterialPreset("constant", (1.0,))
    asm = sample_materials(g, eps, eps, SigmaSpec(1.0, 0.25, "indicator"))
    rep = check_sigma_gap(asm, 1.0)
    assert rep.passes and not rep.undamped


def test_sigma_gap_undamped():
    g = build_grid(6, 1.0)
    eps = MaterialPreset("constant", (1.0,))
    asm = sample_materials(g, eps, eps, SigmaSpec(0.0, 0.25, "indicator"))
    rep = check_sigma_gap(asm, 0.0)
    assert rep.passes and rep.undamped


def test_sigma_gap_smoothstep_fails():
    g = build_grid(6, 1.0)
    eps = MaterialPreset("constant", (1.0,))
    asm = sample_materials(g, eps, eps, SigmaSpec(1.0, 0.25, "smoothstep"))
    rep = check_sigma_gap(asm, 1.0)
    assert not rep.passes
    assert len(rep.offending_cells) > 0
