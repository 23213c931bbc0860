import numpy as np
import pytest

from maxdamp.grid import GridError, ShapeError, apply_pec, assemble_complex, build_grid


def test_counts_n2():
    g = build_grid(2, 1.0)
    assert g.node_count == 27
    assert g.edge_count_per_axis == 2 * 3**2
    assert g.face_count_per_axis == 2**2 * 3
    assert g.cell_count == 8


def test_counts_n4():
    g = build_grid(4, 1.0)
    assert g.node_count == 125
    assert g.edge_count == 3 * 4 * 5**2
    assert g.face_count == 3 * 4**2 * 5
    assert g.cell_count == 64


def test_invalid_parameters():
    with pytest.raises(GridError):
        build_grid(1, 1.0)
    with pytest.raises(GridError):
        build_grid(4, 0.0)
    with pytest.raises(GridError):
        build_grid(4, -2.0)


def test_index_maps_are_bijections():
    g = build_grid(3, 1.0)
    for flat in range(g.edge_count):
        axis, i, j, k = g.edge_tuple(flat)
        assert g.edge_index(axis, i, j, k) == flat
    for flat in range(g.face_count):
        axis, i, j, k = g.face_tuple(flat)
        assert g.face_index(axis, i, j, k) == flat
    for flat in range(g.node_count):
        i, j, k = g.node_tuple(flat)
        assert g.node_index(i, j, k) == flat
    for flat in range(g.cell_count):
        i, j, k = g.cell_tuple(flat)
        assert g.cell_index(i, j, k) == flat


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_composed_nilpotency_exact(n):
    cx = assemble_complex(build_grid(n, 1.0))
    assert cx.CG.nnz == 0 or np.abs(cx.CG.data).max() == 0.0
    assert cx.DC.nnz == 0 or np.abs(cx.DC.data).max() == 0.0
    assert cx.DCw.nnz == 0 or np.abs(cx.DCw.data).max() == 0.0


def test_nilpotency_on_random_vectors():
    cx = assemble_complex(build_grid(2, 1.0))
    rng = np.random.default_rng(0)
    CG = cx.C_full @ cx.G
    DC = cx.D @ cx.C_full
    for _ in range(100):
        p = rng.standard_normal(cx.grid.node_count)
        assert np.max(np.abs(CG @ p)) == 0.0
    cx3 = assemble_complex(build_grid(3, 1.0))
    DC3 = cx3.D @ cx3.C_full
    for _ in range(100):
        u = rng.standard_normal(cx3.grid.edge_count)
        assert np.max(np.abs(DC3 @ u)) == 0.0


def test_curl_of_discrete_gradient_is_zero_exactly():
    g = build_grid(4, 1.0)
    cx = assemble_complex(g)
    pos = g.node_positions()
    p = np.sin(np.pi * pos[:, 0]) * np.sin(np.pi * pos[:, 1]) * np.sin(np.pi * pos[:, 2])
    assert np.max(np.abs((cx.C_full @ cx.G) @ p)) == 0.0


def test_masked_complex_still_exact_on_retained_dofs():
    cx = assemble_complex(build_grid(4, 1.0))
    CGm = (cx.C @ cx.G).tocsr()
    inner = np.nonzero(cx.interior_node_mask)[0]
    sub = CGm[:, inner]
    sub.sum_duplicates()
    assert sub.nnz == 0 or np.abs(sub.data).max() == 0.0


def _exact_field(points):
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    E = np.stack(
        [np.sin(np.pi * y) * np.sin(np.pi * z), np.sin(np.pi * z) * np.sin(np.pi * x), np.sin(np.pi * x) * np.sin(np.pi * y)],
        axis=1,
    )
    pi = np.pi
    curl = np.stack(
        [
            pi * np.cos(pi * y) * np.sin(pi * x) - pi * np.cos(pi * z) * np.sin(pi * x),
            pi * np.cos(pi * z) * np.sin(pi * y) - pi * np.cos(pi * x) * np.sin(pi * y),
            pi * np.cos(pi * x) * np.sin(pi * z) - pi * np.cos(pi * y) * np.sin(pi * z),
        ],
        axis=1,
    )
    return E, curl


def test_curl_consistency_second_order():
    errs = []
    for n in (8, 16, 32):
        g = build_grid(n, 1.0)
        cx = assemble_complex(g)
        mids = g.edge_midpoints()
        E, _ = _exact_field(mids)
        axis = np.repeat(np.arange(3), g.edge_count_per_axis)
        e = E[np.arange(g.edge_count), axis]
        centers = g.face_centers()
        _, curl = _exact_field(centers)
        faxis = np.repeat(np.arange(3), g.face_count_per_axis)
        curl_exact = curl[np.arange(g.face_count), faxis]
        approx = cx.C_full @ e
        interior = ~cx.boundary_face_mask
        errs.append(np.max(np.abs(approx - curl_exact)[interior]))
    s1 = np.log2(errs[0] / errs[1])
    s2 = np.log2(errs[1] / errs[2])
    assert 1.8 <= s1 <= 2.2
    assert 1.8 <= s2 <= 2.2


def test_apply_pec():
    cx = assemble_complex(build_grid(2, 1.0))
    ones = np.ones(cx.grid.edge_count)
    masked = apply_pec(cx, ones)
    assert np.all(masked[~cx.pec_edge_mask] == 0.0)
    assert np.all(masked[cx.pec_edge_mask] == 1.0)
    # n=2: only the 3 axis families' central edges survive
    assert masked.sum() == cx.pec_edge_mask.sum()
    assert np.all(apply_pec(cx, np.zeros(cx.grid.edge_count)) == 0.0)
    interior_only = np.where(cx.pec_edge_mask, 2.5, 0.0)
    assert np.array_equal(apply_pec(cx, interior_only), interior_only)
    # idempotence
    rng = np.random.default_rng(1)
    e = rng.standard_normal(cx.grid.edge_count)
    once = apply_pec(cx, e)
    assert np.array_equal(apply_pec(cx, once), once)


def test_apply_pec_shape_error():
    cx = assemble_complex(build_grid(2, 1.0))
    with pytest.raises(ShapeError):
        apply_pec(cx, np.zeros(5))


def test_boundary_face_mask_counts():
    g = build_grid(4, 1.0)
    cx = assemble_complex(g)
    assert cx.boundary_face_mask.sum() == 6 * g.n**2


def test_adjoint_consistency():
    cx = assemble_complex(build_grid(3, 1.0))
    rng = np.random.default_rng(2)
    for _ in range(10):
        u = rng.standard_normal(cx.grid.edge_count)
        v = rng.standard_normal(cx.grid.face_count)
        lhs = float((cx.C @ u) @ v)
        rhs = float(u @ (cx.Ct @ v))
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


def test_dual_gradient_spans_curl_transpose_kernel():
    cx = assemble_complex(build_grid(3, 1.0))
    # range(Gf) must lie in ker(Cw^T) exactly (composed product cancels)
    prod = (cx.Cwt @ cx.Gf).tocsr()
    prod.sum_duplicates()
    assert prod.nnz == 0 or np.abs(prod.data).max() == 0.0
    # dimension: faces - rank(C_masked) == dual nodes - 1
    n = cx.grid.n
    ker_dim = cx.grid.face_count - (3 * n * (n - 1) ** 2 - (n - 1) ** 3)
    assert ker_dim == cx.Gf.shape[1] - 1
