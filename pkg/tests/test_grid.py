import numpy as np
import pytest

from mcbo.grid import (
    DisplacementField,
    FeatureVolume,
    Volume3,
    avg_pool,
    compose,
    sample_field,
    smooth_box,
    trilinear_sample,
    upsample_field,
    warp,
    zero_field,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def random_volume(dims=(8, 8, 8), seed=0, spacing=(1.0, 1.0, 1.0)):
    return Volume3(rng(seed).uniform(0.0, 1.0, dims), spacing)


def random_field(dims=(8, 8, 8), seed=0, scale=1.0):
    return DisplacementField(rng(seed).uniform(-scale, scale, dims + (3,)))


# ---------------------------------------------------------------------------
# containers


def test_volume_rejects_nan():
    data = np.zeros((4, 4, 4))
    data[1, 2, 3] = np.nan
    with pytest.raises(ValueError):
        Volume3(data)


def test_volume_rejects_bad_spacing():
    with pytest.raises(ValueError):
        Volume3(np.zeros((4, 4, 4)), spacing=(1.0, 0.0, 1.0))


def test_field_rejects_inf():
    vec = np.zeros((4, 4, 4, 3))
    vec[0, 0, 0, 1] = np.inf
    with pytest.raises(ValueError):
        DisplacementField(vec)


def test_feature_volume_shape_checks():
    with pytest.raises(ValueError):
        FeatureVolume(np.zeros((4, 4, 4)))
    fv = FeatureVolume(np.zeros((12, 4, 5, 6)))
    assert fv.channels == 12
    assert fv.dims == (4, 5, 6)


# ---------------------------------------------------------------------------
# trilinear_sample


def test_trilinear_lattice_points_exact():
    vol = random_volume(seed=1)
    for p in [(2, 3, 1), (0, 0, 0), (7, 7, 7), (5, 0, 6)]:
        assert trilinear_sample(vol, np.array(p, dtype=float)) == vol.data[p]


def test_trilinear_midpoint_is_mean():
    data = np.zeros((3, 3, 3))
    data[1, 1, 1] = 0.0
    data[2, 1, 1] = 10.0
    vol = Volume3(data)
    assert trilinear_sample(vol, (1.5, 1.0, 1.0)) == pytest.approx(5.0)


def test_trilinear_clamps_to_border():
    vol = random_volume(seed=2)
    assert trilinear_sample(vol, (-0.5, 0.0, 0.0)) == vol.data[0, 0, 0]
    assert trilinear_sample(vol, (9.5, 7.0, 7.0)) == vol.data[7, 7, 7]


def test_trilinear_rejects_non_finite():
    vol = random_volume()
    with pytest.raises(ValueError):
        trilinear_sample(vol, (np.nan, 0.0, 0.0))


def test_trilinear_matches_manual_blend():
    vol = random_volume(seed=3)
    p = np.array([2.25, 3.5, 1.75])
    h0, w0, d0 = 2, 3, 1
    fh, fw, fd = 0.25, 0.5, 0.75
    expected = 0.0
    for dh, wh in ((0, 1 - fh), (1, fh)):
        for dw, ww in ((0, 1 - fw), (1, fw)):
            for dd, wd in ((0, 1 - fd), (1, fd)):
                expected += wh * ww * wd * vol.data[h0 + dh, w0 + dw, d0 + dd]
    assert trilinear_sample(vol, p) == pytest.approx(expected, rel=1e-14)


# ---------------------------------------------------------------------------
# warp


def test_warp_zero_field_is_identity():
    vol = random_volume(seed=4)
    out = warp(vol, zero_field(vol.dims))
    assert np.array_equal(out.data, vol.data)


def test_warp_constant_volume_any_field():
    vol = Volume3(np.full((6, 6, 6), 3.25))
    out = warp(vol, random_field((6, 6, 6), seed=5, scale=2.5))
    assert np.allclose(out.data, 3.25, atol=1e-12)


def test_warp_uniform_shift_matches_index_oracle():
    vol = random_volume(seed=6)
    vec = np.zeros((8, 8, 8, 3))
    vec[..., 0] = 1.0
    out = warp(vol, DisplacementField(vec))
    # shift by one voxel along h; the last row replicates the border
    expected = np.concatenate([vol.data[1:], vol.data[7:8]], axis=0)
    assert np.allclose(out.data, expected, atol=1e-12)


def test_warp_dim_mismatch():
    with pytest.raises(ValueError):
        warp(random_volume((4, 4, 4)), zero_field((4, 4, 5)))


# ---------------------------------------------------------------------------
# avg_pool


def test_avg_pool_identity_copy():
    vol = random_volume(seed=7)
    out = avg_pool(vol, 1)
    assert np.array_equal(out.data, vol.data)
    assert out.data is not vol.data


def test_avg_pool_constant():
    out = avg_pool(Volume3(np.full((4, 4, 4), 7.0)), 2)
    assert out.dims == (2, 2, 2)
    assert np.array_equal(out.data, np.full((2, 2, 2), 7.0))


def test_avg_pool_matches_triple_loop_oracle():
    vol = random_volume((4, 4, 4), seed=8)
    out = avg_pool(vol, 2)
    for i in range(2):
        for j in range(2):
            for k in range(2):
                block = vol.data[2 * i : 2 * i + 2, 2 * j : 2 * j + 2, 2 * k : 2 * k + 2]
                assert out.data[i, j, k] == pytest.approx(block.mean(), rel=1e-12)


def test_avg_pool_partial_blocks_use_actual_extent():
    vol = random_volume((5, 4, 7), seed=9)
    out = avg_pool(vol, 2)
    assert out.dims == (3, 2, 4)
    # last h block has a single row; last d block a single column
    assert out.data[2, 0, 0] == pytest.approx(vol.data[4, 0:2, 0:2].mean(), rel=1e-12)
    assert out.data[0, 0, 3] == pytest.approx(vol.data[0:2, 0:2, 6].mean(), rel=1e-12)


def test_avg_pool_spacing_and_mean_preservation():
    vol = random_volume((8, 8, 8), seed=10, spacing=(0.5, 1.0, 2.0))
    out = avg_pool(vol, 2)
    assert out.spacing == (1.0, 2.0, 4.0)
    assert out.data.mean() == pytest.approx(vol.data.mean(), rel=1e-12)


def test_avg_pool_feature_volume():
    fv = FeatureVolume(rng(11).uniform(0, 1, (3, 4, 4, 4)))
    out = avg_pool(fv, 2)
    assert out.data.shape == (3, 2, 2, 2)
    assert out.data[1, 0, 0, 0] == pytest.approx(fv.data[1, :2, :2, :2].mean(), rel=1e-12)


def test_avg_pool_rejects_bad_factor():
    with pytest.raises(ValueError):
        avg_pool(random_volume(), 0)
    with pytest.raises(ValueError):
        avg_pool(random_volume(), -2)


# ---------------------------------------------------------------------------
# upsample_field


def test_upsample_factor_one_identity():
    field = random_field(seed=12)
    out = upsample_field(field, field.dims, 1.0)
    assert np.array_equal(out.vectors, field.vectors)


def test_upsample_uniform_field_unit_conversion():
    vec = np.zeros((4, 4, 4, 3))
    vec[..., 0] = 1.0
    out = upsample_field(DisplacementField(vec), (8, 8, 8), 2.0)
    assert np.allclose(out.vectors[..., 0], 2.0, atol=1e-12)
    assert np.allclose(out.vectors[..., 1:], 0.0, atol=1e-12)


def test_upsample_linear_ramp_matches_closed_form():
    # coarse field f(h) = 0.5 * h on the h component
    vec = np.zeros((4, 4, 4, 3))
    vec[..., 0] = 0.5 * np.arange(4)[:, None, None]
    out = upsample_field(DisplacementField(vec), (8, 8, 8), 2.0)
    fine_h = np.arange(8, dtype=float)
    coarse_coord = np.clip((fine_h + 0.5) / 2.0 - 0.5, 0.0, 3.0)
    expected = 0.5 * coarse_coord * 2.0
    assert np.allclose(out.vectors[:, 0, 0, 0], expected, atol=1e-6)


def test_upsample_then_pool_round_trips_constant():
    vec = np.full((4, 4, 4, 3), 1.25)
    vec[..., 2] = -0.5
    coarse = DisplacementField(vec, spacing=(2.0, 2.0, 2.0))
    fine = upsample_field(coarse, (8, 8, 8), 2.0)
    back = avg_pool(fine, 2)
    assert np.array_equal(back.vectors, coarse.vectors)
    assert back.spacing == coarse.spacing


def test_upsample_rejects_bad_factor():
    with pytest.raises(ValueError):
        upsample_field(random_field(), (8, 8, 8), 0.0)
    with pytest.raises(ValueError):
        upsample_field(random_field(), (8, 8, 8), -1.0)


# ---------------------------------------------------------------------------
# compose


def test_compose_identity_element():
    f = random_field(seed=13)
    zero = zero_field(f.dims)
    assert np.array_equal(compose(f, zero).vectors, f.vectors)
    assert np.array_equal(compose(zero, f).vectors, f.vectors)


def test_compose_uniform_translations_add():
    t1 = np.array([0.5, -0.25, 1.0])
    t2 = np.array([-0.25, 0.75, 0.5])
    f1 = DisplacementField(np.broadcast_to(t1, (8, 8, 8, 3)).copy())
    f2 = DisplacementField(np.broadcast_to(t2, (8, 8, 8, 3)).copy())
    out = compose(f1, f2)
    inner = out.vectors[2:-2, 2:-2, 2:-2]
    assert np.allclose(inner, t1 + t2, atol=1e-12)


def test_compose_matches_pointwise_oracle():
    outer = DisplacementField(smooth_vectors(seed=14))
    inner = DisplacementField(smooth_vectors(seed=15))
    out = compose(outer, inner)
    pts = np.stack(np.meshgrid(*[np.arange(8.0)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    sampled = sample_field(outer, pts + inner.vectors.reshape(-1, 3))
    expected = inner.vectors.reshape(-1, 3) + sampled
    assert np.allclose(out.vectors.reshape(-1, 3), expected, atol=1e-5)


def smooth_vectors(seed, dims=(8, 8, 8), scale=1.5):
    raw = rng(seed).uniform(-scale, scale, dims + (3,))
    f = smooth_box(DisplacementField(raw), 3, 2)
    return f.vectors


def test_compose_dim_mismatch():
    with pytest.raises(ValueError):
        compose(random_field((4, 4, 4)), random_field((5, 4, 4)))


# ---------------------------------------------------------------------------
# smooth_box


def test_smooth_box_kernel_one_identity():
    f = random_field(seed=16)
    out = smooth_box(f, 1, 3)
    assert np.array_equal(out.vectors, f.vectors)


def test_smooth_box_preserves_constant():
    vec = np.full((6, 6, 6, 3), -2.5)
    out = smooth_box(DisplacementField(vec), 5, 2)
    assert np.allclose(out.vectors, -2.5, atol=1e-12)


def test_smooth_box_spike_spreads_to_cube():
    vec = np.zeros((9, 9, 9, 3))
    vec[4, 4, 4, 0] = 1.0
    out = smooth_box(DisplacementField(vec), 3, 1)
    expected = np.zeros((9, 9, 9))
    expected[3:6, 3:6, 3:6] = 1.0 / 27.0
    assert np.allclose(out.vectors[..., 0], expected, atol=1e-12)
    assert np.allclose(out.vectors[..., 1:], 0.0)


def test_smooth_box_passes_compose():
    f = random_field(seed=17)
    twice = smooth_box(smooth_box(f, 3, 1), 3, 1)
    once = smooth_box(f, 3, 2)
    assert np.array_equal(twice.vectors, once.vectors)


def test_smooth_box_rejects_even_kernel():
    with pytest.raises(ValueError):
        smooth_box(random_field(), 4, 1)
