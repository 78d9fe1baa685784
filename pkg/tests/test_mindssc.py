import numpy as np
import pytest

from mcbo.grid import Volume3
from mcbo.mindssc import MindConfig, extract, pair_offsets


def naive_extract(data, cfg):
    """Literal per-voxel reimplementation of the descriptor definition.

    The squared shifted difference is formed at border-replicated positions
    and then box-summed over the patch, itself with replicated borders (the
    same convention the separable implementation defines).
    """
    H, W, D = data.shape
    pairs = pair_offsets(cfg.dilation)
    p = cfg.patch_radius

    def at(h, w, d):
        return data[min(max(h, 0), H - 1), min(max(w, 0), W - 1), min(max(d, 0), D - 1)]

    def clamp(v, hi):
        return min(max(v, 0), hi - 1)

    dists = np.zeros((len(pairs), H, W, D))
    for c, (ra, rb) in enumerate(pairs):
        sq = np.zeros((H, W, D))
        for h in range(H):
            for w in range(W):
                for d in range(D):
                    a = at(h + ra[0], w + ra[1], d + ra[2])
                    b = at(h + rb[0], w + rb[1], d + rb[2])
                    sq[h, w, d] = (a - b) ** 2
        for h in range(H):
            for w in range(W):
                for d in range(D):
                    s = 0.0
                    for oh in range(-p, p + 1):
                        for ow in range(-p, p + 1):
                            for od in range(-p, p + 1):
                                s += sq[clamp(h + oh, H), clamp(w + ow, W), clamp(d + od, D)]
                    dists[c, h, w, d] = s
    variance = dists.mean(axis=0)
    m = variance.mean()
    lo = max(cfg.epsilon, 1e-3 * m)
    hi = max(1e3 * m, lo)
    variance = np.clip(variance, lo, hi)
    return np.exp(-dists / variance)


def test_pair_offsets_are_the_twelve_perpendicular_pairs():
    pairs = pair_offsets(2)
    assert len(pairs) == 12
    for a, b in pairs:
        assert sum(x * y for x, y in zip(a, b)) == 0
        assert sum(x * x for x in a) == 4
        # pairs are i < j in lexicographic offset order
        assert a < b
    assert len(set(pairs)) == 12


def test_constant_volume_gives_all_ones():
    fv = extract(Volume3(np.full((7, 7, 7), 4.5)))
    assert fv.channels == 12
    assert np.allclose(fv.data, 1.0, atol=1e-12)


def test_affine_intensity_invariance():
    rng = np.random.default_rng(3)
    data = rng.uniform(0.0, 1.0, (8, 8, 8))
    f1 = extract(Volume3(data))
    f2 = extract(Volume3(3.7 * data - 12.0))
    assert np.allclose(f1.data, f2.data, atol=1e-5)


def test_matches_naive_oracle_bright_voxel():
    data = np.zeros((8, 8, 8))
    data[4, 3, 5] = 1.0
    cfg = MindConfig()
    got = extract(Volume3(data), cfg)
    expected = naive_extract(data, cfg)
    assert np.allclose(got.data, expected, atol=1e-12)


def test_matches_naive_oracle_random_small():
    rng = np.random.default_rng(9)
    data = rng.uniform(0.0, 1.0, (6, 5, 7))
    cfg = MindConfig(dilation=1, patch_radius=1)
    got = extract(Volume3(data), cfg)
    expected = naive_extract(data, cfg)
    assert np.allclose(got.data, expected, atol=1e-12)


def test_values_in_unit_interval():
    rng = np.random.default_rng(4)
    fv = extract(Volume3(rng.uniform(-5.0, 5.0, (9, 8, 7))))
    assert fv.data.min() > 0.0
    assert fv.data.max() <= 1.0


def test_flip_covariance_with_channel_permutation():
    rng = np.random.default_rng(5)
    data = rng.uniform(0.0, 1.0, (8, 8, 8))
    cfg = MindConfig()
    feats = extract(Volume3(data), cfg)
    flipped_feats = extract(Volume3(data[::-1].copy()), cfg)

    # under an h flip, offset (a, b, c) maps to (-a, b, c); find where each
    # original pair lands in the canonical pair list
    pairs = pair_offsets(cfg.dilation)
    index = {frozenset(p): i for i, p in enumerate(pairs)}
    perm = [
        index[frozenset(((-a[0], a[1], a[2]), (-b[0], b[1], b[2])))]
        for a, b in pairs
    ]
    expected = feats.data[perm, ::-1, :, :]
    assert np.allclose(flipped_feats.data, expected, atol=1e-10)


def test_patch_radius_zero_uses_pointwise_distances():
    rng = np.random.default_rng(6)
    data = rng.uniform(0.0, 1.0, (6, 6, 6))
    cfg = MindConfig(patch_radius=0)
    got = extract(Volume3(data), cfg)
    expected = naive_extract(data, cfg)
    assert np.allclose(got.data, expected, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        MindConfig(dilation=0)
    with pytest.raises(ValueError):
        MindConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        MindConfig(patch_radius=-1)
