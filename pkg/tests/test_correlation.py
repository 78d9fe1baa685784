import numpy as np
import pytest

from mcbo.correlation import argmin_disp, cost_volume, displacement_candidates
from mcbo.grid import FeatureVolume


def random_features(dims=(4, 4, 4), channels=12, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureVolume(rng.uniform(0.0, 1.0, (channels,) + dims))


def naive_cost_volume(fixed, moving, radius):
    """Quadruple-loop oracle with sequential float64 channel accumulation."""
    C, H, W, D = fixed.shape
    cands = [
        (dh, dw, dd)
        for dh in range(-radius, radius + 1)
        for dw in range(-radius, radius + 1)
        for dd in range(-radius, radius + 1)
    ]
    fl = fixed.tolist()
    ml = moving.tolist()
    out = np.empty((H, W, D, len(cands)), dtype=np.float32)
    for h in range(H):
        for w in range(W):
            for d in range(D):
                for k, (dh, dw, dd) in enumerate(cands):
                    sh = min(max(h + dh, 0), H - 1)
                    sw = min(max(w + dw, 0), W - 1)
                    sd = min(max(d + dd, 0), D - 1)
                    s = 0.0
                    for c in range(C):
                        diff = fl[c][h][w][d] - ml[c][sh][sw][sd]
                        s += diff * diff
                    out[h, w, d, k] = np.float32(s)
    return out, cands


def test_candidates_lexicographic_and_centered():
    cands = displacement_candidates(1)
    assert cands.shape == (27, 3)
    assert cands[0].tolist() == [-1, -1, -1]
    assert cands[13].tolist() == [0, 0, 0]
    assert cands[-1].tolist() == [1, 1, 1]
    lex = sorted(map(tuple, cands))
    assert lex == list(map(tuple, cands))


def test_self_cost_zero_at_zero_displacement():
    f = random_features(seed=1)
    cv = cost_volume(f, f, 1)
    k0 = 13  # zero displacement in lexicographic order for R = 1
    assert np.array_equal(cv.costs[..., k0], np.zeros(cv.dims, dtype=np.float32))


def test_shifted_features_have_zero_cost_at_shift():
    f = random_features((5, 5, 5), seed=2)
    rolled = FeatureVolume(np.roll(f.data, 1, axis=1))
    cv = cost_volume(f, rolled, 1)
    k = np.where((cv.candidates == [1, 0, 0]).all(axis=1))[0][0]
    interior = cv.costs[1:-1, 1:-1, 1:-1, k]
    assert np.allclose(interior, 0.0, atol=0.0)


def test_matches_bruteforce_oracle_bitwise():
    fixed = random_features(seed=3)
    moving = random_features(seed=4)
    cv = cost_volume(fixed, moving, 1)
    expected, cands = naive_cost_volume(fixed.data, moving.data, 1)
    assert list(map(tuple, cv.candidates)) == cands
    assert np.array_equal(cv.costs, expected)


def test_mismatch_errors():
    with pytest.raises(ValueError):
        cost_volume(random_features((4, 4, 4)), random_features((4, 4, 5)), 1)
    with pytest.raises(ValueError):
        cost_volume(random_features(channels=12), random_features(channels=6), 1)


def test_argmin_identical_features_zero_field():
    f = random_features(seed=5)
    field = argmin_disp(cost_volume(f, f, 2))
    assert np.array_equal(field.vectors, np.zeros(f.dims + (3,)))


def test_argmin_recovers_shift_on_interior():
    f = random_features((6, 6, 6), seed=6)
    rolled = FeatureVolume(np.roll(f.data, 1, axis=1))
    field = argmin_disp(cost_volume(f, rolled, 1))
    interior = field.vectors[1:-1, 1:-1, 1:-1]
    assert np.allclose(interior[..., 0], 1.0)
    assert np.allclose(interior[..., 1:], 0.0)


def test_argmin_all_equal_costs_selects_zero():
    f = FeatureVolume(np.full((12, 3, 3, 3), 0.5))
    field = argmin_disp(cost_volume(f, f, 1))
    assert np.array_equal(field.vectors, np.zeros((3, 3, 3, 3)))


def test_argmin_tie_break_prefers_smaller_norm_then_lex():
    from mcbo.correlation import CostVolume

    cands = displacement_candidates(1)
    costs = np.zeros((1, 1, 1, 27), dtype=np.float32)
    # leave only two equally minimal candidates: (0,0,1) and (0,1,0)
    costs[..., :] = 5.0
    k_a = np.where((cands == [0, 0, 1]).all(axis=1))[0][0]
    k_b = np.where((cands == [0, 1, 0]).all(axis=1))[0][0]
    costs[..., k_a] = 1.0
    costs[..., k_b] = 1.0
    field = argmin_disp(CostVolume(costs, 1, cands))
    assert field.vectors[0, 0, 0].tolist() == [0.0, 0.0, 1.0]


def test_argmin_components_within_radius():
    fixed = random_features((5, 5, 5), seed=7)
    moving = random_features((5, 5, 5), seed=8)
    field = argmin_disp(cost_volume(fixed, moving, 2))
    assert np.abs(field.vectors).max() <= 2.0


def test_swap_symmetry_on_in_bounds_pairs():
    fixed = random_features((5, 5, 5), seed=9)
    moving = random_features((5, 5, 5), seed=10)
    fw = cost_volume(fixed, moving, 1)
    bw = cost_volume(moving, fixed, 1)
    for k, d in enumerate(fw.candidates):
        neg = np.where((bw.candidates == -d).all(axis=1))[0][0]
        for v in np.ndindex(5, 5, 5):
            tgt = tuple(np.array(v) + d)
            if all(0 <= t <= 4 for t in tgt):
                assert fw.costs[v + (k,)] == bw.costs[tgt + (neg,)]


def test_min_cost_never_exceeds_zero_candidate():
    fixed = random_features((4, 4, 4), seed=11)
    moving = random_features((4, 4, 4), seed=12)
    cv = cost_volume(fixed, moving, 1)
    k0 = 13
    assert (cv.costs.min(axis=-1) <= cv.costs[..., k0]).all()
