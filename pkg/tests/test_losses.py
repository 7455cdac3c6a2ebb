import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from synreid.errors import ConfigError, ShapeError
from synreid.losses import (Mining, TripletConfig, batch_hard_triplet, cross_entropy_id, mine_batch_hard,
                            one_hot, pairwise_euclidean, triplet_hinge)

CFG = TripletConfig(margin=0.3)


def test_ce_uniform_four_classes():
    p = torch.full((4,), 0.25, dtype=torch.float64)
    for c in range(4):
        assert cross_entropy_id(p, one_hot(c, 4, torch.float64)).item() == pytest.approx(math.log(4), abs=1e-12)


def test_ce_one_hot_correct_is_zero():
    y = one_hot(2, 5)
    assert cross_entropy_id(y.clone(), y).item() == 0.0


def test_ce_two_class_arithmetic():
    p = torch.tensor([0.7, 0.3], dtype=torch.float64)
    assert cross_entropy_id(p, one_hot(1, 2, torch.float64)).item() == pytest.approx(1.203973, abs=1e-6)


def test_ce_shape_mismatch():
    with pytest.raises(ShapeError):
        cross_entropy_id(torch.full((3,), 1 / 3), one_hot(0, 4))


def test_ce_clamps_zero_probability():
    loss = cross_entropy_id(torch.tensor([1.0, 0.0]), one_hot(1, 2))
    assert loss.item() == pytest.approx(-math.log(1e-12))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 10), elements=st.floats(0, 1)), st.integers(0, 9))
def test_ce_non_negative(raw, c):
    p = torch.from_numpy(raw + 1e-3)
    p = p / p.sum()
    c = c % len(raw)
    loss = cross_entropy_id(p, one_hot(c, len(raw), torch.float64)).item()
    assert loss >= 0 and math.isfinite(loss)


def _points(d_ap, d_an):
    a = torch.zeros(2, dtype=torch.float64)
    return a, torch.tensor([d_ap, 0.0], dtype=torch.float64), torch.tensor([0.0, d_an], dtype=torch.float64)


def test_hinge_cases():
    assert triplet_hinge(*_points(0.2, 0.9), CFG).item() == 0.0
    assert triplet_hinge(*_points(0.9, 0.2), CFG).item() == pytest.approx(1.0, abs=1e-12)
    x = torch.ones(3)
    assert triplet_hinge(x, x, x, CFG).item() == pytest.approx(0.3)


def test_hinge_shape_mismatch():
    with pytest.raises(ShapeError):
        triplet_hinge(torch.zeros(2), torch.zeros(3), torch.zeros(2), CFG)


def test_negative_margin_rejected():
    with pytest.raises(ConfigError):
        TripletConfig(margin=-0.1)


def test_hinge_isometry_invariant():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, p, n = (torch.from_numpy(rng.normal(size=8)) for _ in range(3))
        q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
        q = torch.from_numpy(q)
        shift = torch.from_numpy(rng.normal(size=8))
        before = triplet_hinge(a, p, n, CFG)
        after = triplet_hinge(q @ a + shift, q @ p + shift, q @ n + shift, CFG)
        assert after.item() == pytest.approx(before.item(), abs=1e-5)


def test_batch_hard_separated_pairs():
    f = torch.tensor([[0.0], [0.0], [1.0], [1.0]])
    assert batch_hard_triplet(f, [1, 1, 2, 2], CFG).item() == 0.0


def test_batch_hard_all_identical():
    f = torch.zeros(4, 3)
    assert batch_hard_triplet(f, [1, 1, 2, 2], CFG).item() == pytest.approx(0.3)


def test_batch_hard_single_sample_id():
    with pytest.raises(ConfigError, match="id 3"):
        batch_hard_triplet(torch.zeros(5, 2), [1, 1, 2, 2, 3], CFG)


def test_batch_hard_one_identity():
    with pytest.raises(ConfigError):
        batch_hard_triplet(torch.zeros(4, 2), [1, 1, 1, 1], CFG)


def brute_force_batch_hard(x, ids, margin):
    """Exhaustive per-anchor search over every same-id and different-id pair."""
    n = len(ids)
    total = 0.0
    picks = []
    for a in range(n):
        best_p, best_pd = None, -1.0
        best_n, best_nd = None, math.inf
        for j in range(n):
            d = math.sqrt(sum((x[a][k] - x[j][k]) ** 2 for k in range(len(x[a]))))
            if j != a and ids[j] == ids[a] and d > best_pd:
                best_p, best_pd = j, d
            if ids[j] != ids[a] and d < best_nd:
                best_n, best_nd = j, d
        picks.append((best_p, best_n))
        total += max(0.0, best_pd - best_nd + margin)
    return total / n, picks


def test_batch_hard_matches_brute_force_random_batch():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(8, 5))
    ids = [1, 1, 1, 1, 2, 2, 2, 2]
    expected, _ = brute_force_batch_hard(x.tolist(), ids, 0.3)
    got = batch_hard_triplet(torch.from_numpy(x), ids, CFG).item()
    assert got == pytest.approx(expected, abs=1e-12)


def test_batch_hard_tie_breaks_to_lowest_index():
    x = torch.tensor([[0.0], [1.0], [-1.0], [5.0], [5.0]], dtype=torch.float64)
    ids = torch.tensor([1, 1, 1, 2, 2])
    pos, neg = mine_batch_hard(pairwise_euclidean(x), ids)
    assert pos[0].item() == 1   # samples 1 and 2 are both at distance 1
    assert neg[0].item() == 3   # samples 3 and 4 coincide


def test_all_valid_mining_matches_enumeration():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, 3))
    ids = [1, 1, 2, 2, 3, 3]
    vals = []
    for a in range(6):
        for p in range(6):
            for n in range(6):
                if p != a and ids[p] == ids[a] and ids[n] != ids[a]:
                    dap = np.linalg.norm(x[a] - x[p])
                    dan = np.linalg.norm(x[a] - x[n])
                    vals.append(max(0.0, dap - dan + 0.3))
    cfg = TripletConfig(margin=0.3, mining=Mining.ALL_VALID)
    assert batch_hard_triplet(torch.from_numpy(x), ids, cfg).item() == pytest.approx(np.mean(vals), abs=1e-12)


def test_losses_finite_gradient_at_coincident_points():
    f = torch.zeros(4, 3, requires_grad=True)
    batch_hard_triplet(f, [1, 1, 2, 2], CFG).backward()
    assert torch.isfinite(f.grad).all()
