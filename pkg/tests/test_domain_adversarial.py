import math

import numpy as np
import pytest
import torch

from synreid.datamodel import DomainLabel
from synreid.domain_adversarial import (DomainClassifierHead, DomainRegressor, StitchSpec,
                                        combined_domain_regression_loss, domain_target, frame_domain_loss,
                                        grl_apply, grl_lambda, stitch_sequences, stitched_batch,
                                        total_domain_loss, video_domain_loss)
from synreid.errors import ConfigError, ShapeError

S, T = DomainLabel.SOURCE, DomainLabel.TARGET


def constant_head(level, dim, probs):
    """A head whose softmax output is ``probs`` for every input."""
    head = DomainClassifierHead(level, dim, hidden=4, dropout=0.0)
    with torch.no_grad():
        for p in head.parameters():
            p.zero_()
        head.net[-1].bias.copy_(torch.log(torch.tensor(probs)))
    return head


def test_grl_forward_identity():
    x = torch.randn(3, 4)
    assert torch.equal(grl_apply(x, 0.7), x)


@pytest.mark.parametrize("lam,expected", [(1.0, -1.0), (0.0, 0.0), (2.5, -2.5)])
def test_grl_backward_scales(lam, expected):
    x = torch.randn(3, 4, requires_grad=True)
    grl_apply(x, lam).sum().backward()
    assert torch.equal(x.grad, torch.full_like(x, expected))


def test_grl_negative_lambda_rejected():
    with pytest.raises(ConfigError):
        grl_apply(torch.zeros(1), -0.1)


def test_grl_matches_negated_numeric_gradient():
    rng = np.random.default_rng(0)
    torch.manual_seed(0)
    head = torch.nn.Sequential(torch.nn.Linear(5, 7), torch.nn.Tanh(), torch.nn.Linear(7, 1)).double()
    for _ in range(20):
        x0 = torch.from_numpy(rng.normal(size=5))
        lam = float(rng.uniform(0.05, 2.0))
        x = x0.clone().requires_grad_(True)
        head(grl_apply(x, lam)).sum().backward()
        eps = 1e-6
        numeric = torch.zeros(5, dtype=torch.float64)
        with torch.no_grad():
            for i in range(5):
                e = torch.zeros(5, dtype=torch.float64)
                e[i] = eps
                numeric[i] = (head(x0 + e) - head(x0 - e)).item() / (2 * eps)
        rel = (x.grad + lam * numeric).norm() / (lam * numeric).norm()
        assert rel <= 1e-4


def test_lambda_schedule():
    assert grl_lambda(0.0) == 0.0
    assert grl_lambda(1.0) == pytest.approx(2 / (1 + math.exp(-10)) - 1)
    assert grl_lambda(0.3, "constant", 0.4) == 0.4
    with pytest.raises(ConfigError):
        grl_lambda(0.3, "sawtooth")


def test_frame_loss_uniform_head():
    head = constant_head("frame", 6, [0.5, 0.5])
    loss = frame_domain_loss(torch.randn(3, 4, 6), [S, T, T], head, 1.0)
    assert loss.item() == pytest.approx(math.log(2), abs=1e-6)


def test_frame_loss_confident_correct_head_is_zero():
    head = constant_head("frame", 6, [1.0 - 1e-15, 1e-15])
    head.double()
    loss = frame_domain_loss(torch.randn(2, 4, 6, dtype=torch.float64), [S, S], head, 1.0)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_frame_loss_level_mismatch():
    with pytest.raises(ConfigError):
        frame_domain_loss(torch.randn(2, 3, 6), [S, T], DomainClassifierHead("video", 6), 1.0)
    with pytest.raises(ConfigError):
        video_domain_loss(torch.randn(2, 6), [S, T], DomainClassifierHead("frame", 6), 1.0)


def test_frame_loss_matches_scalar_loop():
    torch.manual_seed(1)
    head = DomainClassifierHead("frame", 5, hidden=8, dropout=0.0).double()
    feats = torch.randn(4, 3, 5, dtype=torch.float64)
    labels = [S, T, T, S]
    expected = []
    with torch.no_grad():
        for i in range(4):
            for t in range(3):
                p = torch.softmax(head(feats[i, t]), -1)
                expected.append(-math.log(p[int(labels[i])].item()))
    assert frame_domain_loss(feats, labels, head, 1.0).item() == pytest.approx(np.mean(expected), abs=1e-12)


def test_video_loss_uniform_and_confident():
    feats = torch.randn(4, 6)
    assert video_domain_loss(feats, [S, T, S, T], constant_head("video", 6, [0.5, 0.5]), 1.0).item() == \
        pytest.approx(math.log(2), abs=1e-6)
    head = constant_head("video", 6, [1e-15, 1.0 - 1e-15]).double()
    assert video_domain_loss(feats.double(), [T, T, T, T], head, 1.0).item() == pytest.approx(0.0, abs=1e-12)


def test_video_loss_equals_frame_loss_for_single_frame_clips():
    torch.manual_seed(2)
    frame_head = DomainClassifierHead("frame", 5, dropout=0.0)
    video_head = DomainClassifierHead("video", 5, dropout=0.0)
    video_head.load_state_dict(frame_head.state_dict())
    frames = torch.randn(6, 1, 5)
    labels = [S, T, S, T, T, S]
    a = frame_domain_loss(frames, labels, frame_head, 1.0)
    b = video_domain_loss(frames.mean(1), labels, video_head, 1.0)
    assert a.item() == pytest.approx(b.item(), abs=1e-7)


def test_domain_losses_order_invariant():
    torch.manual_seed(3)
    fh = DomainClassifierHead("frame", 5, dropout=0.0)
    vh = DomainClassifierHead("video", 5, dropout=0.0)
    frames = torch.randn(8, 3, 5)
    labels = np.array([0, 1, 1, 0, 1, 0, 0, 1])
    perm = torch.randperm(8)
    assert frame_domain_loss(frames, labels, fh, 1.0).item() == pytest.approx(
        frame_domain_loss(frames[perm], labels[perm.numpy()], fh, 1.0).item(), abs=1e-6)
    assert video_domain_loss(frames.mean(1), labels, vh, 1.0).item() == pytest.approx(
        video_domain_loss(frames.mean(1)[perm], labels[perm.numpy()], vh, 1.0).item(), abs=1e-6)


def test_stitch_targets():
    feats = torch.randn(4, 3)
    _, target = stitch_sequences(feats, [S, T, T, S], StitchSpec(4, 4, (0, 1, 2, 3)))
    assert target.tolist() == [0, 1, 1, 0]
    _, target = stitch_sequences(feats[:2], [T, S], StitchSpec(2, 4, (0, 1)))
    assert target.tolist() == [1, 0, 0.5, 0.5]


def test_stitch_reversal_reverses_targets():
    domains = [S, S, T, S, T]
    fwd = domain_target(domains, StitchSpec(5, 8, (0, 1, 2, 3, 4)))
    rev = domain_target(domains, StitchSpec(5, 8, (4, 3, 2, 1, 0)))
    assert list(rev[:5]) == list(fwd[:5][::-1])
    assert list(rev[5:]) == [0.5] * 3


def test_stitch_feature_is_mean():
    feats = torch.randn(3, 5, dtype=torch.float64)
    combined, _ = stitch_sequences(feats, [S, T, T], StitchSpec(3, 4, (2, 0, 1)))
    assert torch.allclose(combined, feats.mean(0))


def test_stitch_spec_validation():
    with pytest.raises(ConfigError):
        StitchSpec(5, 4, (0, 1, 2, 3, 4))
    with pytest.raises(ConfigError):
        StitchSpec(2, 4, (0, 0))


def test_stitched_batch_targets_well_formed(rng):
    feats = torch.randn(10, 4)
    domains = [0] * 5 + [1] * 5
    for _ in range(20):
        combined, targets = stitched_batch(feats, domains, (2, 4), 4, 6, rng)
        assert combined.shape == (6, 4)
        for t in targets.tolist():
            assert set(t) <= {0.0, 1.0, 0.5}
            v = 4 - t.count(0.5)
            assert v in (2, 4)
            assert t[v:] == [0.5] * (4 - v)


def test_regression_loss_cases():
    class Fixed(torch.nn.Module):
        def __init__(self, out):
            super().__init__()
            self.out = out

        def forward(self, x):
            return self.out.expand(x.shape[0], -1)

    target = torch.tensor([[0.0, 1.0, 0.5, 0.5]])
    assert combined_domain_regression_loss(torch.zeros(1, 3), target, Fixed(target), 1.0).item() == 0.0
    half = torch.full((1, 4), 0.5)
    assert combined_domain_regression_loss(torch.zeros(1, 3), target, Fixed(half), 1.0).item() == \
        pytest.approx(0.125)
    doubled = combined_domain_regression_loss(torch.zeros(2, 3), target.repeat(2, 1), Fixed(half), 1.0)
    assert doubled.item() == pytest.approx(0.125)


def test_regression_length_mismatch():
    with pytest.raises(ShapeError):
        combined_domain_regression_loss(torch.zeros(2, 3), torch.zeros(2, 4), DomainRegressor(3, 5), 1.0)


def test_total_domain_loss():
    assert total_domain_loss(0.0, 0.0, 0.0) == 0.0
    assert total_domain_loss(0.1, 0.2, 0.3) == pytest.approx(0.6)


def test_total_equals_independent_terms():
    torch.manual_seed(4)
    fh, vh = DomainClassifierHead("frame", 5, dropout=0.0), DomainClassifierHead("video", 5, dropout=0.0)
    reg = DomainRegressor(5, 4)
    frames = torch.randn(6, 3, 5)
    labels = [0, 1, 0, 1, 1, 0]
    combined, targets = stitched_batch(frames.mean(1), labels, (2, 4), 4, 3, np.random.default_rng(0))
    parts = [frame_domain_loss(frames, labels, fh, 1.0), video_domain_loss(frames.mean(1), labels, vh, 1.0),
             combined_domain_regression_loss(combined, targets, reg, 1.0)]
    assert total_domain_loss(*parts).item() == pytest.approx(sum(p.item() for p in parts), abs=1e-6)


def test_adversarial_step_directions():
    """One SGD step lowers the head's loss while the reversed gradient raises it w.r.t. features."""
    torch.manual_seed(5)
    head = DomainClassifierHead("video", 4, dropout=0.0).double()
    feats = torch.randn(16, 4, dtype=torch.float64, requires_grad=True)
    labels = [0] * 8 + [1] * 8
    loss = video_domain_loss(feats, labels, head, 1.0)
    head_params = list(head.parameters())
    grads = torch.autograd.grad(loss, head_params + [feats])
    # gradient of the same loss w.r.t. features without the reversal layer
    plain = torch.autograd.grad(torch.nn.functional.cross_entropy(head(feats), torch.tensor(labels)), feats)[0]
    lr = 1e-2
    feat_update = -lr * grads[-1]
    assert (feat_update * plain).sum() > 0  # features move uphill on the domain loss
    with torch.no_grad():
        for p, g in zip(head_params, grads[:-1]):
            p -= lr * g
        after = video_domain_loss(feats, labels, head, 1.0)
    assert after < loss
