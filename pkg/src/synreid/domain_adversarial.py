"""Frame-, video- and stitched-sequence domain discrimination behind a gradient reversal layer."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .datamodel import DomainLabel
from .errors import ConfigError, ShapeError
from .losses import EPS, one_hot

PAD_VALUE = 0.5


class GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.lam, None


def grl_apply(x: torch.Tensor, lam: float) -> torch.Tensor:
    """Identity forward; multiplies incoming gradients by ``-lam`` on the way back."""
    if lam < 0:
        raise ConfigError(f"GRL coefficient must be >= 0, got {lam}")
    return GradientReversal.apply(x, float(lam))


def grl_lambda(progress, schedule="dann_ramp", const=1.0):
    """``2 / (1 + exp(-10 p)) - 1`` for the ramp, ``const`` otherwise."""
    if schedule == "constant":
        return float(const)
    if schedule == "dann_ramp":
        p = min(max(float(progress), 0.0), 1.0)
        return 2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0
    raise ConfigError(f"unknown GRL schedule {schedule!r}")


class Level(enum.Enum):
    FRAME = "frame"
    VIDEO = "video"


class DomainClassifierHead(nn.Module):
    """FC -> ReLU -> dropout -> FC to two domain logits."""

    def __init__(self, level, in_dim, hidden=64, dropout=0.5):
        super().__init__()
        self.level = Level(level)
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, 2),
        )

    def forward(self, x):
        return self.net(x)


class DomainRegressor(nn.Module):
    """Single FC layer to ``v_max`` slots, squashed into [0, 1] like the targets.

    Bounding the output keeps the reversed MSE gradient from rewarding the
    feature extractor for blowing up feature norms.
    """

    def __init__(self, in_dim, v_max):
        super().__init__()
        self.v_max = v_max
        self.fc = nn.Linear(in_dim, v_max)

    def forward(self, x):
        return torch.sigmoid(self.fc(x))


def _domain_ce(logits, labels):
    p = torch.softmax(logits, dim=-1)
    y = one_hot(labels, 2, dtype=p.dtype).to(p.device)
    return -(y * p.clamp_min(EPS).log()).sum(dim=-1).mean()


def _check_head(head, level):
    if getattr(head, "level", None) is not level:
        raise ConfigError(f"expected a {level.value}-level head, got {getattr(head, 'level', None)}")


def frame_domain_loss(frame_features, labels, head, lam):
    """Mean binary domain cross-entropy over every frame.

    ``frame_features`` is (N, T, d) and ``labels`` holds one domain per clip.
    """
    _check_head(head, Level.FRAME)
    labels = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    if frame_features.dim() != 3 or frame_features.shape[0] != len(labels):
        raise ShapeError(f"expected (N, T, d) frame features for {len(labels)} clips, "
                         f"got {tuple(frame_features.shape)}")
    n, t, d = frame_features.shape
    logits = head(grl_apply(frame_features, lam).reshape(n * t, d))
    return _domain_ce(logits, labels.repeat_interleave(t))


def video_domain_loss(video_features, labels, head, lam):
    _check_head(head, Level.VIDEO)
    labels = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    if video_features.dim() != 2 or video_features.shape[0] != len(labels):
        raise ShapeError(f"expected (N, d) video features for {len(labels)} clips, "
                         f"got {tuple(video_features.shape)}")
    return _domain_ce(head(grl_apply(video_features, lam)), labels)


@dataclass(frozen=True)
class StitchSpec:
    V: int
    V_max: int
    permutation: tuple

    def __post_init__(self):
        if not 2 <= self.V:
            raise ConfigError(f"need at least two sequences to stitch, got V={self.V}")
        if self.V > self.V_max:
            raise ConfigError(f"V={self.V} exceeds V_max={self.V_max}")
        if sorted(self.permutation) != list(range(self.V)):
            raise ConfigError(f"permutation {self.permutation} is not a bijection on {self.V} items")


def domain_target(domains, spec: StitchSpec):
    """Permuted 0/1 domain labels followed by 0.5 padding up to ``V_max``."""
    target = np.full(spec.V_max, PAD_VALUE)
    target[: spec.V] = [int(domains[i]) for i in spec.permutation]
    return target


def stitch_sequences(features, domains, spec: StitchSpec):
    """Combine ``V`` video features into one by mean pooling in permuted order.

    Returns the combined feature and its domain-distribution target.
    """
    if len(features) != spec.V or len(domains) != spec.V:
        raise ConfigError(f"expected {spec.V} features and domains, got {len(features)} and {len(domains)}")
    if isinstance(features, (list, tuple)):
        features = torch.stack(list(features))
    perm = torch.as_tensor(spec.permutation, dtype=torch.long)
    combined = features[perm].mean(dim=0)
    target = torch.as_tensor(domain_target(domains, spec), dtype=combined.dtype)
    return combined, target


def combined_domain_regression_loss(combined, targets, regressor, lam):
    pred = regressor(grl_apply(combined, lam))
    if pred.shape != targets.shape:
        raise ShapeError(f"regressor output {tuple(pred.shape)} != target {tuple(targets.shape)}")
    return (pred - targets).pow(2).mean()


def stitched_batch(video_features, domains, v_choices, v_max, groups, rng):
    """Draw ``groups`` stitched sequences of a common size ``V`` from a mixed batch."""
    n = video_features.shape[0]
    v = int(rng.choice(np.asarray(v_choices)))
    if v > n:
        raise ConfigError(f"cannot stitch V={v} sequences from a batch of {n}")
    combined, targets = [], []
    for _ in range(groups):
        members = rng.choice(n, size=v, replace=False)
        spec = StitchSpec(v, v_max, tuple(int(i) for i in rng.permutation(v)))
        f, t = stitch_sequences(video_features[torch.as_tensor(members)],
                                [domains[i] for i in members], spec)
        combined.append(f)
        targets.append(t)
    return torch.stack(combined), torch.stack(targets)


def total_domain_loss(frame_loss, video_loss, combined_loss):
    return frame_loss + video_loss + combined_loss


def domain_accuracy(head, features, labels):
    """Fraction of clips whose domain the head predicts correctly (no gradient)."""
    with torch.no_grad():
        pred = head(features).argmax(dim=-1).cpu().numpy()
    return float((pred == np.asarray([int(d) for d in labels])).mean())


__all__ = [
    "DomainLabel", "GradientReversal", "grl_apply", "grl_lambda", "Level",
    "DomainClassifierHead", "DomainRegressor", "frame_domain_loss", "video_domain_loss",
    "StitchSpec", "domain_target", "stitch_sequences", "combined_domain_regression_loss",
    "stitched_batch", "total_domain_loss", "domain_accuracy",
]
