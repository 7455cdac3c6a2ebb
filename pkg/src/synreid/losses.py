"""Supervised identification losses on labeled source clips."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch

from .errors import ConfigError, ShapeError

EPS = 1e-12


class Mining(enum.Enum):
    BATCH_HARD = "batch_hard"
    ALL_VALID = "all_valid"


@dataclass(frozen=True)
class TripletConfig:
    margin: float = 0.3
    mining: Mining = Mining.BATCH_HARD
    distance: str = "euclidean"

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigError(f"triplet margin must be >= 0, got {self.margin}")
        if self.distance != "euclidean":
            raise ConfigError(f"unsupported triplet distance {self.distance!r}")
        object.__setattr__(self, "mining", Mining(self.mining))


def one_hot(labels, num_classes, dtype=torch.float32):
    labels = torch.as_tensor(labels, dtype=torch.long)
    return torch.nn.functional.one_hot(labels, num_classes).to(dtype)


def cross_entropy_id(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean of ``-sum_c y(c) log p(c)`` over the leading axis (if any).

    ``p`` is a probability vector or batch of them and ``y`` the matching
    one-hot targets. Entries of ``p`` below 1e-12 are clamped before the log.
    """
    if p.shape != y.shape:
        raise ShapeError(f"prediction shape {tuple(p.shape)} != label shape {tuple(y.shape)}")
    per_item = -(y * p.clamp_min(EPS).log()).sum(dim=-1)
    return per_item.mean()


def euclidean(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    d2 = (a - b).pow(2).sum(dim=-1)
    # exact zero at coincident points, with a zero (not NaN) gradient there
    nonzero = d2 > 0
    return torch.where(nonzero, torch.where(nonzero, d2, torch.ones_like(d2)).sqrt(), torch.zeros_like(d2))


def pairwise_euclidean(x: torch.Tensor) -> torch.Tensor:
    return euclidean(x[:, None, :], x[None, :, :])


def triplet_hinge(f_a, f_p, f_n, cfg: TripletConfig = TripletConfig()):
    if not (f_a.shape == f_p.shape == f_n.shape):
        raise ShapeError("anchor, positive and negative must share a shape")
    return (euclidean(f_a, f_p) - euclidean(f_a, f_n) + cfg.margin).clamp_min(0.0)


def _check_ids(ids):
    uniq, counts = torch.unique(ids, return_counts=True)
    if len(uniq) < 2:
        raise ConfigError("triplet loss needs at least two distinct ids in a batch")
    singles = uniq[counts < 2]
    if len(singles):
        raise ConfigError(f"id {int(singles[0])} has a single sample; triplet loss needs >= 2 per id")


def mine_batch_hard(dist: torch.Tensor, ids: torch.Tensor):
    """Indices of the hardest positive and negative for each anchor.

    Ties resolve to the lowest index (``argmax``/``argmin`` return the first hit).
    The anchor itself is excluded from its positives.
    """
    same = ids[:, None] == ids[None, :]
    eye = torch.eye(len(ids), dtype=torch.bool, device=ids.device)
    pos_mask = same & ~eye
    d = dist.detach()
    pos = torch.where(pos_mask, d, torch.full_like(d, -torch.inf)).argmax(dim=1)
    neg = torch.where(~same, d, torch.full_like(d, torch.inf)).argmin(dim=1)
    return pos, neg


def batch_hard_triplet(features, ids, cfg: TripletConfig = TripletConfig()):
    """Triplet loss averaged over anchors.

    BATCH_HARD uses the farthest same-id and nearest other-id sample per anchor.
    ALL_VALID averages the hinge over every (anchor, positive, negative) triple.
    """
    ids = torch.as_tensor(ids, device=features.device)
    _check_ids(ids)
    dist = pairwise_euclidean(features)
    if cfg.mining is Mining.BATCH_HARD:
        pos, neg = mine_batch_hard(dist, ids)
        rows = torch.arange(len(ids), device=features.device)
        return (dist[rows, pos] - dist[rows, neg] + cfg.margin).clamp_min(0.0).mean()

    same = ids[:, None] == ids[None, :]
    eye = torch.eye(len(ids), dtype=torch.bool, device=features.device)
    valid = (same & ~eye)[:, :, None] & (~same)[:, None, :]
    hinge = (dist[:, :, None] - dist[:, None, :] + cfg.margin).clamp_min(0.0)
    return hinge[valid].mean()
