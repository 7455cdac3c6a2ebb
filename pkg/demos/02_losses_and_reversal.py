"""Supervised losses and the gradient reversal layer, checked by hand.

    python3 demos/02_losses_and_reversal.py
"""

import math

import torch

from synreid.domain_adversarial import DomainClassifierHead, grl_apply, grl_lambda, video_domain_loss
from synreid.losses import TripletConfig, batch_hard_triplet, cross_entropy_id, one_hot, triplet_hinge

# Cross-entropy of a uniform guess over C classes is ln C.
for c in (2, 4, 16):
    p = torch.full((c,), 1.0 / c, dtype=torch.float64)
    print(f"CE uniform over {c:2d} classes = {cross_entropy_id(p, one_hot(0, c, torch.float64)).item():.6f}"
          f"  (ln {c} = {math.log(c):.6f})")

# Triplet hinge with margin 0.3.
cfg = TripletConfig(margin=0.3)
a = torch.zeros(2)
for d_ap, d_an in ((0.2, 0.9), (0.9, 0.2)):
    loss = triplet_hinge(a, torch.tensor([d_ap, 0.0]), torch.tensor([0.0, d_an]), cfg)
    print(f"hinge(d_ap={d_ap}, d_an={d_an}) = {loss.item():.3f}")

# Batch-hard mining: farthest positive, nearest negative per anchor.
feats = torch.tensor([[0.0], [0.5], [1.0], [3.0]])
print("batch-hard loss on a 2x2 batch:", batch_hard_triplet(feats, [1, 1, 2, 2], cfg).item())

# The reversal layer passes values through and flips (and scales) gradients.
x = torch.randn(4, requires_grad=True)
grl_apply(x, 0.5).sum().backward()
print("GRL forward is identity; backward gradient:", x.grad.tolist())

# Adversarial game on a domain head: the head learns, the features are pushed the other way.
head = DomainClassifierHead("video", 4, dropout=0.0)
feats = torch.randn(8, 4, requires_grad=True)
loss = video_domain_loss(feats, [0] * 4 + [1] * 4, head, lam=1.0)
loss.backward()
print(f"video domain loss {loss.item():.3f}; feature grad norm {feats.grad.norm().item():.3f}")
print("ramp schedule:", [round(grl_lambda(p), 3) for p in (0.0, 0.1, 0.25, 0.5, 1.0)])
