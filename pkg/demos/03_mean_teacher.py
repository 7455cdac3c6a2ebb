"""EMA teacher, K-means pseudo-clusters and the consistency losses.

    python3 demos/03_mean_teacher.py
"""

import numpy as np
import torch

from synreid.backbone import BackboneConfig, TinyVideoNet
from synreid.mean_teacher import (TeacherState, centroid_similarity_loss, cluster_pairs, ema_update,
                                  extract_pair_features, id_consistency_loss, teacher_entropy)

torch.manual_seed(0)
cfg = BackboneConfig(num_classes=5, dim=16, widths=(8, 8, 16))
student = TinyVideoNet(cfg)
teacher = TeacherState.from_student(TinyVideoNet(cfg), alpha=0.9)

# With a frozen student the teacher gap shrinks geometrically: 0.9^n.
w_s = student.embed.weight
gap0 = (teacher.model.embed.weight - w_s).norm().item()
for n in range(1, 6):
    ema_update(teacher, student)
    gap = (teacher.model.embed.weight - w_s).norm().item()
    print(f"after {n} updates gap ratio {gap / gap0:.6f} (0.9^{n} = {0.9 ** n:.6f})")

# A fresh teacher copied from the student, then a small student update: the
# two views of each clip should mostly land in the same cluster.
teacher = TeacherState.from_student(student, alpha=0.99)
with torch.no_grad():
    for p in student.parameters():
        p.add_(0.001 * torch.randn_like(p))

# flat-colour clips: three colour families, four clips each
base = torch.tensor([[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9]]).repeat_interleave(4, 0)
clips = (base + 0.05 * torch.rand(12, 3))[:, None, :, None, None].expand(12, 4, 3, 32, 16).contiguous()
with torch.no_grad():
    pairs = extract_pair_features(student, teacher, clips, [f"u{j}" for j in range(12)])
clusters = cluster_pairs(pairs, 3, np.random.default_rng(0))
# An untrained net has tiny feature spread, so tau must be small for the soft
# assignments to be anything but uniform.
for tau in (0.1, 1e-5):
    hard, soft = id_consistency_loss(pairs, clusters, temperature=tau)
    floor = teacher_entropy(pairs, clusters, tau)
    print(f"tau={tau:g}: pairs split {hard:.2f}, soft consistency {soft.item():.4f} >= teacher entropy {floor:.4f}")
print(f"mean distance to own centroid {centroid_similarity_loss(pairs, clusters).item():.4f}")
