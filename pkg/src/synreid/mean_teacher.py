"""EMA teacher, pooled K-means over student/teacher features, and the ID-consistency losses."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import DegeneracyError, ShapeError, StateError
from .losses import euclidean

STUDENT = "S"
TEACHER = "T"


@dataclass
class TeacherState:
    model: nn.Module
    alpha: float = 0.999
    step: int = 0

    @classmethod
    def from_student(cls, student: nn.Module, alpha=0.999):
        teacher = copy.deepcopy(student)
        teacher.eval()
        for p in teacher.parameters():
            p.requires_grad_(False)
        return cls(teacher, alpha, 0)


def _check_trees(teacher: nn.Module, student: nn.Module):
    t_state, s_state = teacher.state_dict(), student.state_dict()
    for name in list(t_state) + [n for n in s_state if n not in t_state]:
        if name not in s_state or name not in t_state:
            raise ShapeError(f"parameter trees differ at leaf {name!r}")
        if t_state[name].shape != s_state[name].shape:
            raise ShapeError(f"leaf {name!r}: teacher shape {tuple(t_state[name].shape)} "
                             f"!= student shape {tuple(s_state[name].shape)}")


@torch.no_grad()
def ema_update(teacher: TeacherState, student: nn.Module, alpha=None) -> TeacherState:
    """Blend every teacher leaf towards the student: ``a * teacher + (1 - a) * student``.

    Floating-point buffers are blended the same way; integer buffers are copied.
    """
    alpha = teacher.alpha if alpha is None else float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"EMA decay must lie in [0, 1], got {alpha}")
    _check_trees(teacher.model, student)
    s_state = student.state_dict()
    for name, t in teacher.model.state_dict().items():
        s = s_state[name].detach()
        if t.is_floating_point():
            t.mul_(alpha).add_(s, alpha=1.0 - alpha)
        else:
            t.copy_(s)
    teacher.step += 1
    return teacher


@dataclass
class PairedFeatures:
    tracklet_ids: list
    student: torch.Tensor   # (N, d), carries gradient
    teacher: torch.Tensor   # (N, d), detached

    def __len__(self):
        return len(self.tracklet_ids)


def extract_pair_features(student, teacher, clips, tracklet_ids) -> PairedFeatures:
    """Run the same clips (N, T, C, H, W) through both networks."""
    if len(clips) != len(tracklet_ids):
        raise ShapeError(f"{len(clips)} clips for {len(tracklet_ids)} tracklet ids")
    teacher_model = teacher.model if isinstance(teacher, TeacherState) else teacher
    _, f_s = student(clips)
    teacher_model.eval()
    with torch.no_grad():
        _, f_t = teacher_model(clips)
    return PairedFeatures(list(tracklet_ids), f_s, f_t.detach())


@dataclass
class ClusterModel:
    centroids: np.ndarray                            # (M, d)
    labels: np.ndarray                               # one per clustered point
    assignments: dict = field(default_factory=dict)  # (tracklet_id, "S" | "T") -> cluster
    inertia: float = 0.0
    n_iter: int = 0

    @property
    def M(self):
        return len(self.centroids)

    def lookup(self, tracklet_ids, network):
        try:
            return np.array([self.assignments[(tid, network)] for tid in tracklet_ids], dtype=np.int64)
        except KeyError as exc:
            raise StateError(f"no cluster assignment for {exc.args[0]}") from None


def _sq_dists(x, c):
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1)


def _kmeans_pp(x, m, rng):
    n = len(x)
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, centers[0][None])[:, 0]
    for _ in range(1, m):
        total = closest.sum()
        if total <= 0:
            # remaining points coincide with chosen centres; take any unused distinct one
            idx = int(np.argmax(closest))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None])[:, 0])
    return np.array(centers)


def kmeans(x, m, rng, max_iters=100, tol=1e-6):
    """Lloyd's algorithm with k-means++ seeding on float64 data.

    Empty clusters are re-seeded with the point farthest from its centroid.
    The returned labels are recomputed against the returned centroids, so every
    point is assigned to its nearest centroid (lowest index on ties).
    """
    x = np.asarray(x, dtype=np.float64)
    if len(np.unique(x, axis=0)) < m:
        raise DegeneracyError(f"fewer than M={m} distinct points; use a smaller cluster count")
    centroids = _kmeans_pp(x, m, rng)
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        d = _sq_dists(x, centroids)
        labels = d.argmin(axis=1)
        new = centroids.copy()
        taken = set()
        for k in range(m):
            members = labels == k
            if members.any():
                new[k] = x[members].mean(axis=0)
            else:
                far = d[np.arange(len(x)), labels]
                for idx in np.argsort(-far, kind="stable"):
                    if int(idx) not in taken:
                        break
                taken.add(int(idx))
                new[k] = x[idx]
                labels[idx] = k
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break
    d = _sq_dists(x, centroids)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(len(x)), labels].sum())
    return centroids, labels, inertia, n_iter


def cluster_features(features, M=16, rng=None, max_iters=100, tol=1e-6, keys=None) -> ClusterModel:
    """K-means over pooled features; ``keys`` (one per row) index the assignment map."""
    if rng is None:
        rng = np.random.default_rng(0)
    if isinstance(features, torch.Tensor):
        features = features.detach().cpu().numpy()
    centroids, labels, inertia, n_iter = kmeans(features, M, rng, max_iters, tol)
    assignments = {}
    if keys is not None:
        assignments = {k: int(c) for k, c in zip(keys, labels)}
    return ClusterModel(centroids, labels, assignments, inertia, n_iter)


def cluster_pairs(pairs: PairedFeatures, M=16, rng=None, max_iters=100, tol=1e-6) -> ClusterModel:
    """Pool student and teacher features of every tracklet and cluster them together."""
    pooled = torch.cat([pairs.student.detach(), pairs.teacher.detach()]).cpu().numpy()
    keys = [(tid, STUDENT) for tid in pairs.tracklet_ids] + [(tid, TEACHER) for tid in pairs.tracklet_ids]
    return cluster_features(pooled, M, rng, max_iters, tol, keys)


def soft_assignment(features, centroids, temperature):
    """Log of softmax(-||f - c||^2 / temperature) over clusters."""
    c = torch.as_tensor(centroids, dtype=features.dtype, device=features.device)
    d2 = (features[:, None, :] - c[None, :, :]).pow(2).sum(dim=-1)
    return torch.log_softmax(-d2 / temperature, dim=-1)


def id_consistency_loss(pairs: PairedFeatures, clusters: ClusterModel, temperature=0.1):
    """Returns ``(hard_count, soft_loss)``.

    ``hard_count`` is the fraction of tracklets whose student and teacher
    features sit in different clusters. It has no gradient and is reported only.
    ``soft_loss`` is the cross-entropy of the student's soft cluster assignment
    against the frozen teacher's, which is what gets optimised.
    """
    s_idx = clusters.lookup(pairs.tracklet_ids, STUDENT)
    t_idx = clusters.lookup(pairs.tracklet_ids, TEACHER)
    hard = float((s_idx != t_idx).mean()) if len(pairs) else 0.0
    log_p_s = soft_assignment(pairs.student, clusters.centroids, temperature)
    with torch.no_grad():
        q_t = soft_assignment(pairs.teacher, clusters.centroids, temperature).exp()
    soft = -(q_t * log_p_s).sum(dim=-1).mean()
    return hard, soft


def teacher_entropy(pairs: PairedFeatures, clusters: ClusterModel, temperature=0.1):
    with torch.no_grad():
        log_q = soft_assignment(pairs.teacher, clusters.centroids, temperature)
        return float(-(log_q.exp() * log_q).sum(dim=-1).mean())


def centroid_similarity_loss(pairs: PairedFeatures, clusters: ClusterModel):
    """Mean Euclidean distance of every student and teacher feature to its cluster centroid."""
    s_idx = clusters.lookup(pairs.tracklet_ids, STUDENT)
    t_idx = clusters.lookup(pairs.tracklet_ids, TEACHER)
    feats = torch.cat([pairs.student, pairs.teacher])
    c = torch.as_tensor(clusters.centroids, dtype=feats.dtype, device=feats.device)
    own = c[torch.as_tensor(np.concatenate([s_idx, t_idx]))]
    return euclidean(feats, own).mean()


def total_consistency_loss(soft_loss, similarity_loss):
    return soft_loss + similarity_loss
