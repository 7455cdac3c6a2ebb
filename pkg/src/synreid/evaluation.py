"""Query/gallery retrieval with CMC rank-k and mAP."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch

from .datamodel import SamplingStrategy, load_clip, sample_frames
from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalProtocol:
    distance: str = "euclidean"
    cross_camera_filter: bool = True
    ranks: tuple = (1, 5, 10)
    camera_policy: str = "split"
    query_cameras: tuple = (0,)
    gallery_cameras: tuple = (1,)
    max_frames: int = 32

    def __post_init__(self):
        ranks = tuple(int(k) for k in self.ranks)
        if not ranks or ranks[0] < 1 or any(b <= a for a, b in zip(ranks, ranks[1:])):
            raise ConfigError(f"ranks must be strictly increasing and >= 1, got {self.ranks}")
        if self.distance not in ("euclidean", "cosine"):
            raise ConfigError(f"unknown retrieval distance {self.distance!r}")
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "query_cameras", tuple(self.query_cameras))
        object.__setattr__(self, "gallery_cameras", tuple(self.gallery_cameras))


@dataclass
class RetrievalResult:
    order: np.ndarray       # retained gallery indices, nearest first
    relevant: np.ndarray    # bool, aligned with ``order``
    distances: np.ndarray   # aligned with ``order``


@dataclass
class MetricReport:
    rank_k: dict
    mAP: float
    num_queries_evaluated: int
    num_skipped: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {f"rank{k}": float(v) for k, v in self.rank_k.items()}
        d.update({"map": float(self.mAP), "queries": int(self.num_queries_evaluated),
                  "skipped": int(self.num_skipped)})
        d.update(self.extra)
        return d

    def to_text(self):
        lines = [f"rank{k}={float(v):.6f}" for k, v in self.rank_k.items()]
        lines += [f"map={float(self.mAP):.6f}", f"queries={int(self.num_queries_evaluated)}"]
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem="metrics"):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.txt").write_text(self.to_text())
        (out_dir / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d):
        ranks = {int(k[4:]): v for k, v in d.items() if k.startswith("rank")}
        return cls(dict(sorted(ranks.items())), d["map"], d["queries"], d.get("skipped", 0))


def distances(query, gallery, metric="euclidean"):
    q = np.asarray(query, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    if metric == "euclidean":
        return np.sqrt(((g - q) ** 2).sum(axis=1))
    if metric == "cosine":
        qn = q / max(np.linalg.norm(q), 1e-12)
        gn = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
        return 1.0 - gn @ qn
    raise ConfigError(f"unknown retrieval distance {metric!r}")


def rank_gallery(query, gallery, protocol, query_pid, query_cam, gallery_pids, gallery_cams):
    """Rank gallery items by distance to one query.

    With ``cross_camera_filter``, items sharing both identity and camera with the
    query are removed first. Equal distances keep ascending gallery index order.
    Returns None (and logs) when nothing is left to rank.
    """
    gallery_pids = np.asarray(gallery_pids)
    gallery_cams = np.asarray(gallery_cams)
    keep = np.ones(len(gallery_pids), dtype=bool)
    if protocol.cross_camera_filter:
        keep &= ~((gallery_pids == query_pid) & (gallery_cams == query_cam))
    idx = np.flatnonzero(keep)
    if len(idx) == 0:
        logger.warning("query (pid=%s, cam=%s) has an empty gallery after filtering", query_pid, query_cam)
        return None
    dist = distances(query, np.asarray(gallery)[idx], protocol.distance)
    perm = np.argsort(dist, kind="stable")
    order = idx[perm]
    return RetrievalResult(order, gallery_pids[order] == query_pid, dist[perm])


def _first_hit(result):
    hits = np.flatnonzero(result.relevant)
    return int(hits[0]) + 1 if len(hits) else None


def compute_cmc(results, ranks=(1, 5, 10)):
    firsts = [_first_hit(r) for r in results]
    if not firsts:
        return {int(k): 0.0 for k in ranks}
    firsts = np.array([np.inf if f is None else f for f in firsts])
    return {int(k): float((firsts <= k).mean()) for k in ranks}


def _exact_ap(result):
    hits = np.flatnonzero(result.relevant)
    if len(hits) == 0:
        return Fraction(0)
    return sum(Fraction(k, int(pos) + 1) for k, pos in enumerate(hits, start=1)) / len(hits)


def average_precision(result):
    """AP of one ranked list, computed in rational arithmetic and rounded once."""
    return float(_exact_ap(result))


def compute_map(results):
    if not results:
        return 0.0
    return float(sum(_exact_ap(r) for r in results) / len(results))


def evaluate_features(qf, gf, q_pids, g_pids, q_cams, g_cams, protocol=EvalProtocol()):
    results, skipped = [], 0
    for i in range(len(qf)):
        r = rank_gallery(qf[i], gf, protocol, q_pids[i], q_cams[i], g_pids, g_cams)
        if r is None or not r.relevant.any():
            if r is not None:
                logger.warning("query %d has no relevant gallery item; skipped", i)
            skipped += 1
            continue
        results.append(r)
    return MetricReport(compute_cmc(results, protocol.ranks), compute_map(results), len(results), skipped)


def extract_features(model, dataset, max_frames=32, device="cpu"):
    """Video features for every tracklet, sampling up to ``max_frames`` frames uniformly."""
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    feats = []
    try:
        with torch.no_grad():
            for t in dataset.tracklets:
                idx = sample_frames(t, max_frames, SamplingStrategy.ALL)
                clip = torch.from_numpy(load_clip(t, idx)).to(device)
                feats.append(model.aggregate(model.extract_frame_features(clip)).double().cpu().numpy())
    finally:
        if was_training:
            model.train()
    return np.stack(feats)


def evaluate(model, query, gallery, protocol=EvalProtocol()):
    """Extract student features for both sets and score retrieval."""
    qf = extract_features(model, query, protocol.max_frames)
    gf = extract_features(model, gallery, protocol.max_frames)
    return evaluate_features(qf, gf, query.person_ids, gallery.person_ids,
                             query.camera_ids, gallery.camera_ids, protocol)
