"""Two-phase training loop, checkpoints and evaluation entry points."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import domain_adversarial as da
from . import mean_teacher as mt
from .backbone import BackboneConfig, TinyVideoNet
from .config import ExperimentConfig
from .datamodel import (DatasetRole, SamplingStrategy, load_clip, load_dataset,
                        sample_frames, sample_pk_batch, split_query_gallery)
from .errors import ConfigError, TrainingError
from .evaluation import EvalProtocol, MetricReport, evaluate
from .losses import TripletConfig, batch_hard_triplet, cross_entropy_id, one_hot

logger = logging.getLogger(__name__)

TERMS = ("cse", "tri", "S", "C")
CHECKPOINT_NAME = "checkpoint.pt"
CURVES_NAME = "loss_curves.json"


class LossWeights(nn.Module):
    """Fixed weights, or ``exp(s_k)`` with a ``-sum(s_k)`` regulariser in learnable mode.

    Minimising ``exp(s) * L - s`` over ``s`` gives ``exp(s) = 1 / L``, so no
    weight can collapse to zero while its loss stays finite. Terms whose
    configured weight is zero stay switched off in either mode.
    """

    def __init__(self, w_cse=1.0, w_tri=1.0, w_S=1.0, w_C=1.0, mode="fixed"):
        super().__init__()
        self.mode = mode
        init = torch.tensor([w_cse, w_tri, w_S, w_C], dtype=torch.float32)
        self.register_buffer("enabled", init > 0)
        if mode == "learnable":
            self.log_w = nn.Parameter(torch.where(init > 0, init, torch.ones_like(init)).log())
        elif mode == "fixed":
            self.register_buffer("fixed", init)
        else:
            raise ConfigError(f"unknown loss-weight mode {mode!r}")

    def weights(self):
        w = self.log_w.exp() if self.mode == "learnable" else self.fixed
        return w * self.enabled

    def combine(self, terms):
        """Weighted sum of the four loss terms (a dict keyed by ``TERMS``)."""
        w = self.weights()
        total = sum(w[i] * terms[k] for i, k in enumerate(TERMS))
        if self.mode == "learnable":
            total = total - (self.log_w * self.enabled).sum()
        return total


def set_determinism(threads=1):
    torch.set_num_threads(max(1, int(threads)))
    torch.use_deterministic_algorithms(True)


@dataclass
class RunReport:
    history: list = field(default_factory=list)
    output_dir: str = ""

    def curve(self, key):
        return [h[key] for h in self.history]


class Trainer:
    """Owns the student, domain heads, teacher, clusters and optimiser for one run."""

    def __init__(self, config: ExperimentConfig):
        self.config = config.validate()
        cfg = config
        root = cfg.data.root
        self.source = load_dataset(root, cfg.manifest_path("source_train"), DatasetRole.SOURCE_TRAIN)
        self.target = load_dataset(root, cfg.manifest_path("target_train"), DatasetRole.TARGET_TRAIN)
        set_determinism(cfg.optim.torch_threads)
        torch.manual_seed(cfg.optim.seed)
        self.rng = np.random.default_rng(cfg.optim.seed)

        b = cfg.backbone
        self.backbone_config = BackboneConfig(num_classes=self.source.num_identities, height=b.height,
                                              width=b.width, dim=b.dim, widths=tuple(b.widths),
                                              dropout=b.dropout)
        self.student = TinyVideoNet(self.backbone_config)
        self.frame_head = da.DomainClassifierHead("frame", b.dim, cfg.heads.hidden, cfg.heads.dropout)
        self.video_head = da.DomainClassifierHead("video", b.dim, cfg.heads.hidden, cfg.heads.dropout)
        self.regressor = da.DomainRegressor(b.dim, cfg.stitch.v_max)
        lw = cfg.loss
        self.loss_weights = LossWeights(lw.w_cse, lw.w_tri, lw.w_S, lw.w_C, lw.mode)
        self.triplet = TripletConfig(margin=lw.margin, mining=lw.mining)
        heads = [self.frame_head, self.video_head, self.regressor]
        self.optimizer = torch.optim.Adam([
            {"params": [p for m in (self.student, self.loss_weights) for p in m.parameters()]},
            {"params": [p for m in heads for p in m.parameters()], "lr": cfg.optim.lr * cfg.heads.lr_mult},
        ], lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay)

        self.teacher: mt.TeacherState | None = None
        self.clusters: mt.ClusterModel | None = None
        self.step = 0
        self.history: list[dict] = []
        threads = int(os.environ.get("SYNREID_NUM_THREADS", "1"))
        self._pool = ThreadPoolExecutor(threads) if threads > 1 else None

    def trainable_modules(self):
        return [self.student, self.frame_head, self.video_head, self.regressor, self.loss_weights]

    @property
    def total_steps(self):
        return self.config.optim.steps

    @property
    def warmup_steps(self):
        return int(round(self.config.optim.warmup_fraction * self.total_steps))

    def _load_clips(self, clips):
        if self._pool is not None:
            arrays = list(self._pool.map(lambda c: load_clip(*c), clips))
        else:
            arrays = [load_clip(t, idx) for t, idx in clips]
        return torch.from_numpy(np.stack(arrays))

    def _target_batch(self, n, T):
        picks = self.rng.choice(len(self.target), size=min(n, len(self.target)), replace=False)
        chosen = [self.target.tracklets[i] for i in picks]
        return [(t, tuple(sample_frames(t, T, SamplingStrategy.CHUNKED_RANDOM, self.rng))) for t in chosen]

    def start_teacher(self):
        self.teacher = mt.TeacherState.from_student(self.student, self.config.teacher.alpha)

    def recluster(self):
        """Cluster student and teacher features of the whole target-train set."""
        T = self.config.sampler.T
        clips = [(t, tuple(sample_frames(t, T, SamplingStrategy.UNIFORM))) for t in self.target.tracklets]
        was_training = self.student.training
        self.student.eval()
        with torch.no_grad():
            pairs = mt.extract_pair_features(self.student, self.teacher, self._load_clips(clips),
                                             [t.tracklet_id for t in self.target.tracklets])
        self.student.train(was_training)
        pairs = self._normalized(pairs)
        c = self.config.cluster
        self.clusters = mt.cluster_pairs(pairs, c.M, self.rng, c.max_iters, c.tol)

    def _normalized(self, pairs):
        if self.config.consistency.normalize:
            pairs.student = nn.functional.normalize(pairs.student, dim=-1)
            pairs.teacher = nn.functional.normalize(pairs.teacher, dim=-1)
        return pairs

    def train_step(self):
        cfg = self.config
        self.step += 1
        step = self.step
        phase = 1 if step <= self.warmup_steps else 2
        lam = da.grl_lambda(step / self.total_steps, cfg.grl.lambda_schedule, cfg.grl.lambda_const)
        w = self.loss_weights.weights().detach()
        use_S = bool(w[2] > 0)
        use_C = phase == 2 and bool(w[3] > 0)

        if phase == 2 and self.teacher is None:
            self.start_teacher()
        if use_C and (self.clusters is None or (step - self.warmup_steps - 1) % cfg.optim.epoch_steps == 0):
            self.recluster()

        s = cfg.sampler
        src = sample_pk_batch(self.source, s.P, s.K, s.T, self.rng)
        n_src = len(src.clips)
        clips = list(src.clips)
        if use_S or use_C:
            clips += self._target_batch(s.target_batch or n_src, s.T)
        x = self._load_clips(clips)
        domains = [int(t.domain) for t, _ in clips]

        for m in self.trainable_modules():
            m.train()
        frames, videos = self.student(x)

        terms = {}
        pids = torch.as_tensor(src.person_ids)
        probs = self.student.classify_id(videos[:n_src])
        terms["cse"] = cross_entropy_id(probs, one_hot(pids - 1, self.backbone_config.num_classes, probs.dtype))
        terms["tri"] = batch_hard_triplet(videos[:n_src], pids, self.triplet)
        record = {"step": step, "phase": phase, "lambda": lam}

        zero = videos.sum() * 0.0
        if use_S:
            ls1 = da.frame_domain_loss(frames, domains, self.frame_head, lam)
            ls2 = da.video_domain_loss(videos, domains, self.video_head, lam)
            combined, targets = da.stitched_batch(videos, domains, cfg.stitch.v_choices, cfg.stitch.v_max,
                                                  cfg.stitch.groups, self.rng)
            ls3 = da.combined_domain_regression_loss(combined, targets, self.regressor, lam)
            terms["S"] = da.total_domain_loss(ls1, ls2, ls3)
            record.update(S1=ls1.item(), S2=ls2.item(), S3=ls3.item(),
                          domain_acc=da.domain_accuracy(self.video_head, videos.detach(), domains))
        else:
            terms["S"] = zero

        if use_C:
            with torch.no_grad():
                _, f_t = self.teacher.model(x[n_src:])
            pairs = self._normalized(mt.PairedFeatures([t.tracklet_id for t, _ in clips[n_src:]],
                                                       videos[n_src:], f_t))
            hard, soft = mt.id_consistency_loss(pairs, self.clusters, cfg.consistency.temperature)
            sim = mt.centroid_similarity_loss(pairs, self.clusters)
            terms["C"] = mt.total_consistency_loss(soft, sim)
            record.update(C1_hard=hard, C1_soft=soft.item(), C2=sim.item())
        else:
            terms["C"] = zero

        for k, v in terms.items():
            if not torch.isfinite(v):
                raise TrainingError(k, step, v.item())
        total = self.loss_weights.combine(terms)
        if not torch.isfinite(total):
            raise TrainingError("total", step, total.item())

        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()
        if phase == 2:
            mt.ema_update(self.teacher, self.student)

        record.update({k: v.item() for k, v in terms.items()})
        record["total"] = total.item()
        self.history.append(record)
        return record

    # checkpoints -----------------------------------------------------------

    def state(self):
        return {
            "step": self.step,
            "config": self.config.to_dict(),
            "config_hash": self.config.digest(),
            "eval_hash": self.config.eval_digest(),
            "backbone_config": self.backbone_config.to_dict(),
            "student": self.student.state_dict(),
            "teacher": None if self.teacher is None else self.teacher.model.state_dict(),
            "teacher_step": None if self.teacher is None else self.teacher.step,
            "frame_head": self.frame_head.state_dict(),
            "video_head": self.video_head.state_dict(),
            "regressor": self.regressor.state_dict(),
            "loss_weights": self.loss_weights.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "clusters": None if self.clusters is None else {
                "centroids": self.clusters.centroids, "labels": self.clusters.labels,
                "assignments": self.clusters.assignments},
            "np_rng": self.rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
            "history": self.history,
        }

    def save(self, path):
        torch.save(self.state(), Path(path))

    def restore(self, path):
        blob = load_checkpoint(path)
        if blob["config_hash"] != self.config.digest():
            raise ConfigError(f"cannot resume from {path}: it was produced by a different config")
        self.step = blob["step"]
        self.student.load_state_dict(blob["student"])
        if blob["teacher"] is not None:
            self.start_teacher()
            self.teacher.model.load_state_dict(blob["teacher"])
            self.teacher.step = blob["teacher_step"]
        self.frame_head.load_state_dict(blob["frame_head"])
        self.video_head.load_state_dict(blob["video_head"])
        self.regressor.load_state_dict(blob["regressor"])
        self.loss_weights.load_state_dict(blob["loss_weights"])
        self.optimizer.load_state_dict(blob["optimizer"])
        if blob["clusters"] is not None:
            c = blob["clusters"]
            self.clusters = mt.ClusterModel(c["centroids"], c["labels"], c["assignments"])
        self.rng.bit_generator.state = blob["np_rng"]
        torch.set_rng_state(blob["torch_rng"])
        self.history = list(blob["history"])

    def fit(self, out_dir=None):
        out_dir = Path(out_dir or self.config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        every = self.config.optim.checkpoint_every
        while self.step < self.total_steps:
            self.train_step()
            if every and self.step % every == 0 and self.step < self.total_steps:
                self.save(out_dir / f"checkpoint_step{self.step:06d}.pt")
        if self.teacher is None:
            # no Phase-2 step ran; the teacher is still the student copy it starts as
            self.start_teacher()
        self.save(out_dir / CHECKPOINT_NAME)
        (out_dir / CURVES_NAME).write_text(json.dumps(self.history, indent=1) + "\n")
        self.config.dump(out_dir / "config.yaml")
        if self._pool is not None:
            self._pool.shutdown()
        return RunReport(self.history, str(out_dir))


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return torch.load(path, map_location="cpu", weights_only=False)


def run_train(config: ExperimentConfig, resume=None, out_dir=None):
    """Train per ``config``; returns ``(checkpoint_path, RunReport)``."""
    trainer = Trainer(config)
    if resume is not None:
        trainer.restore(resume)
    report = trainer.fit(out_dir)
    return Path(report.output_dir) / CHECKPOINT_NAME, report


def student_from_checkpoint(blob):
    model = TinyVideoNet(BackboneConfig.from_dict(blob["backbone_config"]))
    model.load_state_dict(blob["student"])
    model.eval()
    return model


def eval_protocol(config: ExperimentConfig) -> EvalProtocol:
    e = config.eval
    return EvalProtocol(distance=e.distance, cross_camera_filter=e.cross_camera_filter, ranks=tuple(e.ranks),
                        camera_policy=e.camera_policy, query_cameras=tuple(e.query_cameras),
                        gallery_cameras=tuple(e.gallery_cameras), max_frames=e.max_frames)


def run_eval(config: ExperimentConfig, checkpoint, allow_mismatch=False, out_dir=None) -> MetricReport:
    """Score the checkpoint's student on the test split and write ``metrics.txt``/``metrics.json``."""
    blob = load_checkpoint(checkpoint)
    if blob["eval_hash"] != config.eval_digest() and not allow_mismatch:
        raise ConfigError(f"checkpoint {checkpoint} was trained with a different backbone config "
                          f"({blob['eval_hash']} != {config.eval_digest()})")
    set_determinism(config.optim.torch_threads)
    test = load_dataset(config.data.root, config.manifest_path("test"), DatasetRole.TEST)
    protocol = eval_protocol(config)
    query, gallery = split_query_gallery(test, protocol)
    model = student_from_checkpoint(blob)
    report = evaluate(model, query, gallery, protocol)
    report.write(out_dir or config.output_dir)
    return report

