"""Procedural two-domain sprite-video corpus.

Each identity is a walking sprite with a fixed shape, two body colours, a
height and a walking speed. Both domains render the same identities; they
differ only in background texture and a global colour transform, so a
domain-invariant identity signal exists by construction.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .datamodel import DomainLabel, write_manifest
from .errors import ConfigError

SHAPES = ("rect", "ellipse", "diamond")
SPLITS = ("source_train", "target_train", "target_test")


@dataclass(frozen=True)
class DomainStyle:
    background: str                 # "stripes" or "clutter"
    palette: tuple                  # 3x3 colour-mixing matrix, row-major
    offset: tuple = (0.0, 0.0, 0.0)
    gamma: float = 1.0


SOURCE_STYLE = DomainStyle(
    background="stripes",
    palette=(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0),
)
TARGET_STYLE = DomainStyle(
    background="clutter",
    palette=(0.55, 0.35, 0.10, 0.15, 0.60, 0.25, 0.20, 0.25, 0.55),
    offset=(0.08, 0.04, 0.0),
    gamma=0.8,
)


@dataclass(frozen=True)
class ToyWorldSpec:
    num_identities: int = 10
    tracklets_per_identity: int = 4
    frames_per_tracklet: int = 8
    image_size: tuple = (32, 16)    # (height, width)
    num_cameras: int = 2
    noise_std: float = 0.03
    source_style: DomainStyle = SOURCE_STYLE
    target_style: DomainStyle = TARGET_STYLE

    def __post_init__(self):
        if self.num_identities < 2 or self.tracklets_per_identity < 1 or self.frames_per_tracklet < 1:
            raise ConfigError("toy world needs >= 2 identities and >= 1 tracklet and frame each")
        if self.num_cameras < 2:
            raise ConfigError("toy world needs at least two cameras")
        h, w = self.image_size
        if h < 8 or w < 8:
            raise ConfigError(f"image_size {self.image_size} is too small to render sprites")
        object.__setattr__(self, "image_size", tuple(self.image_size))

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        for key in ("source_style", "target_style"):
            if key in d and isinstance(d[key], dict):
                style = dict(d[key])
                for k in ("palette", "offset"):
                    if k in style:
                        style[k] = tuple(np.ravel(style[k]).tolist())
                d[key] = DomainStyle(**style)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown toy spec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_dict(self):
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        for key in ("source_style", "target_style"):
            d[key]["palette"] = list(d[key]["palette"])
            d[key]["offset"] = list(d[key]["offset"])
        return d


@dataclass(frozen=True)
class IdentityAppearance:
    shape: str
    top_color: tuple
    bottom_color: tuple
    height: float       # fraction of the image height
    speed: float        # pixels per frame

    def to_dict(self):
        return {"shape": self.shape, "top_color": list(self.top_color),
                "bottom_color": list(self.bottom_color), "height": self.height, "speed": self.speed}


def draw_identities(n, rng):
    people = []
    for _ in range(n):
        people.append(IdentityAppearance(
            shape=SHAPES[int(rng.integers(len(SHAPES)))],
            top_color=tuple(round(float(c), 4) for c in rng.uniform(0.1, 0.95, 3)),
            bottom_color=tuple(round(float(c), 4) for c in rng.uniform(0.1, 0.95, 3)),
            height=round(float(rng.uniform(0.55, 0.8)), 4),
            speed=round(float(rng.uniform(0.3, 1.2)), 4),
        ))
    return people


def _background(style, h, w, rng):
    if style.background == "stripes":
        period = rng.uniform(3.0, 6.0)
        phase = rng.uniform(0, 2 * np.pi)
        rows = 0.5 + 0.08 * np.sin(2 * np.pi * np.arange(h) / period + phase)
        return np.repeat(rows[:, None, None], w, axis=1).repeat(3, axis=2)
    if style.background == "clutter":
        coarse = rng.uniform(0.1, 0.9, size=(4, 3, 3))
        ys = np.linspace(0, coarse.shape[0] - 1, h)
        xs = np.linspace(0, coarse.shape[1] - 1, w)
        y0 = np.floor(ys).astype(int).clip(0, coarse.shape[0] - 2)
        x0 = np.floor(xs).astype(int).clip(0, coarse.shape[1] - 2)
        fy = (ys - y0)[:, None, None]
        fx = (xs - x0)[None, :, None]
        c00 = coarse[y0][:, x0]
        c01 = coarse[y0][:, x0 + 1]
        c10 = coarse[y0 + 1][:, x0]
        c11 = coarse[y0 + 1][:, x0 + 1]
        return (1 - fy) * ((1 - fx) * c00 + fx * c01) + fy * ((1 - fx) * c10 + fx * c11)
    raise ConfigError(f"unknown background style {style.background!r}")


def _sprite_mask(shape, h, w, cy, cx, half_h, half_w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy = (yy - cy) / half_h
    dx = (xx - cx) / half_w
    if shape == "rect":
        return (np.abs(dy) <= 1) & (np.abs(dx) <= 1)
    if shape == "ellipse":
        return dy ** 2 + dx ** 2 <= 1
    return np.abs(dy) + np.abs(dx) <= 1.2


def render_tracklet(person, style, camera, n_frames, size, noise_std, rng):
    """Frames (T, H, W, 3) as uint8 for one identity seen by one camera."""
    h, w = size
    bg = _background(style, h, w, rng)
    # camera viewpoints: walking direction and apparent scale differ
    direction = 1.0 if camera % 2 == 0 else -1.0
    scale = 1.0 - 0.12 * (camera % 2)
    half_h = 0.5 * person.height * h * scale
    half_w = 0.3 * w * scale
    x_start = rng.uniform(0.35, 0.65) * w
    phase = rng.uniform(0, 2 * np.pi)
    yy = np.arange(h)[:, None]

    palette = np.asarray(style.palette, dtype=np.float64).reshape(3, 3)
    offset = np.asarray(style.offset, dtype=np.float64)
    frames = []
    for t in range(n_frames):
        cx = x_start + direction * person.speed * (t - n_frames / 2)
        cx = float(np.clip(cx, half_w, w - half_w))
        cy = h / 2 + 0.8 * np.sin(phase + 0.9 * t)
        mask = _sprite_mask(person.shape, h, w, cy, cx, half_h, half_w)
        top = (yy < cy) & mask
        bottom = (yy >= cy) & mask
        img = bg.copy()
        img[top] = person.top_color
        img[bottom] = person.bottom_color
        img = np.clip(img @ palette.T + offset, 0.0, 1.0) ** style.gamma
        img = img + rng.normal(0.0, noise_std, img.shape)
        frames.append(np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8))
    return np.stack(frames)


def generate_toy_dataset(spec: ToyWorldSpec, seed: int, out_dir, force=False):
    """Render source-train, target-train and target-test splits under ``out_dir``.

    Writes ``manifests/<split>.csv`` (target-train labels withheld),
    ``frames/<split>/<tracklet>/fNNN.png``, ``identities.json`` with the
    per-domain identity parameters, and ``world.json`` echoing spec and seed.
    Returns the output directory.
    """
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise FileExistsError(f"output directory {out_dir} is not empty (use force to overwrite)")
        shutil.rmtree(out_dir)
    (out_dir / "manifests").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    people = draw_identities(spec.num_identities, rng)
    styles = {DomainLabel.SOURCE: spec.source_style, DomainLabel.TARGET: spec.target_style}
    split_domain = {"source_train": DomainLabel.SOURCE, "target_train": DomainLabel.TARGET,
                    "target_test": DomainLabel.TARGET}

    for split in SPLITS:
        domain = split_domain[split]
        split_rng = np.random.default_rng([seed, SPLITS.index(split)])
        rows = []
        for pid, person in enumerate(people, start=1):
            for k in range(spec.tracklets_per_identity):
                camera = k % spec.num_cameras
                tid = f"{split}_p{pid:03d}_t{k:02d}"
                rel = Path("frames") / split / tid
                (out_dir / rel).mkdir(parents=True, exist_ok=True)
                clip = render_tracklet(person, styles[domain], camera, spec.frames_per_tracklet,
                                       spec.image_size, spec.noise_std, split_rng)
                for t, frame in enumerate(clip):
                    Image.fromarray(frame).save(out_dir / rel / f"f{t:03d}.png")
                label = None if split == "target_train" else pid
                rows.append((tid, label, camera, domain, rel.as_posix()))
        write_manifest(out_dir / "manifests" / f"{split}.csv", rows)

    sidecar = {d.name.lower(): {str(pid): p.to_dict() for pid, p in enumerate(people, start=1)}
               for d in styles}
    (out_dir / "identities.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    (out_dir / "world.json").write_text(json.dumps({"seed": seed, "spec": spec.to_dict()},
                                                   indent=2, sort_keys=True) + "\n")
    return out_dir
