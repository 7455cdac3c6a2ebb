"""Tracklets, datasets, manifests and the frame/batch samplers."""

from __future__ import annotations

import csv
import enum
import functools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image

from .errors import ConfigError, SchemaError

logger = logging.getLogger(__name__)

MANIFEST_HEADER = ("tracklet_id", "person_id", "camera_id", "domain", "frames_dir")
FRAME_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".npy")
UNLABELED = -1

FrameRef = Union[Path, np.ndarray]


class DomainLabel(enum.IntEnum):
    SOURCE = 0  # synthetic
    TARGET = 1  # real

    @classmethod
    def parse(cls, text):
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise SchemaError(f"unknown domain {text!r}; expected 'source' or 'target'") from None


class DatasetRole(enum.Enum):
    SOURCE_TRAIN = "source_train"
    TARGET_TRAIN = "target_train"
    TEST = "test"
    TEST_QUERY = "test_query"
    TEST_GALLERY = "test_gallery"

    @property
    def is_test(self):
        return self in (DatasetRole.TEST, DatasetRole.TEST_QUERY, DatasetRole.TEST_GALLERY)


class SamplingStrategy(enum.Enum):
    CHUNKED_RANDOM = "chunked_random"
    UNIFORM = "uniform"
    ALL = "all"


@dataclass(frozen=True)
class Tracklet:
    tracklet_id: str
    person_id: int | None
    camera_id: int
    domain: DomainLabel
    frames: tuple[FrameRef, ...]

    def __post_init__(self):
        if len(self.frames) == 0:
            raise SchemaError(f"tracklet {self.tracklet_id!r} has no frames")

    @property
    def length(self):
        return len(self.frames)

    @property
    def labeled(self):
        return self.person_id is not None


@dataclass(frozen=True)
class ReIDDataset:
    name: str
    tracklets: tuple[Tracklet, ...]
    role: DatasetRole
    # original manifest id -> remapped id (SOURCE_TRAIN only)
    label_map: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.role is DatasetRole.SOURCE_TRAIN:
            unlabeled = [t.tracklet_id for t in self.tracklets if not t.labeled]
            if unlabeled:
                raise SchemaError(f"{self.name}: unlabeled tracklet {unlabeled[0]!r} in SOURCE_TRAIN")
            ids = {t.person_id for t in self.tracklets}
            if ids != set(range(1, len(ids) + 1)):
                raise SchemaError(f"{self.name}: SOURCE_TRAIN ids must be the contiguous range 1..C")
        elif self.role is DatasetRole.TARGET_TRAIN:
            if any(t.labeled for t in self.tracklets):
                raise SchemaError(f"{self.name}: TARGET_TRAIN tracklets must be unlabeled")
        elif any(not t.labeled for t in self.tracklets):
            raise SchemaError(f"{self.name}: test tracklets must carry person ids")

    def __len__(self):
        return len(self.tracklets)

    @property
    def num_identities(self):
        if self.role is DatasetRole.TARGET_TRAIN:
            return None
        return len({t.person_id for t in self.tracklets})

    @property
    def person_ids(self):
        return np.array([-1 if t.person_id is None else t.person_id for t in self.tracklets])

    @property
    def camera_ids(self):
        return np.array([t.camera_id for t in self.tracklets])

    def by_identity(self):
        groups: dict[int, list[Tracklet]] = {}
        for t in self.tracklets:
            groups.setdefault(t.person_id, []).append(t)
        return groups


@dataclass(frozen=True)
class PKBatch:
    clips: tuple[tuple[Tracklet, tuple[int, ...]], ...]
    P: int
    K: int
    T: int

    @property
    def person_ids(self):
        return np.array([t.person_id for t, _ in self.clips])


def _list_frames(frames_dir: Path):
    if not frames_dir.is_dir():
        raise FileNotFoundError(f"frame directory not found: {frames_dir}")
    files = sorted(p for p in frames_dir.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
    return tuple(files)


def load_dataset(root, manifest, role, name=None):
    """Read a tracklet manifest into a validated :class:`ReIDDataset`.

    ``frames_dir`` entries are resolved against ``root``. SOURCE_TRAIN person ids
    are remapped to ``1..C`` in order of first appearance; TARGET_TRAIN labels
    are withheld even if the manifest carries them.
    """
    root = Path(root)
    manifest = Path(manifest)
    role = DatasetRole(role)
    if not manifest.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest}")

    with manifest.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_HEADER:
            raise SchemaError(f"{manifest}: header must be {','.join(MANIFEST_HEADER)}")
        rows = list(reader)

    label_map: dict[int, int] = {}
    tracklets = []
    for row in rows:
        pid = int(row["person_id"])
        frames_dir = root / row["frames_dir"]
        frames = _list_frames(frames_dir)
        if not frames:
            raise SchemaError(f"tracklet {row['tracklet_id']!r} has no frames in {frames_dir}")
        if role is DatasetRole.SOURCE_TRAIN:
            if pid == UNLABELED:
                raise SchemaError(f"unlabeled row {row['tracklet_id']!r} in SOURCE_TRAIN manifest {manifest}")
            pid = label_map.setdefault(pid, len(label_map) + 1)
        elif role is DatasetRole.TARGET_TRAIN or pid == UNLABELED:
            pid = None
        tracklets.append(Tracklet(
            tracklet_id=row["tracklet_id"],
            person_id=pid,
            camera_id=int(row["camera_id"]),
            domain=DomainLabel.parse(row["domain"]),
            frames=frames,
        ))
    return ReIDDataset(name or manifest.stem, tuple(tracklets), role, label_map)


def write_manifest(path, rows):
    """Write manifest rows given as ``(tracklet_id, person_id, camera_id, domain, frames_dir)``."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for tid, pid, cam, domain, frames_dir in rows:
            if isinstance(domain, DomainLabel):
                domain = domain.name.lower()
            writer.writerow([tid, UNLABELED if pid is None else pid, cam, domain, frames_dir])


@functools.lru_cache(maxsize=65536)
def _read_frame_file(path: str):
    if path.endswith(".npy"):
        arr = np.load(path).astype(np.float32)
    else:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        arr = arr.transpose(2, 0, 1)
    arr.setflags(write=False)
    return arr


def load_frame(ref: FrameRef) -> np.ndarray:
    """Pixel data (C, H, W) in [0, 1] for images, raw array for ``.npy`` rows."""
    if isinstance(ref, np.ndarray):
        return ref.astype(np.float32, copy=False)
    return _read_frame_file(str(ref))


def load_clip(tracklet: Tracklet, indices: Sequence[int]) -> np.ndarray:
    return np.stack([load_frame(tracklet.frames[i]) for i in indices])


def sample_frames(tracklet, T, strategy=SamplingStrategy.CHUNKED_RANDOM, rng=None):
    """Pick ``T`` frame indices from a tracklet.

    CHUNKED_RANDOM splits ``[0, length)`` into ``T`` contiguous chunks and draws
    one index per chunk; UNIFORM takes each chunk's midpoint. ALL returns every
    frame when ``length <= T`` and a uniform subset of ``T`` otherwise, so ``T``
    acts as a cap. Tracklets shorter than ``T`` are cyclically padded and sorted,
    which gives non-decreasing rather than strictly increasing indices.
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    strategy = SamplingStrategy(strategy)
    length = tracklet if isinstance(tracklet, (int, np.integer)) else tracklet.length

    if length < T:
        if strategy is SamplingStrategy.ALL:
            return list(range(length))
        return sorted(int(i) for i in np.arange(T) % length)

    bounds = [(i * length) // T for i in range(T + 1)]
    if strategy is SamplingStrategy.CHUNKED_RANDOM:
        if rng is None:
            raise ConfigError("CHUNKED_RANDOM sampling needs a seeded rng")
        return [int(rng.integers(bounds[i], bounds[i + 1])) for i in range(T)]
    return [bounds[i] + (bounds[i + 1] - bounds[i]) // 2 for i in range(T)]


def sample_pk_batch(dataset, P, K, T, rng, strategy=SamplingStrategy.CHUNKED_RANDOM):
    """Draw P identities without replacement and K tracklets for each."""
    if dataset.role is not DatasetRole.SOURCE_TRAIN:
        raise ConfigError(f"PK sampling needs a SOURCE_TRAIN dataset, got {dataset.role.value}")
    groups = dataset.by_identity()
    if len(groups) < P:
        raise ConfigError(f"P={P} identities requested but dataset {dataset.name!r} has {len(groups)}")
    ids = sorted(groups)
    chosen = rng.choice(len(ids), size=P, replace=False)
    clips = []
    for i in chosen:
        members = groups[ids[i]]
        picks = rng.choice(len(members), size=K, replace=len(members) < K)
        for j in picks:
            t = members[j]
            clips.append((t, tuple(sample_frames(t, T, strategy, rng))))
    return PKBatch(tuple(clips), P, K, T)


def split_query_gallery(dataset, protocol):
    """Split a labeled test set into query and gallery by camera policy.

    ``protocol.camera_policy`` is ``"split"`` (query cameras vs gallery cameras)
    or ``"leave_one_out"`` (per identity, the first tracklet by id is the query).
    Selection is keyed on tracklet ids, so manifest row order does not matter.
    Queries whose identity has no gallery tracklet from another camera are
    dropped with a warning.
    """
    if any(not t.labeled for t in dataset.tracklets):
        raise SchemaError("split_query_gallery needs labeled tracklets")
    ordered = sorted(dataset.tracklets, key=lambda t: t.tracklet_id)
    policy = getattr(protocol, "camera_policy", "split")

    if policy == "split":
        qcams, gcams = set(protocol.query_cameras), set(protocol.gallery_cameras)
        query = [t for t in ordered if t.camera_id in qcams]
        gallery = [t for t in ordered if t.camera_id in gcams]
    elif policy == "leave_one_out":
        first: dict[int, Tracklet] = {}
        for t in ordered:
            first.setdefault(t.person_id, t)
        query_ids = {t.tracklet_id for t in first.values()}
        query = [t for t in ordered if t.tracklet_id in query_ids]
        gallery = [t for t in ordered if t.tracklet_id not in query_ids]
    else:
        raise ConfigError(f"unknown camera policy {policy!r}")

    kept = []
    for q in query:
        if any(g.person_id == q.person_id and g.camera_id != q.camera_id for g in gallery):
            kept.append(q)
        else:
            logger.warning("dropping query %s: identity %s has no cross-camera gallery match",
                           q.tracklet_id, q.person_id)
    return (
        ReIDDataset(f"{dataset.name}_query", tuple(kept), DatasetRole.TEST_QUERY),
        ReIDDataset(f"{dataset.name}_gallery", tuple(gallery), DatasetRole.TEST_GALLERY),
    )
