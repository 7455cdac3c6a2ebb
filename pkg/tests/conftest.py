import numpy as np
import pytest
import torch

from synreid.toy import ToyWorldSpec, generate_toy_dataset

SMALL_WORLD = ToyWorldSpec(num_identities=4, tracklets_per_identity=4, frames_per_tracklet=6)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A 4-identity toy corpus shared by the read-only tests."""
    return generate_toy_dataset(SMALL_WORLD, 7, tmp_path_factory.mktemp("toy") / "corpus")


def toy_config(root, out_dir, **sections):
    from synreid.config import ExperimentConfig

    raw = {
        "data": {"root": str(root)},
        "sampler": {"P": 2, "K": 2, "T": 4},
        "optim": {"seed": 0, "steps": 12, "lr": 1e-3, "epoch_steps": 4},
        "backbone": {"dim": 16, "widths": [8, 8, 16]},
        "cluster": {"M": 4},
        "teacher": {"alpha": 0.9},
        "stitch": {"v_choices": [2], "v_max": 4, "groups": 2},
        "output_dir": str(out_dir),
    }
    for name, values in sections.items():
        raw.setdefault(name, {}).update(values)
    return ExperimentConfig.from_dict(raw)
