import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    from seqpad.synthgen import generate_dataset, strong_cues

    out = tmp_path_factory.mktemp("synth")
    base = strong_cues(num_minutiae=3, height=128, width=128, frames=4, min_spacing=30, edge_margin=32)
    manifest = generate_dataset(12, 12, subjects=6, materials=2, seed=5, out_dir=out, base=base)
    return out, manifest


FAST_CONFIG = {
    "patch_size": 32,
    "model": {"preset": "desk", "input_size": 16, "lstm_units": 4, "width_multiplier": 0.25},
    "train": {"max_epochs": 2, "patience": 1},
    "minutiae_source": "external",
}


@pytest.fixture
def fast_config(tmp_path):
    import json

    path = tmp_path / "config.json"
    path.write_text(json.dumps(FAST_CONFIG))
    return path
