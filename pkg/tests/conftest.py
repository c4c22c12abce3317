import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from avs.crossref import ScorerConfig, load_weights, save_weights, train  # noqa: E402
from avs.datasetgen import DatasetManifest, generate_triplets, split_dataset  # noqa: E402
from avs.scenegen import make_bundle  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_bundle():
    return make_bundle(3, n_splats=120, n_views=24, n_test=6, image_side=32)


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    """The default 24-scene triplet corpus (768 records)."""
    root = tmp_path_factory.mktemp("dataset")
    generate_triplets(24, root, seed=0)
    return DatasetManifest.load(root)


@pytest.fixture(scope="session")
def trained_scorer(default_dataset, tmp_path_factory):
    """Default scorer (5k AdamW steps) trained on the non-validation scenes.

    Returns ``(model, train_manifest, val_manifest, weights_path, log, train_seconds)``.
    """
    tr, va = split_dataset(default_dataset, 0.2, seed=0)
    t0 = time.perf_counter()
    model, log = train(tr.load_records(), ScorerConfig(), 5000, seed=0,
                       val_records=va.load_records()[::8])
    seconds = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("scorer") / "weights.avst"
    save_weights(model, path)
    return load_weights(path, ScorerConfig()), tr, va, path, log, seconds
