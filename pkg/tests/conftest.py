import numpy as np
import pytest
import torch
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    from polyfold.synthetic import write_toy_corpus
    root = tmp_path_factory.mktemp("toy")
    paths = write_toy_corpus(root, n_families=6, n_bench=4, seed=3)
    return root, paths


@pytest.fixture(scope="session")
def toy_manifest(toy_corpus):
    from polyfold.dataset import build_dataset, read_benchmark, write_manifest
    root, paths = toy_corpus
    m = build_dataset(paths["structures"], read_benchmark(paths["benchmark"]), test_n=2, val_n=1)
    path = root / "manifest.jsonl"
    write_manifest(m, path)
    return path
