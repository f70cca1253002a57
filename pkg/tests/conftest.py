"""Shared fixtures: a tiny synthetic dataset on disk for CLI-level tests."""

import pytest

from jigsawssl.data import synth_dataset


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tinyset")
    synth_dataset(num_classes=3, per_class=4, image_size=64, seed=11, out_dir=out)
    return out
