import hypothesis
import numpy as np
import pytest

np.seterr(over="raise", invalid="raise", divide="raise")

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    from rednet.synth import synth_generate

    root = tmp_path_factory.mktemp("synth")
    train_path, _ = synth_generate(root / "train", 6, 32, seed=0, split="train")
    test_path, _ = synth_generate(root / "test", 3, 32, seed=1, split="test")
    return train_path, test_path
