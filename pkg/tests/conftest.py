import pytest

from distortionless.corpus import synth_dataset


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    """Small synthetic dataset shared by the training and CLI tests."""
    out = tmp_path_factory.mktemp("toy")
    synth_dataset(out, counts=(10, 3, 3), seed=0)
    return out
