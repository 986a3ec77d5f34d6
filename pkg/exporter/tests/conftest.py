import pytest

from dermapipe.vectortest import generate_fixture
from dermapipe_export.synthetic import make_synthetic


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """The pipeline's published vector-test fixture (10 cases + tensors)."""
    d = tmp_path_factory.mktemp("vectorfixture")
    generate_fixture(d, seed=0)
    return d


@pytest.fixture(scope="session")
def syn_ds(tmp_path_factory):
    """Full-size synthetic dataset (n=200, dim=768)."""
    root = tmp_path_factory.mktemp("synds")
    return make_synthetic(root / "ds", seed=5)


@pytest.fixture(scope="session")
def small_ds(tmp_path_factory):
    """Small synthetic dataset for image-level export tests."""
    root = tmp_path_factory.mktemp("smallds")
    return make_synthetic(root / "ds", seed=9, n=12, dim=16, image_size=48)
