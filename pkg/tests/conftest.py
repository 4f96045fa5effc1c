import numpy as np
import pytest
from loguru import logger

from support import natural_image, tiny_config, write_images


@pytest.fixture(autouse=True)
def _quiet_logs():
    logger.remove()
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture(scope="session")
def corpus():
    """Twenty well-exposed 96×96 scenes"""
    return [natural_image(100 + i, 96, 96) for i in range(20)]


@pytest.fixture
def image_dir(tmp_path):
    directory = tmp_path / "clean"
    write_images(directory, 10, size=64)
    return directory
