import numpy as np
import pytest

from blursim import PlanarScene, make_noise_texture
from camera import PinholeCamera
from tracker import TrackerConfig

SCENE_DEPTH = 2.0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cam():
    return PinholeCamera(100.0, 100.0, 63.5, 63.5, 128, 128)


@pytest.fixture(scope="session")
def scene():
    # 5.12 m of texture, one texel per pixel at the plane distance
    return PlanarScene(make_noise_texture(256, seed=3), depth=SCENE_DEPTH, texel_size=0.02)


@pytest.fixture(scope="session")
def small_cfg():
    return TrackerConfig(pyramid_levels=2, keypoint_count=64, n_virtual=6)
