import numpy as np
import pytest

from smdownscale.pipeline import ScenarioConfig
from smdownscale.synthscene import SceneConfig, build_scene

# 20 x 20 km, one year: small enough to rebuild in about a second
SMALL_SCENE = dict(extent_km=20.0, years=1, n_fields=8, n_training=(100, 30), seed=7)


@pytest.fixture(scope="session")
def small_scene_config():
    return SceneConfig(**SMALL_SCENE)


@pytest.fixture(scope="session")
def small_scene(small_scene_config):
    return build_scene(small_scene_config)


@pytest.fixture(scope="session")
def default_scene():
    return build_scene(SceneConfig())


@pytest.fixture
def small_cfg():
    """BRTst on the small scene, a handful of evaluation days, few trees."""
    return ScenarioConfig(scenario="BRTst", scene_config=dict(SMALL_SCENE), K=10, days=(301, 304, 307))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def full_runs(default_scene):
    """All three scenarios over every final-year coarse day of the default scene."""
    from smdownscale.pipeline import SCENARIOS, run_scenario

    return {s: run_scenario(ScenarioConfig(scenario=s), scene=default_scene) for s in SCENARIOS}
