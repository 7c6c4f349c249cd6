"""
Shared fixtures: a small synthetic room that keeps every test fast.
"""

import pytest

from core.config import PipelineConfig, SceneSettings


def small_scene_settings(**overrides) -> SceneSettings:
    base = dict(
        room_size=(1.2, 1.2),
        wall_height=0.24,
        n_objects=3,
        object_size=(0.16, 0.3),
        object_height=(0.16, 0.24),
    )
    base.update(overrides)
    return SceneSettings(**base)


def small_config(seed: int = 0, **scene_overrides) -> PipelineConfig:
    return PipelineConfig(scene=small_scene_settings(**scene_overrides)).with_seed(seed)


@pytest.fixture(scope="session")
def config() -> PipelineConfig:
    return small_config()


@pytest.fixture(scope="session")
def scene(config):
    from core.pipeline import synthesize
    return synthesize(config)


@pytest.fixture(scope="session")
def predictions(config, scene):
    from core.oracle import emit_predictions
    return emit_predictions(scene.grid, scene.ground_truth, config.oracle, config.n_classes,
                            config.embedding_dim, scene.confusable_pairs)


@pytest.fixture(scope="session")
def make_config():
    """Factory for small-room configs: make_config(seed, **scene_overrides)."""
    return small_config
