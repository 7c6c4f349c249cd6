"""
Unit tests for the synthetic scene generator.
Run: pytest tests/unit/test_scene.py -v
"""

import numpy as np
import pytest

from core.config import SceneSettings
from core.errors import EmptyInputError, PackingFailedError
from core.scene import CLASS_NAMES, FLOOR, WALL, class_pool, synth_scene

RES = 0.02


class TestPlantedLabels:
    def test_ground_truth_matches_plan(self, scene):
        assert len(scene.ground_truth) == scene.n_instances
        sizes = {g.instance_id: g.size for g in scene.ground_truth}
        for planted in scene.planted:
            assert sizes[planted.instance_id] == planted.n_cells

    def test_every_cell_labeled(self, scene):
        assert np.all(scene.grid.instance_labels >= 0)
        assert np.all(scene.grid.semantic_labels >= 0)

    def test_room_parts(self, scene):
        labels = [p.semantic_label for p in scene.planted[:5]]
        assert labels == [FLOOR, WALL, WALL, WALL, WALL]

    def test_points_per_voxel(self, scene, config):
        assert np.all(scene.grid.point_counts == config.scene.points_per_voxel)

    def test_source_normals_unit(self, scene):
        assert scene.grid.has_source_normals
        assert np.allclose(np.linalg.norm(scene.grid.normals, axis=1), 1.0)

    def test_object_count(self, scene, config):
        assert scene.n_instances == 5 + config.scene.n_objects


class TestDeterminism:
    def test_same_seed(self, config):
        a = synth_scene(config.scene, RES, config.n_classes, 4)
        b = synth_scene(config.scene, RES, config.n_classes, 4)
        assert np.array_equal(a.cloud.points, b.cloud.points)
        assert np.array_equal(a.grid.instance_labels, b.grid.instance_labels)

    def test_different_seeds(self, config):
        a = synth_scene(config.scene, RES, config.n_classes, 1)
        b = synth_scene(config.scene, RES, config.n_classes, 2)
        assert not np.array_equal(a.cloud.points, b.cloud.points)


class TestLayouts:
    def test_adjacent_pair(self, make_config):
        cfg = make_config(0, layout="adjacent_pair", n_objects=2)
        scene = synth_scene(cfg.scene, RES, cfg.n_classes, 0)
        assert scene.confusable_pairs == [(5, 6)]
        a, b = scene.planted[5], scene.planted[6]
        assert a.semantic_label == b.semantic_label
        assert a.footprint[2] != b.footprint[2]
        labels = scene.grid.instance_labels
        pairs = scene.grid.neighbor_pairs(26)
        across = (labels[pairs[:, 0]] == 5) & (labels[pairs[:, 1]] == 6) | \
                 (labels[pairs[:, 0]] == 6) & (labels[pairs[:, 1]] == 5)
        assert across.any()

    def test_objects_only(self, make_config):
        cfg = make_config(0, include_room=False, n_objects=2)
        scene = synth_scene(cfg.scene, RES, cfg.n_classes, 0)
        assert scene.n_instances == 2

    def test_nothing_to_plant(self, make_config):
        cfg = make_config(0, include_room=False, n_objects=0)
        with pytest.raises(EmptyInputError):
            synth_scene(cfg.scene, RES, cfg.n_classes, 0)

    def test_room_too_small(self):
        settings = SceneSettings(room_size=(0.3, 0.3), n_objects=5, max_attempts=5)
        with pytest.raises(PackingFailedError):
            synth_scene(settings, RES, 20, 0)

    def test_class_count_respected(self, make_config):
        cfg = make_config(3)
        scene = synth_scene(cfg.scene, RES, 5, 3)
        assert max(g.semantic_label for g in scene.ground_truth) < 5


class TestClassPool:
    def test_names(self):
        assert len(CLASS_NAMES) == 20
        assert CLASS_NAMES[WALL] == "wall" and CLASS_NAMES[FLOOR] == "floor"

    def test_pool_falls_back(self):
        assert class_pool("panel", 5) == (4,)
        assert all(c < 20 for c in class_pool("box", 20))
