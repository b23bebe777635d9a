"""Scene file and simulation loop tests."""

import numpy as np
import pytest
import yaml

from cabledex.errors import ConfigError, FormatError, UnsupportedVersionError
from cabledex.scene import (
    DEFAULT_MATERIALS,
    SceneConfig,
    Tube,
    capsule_names,
    default_scene,
    dumps_scene,
    load_scene,
    scene_digest,
    scene_from_dict,
    validate_scene,
)
from cabledex.simulation import Simulator


@pytest.fixture(scope="module")
def scene():
    return default_scene()


class TestSceneFormat:
    def test_builtin_scene_loads_and_validates(self, scene):
        validate_scene(scene)
        assert scene.cable.label == "A"
        assert scene.cable.diameter == 0.012

    def test_round_trip_preserves_physics(self, scene, tmp_path):
        p = tmp_path / "scene.yaml"
        p.write_text(dumps_scene(scene))
        loaded = load_scene(p)
        assert loaded.cable == scene.cable
        assert loaded.layout == scene.layout
        assert loaded.params == scene.params
        assert loaded.init_region == scene.init_region
        assert loaded.tubes == scene.tubes

    def test_same_file_same_digest(self, scene, tmp_path):
        p = tmp_path / "scene.yaml"
        p.write_text(dumps_scene(scene))
        assert load_scene(p).source_digest == load_scene(p).source_digest != ""

    def test_digest_changes_with_content(self, scene, tmp_path):
        a = tmp_path / "a.yaml"
        b = tmp_path / "b.yaml"
        a.write_text(dumps_scene(scene))
        b.write_text(dumps_scene(scene).replace("label: A", "label: B"))
        assert load_scene(a).source_digest != load_scene(b).source_digest

    def test_unsupported_version(self, scene):
        data = yaml.safe_load(dumps_scene(scene))
        data["format_version"] = 99
        with pytest.raises(UnsupportedVersionError):
            scene_from_dict(data)

    def test_missing_field_named(self, scene):
        data = yaml.safe_load(dumps_scene(scene))
        del data["cable"]
        with pytest.raises(FormatError, match="cable"):
            scene_from_dict(data)

    def test_hand_in_table_names_capsule(self, scene):
        data = yaml.safe_load(dumps_scene(scene))
        data["table"]["height"] = 0.2  # well above the fingertips
        with pytest.raises(ConfigError, match="roller|palm"):
            scene_from_dict(data)

    def test_unknown_cable_label(self, scene):
        data = yaml.safe_load(dumps_scene(scene))
        data["cable"]["label"] = "Z"
        with pytest.raises(ConfigError, match="A"):
            scene_from_dict(data)


class TestMaterials:
    def test_label_swap_changes_material_and_diameter(self, scene):
        d = scene.cable_for_label("D")
        assert d.diameter == 0.016
        assert d.bend_twist_compliance < scene.cable.bend_twist_compliance
        e = scene.cable_for_label("E")
        assert e.diameter == 0.008
        assert e.bend_twist_compliance > scene.cable.bend_twist_compliance

    def test_swap_preserves_length_and_resolution(self, scene):
        f = scene.cable_for_label("F")
        assert f.length == scene.cable.length
        assert f.segment_count == scene.cable.segment_count

    def test_all_labels_resolvable(self, scene):
        for label in DEFAULT_MATERIALS:
            assert scene.cable_for_label(label).label == label


class TestTube:
    def test_walls_flank_the_bore(self):
        t = Tube(entrance=(0.1, 0.0, 0.01), axis=(1.0, 0.0, 0.0), length=0.08)
        c1, c2 = t.capsules()
        gap = abs(c1.a[1] - c2.a[1]) - 2.0 * t.wall_radius
        assert abs(gap - t.bore) < 1e-12

    def test_insertion_depth(self):
        t = Tube(entrance=(0.1, 0.0, 0.01), axis=(1.0, 0.0, 0.0), length=0.08)
        assert t.insertion_depth((0.13, 0.0, 0.01)) == pytest.approx(0.03)
        assert t.insertion_depth((0.05, 0.0, 0.01)) < 0.0
        assert t.insertion_depth((0.13, 0.05, 0.01)) <= 0.0
        assert t.insertion_depth((0.5, 0.0, 0.01)) == pytest.approx(t.length)

    def test_vertical_axis_rejected(self):
        t = Tube(entrance=(0.1, 0.0, 0.01), axis=(0.0, 0.0, 1.0), length=0.08)
        with pytest.raises(ConfigError):
            t.capsules()


class TestSimulator:
    def test_idle_hand_leaves_cable_at_rest(self, scene):
        sim = Simulator(scene)
        snaps = sim.run(90)
        drift = np.abs(snaps[-1].keypoints - snaps[0].keypoints).max()
        assert drift < 5e-3

    def test_tick_numbering(self, scene):
        sim = Simulator(scene)
        snaps = sim.run(5)
        assert [s.tick for s in snaps] == [0, 1, 2, 3, 4]

    def test_deterministic_stream(self, scene):
        a = Simulator(scene).run(60)
        b = Simulator(scene).run(60)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.keypoints, sb.keypoints)
            assert np.array_equal(sa.actual, sb.actual)

    def test_drag_moves_joint_and_flags_limits(self, scene):
        sim = Simulator(scene)
        assert sim.drag_joint(6, 0.2) is False
        assert sim.motor.actual[6] == pytest.approx(0.2)
        assert sim.drag_joint(6, 10.0) is True
        lim = scene.hand.joint_limits()[6]
        assert sim.motor.actual[6] == pytest.approx(lim[1])

    def test_lock_freezes_finger_against_drag(self, scene):
        sim = Simulator(scene)
        sim.set_finger_mode("middle", "record_low")
        sim.drag_joint(11, 0.3)
        sim.step_tick()
        sim.set_finger_mode("middle", "locked_high")
        held = sim.motor.actual[10:15].copy()
        for _ in range(30):
            sim.step_tick()
        assert np.abs(sim.motor.actual[10:15] - held).max() < 1e-3

    def test_snapshot_capsule_names(self, scene):
        sim = Simulator(scene)
        snap = sim.step_tick()
        names = [row[0] for row in snap.capsules]
        assert names == list(capsule_names(scene.hand))
        assert names[0] == "palm"
        assert "index_left/roller" in names

    def test_snapshot_serializes(self, scene):
        import json

        snap = Simulator(scene).step_tick()
        payload = json.dumps(snap.to_dict())
        assert "keypoints" in payload

    def test_swap_cable_keeps_shape(self, scene):
        sim = Simulator(scene)
        before = sim.cable.positions.copy()
        sim.swap_cable("F")
        assert sim.cable_spec.label == "F"
        assert np.array_equal(sim.cable.positions, before)

    def test_bad_inputs_rejected(self, scene):
        sim = Simulator(scene)
        with pytest.raises(ConfigError):
            sim.drag_joint(25, 0.1)
        with pytest.raises(ConfigError):
            sim.set_finger_mode("pinky", "record_low")
        with pytest.raises(ConfigError):
            sim.set_mode("sleeping")
