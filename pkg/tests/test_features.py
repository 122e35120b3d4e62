import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fformation.errors import CapacityError
from fformation.features import (
    F_ANGLE,
    F_GROUP,
    F_NODE,
    NO_NEIGHBOR_GAP,
    NODE_FEATURE_NAMES,
    angle_features,
    chain_features,
    group_features,
    node_features,
    pose_stats,
)
from fformation.pose import FORMATIONS, bin_confidence

from conftest import make_pose, make_scene

IDX = {name: i for i, name in enumerate(NODE_FEATURE_NAMES)}


class TestNodeFeatures:
    def test_single_person_has_sentinel_gaps_and_zero_neighbor_blocks(self):
        scene = make_scene([make_pose("solo", x=320.0)])
        f = node_features(scene, 0)
        assert f[IDX["gap_left"]] == NO_NEIGHBOR_GAP
        assert f[IDX["gap_right"]] == NO_NEIGHBOR_GAP
        assert not f[10:26].any()

    def test_facing_score_zero_when_nose_centered(self):
        pose = make_pose(
            "p",
            overrides={
                "leftShoulder": (90.0, 100.0, 0.9),
                "rightShoulder": (110.0, 100.0, 0.9),
                "nose": (100.0, 80.0, 0.9),
            },
        )
        scene = make_scene([pose])
        f = node_features(scene, 0)
        assert f[IDX["facing_score"]] == pytest.approx(0.0)

    def test_back_facing_indicator(self):
        pose = make_pose(
            "p",
            overrides={
                "leftEye": (100.0, 90.0, 0.1),
                "rightEye": (102.0, 90.0, 0.12),
                "leftEar": (95.0, 92.0, 0.8),
                "rightEar": (107.0, 92.0, 0.85),
            },
        )
        f = node_features(make_scene([pose]), 0)
        assert f[IDX["back_facing"]] == 1.0

    def test_back_facing_indicator_fires_on_generator_back_views(self):
        # side-by-side at -90 renders both members with their backs to the
        # camera: the generator hides their eyes but keeps the ears.
        from fformation.pose import order_left_to_right
        from fformation.synth import SynthConfig, render_scene

        scene = order_left_to_right(
            render_scene(
                SynthConfig(
                    formation="side-by-side",
                    angle_deg=-90,
                    distance_m=3.0,
                    noise_px=0.0,
                    angle_jitter_deg=0.0,
                    scale_jitter=0.0,
                    seed=21,
                )
            )
        )
        for i in range(len(scene.poses)):
            assert node_features(scene, i)[IDX["back_facing"]] == 1.0

    def test_back_facing_requires_both_ears(self):
        pose = make_pose(
            "p",
            overrides={
                "leftEye": (100.0, 90.0, 0.1),
                "rightEye": (102.0, 90.0, 0.1),
                "leftEar": (95.0, 92.0, 0.1),
                "rightEar": (107.0, 92.0, 0.9),
            },
        )
        f = node_features(make_scene([pose]), 0)
        assert f[IDX["back_facing"]] == 0.0

    def test_gaps_use_anchor_difference_over_width(self):
        scene = make_scene(
            [make_pose("a", x=100.0), make_pose("b", x=420.0)], width=640
        )
        f = node_features(scene, 1)
        assert f[IDX["gap_left"]] == pytest.approx(320.0 / 640.0)
        assert f[IDX["gap_right"]] == NO_NEIGHBOR_GAP

    def test_bin_fractions_sum_to_one(self):
        f = pose_stats(make_pose("p", confidence=0.6), 640)
        assert f[4:8].sum() == pytest.approx(1.0)

    def test_neighbor_blocks_are_the_neighbors_stats(self):
        left = make_pose("l", x=50.0, confidence=0.3)
        mid = make_pose("m", x=300.0, confidence=0.9)
        right = make_pose("r", x=500.0, confidence=0.7)
        scene = make_scene([left, mid, right])
        f = node_features(scene, 1)
        np.testing.assert_allclose(f[10:18], pose_stats(left, 640))
        np.testing.assert_allclose(f[18:26], pose_stats(right, 640))

    def test_locality_far_pose_does_not_matter(self):
        poses = [make_pose(f"p{i}", x=100.0 * (i + 1)) for i in range(4)]
        scene_a = make_scene(poses)
        mutated = poses.copy()
        mutated[3] = make_pose("p3-moved", x=600.0, confidence=0.2)
        scene_b = make_scene(mutated)
        np.testing.assert_array_equal(
            node_features(scene_a, 0), node_features(scene_b, 0)
        )
        np.testing.assert_array_equal(
            node_features(scene_a, 1), node_features(scene_b, 1)
        )

    def test_dimension_constant(self):
        assert len(NODE_FEATURE_NAMES) == F_NODE == 26
        scene = make_scene([make_pose("a"), make_pose("b", x=300.0)])
        assert chain_features(scene).shape == (2, F_NODE)

    def test_index_out_of_range(self):
        with pytest.raises(ValueError):
            node_features(make_scene([make_pose()]), 1)


class TestGroupFeatures:
    def test_padding_slot_zeroed_with_presence_zero(self):
        gfv = group_features([make_pose("a")], 640, 480)
        assert len(gfv) == F_GROUP == 309
        assert not gfv[102:306].any()
        assert gfv[306] == 1.0 and gfv[307] == 0.0 and gfv[308] == 0.0

    def test_center_keypoint_normalizes_to_zero(self):
        pose = make_pose("c", x=320.0, y=240.0, confidence=0.9)
        gfv = group_features([pose], 640, 480)
        assert gfv[0] == pytest.approx(0.0)
        assert gfv[1] == pytest.approx(0.0)

    def test_off_frame_coordinates_clamped(self):
        pose = make_pose("c", x=-50.0, y=1000.0, confidence=0.9)
        gfv = group_features([pose], 640, 480)
        assert gfv[0] == -1.0
        assert gfv[1] == 1.0

    def test_hand_computed_two_person_layout(self):
        # Independent oracle: build the expected 309 entries with explicit
        # arithmetic, keypoint by keypoint.
        a = make_pose("a", x=160.0, y=120.0, confidence=0.30)
        b = make_pose("b", x=480.0, y=360.0, confidence=0.80)
        gfv = group_features([a, b], 640, 480)

        expected = np.zeros(309)
        for slot, pose in enumerate([a, b]):
            for k, kp in enumerate(pose.keypoints):
                off = slot * 102 + k * 6
                expected[off] = (kp.x - 320.0) / 320.0
                expected[off + 1] = (kp.y - 240.0) / 240.0
                expected[off + 2 + int(bin_confidence(kp.confidence))] = 1.0
        expected[306] = expected[307] = 1.0
        np.testing.assert_allclose(gfv, expected)

    def test_capacity_error_beyond_three(self):
        poses = [make_pose(f"p{i}", x=10.0 * i) for i in range(4)]
        with pytest.raises(CapacityError):
            group_features(poses, 640, 480)

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError):
            group_features([], 640, 480)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(min_value=-50.0, max_value=50.0))
    def test_translation_moves_only_x_norms(self, delta):
        base = [make_pose("a", x=200.0, y=100.0), make_pose("b", x=400.0, y=300.0)]
        moved = [
            make_pose("a", x=200.0 + delta, y=100.0),
            make_pose("b", x=400.0 + delta, y=300.0),
        ]
        g0 = group_features(base, 640, 480)
        g1 = group_features(moved, 640, 480)
        diff = g1 - g0
        for slot in range(2):
            for k in range(17):
                off = slot * 102 + k * 6
                assert diff[off] == pytest.approx(2 * delta / 640.0, abs=1e-12)
                assert diff[off + 1 : off + 6] == pytest.approx(0.0)
        assert not diff[306:].any()


class TestAngleFeatures:
    def test_face_to_face_one_hot(self):
        gfv = group_features([make_pose("a")], 640, 480)
        afv = angle_features(gfv, "face-to-face")
        assert list(afv[-4:]) == [1.0, 0.0, 0.0, 0.0]

    def test_triangle_one_hot(self):
        gfv = group_features([make_pose("a")], 640, 480)
        afv = angle_features(gfv, "triangle")
        assert list(afv[-4:]) == [0.0, 0.0, 0.0, 1.0]

    def test_length_is_313(self, rng):
        gfv = rng.normal(size=F_GROUP)
        for formation in FORMATIONS:
            assert len(angle_features(gfv, formation)) == F_ANGLE == 313

    def test_unknown_formation_rejected(self):
        with pytest.raises(ValueError):
            angle_features(np.zeros(F_GROUP), "circle")

    def test_wrong_gfv_length_rejected(self):
        with pytest.raises(ValueError):
            angle_features(np.zeros(10), "triangle")
