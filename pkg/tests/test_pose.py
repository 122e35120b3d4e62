import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fformation.errors import DataError
from fformation.pose import (
    KEYPOINT_NAMES,
    ConfidenceBin,
    Keypoint,
    PersonPose,
    Scene,
    SceneTruth,
    anchor_x,
    bin_confidence,
    convert_ego_group,
    left_to_right_permutation,
    order_left_to_right,
    parse_scenes,
    scene_to_dict,
    write_scenes,
)

from conftest import make_pose, make_scene


class TestBinConfidence:
    @pytest.mark.parametrize(
        "c,expected",
        [
            (0.30, ConfidenceBin.MEDIUM),
            (0.00, ConfidenceBin.LOW),
            (0.25, ConfidenceBin.MEDIUM),
            (0.50, ConfidenceBin.HIGH),
            (0.75, ConfidenceBin.VERY_HIGH),
            (1.00, ConfidenceBin.VERY_HIGH),
            (0.2499999, ConfidenceBin.LOW),
        ],
    )
    def test_bins(self, c, expected):
        assert bin_confidence(c) is expected

    @pytest.mark.parametrize("c", [-0.01, 1.01, 2.0])
    def test_out_of_range(self, c):
        with pytest.raises(ValueError):
            bin_confidence(c)

    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_total_on_unit_interval(self, c):
        assert bin_confidence(c) in ConfidenceBin

    @given(
        st.floats(min_value=0.0, max_value=1.0),
        st.floats(min_value=0.0, max_value=1.0),
    )
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert bin_confidence(lo) <= bin_confidence(hi)


class TestTypes:
    def test_keypoint_rejects_bad_confidence(self):
        with pytest.raises(ValueError):
            Keypoint("nose", 0.0, 0.0, 1.5)

    def test_keypoint_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Keypoint("nose", float("nan"), 0.0, 0.5)

    def test_pose_requires_all_17(self):
        kps = tuple(Keypoint(n, 0.0, 0.0, 0.5) for n in KEYPOINT_NAMES[:-1])
        with pytest.raises(ValueError, match="exactly once"):
            PersonPose("p", kps)

    def test_pose_rejects_duplicates(self):
        kps = tuple(Keypoint(n, 0.0, 0.0, 0.5) for n in KEYPOINT_NAMES[:-1])
        kps = kps + (Keypoint("nose", 1.0, 1.0, 0.5),)
        with pytest.raises(ValueError):
            PersonPose("p", kps)

    def test_pose_normalizes_keypoint_order(self):
        shuffled = tuple(
            Keypoint(n, float(i), 0.0, 0.5)
            for i, n in enumerate(reversed(KEYPOINT_NAMES))
        )
        pose = PersonPose("p", shuffled)
        assert [k.name for k in pose.keypoints] == list(KEYPOINT_NAMES)

    def test_scene_membership_length_mismatch(self):
        with pytest.raises(ValueError, match="membership"):
            make_scene([make_pose()], truth=SceneTruth(membership=("G", "O")))

    def test_scene_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            Scene("f", 0, 480, (make_pose(),))


class TestOrdering:
    def test_two_poses_sorted_by_anchor(self):
        scene = make_scene([make_pose("right", x=400.0), make_pose("left", x=100.0)])
        ordered = order_left_to_right(scene)
        assert [p.person_id for p in ordered.poses] == ["left", "right"]

    def test_equal_anchors_keep_input_order(self):
        scene = make_scene([make_pose("first", x=50.0), make_pose("second", x=50.0)])
        ordered = order_left_to_right(scene)
        assert [p.person_id for p in ordered.poses] == ["first", "second"]

    def test_truth_permuted_with_poses(self):
        scene = make_scene(
            [make_pose("b", x=300.0), make_pose("a", x=10.0)],
            truth=SceneTruth(membership=("O", "G"), formation="triangle", angle_deg=30),
        )
        ordered = order_left_to_right(scene)
        assert ordered.truth.membership == ("G", "O")
        assert ordered.truth.formation == "triangle"
        assert ordered.truth.angle_deg == 30

    def test_empty_scene_rejected(self):
        with pytest.raises(ValueError):
            order_left_to_right(make_scene([]))

    def test_matches_brute_force_anchor_sort(self, rng):
        # Independent oracle: compute each pose's anchor by hand (mean of
        # confident x, else mean of all) and stable-sort.
        poses = []
        for i in range(5):
            overrides = {
                name: (float(rng.uniform(0, 640)), 100.0, float(rng.uniform(0, 1)))
                for name in KEYPOINT_NAMES
            }
            poses.append(make_pose(f"p{i}", overrides=overrides))
        scene = make_scene(poses)

        expected = []
        for pose in poses:
            xs = np.array([k.x for k in pose.keypoints])
            conf = np.array([k.confidence for k in pose.keypoints])
            sel = xs[conf >= 0.5]
            expected.append(sel.mean() if len(sel) else xs.mean())
        want = [poses[i].person_id for i in np.argsort(expected, kind="stable")]

        ordered = order_left_to_right(scene)
        assert [p.person_id for p in ordered.poses] == want

    def test_idempotent(self, rng):
        poses = [
            make_pose(f"p{i}", x=float(rng.uniform(0, 640)), confidence=0.8)
            for i in range(4)
        ]
        scene = make_scene(poses)
        once = order_left_to_right(scene)
        twice = order_left_to_right(once)
        assert [p.person_id for p in once.poses] == [p.person_id for p in twice.poses]

    def test_anchor_falls_back_to_all_keypoints(self):
        pose = make_pose("low", x=250.0, confidence=0.1)
        assert anchor_x(pose) == pytest.approx(250.0)

    def test_permutation_helper_matches(self):
        scene = make_scene([make_pose("b", x=300.0), make_pose("a", x=10.0)])
        assert left_to_right_permutation(scene) == [1, 0]


class TestSceneJsonl:
    def test_empty_stream(self):
        assert parse_scenes(io.StringIO("")) == []

    def test_single_valid_line(self, two_person_scene):
        buf = io.StringIO()
        write_scenes([two_person_scene], buf)
        scenes = parse_scenes(io.StringIO(buf.getvalue()))
        assert len(scenes) == 1
        assert len(scenes[0].poses[0].keypoints) == 17

    def test_round_trip_bit_exact(self, rng):
        scenes = []
        for i in range(5):
            poses = [
                make_pose(
                    f"p{j}",
                    overrides={
                        n: (
                            float(rng.uniform(-10, 650)),
                            float(rng.uniform(-10, 490)),
                            float(rng.uniform(0, 1)),
                        )
                        for n in KEYPOINT_NAMES
                    },
                )
                for j in range(rng.integers(1, 4))
            ]
            truth = SceneTruth(
                membership=tuple(
                    "G" if rng.integers(0, 2) else "O" for _ in poses
                ),
                formation="L-shaped" if i % 2 else None,
                angle_deg=60 if i % 2 else None,
            )
            scenes.append(make_scene(poses, frame_id=f"fr{i}", truth=truth))
        buf = io.StringIO()
        write_scenes(scenes, buf)
        parsed = parse_scenes(io.StringIO(buf.getvalue()))
        assert parsed == scenes
        # serialize again: byte-identical
        buf2 = io.StringIO()
        write_scenes(parsed, buf2)
        assert buf.getvalue() == buf2.getvalue()

    def test_bytes_stream_accepted(self, two_person_scene):
        buf = io.StringIO()
        write_scenes([two_person_scene], buf)
        parsed = parse_scenes(io.BytesIO(buf.getvalue().encode("utf-8")))
        assert parsed == [two_person_scene]

    def test_malformed_line_carries_lineno(self, two_person_scene):
        buf = io.StringIO()
        write_scenes([two_person_scene], buf)
        text = buf.getvalue() + "{not json\n"
        with pytest.raises(DataError, match="line 2") as exc:
            parse_scenes(io.StringIO(text))
        assert exc.value.lineno == 2

    def test_missing_keypoint_is_validation_error(self, two_person_scene):
        doc = scene_to_dict(two_person_scene)
        del doc["poses"][0]["keypoints"][0]
        with pytest.raises(DataError, match="line 1"):
            parse_scenes(io.StringIO(json.dumps(doc) + "\n"))

    def test_unknown_fields_ignored(self, two_person_scene):
        doc = scene_to_dict(two_person_scene)
        doc["extra"] = {"anything": 1}
        doc["poses"][0]["bbox"] = [1, 2, 3, 4]
        [scene] = parse_scenes(io.StringIO(json.dumps(doc) + "\n"))
        assert scene == two_person_scene

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_round_trip_property(self, seed):
        r = np.random.default_rng(seed)
        poses = [
            make_pose(
                "p0",
                x=float(np.round(r.uniform(0, 640), 6)),
                y=float(np.round(r.uniform(0, 480), 6)),
                confidence=float(np.round(r.uniform(0, 1), 6)),
            )
        ]
        scene = make_scene(poses)
        buf = io.StringIO()
        write_scenes([scene], buf)
        assert parse_scenes(io.StringIO(buf.getvalue())) == [scene]


class TestEgoGroupAdapter:
    def _doc(self):
        return {
            "frames": [
                {
                    "frame": "000010",
                    "width": 1280,
                    "height": 720,
                    "people": [
                        {"id": "a", "keypoints": {"nose": [10, 20, 0.9]}},
                        {"id": "b", "keypoints": {"nose": [500, 20, 0.8]}},
                        {"id": "c", "keypoints": {}},
                    ],
                    "groups": [["a", "b"]],
                }
            ]
        }

    def test_membership_from_groups(self):
        [scene] = convert_ego_group(self._doc())
        assert scene.truth.membership == ("G", "G", "O")
        assert scene.frame_id == "000010"
        assert scene.image_width == 1280

    def test_missing_keypoints_become_zero_confidence(self):
        [scene] = convert_ego_group(self._doc())
        pose_a = scene.poses[0]
        assert pose_a.kp("nose").confidence == 0.9
        assert pose_a.kp("leftAnkle") == Keypoint("leftAnkle", 0.0, 0.0, 0.0)

    def test_formation_unknown(self):
        [scene] = convert_ego_group(self._doc())
        assert scene.truth.formation is None
        assert scene.truth.angle_deg is None

    def test_malformed_frame(self):
        with pytest.raises(DataError, match="frame 0"):
            convert_ego_group({"frames": [{"frame": "x"}]})

    def test_round_trips_through_jsonl(self):
        scenes = convert_ego_group(self._doc())
        buf = io.StringIO()
        write_scenes(scenes, buf)
        assert parse_scenes(io.StringIO(buf.getvalue())) == scenes
