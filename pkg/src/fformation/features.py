"""Feature extraction: per-node chain observations and fixed-length group vectors.

Two consumers, two layouts:

* node features (dimension 26) describe one pose in its left-to-right chain
  context and feed the group/outlier chain model;
* group feature vectors (dimension 309 = 3 slots x 17 keypoints x 6 + 3
  presence flags) describe up to three people and feed the formation and
  angle classifiers. The angle classifier additionally receives the
  formation as a one-hot suffix (dimension 313).
"""
from __future__ import annotations

import numpy as np

from .errors import CapacityError
from .pose import (
    FORMATIONS,
    KEYPOINT_NAMES,
    NUM_KEYPOINTS,
    ConfidenceBin,
    PersonPose,
    Scene,
    anchor_x,
    bin_confidence,
)

FEATURE_CATALOG_VERSION = "node26-group309-v1"

# Shoulder-span denominator floor: avoids division by zero when both
# shoulders project to the same pixel column under extreme occlusion.
SHOULDER_EPS = 1e-6

# Value used for the neighbor-gap features when there is no neighbor.
# Real gaps are normalized by image width so they stay well below this.
NO_NEIGHBOR_GAP = 2.0

_STAT_NAMES = (
    "shoulder_width_ratio",
    "facing_score",
    "back_facing",
    "mean_confidence",
    "bin_frac_low",
    "bin_frac_medium",
    "bin_frac_high",
    "bin_frac_very_high",
)
STATS_PER_POSE = len(_STAT_NAMES)

NODE_FEATURE_NAMES = (
    ("gap_left", "gap_right")
    + _STAT_NAMES
    + tuple("left_" + n for n in _STAT_NAMES)
    + tuple("right_" + n for n in _STAT_NAMES)
)
F_NODE = len(NODE_FEATURE_NAMES)

GROUP_SLOTS = 3
ENTRIES_PER_KEYPOINT = 6  # x_norm, y_norm, 4-way confidence-bin one-hot
SLOT_WIDTH = NUM_KEYPOINTS * ENTRIES_PER_KEYPOINT
F_GROUP = GROUP_SLOTS * SLOT_WIDTH + GROUP_SLOTS
F_ANGLE = F_GROUP + len(FORMATIONS)


def pose_stats(pose: PersonPose, image_width: int) -> np.ndarray:
    """The 8 per-pose statistics shared by a node and its neighbor blocks."""
    ls = pose.kp("leftShoulder")
    rs = pose.kp("rightShoulder")
    nose = pose.kp("nose")
    span = abs(ls.x - rs.x)
    facing = (nose.x - 0.5 * (ls.x + rs.x)) / max(span, SHOULDER_EPS)

    le, re = pose.kp("leftEye"), pose.kp("rightEye")
    lear, rear = pose.kp("leftEar"), pose.kp("rightEar")
    back = float(
        le.confidence < 0.25
        and re.confidence < 0.25
        and lear.confidence >= 0.25
        and rear.confidence >= 0.25
    )

    conf = pose.confidences()
    bins = np.zeros(4)
    for c in conf:
        bins[bin_confidence(float(c))] += 1.0
    bins /= NUM_KEYPOINTS

    out = np.empty(STATS_PER_POSE)
    out[0] = span / image_width
    out[1] = facing
    out[2] = back
    out[3] = conf.mean()
    out[4:8] = bins
    return out


def node_features(scene: Scene, i: int) -> np.ndarray:
    """Observation features for pose i of a left-to-right ordered scene.

    Depends only on poses i-1, i, i+1. Missing neighbors contribute the gap
    sentinel and a zero statistics block.
    """
    n = len(scene.poses)
    if not 0 <= i < n:
        raise ValueError(f"pose index {i} out of range for {n} poses")
    width = scene.image_width
    out = np.zeros(F_NODE)

    a_i = anchor_x(scene.poses[i])
    out[0] = (a_i - anchor_x(scene.poses[i - 1])) / width if i > 0 else NO_NEIGHBOR_GAP
    out[1] = (
        (anchor_x(scene.poses[i + 1]) - a_i) / width if i < n - 1 else NO_NEIGHBOR_GAP
    )
    out[2 : 2 + STATS_PER_POSE] = pose_stats(scene.poses[i], width)
    if i > 0:
        out[10:18] = pose_stats(scene.poses[i - 1], width)
    if i < n - 1:
        out[18:26] = pose_stats(scene.poses[i + 1], width)
    return out


def chain_features(scene: Scene) -> np.ndarray:
    """Stack node_features for every pose; shape (n, F_NODE)."""
    return np.stack([node_features(scene, i) for i in range(len(scene.poses))])


def group_features(
    poses: list[PersonPose] | tuple[PersonPose, ...],
    image_width: int,
    image_height: int,
) -> np.ndarray:
    """Fixed 309-entry vector for a group of 1-3 left-to-right ordered poses.

    Coordinates are centered and scaled by the image half-extent and clamped
    to [-1, 1] (projections may land slightly off-frame). Empty slots stay
    zero with presence flag 0.
    """
    if len(poses) == 0:
        raise ValueError("group must contain at least one pose")
    if len(poses) > GROUP_SLOTS:
        raise CapacityError(
            f"group of {len(poses)} exceeds the {GROUP_SLOTS}-slot feature layout"
        )
    half_w = image_width / 2.0
    half_h = image_height / 2.0
    out = np.zeros(F_GROUP)
    for s, pose in enumerate(poses):
        base = s * SLOT_WIDTH
        for k, kp in enumerate(pose.keypoints):
            off = base + k * ENTRIES_PER_KEYPOINT
            out[off] = min(1.0, max(-1.0, (kp.x - half_w) / half_w))
            out[off + 1] = min(1.0, max(-1.0, (kp.y - half_h) / half_h))
            out[off + 2 + bin_confidence(kp.confidence)] = 1.0
        out[GROUP_SLOTS * SLOT_WIDTH + s] = 1.0
    return out


def formation_one_hot(formation: str) -> np.ndarray:
    out = np.zeros(len(FORMATIONS))
    out[FORMATIONS.index(formation)] = 1.0
    return out


def angle_features(gfv: np.ndarray, formation: str) -> np.ndarray:
    """Group vector plus the (predicted or gold) formation as a one-hot suffix."""
    if len(gfv) != F_GROUP:
        raise ValueError(f"expected a {F_GROUP}-entry group vector, got {len(gfv)}")
    if formation not in FORMATIONS:
        raise ValueError(f"unknown formation {formation!r}")
    return np.concatenate([gfv, formation_one_hot(formation)])
