"""Skeleton and scene domain types, confidence binning, pose ordering, JSONL I/O.

A scene is one image frame's worth of detected people. Every person carries
exactly 17 named keypoints; keypoints a detector could not see are stored as
confidence 0 at (0, 0) rather than omitted, so every pose has a fixed shape.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import IO, Iterable

import numpy as np

from .errors import DataError

KEYPOINT_NAMES = (
    "nose",
    "leftEye",
    "rightEye",
    "leftEar",
    "rightEar",
    "leftShoulder",
    "rightShoulder",
    "leftElbow",
    "rightElbow",
    "leftWrist",
    "rightWrist",
    "leftHip",
    "rightHip",
    "leftKnee",
    "rightKnee",
    "leftAnkle",
    "rightAnkle",
)
KEYPOINT_INDEX = {name: i for i, name in enumerate(KEYPOINT_NAMES)}
NUM_KEYPOINTS = len(KEYPOINT_NAMES)

GROUP = "G"
OUTLIER = "O"
GROUP_LABELS = (GROUP, OUTLIER)

FORMATIONS = ("face-to-face", "side-by-side", "L-shaped", "triangle")
APPROACH_ANGLES = (-90, -60, -30, 0, 30, 60, 90)

# Anchor x uses only keypoints at or above this confidence, falling back to
# all 17 when none qualify.
ANCHOR_CONFIDENCE = 0.5


class ConfidenceBin(IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2
    VERY_HIGH = 3


def bin_confidence(c: float) -> ConfidenceBin:
    """Quantize a confidence into four bins.

    Bins are lower-inclusive, upper-exclusive, with the last bin closed:
    [0, 0.25) [0.25, 0.5) [0.5, 0.75) [0.75, 1.0].
    """
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"confidence {c!r} outside [0, 1]")
    if c < 0.25:
        return ConfidenceBin.LOW
    if c < 0.5:
        return ConfidenceBin.MEDIUM
    if c < 0.75:
        return ConfidenceBin.HIGH
    return ConfidenceBin.VERY_HIGH


@dataclass(frozen=True)
class Keypoint:
    name: str
    x: float
    y: float
    confidence: float

    def __post_init__(self):
        if self.name not in KEYPOINT_INDEX:
            raise ValueError(f"unknown keypoint name {self.name!r}")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinates for {self.name}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(
                f"confidence {self.confidence!r} for {self.name} outside [0, 1]"
            )


@dataclass(frozen=True)
class PersonPose:
    """One person's 17 keypoints, stored in canonical KEYPOINT_NAMES order."""

    person_id: str
    keypoints: tuple[Keypoint, ...]

    def __post_init__(self):
        names = [k.name for k in self.keypoints]
        if sorted(names) != sorted(KEYPOINT_NAMES):
            missing = set(KEYPOINT_NAMES) - set(names)
            extra = [n for n in names if names.count(n) > 1]
            raise ValueError(
                f"pose {self.person_id!r} must contain each keypoint exactly once"
                f" (missing={sorted(missing)}, duplicated={sorted(set(extra))})"
            )
        if names != list(KEYPOINT_NAMES):
            ordered = tuple(sorted(self.keypoints, key=lambda k: KEYPOINT_INDEX[k.name]))
            object.__setattr__(self, "keypoints", ordered)

    def kp(self, name: str) -> Keypoint:
        return self.keypoints[KEYPOINT_INDEX[name]]

    def xs(self) -> np.ndarray:
        return np.array([k.x for k in self.keypoints])

    def ys(self) -> np.ndarray:
        return np.array([k.y for k in self.keypoints])

    def confidences(self) -> np.ndarray:
        return np.array([k.confidence for k in self.keypoints])


def anchor_x(pose: PersonPose) -> float:
    """Horizontal anchor of a pose: mean x of confident keypoints.

    Falls back to the mean over all 17 when no keypoint reaches the
    confidence threshold (fully occluded people still need an order).
    """
    xs = pose.xs()
    conf = pose.confidences()
    mask = conf >= ANCHOR_CONFIDENCE
    if mask.any():
        return float(xs[mask].mean())
    return float(xs.mean())


@dataclass(frozen=True)
class SceneTruth:
    membership: tuple[str, ...] | None = None
    formation: str | None = None
    angle_deg: int | None = None

    def __post_init__(self):
        if self.membership is not None:
            bad = [m for m in self.membership if m not in GROUP_LABELS]
            if bad:
                raise ValueError(f"membership labels must be G or O, got {bad}")
        if self.formation is not None and self.formation not in FORMATIONS:
            raise ValueError(f"unknown formation {self.formation!r}")
        if self.angle_deg is not None and self.angle_deg not in APPROACH_ANGLES:
            raise ValueError(f"unknown approach angle {self.angle_deg!r}")


@dataclass(frozen=True)
class Scene:
    frame_id: str
    image_width: int
    image_height: int
    poses: tuple[PersonPose, ...]
    truth: SceneTruth | None = None

    def __post_init__(self):
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        if (
            self.truth is not None
            and self.truth.membership is not None
            and len(self.truth.membership) != len(self.poses)
        ):
            raise ValueError(
                f"scene {self.frame_id!r}: {len(self.truth.membership)} membership"
                f" labels for {len(self.poses)} poses"
            )


def left_to_right_permutation(scene: Scene) -> list[int]:
    """Stable ordering of pose indices by ascending anchor x."""
    anchors = [anchor_x(p) for p in scene.poses]
    return list(np.argsort(anchors, kind="stable"))


def order_left_to_right(scene: Scene) -> Scene:
    """Return the scene with poses sorted left to right (stable).

    Truth membership labels are permuted along with the poses.
    """
    if not scene.poses:
        raise ValueError("cannot order an empty scene")
    perm = left_to_right_permutation(scene)
    if perm == list(range(len(scene.poses))):
        return scene
    poses = tuple(scene.poses[i] for i in perm)
    truth = scene.truth
    if truth is not None and truth.membership is not None:
        truth = SceneTruth(
            membership=tuple(truth.membership[i] for i in perm),
            formation=truth.formation,
            angle_deg=truth.angle_deg,
        )
    return Scene(scene.frame_id, scene.image_width, scene.image_height, poses, truth)


# ---------------------------------------------------------------------------
# Scene JSONL: one scene object per line, UTF-8, LF-terminated.


def scene_to_dict(scene: Scene) -> dict:
    doc = {
        "frame_id": scene.frame_id,
        "image_width": scene.image_width,
        "image_height": scene.image_height,
        "poses": [
            {
                "person_id": p.person_id,
                "keypoints": [
                    {"name": k.name, "x": k.x, "y": k.y, "confidence": k.confidence}
                    for k in p.keypoints
                ],
            }
            for p in scene.poses
        ],
        "truth": None,
    }
    if scene.truth is not None:
        doc["truth"] = {
            "membership": list(scene.truth.membership)
            if scene.truth.membership is not None
            else None,
            "formation": scene.truth.formation,
            "angle_deg": scene.truth.angle_deg,
        }
    return doc


def scene_from_dict(doc: dict) -> Scene:
    try:
        poses = tuple(
            PersonPose(
                person_id=str(p["person_id"]),
                keypoints=tuple(
                    Keypoint(
                        name=k["name"],
                        x=float(k["x"]),
                        y=float(k["y"]),
                        confidence=float(k["confidence"]),
                    )
                    for k in p["keypoints"]
                ),
            )
            for p in doc["poses"]
        )
        truth = None
        t = doc.get("truth")
        if t is not None:
            membership = t.get("membership")
            truth = SceneTruth(
                membership=tuple(membership) if membership is not None else None,
                formation=t.get("formation"),
                angle_deg=t.get("angle_deg"),
            )
        return Scene(
            frame_id=str(doc["frame_id"]),
            image_width=int(doc["image_width"]),
            image_height=int(doc["image_height"]),
            poses=poses,
            truth=truth,
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"scene object missing or malformed field: {exc}") from exc


def parse_scenes(stream: IO) -> list[Scene]:
    """Parse Scene JSONL from a text or byte stream.

    Unknown fields are ignored. Errors carry the 1-based line number.
    """
    scenes = []
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: invalid JSON: {exc}", lineno=lineno) from exc
        try:
            scenes.append(scene_from_dict(doc))
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}", lineno=lineno) from exc
    return scenes


def write_scenes(scenes: Iterable[Scene], stream: IO) -> None:
    for scene in scenes:
        stream.write(json.dumps(scene_to_dict(scene)) + "\n")


def load_scenes(path) -> list[Scene]:
    with open(path, "r", encoding="utf-8") as fp:
        return parse_scenes(fp)


def save_scenes(scenes: Iterable[Scene], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        write_scenes(scenes, fp)


# ---------------------------------------------------------------------------
# EGO-GROUP-style annotation adapter.
#
# Annotation schema (documented in README.md; the dataset itself is not
# bundled): a JSON document
#   {"frames": [{"frame": str, "width": int, "height": int,
#                "people": [{"id": str, "keypoints": {name: [x, y, conf]}}],
#                "groups": [[person_id, ...], ...]}]}
# Keypoint names absent from a person's map become confidence-0 points at
# (0, 0). People listed in any group get label G, everyone else O.


def convert_ego_group(doc: dict) -> list[Scene]:
    scenes = []
    try:
        frames = doc["frames"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"annotation document has no 'frames' list: {exc}") from exc
    for fidx, frame in enumerate(frames):
        try:
            grouped = {pid for group in frame.get("groups", []) for pid in group}
            poses = []
            membership = []
            for person in frame["people"]:
                pid = str(person["id"])
                kps = person.get("keypoints", {})
                keypoints = []
                for name in KEYPOINT_NAMES:
                    if name in kps:
                        x, y, c = kps[name]
                        keypoints.append(Keypoint(name, float(x), float(y), float(c)))
                    else:
                        keypoints.append(Keypoint(name, 0.0, 0.0, 0.0))
                poses.append(PersonPose(pid, tuple(keypoints)))
                membership.append(GROUP if pid in grouped else OUTLIER)
            scenes.append(
                Scene(
                    frame_id=str(frame["frame"]),
                    image_width=int(frame["width"]),
                    image_height=int(frame["height"]),
                    poses=tuple(poses),
                    truth=SceneTruth(membership=tuple(membership)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"frame {fidx}: {exc}") from exc
    return scenes


def convert_ego_group_file(in_path, out_path) -> int:
    with open(in_path, "r", encoding="utf-8") as fp:
        try:
            doc = json.load(fp)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid annotation JSON: {exc}") from exc
    scenes = convert_ego_group(doc)
    save_scenes(scenes, out_path)
    return len(scenes)
