"""Synthetic labeled scenes: formation templates, stick bodies, pinhole camera.

World frame: meters, z up, o-space center at the origin. The camera sits on a
circle of radius = distance around the origin at azimuth = approach angle
(degrees, counterclockwise from +x) and looks at the o-space center. Members
stand in one of four formation templates and face per template; outliers
stand in r-space (beyond 1.5x the p-space radius) with random headings.

Per-keypoint confidence = base(depth) * visibility, where visibility drops to
0.15 when the keypoint's line of sight crosses another person's bounding
cylinder, when it projects off-frame, or (eyes only) when the person faces
away from the camera. Keypoints behind the camera become confidence-0 points
at (0, 0). Everything is driven by per-scene seeded generators, with members
and outliers on separate substreams so the same seed renders identical
members with or without outliers.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import PlacementError
from .pose import (
    APPROACH_ANGLES,
    FORMATIONS,
    GROUP,
    KEYPOINT_NAMES,
    OUTLIER,
    Keypoint,
    PersonPose,
    Scene,
    SceneTruth,
    anchor_x,
)

FORMATION_MEMBER_COUNT = {
    "face-to-face": 2,
    "side-by-side": 2,
    "L-shaped": 2,
    "triangle": 3,
}

# Default member spacing per formation, meters. Side-by-side partners stand
# close; conversational formations leave arm's-plus room.
DEFAULT_FORMATION_SCALE = {
    "face-to-face": 1.0,
    "side-by-side": 0.55,
    "L-shaped": 1.0,
    "triangle": 1.1,
}

BODY_HEIGHT = 1.7
SHOULDER_WIDTH = 0.40
HIP_WIDTH = 0.30
BODY_RADIUS = 0.25
CAMERA_HEIGHT = 1.2
LOOK_AT_HEIGHT = 1.0
OCCLUDED_VISIBILITY = 0.15

# Distinct subjects, assigned by member slot (outliers take the last one).
# Identical bodies would make symmetric camera placements of the symmetric
# templates exactly aliased (triangle is invariant under 120-degree turns,
# face-to-face under 180), collapsing several approach-angle classes; real
# capture protocols film the same few distinguishable people at every angle.
BODY_PROFILES = (
    {"height": 1.62, "shoulder": 0.36, "hip": 0.27},
    {"height": 1.80, "shoulder": 0.44, "hip": 0.33},
    {"height": 1.70, "shoulder": 0.40, "hip": 0.30},
    {"height": 1.74, "shoulder": 0.42, "hip": 0.31},
)
OUTLIER_PROFILE = 3
MIN_CAMERA_CLEARANCE = BODY_RADIUS + 0.05
OUTLIER_RADIUS_FACTOR = 1.5
# Outlier ground placement relative to the group, camera frame: lateral
# offset beyond the members' span, and depth offset past the o-space center
# (never between the camera and the group, which would occlude everyone).
# The lateral minimum exceeds every formation's member spacing, so bystander
# gaps are larger than any within-group gap in world terms.
OUTLIER_LATERAL_RANGE = (1.2, 1.8)
OUTLIER_DEPTH_RANGE = (0.0, 1.5)

# Outward azimuth of each face landmark relative to the person's heading,
# radians: the head hides landmarks facing away from the camera, so profile
# views lose the far-side eye and ear and back views lose both eyes.
FACE_OUTWARD_AZIMUTH = {
    "nose": 0.0,
    "leftEye": math.radians(20.0),
    "rightEye": math.radians(-20.0),
    "leftEar": math.radians(90.0),
    "rightEar": math.radians(-90.0),
}
FACE_VISIBILITY_SLACK = -0.1  # dot(outward, to_camera) below this hides it

# (z height, forward offset, offset toward the person's left) for the
# reference 1.70 m body, meters, plus the scaling family: heights and
# forward offsets scale with body height, arm lateral offsets with shoulder
# width, leg lateral offsets with hip width. Face points protrude forward so
# that projected eye/nose placement encodes the facing direction; ears sit
# on the side of the head.
_BODY_OFFSETS = {
    "nose": (1.575, 0.10, 0.0, "head"),
    "leftEye": (1.60, 0.08, 0.033, "head"),
    "rightEye": (1.60, 0.08, -0.033, "head"),
    "leftEar": (1.58, 0.0, 0.072, "head"),
    "rightEar": (1.58, 0.0, -0.072, "head"),
    "leftShoulder": (1.39, 0.0, SHOULDER_WIDTH / 2, "arm"),
    "rightShoulder": (1.39, 0.0, -SHOULDER_WIDTH / 2, "arm"),
    "leftElbow": (1.08, 0.02, 0.22, "arm"),
    "rightElbow": (1.08, 0.02, -0.22, "arm"),
    "leftWrist": (0.82, 0.04, 0.23, "arm"),
    "rightWrist": (0.82, 0.04, -0.23, "arm"),
    "leftHip": (0.88, 0.0, HIP_WIDTH / 2, "leg"),
    "rightHip": (0.88, 0.0, -HIP_WIDTH / 2, "leg"),
    "leftKnee": (0.47, 0.02, 0.16, "leg"),
    "rightKnee": (0.47, 0.02, -0.16, "leg"),
    "leftAnkle": (0.07, 0.03, 0.17, "leg"),
    "rightAnkle": (0.07, 0.03, -0.17, "leg"),
}


@dataclass(frozen=True)
class FormationTemplate:
    """Ground-plane member positions (m) and headings (rad), o-space at origin."""

    formation: str
    positions: tuple[tuple[float, float], ...]
    headings: tuple[float, ...]
    o_space_radius: float


def make_template(formation: str, scale: float) -> FormationTemplate:
    """Canonical geometry for one formation at the given member spacing."""
    if formation not in FORMATIONS:
        raise ValueError(f"unknown formation {formation!r}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    h = scale / 2.0
    if formation == "face-to-face":
        positions = ((-h, 0.0), (h, 0.0))
        headings = (0.0, math.pi)
    elif formation == "side-by-side":
        positions = ((-h, 0.0), (h, 0.0))
        headings = (math.pi / 2, math.pi / 2)
    elif formation == "L-shaped":
        positions = ((h, 0.0), (0.0, h))
        headings = (math.pi, -math.pi / 2)
    else:  # triangle: equilateral vertices facing the center
        angles = (math.pi / 2, math.pi / 2 + 2 * math.pi / 3, math.pi / 2 + 4 * math.pi / 3)
        positions = tuple((h * math.cos(a), h * math.sin(a)) for a in angles)
        headings = tuple((a + math.pi) % (2 * math.pi) for a in angles)
    return FormationTemplate(formation, positions, headings, o_space_radius=h)


@dataclass(frozen=True)
class SynthConfig:
    formation: str
    angle_deg: int
    distance_m: float | tuple[float, float] = (2.0, 5.0)
    image_width: int = 640
    image_height: int = 480
    noise_px: float = 1.5
    outlier_count: int = 0
    seed: int = 0
    formation_scale: float | None = None
    angle_jitter_deg: float = 4.0
    scale_jitter: float = 0.05

    def __post_init__(self):
        if self.formation not in FORMATIONS:
            raise ValueError(f"unknown formation {self.formation!r}")
        if self.angle_deg not in APPROACH_ANGLES:
            raise ValueError(f"unknown approach angle {self.angle_deg!r}")
        if self.noise_px < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.outlier_count < 0:
            raise ValueError("outlier count must be >= 0")


def synth_config_to_dict(cfg: SynthConfig) -> dict:
    doc = asdict(cfg)
    if isinstance(cfg.distance_m, tuple):
        doc["distance_m"] = list(cfg.distance_m)
    return doc


def synth_config_from_dict(doc: dict) -> SynthConfig:
    """Build a SynthConfig from its JSON mirror; unknown keys are rejected."""
    known = {f.name for f in fields(SynthConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown SynthConfig fields: {sorted(unknown)}")
    doc = dict(doc)
    d = doc.get("distance_m")
    if isinstance(d, list):
        doc["distance_m"] = tuple(d)
    return SynthConfig(**doc)


@dataclass(frozen=True)
class Camera:
    position: np.ndarray  # (3,)
    forward: np.ndarray
    right: np.ndarray
    up: np.ndarray
    focal_px: float
    cx: float
    cy: float


def focal_length_px(image_height: int) -> float:
    # A full body at 3.5 m spans ~55% of the frame height, which keeps all
    # formations in frame across the 2-5 m range.
    return 0.55 * image_height * 3.5 / BODY_HEIGHT


def make_camera(azimuth_deg: float, distance: float, image_width: int, image_height: int) -> Camera:
    az = math.radians(azimuth_deg)
    position = np.array(
        [distance * math.cos(az), distance * math.sin(az), CAMERA_HEIGHT]
    )
    target = np.array([0.0, 0.0, LOOK_AT_HEIGHT])
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    right = right / np.linalg.norm(right)
    up = np.cross(right, forward)
    return Camera(
        position=position,
        forward=forward,
        right=right,
        up=up,
        focal_px=focal_length_px(image_height),
        cx=image_width / 2.0,
        cy=image_height / 2.0,
    )


def project_points(camera: Camera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection: pixel coordinates (m, 2) and camera depths (m,)."""
    rel = np.atleast_2d(points) - camera.position
    depth = rel @ camera.forward
    x_cam = rel @ camera.right
    y_cam = rel @ camera.up
    safe = np.where(np.abs(depth) < 1e-9, 1e-9, depth)
    px = camera.cx + camera.focal_px * x_cam / safe
    py = camera.cy - camera.focal_px * y_cam / safe
    return np.column_stack([px, py]), depth


@dataclass(frozen=True)
class Body:
    ground: tuple[float, float]
    heading: float
    label: str  # G or O
    person_id: str
    profile: int = 2  # index into BODY_PROFILES; 2 is the 1.70 m reference


def body_keypoints_3d(body: Body) -> np.ndarray:
    """(17, 3) world-frame joint positions for a stick body."""
    gx, gy = body.ground
    ch, sh = math.cos(body.heading), math.sin(body.heading)
    prof = BODY_PROFILES[body.profile]
    height_scale = prof["height"] / BODY_HEIGHT
    lat_scale = {
        "head": height_scale,
        "arm": prof["shoulder"] / SHOULDER_WIDTH,
        "leg": prof["hip"] / HIP_WIDTH,
    }
    pts = np.empty((len(KEYPOINT_NAMES), 3))
    for k, name in enumerate(KEYPOINT_NAMES):
        z, fwd, left, family = _BODY_OFFSETS[name]
        fwd = fwd * height_scale
        left = left * lat_scale[family]
        pts[k, 0] = gx + fwd * ch - left * sh
        pts[k, 1] = gy + fwd * sh + left * ch
        pts[k, 2] = z * height_scale
    return pts


def depth_base_confidence(depth_m: np.ndarray) -> np.ndarray:
    return np.clip(1.2 - 0.1 * depth_m, 0.05, 0.98)


def _ray_blocked(camera_xy, point, occluder_xy, occluder_height) -> bool:
    """Does the camera->point segment cross the occluder's bounding cylinder?"""
    p0 = np.array([camera_xy[0], camera_xy[1]])
    d = np.array([point[0] - p0[0], point[1] - p0[1]])
    c = np.array(occluder_xy) - p0
    dd = float(d @ d)
    if dd < 1e-12:
        return False
    t = float(np.clip((c @ d) / dd, 0.0, 1.0))
    closest = p0 + t * d
    if float(np.hypot(*(closest - occluder_xy))) > BODY_RADIUS:
        return False
    # z of the segment where it passes the cylinder axis must be within the
    # body's height range; the segment starts at camera height.
    z_at_t = CAMERA_HEIGHT + t * (point[2] - CAMERA_HEIGHT)
    return 0.0 <= z_at_t <= occluder_height


@dataclass(frozen=True)
class SceneLayout:
    """Generation metadata kept alongside a rendered scene (not serialized)."""

    bodies: tuple[Body, ...]  # in rendered pose order
    camera: Camera
    template: FormationTemplate
    distance_m: float
    azimuth_deg: float
    p_space_radius: float


def render_bodies(
    bodies: list[Body],
    camera: Camera,
    image_width: int,
    image_height: int,
    noise: np.ndarray | None = None,
) -> list[PersonPose]:
    """Project bodies to poses with occlusion/heading/frame-gated confidences.

    noise, if given, is a (n_bodies, 17, 2) array of pixel offsets added to
    the projected coordinates.
    """
    cam_xy = camera.position[:2]
    all_pts = [body_keypoints_3d(b) for b in bodies]
    poses = []
    for bi, body in enumerate(bodies):
        pts = all_pts[bi]
        pix, depth = project_points(camera, pts)
        if noise is not None:
            pix = pix + noise[bi]
        base = depth_base_confidence(depth)
        visibility = np.ones(len(KEYPOINT_NAMES))

        for k in range(len(KEYPOINT_NAMES)):
            for oi, other in enumerate(bodies):
                if oi == bi:
                    continue
                other_height = BODY_PROFILES[other.profile]["height"]
                if _ray_blocked(cam_xy, pts[k], other.ground, other_height):
                    visibility[k] = OCCLUDED_VISIBILITY
                    break

        to_cam = cam_xy - np.array(body.ground)
        norm = np.linalg.norm(to_cam)
        if norm > 1e-9:
            to_cam = to_cam / norm
            for name, az in FACE_OUTWARD_AZIMUTH.items():
                outward = np.array(
                    [math.cos(body.heading + az), math.sin(body.heading + az)]
                )
                if float(outward @ to_cam) < FACE_VISIBILITY_SLACK:
                    k = KEYPOINT_NAMES.index(name)
                    visibility[k] = min(visibility[k], OCCLUDED_VISIBILITY)

        off_frame = (
            (pix[:, 0] < 0)
            | (pix[:, 0] > image_width)
            | (pix[:, 1] < 0)
            | (pix[:, 1] > image_height)
        )
        visibility[off_frame] = np.minimum(visibility[off_frame], OCCLUDED_VISIBILITY)

        conf = base * visibility
        behind = depth <= 0.05
        keypoints = []
        for k, name in enumerate(KEYPOINT_NAMES):
            if behind[k]:
                keypoints.append(Keypoint(name, 0.0, 0.0, 0.0))
            else:
                keypoints.append(
                    Keypoint(name, float(pix[k, 0]), float(pix[k, 1]), float(conf[k]))
                )
        poses.append(PersonPose(body.person_id, tuple(keypoints)))
    return poses


def _place_outlier(
    rng: np.random.Generator,
    members: list[Body],
    p_radius: float,
    camera: Camera,
    image_width: int,
    image_height: int,
) -> tuple[tuple[float, float], float]:
    """Sample an r-space ground position visible to the camera, plus a heading.

    Outliers stand beside the group (offset along the camera's lateral axis,
    clear of the members' footprint) at a similar or greater depth, never
    between the camera and the group. Bystanders in front of the camera would
    occlude the whole group and leave no one to classify.
    """
    inner = OUTLIER_RADIUS_FACTOR * p_radius
    heading = float(rng.uniform(0.0, 2 * math.pi))
    lat_dir = camera.right[:2]
    lat_dir = lat_dir / np.linalg.norm(lat_dir)
    fwd_dir = camera.forward[:2]
    fwd_dir = fwd_dir / np.linalg.norm(fwd_dir)
    member_lat = [float(np.array(b.ground) @ lat_dir) for b in members]
    lat_lo, lat_hi = min(member_lat), max(member_lat)
    for _ in range(50):
        side = 1.0 if rng.integers(0, 2) else -1.0
        lateral = float(rng.uniform(*OUTLIER_LATERAL_RANGE))
        lat = lat_hi + lateral if side > 0 else lat_lo - lateral
        depth_off = float(rng.uniform(*OUTLIER_DEPTH_RANGE))
        ground_vec = lat * lat_dir + depth_off * fwd_dir
        ground = (float(ground_vec[0]), float(ground_vec[1]))
        if math.hypot(*ground) < inner:
            continue
        if np.hypot(*(ground_vec - camera.position[:2])) < 0.8:
            continue
        torso = np.array([ground[0], ground[1], 1.1])
        pix, depth = project_points(camera, torso[None, :])
        if depth[0] < 0.5:
            continue
        margin = 0.05 * image_width
        if not (margin <= pix[0, 0] <= image_width - margin):
            continue
        return ground, heading
    # Fallback: beside the group at a fixed offset, biased away from the
    # o-space center so the r-space rule holds by construction.
    lat = lat_hi + max(OUTLIER_LATERAL_RANGE[0], inner)
    ground_vec = lat * lat_dir
    return (float(ground_vec[0]), float(ground_vec[1])), heading


def render_scene_with_layout(cfg: SynthConfig) -> tuple[Scene, SceneLayout]:
    """Render one scene plus the 3-D layout it was generated from.

    Member-affecting draws come from substream [seed, 0] and outlier draws
    from [seed, 1], so a config differing only in outlier_count yields
    byte-identical member poses (visibility aside).
    """
    rng_members = np.random.default_rng([cfg.seed, 0])
    rng_outliers = np.random.default_rng([cfg.seed, 1])

    scale = cfg.formation_scale
    if scale is None:
        scale = DEFAULT_FORMATION_SCALE[cfg.formation]
    if cfg.scale_jitter > 0:
        scale *= 1.0 + float(rng_members.uniform(-cfg.scale_jitter, cfg.scale_jitter))
    template = make_template(cfg.formation, scale)

    if isinstance(cfg.distance_m, (tuple, list)):
        lo, hi = cfg.distance_m
        distance = float(rng_members.uniform(lo, hi))
    else:
        distance = float(cfg.distance_m)

    azimuth = float(cfg.angle_deg)
    if cfg.angle_jitter_deg > 0:
        azimuth += float(
            rng_members.uniform(-cfg.angle_jitter_deg, cfg.angle_jitter_deg)
        )

    members = [
        Body(ground=pos, heading=hd, label=GROUP, person_id=f"m{i}", profile=i % 3)
        for i, (pos, hd) in enumerate(zip(template.positions, template.headings))
    ]

    camera = make_camera(azimuth, distance, cfg.image_width, cfg.image_height)
    for attempt in range(10):
        clear = all(
            np.hypot(*(camera.position[:2] - np.array(b.ground))) > MIN_CAMERA_CLEARANCE
            for b in members
        )
        if clear:
            break
        azimuth += float(rng_members.uniform(-3.0, 3.0))
        camera = make_camera(azimuth, distance, cfg.image_width, cfg.image_height)
    else:
        raise PlacementError(
            f"camera at distance {distance:.2f} m could not clear the bodies"
        )

    member_noise = rng_members.normal(
        0.0, cfg.noise_px, size=(len(members), len(KEYPOINT_NAMES), 2)
    ) if cfg.noise_px > 0 else np.zeros((len(members), len(KEYPOINT_NAMES), 2))

    p_radius = max(math.hypot(*p) for p in template.positions) + BODY_RADIUS
    outliers = []
    for oi in range(cfg.outlier_count):
        ground, heading = _place_outlier(
            rng_outliers, members, p_radius, camera, cfg.image_width, cfg.image_height
        )
        outliers.append(
            Body(
                ground=ground,
                heading=heading,
                label=OUTLIER,
                person_id=f"o{oi}",
                profile=OUTLIER_PROFILE,
            )
        )
    outlier_noise = rng_outliers.normal(
        0.0, cfg.noise_px, size=(len(outliers), len(KEYPOINT_NAMES), 2)
    ) if cfg.noise_px > 0 else np.zeros((len(outliers), len(KEYPOINT_NAMES), 2))

    bodies = members + outliers
    noise = np.concatenate([member_noise, outlier_noise], axis=0) if bodies else None
    poses = render_bodies(bodies, camera, cfg.image_width, cfg.image_height, noise)

    # Emit in left-to-right order with truth aligned, mirroring the pose
    # ordering used downstream.
    order = np.argsort([anchor_x(p) for p in poses], kind="stable")
    poses = [poses[i] for i in order]
    bodies = [bodies[i] for i in order]
    membership = tuple(b.label for b in bodies)

    scene = Scene(
        frame_id=f"{cfg.formation}:{cfg.angle_deg}:{cfg.seed}",
        image_width=cfg.image_width,
        image_height=cfg.image_height,
        poses=tuple(poses),
        truth=SceneTruth(
            membership=membership,
            formation=cfg.formation,
            angle_deg=cfg.angle_deg,
        ),
    )
    layout = SceneLayout(
        bodies=tuple(bodies),
        camera=camera,
        template=template,
        distance_m=distance,
        azimuth_deg=azimuth,
        p_space_radius=p_radius,
    )
    return scene, layout


def render_scene(cfg: SynthConfig) -> Scene:
    return render_scene_with_layout(cfg)[0]


def generate_dataset(
    spec: list[tuple[SynthConfig, int]], shuffle_seed: int = 0
) -> list[Scene]:
    """Render count scenes per config with per-scene derived seeds (seed + i),
    then shuffle deterministically."""
    scenes = []
    for cfg, count in spec:
        if count <= 0:
            raise ValueError("per-config scene counts must be positive")
        for i in range(count):
            scenes.append(render_scene(replace(cfg, seed=cfg.seed + i)))
    rng = np.random.default_rng(shuffle_seed)
    order = rng.permutation(len(scenes))
    return [scenes[i] for i in order]


def split_train_test(
    scenes: list[Scene], train_frac: float = 0.8, seed: int = 0
) -> tuple[list[Scene], list[Scene]]:
    """80/20 split per formation (stratified further by angle when present).

    With equal per-cell counts this reduces to an exact per-formation split
    while keeping every (formation, angle) cell balanced across the halves.
    """
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must be in (0, 1)")
    rng = np.random.default_rng(seed)
    cells: dict[tuple, list[int]] = {}
    for i, s in enumerate(scenes):
        truth = s.truth
        key = (
            truth.formation if truth else None,
            truth.angle_deg if truth else None,
        )
        cells.setdefault(key, []).append(i)
    train_idx, test_idx = [], []
    for key in sorted(cells, key=repr):
        idx = np.array(cells[key])
        idx = idx[rng.permutation(len(idx))]
        cut = int(round(train_frac * len(idx)))
        train_idx.extend(idx[:cut].tolist())
        test_idx.extend(idx[cut:].tolist())
    return (
        [scenes[i] for i in sorted(train_idx)],
        [scenes[i] for i in sorted(test_idx)],
    )
