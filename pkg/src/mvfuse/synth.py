"""Synthetic scenes with known ground truth.

Builds a camera ring around a rectangular arena, moves ellipsoidal subjects
through it, and renders exact bounding boxes (dual-quadric outlines) and
keypoint projections, optionally with pixel noise and occlusion windows.
Because the renderer uses the same projective model as the tracker's
measurement maps, a noiseless scene closes the loop: the tracker should
recover the ground truth to within filter convergence error.

Subjects are rigid: their keypoints are the canonical skeleton scaled to the
subject's ellipsoid, carried along with its center.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .errors import GeometryError, InvalidSpec
from .geometry import BBox, CameraModel, Ellipsoid, project_ellipsoid_to_bbox, project_point
from .io import SceneBundle
from .metrics import TrackSet
from .pose import canonical_pose, scaled_offsets
from .tracker import AnnotationFrame

_MOTIONS = ("static", "constant-velocity", "waypoint")


@dataclass(frozen=True)
class Occlusion:
    """Drop all records of a camera (optionally one object) for frames in
    [start, stop)."""

    camera_id: int
    start: int
    stop: int
    object_id: int | None = None

    def covers(self, frame: int, camera_id: int, object_id: int) -> bool:
        return (
            camera_id == self.camera_id
            and self.start <= frame < self.stop
            and (self.object_id is None or object_id == self.object_id)
        )


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a synthetic scene.

    The camera ring surrounds the arena; radius, height, and focal length
    are derived from the arena size unless overridden. ``fps`` fixes the
    frame spacing (dt = 1/fps) used for subject motion.
    """

    seed: int = 0
    num_objects: int = 5
    num_cameras: int = 4
    frames: int = 100
    fps: float = 10.0
    arena: tuple[float, float] = (12.0, 12.0)
    motion: str = "constant-velocity"
    pixel_noise: float = 0.0
    skeleton: str | None = None
    image_size: tuple[int, int] = (1920, 1080)
    ring_radius: float | None = None
    cam_height: float | None = None
    focal: float | None = None
    occlusions: tuple[Occlusion, ...] = ()

    def __post_init__(self):
        def need(cond: bool, msg: str):
            if not cond:
                raise InvalidSpec(msg)

        need(self.num_objects >= 0, f"num_objects must be >= 0, got {self.num_objects}")
        need(self.num_cameras >= 1, f"num_cameras must be >= 1, got {self.num_cameras}")
        need(self.frames >= 1, f"frames must be >= 1, got {self.frames}")
        need(self.fps > 0, f"fps must be positive, got {self.fps}")
        arena = tuple(float(v) for v in self.arena)
        need(
            len(arena) == 2 and all(v > 0 for v in arena),
            f"arena must be two positive extents, got {self.arena}",
        )
        need(
            self.motion in _MOTIONS,
            f"motion must be one of {_MOTIONS}, got {self.motion!r}",
        )
        need(self.pixel_noise >= 0, "pixel_noise must be non-negative")
        size = (int(self.image_size[0]), int(self.image_size[1]))
        need(size[0] > 0 and size[1] > 0, "image_size must be positive")
        for name in ("ring_radius", "cam_height", "focal"):
            v = getattr(self, name)
            need(v is None or v > 0, f"{name} must be positive when given")
        if self.skeleton is not None:
            try:
                canonical_pose(self.skeleton)
            except ValueError as exc:
                raise InvalidSpec(str(exc)) from None
        occl = tuple(self.occlusions)
        for o in occl:
            need(
                0 <= o.start < o.stop <= self.frames,
                f"occlusion window [{o.start}, {o.stop}) out of range",
            )
            need(
                0 <= o.camera_id < self.num_cameras,
                f"occlusion references unknown camera {o.camera_id}",
            )
        object.__setattr__(self, "arena", arena)
        object.__setattr__(self, "image_size", size)
        object.__setattr__(self, "occlusions", occl)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidSpec(f"unknown scene keys: {unknown}")
        kwargs = dict(data)
        if "occlusions" in kwargs:
            occl = kwargs["occlusions"]
            if not isinstance(occl, (list, tuple)):
                raise InvalidSpec("occlusions must be a list")
            parsed = []
            for entry in occl:
                if not isinstance(entry, Mapping):
                    raise InvalidSpec("each occlusion must be an object")
                extra = set(entry) - {"camera_id", "start", "stop", "object_id"}
                if extra:
                    raise InvalidSpec(f"unknown occlusion keys: {sorted(extra)}")
                try:
                    parsed.append(
                        Occlusion(
                            camera_id=int(entry["camera_id"]),
                            start=int(entry["start"]),
                            stop=int(entry["stop"]),
                            object_id=(
                                None
                                if entry.get("object_id") is None
                                else int(entry["object_id"])
                            ),
                        )
                    )
                except KeyError as exc:
                    raise InvalidSpec(f"occlusion missing key {exc}") from None
            kwargs["occlusions"] = tuple(parsed)
        for key in ("arena", "image_size"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out: dict = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "occlusions":
                value = [
                    {
                        "camera_id": o.camera_id,
                        "start": o.start,
                        "stop": o.stop,
                        "object_id": o.object_id,
                    }
                    for o in value
                ]
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out


def _look_at(center: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-to-camera rotation for a camera at ``center`` looking at
    ``target`` (camera x right, y down, z forward)."""
    forward = target - center
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def _build_cameras(spec: SceneSpec) -> dict[int, CameraModel]:
    ax, ay = spec.arena
    half_diag = float(np.hypot(ax, ay)) / 2.0
    radius = spec.ring_radius or (1.6 * half_diag + 4.0)
    height = spec.cam_height or (0.45 * radius)
    if radius <= half_diag:
        raise InvalidSpec(
            f"ring_radius {radius} must exceed the arena half-diagonal {half_diag:.2f}"
        )
    width, img_h = spec.image_size
    if spec.focal is not None:
        focal = spec.focal
    else:
        # Fit the arena (plus body margin) inside the narrower field of view.
        reach = half_diag + 0.8
        tan_span = reach / (radius - reach) if radius > reach else None
        if tan_span is None or tan_span <= 0:
            raise InvalidSpec("camera ring too tight for the arena")
        focal = 0.85 * (min(width, img_h) / 2.0) / tan_span
    target = np.array([0.0, 0.0, 1.0])
    K = np.array(
        [
            [focal, 0.0, width / 2.0],
            [0.0, focal, img_h / 2.0],
            [0.0, 0.0, 1.0],
        ]
    )
    cams = {}
    for i in range(spec.num_cameras):
        angle = 2.0 * np.pi * i / spec.num_cameras
        center = np.array(
            [radius * np.cos(angle), radius * np.sin(angle), height]
        )
        R = _look_at(center, target)
        cams[i] = CameraModel(
            intrinsics=K,
            rotation=R,
            translation=-R @ center,
            image_size=spec.image_size,
        )
    return cams


def _place_objects(spec: SceneSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Start positions (ground plane) and half-axes, objects well separated."""
    ax, ay = spec.arena
    lo = np.array([-0.45 * ax, -0.45 * ay])
    hi = -lo
    starts = []
    min_sep = 2.2
    for _ in range(spec.num_objects):
        for attempt in range(2000):
            cand = rng.uniform(lo, hi)
            if all(np.linalg.norm(cand - s) >= min_sep for s in starts):
                starts.append(cand)
                break
        else:
            raise InvalidSpec(
                f"cannot place {spec.num_objects} objects {min_sep} m apart "
                f"in a {ax} x {ay} arena"
            )
    half_axes = np.column_stack(
        [
            rng.uniform(0.24, 0.36, spec.num_objects),
            rng.uniform(0.24, 0.36, spec.num_objects),
            rng.uniform(0.75, 0.95, spec.num_objects),
        ]
    )
    return np.array(starts).reshape(spec.num_objects, 2), half_axes


def _plan_motion(
    spec: SceneSpec, rng: np.random.Generator, starts: np.ndarray
) -> np.ndarray:
    """Ground-plane positions, shape (frames, num_objects, 2)."""
    dt = 1.0 / spec.fps
    ax, ay = spec.arena
    bound = np.array([0.48 * ax, 0.48 * ay])
    out = np.empty((spec.frames, spec.num_objects, 2))
    for o in range(spec.num_objects):
        start = starts[o]
        if spec.motion == "static":
            out[:, o, :] = start
            continue
        if spec.motion == "constant-velocity":
            heading = rng.uniform(0.0, 2.0 * np.pi)
            speed = rng.uniform(0.3, 0.9)
            vel = speed * np.array([np.cos(heading), np.sin(heading)])
            end = start + vel * dt * (spec.frames - 1)
            if np.any(np.abs(end) > bound):
                vel = -vel
                end = start + vel * dt * (spec.frames - 1)
            if np.any(np.abs(end) > bound):
                # Shrink speed until the endpoint stays inside.
                over = np.max(np.abs(end) / bound)
                vel = vel / (over * 1.05)
            pos = start.copy()
            for k in range(spec.frames):
                out[k, o, :] = pos
                pos = pos + vel * dt
            continue
        # waypoint: constant speed along a random polyline, hold at the end
        points = [start]
        for _ in range(3):
            points.append(rng.uniform(-0.85 * bound, 0.85 * bound))
        speed = rng.uniform(0.4, 0.9)
        pos = start.copy()
        seg = 0
        for k in range(spec.frames):
            out[k, o, :] = pos
            remaining = speed * dt
            while remaining > 0 and seg < len(points) - 1:
                to_next = points[seg + 1] - pos
                dist = float(np.linalg.norm(to_next))
                if dist <= remaining:
                    pos = points[seg + 1].copy()
                    remaining -= dist
                    seg += 1
                else:
                    pos = pos + to_next * (remaining / dist)
                    remaining = 0.0
    return out


def _noisy_box(box: BBox, noise: float, rng: np.random.Generator) -> BBox:
    if noise == 0.0:
        return box
    vals = box.as_array() + rng.normal(0.0, noise, 4)
    return BBox(
        min(vals[0], vals[2]), min(vals[1], vals[3]),
        max(vals[0], vals[2]), max(vals[1], vals[3]),
    )


def generate(spec: SceneSpec) -> tuple[SceneBundle, TrackSet]:
    """Render a scene: (bundle with calibration + annotations, ground truth).

    Annotations contain a box for every (frame, object, camera) whose exact
    outline box lies fully inside the image and is not occluded, and keypoint
    rows flagged visible when the joint projects inside the image. Ground
    truth carries positions, half-axes, and (with a skeleton) 3D keypoints.
    """
    rng = np.random.default_rng(spec.seed)
    cams = _build_cameras(spec)
    starts, half_axes = _place_objects(spec, rng)
    ground = _plan_motion(spec, rng, starts)
    skeleton = canonical_pose(spec.skeleton) if spec.skeleton else None
    offsets = (
        np.stack([scaled_offsets(skeleton, half_axes[o]) for o in range(spec.num_objects)])
        if skeleton is not None and spec.num_objects
        else None
    )
    width, height = spec.image_size

    positions: dict[int, dict[int, np.ndarray]] = {o: {} for o in range(spec.num_objects)}
    gt_half: dict[int, dict[int, np.ndarray]] = {o: {} for o in range(spec.num_objects)}
    gt_kp: dict[int, dict[int, np.ndarray]] = {}
    frames: list[AnnotationFrame] = []

    for k in range(spec.frames):
        boxes: dict[int, dict[int, BBox]] = {}
        kps: dict[int, dict[int, np.ndarray]] = {}
        for o in range(spec.num_objects):
            center = np.array([ground[k, o, 0], ground[k, o, 1], half_axes[o, 2]])
            positions[o][k] = center
            gt_half[o][k] = half_axes[o].copy()
            ell = Ellipsoid(center=center, half_axes=half_axes[o])
            joints = offsets[o] + center if offsets is not None else None
            if joints is not None:
                gt_kp.setdefault(o, {})[k] = joints
            for cid, cam in cams.items():
                if any(occ.covers(k, cid, o) for occ in spec.occlusions):
                    continue
                try:
                    box = project_ellipsoid_to_bbox(cam, ell)
                except GeometryError:
                    continue
                box = _noisy_box(box, spec.pixel_noise, rng)
                if (
                    box.u_min >= 0
                    and box.v_min >= 0
                    and box.u_max <= width
                    and box.v_max <= height
                ):
                    boxes.setdefault(o, {})[cid] = box
                if joints is not None:
                    rows = np.zeros((joints.shape[0], 3))
                    any_visible = False
                    for j, joint in enumerate(joints):
                        try:
                            uv = project_point(cam, joint)
                        except GeometryError:
                            continue
                        if spec.pixel_noise:
                            uv = uv + rng.normal(0.0, spec.pixel_noise, 2)
                        visible = 0 <= uv[0] <= width and 0 <= uv[1] <= height
                        rows[j] = [uv[0], uv[1], 1.0 if visible else 0.0]
                        any_visible = any_visible or visible
                    if any_visible:
                        kps.setdefault(o, {})[cid] = rows
        if boxes or kps:
            frames.append(AnnotationFrame(frame=k, boxes=boxes, keypoints=kps))

    gt = TrackSet(positions=positions, keypoints=gt_kp, half_axes=gt_half)
    bundle = SceneBundle(
        calibration=cams, annotations=frames, gt=gt, skeleton=skeleton
    )
    return bundle, gt
