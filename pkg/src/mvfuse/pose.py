"""Canonical skeletons and per-keypoint filtering.

Keypoints are tracked as independent 6-dim constant-velocity states
[x, vx, y, vy, z, vz] with a pinhole pixel measurement. New keypoint states
are seeded from a canonical skeleton scaled to the object's ellipsoid and
translated to its center; keypoint velocities start as copies of the object
velocity.

Canonical tables are stored normalized: per-axis midrange at the origin and a
vertical (z) extent of exactly 1, so scaling to a person of height 2c is a
multiplication by 2c on z.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .errors import SigmaPointProjectionFailure, SingularInnovation
from .filter import (
    GaussianBelief,
    MotionModel,
    kalman_predict,
    make_motion_model,
    ukf_update,
)
from .geometry import CameraModel, project_point

if TYPE_CHECKING:
    from .io import RunConfig

logger = logging.getLogger(__name__)

# Index of (x, y, z) inside the interleaved keypoint state.
KP_POS_IDX = np.array([0, 2, 4])
KP_VEL_IDX = np.array([1, 3, 5])

_EXTENT_EPS = 1e-6
_NORM_TOL = 1e-9


def _normalize(coords: np.ndarray) -> np.ndarray:
    """Center each axis at its midrange and scale all axes by 1/z-extent."""
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span_z = hi[2] - lo[2]
    if span_z <= _EXTENT_EPS:
        raise ValueError("canonical pose has no vertical extent")
    return (coords - (lo + hi) / 2.0) / span_z


@dataclass(frozen=True)
class CanonicalPose:
    """Named skeleton: joint names plus normalized rest coordinates.

    ``coords`` is (N, 3) with zero per-axis midrange and unit z extent; use
    :meth:`from_raw` to build one from unnormalized measurements.
    """

    name: str
    joints: tuple[str, ...]
    coords: np.ndarray

    def __post_init__(self):
        joints = tuple(str(j) for j in self.joints)
        if len(set(joints)) != len(joints):
            raise ValueError("joint names must be unique")
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.shape != (len(joints), 3):
            raise ValueError(
                f"coords shape {coords.shape} must be ({len(joints)}, 3)"
            )
        if len(joints) < 2:
            raise ValueError("a pose needs at least two joints")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coords contain non-finite values")
        lo = coords.min(axis=0)
        hi = coords.max(axis=0)
        if np.max(np.abs(lo + hi)) > _NORM_TOL or abs((hi[2] - lo[2]) - 1.0) > _NORM_TOL:
            raise ValueError(
                "coords must be normalized (zero midrange, unit z extent); "
                "use CanonicalPose.from_raw"
            )
        coords.setflags(write=False)
        object.__setattr__(self, "name", str(self.name))
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_raw(cls, name: str, joints: Sequence[str], coords) -> "CanonicalPose":
        raw = np.asarray(coords, dtype=np.float64)
        if raw.ndim != 2 or raw.shape[1] != 3:
            raise ValueError(f"coords must be (N, 3), got {raw.shape}")
        return cls(name=name, joints=tuple(joints), coords=_normalize(raw))

    @property
    def num_joints(self) -> int:
        return len(self.joints)


# Rest-pose joint positions for a standing figure, meters, z up, y to the
# subject's left. Absolute scale is irrelevant after normalization.
_COCO17_RAW = {
    "nose": (0.10, 0.000, 1.62),
    "left_eye": (0.09, 0.035, 1.66),
    "right_eye": (0.09, -0.035, 1.66),
    "left_ear": (0.02, 0.075, 1.64),
    "right_ear": (0.02, -0.075, 1.64),
    "left_shoulder": (0.00, 0.19, 1.45),
    "right_shoulder": (0.00, -0.19, 1.45),
    "left_elbow": (0.00, 0.24, 1.17),
    "right_elbow": (0.00, -0.24, 1.17),
    "left_wrist": (0.00, 0.26, 0.92),
    "right_wrist": (0.00, -0.26, 0.92),
    "left_hip": (0.00, 0.10, 0.95),
    "right_hip": (0.00, -0.10, 0.95),
    "left_knee": (0.00, 0.11, 0.52),
    "right_knee": (0.00, -0.11, 0.52),
    "left_ankle": (0.00, 0.12, 0.08),
    "right_ankle": (0.00, -0.12, 0.08),
}

_PANOPTIC15_RAW = {
    "neck": (0.00, 0.00, 1.50),
    "nose": (0.10, 0.00, 1.62),
    "mid_hip": (0.00, 0.00, 0.95),
    "left_shoulder": (0.00, 0.19, 1.45),
    "left_elbow": (0.00, 0.24, 1.17),
    "left_wrist": (0.00, 0.26, 0.92),
    "left_hip": (0.00, 0.10, 0.95),
    "left_knee": (0.00, 0.11, 0.52),
    "left_ankle": (0.00, 0.12, 0.08),
    "right_shoulder": (0.00, -0.19, 1.45),
    "right_elbow": (0.00, -0.24, 1.17),
    "right_wrist": (0.00, -0.26, 0.92),
    "right_hip": (0.00, -0.10, 0.95),
    "right_knee": (0.00, -0.11, 0.52),
    "right_ankle": (0.00, -0.12, 0.08),
}


def _build(name: str, table: Mapping[str, tuple[float, float, float]]) -> CanonicalPose:
    return CanonicalPose.from_raw(
        name, list(table.keys()), np.array(list(table.values()))
    )


_BUILTIN = {
    "coco17": _build("coco17", _COCO17_RAW),
    "panoptic15": _build("panoptic15", _PANOPTIC15_RAW),
}


def canonical_pose(name: str) -> CanonicalPose:
    """Look up a built-in skeleton (``coco17`` or ``panoptic15``)."""
    try:
        return _BUILTIN[name]
    except KeyError:
        raise ValueError(
            f"unknown skeleton {name!r}; built-ins: {sorted(_BUILTIN)}"
        ) from None


@dataclass(frozen=True)
class KeypointState:
    """Filtered state of a single keypoint."""

    belief: GaussianBelief

    def __post_init__(self):
        if self.belief.dim != 6:
            raise ValueError(
                f"keypoint state must be 6-dim, got {self.belief.dim}"
            )

    @property
    def position(self) -> np.ndarray:
        return self.belief.mean[KP_POS_IDX]


def scaled_offsets(pose: CanonicalPose, half_axes) -> np.ndarray:
    """Canonical coordinates scaled to an ellipsoid's half-axes.

    z is stretched to the full height 2c; x and y are stretched so their
    canonical extents span 2a and 2b. A canonical extent too close to zero
    falls back to the neighboring axis' factor to stay finite.
    """
    a, b, c = np.asarray(half_axes, dtype=np.float64)
    ext = pose.coords.max(axis=0) - pose.coords.min(axis=0)
    sz = 2.0 * c
    sy = 2.0 * b / ext[1] if ext[1] > _EXTENT_EPS else sz
    sx = 2.0 * a / ext[0] if ext[0] > _EXTENT_EPS else sy
    return pose.coords * np.array([sx, sy, sz])


def init_keypoints(
    pose: CanonicalPose, belief: GaussianBelief, config: "RunConfig"
) -> list[KeypointState]:
    """Seed keypoint states from an object's ellipsoid belief.

    The canonical skeleton is scaled to the current half-axes, translated to
    the object center, and every keypoint inherits the object velocity.
    """
    if belief.dim != 9:
        raise ValueError(f"object belief must be 9-dim, got {belief.dim}")
    center = belief.mean[[0, 2, 4]]
    velocity = belief.mean[[1, 3, 5]]
    offsets = scaled_offsets(pose, np.exp(belief.mean[6:9]))
    cov = np.diag(
        [
            config.init_keypoint_pos_var,
            config.init_keypoint_vel_var,
        ]
        * 3
    )
    states = []
    for off in offsets:
        mean = np.empty(6)
        mean[KP_POS_IDX] = center + off
        mean[KP_VEL_IDX] = velocity
        states.append(KeypointState(GaussianBelief(mean, cov)))
    return states


def keypoint_motion_model(config: "RunConfig") -> MotionModel:
    """Constant-velocity model matching the keypoint state layout."""
    return make_motion_model(config.dt, config.q_pos)


def predict_keypoints(
    states: Sequence[KeypointState], model: MotionModel
) -> list[KeypointState]:
    return [KeypointState(kalman_predict(s.belief, model)) for s in states]


def _pixel_measurement(cam: CameraModel):
    def h(x: np.ndarray) -> np.ndarray:
        return project_point(cam, x[KP_POS_IDX])

    return h


def update_keypoints(
    states: Sequence[KeypointState],
    observed: np.ndarray,
    cam: CameraModel,
    config: "RunConfig",
) -> list[KeypointState]:
    """Fuse one camera's keypoint annotations into the states.

    ``observed`` is (N, 3) rows of (u, v, visibility). Joints whose visibility
    is below ``config.visibility_threshold`` are left untouched; a joint whose
    update fails numerically keeps its prior (logged, not raised).
    """
    obs = np.asarray(observed, dtype=np.float64)
    if obs.shape != (len(states), 3):
        raise ValueError(
            f"observations shape {obs.shape} must be ({len(states)}, 3)"
        )
    h = _pixel_measurement(cam)
    R = config.r_keypoint * np.eye(2)
    out = list(states)
    for j, (state, row) in enumerate(zip(states, obs)):
        if row[2] < config.visibility_threshold:
            continue
        try:
            out[j] = KeypointState(
                ukf_update(
                    state.belief,
                    row[:2],
                    h,
                    R,
                    alpha=config.alpha,
                    beta=config.beta,
                    kappa=config.kappa,
                )
            )
        except (SigmaPointProjectionFailure, SingularInnovation) as exc:
            logger.debug("keypoint %d update skipped: %s", j, exc)
    return out


def keypoint_positions(states: Sequence[KeypointState]) -> np.ndarray:
    """Stack current keypoint position estimates into an (N, 3) array."""
    return np.array([s.position for s in states]).reshape(len(states), 3)


def track_keypoints(
    observations: Sequence[Mapping[int, np.ndarray]],
    initial: Sequence[KeypointState],
    cams: Mapping[int, CameraModel],
    config: "RunConfig",
) -> np.ndarray:
    """Run the keypoint filters over a window of frames.

    ``observations[k]`` maps camera id to an (N, 3) annotation array for frame
    k; cameras are fused in ascending id. The initial states are taken to be
    valid at the first frame, which is therefore updated without a predict.
    Returns the (F, N, 3) position estimates after each frame.
    """
    states = list(initial)
    model = keypoint_motion_model(config)
    out = np.empty((len(observations), len(states), 3))
    for k, per_cam in enumerate(observations):
        if k > 0:
            states = predict_keypoints(states, model)
        for cid in sorted(per_cam):
            states = update_keypoints(states, per_cam[cid], cams[cid], config)
        out[k] = keypoint_positions(states)
    return out
