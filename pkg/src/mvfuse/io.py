"""File formats and run configuration.

Calibration is a JSON document; annotations and tracks are JSONL, one record
per line. All world units are meters (``units="mm"`` on the calibration
loader rescales millimeter extrinsics); pixels for image-plane quantities.
Writers emit keys in a fixed order so identical inputs produce identical
bytes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import BBox, CameraModel
from .metrics import TrackSet
from .pose import CanonicalPose, canonical_pose
from .tracker import AnnotationFrame, Track

_UNIT_SCALE = {"m": 1.0, "mm": 1e-3}


@dataclass(frozen=True)
class RunConfig:
    """Tunable parameters for tracking and evaluation.

    Noise units: ``q_pos`` is acceleration spectral density (m^2/s^3-ish per
    kinematic block), ``q_shape`` log-axis random-walk variance per step,
    ``r_bbox``/``r_keypoint`` pixel variances per measured coordinate.
    """

    dt: float = 1.0
    alpha: float = 0.1
    beta: float = 2.0
    kappa: float = 0.0
    q_pos: float = 1e-6
    q_shape: float = 1e-6
    r_bbox: float = 1e-4
    r_keypoint: float = 1.0
    default_half_axes: tuple[float, float, float] = (0.3, 0.3, 0.9)
    init_pos_var: float = 0.25
    init_vel_var: float = 1.0
    init_shape_var: float = 0.05
    init_keypoint_pos_var: float = 0.05
    init_keypoint_vel_var: float = 1.0
    visibility_threshold: float = 0.5
    skeleton: str | None = None
    workers: int = 1
    # evaluation
    threshold: float = 1.0
    ospa_cutoff: float = 1.0
    ospa_order: float = 1.0
    ospa_window: int | None = None
    ap_thresholds: tuple[float, ...] = (25.0, 50.0, 100.0, 150.0)
    recall_at: float = 500.0
    plane: bool = False

    def __post_init__(self):
        def need(cond: bool, msg: str):
            if not cond:
                raise ValidationError(msg)

        need(np.isfinite(self.dt) and self.dt > 0, f"dt must be positive, got {self.dt}")
        need(self.alpha > 0, f"alpha must be positive, got {self.alpha}")
        need(self.q_pos >= 0, "q_pos must be non-negative")
        need(self.q_shape >= 0, "q_shape must be non-negative")
        need(self.r_bbox > 0, "r_bbox must be positive")
        need(self.r_keypoint > 0, "r_keypoint must be positive")
        half = tuple(float(v) for v in self.default_half_axes)
        need(
            len(half) == 3 and all(v > 0 for v in half),
            f"default_half_axes must be 3 positive values, got {self.default_half_axes}",
        )
        for name in (
            "init_pos_var",
            "init_vel_var",
            "init_shape_var",
            "init_keypoint_pos_var",
            "init_keypoint_vel_var",
        ):
            need(getattr(self, name) > 0, f"{name} must be positive")
        need(
            0.0 <= self.visibility_threshold <= 1.0,
            "visibility_threshold must be within [0, 1]",
        )
        need(int(self.workers) >= 1, "workers must be >= 1")
        need(self.threshold > 0, "threshold must be positive")
        need(self.ospa_cutoff > 0, "ospa_cutoff must be positive")
        need(self.ospa_order >= 1, "ospa_order must be >= 1")
        need(
            self.ospa_window is None or int(self.ospa_window) >= 1,
            "ospa_window must be >= 1 or null",
        )
        thresholds = tuple(float(v) for v in self.ap_thresholds)
        need(
            len(thresholds) > 0 and all(v > 0 for v in thresholds),
            "ap_thresholds must be positive",
        )
        need(self.recall_at > 0, "recall_at must be positive")
        object.__setattr__(self, "default_half_axes", half)
        object.__setattr__(self, "ap_thresholds", thresholds)
        object.__setattr__(self, "workers", int(self.workers))
        object.__setattr__(
            self,
            "ospa_window",
            None if self.ospa_window is None else int(self.ospa_window),
        )

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["default_half_axes"] = list(self.default_half_axes)
        out["ap_thresholds"] = list(self.ap_thresholds)
        return out


@dataclass(frozen=True)
class SceneBundle:
    """Everything one run needs: cameras, annotations, optional extras."""

    calibration: dict[int, CameraModel]
    annotations: list[AnnotationFrame]
    gt: TrackSet | None = None
    skeleton: CanonicalPose | None = None

    def __post_init__(self):
        frames = [af.frame for af in self.annotations]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValidationError("annotation frames must be strictly increasing")


def _read_json(path) -> object:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(str(path), None, f"cannot read: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(path), exc.lineno, exc.msg) from exc


def _float_list(value, n: int, path: str, line: int | None, what: str) -> list[float]:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ParseError(path, line, f"{what} must be a list of {n} numbers")
    out = []
    for v in value:
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ParseError(path, line, f"{what} must contain numbers")
        out.append(float(v))
    if not all(np.isfinite(out)):
        raise ParseError(path, line, f"{what} must be finite")
    return out


def load_calibration(path, units: str = "m") -> dict[int, CameraModel]:
    """Read a camera rig from JSON.

    Accepts either a top-level list of camera entries or ``{"cameras":
    [...]}``. Each entry: ``id``, row-major ``K`` (9), ``R`` (9), ``t`` (3),
    ``width``, ``height``. ``units="mm"`` converts millimeter translations to
    meters.
    """
    spath = str(path)
    if units not in _UNIT_SCALE:
        raise ValidationError(f"unknown units {units!r}; expected 'm' or 'mm'")
    scale = _UNIT_SCALE[units]
    doc = _read_json(path)
    if isinstance(doc, dict) and "cameras" in doc:
        doc = doc["cameras"]
    if not isinstance(doc, list):
        raise ParseError(spath, None, "calibration must be a list of cameras")
    cams: dict[int, CameraModel] = {}
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict):
            raise ParseError(spath, None, f"camera #{i} is not an object")
        try:
            cid = int(entry["id"])
            K = np.array(_float_list(entry["K"], 9, spath, None, "K")).reshape(3, 3)
            R = np.array(_float_list(entry["R"], 9, spath, None, "R")).reshape(3, 3)
            t = np.array(_float_list(entry["t"], 3, spath, None, "t")) * scale
            size = (int(entry["width"]), int(entry["height"]))
        except KeyError as exc:
            raise ParseError(spath, None, f"camera #{i} missing key {exc}") from exc
        if cid in cams:
            raise ValidationError(f"duplicate camera id {cid}")
        try:
            cams[cid] = CameraModel(
                intrinsics=K, rotation=R, translation=t, image_size=size
            )
        except ValueError as exc:
            raise ValidationError(f"camera {cid}: {exc}") from exc
    if not cams:
        raise ValidationError("calibration contains no cameras")
    return cams


def save_calibration(cams: Mapping[int, CameraModel], path) -> None:
    entries = []
    for cid in sorted(cams):
        cam = cams[cid]
        entries.append(
            {
                "id": cid,
                "K": [float(v) for v in cam.intrinsics.ravel()],
                "R": [float(v) for v in cam.rotation.ravel()],
                "t": [float(v) for v in cam.translation],
                "width": cam.image_size[0],
                "height": cam.image_size[1],
            }
        )
    Path(path).write_text(json.dumps({"cameras": entries}, indent=2) + "\n")


def _iter_jsonl(path) -> Iterable[tuple[int, dict]]:
    spath = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(spath, None, f"cannot read: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(spath, lineno, exc.msg) from exc
        if not isinstance(record, dict):
            raise ParseError(spath, lineno, "record must be a JSON object")
        yield lineno, record


def load_annotations(path) -> list[AnnotationFrame]:
    """Read 2D annotations from JSONL.

    Record schema: ``frame``, ``object_id``, ``camera_id``, plus ``bbox``
    (``[u_min, v_min, u_max, v_max]``) and/or ``keypoints`` (list of
    ``[u, v, visibility]``). Frames come back sorted ascending.
    """
    spath = str(path)
    boxes: dict[int, dict[int, dict[int, BBox]]] = {}
    kps: dict[int, dict[int, dict[int, np.ndarray]]] = {}
    for lineno, rec in _iter_jsonl(path):
        try:
            frame = int(rec["frame"])
            oid = int(rec["object_id"])
            cid = int(rec["camera_id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(
                spath, lineno, f"record needs integer frame/object_id/camera_id ({exc})"
            ) from exc
        if frame < 0:
            raise ParseError(spath, lineno, "frame must be non-negative")
        has_any = False
        if rec.get("bbox") is not None:
            vals = _float_list(rec["bbox"], 4, spath, lineno, "bbox")
            try:
                box = BBox.from_array(vals)
            except ValueError as exc:
                raise ParseError(spath, lineno, str(exc)) from exc
            per_obj = boxes.setdefault(frame, {}).setdefault(oid, {})
            if cid in per_obj:
                raise ValidationError(
                    f"{spath}:{lineno}: duplicate bbox for frame {frame}, "
                    f"object {oid}, camera {cid}"
                )
            per_obj[cid] = box
            has_any = True
        if rec.get("keypoints") is not None:
            rows = rec["keypoints"]
            if not isinstance(rows, list) or not rows:
                raise ParseError(spath, lineno, "keypoints must be a non-empty list")
            arr = np.array(
                [_float_list(r, 3, spath, lineno, "keypoint row") for r in rows]
            )
            per_obj = kps.setdefault(frame, {}).setdefault(oid, {})
            if cid in per_obj:
                raise ValidationError(
                    f"{spath}:{lineno}: duplicate keypoints for frame {frame}, "
                    f"object {oid}, camera {cid}"
                )
            arr.setflags(write=False)
            per_obj[cid] = arr
            has_any = True
        if not has_any:
            raise ParseError(spath, lineno, "record carries no bbox or keypoints")
    frames = sorted(set(boxes) | set(kps))
    return [
        AnnotationFrame(
            frame=f, boxes=boxes.get(f, {}), keypoints=kps.get(f, {})
        )
        for f in frames
    ]


def save_annotations(frames: Sequence[AnnotationFrame], path) -> None:
    lines = []
    for af in sorted(frames, key=lambda a: a.frame):
        oids = sorted(set(af.boxes) | set(af.keypoints))
        for oid in oids:
            cam_ids = sorted(
                set(af.boxes.get(oid, {})) | set(af.keypoints.get(oid, {}))
            )
            for cid in cam_ids:
                rec: dict = {"frame": af.frame, "object_id": oid, "camera_id": cid}
                box = af.boxes.get(oid, {}).get(cid)
                if box is not None:
                    rec["bbox"] = [box.u_min, box.v_min, box.u_max, box.v_max]
                kp = af.keypoints.get(oid, {}).get(cid)
                if kp is not None:
                    rec["keypoints"] = [
                        [float(u), float(v), float(s)] for u, v, s in kp
                    ]
                lines.append(json.dumps(rec, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_tracks(path) -> TrackSet:
    """Read 3D tracks from JSONL into a TrackSet."""
    spath = str(path)
    positions: dict[int, dict[int, np.ndarray]] = {}
    keypoints: dict[int, dict[int, np.ndarray]] = {}
    half_axes: dict[int, dict[int, np.ndarray]] = {}
    for lineno, rec in _iter_jsonl(path):
        try:
            frame = int(rec["frame"])
            oid = int(rec["object_id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(
                spath, lineno, f"record needs integer frame/object_id ({exc})"
            ) from exc
        if "position" not in rec:
            raise ParseError(spath, lineno, "record needs a position")
        pos = _float_list(rec["position"], 3, spath, lineno, "position")
        per = positions.setdefault(oid, {})
        if frame in per:
            raise ValidationError(
                f"{spath}:{lineno}: duplicate entry for object {oid}, frame {frame}"
            )
        per[frame] = np.array(pos)
        if rec.get("half_axes") is not None:
            hax = _float_list(rec["half_axes"], 3, spath, lineno, "half_axes")
            if any(v <= 0 for v in hax):
                raise ParseError(spath, lineno, "half_axes must be positive")
            half_axes.setdefault(oid, {})[frame] = np.array(hax)
        if rec.get("keypoints") is not None:
            rows = rec["keypoints"]
            if not isinstance(rows, list) or not rows:
                raise ParseError(spath, lineno, "keypoints must be a non-empty list")
            keypoints.setdefault(oid, {})[frame] = np.array(
                [_float_list(r, 3, spath, lineno, "keypoint row") for r in rows]
            )
    return TrackSet(positions=positions, keypoints=keypoints, half_axes=half_axes)


def save_tracks(tracks: Sequence[Track] | TrackSet, path) -> None:
    """Write tracks as JSONL, rows ordered by (frame, object id)."""
    ts = tracks if isinstance(tracks, TrackSet) else TrackSet.from_tracks(tracks)
    rows = []
    for oid, per_frame in ts.positions.items():
        for frame, pos in per_frame.items():
            rows.append((frame, oid, pos))
    rows.sort(key=lambda r: (r[0], r[1]))
    lines = []
    for frame, oid, pos in rows:
        rec: dict = {
            "frame": frame,
            "object_id": oid,
            "position": [float(v) for v in pos],
        }
        hax = ts.half_axes.get(oid, {}).get(frame)
        if hax is not None:
            rec["half_axes"] = [float(v) for v in hax]
        kp = ts.keypoints.get(oid, {}).get(frame)
        if kp is not None:
            rec["keypoints"] = [[float(x), float(y), float(z)] for x, y, z in kp]
        lines.append(json.dumps(rec, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_skeleton(source) -> CanonicalPose:
    """Resolve a skeleton from a built-in name or a JSON file.

    A JSON skeleton is ``{"name": ..., "joints": [...], "coords": [[x, y, z],
    ...]}`` with coordinates in any consistent units; they are normalized on
    load.
    """
    name = str(source)
    if not Path(name).exists():
        try:
            return canonical_pose(name)
        except ValueError as exc:
            raise ValidationError(
                f"{name!r} is neither a skeleton file nor a built-in name"
            ) from exc
    doc = _read_json(name)
    if not isinstance(doc, dict):
        raise ParseError(name, None, "skeleton must be a JSON object")
    try:
        joints = doc["joints"]
        coords = doc["coords"]
    except KeyError as exc:
        raise ParseError(name, None, f"skeleton missing key {exc}") from exc
    if not isinstance(joints, list) or not all(isinstance(j, str) for j in joints):
        raise ParseError(name, None, "joints must be a list of strings")
    if not isinstance(coords, list):
        raise ParseError(name, None, "coords must be a list of [x, y, z]")
    rows = [_float_list(r, 3, name, None, "coords row") for r in coords]
    try:
        return CanonicalPose.from_raw(
            str(doc.get("name", Path(name).stem)), joints, np.array(rows)
        )
    except ValueError as exc:
        raise ValidationError(f"{name}: {exc}") from exc


def load_config(path) -> RunConfig:
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ParseError(str(path), None, "config must be a JSON object")
    return RunConfig.from_dict(doc)


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


def load_scene(
    calibration_path,
    annotations_path,
    gt_path=None,
    skeleton=None,
    units: str = "m",
) -> SceneBundle:
    """Load and cross-validate a full scene.

    Every annotation must reference a calibrated camera; keypoint rows must
    agree in joint count with the skeleton (when one is given) and with each
    other.
    """
    cams = load_calibration(calibration_path, units=units)
    annotations = load_annotations(annotations_path)
    pose = load_skeleton(skeleton) if skeleton is not None else None

    num_joints = pose.num_joints if pose is not None else None
    for af in annotations:
        for oid, per_cam in af.boxes.items():
            for cid in per_cam:
                if cid not in cams:
                    raise ValidationError(
                        f"frame {af.frame}, object {oid}: unknown camera {cid}"
                    )
        for oid, per_cam in af.keypoints.items():
            for cid, arr in per_cam.items():
                if cid not in cams:
                    raise ValidationError(
                        f"frame {af.frame}, object {oid}: unknown camera {cid}"
                    )
                if num_joints is None:
                    num_joints = arr.shape[0]
                elif arr.shape[0] != num_joints:
                    raise ValidationError(
                        f"frame {af.frame}, object {oid}, camera {cid}: "
                        f"{arr.shape[0]} keypoints, expected {num_joints}"
                    )
    gt = load_tracks(gt_path) if gt_path is not None else None
    return SceneBundle(
        calibration=cams, annotations=annotations, gt=gt, skeleton=pose
    )
