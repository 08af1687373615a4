"""Track-level and pose-level evaluation.

All association gates and the OSPA cutoff are in meters; MOTA/IDF1/recall/AP
are percentages; MPJPE and the pose thresholds are in millimeters. Euclidean
distance throughout (use ``evaluate_tracks(plane=True)`` to score on the
ground plane only).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptyGroundTruth

_FORBIDDEN = 1e15  # assignment cost for pairs outside the gate


def _clean_entries(
    data: Mapping[int, Mapping[int, np.ndarray]], what: str, per_joint: bool
) -> dict[int, dict[int, np.ndarray]]:
    out: dict[int, dict[int, np.ndarray]] = {}
    for oid, per_frame in data.items():
        frames: dict[int, np.ndarray] = {}
        for f, value in per_frame.items():
            arr = np.asarray(value, dtype=np.float64)
            ok = (
                arr.ndim == 2 and arr.shape[1] == 3
                if per_joint
                else arr.shape == (3,)
            )
            if not ok:
                raise ValueError(f"{what}[{oid}][{f}] has shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{what}[{oid}][{f}] contains non-finite values")
            arr.setflags(write=False)
            frames[int(f)] = arr
        out[int(oid)] = frames
    return out


@dataclass(frozen=True)
class TrackSet:
    """Time-indexed positions per object id, with optional keypoints and
    half-axes riding along (metrics use positions and keypoints only)."""

    positions: dict[int, dict[int, np.ndarray]]
    keypoints: dict[int, dict[int, np.ndarray]] = field(default_factory=dict)
    half_axes: dict[int, dict[int, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "positions", _clean_entries(self.positions, "positions", False)
        )
        object.__setattr__(
            self, "keypoints", _clean_entries(self.keypoints, "keypoints", True)
        )
        object.__setattr__(
            self, "half_axes", _clean_entries(self.half_axes, "half_axes", False)
        )

    @classmethod
    def from_tracks(cls, tracks: Iterable) -> "TrackSet":
        """Build from :class:`~mvfuse.tracker.Track` objects."""
        positions: dict[int, dict[int, np.ndarray]] = {}
        keypoints: dict[int, dict[int, np.ndarray]] = {}
        half_axes: dict[int, dict[int, np.ndarray]] = {}
        for track in tracks:
            pos = positions.setdefault(track.object_id, {})
            hax = half_axes.setdefault(track.object_id, {})
            for e in track.entries:
                pos[e.frame] = e.position
                hax[e.frame] = e.half_axes
                if e.keypoints is not None:
                    keypoints.setdefault(track.object_id, {})[e.frame] = e.keypoints
        return cls(positions=positions, keypoints=keypoints, half_axes=half_axes)

    def num_detections(self) -> int:
        return sum(len(v) for v in self.positions.values())

    def frames(self) -> list[int]:
        out = set()
        for per_frame in self.positions.values():
            out.update(per_frame)
        return sorted(out)


class ClearMotResult(NamedTuple):
    fp: int
    fn: int
    ids: int
    mota: float


def _frame_objects(ts: TrackSet, frame: int) -> dict[int, np.ndarray]:
    return {
        oid: per_frame[frame]
        for oid, per_frame in ts.positions.items()
        if frame in per_frame
    }


def clear_mot(pred: TrackSet, gt: TrackSet, threshold: float = 1.0) -> ClearMotResult:
    """CLEAR multi-object tracking scores with match persistence.

    Frame by frame, matches from the last known association are kept while
    both sides exist within the gate; remaining objects are matched by
    minimum-distance Hungarian assignment. An identity switch is counted
    when a ground-truth object is matched to a different prediction than its
    last known match. MOTA = 100 (1 - (FP + FN + IDS) / total GT detections).

    Raises
    ------
    EmptyGroundTruth
        If ``gt`` contains no detections.
    """
    total_gt = gt.num_detections()
    if total_gt == 0:
        raise EmptyGroundTruth("ground truth has no detections")
    frames = sorted(set(gt.frames()) | set(pred.frames()))

    fp = fn = ids = 0
    last_known: dict[int, int] = {}
    for f in frames:
        gt_here = _frame_objects(gt, f)
        pred_here = _frame_objects(pred, f)
        matches: dict[int, int] = {}
        taken: set[int] = set()
        for g, gpos in gt_here.items():
            p = last_known.get(g)
            if p is None or p not in pred_here or p in taken:
                continue
            if np.linalg.norm(gpos - pred_here[p]) <= threshold:
                matches[g] = p
                taken.add(p)
        free_g = [g for g in gt_here if g not in matches]
        free_p = [p for p in pred_here if p not in taken]
        if free_g and free_p:
            cost = np.empty((len(free_g), len(free_p)))
            for i, g in enumerate(free_g):
                for j, p in enumerate(free_p):
                    d = np.linalg.norm(gt_here[g] - pred_here[p])
                    cost[i, j] = d if d <= threshold else _FORBIDDEN
            rows, cols = linear_sum_assignment(cost)
            for i, j in zip(rows, cols):
                if cost[i, j] <= threshold:
                    matches[free_g[i]] = free_p[j]
                    taken.add(free_p[j])
        fn += len(gt_here) - len(matches)
        fp += len(pred_here) - len(matches)
        for g, p in matches.items():
            prev = last_known.get(g)
            if prev is not None and prev != p:
                ids += 1
            last_known[g] = p
    mota = 100.0 * (1.0 - (fp + fn + ids) / total_gt)
    return ClearMotResult(fp=fp, fn=fn, ids=ids, mota=mota)


def idf1(pred: TrackSet, gt: TrackSet, threshold: float = 1.0) -> float:
    """Identity F1: trajectory-level assignment maximizing frames in which a
    ground-truth object and its assigned prediction coincide within the gate.

    With IDTP the total coinciding frames under the best one-to-one
    trajectory assignment, IDF1 = 100 * 2 IDTP / (total GT + total pred).

    Raises
    ------
    EmptyGroundTruth
        If ``gt`` contains no detections.
    """
    total_gt = gt.num_detections()
    if total_gt == 0:
        raise EmptyGroundTruth("ground truth has no detections")
    total_pred = pred.num_detections()
    if total_pred == 0:
        return 0.0

    gt_ids = sorted(gt.positions)
    pred_ids = sorted(pred.positions)
    overlap = np.zeros((len(gt_ids), len(pred_ids)))
    for i, g in enumerate(gt_ids):
        g_frames = gt.positions[g]
        for j, p in enumerate(pred_ids):
            p_frames = pred.positions[p]
            common = g_frames.keys() & p_frames.keys()
            n = 0
            for f in common:
                if np.linalg.norm(g_frames[f] - p_frames[f]) <= threshold:
                    n += 1
            overlap[i, j] = n
    rows, cols = linear_sum_assignment(-overlap)
    idtp = overlap[rows, cols].sum()
    return 100.0 * 2.0 * idtp / (total_gt + total_pred)


def _track_distance(
    a: Mapping[int, np.ndarray],
    b: Mapping[int, np.ndarray],
    frames: Sequence[int],
    cutoff: float,
) -> float:
    """Time-averaged per-frame base distance between two tracks.

    Per frame: 0 when both are absent, the cutoff when exactly one exists,
    min(cutoff, Euclidean distance) when both do. Averaged over ``frames``.
    """
    total = 0.0
    count = 0
    for f in frames:
        pa = a.get(f)
        pb = b.get(f)
        if pa is None and pb is None:
            continue
        count += 1
        if pa is None or pb is None:
            total += cutoff
        else:
            total += min(cutoff, float(np.linalg.norm(pa - pb)))
    return total / count if count else 0.0


def ospa2(
    pred: TrackSet,
    gt: TrackSet,
    cutoff: float = 1.0,
    order: float = 1.0,
    window: int | None = None,
) -> float:
    """OSPA distance between sets of tracks (OSPA-on-OSPA construction).

    Each pair of tracks gets a time-averaged base distance over the frames
    where at least one of the two exists; the track sets are then compared
    with an OSPA of the same cutoff and order, so unmatched tracks pay the
    full cutoff. The result lives in [0, cutoff]; identical sets score 0.

    ``window`` restricts scoring to the last ``window`` frames of the union
    timeline; the default uses every frame.
    """
    if cutoff <= 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    all_frames = sorted(set(pred.frames()) | set(gt.frames()))
    if window is not None:
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        all_frames = all_frames[-window:]

    pred_tracks = [pred.positions[i] for i in sorted(pred.positions)]
    gt_tracks = [gt.positions[i] for i in sorted(gt.positions)]
    m, n = len(pred_tracks), len(gt_tracks)
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return float(cutoff)

    D = np.empty((m, n))
    for i, a in enumerate(pred_tracks):
        for j, b in enumerate(gt_tracks):
            D[i, j] = _track_distance(a, b, all_frames, cutoff)
    rows, cols = linear_sum_assignment(D ** order)
    cost = float((D[rows, cols] ** order).sum())
    big = max(m, n)
    cost += (cutoff ** order) * (big - min(m, n))
    return float((cost / big) ** (1.0 / order))


@dataclass(frozen=True)
class PoseMetrics:
    """Keypoint scores: AP per threshold (mm), recall, and matched MPJPE."""

    ap: dict[float, float]
    recall: float
    mpjpe: float
    recall_at: float
    num_gt_poses: int
    num_pred_poses: int


def pose_metrics(
    pred: TrackSet,
    gt: TrackSet,
    ap_thresholds: Sequence[float] = (25.0, 50.0, 100.0, 150.0),
    recall_at: float = 500.0,
) -> PoseMetrics:
    """Score predicted 3D poses against ground truth.

    Poses are matched per frame by Hungarian assignment on MPJPE (mean
    per-joint Euclidean distance, reported in millimeters); assignments
    beyond ``recall_at`` mm do not count as matches. AP@d is the percentage
    of ground-truth poses matched within d mm; recall is AP at ``recall_at``;
    MPJPE averages over matched poses.

    Raises
    ------
    EmptyGroundTruth
        If ``gt`` has no keypoint annotations.
    """
    total_gt = sum(len(v) for v in gt.keypoints.values())
    if total_gt == 0:
        raise EmptyGroundTruth("ground truth has no keypoints")
    total_pred = sum(len(v) for v in pred.keypoints.values())

    frames = set()
    for per_frame in gt.keypoints.values():
        frames.update(per_frame)
    for per_frame in pred.keypoints.values():
        frames.update(per_frame)

    matched_errors: list[float] = []
    for f in sorted(frames):
        gt_poses = [
            per_frame[f]
            for _, per_frame in sorted(gt.keypoints.items())
            if f in per_frame
        ]
        pred_poses = [
            per_frame[f]
            for _, per_frame in sorted(pred.keypoints.items())
            if f in per_frame
        ]
        if not gt_poses or not pred_poses:
            continue
        cost = np.empty((len(gt_poses), len(pred_poses)))
        for i, gp in enumerate(gt_poses):
            for j, pp in enumerate(pred_poses):
                if gp.shape != pp.shape:
                    raise ValueError(
                        f"keypoint count mismatch at frame {f}: "
                        f"{gp.shape} vs {pp.shape}"
                    )
                cost[i, j] = 1000.0 * float(
                    np.mean(np.linalg.norm(gp - pp, axis=1))
                )
        rows, cols = linear_sum_assignment(cost)
        for i, j in zip(rows, cols):
            if cost[i, j] <= recall_at:
                matched_errors.append(cost[i, j])

    errors = np.array(matched_errors)
    ap = {
        float(d): 100.0 * float((errors <= d).sum()) / total_gt
        for d in ap_thresholds
    }
    recall = 100.0 * errors.size / total_gt
    mpjpe = float(errors.mean()) if errors.size else float("nan")
    return PoseMetrics(
        ap=ap,
        recall=recall,
        mpjpe=mpjpe,
        recall_at=float(recall_at),
        num_gt_poses=total_gt,
        num_pred_poses=total_pred,
    )


@dataclass(frozen=True)
class MetricReport:
    """Everything `evaluate_tracks` produces, JSON- and table-friendly."""

    mota: float
    idf1: float
    fp: int
    fn: int
    ids: int
    ospa: float
    pose: PoseMetrics | None
    threshold: float
    ospa_cutoff: float
    num_frames: int
    num_gt: int
    num_pred: int

    def to_dict(self) -> dict:
        out = {
            "mota": self.mota,
            "idf1": self.idf1,
            "fp": self.fp,
            "fn": self.fn,
            "ids": self.ids,
            "ospa2": self.ospa,
            "threshold_m": self.threshold,
            "ospa_cutoff_m": self.ospa_cutoff,
            "counts": {
                "frames": self.num_frames,
                "gt_detections": self.num_gt,
                "pred_detections": self.num_pred,
            },
            "pose": None,
        }
        if self.pose is not None:
            out["pose"] = {
                "mpjpe_mm": self.pose.mpjpe,
                "recall": self.pose.recall,
                "recall_at_mm": self.pose.recall_at,
                "ap": {f"{k:g}": v for k, v in self.pose.ap.items()},
                "gt_poses": self.pose.num_gt_poses,
                "pred_poses": self.pose.num_pred_poses,
            }
        return out

    def format_table(self) -> str:
        lines = [
            f"{'MOTA':>12}  {self.mota:8.2f} %",
            f"{'IDF1':>12}  {self.idf1:8.2f} %",
            f"{'FP':>12}  {self.fp:8d}",
            f"{'FN':>12}  {self.fn:8d}",
            f"{'IDS':>12}  {self.ids:8d}",
            f"{'OSPA(2)':>12}  {self.ospa:8.4f} m",
        ]
        if self.pose is not None:
            lines.append(f"{'MPJPE':>12}  {self.pose.mpjpe:8.2f} mm")
            for d in sorted(self.pose.ap):
                lines.append(f"{f'AP@{d:g}mm':>12}  {self.pose.ap[d]:8.2f} %")
            lines.append(
                f"{f'Recall@{self.pose.recall_at:g}':>12}  "
                f"{self.pose.recall:8.2f} %"
            )
        return "\n".join(lines)


def _on_plane(ts: TrackSet) -> TrackSet:
    positions = {
        oid: {f: np.array([p[0], p[1], 0.0]) for f, p in per_frame.items()}
        for oid, per_frame in ts.positions.items()
    }
    return TrackSet(positions=positions)


def evaluate_tracks(
    pred: TrackSet,
    gt: TrackSet,
    threshold: float = 1.0,
    ospa_cutoff: float = 1.0,
    ospa_order: float = 1.0,
    window: int | None = None,
    ap_thresholds: Sequence[float] = (25.0, 50.0, 100.0, 150.0),
    recall_at: float = 500.0,
    plane: bool = False,
) -> MetricReport:
    """Run the full evaluation battery on two track sets.

    ``plane=True`` scores CLEAR/IDF1/OSPA on ground-plane (x, y) distance
    only; pose metrics always use full 3D. Pose metrics appear only when the
    ground truth carries keypoints.
    """
    p, g = (_on_plane(pred), _on_plane(gt)) if plane else (pred, gt)
    mot = clear_mot(p, g, threshold)
    f1 = idf1(p, g, threshold)
    ospa = ospa2(p, g, cutoff=ospa_cutoff, order=ospa_order, window=window)
    pose = None
    if any(len(v) for v in gt.keypoints.values()):
        pose = pose_metrics(
            pred, gt, ap_thresholds=ap_thresholds, recall_at=recall_at
        )
    frames = sorted(set(gt.frames()) | set(pred.frames()))
    return MetricReport(
        mota=mot.mota,
        idf1=f1,
        fp=mot.fp,
        fn=mot.fn,
        ids=mot.ids,
        ospa=ospa,
        pose=pose,
        threshold=threshold,
        ospa_cutoff=ospa_cutoff,
        num_frames=len(frames),
        num_gt=g.num_detections(),
        num_pred=p.num_detections(),
    )
