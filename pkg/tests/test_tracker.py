"""Tracker tests: measurement closure, target birth, frame walking, and
multi-object runs (including the process-pool path)."""

import numpy as np
import pytest

from mvfuse import (
    AnnotationFrame,
    BBox,
    CameraModel,
    Ellipsoid,
    NoObservation,
    Track,
    TrackEntry,
    bbox_measurement,
    canonical_pose,
    init_target,
    project_ellipsoid_to_bbox,
    run_all,
    state_to_ellipsoid,
    track_object,
)
from mvfuse.errors import NonPositiveDepth, DegenerateConic
from mvfuse.filter import kalman_predict, make_motion_model, ukf_update
from mvfuse.tracker import POS_IDX, SHAPE_SLICE

from oracles import random_camera


def _cam(K, R, t, width=1920, height=1080):
    return CameraModel(
        intrinsics=K, rotation=R, translation=t, image_size=(width, height)
    )


def _state(position, half_axes, velocity=(0.0, 0.0, 0.0)):
    x = np.zeros(9)
    x[POS_IDX] = position
    x[[1, 3, 5]] = velocity
    x[SHAPE_SLICE] = np.log(half_axes)
    return x


def _box_for(cam, position, half_axes):
    return project_ellipsoid_to_bbox(
        cam, Ellipsoid(center=np.asarray(position), half_axes=np.asarray(half_axes))
    )


class TestStateToEllipsoid:
    def test_frozen_decoding(self):
        x = _state([1.0, 2.0, 0.5], [0.3, 0.4, 0.9])
        ell = state_to_ellipsoid(x)
        np.testing.assert_allclose(ell.center, [1.0, 2.0, 0.5])
        np.testing.assert_allclose(ell.half_axes, [0.3, 0.4, 0.9])

    def test_velocity_entries_ignored(self):
        a = state_to_ellipsoid(_state([0, 0, 1], [0.3, 0.3, 0.9]))
        b = state_to_ellipsoid(_state([0, 0, 1], [0.3, 0.3, 0.9], velocity=(5, -3, 2)))
        np.testing.assert_array_equal(a.center, b.center)
        np.testing.assert_array_equal(a.half_axes, b.half_axes)

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            state_to_ellipsoid(np.zeros(6))


class TestBBoxMeasurement:
    def test_matches_dual_quadric_projection(self):
        # The reduced conic form must agree with the transparent 4x4 dual
        # quadric route on generic states.
        rng = np.random.default_rng(42)
        for _ in range(50):
            K, R, t, w, h = random_camera(rng)
            cam = _cam(K, R, t, w, h)
            position = rng.uniform([-2, -2, 0.3], [2, 2, 1.8])
            half = rng.uniform(0.2, 1.0, size=3)
            got = bbox_measurement(cam)(_state(position, half))
            want = _box_for(cam, position, half).as_array()
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)

    def test_behind_camera_raises(self, axis_camera):
        h = bbox_measurement(axis_camera)
        with pytest.raises(NonPositiveDepth):
            h(_state([0.0, 0.0, -2.0], [0.3, 0.3, 0.9]))

    def test_camera_inside_ellipsoid_raises(self, axis_camera):
        h = bbox_measurement(axis_camera)
        with pytest.raises(DegenerateConic):
            h(_state([0.0, 0.0, 0.5], [2.0, 2.0, 2.0]))


class TestInitTarget:
    def test_single_camera_hand_case(self, overhead_camera, config):
        # Bottom-edge midpoint (600, 300) backprojects to ground (1, 2);
        # z starts at the default half-height.
        box = BBox(580.0, 240.0, 620.0, 300.0)
        state = init_target({0: box}, {0: overhead_camera}, config)
        mean, cov = state.belief.mean, state.belief.covariance
        np.testing.assert_allclose(mean[POS_IDX], [1.0, 2.0, 0.9], atol=1e-9)
        np.testing.assert_array_equal(mean[[1, 3, 5]], 0.0)
        np.testing.assert_allclose(
            mean[SHAPE_SLICE], np.log([0.3, 0.3, 0.9]), atol=1e-12
        )
        np.testing.assert_allclose(
            np.diag(cov),
            [0.25, 1.0, 0.25, 1.0, 0.25, 1.0, 0.05, 0.05, 0.05],
        )
        assert state.keypoints == []

    def test_two_cameras_average(self, overhead_camera, config):
        boxes = {
            0: BBox(580.0, 240.0, 620.0, 300.0),  # feet -> (1, 2)
            1: BBox(780.0, 40.0, 820.0, 100.0),  # feet -> (3, 4)
        }
        cams = {0: overhead_camera, 1: overhead_camera}
        state = init_target(boxes, cams, config)
        np.testing.assert_allclose(
            state.belief.mean[POS_IDX], [2.0, 3.0, 0.9], atol=1e-9
        )

    def test_degenerate_camera_skipped(self, overhead_camera, config):
        # A camera at ground height has a singular ground homography; its box
        # must not poison the average.
        ground_cam = _cam(
            overhead_camera.intrinsics,
            np.diag([1.0, -1.0, -1.0]),
            np.zeros(3),
            1000,
            1000,
        )
        box = BBox(580.0, 240.0, 620.0, 300.0)
        good = init_target({0: box}, {0: overhead_camera}, config)
        mixed = init_target(
            {0: box, 1: BBox(0.0, 0.0, 50.0, 50.0)},
            {0: overhead_camera, 1: ground_cam},
            config,
        )
        np.testing.assert_array_equal(good.belief.mean, mixed.belief.mean)

    def test_no_usable_camera_raises(self, config):
        ground_cam = _cam(
            np.array([[1000.0, 0, 500.0], [0, 1000.0, 500.0], [0, 0, 1.0]]),
            np.diag([1.0, -1.0, -1.0]),
            np.zeros(3),
            1000,
            1000,
        )
        with pytest.raises(NoObservation):
            init_target({0: BBox(0, 0, 10, 10)}, {0: ground_cam}, config)


def _two_camera_rig():
    """Overhead camera plus an oblique one, both seeing the arena center."""
    rng = np.random.default_rng(7)
    K, R, t, w, h = random_camera(rng, distance=9.0)
    overhead = _cam(
        np.array([[1000.0, 0, 500.0], [0, 1000.0, 500.0], [0, 0, 1.0]]),
        np.diag([1.0, -1.0, -1.0]),
        np.array([0.0, 0.0, 10.0]),
        1000,
        1000,
    )
    return {0: overhead, 1: _cam(K, R, t, w, h)}


def _annotations_for(cams, path, half=(0.3, 0.3, 0.9), frames=None, oid=1):
    """Boxes for an object moving along ``path`` (frame -> position)."""
    out = []
    for k in frames if frames is not None else sorted(path):
        boxes = {}
        if k in path:
            boxes = {
                oid: {cid: _box_for(cam, path[k], half) for cid, cam in cams.items()}
            }
        out.append(AnnotationFrame(frame=k, boxes=boxes))
    return out


class TestTrackObject:
    def test_matches_manual_replay(self, config):
        # The tracker must be exactly: init, then per frame (predict unless
        # birth) followed by one chained UKF update per camera in id order.
        cams = _two_camera_rig()
        half = (0.3, 0.3, 0.9)
        path = {k: np.array([0.5 + 0.1 * k, -0.4 + 0.05 * k, 0.9]) for k in range(4)}
        annotations = _annotations_for(cams, path)

        track = track_object(annotations, cams, config, object_id=1)

        state = init_target(
            {cid: _box_for(cam, path[0], half) for cid, cam in cams.items()},
            cams,
            config,
        )
        belief = state.belief
        motion = make_motion_model(config.dt, config.q_pos, config.q_shape)
        r_box = config.r_bbox * np.eye(4)
        for k in range(4):
            if k > 0:
                belief = kalman_predict(belief, motion)
            for cid in sorted(cams):
                belief = ukf_update(
                    belief,
                    _box_for(cams[cid], path[k], half).as_array(),
                    bbox_measurement(cams[cid]),
                    r_box,
                    alpha=config.alpha,
                    beta=config.beta,
                    kappa=config.kappa,
                )
            entry = track.entries[k]
            assert entry.frame == k
            np.testing.assert_array_equal(entry.position, belief.mean[POS_IDX])
            np.testing.assert_array_equal(
                entry.half_axes, np.exp(belief.mean[SHAPE_SLICE])
            )
            assert entry.keypoints is None

    def test_gap_frames_are_predict_only(self, config):
        cams = _two_camera_rig()
        path = {0: np.array([0.5, -0.4, 0.9]), 3: np.array([0.8, -0.25, 0.9])}
        annotations = _annotations_for(cams, path, frames=[0, 3])

        track = track_object(annotations, cams, config, object_id=1)
        assert [e.frame for e in track.entries] == [0, 1, 2, 3]

        motion = make_motion_model(config.dt, config.q_pos, config.q_shape)
        first = track_object(annotations[:1], cams, config, object_id=1).entries[-1]
        # Re-derive frames 1 and 2 by pure prediction from the frame-0 output.
        state = init_target(
            {cid: _box_for(cam, path[0], (0.3, 0.3, 0.9)) for cid, cam in cams.items()},
            cams,
            config,
        )
        b = state.belief
        r_box = config.r_bbox * np.eye(4)
        for cid in sorted(cams):
            b = ukf_update(
                b,
                _box_for(cams[cid], path[0], (0.3, 0.3, 0.9)).as_array(),
                bbox_measurement(cams[cid]),
                r_box,
                alpha=config.alpha,
                beta=config.beta,
                kappa=config.kappa,
            )
        for k in (1, 2):
            b = kalman_predict(b, motion)
            np.testing.assert_array_equal(track.entries[k].position, b.mean[POS_IDX])
        np.testing.assert_array_equal(first.position, track.entries[0].position)

    def test_track_spans_birth_to_last_observation(self, config):
        cams = _two_camera_rig()
        path = {3: np.array([0.5, -0.4, 0.9]), 5: np.array([0.6, -0.3, 0.9])}
        annotations = _annotations_for(cams, path, frames=[1, 3, 5, 7])
        track = track_object(annotations, cams, config, object_id=1)
        assert [e.frame for e in track.entries] == [3, 4, 5]

    def test_no_boxes_raises(self, config):
        cams = _two_camera_rig()
        annotations = [AnnotationFrame(frame=0, boxes={2: {0: BBox(0, 0, 5, 5)}})]
        with pytest.raises(NoObservation):
            track_object(annotations, cams, config, object_id=1)

    def test_failed_update_skipped_with_diagnostic(self, overhead_camera, config):
        # Camera 1 sits above the scene looking further up: the target is
        # behind it, every sigma point fails, and the update must be skipped
        # without killing the track.
        sky_cam = _cam(
            overhead_camera.intrinsics,
            np.eye(3),
            np.array([0.0, 0.0, -5.0]),
            1000,
            1000,
        )
        cams = {0: overhead_camera, 1: sky_cam}
        half = (0.3, 0.3, 0.9)
        pos = np.array([1.0, 2.0, 0.9])
        good_box = _box_for(overhead_camera, pos, half)
        annotations = [
            AnnotationFrame(frame=0, boxes={1: {0: good_box}}),
            AnnotationFrame(
                frame=1, boxes={1: {0: good_box, 1: BBox(100, 100, 200, 200)}}
            ),
        ]
        events = []
        track = track_object(
            annotations, cams, config, object_id=1, on_event=events.append
        )
        assert len(track.entries) == 2
        assert [
            (d.kind, d.object_id, d.frame, d.camera_id) for d in events
        ] == [("update_skipped", 1, 1, 1)]

    def test_keypoints_attached_when_annotated(self, config):
        cams = _two_camera_rig()
        skeleton = canonical_pose("panoptic15")
        pos = np.array([0.5, -0.4, 0.9])
        half = (0.3, 0.3, 0.9)
        boxes = {1: {cid: _box_for(cam, pos, half) for cid, cam in cams.items()}}
        kp_rows = np.hstack(
            [np.full((15, 2), 500.0), np.ones((15, 1))]
        )
        annotations = [
            AnnotationFrame(frame=0, boxes=boxes),
            AnnotationFrame(frame=1, boxes=boxes, keypoints={1: {0: kp_rows}}),
        ]
        track = track_object(
            annotations, cams, config, object_id=1, skeleton=skeleton
        )
        for e in track.entries:
            assert e.keypoints is not None
            assert e.keypoints.shape == (15, 3)

    def test_no_keypoint_annotations_means_none(self, config):
        # A configured skeleton alone is not enough: without keypoint
        # annotations anywhere the per-joint filters are never started.
        cams = _two_camera_rig()
        path = {0: np.array([0.5, -0.4, 0.9])}
        annotations = _annotations_for(cams, path)
        track = track_object(
            annotations, cams, config, object_id=1,
            skeleton=canonical_pose("panoptic15"),
        )
        assert track.entries[0].keypoints is None


class TestRunAll:
    def test_recovers_ground_truth(self, small_scene, config):
        bundle, gt = small_scene
        tracks = run_all(bundle.annotations, bundle.calibration, config)
        assert [t.object_id for t in tracks] == sorted(gt.positions)
        for t in tracks:
            last = t.entries[-1]
            np.testing.assert_allclose(
                last.position, gt.positions[t.object_id][last.frame], atol=1e-3
            )

    def test_workers_do_not_change_results(self, small_scene, config):
        bundle, _ = small_scene
        serial = run_all(bundle.annotations, bundle.calibration, config, workers=1)
        parallel = run_all(bundle.annotations, bundle.calibration, config, workers=2)
        assert len(serial) == len(parallel)
        for a, b in zip(serial, parallel):
            assert a.object_id == b.object_id
            assert len(a.entries) == len(b.entries)
            for ea, eb in zip(a.entries, b.entries):
                assert ea.frame == eb.frame
                np.testing.assert_array_equal(ea.position, eb.position)
                np.testing.assert_array_equal(ea.half_axes, eb.half_axes)

    def test_boxless_object_omitted_with_event(self, overhead_camera, config):
        pos = np.array([1.0, 2.0, 0.9])
        box = _box_for(overhead_camera, pos, (0.3, 0.3, 0.9))
        kp_rows = np.hstack([np.full((15, 2), 500.0), np.ones((15, 1))])
        annotations = [
            AnnotationFrame(
                frame=0,
                boxes={1: {0: box}},
                keypoints={7: {0: kp_rows}},  # object 7 never gets a box
            )
        ]
        events = []
        tracks = run_all(
            annotations, {0: overhead_camera}, config, on_event=events.append
        )
        assert [t.object_id for t in tracks] == [1]
        assert [(d.kind, d.object_id) for d in events] == [("no_observation", 7)]


class TestContainers:
    def test_entry_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            TrackEntry(frame=0, position=[np.nan, 0, 0], half_axes=[1, 1, 1])

    def test_entry_rejects_nonpositive_axes(self):
        with pytest.raises(ValueError):
            TrackEntry(frame=0, position=[0, 0, 0], half_axes=[1.0, 0.0, 1.0])

    def test_entry_rejects_bad_keypoint_shape(self):
        with pytest.raises(ValueError):
            TrackEntry(
                frame=0,
                position=[0, 0, 1],
                half_axes=[1, 1, 1],
                keypoints=np.zeros((4, 2)),
            )

    def test_entry_arrays_read_only(self):
        e = TrackEntry(frame=0, position=[0, 0, 1], half_axes=[1, 1, 1])
        with pytest.raises(ValueError):
            e.position[0] = 5.0

    def test_track_requires_increasing_frames(self):
        e0 = TrackEntry(frame=2, position=[0, 0, 1], half_axes=[1, 1, 1])
        e1 = TrackEntry(frame=2, position=[0, 0, 1], half_axes=[1, 1, 1])
        with pytest.raises(ValueError):
            Track(object_id=0, entries=(e0, e1))

    def test_annotation_frame_rejects_negative(self):
        with pytest.raises(ValueError):
            AnnotationFrame(frame=-1)
