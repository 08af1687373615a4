"""Metric tests built around small hand-checkable scenarios plus seeded
randomized checks of the OSPA metric axioms."""

import json

import numpy as np
import pytest

from mvfuse import (
    EmptyGroundTruth,
    Track,
    TrackEntry,
    TrackSet,
    clear_mot,
    evaluate_tracks,
    idf1,
    ospa2,
    pose_metrics,
)


def _still(frames, xyz):
    """frame -> position dict for an object parked at ``xyz``."""
    p = np.asarray(xyz, dtype=np.float64)
    return {f: p.copy() for f in frames}


def _ts(positions, keypoints=None):
    return TrackSet(positions=positions, keypoints=keypoints or {})


class TestClearMot:
    def test_perfect(self):
        gt = _ts({0: _still(range(5), (1, 2, 0)), 1: _still(range(5), (4, 1, 0))})
        res = clear_mot(gt, gt)
        assert (res.fp, res.fn, res.ids) == (0, 0, 0)
        assert res.mota == 100.0

    def test_identity_switch_frozen(self):
        # One GT object over two frames, covered by two different pred ids:
        # exactly one switch, MOTA = 100 * (1 - 1/2) = 50.
        gt = _ts({0: _still([0, 1], (0, 0, 0))})
        pred = _ts({10: _still([0], (0, 0, 0)), 11: _still([1], (0, 0, 0))})
        res = clear_mot(pred, gt)
        assert (res.fp, res.fn, res.ids) == (0, 0, 1)
        assert res.mota == 50.0

    def test_occlusion_gap_keeps_identity(self):
        # Prediction briefly missing: two misses but no switch on return.
        gt = _ts({0: _still(range(5), (2, 2, 0))})
        pred = _ts({7: _still([0, 1, 4], (2, 2, 0))})
        res = clear_mot(pred, gt)
        assert (res.fp, res.fn, res.ids) == (0, 2, 0)
        assert res.mota == 60.0

    def test_false_positive_counted(self):
        gt = _ts({0: _still([0], (0, 0, 0))})
        pred = _ts({0: _still([0], (0, 0, 0)), 9: _still([0], (8, 8, 0))})
        res = clear_mot(pred, gt)
        assert (res.fp, res.fn, res.ids) == (1, 0, 0)

    def test_outside_gate_is_fp_and_fn(self):
        gt = _ts({0: _still([0], (0, 0, 0))})
        pred = _ts({0: _still([0], (1.5, 0, 0))})
        res = clear_mot(pred, gt, threshold=1.0)
        assert (res.fp, res.fn) == (1, 1)
        assert res.mota == -100.0

    def test_gate_is_inclusive(self):
        gt = _ts({0: _still([0], (0, 0, 0))})
        pred = _ts({0: _still([0], (1.0, 0, 0))})
        res = clear_mot(pred, gt, threshold=1.0)
        assert (res.fp, res.fn) == (0, 0)

    def test_empty_gt_raises(self):
        with pytest.raises(EmptyGroundTruth):
            clear_mot(_ts({0: _still([0], (0, 0, 0))}), _ts({}))


class TestIdf1:
    def test_perfect(self):
        gt = _ts({0: _still(range(4), (1, 1, 0)), 1: _still(range(4), (3, 3, 0))})
        assert idf1(gt, gt) == 100.0

    def test_half_coverage_frozen(self):
        # 4 GT detections, 2 covered: IDF1 = 100 * 2*2 / (4 + 2) = 66.67.
        gt = _ts({0: _still(range(4), (1, 1, 0))})
        pred = _ts({5: _still([0, 1], (1, 1, 0))})
        assert idf1(pred, gt) == pytest.approx(200.0 / 3.0)

    def test_identity_split_frozen(self):
        # The frame-level switch scenario: trajectory assignment can pick
        # only one of the two fragments, IDF1 = 100 * 2*1 / (2 + 2) = 50.
        gt = _ts({0: _still([0, 1], (0, 0, 0))})
        pred = _ts({10: _still([0], (0, 0, 0)), 11: _still([1], (0, 0, 0))})
        assert idf1(pred, gt) == 50.0

    def test_no_predictions_scores_zero(self):
        gt = _ts({0: _still([0], (0, 0, 0))})
        assert idf1(_ts({}), gt) == 0.0

    def test_empty_gt_raises(self):
        with pytest.raises(EmptyGroundTruth):
            idf1(_ts({}), _ts({}))


def _random_trackset(rng, max_objects=4, frames=10):
    positions = {}
    for oid in range(rng.integers(0, max_objects + 1)):
        present = rng.random(frames) < 0.7
        if not present.any():
            continue
        positions[oid] = {
            f: rng.uniform(-2.0, 2.0, size=3) for f in range(frames) if present[f]
        }
    return _ts(positions)


class TestOspa2:
    def test_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            ts = _random_trackset(rng)
            assert ospa2(ts, ts) == 0.0

    def test_both_empty(self):
        assert ospa2(_ts({}), _ts({})) == 0.0

    def test_one_empty_saturates(self):
        ts = _ts({0: _still(range(3), (0, 0, 0))})
        assert ospa2(_ts({}), ts, cutoff=0.7) == 0.7
        assert ospa2(ts, _ts({}), cutoff=0.7) == 0.7

    def test_far_prediction_saturates(self):
        gt = _ts({0: _still(range(4), (0, 0, 0))})
        pred = _ts({0: _still(range(4), (50, 0, 0))})
        assert ospa2(pred, gt, cutoff=1.0) == 1.0

    def test_missing_frame_hand_value(self):
        # Identical tracks except one of ten frames missing on the pred side:
        # base distances are nine zeros and one cutoff, so OSPA = 0.1.
        gt = _ts({0: _still(range(10), (1, 1, 0))})
        pred = _ts({0: _still(range(1, 10), (1, 1, 0))})
        assert ospa2(pred, gt, cutoff=1.0) == pytest.approx(0.1)

    def test_window_drops_old_frames(self):
        gt = _ts({0: _still(range(10), (1, 1, 0))})
        pred = _ts({0: _still(range(1, 10), (1, 1, 0))})
        assert ospa2(pred, gt, window=5) == 0.0
        assert ospa2(pred, gt, window=10) == pytest.approx(0.1)

    def test_cardinality_penalty_orders(self):
        # Pred misses one of two GT tracks: ((0 + c^p) / 2)^(1/p).
        gt = _ts(
            {0: _still(range(10), (0, 0, 0)), 1: _still(range(10), (5, 5, 0))}
        )
        pred = _ts({0: _still(range(10), (0, 0, 0))})
        assert ospa2(pred, gt, cutoff=1.0, order=1.0) == pytest.approx(0.5)
        assert ospa2(pred, gt, cutoff=1.0, order=2.0) == pytest.approx(np.sqrt(0.5))

    def test_metric_axioms_randomized(self):
        rng = np.random.default_rng(17)
        for _ in range(60):
            a = _random_trackset(rng)
            b = _random_trackset(rng)
            c = _random_trackset(rng)
            dab = ospa2(a, b)
            dba = ospa2(b, a)
            dac = ospa2(a, c)
            dbc = ospa2(b, c)
            assert 0.0 <= dab <= 1.0
            assert abs(dab - dba) < 1e-12
            assert dac <= dab + dbc + 1e-9

    def test_parameter_validation(self):
        ts = _ts({0: _still([0], (0, 0, 0))})
        with pytest.raises(ValueError):
            ospa2(ts, ts, cutoff=0.0)
        with pytest.raises(ValueError):
            ospa2(ts, ts, order=0.5)
        with pytest.raises(ValueError):
            ospa2(ts, ts, window=0)


def _pose(offset=(0.0, 0.0, 0.0), joints=4):
    base = np.linspace(0.0, 1.0, joints * 3).reshape(joints, 3)
    return base + np.asarray(offset, dtype=np.float64)


class TestPoseMetrics:
    def test_exact_match(self):
        kp = {0: {f: _pose() for f in range(3)}}
        gt = _ts({0: _still(range(3), (0, 0, 0))}, keypoints=kp)
        res = pose_metrics(gt, gt)
        assert res.mpjpe == 0.0
        assert res.recall == 100.0
        assert all(v == 100.0 for v in res.ap.values())
        assert res.num_gt_poses == res.num_pred_poses == 3

    def test_uniform_offset_frozen(self):
        # Every joint off by 30 mm: MPJPE 30, AP@25 = 0, AP@50 = 100.
        gt = _ts({0: {}}, keypoints={0: {0: _pose()}})
        pred = _ts({0: {}}, keypoints={0: {0: _pose(offset=(0.03, 0, 0))}})
        res = pose_metrics(pred, gt, ap_thresholds=(25.0, 50.0))
        assert res.mpjpe == pytest.approx(30.0)
        assert res.ap[25.0] == 0.0
        assert res.ap[50.0] == 100.0
        assert res.recall == 100.0

    def test_hungarian_resolves_crossed_ids(self):
        gt = _ts(
            {0: {}, 1: {}},
            keypoints={
                0: {0: _pose()},
                1: {0: _pose(offset=(1.0, 0, 0))},
            },
        )
        pred = _ts(
            {5: {}, 6: {}},
            keypoints={
                5: {0: _pose(offset=(1.0, 0, 0))},
                6: {0: _pose()},
            },
        )
        res = pose_metrics(pred, gt)
        assert res.mpjpe == 0.0
        assert res.recall == 100.0

    def test_beyond_recall_gate_unmatched(self):
        gt = _ts({0: {}}, keypoints={0: {0: _pose()}})
        pred = _ts({0: {}}, keypoints={0: {0: _pose(offset=(0.6, 0, 0))}})
        res = pose_metrics(pred, gt, recall_at=500.0)
        assert res.recall == 0.0
        assert np.isnan(res.mpjpe)

    def test_partial_coverage_recall(self):
        kp_gt = {0: {f: _pose() for f in range(2)}, 1: {f: _pose() for f in range(2)}}
        kp_pred = {0: {0: _pose()}, 1: {0: _pose()}}
        gt = _ts({0: {}, 1: {}}, keypoints=kp_gt)
        pred = _ts({0: {}, 1: {}}, keypoints=kp_pred)
        res = pose_metrics(pred, gt)
        assert res.recall == 50.0

    def test_joint_count_mismatch_raises(self):
        gt = _ts({0: {}}, keypoints={0: {0: _pose(joints=4)}})
        pred = _ts({0: {}}, keypoints={0: {0: _pose(joints=5)}})
        with pytest.raises(ValueError, match="mismatch"):
            pose_metrics(pred, gt)

    def test_no_gt_keypoints_raises(self):
        pred = _ts({0: {}}, keypoints={0: {0: _pose()}})
        with pytest.raises(EmptyGroundTruth):
            pose_metrics(pred, _ts({0: _still([0], (0, 0, 0))}))


class TestEvaluateTracks:
    def test_plane_flag_ignores_height(self):
        gt = _ts({0: _still(range(4), (1, 2, 0))})
        pred = _ts({0: _still(range(4), (1, 2, 5))})
        full = evaluate_tracks(pred, gt)
        flat = evaluate_tracks(pred, gt, plane=True)
        assert full.mota < 0
        assert flat.mota == 100.0 and flat.idf1 == 100.0 and flat.ospa == 0.0

    def test_report_serializes(self):
        kp = {0: {f: _pose() for f in range(3)}}
        gt = _ts({0: _still(range(3), (0, 0, 0))}, keypoints=kp)
        report = evaluate_tracks(gt, gt)
        d = json.loads(json.dumps(report.to_dict()))
        assert d["mota"] == 100.0
        assert d["ospa2"] == 0.0
        assert d["counts"]["gt_detections"] == 3
        assert d["pose"]["mpjpe_mm"] == 0.0
        table = report.format_table()
        assert "MOTA" in table and "MPJPE" in table

    def test_pose_section_optional(self):
        gt = _ts({0: _still(range(3), (0, 0, 0))})
        report = evaluate_tracks(gt, gt)
        assert report.pose is None
        assert report.to_dict()["pose"] is None
        assert "MPJPE" not in report.format_table()


class TestTrackSet:
    def test_from_tracks(self):
        kp = np.zeros((3, 3))
        entries = (
            TrackEntry(frame=0, position=[1, 2, 0.9], half_axes=[0.3, 0.3, 0.9]),
            TrackEntry(
                frame=1,
                position=[1.1, 2, 0.9],
                half_axes=[0.3, 0.3, 0.9],
                keypoints=kp,
            ),
        )
        ts = TrackSet.from_tracks([Track(object_id=4, entries=entries)])
        assert ts.num_detections() == 2
        assert ts.frames() == [0, 1]
        np.testing.assert_array_equal(ts.positions[4][0], [1, 2, 0.9])
        np.testing.assert_array_equal(ts.half_axes[4][1], [0.3, 0.3, 0.9])
        assert 0 not in ts.keypoints.get(4, {})
        np.testing.assert_array_equal(ts.keypoints[4][1], kp)

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            _ts({0: {0: np.zeros(2)}})
        with pytest.raises(ValueError):
            TrackSet(positions={}, keypoints={0: {0: np.zeros((4, 2))}})

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            _ts({0: {0: np.array([np.inf, 0, 0])}})

    def test_arrays_read_only(self):
        ts = _ts({0: _still([0], (1, 1, 0))})
        with pytest.raises(ValueError):
            ts.positions[0][0][0] = 9.0
