import math

import numpy as np
import pytest

from pitchtrack.core import BoundingBox, Detection, DetectionBatch
from pitchtrack.motion import GrayImage, Warp
from pitchtrack.simulate import QualityProfile, ScenarioConfig, degrade, generate_scenario
from pitchtrack.tracker import (
    ACTIVE,
    DegenerateEmbeddingError,
    MotionInputsError,
    NonMonotonicFrameError,
    TrackerConfig,
    TrackerState,
    embedding_distance,
    run_sequence,
    step,
)

from oracles import blob_image

E1 = np.eye(16)[0]
E2 = np.eye(16)[1]


def _det(frame, x, y=0.0, conf=0.9, emb=E1, w=10.0, h=25.0):
    return Detection(frame, BoundingBox(x, y, w, h), conf, emb)


def _ids_per_frame(out):
    return {f: sorted(ids.tolist()) for f, (ids, _, _) in out.frames.items()}


def test_stationary_object_single_track():
    dets = [[_det(f, 50.0)] for f in range(1, 21)]
    for motion in ("none", "cva"):
        out = run_sequence(None, dets, TrackerConfig(motion=motion))
        assert out.track_ids() == [1]
        assert not [e for e in out.events if e[1] == "kill"]
        assert out.n_boxes == 20


def _gap_sequence(k=10):
    # visible frames 1-10, hidden for k frames, visible again for 10 frames
    seq = []
    for f in range(1, 21 + k):
        seq.append([_det(f, 50.0)] if f <= 10 or f > 10 + k else [])
    return seq


def test_gap_bridged_by_reid():
    out = run_sequence(None, _gap_sequence(), TrackerConfig(reid_enabled=True))
    assert out.track_ids() == [1]
    kinds = [k for _, k, _ in out.events]
    assert kinds == ["spawn", "park", "revive"]


def test_gap_fragments_without_reid():
    out = run_sequence(None, _gap_sequence(), TrackerConfig(reid_enabled=False))
    assert out.track_ids() == [1, 2]


def test_gap_longer_than_patience_not_revived():
    cfg = TrackerConfig(reid_enabled=True, reid_patience=5)
    out = run_sequence(None, _gap_sequence(k=15), cfg)
    assert out.track_ids() == [1, 2]
    assert ("kill", 1) in [(k, i) for _, k, i in out.events]


def test_reid_rejects_distant_embedding():
    seq = _gap_sequence()
    seq = [[_det(d.frame, d.box.x, emb=E2 if d.frame > 20 else E1) for d in frame] for frame in seq]
    out = run_sequence(None, seq, TrackerConfig(reid_enabled=True))
    assert out.track_ids() == [1, 2]


def test_score_dynamics_bound():
    cfg = TrackerConfig()
    s0 = 0.95
    dets = [[_det(1, 50.0, conf=s0)]] + [[] for _ in range(30)]
    state = TrackerState.create(cfg)
    left = None
    for f, d in enumerate(dets, start=1):
        step(state, f, d)
        if left is None and 1 not in state.active:
            left = f
        elif left is None and f > 1:
            assert state.tracks[1].scores[f] < state.tracks[1].scores[f - 1]
    bound = math.ceil(math.log(cfg.sigma_active / s0) / math.log(cfg.gamma_decay))
    assert left - 1 <= bound


def test_crossing_identical_embeddings_keeps_two_tracks():
    seq = []
    for f in range(1, 41):
        a = 5.0 * f
        b = 200.0 - 5.0 * f
        seq.append([_det(f, a, emb=E1), _det(f, b, emb=E1)])
    out = run_sequence(None, seq, TrackerConfig(reid_enabled=True))
    ids, _, _ = out.frames[40]
    assert len(ids) == 2 and len(set(ids.tolist())) == 2


def test_nms_parks_weaker_track():
    cfg = TrackerConfig()
    state = TrackerState.create(cfg)
    step(state, 1, [_det(1, 0.0, conf=0.9), _det(1, 20.0, conf=0.7, emb=E2)])
    step(state, 2, [_det(2, 4.0, conf=0.9), _det(2, 16.0, conf=0.7, emb=E2)])
    assert sorted(state.active) == [1, 2]
    # both refine onto boxes overlapping by 2/3
    step(state, 3, [_det(3, 9.0, conf=0.9), _det(3, 11.0, conf=0.7, emb=E2)])
    assert state.active == [1]
    assert state.tracks[2].status == "inactive"


def test_non_monotonic_frame():
    state = TrackerState.create()
    step(state, 2, [])
    with pytest.raises(NonMonotonicFrameError, match="non-monotonic frame"):
        step(state, 2, [])


def test_cmc_needs_inputs():
    with pytest.raises(MotionInputsError, match="motion inputs required"):
        run_sequence(None, [[_det(1, 0.0)], [_det(2, 0.0)]], TrackerConfig(motion="cmc"))
    state = TrackerState.create(TrackerConfig(motion="cmc"))
    step(state, 1, [_det(1, 0.0)])
    with pytest.raises(MotionInputsError):
        step(state, 2, [])


def _panning(dx=6.0):
    # world-static player; the camera pans so it drifts dx px per frame, hidden on frames 6-8
    seq, warps = [], [Warp.identity()]
    for f in range(1, 13):
        seq.append([] if 6 <= f <= 8 else [_det(f, 20.0 + dx * (f - 1), w=30.0)])
        if f > 1:
            warps.append(Warp("translation", -dx, 0.0))
    return seq, warps


@pytest.mark.parametrize("motion,n_ids", [("none", 2), ("cmc", 1), ("cva", 1), ("cva+cmc", 1)])
def test_motion_models_bridge_pan(motion, n_ids):
    seq, warps = _panning()
    out = run_sequence(None, seq, TrackerConfig(motion=motion, reid_enabled=False), warps=warps)
    # with cmc the velocity is measured after compensation, so the pan is not counted twice
    assert len(out.track_ids()) == n_ids


def test_cmc_from_backgrounds():
    blobs = [(20, 22, 6, 1.0), (44, 30, 8, 0.7), (30, 46, 5, -0.6)]
    bg1 = GrayImage.from_array(np.array(blob_image(blobs)))
    bg2 = GrayImage.from_array(np.array(blob_image(blobs, dx=3.0)))
    state = TrackerState.create(TrackerConfig(motion="cmc"))
    step(state, 1, [_det(1, 10.0)])
    step(state, 2, [], bg1, bg2)
    assert state.tracks[1].box[0] == pytest.approx(13.0, abs=0.05)


def test_embedding_distance_examples():
    assert embedding_distance(E1, E1) == 0.0
    assert embedding_distance(E1, E2) == pytest.approx(math.sqrt(2))
    assert embedding_distance(E1, -E1) == pytest.approx(2.0)
    with pytest.raises(DegenerateEmbeddingError, match="degenerate embedding"):
        embedding_distance(E1, np.zeros(16))


def test_config_validation():
    with pytest.raises(ValueError):
        TrackerConfig(gamma_decay=1.0)
    with pytest.raises(ValueError):
        TrackerConfig(reid_patience=0)
    with pytest.raises(ValueError):
        TrackerConfig(motion="kalman")


@pytest.fixture(scope="module")
def perfect():
    gt = generate_scenario(ScenarioConfig(seed=3, n_frames=150), render_backgrounds=False)
    return gt, degrade(gt, QualityProfile(conf_mean=0.9), seed=0)


def test_reid_never_hurts_perfect_data(perfect):
    gt, dets = perfect
    on = run_sequence(None, dets, TrackerConfig(reid_enabled=True))
    off = run_sequence(None, dets, TrackerConfig(reid_enabled=False))
    assert _ids_per_frame(on) == _ids_per_frame(off)
    assert all(np.array_equal(on.frames[f][1], off.frames[f][1]) for f in on.frames)


def _visible_spans(gt):
    spans = 0
    for t in range(gt.visible.shape[1]):
        v = gt.visible[:, t].astype(int)
        spans += int(v[0]) + int(np.sum(np.diff(v) == 1))
    return spans


def test_perfect_detections_one_track_per_span(perfect):
    gt, dets = perfect
    out = run_sequence(None, dets, TrackerConfig(reid_enabled=False))
    n_park = sum(1 for _, k, _ in out.events if k == "park")
    # every visible span starts one id; a suppressed occluder may come back as one more
    spans = _visible_spans(gt)
    assert spans <= len(out.track_ids()) <= spans + n_park
    with_reid = run_sequence(None, dets, TrackerConfig(reid_enabled=True))
    assert len(with_reid.track_ids()) <= len(out.track_ids())


def test_output_invariants(perfect):
    gt, dets = perfect
    p = QualityProfile(miss_rate=0.2, fp_rate=1.0, loc_sigma=0.05, conf_mean=0.8, conf_sigma=0.15, embed_sigma=0.3)
    out = run_sequence(None, degrade(gt, p, 5), TrackerConfig())
    inactive = set()
    spans = {}
    for f, kind, tid in out.events:
        if kind == "revive":
            assert tid in inactive
            inactive.discard(tid)
        elif kind == "park":
            inactive.add(tid)
    for f, (ids, _, _) in out.frames.items():
        assert len(ids) == len(set(ids.tolist()))
        for i in ids.tolist():
            spans.setdefault(i, []).append(f)
    # an active track is reported on every frame between its (re)starts and parks
    starts = {}
    for f, kind, tid in out.events:
        if kind in ("spawn", "revive"):
            starts[tid] = f
        elif kind == "park" and tid in starts:
            assert all(g in spans[tid] for g in range(starts.pop(tid), f))
    again = run_sequence(None, degrade(gt, p, 5), TrackerConfig())
    assert _ids_per_frame(again) == _ids_per_frame(out) and again.events == out.events


def test_empty_detections_no_tracks():
    out = run_sequence(None, [DetectionBatch.empty(f) for f in range(1, 6)])
    assert out.track_ids() == [] and out.events == []


def test_empty_sequence_rejected():
    with pytest.raises(ValueError):
        run_sequence(None, [])


def test_status_values():
    state = TrackerState.create()
    step(state, 1, [_det(1, 0.0)])
    assert state.tracks[1].status == ACTIVE
