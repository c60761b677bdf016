import io
from pathlib import Path

import numpy as np
import pytest

from pitchtrack.core import DetectionBatch
from pitchtrack.io import (
    ConfigError,
    MotFormatError,
    MotLine,
    RunConfig,
    load_embeddings,
    parse_config,
    parse_seeds,
    read_config,
    read_mot,
    save_embeddings,
    write_mot,
)
from pitchtrack.simulate import ScenarioConfig, base_profile, degrade, generate_scenario
from pitchtrack.tracker import TrackerConfig, run_sequence

EXAMPLE = Path(__file__).resolve().parents[1] / "configs" / "example.toml"


def _read(text):
    return read_mot(io.StringIO(text))


def test_detection_line():
    d = _read("1,-1,100.0,50.0,20.0,40.0,0.9,-1,-1,-1\n")
    b = d.detections[1]
    assert b.boxes.tolist() == [[100.0, 50.0, 20.0, 40.0]]
    assert b.confidences.tolist() == [0.9]
    assert d.tracks == {}


def test_track_line():
    d = _read("3,7,10,10,5,9,1,-1,-1,-1")
    ids, boxes, _ = d.tracks[3]
    assert ids.tolist() == [7] and boxes.tolist() == [[10.0, 10.0, 5.0, 9.0]]


def test_whitespace_tolerated():
    d = _read(" 2 , 4 ,1, 2 ,3,4, 0.5 ,-1,-1,-1\n\n")
    assert d.tracks[2][0].tolist() == [4]


@pytest.mark.parametrize(
    "line,msg",
    [
        ("1,-1,100,50,20", "expected 10 fields, got 5 (line 1)"),
        ("1,-1,a,50,20,40,0.9,-1,-1,-1", "non-numeric field 'a' (line 1)"),
        ("0,-1,1,1,1,1,0.9,-1,-1,-1", "frame must be >= 1"),
        ("1,-1,1,1,0,1,0.9,-1,-1,-1", "width and height"),
    ],
)
def test_malformed_lines(line, msg):
    with pytest.raises(MotFormatError, match=msg.replace("(", r"\(").replace(")", r"\)")):
        _read(line)


def test_error_names_line_number():
    with pytest.raises(MotFormatError, match=r"\(line 3\)"):
        _read("1,-1,1,1,1,1,1,-1,-1,-1\n1,-1,1,1,1,1,1,-1,-1,-1\n1,2,3\n")


def test_duplicate_track_id():
    with pytest.raises(MotFormatError, match="duplicate"):
        _read("1,4,1,1,1,1,1,-1,-1,-1\n1,4,2,2,1,1,1,-1,-1,-1\n")


def test_empty_file(tmp_path):
    assert _read("").frames == []
    p = tmp_path / "e.txt"
    write_mot([], p)
    assert p.read_bytes() == b""


def test_writer_format():
    buf = io.StringIO()
    write_mot([MotLine(2, 1, 3.0, -0.001, 5.555, 6.0, 0.9), MotLine(1, 9, 1, 1, 1, 1)], buf)
    assert buf.getvalue() == "1,9,1.00,1.00,1.00,1.00,1.00,-1,-1,-1\n2,1,3.00,0.00,5.55,6.00,0.90,-1,-1,-1\n"


@pytest.fixture(scope="module")
def sim():
    gt = generate_scenario(ScenarioConfig(seed=8, n_frames=60), render_backgrounds=False)
    p = base_profile("Q50", "Q50", gt.config.box_size)
    return gt, degrade(gt, p, 2)


def test_tracker_output_round_trip(sim, tmp_path):
    gt, dets = sim
    out = run_sequence(None, dets, TrackerConfig())
    p = tmp_path / "res.txt"
    write_mot(out, p)
    back = read_mot(p)
    assert sorted(back.tracks) == sorted(f for f, v in out.frames.items() if len(v[0]))
    for f, (ids, boxes, _) in back.tracks.items():
        o_ids, o_boxes, _ = out.frames[f]
        order = np.argsort(o_ids)
        assert ids.tolist() == o_ids[order].tolist()
        assert np.allclose(boxes, o_boxes[order], atol=0.005 + 1e-9)
    # a second pass is a fixed point, byte for byte
    q = tmp_path / "res2.txt"
    write_mot(back, q)
    assert q.read_bytes() == p.read_bytes()


def test_detection_round_trip_with_embeddings(sim, tmp_path):
    gt, dets = sim
    txt, emb = tmp_path / "d.txt", tmp_path / "d.emb.npy"
    write_mot(dets, txt)
    save_embeddings(dets, emb)
    back = read_mot(txt, emb).detection_batches(gt.n_frames)
    assert len(back) == len(dets)
    for a, b in zip(dets, back):
        assert a.frame == b.frame and len(a) == len(b)
        assert np.allclose(a.boxes, b.boxes, atol=0.005 + 1e-9)
        assert np.allclose(a.confidences, b.confidences, atol=0.005 + 1e-9)
        if len(a):
            assert np.allclose(a.embeddings, b.embeddings, atol=1e-5)
    write_mot(dets, tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_bytes() == txt.read_bytes()


def test_ground_truth_written_in_frame_id_order(sim, tmp_path):
    gt, _ = sim
    p = tmp_path / "gt.txt"
    write_mot(gt, p)
    keys = [tuple(map(int, line.split(",")[:2])) for line in p.read_text().splitlines()]
    assert keys == sorted(keys)
    assert len(keys) == gt.n_visible


def test_embedding_count_mismatch(sim, tmp_path):
    gt, dets = sim
    txt = tmp_path / "d.txt"
    write_mot(dets, txt)
    with pytest.raises(MotFormatError, match="rows"):
        read_mot(txt, np.ones((3, 16)))


def test_load_embeddings_renormalises(tmp_path):
    p = tmp_path / "e.npy"
    np.save(p, np.array([[3.0, 4.0]]))
    assert load_embeddings(p).tolist() == [[0.6, 0.8]]


def test_empty_batches_in_embedding_file(tmp_path):
    batches = [DetectionBatch.empty(1, 4), DetectionBatch.empty(2, 4)]
    save_embeddings(batches, tmp_path / "x.npy")
    assert np.load(tmp_path / "x.npy").size == 0


# --- configuration


def test_empty_config_is_default():
    cfg = parse_config({"scenario": {}, "tracker": {}})
    assert cfg.scenario.n_tracks == 32 and cfg.scenario.n_frames == 462
    assert cfg.tracker == TrackerConfig()
    assert read_config(None) == RunConfig()


def test_example_config_matches_defaults():
    cfg = read_config(EXAMPLE)
    d = RunConfig()
    assert (cfg.scenario, cfg.tracker, cfg.experiment, cfg.reid_noise) == (d.scenario, d.tracker, d.experiment, d.reid_noise)


def test_reid_patience_override():
    assert parse_config({"tracker": {"reid_patience": 60}}).tracker.reid_patience == 60


def test_type_errors_name_key_and_type():
    with pytest.raises(ConfigError, match="expected real for loc_sigma"):
        parse_config({"profiles": {"Q50/Q50": {"loc_sigma": "wide"}}})
    with pytest.raises(ConfigError, match="expected integer for n_tracks"):
        parse_config({"scenario": {"n_tracks": 3.5}})


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match=r"unknown key 'foo' in \[tracker\]"):
        parse_config({"tracker": {"foo": 1}})
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config({"trackers": {}})
    with pytest.raises(ConfigError, match="profile cell"):
        parse_config({"profiles": {"Q60/N": {}}})


def test_invalid_values_become_config_errors():
    with pytest.raises(ConfigError):
        parse_config({"tracker": {"gamma_decay": 1.5}})
    with pytest.raises(ConfigError):
        parse_config({"experiment": {"motion": "kalman"}})


def test_profile_targets_and_reid_levels():
    cfg = parse_config({"profiles": {"Normal/N": {"recall": 0.95, "fp_rate": 0.5}}, "reid": {"Q50": 0.8}})
    assert cfg.profiles[("Normal", "N")] == {"recall": 0.95, "fp_rate": 0.5}
    assert cfg.reid_noise["Q50"] == 0.8 and cfg.reid_noise["Normal"] == 1.0


@pytest.mark.parametrize("spec,want", [("0..4", (0, 1, 2, 3, 4)), ("3", (3,)), ("1,5,9", (1, 5, 9)), (7, (7,)), ([2, 4], (2, 4))])
def test_parse_seeds(spec, want):
    assert parse_seeds(spec) == want


@pytest.mark.parametrize("spec", ["4..1", "a..b", True, [1.5]])
def test_parse_seeds_rejects(spec):
    with pytest.raises(ConfigError):
        parse_seeds(spec)


def test_bad_toml(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[tracker\n")
    with pytest.raises(ConfigError, match="bad.toml"):
        read_config(p)
