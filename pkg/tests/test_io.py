import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from textrack import io as fio
from textrack.detection import Detection, TextInstance
from textrack.metrics import GroundTruth
from textrack.synth import ScenarioSpec, generate
from textrack.tracker import TrackerConfig, TrackingResult, TrajectorySummary, VideoInput, run_video


def random_detections(rng, n_frames=40, n=1000):
    per = [[] for _ in range(n_frames)]
    for _ in range(n):
        t = int(rng.integers(n_frames))
        quad = rng.uniform(-1e3, 1e4, size=(4, 2)) * rng.choice([1e-6, 1.0, 1e3])
        emb = rng.normal(size=int(rng.integers(1, 6))) if rng.random() < 0.5 else None
        words = rng.choice([None, "", "EXIT", 'say "hi"', "café 東京", "a b\tc\\"])
        per[t].append(Detection(quad, float(rng.random()), emb, words, int(rng.integers(-1, 50))))
    return per


def assert_same_detections(a, b):
    assert len(a) == len(b)
    for fa, fb in zip(a, b):
        assert len(fa) == len(fb)
        for x, y in zip(fa, fb):
            np.testing.assert_array_equal(x.quad, y.quad)
            assert (x.confidence, x.transcription, x.hint) == (y.confidence, y.transcription, y.hint)
            if x.embedding is None:
                assert y.embedding is None
            else:
                np.testing.assert_array_equal(x.embedding, y.embedding)


def test_detection_round_trip_1000(tmp_path):
    per = random_detections(np.random.default_rng(0))
    path = tmp_path / "dets.txt"
    fio.write_detections(path, per)
    # trailing empty frames are not representable; compare the populated prefix
    last = max(t for t, f in enumerate(per) if f) + 1
    assert_same_detections(fio.load_detections(path), per[:last])


def test_detection_simple_cases():
    assert fio.parse_detections("") == []
    dets = fio.parse_detections('2 7 0 0 10 0 10 5 0 5 0.75 "STOP"\n')
    assert [len(f) for f in dets] == [0, 0, 1]
    d = dets[2][0]
    assert (d.hint, d.confidence, d.transcription, d.embedding) == (7, 0.75, "STOP", None)
    np.testing.assert_array_equal(d.quad, [[0, 0], [10, 0], [10, 5], [0, 5]])
    assert fio.parse_detections("# comment\n\n0 -1 0 0 1 0 1 1 0 1 1 2 0.5 -0.5\n")[0][0].embedding.tolist() == [0.5, -0.5]


@pytest.mark.parametrize("line,col", [
    ("0 -1 0 0 1 0 1 1 0 1 1.5", 22),
    ("x -1 0 0 1 0 1 1 0 1 0.5", 1),
    ("0 -1 0 0 1 0 1 1 0", None),
    ("0 -1 0 0 1 0 1 nan 0 1 0.5", 16),
    ("0 -1 0 0 1 0 1 1 0 1 0.5 3 1 2", None),
    ("0 -1 0 0 1 0 1 1 0 1 0.5 \"open", 26),
    ("0 -1 0 0 1 0 1 1 0 1 0.5 junk", 26),
])
def test_detection_errors_are_located(line, col):
    with pytest.raises(fio.FormatError) as info:
        fio.parse_detections("0 -1 0 0 1 0 1 1 0 1 0.5\n" + line + "\n", path="d.txt")
    assert info.value.line == 2
    if col is not None:
        assert info.value.column == col
    assert str(info.value).startswith("d.txt:2")


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=8, max_size=8),
       st.floats(0, 1), st.text(max_size=12))
def test_single_detection_round_trip_property(coords, conf, words):
    det = Detection(np.array(coords).reshape(4, 2), conf, transcription=words)
    back = fio.parse_detections(fio.format_detection(0, det))[0][0]
    np.testing.assert_array_equal(back.quad, det.quad)
    assert back.confidence == conf and back.transcription == words


def test_synth_ground_truth_round_trips_bitwise(tmp_path):
    for seed in range(3):
        gt = generate(ScenarioSpec(tracks=6, frames=20, width=256, height=192, seed=seed, jitter_sigma=0.7)).gt
        path = tmp_path / f"gt{seed}.txt"
        fio.write_ground_truth(path, gt)
        back = fio.load_ground_truth(path)
        assert sorted(back.trajectories) == sorted(gt.trajectories)
        for gid, items in gt.trajectories.items():
            for (f1, q1, w1), (f2, q2, w2) in zip(items, back.trajectories[gid]):
                assert (f1, w1) == (f2, w2)
                assert q1.tobytes() == q2.tobytes()
        assert fio.dump_ground_truth(back) == path.read_text()


def test_ground_truth_small_and_duplicates():
    assert fio.parse_ground_truth("").trajectories == {}
    text = "".join(f"{t} {gid} 0 0 4 0 4 2 0 2\n" for t in (2, 0, 1) for gid in (5, 9))
    gt = fio.parse_ground_truth(text)
    assert sorted(gt.trajectories) == [5, 9]
    assert [f for f, _, _ in gt.trajectories[5]] == [0, 1, 2]
    with pytest.raises(fio.FormatError) as info:
        fio.parse_ground_truth(text + "1 9 0 0 1 0 1 1 0 1\n")
    assert info.value.line == 7


ICDAR = """<?xml version="1.0" encoding="us-ascii"?>
<Frames>
  <frame ID="1">
    <object Transcription="EXIT" ID="3" Language="Latin" Quality="MODERATE">
      <Point x="10" y="20"/><Point x="50" y="20"/><Point x="50" y="35"/><Point x="10" y="35"/>
    </object>
  </frame>
  <frame ID="2"/>
  <frame ID="3">
    <object Transcription="EXIT" ID="3"><Point x="12" y="20"/><Point x="52" y="20"/><Point x="52" y="35"/><Point x="12" y="35"/></object>
    <object ID="4"><Point x="0" y="0"/><Point x="5" y="0"/><Point x="5" y="5"/><Point x="0" y="5"/></object>
  </frame>
</Frames>
"""


def test_icdar_import(tmp_path):
    path = tmp_path / "gt.xml"
    path.write_text(ICDAR)
    gt = fio.load_ground_truth(path)
    assert [(f, w) for f, _, w in gt.trajectories[3]] == [(0, "EXIT"), (2, "EXIT")]
    assert [(f, w) for f, _, w in gt.trajectories[4]] == [(2, None)]
    np.testing.assert_array_equal(gt.trajectories[3][1][1], [[12, 20], [52, 20], [52, 35], [12, 35]])


@pytest.mark.parametrize("bad", [
    "<Frames><frame ID='1'><object ID='1'><Point x='0' y='0'/></object></frame></Frames>",
    "<Frames><frame><object ID='1'/></frame></Frames>",
    "<Frames><frame ID='0'/></Frames>",
    "<Frames><frame ID='1'><object ID='a'/></frame></Frames>",
    "<Videos/>",
    "<Frames><frame ID='1'>",
])
def test_icdar_rejects_unknown_shapes(bad):
    with pytest.raises(fio.FormatError):
        fio.parse_ground_truth(bad)


def test_pgm_basics(tmp_path):
    px = np.array([[128]], np.uint8)
    fio.write_frame(tmp_path / "a.pgm", px)
    assert (tmp_path / "a.pgm").read_bytes() == b"P5\n1 1\n255\n\x80"
    np.testing.assert_array_equal(fio.read_frame(tmp_path / "a.pgm"), px)
    commented = b"P5 # made by hand\n# another\n2 1\n255\n\x01\x02"
    np.testing.assert_array_equal(fio.decode_pgm(commented), [[1, 2]])


@pytest.mark.parametrize("data", [
    b"P5\n1 1\n65535\n\x00\x80",
    b"P2\n1 1\n255\n128",
    b"P5\n2 2\n255\n\x00\x01\x02",
    b"P5\n2 2",
    b"P5\n0 2\n255\n",
    b"",
])
def test_pgm_rejects(data):
    with pytest.raises(fio.FrameFormatError):
        fio.decode_pgm(data)


def test_synth_frames_round_trip(tmp_path):
    for seed in range(3):
        frames = generate(ScenarioSpec(tracks=4, frames=5, width=96, height=64, seed=seed,
                                       box_width=(20, 30), box_height=(8, 12))).frames
        root = tmp_path / str(seed)
        fio.write_frames(root, frames)
        back = fio.FrameDirectory(root)
        assert len(back) == len(frames)
        for a, b in zip(frames, back):
            assert a.tobytes() == b.tobytes() and a.shape == b.shape
        with pytest.raises(IndexError):
            back[len(frames)]


def test_key_values():
    assert fio.parse_key_values("# c\n a = 1 \nb=x=y\n") == {"a": "1", "b": "x=y"}
    with pytest.raises(fio.FormatError):
        fio.parse_key_values("a=1\na=2\n")
    with pytest.raises(fio.FormatError):
        fio.parse_key_values("just words\n")


def test_config_and_spec_files(tmp_path):
    cfg = TrackerConfig(gate=3.25, max_lost=12).with_weights(sigma3=0.1 + 0.2)
    fio.write_config(tmp_path / "c.txt", cfg)
    assert fio.load_config(tmp_path / "c.txt") == cfg
    spec = ScenarioSpec(tracks=6, motion=("crossing", "crossing", "linear", "linear", "circular", "linear"),
                        dropout_p=0.1 + 0.2, twin_pairs=1, seed=2**40 + 3)
    fio.write_scenario_spec(tmp_path / "s.txt", spec)
    assert fio.load_scenario_spec(tmp_path / "s.txt") == spec


def test_result_round_trip(tmp_path):
    sc = generate(ScenarioSpec(tracks=5, frames=30, width=256, height=192, dropout_p=0.2, jitter_sigma=0.5, seed=4))
    result = run_video(VideoInput(sc.detections, sc.frames), TrackerConfig(seed=9))
    fio.write_result(tmp_path / "r.txt", result)
    back = fio.load_result(tmp_path / "r.txt")
    assert (back.seed, back.n_frames, back.config) == (9, 30, result.config)
    assert back.trajectories == result.trajectories
    for a, b in zip(result.records, back.records):
        assert (a.frame, a.trajectory_id, a.confidence) == (b.frame, b.trajectory_id, b.confidence)
        assert a.quad.tobytes() == b.quad.tobytes()
    assert fio.dump_result(back) == (tmp_path / "r.txt").read_text()
    # the embedded snapshot is a complete configuration
    assert TrackerConfig.from_flat(back.config) == TrackerConfig(seed=9)


def test_result_rejects_bad_input():
    with pytest.raises(fio.FormatError):
        fio.parse_result("I 0 1 0 0 1 0 1 1 0 1 0.5\n")
    head = fio.RESULT_MAGIC + "\n"
    rec = lambda t, i: f"I {t} {i} 0 0 1 0 1 1 0 1 0.5\n"  # noqa: E731
    with pytest.raises(fio.FormatError):
        fio.parse_result(head + rec(1, 1) + rec(0, 1))
    with pytest.raises(fio.FormatError):
        fio.parse_result(head + rec(0, 1) + rec(0, 1))
    with pytest.raises(fio.FormatError) as info:
        fio.parse_result(head + rec(0, 1) + "X 1\n")
    assert info.value.line == 3


def test_atomic_write_leaves_no_temp_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "out.txt"
    target.write_text("old")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(fio.os, "replace", boom)
    with pytest.raises(OSError):
        fio.atomic_write(target, "new")
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]


def test_result_with_empty_records():
    res = TrackingResult([], {}, 0, 0, [TrajectorySummary(1, 0, 0, 1, "removed")])
    back = fio.parse_result(fio.dump_result(res))
    assert back.records == [] and back.trajectories == res.trajectories
    inst = TextInstance(np.zeros((4, 2)), 1.0, 1, 0)
    assert fio.parse_result(fio.dump_result(TrackingResult([inst], {}, 0, 1))).records[0].trajectory_id == 1


def test_gt_constructor_still_validates():
    with pytest.raises(ValueError):
        GroundTruth({1: [(2, np.zeros((4, 2)), None), (1, np.zeros((4, 2)), None)]})
