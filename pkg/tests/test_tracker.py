import dataclasses
import math

import numpy as np
import pytest

from textrack.assignment import Assignment
from textrack.detection import Detection
from textrack.geometry import RotatedRect, rotated_rect_to_quad
from textrack.io import dump_result
from textrack.metrics import GroundTruth, evaluate
from textrack.synth import ScenarioSpec, generate, render_box
from textrack.tracker import (
    ConfigError,
    Tracker,
    TrackerConfig,
    TrajectoryPool,
    VideoInput,
    run_video,
    step,
    update_trajectories,
)

GEOMETRY = TrackerConfig(complement_enabled=False, embedding_enabled=False)


def box(cx, cy, w=40.0, h=16.0, conf=0.9, **kw):
    return Detection(rotated_rect_to_quad(RotatedRect(cx, cy, w, h, 0.0)), conf, **kw)


def test_cold_start_issues_ids_in_detection_order():
    pool = TrajectoryPool()
    dets = [box(50, 50), box(150, 50), box(50, 150)]
    pool, out = step(pool, dets, None, None, 0, GEOMETRY)
    assert [i.trajectory_id for i in out] == [1, 2, 3]
    for inst, det in zip(out, dets):
        np.testing.assert_array_equal(inst.quad, det.quad)
    assert pool.next_id == 4


def test_perfect_continuation():
    cfg = dataclasses.replace(GEOMETRY, embedding_enabled=True,
                              embedding=dataclasses.replace(GEOMETRY.embedding, kind="transcription"))
    pool = TrajectoryPool()
    step(pool, [box(60, 60, transcription="EXIT")], None, None, 0, cfg)
    pool, out = step(pool, [box(60, 60, transcription="EXIT")], None, None, 1, cfg)
    assert [i.trajectory_id for i in out] == [1]
    assert pool.next_id == 2
    assert len(pool.trajectories[1].instances) == 2
    assert pool.trajectories[1].state == "active"


def test_gate_rejection_births_new_track_and_loses_old():
    pool = TrajectoryPool()
    step(pool, [box(40, 40)], None, None, 0, GEOMETRY)
    # far away and differently shaped: distance well above the gate
    pool, out = step(pool, [box(400, 300, w=120, h=60)], None, None, 1, GEOMETRY)
    assert [i.trajectory_id for i in out] == [2]
    assert pool.trajectories[1].state == "lost"
    assert pool.trajectories[1].lost_for == 1


def test_update_trajectories_full_match_and_births():
    pool = TrajectoryPool()
    dets = [box(10, 10), box(90, 10)]
    update_trajectories(pool, Assignment((), (), (0, 1)), dets, 0)
    assert sorted(pool.trajectories) == [1, 2]
    update_trajectories(pool, Assignment(((0, 1), (1, 0))), dets, 1)
    assert pool.next_id == 3
    assert all(tr.state == "active" for tr in pool.trajectories.values())
    np.testing.assert_array_equal(pool.trajectories[1].latest.quad, dets[1].quad)


def test_low_confidence_cannot_start_a_track():
    pool = TrajectoryPool()
    pool, out = step(pool, [box(30, 30, conf=0.39), box(90, 90, conf=0.4)], None, None, 0, GEOMETRY)
    assert [i.trajectory_id for i in out] == [1]


@pytest.mark.parametrize("max_lost", [1, 3, 30])
def test_archived_exactly_after_max_lost_plus_one_missing_frames(max_lost):
    cfg = dataclasses.replace(GEOMETRY, max_lost=max_lost)
    pool = TrajectoryPool()
    step(pool, [box(40, 40)], None, None, 0, cfg)
    for t in range(1, max_lost + 1):
        step(pool, [], None, None, t, cfg)
        assert pool.trajectories[1].lost_for == t
    step(pool, [], None, None, max_lost + 1, cfg)
    assert 1 not in pool.trajectories and 1 in pool.removed
    # archived ids are never reissued
    _, out = step(pool, [box(40, 40)], None, None, max_lost + 2, cfg)
    assert [i.trajectory_id for i in out] == [2]


def test_lost_track_resumes_within_horizon():
    pool = TrajectoryPool()
    step(pool, [box(40, 40)], None, None, 0, GEOMETRY)
    step(pool, [], None, None, 1, GEOMETRY)
    _, out = step(pool, [box(41, 40)], None, None, 2, GEOMETRY)
    assert [i.trajectory_id for i in out] == [1]


def test_non_monotone_frame_index_raises():
    pool = TrajectoryPool()
    step(pool, [], None, None, 5, GEOMETRY)
    with pytest.raises(ValueError):
        step(pool, [], None, None, 5, GEOMETRY)


def test_complement_requires_frames():
    with pytest.raises(ValueError):
        step(TrajectoryPool(), [box(10, 10)], None, None, 0, TrackerConfig())
    with pytest.raises(ValueError):
        run_video(VideoInput([[box(10, 10)]]), TrackerConfig())


def test_empty_and_single_frame_videos():
    empty = run_video(VideoInput([]), GEOMETRY)
    assert empty.records == [] and empty.trajectories == []
    single = run_video(VideoInput([[box(30, 30), box(120, 30), box(30, 120)]]), GEOMETRY)
    assert [r.trajectory_id for r in single.records] == [1, 2, 3]
    assert all(s.length == 1 for s in single.trajectories)


@pytest.fixture(scope="module")
def scenario():
    return generate(ScenarioSpec(tracks=8, frames=200, width=320, height=240,
                                 dropout_p=0.3, jitter_sigma=0.5, seed=11))


def test_run_video_matches_manual_step_loop(scenario):
    cfg = TrackerConfig()
    result = run_video(VideoInput(scenario.detections, scenario.frames), cfg)
    pool = TrajectoryPool()
    prev = None
    manual = []
    for t, (dets, frame) in enumerate(zip(scenario.detections, scenario.frames)):
        pool, out = step(pool, dets, prev, frame, t, cfg)
        manual.extend(out)
        prev = frame
    assert len(result.trajectories) == len(pool.all_trajectories())
    per_frame = lambda recs: np.bincount([r.frame for r in recs], minlength=200)  # noqa: E731
    np.testing.assert_array_equal(per_frame(result.records), per_frame(manual))
    key = lambda r: (r.frame, r.trajectory_id)  # noqa: E731
    for a, b in zip(result.records, sorted(manual, key=key)):
        assert key(a) == key(b)
        np.testing.assert_array_equal(a.quad, b.quad)


def test_tracker_invariants(scenario):
    cfg = dataclasses.replace(TrackerConfig(), max_lost=5)
    tracker = Tracker(cfg)
    issued = set()
    for t, (dets, frame) in enumerate(zip(scenario.detections, scenario.frames)):
        out = tracker.update(dets, frame, t)
        ids = [i.trajectory_id for i in out]
        assert len(ids) == len(set(ids))
        pool = tracker.pool
        assert all(tr.lost_for <= cfg.max_lost for tr in pool.trajectories.values())
        for tr in pool.trajectories.values():
            frames = [i.frame for i in tr.instances]
            assert frames == sorted(set(frames))
            assert tr.lost_for == 0 or t - tr.last_frame == tr.lost_for
        assert not set(pool.trajectories) & set(pool.removed)
        issued |= set(pool.trajectories) | set(pool.removed)
        assert pool.next_id > max(issued, default=0)


def test_run_video_is_deterministic(scenario):
    video = VideoInput(scenario.detections, scenario.frames)
    assert dump_result(run_video(video)) == dump_result(run_video(video))


def test_geometry_only_ignores_embedding_weight():
    rng = np.random.default_rng(3)
    dets = [[box(50 + 2 * t, 60, embedding=rng.normal(size=8)), box(200 - 2 * t, 140, embedding=rng.normal(size=8))]
            for t in range(20)]
    a = run_video(VideoInput(dets), GEOMETRY)
    b = run_video(VideoInput(dets), GEOMETRY.with_weights(alpha=123.0))
    assert [(r.frame, r.trajectory_id) for r in a.records] == [(r.frame, r.trajectory_id) for r in b.records]
    assert all(np.array_equal(x.quad, y.quad) for x, y in zip(a.records, b.records))


def crossing_pair(seed, n=30, speed=2.0, jitter=1.0):
    """Two equal-size boxes moving head-on along one line; they coincide mid-video."""
    rng = np.random.default_rng(seed)
    ang = rng.uniform(-0.4, 0.4)
    ux, uy = math.cos(ang), math.sin(ang)
    words = ("CROSS", "TRAIN")
    textures = (11 + seed, 911 + seed)
    frames, dets, gt = [], [], {1: [], 2: []}
    for t in range(n):
        frame = np.full((240, 320), 118, np.uint8)
        row = []
        for k, sgn in enumerate((1, -1)):
            d = sgn * speed * (t - (n - 1) / 2)
            rect = RotatedRect(160 + d * ux, 120 + d * uy, 48.0, 18.0, ang)
            frame = render_box(frame, rect, textures[k])
            q = rotated_rect_to_quad(rect)
            gt[k + 1].append((t, q, words[k]))
            row.append(Detection(q + rng.normal(0, jitter, q.shape), 0.95, transcription=words[k]))
        frames.append(frame)
        dets.append(row)
    return frames, dets, GroundTruth(gt)


def test_crossing_pair_needs_embeddings():
    with_emb, without = [], []
    for seed in range(5):
        frames, dets, gt = crossing_pair(seed)
        for flag, sink in ((True, with_emb), (False, without)):
            cfg = TrackerConfig(complement_enabled=False, embedding_enabled=flag)
            sink.append(evaluate(gt, run_video(VideoInput(dets, frames), cfg)).idsw)
    assert with_emb == [0] * 5
    assert sum(s >= 1 for s in without) >= 3


def test_config_flat_round_trip():
    cfg = TrackerConfig(gate=2.5, max_lost=7, fusion="literal", complement_enabled=False).with_weights(beta=0.1 + 0.2)
    flat = cfg.to_flat()
    assert TrackerConfig.from_flat(flat) == cfg
    assert all(isinstance(v, str) for v in flat.values())


@pytest.mark.parametrize("flat", [{"nope": "1"}, {"max_lost": "0"}, {"h1": "0.2", "h2": "0.5"},
                                  {"gate": "abc"}, {"complement_enabled": "maybe"}, {"fusion": "xor"}])
def test_config_rejects_bad_values(flat):
    with pytest.raises(ConfigError):
        TrackerConfig.from_flat(flat)
