import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from textrack.detection import Detection
from textrack.embeddings import (
    EmbeddingProvider,
    concat_embedding,
    fnv1a32,
    hard_mine,
    patch_descriptor,
    transcription_descriptor,
    triplet_loss,
)
from textrack.geometry import RotatedRect, axis_aligned_quad
from textrack.synth import render_box


@pytest.fixture
def texture_patch():
    frame = render_box(np.full((40, 80), 118, np.uint8), RotatedRect(40, 20, 60, 24, 0.0), 7)
    return frame[8:32, 10:70]


def test_fnv_reference_vectors():
    assert fnv1a32(b"") == 0x811C9DC5
    assert fnv1a32(b"a") == 0xE40C292C
    assert fnv1a32(b"foobar") == 0xBF9CF968


def test_patch_descriptor_invariances(texture_patch):
    d = patch_descriptor(texture_patch)
    assert d.shape == (256,)
    assert np.linalg.norm(d - patch_descriptor(texture_patch.copy())) == 0.0
    shifted = texture_patch.astype(float) + 30
    assert np.linalg.norm(d - patch_descriptor(shifted)) < 1e-6
    assert np.linalg.norm(d - patch_descriptor(texture_patch[:, ::-1])) > 0.1


def test_patch_descriptor_flat_patch_is_zero():
    assert not patch_descriptor(np.full((5, 9), 42.0)).any()
    with pytest.raises(ValueError):
        patch_descriptor(np.zeros((4, 4)), dim=250)


@given(st.text(min_size=0, max_size=12))
def test_descriptors_are_unit_or_zero(text):
    d = transcription_descriptor(text)
    norm = np.linalg.norm(d)
    assert norm == 0.0 if not text else norm == pytest.approx(1.0, abs=1e-12)


def test_transcription_examples():
    assert not transcription_descriptor("").any()
    assert np.array_equal(transcription_descriptor("EXIT"), transcription_descriptor("EXIT"))
    assert not np.array_equal(transcription_descriptor("ab"), transcription_descriptor("ba"))
    # frozen: the two anagrams share no bigram under the sentinel scheme
    dist = np.linalg.norm(transcription_descriptor("STOP") - transcription_descriptor("POTS"))
    assert dist == pytest.approx(1.414213562373095, abs=1e-12)


def test_concat_embedding(rng):
    v, s = rng.standard_normal(256), rng.standard_normal(256)
    e = concat_embedding(v, s)
    assert e.shape == (512,) and np.array_equal(e[:256], v)
    assert not concat_embedding(np.zeros(256), np.zeros(256)).any()
    v2, s2 = rng.standard_normal(256), rng.standard_normal(256)
    dv, ds = np.linalg.norm(v - v2), np.linalg.norm(s - s2)
    assert np.linalg.norm(e - concat_embedding(v2, s2)) == pytest.approx(math.hypot(dv, ds), abs=1e-9)
    with pytest.raises(ValueError):
        concat_embedding(np.zeros(3), np.zeros(256))


def test_triplet_examples():
    a = np.zeros(3)
    assert triplet_loss(a, a, np.array([2.0, 0, 0]), 1.0) == 0.0
    assert triplet_loss(a, np.array([0.2, 0, 0]), np.array([0, 0.5, 0]), 1.0) == pytest.approx(0.7, abs=1e-9)
    assert triplet_loss(a, a, a, 1.0) == 1.0
    with pytest.raises(ValueError):
        triplet_loss(a, a, np.zeros(2))


@given(st.lists(st.floats(-3, 3), min_size=9, max_size=9), st.floats(0, 2))
def test_triplet_nonnegative_and_zero_condition(vals, margin):
    a, p, n = (np.array(vals[k:k + 3]) for k in (0, 3, 6))
    loss = triplet_loss(a, p, n, margin)
    assert loss >= 0
    d_an, d_ap = np.linalg.norm(a - n), np.linalg.norm(a - p)
    assert (loss == 0) == (d_an >= d_ap + margin)


def test_hard_mine_separated_clusters():
    batch = [(np.array([0.0, 0.0]), 1), (np.array([0.1, 0.0]), 1),
             (np.array([5.0, 5.0]), 2), (np.array([5.0, 5.1]), 2)]
    triplets = hard_mine(batch)
    assert len(triplets) == 4
    assert all(triplet_loss(t.anchor, t.positive, t.negative, 1.0) == 0 for t in triplets)
    assert all(t.anchor_id == t.positive_id != t.negative_id for t in triplets)
    assert hard_mine([(np.zeros(2), 3), (np.ones(2), 3)]) == []


@pytest.mark.parametrize("seed", range(12))
def test_hard_mine_matches_exhaustive_scan(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 64))
    ids = rng.integers(0, 4, size=n)
    emb = np.round(rng.standard_normal((n, 3)), 1)  # rounding forces ties
    triplets = {t.anchor_index: t for t in hard_mine(list(zip(emb, ids)))}
    for a in range(n):
        pos = [j for j in range(n) if j != a and ids[j] == ids[a]]
        neg = [j for j in range(n) if ids[j] != ids[a]]
        if not pos or not neg:
            assert a not in triplets
            continue
        dist = [math.sqrt(math.fsum((float(x) - float(y)) ** 2 for x, y in zip(emb[a], emb[j]))) for j in range(n)]
        far = max(dist[j] for j in pos)
        near = min(dist[j] for j in neg)
        t = triplets[a]
        assert t.positive_index == min(j for j in pos if dist[j] == far)
        assert t.negative_index == min(j for j in neg if dist[j] == near)


def test_providers():
    frame = render_box(np.full((40, 80), 118, np.uint8), RotatedRect(40, 20, 60, 24, 0.0), 7)
    det = Detection(axis_aligned_quad(10, 8, 70, 32), 0.9, transcription="EXIT", hint=4)
    both = EmbeddingProvider().embed(det, frame)
    assert both.shape == (512,)
    assert np.array_equal(both[256:], transcription_descriptor("EXIT"))
    assert EmbeddingProvider("transcription").embed(det).shape == (256,)
    with pytest.raises(ValueError):
        EmbeddingProvider("patch").embed(det, None)
    with pytest.raises(ValueError):
        EmbeddingProvider("file").embed(det)
    assert np.array_equal(EmbeddingProvider("file").embed(det.with_embedding(np.ones(5))), np.ones(5))
    syn = EmbeddingProvider("synthetic", seed=3)
    assert np.array_equal(syn.embed(det), syn.embed(det))
    assert np.linalg.norm(syn.embed(det)) == pytest.approx(1.0)
    assert not syn.embed(Detection(det.quad, 0.5)).any()
    with pytest.raises(ValueError):
        EmbeddingProvider("neural")
