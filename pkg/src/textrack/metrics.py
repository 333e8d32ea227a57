"""CLEAR-MOT, IDF1, track coverage classes and detection P/R/F."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .assignment import solve_assignment
from .geometry import iou

# Cost for pairs below the IOU threshold: larger than any feasible total so
# the matching maximizes the number of feasible pairs first.
_INFEASIBLE = 1e6


class UndefinedMetricError(ValueError):
    pass


@dataclass
class GroundTruth:
    """gt-id -> frame-ordered list of ``(frame, quad, transcription)``."""

    trajectories: dict[int, list[tuple[int, np.ndarray, Optional[str]]]] = field(default_factory=dict)

    def __post_init__(self):
        for gid, items in self.trajectories.items():
            frames = [f for f, _, _ in items]
            if any(b <= a for a, b in zip(frames, frames[1:])):
                raise ValueError(f"ground-truth track {gid} frames are not strictly increasing")

    def by_frame(self) -> dict[int, dict[int, np.ndarray]]:
        out: dict[int, dict[int, np.ndarray]] = {}
        for gid in sorted(self.trajectories):
            for frame, quad, _ in self.trajectories[gid]:
                out.setdefault(frame, {})[gid] = quad
        return out

    @property
    def n_boxes(self) -> int:
        return sum(len(v) for v in self.trajectories.values())


FrameBoxes = Mapping[int, np.ndarray]


def _iou_matrix(gt_ids: Sequence[int], pred_ids: Sequence[int], gt: FrameBoxes, pred: FrameBoxes) -> np.ndarray:
    out = np.zeros((len(gt_ids), len(pred_ids)))
    if not gt_ids or not pred_ids:
        return out
    gq = np.stack([np.asarray(gt[g], dtype=np.float64) for g in gt_ids])
    pq = np.stack([np.asarray(pred[p], dtype=np.float64) for p in pred_ids])
    g0, g1, p0, p1 = gq.min(1), gq.max(1), pq.min(1), pq.max(1)
    near = ((g0[:, None, 0] < p1[None, :, 0]) & (p0[None, :, 0] < g1[:, None, 0])
            & (g0[:, None, 1] < p1[None, :, 1]) & (p0[None, :, 1] < g1[:, None, 1]))
    for i, j in zip(*np.nonzero(near)):
        out[i, j] = iou(gq[i], pq[j])
    return out


def _gated_match(gt_ids: Sequence[int], pred_ids: Sequence[int], overlaps: np.ndarray,
                 threshold: float) -> dict[int, tuple[int, float]]:
    if not gt_ids or not pred_ids:
        return {}
    cost = np.where(overlaps >= threshold, 1.0 - overlaps, _INFEASIBLE)
    result = solve_assignment(cost)
    return {gt_ids[i]: (pred_ids[j], float(overlaps[i, j]))
            for i, j in result.pairs if overlaps[i, j] >= threshold}


def match_frame(gt_boxes: FrameBoxes, pred_boxes: FrameBoxes, prev_matches: Mapping[int, int],
                iou_threshold: float = 0.5) -> dict[int, tuple[int, float]]:
    """gt-id -> (pred-id, IOU) for one frame, preferring last frame's pairs."""
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must lie in (0, 1)")
    gids, pids = sorted(gt_boxes), sorted(pred_boxes)
    return _match_frame(gids, pids, _iou_matrix(gids, pids, gt_boxes, pred_boxes), prev_matches, iou_threshold)


def _match_frame(gids, pids, overlaps, prev_matches, iou_threshold):
    gi = {g: k for k, g in enumerate(gids)}
    pj = {p: k for k, p in enumerate(pids)}
    matches: dict[int, tuple[int, float]] = {}
    for g in gids:
        p = prev_matches.get(g)
        if p is None or p not in pj or any(p == q for q, _ in matches.values()):
            continue
        v = float(overlaps[gi[g], pj[p]])
        if v >= iou_threshold:
            matches[g] = (p, v)
    used = {p for p, _ in matches.values()}
    rest_g = [g for g in gids if g not in matches]
    rest_p = [p for p in pids if p not in used]
    sub = overlaps[np.ix_([gi[g] for g in rest_g], [pj[p] for p in rest_p])]
    matches.update(_gated_match(rest_g, rest_p, sub, iou_threshold))
    return matches


class _Overlaps:
    """Per-frame (gt ids, pred ids, IOU matrix), computed once per evaluation."""

    def __init__(self, gt: GroundTruth, result):
        self.gt_frames = gt.by_frame()
        self.pr_frames = _pred_frames(result)
        self._cache: dict[int, tuple] = {}

    def frames(self) -> list[int]:
        return sorted(set(self.gt_frames) | set(self.pr_frames))

    def __getitem__(self, f: int):
        if f not in self._cache:
            g, p = self.gt_frames.get(f, {}), self.pr_frames.get(f, {})
            gids, pids = sorted(g), sorted(p)
            self._cache[f] = (gids, pids, _iou_matrix(gids, pids, g, p))
        return self._cache[f]


def _pred_frames(result) -> dict[int, dict[int, np.ndarray]]:
    if hasattr(result, "by_frame"):
        return result.by_frame()
    return {int(f): dict(v) for f, v in result.items()}


@dataclass
class _Trace:
    matches: dict[int, dict[int, tuple[int, float]]]
    fp: int
    fn: int
    idsw: int
    n_gt: int


def _trace(gt: GroundTruth, result, iou_threshold: float, ov: Optional[_Overlaps] = None) -> _Trace:
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must lie in (0, 1)")
    ov = ov or _Overlaps(gt, result)
    prev: dict[int, int] = {}
    last_seen: dict[int, int] = {}
    per_frame = {}
    fp = fn = idsw = 0
    for f in ov.frames():
        gids, pids, overlaps = ov[f]
        m = _match_frame(gids, pids, overlaps, prev, iou_threshold)
        per_frame[f] = m
        fn += len(gids) - len(m)
        fp += len(pids) - len(m)
        for gid, (pid, _) in m.items():
            if gid in last_seen and last_seen[gid] != pid:
                idsw += 1
            last_seen[gid] = pid
        prev = {gid: pid for gid, (pid, _) in m.items()}
    return _Trace(per_frame, fp, fn, idsw, gt.n_boxes)


def clear_mot(gt: GroundTruth, result, iou_threshold: float = 0.5,
              _tr: Optional[_Trace] = None) -> tuple[float, float, int, int, int]:
    """(mota, motp, fp, fn, idsw); motp is mean IOU of matched pairs."""
    tr = _tr or _trace(gt, result, iou_threshold)
    if tr.n_gt == 0:
        raise UndefinedMetricError("MOTA is undefined without ground-truth boxes")
    mota = 1.0 - (tr.fn + tr.fp + tr.idsw) / tr.n_gt
    ious = [v for m in tr.matches.values() for _, v in m.values()]
    motp = math.fsum(ious) / len(ious) if ious else 0.0
    return mota, motp, tr.fp, tr.fn, tr.idsw


def _overlap_counts(gt: GroundTruth, result, iou_threshold: float, ov: Optional[_Overlaps] = None):
    ov = ov or _Overlaps(gt, result)
    gids = sorted(gt.trajectories)
    pids = sorted({p for boxes in ov.pr_frames.values() for p in boxes})
    gi = {g: k for k, g in enumerate(gids)}
    pj = {p: k for k, p in enumerate(pids)}
    counts = np.zeros((len(gids), len(pids)), dtype=np.int64)
    for f in ov.frames():
        fg, fp_, overlaps = ov[f]
        for a, b in zip(*np.nonzero(overlaps >= iou_threshold)):
            counts[gi[fg[a]], pj[fp_[b]]] += 1
    n_pred = sum(len(v) for v in ov.pr_frames.values())
    return counts, gids, pids, n_pred


def idf1(gt: GroundTruth, result, iou_threshold: float = 0.5,
         _ov: Optional[_Overlaps] = None) -> tuple[float, int, int, int]:
    """(idf1, idtp, idfp, idfn) from a global trajectory-level matching.

    Minimizing idfp + idfn over one-to-one trajectory matchings is the same
    as maximizing the summed per-pair overlap counts.
    """
    n_gt = gt.n_boxes
    if n_gt == 0:
        raise UndefinedMetricError("IDF1 is undefined without ground-truth boxes")
    counts, _, _, n_pred = _overlap_counts(gt, result, iou_threshold, _ov)
    idtp = 0
    if counts.size:
        cost = (counts.max() - counts).astype(np.float64)
        idtp = int(sum(counts[i, j] for i, j in solve_assignment(cost).pairs))
    idfn, idfp = n_gt - idtp, n_pred - idtp
    denom = 2 * idtp + idfp + idfn
    return (2 * idtp / denom if denom else 0.0), idtp, idfp, idfn


def match_classes(gt: GroundTruth, result, iou_threshold: float = 0.5,
                  mostly_matched: float = 0.8, mostly_lost: float = 0.2,
                  _tr: Optional[_Trace] = None) -> tuple[int, int, int]:
    tr = _tr or _trace(gt, result, iou_threshold)
    hits = {g: 0 for g in gt.trajectories}
    for m in tr.matches.values():
        for g in m:
            hits[g] += 1
    mm = pm = ml = 0
    for g, items in gt.trajectories.items():
        cov = hits[g] / len(items) if items else 0.0
        if cov >= mostly_matched:
            mm += 1
        elif cov <= mostly_lost:
            ml += 1
        else:
            pm += 1
    return mm, pm, ml


def _quads(frame_dets) -> dict[int, np.ndarray]:
    if isinstance(frame_dets, Mapping):
        return dict(frame_dets)
    return {k: getattr(d, "quad", d) for k, d in enumerate(frame_dets)}


def detection_prf(gt: GroundTruth, detections, iou_threshold: float = 0.5) -> tuple[float, float, float]:
    """Per-frame gated optimal matching; empty ratios are reported as 0.

    ``detections`` maps frame -> boxes (a sequence of quads/Detections, or a
    mapping), or is a per-frame list indexed by frame.
    """
    if not isinstance(detections, Mapping):
        detections = dict(enumerate(detections))
    gt_frames = gt.by_frame()
    tp = n_det = 0
    for f in sorted(set(gt_frames) | set(detections)):
        g = gt_frames.get(f, {})
        d = _quads(detections.get(f, []))
        n_det += len(d)
        gids, dids = sorted(g), sorted(d)
        tp += len(_gated_match(gids, dids, _iou_matrix(gids, dids, g, d), iou_threshold))
    n_gt = gt.n_boxes
    precision = tp / n_det if n_det else 0.0
    recall = tp / n_gt if n_gt else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f


@dataclass
class MetricsReport:
    mota: float
    motp: float
    idf1: float
    fp: int
    fn: int
    idsw: int
    mm: int
    pm: int
    ml: int
    precision: float
    recall: float
    fmeasure: float
    idtp: int = 0
    idfp: int = 0
    idfn: int = 0
    gt_boxes: int = 0
    gt_tracks: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(gt: GroundTruth, result, iou_threshold: float = 0.5) -> MetricsReport:
    """Every metric at once; box P/R/F treats the tracker output as detections."""
    ov = _Overlaps(gt, result)
    tr = _trace(gt, result, iou_threshold, ov)
    mota, motp, fp, fn, idsw = clear_mot(gt, result, iou_threshold, tr)
    f1, idtp, idfp, idfn = idf1(gt, result, iou_threshold, ov)
    mm, pm, ml = match_classes(gt, result, iou_threshold, _tr=tr)
    # per-frame optimal matching without temporal preference
    tp = 0
    for frame in ov.frames():
        gids, pids, overlaps = ov[frame]
        tp += len(_gated_match(gids, pids, overlaps, iou_threshold))
    n_pred = sum(len(v) for v in ov.pr_frames.values())
    p = tp / n_pred if n_pred else 0.0
    r = tp / gt.n_boxes
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return MetricsReport(mota, motp, f1, fp, fn, idsw, mm, pm, ml, p, r, f,
                         idtp, idfp, idfn, gt.n_boxes, len(gt.trajectories))
