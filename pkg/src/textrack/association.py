"""Pairwise distances between text instances and the fused distance matrix."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .assignment import Assignment, solve_assignment
from .geometry import RotatedRect, iou, quad_to_rotated_rect

if TYPE_CHECKING:
    from .tracker import Detection, TrajectoryPool

__all__ = [
    "DistanceWeights",
    "embedding_distance",
    "iou_distance",
    "morphological_distance",
    "fused_distance",
    "build_distance_matrix",
    "solve_assignment",
    "Assignment",
]


@dataclass(frozen=True)
class DistanceWeights:
    """Weights of the fused distance and of the morphological terms.

    Defaults: appearance/IOU/morphology weighted 0.6/0.2/0.2; morphology
    terms (position+size, aspect ratio, angle) weighted 0.3/0.3/0.7.
    """

    alpha: float = 0.6
    beta: float = 0.2
    gamma: float = 0.2
    sigma1: float = 0.3
    sigma2: float = 0.3
    sigma3: float = 0.7

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma, self.sigma1, self.sigma2, self.sigma3)
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ValueError("distance weights must be finite and non-negative")
        if self.alpha + self.beta + self.gamma <= 0:
            raise ValueError("alpha + beta + gamma must be positive")


def embedding_distance(e1, e2) -> float:
    a = np.asarray(e1, dtype=np.float64)
    b = np.asarray(e2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"embedding dimensions differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sqrt(np.dot(d, d)))


def iou_distance(a, b) -> float:
    return 1.0 - iou(a, b)


def angle_difference(t1: float, t2: float) -> float:
    """|t1 - t2| taken modulo pi and folded into [0, pi/2]."""
    d = abs(t1 - t2) % math.pi
    return min(d, math.pi - d)


def morphological_distance(ri: RotatedRect, rj: RotatedRect, delta_f: int,
                           w: DistanceWeights = DistanceWeights()) -> float:
    if delta_f < 1:
        raise ValueError(f"frame gap must be >= 1, got {delta_f}")
    if min(ri.w, ri.h, rj.w, rj.h) <= 0:
        raise ValueError("rectangle sides must be positive")
    shape_pos = (abs(ri.cx - rj.cx) + abs(ri.cy - rj.cy)
                 + abs(ri.h - rj.h) + abs(ri.w - rj.w)) / delta_f
    aspect = abs(ri.w / ri.h - rj.w / rj.h)
    return (w.sigma1 * shape_pos + w.sigma2 * aspect
            + w.sigma3 * angle_difference(ri.theta, rj.theta))


def fused_distance(d_e: float, d_p: float, d_m: float, w: DistanceWeights = DistanceWeights()) -> float:
    return w.alpha * d_e + w.beta * d_p + w.gamma * d_m


@functools.lru_cache(maxsize=8192)
def _rect_of(raw: bytes) -> tuple:
    return tuple(quad_to_rotated_rect(np.frombuffer(raw, dtype=np.float64).reshape(4, 2)))


def _rects(quads) -> np.ndarray:
    # trajectory heads are re-measured every frame; cache by exact coordinates
    return np.array([_rect_of(np.ascontiguousarray(q, dtype=np.float64).tobytes()) for q in quads])


def _bounds(quads: Sequence[np.ndarray]) -> np.ndarray:
    q = np.stack(quads)
    return np.concatenate([q.min(axis=1), q.max(axis=1)], axis=1)  # x0, y0, x1, y1


def build_distance_matrix(pool: "TrajectoryPool", detections: Sequence["Detection"], t: int,
                          w: DistanceWeights = DistanceWeights(),
                          use_embedding: bool = True) -> np.ndarray:
    """Rows follow ``pool.ordered()`` (ascending id), columns follow ``detections``.

    Each entry equals :func:`fused_distance` of the pairwise terms; with
    ``use_embedding=False`` the appearance term is exactly zero.
    """
    heads = [tr.latest for tr in pool.ordered()]
    shape = (len(heads), len(detections))
    if not heads or not detections:
        return np.zeros(shape, dtype=np.float64)
    d_e = np.zeros(shape)
    if use_embedding and w.alpha > 0:
        if any(x.embedding is None for x in (*heads, *detections)):
            raise ValueError("embedding-enabled association needs embeddings on both sides")
        try:
            a = np.stack([h.embedding for h in heads])
            b = np.stack([d.embedding for d in detections])
        except ValueError:
            raise ValueError("embedding dimensions differ") from None
        if a.shape[1] != b.shape[1]:
            raise ValueError(f"embedding dimensions differ: {a.shape[1]} vs {b.shape[1]}")
        diff = a[:, None, :] - b[None, :, :]
        d_e = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    d_p = np.ones(shape)
    if w.beta > 0:
        hb, db = _bounds([h.quad for h in heads]), _bounds([d.quad for d in detections])
        near = ((hb[:, None, 0] < db[None, :, 2]) & (db[None, :, 0] < hb[:, None, 2])
                & (hb[:, None, 1] < db[None, :, 3]) & (db[None, :, 1] < hb[:, None, 3]))
        for i, j in zip(*np.nonzero(near)):
            d_p[i, j] = iou_distance(heads[i].quad, detections[j].quad)
    d_m = np.zeros(shape)
    if w.gamma > 0:
        hr = _rects(h.quad for h in heads)
        dr = _rects(d.quad for d in detections)
        gaps = np.array([t - h.frame for h in heads], dtype=np.float64)
        if np.any(gaps < 1):
            raise ValueError(f"frame gap must be >= 1, got {int(gaps.min())}")
        hi, dj = hr[:, None, :], dr[None, :, :]
        shape_pos = (np.abs(hi[..., 0] - dj[..., 0]) + np.abs(hi[..., 1] - dj[..., 1])
                     + np.abs(hi[..., 3] - dj[..., 3]) + np.abs(hi[..., 2] - dj[..., 2])) / gaps[:, None]
        aspect = np.abs(hi[..., 2] / hi[..., 3] - dj[..., 2] / dj[..., 3])
        turn = np.abs(hi[..., 4] - dj[..., 4]) % math.pi
        turn = np.minimum(turn, math.pi - turn)
        d_m = w.sigma1 * shape_pos + w.sigma2 * aspect + w.sigma3 * turn
    return w.alpha * d_e + w.beta * d_p + w.gamma * d_m
