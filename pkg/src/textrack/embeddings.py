"""Handcrafted appearance embeddings and triplet-loss utilities.

The visual part is a resampled, normalized grey patch; the semantic part is
a hashed character-bigram histogram of the transcription. Both are unit
vectors (or exactly zero) and concatenate visual-first into one embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .detection import Detection

PROVIDER_KINDS = ("file", "patch", "transcription", "patch+transcription", "synthetic")

_BOS, _EOS = "\x02", "\x03"
_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = math.sqrt(math.fsum((vec * vec).tolist()))
    if norm <= 1e-12:
        return np.zeros_like(vec)
    return vec / norm


def fnv1a32(data: bytes) -> int:
    """32-bit FNV-1a; the bucket hash of :func:`transcription_descriptor`."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFF
    return h


def _bilinear_grid(patch: np.ndarray, side: int) -> np.ndarray:
    h, w = patch.shape
    ys = np.clip((np.arange(side) + 0.5) * h / side - 0.5, 0, h - 1)
    xs = np.clip((np.arange(side) + 0.5) * w / side - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = patch[np.ix_(y0, x0)] * (1 - fx) + patch[np.ix_(y0, x1)] * fx
    bottom = patch[np.ix_(y1, x0)] * (1 - fx) + patch[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bottom * fy


def patch_descriptor(patch: np.ndarray, dim: int = 256) -> np.ndarray:
    """Bilinear resample to a square grid, flatten, remove mean, scale to unit norm."""
    side = math.isqrt(dim)
    if side * side != dim:
        raise ValueError(f"visual dimension must be a perfect square, got {dim}")
    p = np.asarray(patch, dtype=np.float64)
    if p.ndim != 2 or p.size == 0:
        raise ValueError("patch must be a non-empty 2-D array")
    flat = _bilinear_grid(p, side).ravel()
    flat = flat - math.fsum(flat.tolist()) / flat.size
    return _unit(flat)


def transcription_descriptor(text: Optional[str], dim: int = 256) -> np.ndarray:
    """Unit-norm histogram of FNV-1a hashed character bigrams.

    The string is wrapped in STX/ETX sentinels so that first and last
    characters contribute their own bigrams; ``""`` maps to the zero vector.
    """
    vec = np.zeros(dim, dtype=np.float64)
    if not text:
        return vec
    padded = _BOS + text + _EOS
    for a, b in zip(padded, padded[1:]):
        vec[fnv1a32((a + b).encode("utf-8")) % dim] += 1.0
    return _unit(vec)


def concat_embedding(visual, semantic, dim_visual: int = 256, dim_semantic: int = 256) -> np.ndarray:
    v = np.asarray(visual, dtype=np.float64)
    s = np.asarray(semantic, dtype=np.float64)
    if v.shape != (dim_visual,) or s.shape != (dim_semantic,):
        raise ValueError(f"expected ({dim_visual},) + ({dim_semantic},), got {v.shape} + {s.shape}")
    return np.concatenate([v, s])


def crop_quad(frame: np.ndarray, quad: np.ndarray) -> np.ndarray:
    """Axis-aligned pixel window covering ``quad``, clipped to the frame."""
    h, w = frame.shape
    r0 = max(int(math.floor(quad[:, 1].min())), 0)
    r1 = min(int(math.ceil(quad[:, 1].max())), h)
    c0 = max(int(math.floor(quad[:, 0].min())), 0)
    c1 = min(int(math.ceil(quad[:, 0].max())), w)
    return frame[r0:r1, c0:c1]


@dataclass(frozen=True)
class EmbeddingProvider:
    """Per-detection embedding source.

    ``synthetic`` emits one fixed random unit vector per detection ``hint``
    (zero for ``hint == -1``): an idealized identity feature for experiments.
    """

    kind: str = "patch+transcription"
    dim_visual: int = 256
    dim_semantic: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise ValueError(f"unknown embedding kind {self.kind!r}; expected one of {PROVIDER_KINDS}")

    @property
    def dim(self) -> Optional[int]:
        return {
            "file": None,
            "patch": self.dim_visual,
            "transcription": self.dim_semantic,
            "patch+transcription": self.dim_visual + self.dim_semantic,
            "synthetic": self.dim_visual + self.dim_semantic,
        }[self.kind]

    def _visual(self, det: Detection, frame: Optional[np.ndarray]) -> np.ndarray:
        if frame is None:
            raise ValueError(f"embedding kind {self.kind!r} needs frame pixels")
        patch = crop_quad(frame, det.quad)
        if patch.size == 0:
            return np.zeros(self.dim_visual)
        return patch_descriptor(patch, self.dim_visual)

    def _synthetic(self, hint: int) -> np.ndarray:
        if hint < 0:
            return np.zeros(self.dim_visual + self.dim_semantic)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, hint])))
        return _unit(rng.standard_normal(self.dim_visual + self.dim_semantic))

    def embed(self, det: Detection, frame: Optional[np.ndarray] = None) -> np.ndarray:
        if self.kind == "file":
            if det.embedding is None:
                raise ValueError("file embeddings requested but the detection carries none")
            return det.embedding
        if self.kind == "patch":
            return self._visual(det, frame)
        if self.kind == "transcription":
            return transcription_descriptor(det.transcription, self.dim_semantic)
        if self.kind == "synthetic":
            return self._synthetic(det.hint)
        return concat_embedding(self._visual(det, frame),
                                transcription_descriptor(det.transcription, self.dim_semantic),
                                self.dim_visual, self.dim_semantic)

    def embed_all(self, dets: Sequence[Detection], frame: Optional[np.ndarray] = None) -> list[Detection]:
        return [d.with_embedding(self.embed(d, frame)) for d in dets]


def triplet_loss(anchor, positive, negative, margin: float = 1.0) -> float:
    """Hinge on the gap between the negative and positive Euclidean distances."""
    a, p, n = (np.asarray(x, dtype=np.float64) for x in (anchor, positive, negative))
    if not (a.shape == p.shape == n.shape):
        raise ValueError("triplet embeddings must share one dimension")
    if margin < 0:
        raise ValueError("margin must be non-negative")
    d_an = float(np.linalg.norm(a - n))
    d_ap = float(np.linalg.norm(a - p))
    return max(0.0, -(d_an - d_ap) + margin)


@dataclass(frozen=True)
class Triplet:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    anchor_id: int
    positive_id: int
    negative_id: int
    anchor_index: int
    positive_index: int
    negative_index: int


def hard_mine(batch: Sequence[tuple[np.ndarray, int]]) -> list[Triplet]:
    """Batch-hard triplets: farthest positive and nearest negative per anchor.

    Anchors lacking a positive or a negative are skipped; ties go to the
    lowest sample index.
    """
    if not batch:
        return []
    emb = np.stack([np.asarray(e, dtype=np.float64) for e, _ in batch])
    ids = np.array([i for _, i in batch])
    out = []
    for a in range(len(batch)):
        # correctly rounded sums, so equal distances compare equal and the index tie-break holds
        diff = emb - emb[a]
        dist = np.array([math.sqrt(math.fsum(row)) for row in (diff * diff).tolist()])
        same = ids == ids[a]
        same[a] = False
        other = ids != ids[a]
        if not same.any() or not other.any():
            continue
        p = int(np.argmax(np.where(same, dist, -np.inf)))
        n = int(np.argmin(np.where(other, dist, np.inf)))
        out.append(Triplet(emb[a], emb[p], emb[n], int(ids[a]), int(ids[p]), int(ids[n]), a, p, n))
    return out
