"""Spatio-temporal localization: probability maps, correlation complement, mask fusion.

Frames are ``uint8`` arrays of shape ``(height, width)``; probability maps are
float arrays and masks boolean arrays of the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage, signal

from .detection import Detection, TextInstance
from .geometry import DegenerateGeometryError, RotatedRect, min_area_rect, quad_bounds, rasterize_quad, rotated_rect_to_quad

FUSION_MODES = ("literal", "union")


class NoSignalError(ValueError):
    """Template has zero intensity variance; correlation is undefined."""


@dataclass(frozen=True)
class ComplementConfig:
    search_scale: float = 2.0
    ncc_accept: float = 0.6
    max_templates: int = 0  # 0 = no limit

    def __post_init__(self):
        if not self.search_scale > 1:
            raise ValueError("search_scale must exceed 1")
        if not -1 < self.ncc_accept <= 1:
            raise ValueError("ncc_accept must lie in (-1, 1]")
        if self.max_templates < 0:
            raise ValueError("max_templates must be >= 0")


@dataclass(frozen=True)
class Stamp:
    """One complementer hit: the source instance's quad moved to the peak."""

    source: int
    quad: np.ndarray
    score: float


def synthesize_probability_map(detections: Sequence[Detection], width: int, height: int) -> np.ndarray:
    prob = np.zeros((height, width), dtype=np.float64)
    for det in detections:
        cover = rasterize_quad(det.quad, height, width)
        if cover is None:
            continue
        rs, cs, inside = cover
        window = prob[rs, cs]
        np.maximum(window, np.where(inside, det.confidence, 0.0), out=window)
    return prob


def ncc_correlate(template: np.ndarray, search: np.ndarray) -> tuple[int, int, float]:
    """Zero-mean normalized cross-correlation peak of ``template`` over ``search``.

    Returns ``(row, col, score)`` of the best top-left placement; the first
    maximum in row-major order wins ties. Placements whose window has zero
    variance score 0.
    """
    tpl = np.asarray(template, dtype=np.float64)
    img = np.asarray(search, dtype=np.float64)
    th, tw = tpl.shape
    sh, sw = img.shape
    if not (th < sh and tw < sw):
        raise ValueError(f"template {tpl.shape} must be strictly smaller than search {img.shape}")
    t0 = tpl - tpl.mean()
    t_norm = math.sqrt(float(np.sum(t0 * t0)))
    if t_norm <= 1e-12 * max(1.0, float(np.abs(tpl).max())):
        raise NoSignalError("template has zero variance")
    n = th * tw
    numer = signal.fftconvolve(img, t0[::-1, ::-1], mode="valid")
    ii = np.pad(img, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    ii2 = np.pad(img * img, ((1, 0), (1, 0))).cumsum(0).cumsum(1)

    def box(table):
        return table[th:, tw:] - table[:-th, tw:] - table[th:, :-tw] + table[:-th, :-tw]

    s, s2 = box(ii), box(ii2)
    var_sum = np.maximum(s2 - s * s / n, 0.0)
    denom = np.sqrt(var_sum) * t_norm
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(denom > 1e-9 * t_norm, numer / denom, 0.0)
    np.clip(score, -1.0, 1.0, out=score)
    r, c = np.unravel_index(int(np.argmax(score)), score.shape)
    return int(r), int(c), float(score[r, c])


def _pixel_window(quad: np.ndarray, height: int, width: int) -> tuple[int, int, int, int]:
    x0, y0, x1, y1 = quad_bounds(quad)
    return (max(int(math.floor(y0)), 0), min(int(math.ceil(y1)), height),
            max(int(math.floor(x0)), 0), min(int(math.ceil(x1)), width))


def complement_stamps(prev_instances: Sequence[TextInstance], prev_frame: np.ndarray,
                      cur_frame: np.ndarray, cfg: ComplementConfig = ComplementConfig()) -> list[Stamp]:
    """Relocate each previous instance in the current frame by template matching."""
    if prev_frame.shape != cur_frame.shape:
        raise ValueError("previous and current frames differ in size")
    height, width = cur_frame.shape
    insts = list(prev_instances)
    if cfg.max_templates:
        insts = insts[: cfg.max_templates]
    stamps = []
    for k, inst in enumerate(insts):
        r0, r1, c0, c1 = _pixel_window(inst.quad, height, width)
        th, tw = r1 - r0, c1 - c0
        if th < 2 or tw < 2:
            continue
        sh, sw = int(round(th * cfg.search_scale)), int(round(tw * cfg.search_scale))
        sr0 = max(r0 - (sh - th) // 2, 0)
        sc0 = max(c0 - (sw - tw) // 2, 0)
        sr1, sc1 = min(sr0 + sh, height), min(sc0 + sw, width)
        if sr1 - sr0 <= th or sc1 - sc0 <= tw:
            continue
        try:
            pr, pc, score = ncc_correlate(prev_frame[r0:r1, c0:c1], cur_frame[sr0:sr1, sc0:sc1])
        except NoSignalError:
            continue
        if score < cfg.ncc_accept:
            continue
        shift = np.array([sc0 + pc - c0, sr0 + pr - r0], dtype=np.float64)
        stamps.append(Stamp(source=k, quad=inst.quad + shift, score=score))
    return stamps


def stamps_to_mask(stamps: Sequence[Stamp], height: int, width: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for st in stamps:
        cover = rasterize_quad(st.quad, height, width)
        if cover is not None:
            rs, cs, inside = cover
            mask[rs, cs] |= inside
    return mask


def build_complement_mask(prev_instances: Sequence[TextInstance], prev_frame: np.ndarray,
                          cur_frame: np.ndarray, cfg: ComplementConfig = ComplementConfig()) -> np.ndarray:
    stamps = complement_stamps(prev_instances, prev_frame, cur_frame, cfg)
    return stamps_to_mask(stamps, *cur_frame.shape)


def fuse_and_binarize(prob: np.ndarray, mask: np.ndarray, h1: float = 0.6, h2: float = 0.3,
                      mode: str = "literal") -> tuple[np.ndarray, np.ndarray]:
    """Boost the probability map with the complement mask, then threshold.

    ``literal`` adds the mask only where ``prob > h1``. ``union`` adds it
    wherever the mask is set, which is what lets the complement restore
    regions the detector missed entirely. The fused map is not clamped.
    """
    prob = np.asarray(prob, dtype=np.float64)
    mask = np.asarray(mask)
    if prob.shape != mask.shape:
        raise ValueError(f"shape mismatch: {prob.shape} vs {mask.shape}")
    if not 0 <= h2 <= h1 <= 1:
        raise ValueError("thresholds must satisfy 0 <= h2 <= h1 <= 1")
    m = mask.astype(np.float64)
    if mode == "literal":
        fused = prob + m * (prob > h1)
    elif mode == "union":
        fused = prob + m
    else:
        raise ValueError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")
    return fused, fused > h2


_EIGHT = np.ones((3, 3), dtype=bool)


def _component_outline(sub: np.ndarray, r0: int, c0: int) -> np.ndarray:
    """Pixel-corner points of each row's leftmost and rightmost pixel."""
    rows = np.flatnonzero(sub.any(axis=1))
    left = sub[rows].argmax(axis=1)
    right = sub.shape[1] - 1 - sub[rows][:, ::-1].argmax(axis=1)
    y, xl, xr = rows + r0, left + c0, right + c0 + 1
    return np.concatenate([
        np.stack([xl, y], 1), np.stack([xl, y + 1], 1),
        np.stack([xr, y], 1), np.stack([xr, y + 1], 1),
    ]).astype(np.float64)


def _area_matched(rect: RotatedRect, npix: int) -> RotatedRect:
    """Shrink both sides equally until the box area equals the pixel count.

    The pixel-corner hull of a slanted staircase overshoots the true edges;
    without this, boxes re-extracted frame after frame would keep growing.
    """
    excess = rect.w * rect.h - npix
    if excess <= 0:
        return rect
    s = rect.w + rect.h
    d = (s - math.sqrt(max(s * s - 4 * excess, 0.0))) / 2
    return rect._replace(w=rect.w - d, h=rect.h - d)


def _component_box(sub: np.ndarray, sl, conf_map: np.ndarray) -> Optional[Detection]:
    try:
        rect = _area_matched(min_area_rect(_component_outline(sub, sl[0].start, sl[1].start)), int(sub.sum()))
    except DegenerateGeometryError:
        return None
    conf = float(conf_map[sl][sub].mean())
    return Detection(rotated_rect_to_quad(rect), min(max(conf, 0.0), 1.0))


def extract_boxes(mask: np.ndarray, fused: np.ndarray, min_area: int = 9) -> list[Detection]:
    """8-connected components of ``mask`` as min-area rotated boxes.

    Confidence is the mean of the fused map (clamped to [0, 1]) over the
    component. Output is ordered by the (top, left) corner of each
    component's bounding box.
    """
    labels, count = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)
    if count == 0:
        return []
    conf_map = np.clip(fused, 0.0, 1.0)
    found = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        sub = labels[sl] == lab
        if int(sub.sum()) < min_area:
            continue
        det = _component_box(sub, sl, conf_map)
        if det is not None:
            found.append(((sl[0].start, sl[1].start), det))
    found.sort(key=lambda item: item[0])
    return [det for _, det in found]


def extract_seeded(mask: np.ndarray, fused: np.ndarray, seeds: Sequence[np.ndarray],
                   min_area: int = 9) -> list[tuple[Detection, Optional[int]]]:
    """Like :func:`extract_boxes`, but aware of the quads that produced the mask.

    Each seed belongs to the component holding most of its pixels. A component
    with at most one seed yields its min-area box; a component holding several
    seeds (touching neighbours that fused into one blob) is split back into
    the seed quads. Returns ``(detection, seed index or None)`` pairs.
    """
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape
    labels, count = ndimage.label(mask, structure=_EIGHT)
    if count == 0:
        return []
    conf_map = np.clip(fused, 0.0, 1.0)
    owned: dict[int, list[int]] = {}
    seed_pixels = {}
    for k, quad in enumerate(seeds):
        cover = rasterize_quad(quad, height, width)
        if cover is None:
            continue
        rs, cs, inside = cover
        hit = labels[rs, cs][inside]
        hit = hit[hit > 0]
        if hit.size == 0:
            continue
        lab = int(np.bincount(hit).argmax())
        owned.setdefault(lab, []).append(k)
        seed_pixels[k] = (rs, cs, inside & (labels[rs, cs] == lab))
    found = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        sub = labels[sl] == lab
        if int(sub.sum()) < min_area:
            continue
        key = (sl[0].start, sl[1].start)
        mine = owned.get(lab, [])
        if len(mine) <= 1:
            det = _component_box(sub, sl, conf_map)
            if det is not None:
                found.append((key, 0, det, mine[0] if mine else None))
            continue
        for rank, k in enumerate(mine):
            rs, cs, inside = seed_pixels[k]
            if not inside.any():
                continue
            conf = float(conf_map[rs, cs][inside].mean())
            found.append((key, rank, Detection(np.array(seeds[k], dtype=np.float64), min(max(conf, 0.0), 1.0)), k))
    found.sort(key=lambda item: item[:2])
    return [(det, k) for _, _, det, k in found]
