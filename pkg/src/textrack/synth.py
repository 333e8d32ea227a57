"""Deterministic synthetic video-text scenarios.

Randomness comes from numpy's PCG64 generator. Each concern (layout,
textures, words, dropout, jitter, confidence, distractors, background) draws
from its own stream, derived from the scenario seed and the CRC-32 of the
stream name, so changing one knob never shifts another stream's draws.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, fields
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .detection import Detection
from .geometry import RotatedRect, as_quad, iou, rasterize_quad, rotated_rect_to_quad
from .metrics import GroundTruth

MOTIONS = ("linear", "crossing", "circular")
TEXTURE_GRID = (3, 8)  # rows x cols of constant-intensity cells per box


class SpecError(ValueError):
    pass


def stream(seed: int, name: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed & (2**64 - 1), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.PCG64(ss))


@lru_cache(maxsize=None)
def _word_list() -> tuple[str, ...]:
    text = resources.files("textrack").joinpath("data/words.txt").read_text(encoding="utf-8")
    return tuple(w for w in text.split() if w)


@dataclass(frozen=True)
class ScenarioSpec:
    width: int = 512
    height: int = 384
    frames: int = 200
    tracks: int = 20
    motion: str | tuple[str, ...] = "linear"
    speed: float = 2.0
    dropout_p: float = 0.0
    jitter_sigma: float = 0.0
    distractor_rate: float = 0.0
    twin_pairs: int = 0
    seed: int = 0
    box_width: tuple[float, float] = (36.0, 64.0)
    box_height: tuple[float, float] = (14.0, 22.0)
    max_angle: float = 0.2

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.frames < 0 or self.tracks < 0:
            raise SpecError("dimensions and counts must be positive")
        for name in ("dropout_p",):
            if not 0 <= getattr(self, name) <= 1:
                raise SpecError(f"{name} must lie in [0, 1]")
        if self.jitter_sigma < 0 or self.distractor_rate < 0 or self.speed < 0:
            raise SpecError("jitter, distractor rate and speed must be non-negative")
        if self.twin_pairs < 0 or 2 * self.twin_pairs > self.tracks:
            raise SpecError("twin_pairs needs two distinct tracks per pair")
        for m in self.motions:
            if m not in MOTIONS:
                raise SpecError(f"unknown motion {m!r}; expected one of {MOTIONS}")
        if self.box_width[0] > self.box_width[1] or self.box_height[0] > self.box_height[1]:
            raise SpecError("box size ranges must be (low, high)")

    @property
    def motions(self) -> tuple[str, ...]:
        if isinstance(self.motion, str):
            return (self.motion,) * self.tracks
        if len(self.motion) != self.tracks:
            raise SpecError("per-track motion list must have one entry per track")
        return tuple(self.motion)

    def to_flat(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                out[f.name] = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            else:
                out[f.name] = repr(v) if isinstance(v, float) else str(v)
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "ScenarioSpec":
        kinds = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in flat.items():
            if key not in kinds:
                raise SpecError(f"unknown scenario key {key!r}")
            try:
                if key == "motion":
                    parts = tuple(p.strip() for p in raw.split(","))
                    kw[key] = parts[0] if len(parts) == 1 else parts
                elif key in ("box_width", "box_height"):
                    lo, hi = (float(p) for p in raw.split(","))
                    kw[key] = (lo, hi)
                elif key in ("width", "height", "frames", "tracks", "twin_pairs", "seed"):
                    kw[key] = int(raw)
                else:
                    kw[key] = float(raw)
            except ValueError as exc:
                raise SpecError(f"bad value for {key!r}: {raw!r}") from exc
        return cls(**kw)


@dataclass
class TrackPlan:
    gt_id: int
    w: float
    h: float
    theta: float
    motion: str
    texture_seed: int
    word: str
    params: dict = field(default_factory=dict)

    def center(self, t: int) -> tuple[float, float]:
        p = self.params
        if self.motion == "circular":
            a = p["phase"] + p["omega"] * t
            return p["cx"] + p["r"] * math.cos(a), p["cy"] + p["r"] * math.sin(a)
        if self.motion == "crossing":
            s = t / p["span"] if p["span"] > 0 else 0.0
            return (p["ax"] + (p["bx"] - p["ax"]) * s, p["ay"] + (p["by"] - p["ay"]) * s)
        return (_bounce(p["x0"] + p["vx"] * t, p["xlo"], p["xhi"]),
                _bounce(p["y0"] + p["vy"] * t, p["ylo"], p["yhi"]))

    def rect(self, t: int) -> RotatedRect:
        cx, cy = self.center(t)
        return RotatedRect(cx, cy, self.w, self.h, self.theta)


def _bounce(x: float, lo: float, hi: float) -> float:
    span = hi - lo
    if span <= 0:
        return lo
    y = (x - lo) % (2 * span)
    return lo + (span - abs(y - span))


@dataclass
class Scenario:
    spec: ScenarioSpec
    frames: list[np.ndarray]
    gt: GroundTruth
    detections: list[list[Detection]]
    plans: list[TrackPlan]
    dropped: int = 0


@lru_cache(maxsize=4096)
def texture_grid(texture_seed: int) -> np.ndarray:
    """Seeded cell intensities; redrawn until the pattern has real contrast."""
    rng = np.random.Generator(np.random.PCG64(texture_seed))
    while True:
        grid = rng.integers(20, 236, size=TEXTURE_GRID).astype(np.uint8)
        if int(grid.max()) - int(grid.min()) >= 80:
            grid.setflags(write=False)
            return grid


def _render_into(frame: np.ndarray, rect: RotatedRect, texture_seed: int) -> None:
    quad = rotated_rect_to_quad(rect)
    cover = rasterize_quad(quad, *frame.shape)
    if cover is None:
        return
    rs, cs, inside = cover
    ys, xs = np.mgrid[rs, cs]
    dx, dy = xs + 0.5 - rect.cx, ys + 0.5 - rect.cy
    c, s = math.cos(rect.theta), math.sin(rect.theta)
    u = dx * c + dy * s + rect.w / 2
    v = -dx * s + dy * c + rect.h / 2
    ny, nx = TEXTURE_GRID
    ix = np.clip(np.floor(u / rect.w * nx).astype(int), 0, nx - 1)
    iy = np.clip(np.floor(v / rect.h * ny).astype(int), 0, ny - 1)
    grid = texture_grid(texture_seed)
    window = frame[rs, cs]
    window[inside] = grid[iy[inside], ix[inside]]


def render_box(frame: np.ndarray, rect: RotatedRect, texture_seed: int) -> np.ndarray:
    """Copy of ``frame`` with the rectangle's interior replaced by its texture.

    The texture is a fixed grid of cells stretched over the box in its own
    frame, so equal seeds give equal descriptors at any box size, and
    integer translations move the pattern unchanged. Edges are hard.
    """
    out = np.array(frame, dtype=np.uint8, copy=True)
    _render_into(out, rect, texture_seed)
    return out


def _half_extent(w: float, h: float, theta: float) -> tuple[float, float]:
    c, s = abs(math.cos(theta)), abs(math.sin(theta))
    return (w * c + h * s) / 2, (w * s + h * c) / 2


def _boxes_clear(quad: np.ndarray, placed: Sequence[np.ndarray], margin: float = 2.0) -> bool:
    x0, y0 = quad.min(axis=0) - margin
    x1, y1 = quad.max(axis=0) + margin
    for q in placed:
        if not (q[:, 0].max() < x0 or q[:, 0].min() > x1 or q[:, 1].max() < y0 or q[:, 1].min() > y1):
            return False
    return True


def _plan_tracks(spec: ScenarioSpec) -> list[TrackPlan]:
    layout = stream(spec.seed, "layout")
    tex = stream(spec.seed, "texture")
    words_rng = stream(spec.seed, "words")
    words = _word_list()
    motions = spec.motions
    n = spec.tracks

    # crossing tracks pair up in order; partners share size and angle
    partner: dict[int, int] = {}
    pending = None
    for i, m in enumerate(motions):
        if m == "crossing":
            if pending is None:
                pending = i
            else:
                partner[pending], partner[i] = i, pending
                pending = None
    if pending is not None:
        raise SpecError("crossing motion needs an even number of crossing tracks")

    sizes: dict[int, tuple[float, float, float]] = {}
    for i in range(n):
        if i in partner and partner[i] < i:
            sizes[i] = sizes[partner[i]]
            continue
        sizes[i] = (float(layout.uniform(*spec.box_width)), float(layout.uniform(*spec.box_height)),
                    float(layout.uniform(-spec.max_angle, spec.max_angle)))

    tex_seeds = [int(s) for s in tex.integers(0, 2**63 - 1, size=n)]
    track_words = [words[int(k)] for k in words_rng.integers(0, len(words), size=n)]
    for k in range(spec.twin_pairs):
        a, b = k, n - 1 - k
        tex_seeds[b] = tex_seeds[a]
        track_words[b] = track_words[a]
        wa, ha, _ = sizes[a]
        wb, hb, tb = sizes[b]
        if abs(wa - wb) < 0.25 * max(wa, wb):  # twins must differ in shape
            wb = wa * 1.4 if wa * 1.4 <= spec.box_width[1] * 1.5 else wa / 1.4
            for j in {b, partner.get(b, b)}:
                sizes[j] = (wb, hb, tb)

    plans: list[TrackPlan] = []
    placed: list[np.ndarray] = []
    for i in range(n):
        w, h, theta = sizes[i]
        hx, hy = _half_extent(w, h, theta)
        xlo, xhi, ylo, yhi = hx, spec.width - hx, hy, spec.height - hy
        if xlo > xhi or ylo > yhi:
            raise SpecError(f"track {i + 1} ({w:.1f}x{h:.1f}) does not fit in the frame")
        m = motions[i]
        plan = TrackPlan(i + 1, w, h, theta, m, tex_seeds[i], track_words[i])
        if m == "crossing" and partner[i] < i:
            p = plans[partner[i]].params
            ox, oy = p["offset"]
            plan.params = dict(ax=p["bx"] + ox, ay=p["by"] + oy, bx=p["ax"] + ox, by=p["ay"] + oy,
                               span=p["span"])
            plans.append(plan)
            continue
        for attempt in range(60):
            if m == "linear":
                x0, y0 = layout.uniform(xlo, xhi), layout.uniform(ylo, yhi)
                ang = layout.uniform(0, 2 * math.pi)
                plan.params = dict(x0=x0, y0=y0, vx=spec.speed * math.cos(ang), vy=spec.speed * math.sin(ang),
                                   xlo=xlo, xhi=xhi, ylo=ylo, yhi=yhi)
            elif m == "circular":
                r = layout.uniform(15.0, 50.0)
                cx = layout.uniform(xlo + r, xhi - r) if xhi - xlo > 2 * r else (xlo + xhi) / 2
                cy = layout.uniform(ylo + r, yhi - r) if yhi - ylo > 2 * r else (ylo + yhi) / 2
                r = min(r, (xhi - xlo) / 2, (yhi - ylo) / 2)
                plan.params = dict(cx=cx, cy=cy, r=r, omega=spec.speed / r if r > 0 else 0.0,
                                   phase=layout.uniform(0, 2 * math.pi))
            else:
                half = spec.speed * max(spec.frames - 1, 0) / 2
                ang = layout.uniform(-0.5, 0.5) + (math.pi if layout.random() < 0.5 else 0.0)
                ux, uy = math.cos(ang), math.sin(ang)
                shift = 0.25 * h  # partner runs on a parallel line so the boxes overlap but are not identical
                sx, sy = -uy * shift, ux * shift
                reach_x = abs(ux) * half + abs(sx)
                reach_y = abs(uy) * half + abs(sy)
                if xhi - xlo < 2 * reach_x or yhi - ylo < 2 * reach_y:
                    if attempt < 59:
                        continue
                    raise SpecError(f"crossing track {i + 1} path does not fit in the frame")
                mx = layout.uniform(xlo + reach_x, xhi - reach_x)
                my = layout.uniform(ylo + reach_y, yhi - reach_y)
                plan.params = dict(ax=mx - ux * half - sx, ay=my - uy * half - sy,
                                   bx=mx + ux * half - sx, by=my + uy * half - sy,
                                   span=max(spec.frames - 1, 1), offset=(2 * sx, 2 * sy))
            quad = rotated_rect_to_quad(plan.rect(0))
            if _boxes_clear(quad, placed):
                break
        if m == "crossing":
            placed.append(rotated_rect_to_quad(plan.rect(0)))
            placed.append(rotated_rect_to_quad(plan.rect(plan.params["span"])))
        else:
            placed.append(rotated_rect_to_quad(plan.rect(0)))
        plans.append(plan)
    return plans


def _background(spec: ScenarioSpec) -> np.ndarray:
    rng = stream(spec.seed, "background")
    return np.clip(np.rint(118 + 6 * rng.standard_normal((spec.height, spec.width))), 0, 255).astype(np.uint8)


def generate(spec: ScenarioSpec) -> Scenario:
    plans = _plan_tracks(spec)
    background = _background(spec)
    drop_rng = stream(spec.seed, "dropout")
    jitter_rng = stream(spec.seed, "jitter")
    conf_rng = stream(spec.seed, "confidence")
    dis_rng = stream(spec.seed, "distractor")
    words = _word_list()

    frames: list[np.ndarray] = []
    gt_tracks: dict[int, list] = {p.gt_id: [] for p in plans}
    detections: list[list[Detection]] = []
    dropped = 0
    for t in range(spec.frames):
        frame = background.copy()
        dets: list[Detection] = []
        for p in plans:
            rect = p.rect(t)
            _render_into(frame, rect, p.texture_seed)
            quad = rotated_rect_to_quad(rect)
            gt_tracks[p.gt_id].append((t, quad, p.word))
            drop = drop_rng.random() < spec.dropout_p
            noise = jitter_rng.standard_normal(8).reshape(4, 2) * spec.jitter_sigma
            conf = float(conf_rng.uniform(0.5, 1.0))
            if drop:
                dropped += 1
                continue
            dets.append(Detection(as_quad(quad + noise), conf, transcription=p.word, hint=p.gt_id))
        for _ in range(int(dis_rng.poisson(spec.distractor_rate))):
            w = dis_rng.uniform(*spec.box_width)
            h = dis_rng.uniform(*spec.box_height)
            theta = dis_rng.uniform(-spec.max_angle, spec.max_angle)
            hx, hy = _half_extent(w, h, theta)
            cx = dis_rng.uniform(hx, max(hx, spec.width - hx))
            cy = dis_rng.uniform(hy, max(hy, spec.height - hy))
            word = words[int(dis_rng.integers(0, len(words)))]
            dets.append(Detection(rotated_rect_to_quad(RotatedRect(cx, cy, w, h, theta)),
                                  float(dis_rng.uniform(0.3, 0.8)), transcription=word, hint=-1))
        frames.append(frame)
        detections.append(dets)
    return Scenario(spec, frames, GroundTruth(gt_tracks), detections, plans, dropped)


def gt_detections(scenario: Scenario) -> list[list[Detection]]:
    """Uncorrupted detections straight from the ground truth."""
    out = []
    by_frame = scenario.gt.by_frame()
    words = {p.gt_id: p.word for p in scenario.plans}
    for t in range(scenario.spec.frames):
        out.append([Detection(q, 1.0, transcription=words[g], hint=g)
                    for g, q in sorted(by_frame.get(t, {}).items())])
    return out


def source_iou(det: Detection, scenario: Scenario, t: int) -> Optional[float]:
    if det.hint < 0:
        return None
    for frame, quad, _ in scenario.gt.trajectories[det.hint]:
        if frame == t:
            return iou(det.quad, quad)
    return None
