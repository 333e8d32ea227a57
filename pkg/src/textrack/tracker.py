"""Online tracking: localization -> association -> trajectory updating."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .assignment import Assignment, solve_assignment
from .association import DistanceWeights, build_distance_matrix
from .detection import Detection, TextInstance, Trajectory
from .embeddings import EmbeddingProvider
from .geometry import intersection_area, iou, quad_area
from .localization import (
    FUSION_MODES,
    ComplementConfig,
    Stamp,
    complement_stamps,
    extract_seeded,
    fuse_and_binarize,
    stamps_to_mask,
    synthesize_probability_map,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class TrackerConfig:
    weights: DistanceWeights = DistanceWeights()
    gate: float = 4.0
    h1: float = 0.6
    h2: float = 0.3
    max_lost: int = 30
    min_birth_confidence: float = 0.4
    min_area: int = 9
    fusion: str = "union"
    complement_enabled: bool = True
    complement_only_lost: bool = False
    complement_keep_covered: bool = False
    complement: ComplementConfig = ComplementConfig()
    embedding_enabled: bool = True
    embedding: EmbeddingProvider = EmbeddingProvider()
    margin: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.max_lost < 1:
            raise ConfigError("max_lost must be >= 1")
        if self.gate < 0:
            raise ConfigError("gate must be >= 0")
        if not 0 <= self.h2 <= self.h1 <= 1:
            raise ConfigError("thresholds must satisfy 0 <= h2 <= h1 <= 1")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}")
        if self.min_area < 1:
            raise ConfigError("min_area must be >= 1")

    # flat key=value form ------------------------------------------------

    _NESTED = {
        "alpha": ("weights", float), "beta": ("weights", float), "gamma": ("weights", float),
        "sigma1": ("weights", float), "sigma2": ("weights", float), "sigma3": ("weights", float),
        "search_scale": ("complement", float), "ncc_accept": ("complement", float),
        "max_templates": ("complement", int),
        "dim_visual": ("embedding", int), "dim_semantic": ("embedding", int),
    }
    _RENAMED = {"embedding_kind": ("embedding", "kind", str), "embedding_seed": ("embedding", "seed", int)}
    _PLAIN = {
        "gate": float, "h1": float, "h2": float, "max_lost": int, "min_birth_confidence": float,
        "min_area": int, "fusion": str, "complement_enabled": _parse_bool,
        "complement_only_lost": _parse_bool, "complement_keep_covered": _parse_bool,
        "embedding_enabled": _parse_bool,
        "margin": float, "seed": int,
    }

    def to_flat(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for key in self._PLAIN:
            val = getattr(self, key)
            out[key] = str(val).lower() if isinstance(val, bool) else repr(val) if isinstance(val, float) else str(val)
        for key, (group, _) in self._NESTED.items():
            val = getattr(getattr(self, group), key)
            out[key] = repr(val) if isinstance(val, float) else str(val)
        for key, (group, attr, _) in self._RENAMED.items():
            out[key] = str(getattr(getattr(self, group), attr))
        return dict(sorted(out.items()))

    @classmethod
    def from_flat(cls, flat: dict[str, str], base: Optional["TrackerConfig"] = None) -> "TrackerConfig":
        base = base or cls()
        plain: dict[str, Any] = {}
        groups: dict[str, dict[str, Any]] = {"weights": {}, "complement": {}, "embedding": {}}
        for key, raw in flat.items():
            try:
                if key in cls._PLAIN:
                    plain[key] = cls._PLAIN[key](raw)
                elif key in cls._NESTED:
                    group, conv = cls._NESTED[key]
                    groups[group][key] = conv(raw)
                elif key in cls._RENAMED:
                    group, attr, conv = cls._RENAMED[key]
                    groups[group][attr] = conv(raw)
                else:
                    raise ConfigError(f"unknown config key {key!r}")
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc
        try:
            for group, changes in groups.items():
                if changes:
                    plain[group] = dataclasses.replace(getattr(base, group), **changes)
            return dataclasses.replace(base, **plain)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def with_weights(self, **kw) -> "TrackerConfig":
        return dataclasses.replace(self, weights=dataclasses.replace(self.weights, **kw))


@dataclass
class TrajectoryPool:
    trajectories: dict[int, Trajectory] = field(default_factory=dict)
    removed: dict[int, Trajectory] = field(default_factory=dict)
    next_id: int = 1
    last_t: Optional[int] = None
    last_output: list[TextInstance] = field(default_factory=list)

    def ordered(self) -> list[Trajectory]:
        return [self.trajectories[k] for k in sorted(self.trajectories)]

    def all_trajectories(self) -> list[Trajectory]:
        both = {**self.removed, **self.trajectories}
        return [both[k] for k in sorted(both)]


def update_trajectories(pool: TrajectoryPool, assignment: Assignment, detections: Sequence[Detection],
                        t: int, cfg: TrackerConfig = TrackerConfig()) -> TrajectoryPool:
    """Apply one frame's assignment; rows index ``pool.ordered()`` as it was when matched."""
    rows = pool.ordered()
    for i, j in assignment.pairs:
        rows[i].append(TextInstance.from_detection(detections[j], rows[i].id, t))
    for j in assignment.unmatched_cols:
        det = detections[j]
        if det.confidence < cfg.min_birth_confidence:
            continue
        tid = pool.next_id
        pool.next_id += 1
        pool.trajectories[tid] = Trajectory(tid, [TextInstance.from_detection(det, tid, t)])
    for i in assignment.unmatched_rows:
        tr = rows[i]
        tr.lost_for = t - tr.last_frame
        if tr.lost_for > cfg.max_lost:
            pool.removed[tr.id] = pool.trajectories.pop(tr.id)
    return pool


def _covers(a: np.ndarray, b: np.ndarray) -> bool:
    """True when the smaller of two boxes lies at least half inside the other."""
    inter = intersection_area(a, b)
    return inter > 0 and inter >= 0.5 * min(quad_area(a), quad_area(b))


def _inherit(det: Detection, src) -> Detection:
    return dataclasses.replace(det, transcription=src.transcription, embedding=src.embedding, hint=src.hint)


def localize(pool: TrajectoryPool, raw: Sequence[Detection], prev_frame: Optional[np.ndarray],
             cur_frame: np.ndarray, cfg: TrackerConfig) -> list[Detection]:
    """Probability map + complement mask -> fused binary mask -> boxes."""
    height, width = cur_frame.shape
    prob = synthesize_probability_map(raw, width, height)
    sources: list[TextInstance] = []
    if prev_frame is not None:
        sources = list(pool.last_output)
        if cfg.complement_only_lost:
            sources = [s for s in sources if all(iou(s.quad, r.quad) < 0.5 for r in raw)]
    stamps = complement_stamps(sources, prev_frame, cur_frame, cfg.complement) if sources else []
    if not cfg.complement_keep_covered:
        stamps = [st for st in stamps if not any(_covers(r.quad, st.quad) for r in raw)]
    mask = stamps_to_mask(stamps, height, width)
    fused, binary = fuse_and_binarize(prob, mask, cfg.h1, cfg.h2, cfg.fusion)
    # raw detections seed first so they win attribution over stamps
    seeds = [r.quad for r in raw] + [st.quad for st in stamps]
    origin = list(raw) + [sources[st.source] for st in stamps]
    return [det if k is None else _inherit(det, origin[k])
            for det, k in extract_seeded(binary, fused, seeds, cfg.min_area)]


def step(pool: TrajectoryPool, raw_detections: Sequence[Detection], prev_frame: Optional[np.ndarray],
         cur_frame: Optional[np.ndarray], t: int,
         cfg: TrackerConfig = TrackerConfig()) -> tuple[TrajectoryPool, list[TextInstance]]:
    if pool.last_t is not None and t <= pool.last_t:
        raise ValueError(f"frame index must increase: got {t} after {pool.last_t}")
    if cfg.complement_enabled:
        if cur_frame is None:
            raise ValueError("complementation needs the current frame")
        dets = localize(pool, raw_detections, prev_frame, cur_frame, cfg)
    else:
        dets = list(raw_detections)
    if cfg.embedding_enabled:
        dets = cfg.embedding.embed_all(dets, cur_frame)
    cost = build_distance_matrix(pool, dets, t, cfg.weights, use_embedding=cfg.embedding_enabled)
    assignment = solve_assignment(cost, cfg.gate)
    update_trajectories(pool, assignment, dets, t, cfg)
    output = sorted((tr.latest for tr in pool.trajectories.values() if tr.last_frame == t),
                    key=lambda inst: inst.trajectory_id)
    pool.last_t = t
    pool.last_output = output
    return pool, output


class Tracker:
    """Stateful wrapper around :func:`step` that remembers the previous frame."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig()):
        self.cfg = cfg
        self.pool = TrajectoryPool()
        self._prev_frame: Optional[np.ndarray] = None

    def update(self, detections: Sequence[Detection], frame: Optional[np.ndarray], t: int) -> list[TextInstance]:
        _, out = step(self.pool, detections, self._prev_frame, frame, t, self.cfg)
        self._prev_frame = frame
        return out


@dataclass
class VideoInput:
    """Per-frame detections plus optional pixels.

    ``frames`` may be any indexable sequence (e.g. a lazy reader); it is
    only touched when the configuration needs pixels.
    """

    detections: list[list[Detection]]
    frames: Optional[Sequence[np.ndarray]] = None
    n_frames: Optional[int] = None

    def __post_init__(self):
        if self.n_frames is None:
            self.n_frames = max(len(self.detections), len(self.frames) if self.frames is not None else 0)

    def detections_at(self, t: int) -> list[Detection]:
        return self.detections[t] if t < len(self.detections) else []


@dataclass
class TrajectorySummary:
    id: int
    birth: int
    last: int
    length: int
    status: str  # active | lost | removed


@dataclass
class TrackingResult:
    records: list[TextInstance]
    config: dict[str, str]
    seed: int
    n_frames: int
    trajectories: list[TrajectorySummary] = field(default_factory=list)

    def by_frame(self) -> dict[int, dict[int, np.ndarray]]:
        frames: dict[int, dict[int, np.ndarray]] = {}
        for r in self.records:
            frames.setdefault(r.frame, {})[r.trajectory_id] = r.quad
        return frames


def _needs_pixels(cfg: TrackerConfig) -> bool:
    return cfg.complement_enabled or (cfg.embedding_enabled and cfg.embedding.kind in ("patch", "patch+transcription"))


def run_video(video: VideoInput, cfg: TrackerConfig = TrackerConfig(),
              on_frame: Optional[Callable[[int, list[TextInstance]], None]] = None) -> TrackingResult:
    tracker = Tracker(cfg)
    pixels = _needs_pixels(cfg)
    if pixels and video.frames is None:
        raise ValueError("this configuration needs frame pixels but none were given")
    records: list[TextInstance] = []
    for t in range(video.n_frames):
        frame = None
        if pixels:
            try:
                frame = video.frames[t]
            except (OSError, IndexError) as exc:
                raise OSError(f"frame {t}: {exc}") from exc
        out = tracker.update(video.detections_at(t), frame, t)
        records.extend(out)
        if on_frame is not None:
            on_frame(t, out)
    pool = tracker.pool
    summaries = []
    for tr in pool.all_trajectories():
        status = "removed" if tr.id in pool.removed else tr.state
        summaries.append(TrajectorySummary(tr.id, tr.birth_frame, tr.last_frame, len(tr.instances), status))
    records.sort(key=lambda r: (r.frame, r.trajectory_id))
    log.debug("tracked %d frames, %d trajectories", video.n_frames, len(summaries))
    return TrackingResult(records, cfg.to_flat(), cfg.seed, video.n_frames, summaries)
