"""File formats: detections, ground truth, graymap frames, configs, results, reports.

All writers go through :func:`atomic_write` (temp file + rename) and format
floats with ``repr`` so every reader/writer pair round-trips exactly.
"""

from __future__ import annotations

import json
import math
import os
import re
import tempfile
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .detection import Detection, TextInstance
from .metrics import GroundTruth, MetricsReport
from .synth import ScenarioSpec
from .tracker import TrackerConfig, TrackingResult, TrajectorySummary

RESULT_MAGIC = "# textrack-result 1"
FRAME_PATTERN = "{:06d}.pgm"


class FormatError(ValueError):
    """A text input is malformed; carries a 1-based line and column when known."""

    def __init__(self, reason: str, path=None, line: Optional[int] = None, column: Optional[int] = None):
        self.reason, self.path, self.line, self.column = reason, path, line, column
        where = str(path) if path is not None else "<input>"
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {reason}")


class FrameFormatError(OSError):
    """Unreadable graymap (bad header, unsupported depth, short payload)."""


def _num(x: float) -> str:
    return repr(float(x))


def atomic_write(path, data: str | bytes) -> None:
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


# tokens: JSON-style quoted strings or bare runs of non-space characters
_TOKEN = re.compile(r'"(?:[^"\\]|\\.)*"|\S+')


def _tokens(line: str) -> list[tuple[str, int]]:
    return [(m.group(), m.start() + 1) for m in _TOKEN.finditer(line)]


def _content_lines(text: str) -> Iterator[tuple[int, str]]:
    for n, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            yield n, line


class _Cursor:
    def __init__(self, toks, path, line):
        self.toks, self.pos, self.path, self.line = toks, 0, path, line

    def fail(self, reason, col=None):
        if col is None:
            col = self.toks[self.pos][1] if self.pos < len(self.toks) else None
        raise FormatError(reason, self.path, self.line, col)

    def more(self) -> bool:
        return self.pos < len(self.toks)

    def peek(self) -> str:
        return self.toks[self.pos][0]

    def take(self, what: str) -> tuple[str, int]:
        if not self.more():
            self.fail(f"missing {what}")
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def int(self, what: str) -> int:
        tok, col = self.take(what)
        try:
            return int(tok)
        except ValueError:
            self.fail(f"{what} must be an integer, got {tok!r}", col)

    def float(self, what: str) -> float:
        tok, col = self.take(what)
        try:
            val = float(tok)
        except ValueError:
            self.fail(f"{what} must be a number, got {tok!r}", col)
        if not math.isfinite(val):
            self.fail(f"{what} must be finite", col)
        return val

    def quoted(self) -> Optional[str]:
        if not self.more() or not self.peek().startswith('"'):
            return None
        tok, col = self.take("transcription")
        try:
            return json.loads(tok)
        except json.JSONDecodeError as exc:
            self.fail(f"bad quoted string: {exc.msg}", col)

    def done(self):
        if self.more():
            self.fail(f"unexpected trailing token {self.peek()!r}")


def _quote(text: str) -> str:
    return json.dumps(text, ensure_ascii=False)


# detections -----------------------------------------------------------------


def format_detection(frame: int, det: Detection) -> str:
    parts = [str(frame), str(det.hint)]
    parts += [_num(v) for v in det.quad.ravel()]
    parts.append(_num(det.confidence))
    if det.transcription is not None:
        parts.append(_quote(det.transcription))
    if det.embedding is not None:
        parts.append(str(det.embedding.size))
        parts += [_num(v) for v in det.embedding]
    return " ".join(parts)


def dump_detections(per_frame: Sequence[Sequence[Detection]]) -> str:
    return "".join(format_detection(t, d) + "\n" for t, dets in enumerate(per_frame) for d in dets)


def write_detections(path, per_frame: Sequence[Sequence[Detection]]) -> None:
    atomic_write(path, dump_detections(per_frame))


def parse_detections(text: str, path=None) -> list[list[Detection]]:
    """``frame hint x1 y1 .. x4 y4 conf ["transcription"] [dim v1 .. vdim]`` per line."""
    found: dict[int, list[Detection]] = {}
    for n, line in _content_lines(text):
        cur = _Cursor(_tokens(line), path, n)
        frame = cur.int("frame index")
        if frame < 0:
            cur.fail("frame index must be >= 0", 1)
        hint = cur.int("trajectory hint")
        coords = [cur.float(f"coordinate {k + 1}") for k in range(8)]
        conf_col = cur.toks[cur.pos][1] if cur.more() else None
        conf = cur.float("confidence")
        if not 0.0 <= conf <= 1.0:
            cur.fail(f"confidence {conf} outside [0, 1]", conf_col)
        text_field = cur.quoted()
        emb = None
        if cur.more():
            dim = cur.int("embedding dimension")
            if dim < 1:
                cur.fail("embedding dimension must be >= 1")
            emb = np.array([cur.float(f"embedding value {k + 1}") for k in range(dim)])
        cur.done()
        found.setdefault(frame, []).append(Detection(np.array(coords).reshape(4, 2), conf, emb, text_field, hint))
    n_frames = max(found) + 1 if found else 0
    return [found.get(t, []) for t in range(n_frames)]


def load_detections(path) -> list[list[Detection]]:
    return parse_detections(Path(path).read_text(encoding="utf-8"), path)


# ground truth ---------------------------------------------------------------


def dump_ground_truth(gt: GroundTruth) -> str:
    rows = []
    for gid in sorted(gt.trajectories):
        for frame, quad, text in gt.trajectories[gid]:
            rows.append((frame, gid, quad, text))
    rows.sort(key=lambda r: (r[0], r[1]))
    out = []
    for frame, gid, quad, text in rows:
        line = " ".join([str(frame), str(gid)] + [_num(v) for v in np.asarray(quad).ravel()])
        if text is not None:
            line += " " + _quote(text)
        out.append(line + "\n")
    return "".join(out)


def write_ground_truth(path, gt: GroundTruth) -> None:
    atomic_write(path, dump_ground_truth(gt))


def _build_gt(items: Iterable[tuple[int, int, np.ndarray, Optional[str]]], path, where) -> GroundTruth:
    tracks: dict[int, dict[int, tuple]] = {}
    for frame, gid, quad, text, line in items:
        per = tracks.setdefault(gid, {})
        if frame in per:
            raise FormatError(f"duplicate box for track {gid} in frame {frame}", path, line)
        per[frame] = (frame, quad, text)
    return GroundTruth({gid: [per[f] for f in sorted(per)] for gid, per in sorted(tracks.items())})


def parse_ground_truth(text: str, path=None) -> GroundTruth:
    """Canonical ``frame id x1 y1 .. x4 y4 ["transcription"]`` lines, or ICDAR XML."""
    if text.lstrip().startswith("<"):
        return parse_icdar_xml(text, path)
    items = []
    for n, line in _content_lines(text):
        cur = _Cursor(_tokens(line), path, n)
        frame = cur.int("frame index")
        if frame < 0:
            cur.fail("frame index must be >= 0", 1)
        gid = cur.int("track id")
        coords = [cur.float(f"coordinate {k + 1}") for k in range(8)]
        words = cur.quoted()
        cur.done()
        items.append((frame, gid, np.array(coords).reshape(4, 2), words, n))
    return _build_gt(items, path, None)


def parse_icdar_xml(text: str, path=None) -> GroundTruth:
    """ICDAR VideoText-style ``<Frames><frame ID><object ID Transcription><Point x y/>``.

    Reads only frame ``ID`` (1-based, shifted to 0-based), object ``ID``,
    optional ``Transcription`` and exactly four ``Point`` children. Anything
    else is ignored; missing required pieces raise :class:`FormatError`.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise FormatError(f"malformed XML: {exc}", path, line, col + 1) from exc
    frames = [root] if root.tag == "frame" else root.findall("frame")
    if root.tag not in ("Frames", "frame"):
        raise FormatError(f"expected <Frames> root, found <{root.tag}>", path)
    items = []
    for fr in frames:
        fid = fr.get("ID")
        if fid is None or not fid.strip().lstrip("-").isdigit():
            raise FormatError(f"<frame> needs an integer ID attribute, got {fid!r}", path)
        frame = int(fid) - 1
        if frame < 0:
            raise FormatError(f"frame ID {fid} is not 1-based", path)
        for obj in fr.findall("object"):
            oid = obj.get("ID")
            try:
                gid = int(oid)
            except (TypeError, ValueError):
                raise FormatError(f"frame {fid}: <object> needs an integer ID, got {oid!r}", path) from None
            pts = obj.findall("Point")
            if len(pts) != 4:
                raise FormatError(f"frame {fid} object {oid}: expected 4 <Point>, found {len(pts)}", path)
            try:
                quad = np.array([[float(p.get("x")), float(p.get("y"))] for p in pts])
            except (TypeError, ValueError):
                raise FormatError(f"frame {fid} object {oid}: <Point> needs numeric x and y", path) from None
            items.append((frame, gid, quad, obj.get("Transcription"), None))
    return _build_gt(items, path, None)


def load_ground_truth(path) -> GroundTruth:
    return parse_ground_truth(Path(path).read_text(encoding="utf-8"), path)


# graymap frames ---------------------------------------------------------------


def encode_pgm(frame: np.ndarray) -> bytes:
    arr = np.asarray(frame)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ValueError(f"frames are 2-D uint8 arrays, got {arr.dtype} {arr.shape}")
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(arr).tobytes()


def decode_pgm(data: bytes, path=None) -> np.ndarray:
    name = str(path) if path is not None else "<bytes>"
    pos = 0
    fields = []
    while len(fields) < 4:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FrameFormatError(f"{name}: truncated graymap header")
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise FrameFormatError(f"{name}: not a binary graymap (magic {fields[0][:8]!r})")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise FrameFormatError(f"{name}: malformed graymap header") from None
    if w <= 0 or h <= 0:
        raise FrameFormatError(f"{name}: bad dimensions {w}x{h}")
    if maxval != 255:
        raise FrameFormatError(f"{name}: unsupported maxval {maxval} (only 255)")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FrameFormatError(f"{name}: truncated graymap header")
    pos += 1
    payload = data[pos:pos + w * h]
    if len(payload) < w * h:
        raise FrameFormatError(f"{name}: truncated payload ({len(payload)} of {w * h} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


def read_frame(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes(), path)


def write_frame(path, frame: np.ndarray) -> None:
    atomic_write(path, encode_pgm(frame))


class FrameDirectory(Sequence):
    """Lazily reads ``000000.pgm``, ``000001.pgm``, ... from a directory."""

    def __init__(self, root, n_frames: Optional[int] = None):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"frames directory not found: {self.root}")
        if n_frames is None:
            n_frames = 0
            while (self.root / FRAME_PATTERN.format(n_frames)).exists():
                n_frames += 1
        self.n_frames = n_frames

    def __len__(self) -> int:
        return self.n_frames

    def __getitem__(self, t):
        if isinstance(t, slice):
            return [self[k] for k in range(*t.indices(len(self)))]
        if not 0 <= t < self.n_frames:
            raise IndexError(f"frame {t} out of range")
        return read_frame(self.root / FRAME_PATTERN.format(t))


def write_frames(root, frames: Sequence[np.ndarray]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(frames):
        write_frame(root / FRAME_PATTERN.format(t), frame)


# key=value files --------------------------------------------------------------


def parse_key_values(text: str, path=None) -> dict[str, str]:
    out: dict[str, str] = {}
    for n, line in _content_lines(text):
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise FormatError("expected key=value", path, n, 1)
        if key in out:
            raise FormatError(f"duplicate key {key!r}", path, n, 1)
        out[key] = value.strip()
    return out


def dump_key_values(flat: dict[str, str]) -> str:
    return "".join(f"{k}={v}\n" for k, v in flat.items())


def load_config(path) -> TrackerConfig:
    return TrackerConfig.from_flat(parse_key_values(Path(path).read_text(encoding="utf-8"), path))


def write_config(path, cfg: TrackerConfig) -> None:
    atomic_write(path, dump_key_values(cfg.to_flat()))


def load_scenario_spec(path) -> ScenarioSpec:
    return ScenarioSpec.from_flat(parse_key_values(Path(path).read_text(encoding="utf-8"), path))


def write_scenario_spec(path, spec: ScenarioSpec) -> None:
    atomic_write(path, dump_key_values(spec.to_flat()))


# tracking results ---------------------------------------------------------------


def dump_result(result: TrackingResult) -> str:
    lines = [RESULT_MAGIC, f"# seed={result.seed}", f"# n_frames={result.n_frames}"]
    lines += [f"# config {k}={v}" for k, v in result.config.items()]
    for r in sorted(result.records, key=lambda r: (r.frame, r.trajectory_id)):
        lines.append(" ".join(["I", str(r.frame), str(r.trajectory_id)]
                              + [_num(v) for v in r.quad.ravel()] + [_num(r.confidence)]))
    for s in result.trajectories:
        lines.append(f"T {s.id} {s.birth} {s.last} {s.length} {s.status}")
    return "\n".join(lines) + "\n"


def write_result(path, result: TrackingResult) -> None:
    atomic_write(path, dump_result(result))


def parse_result(text: str, path=None) -> TrackingResult:
    lines = text.splitlines()
    if not lines or lines[0].strip() != RESULT_MAGIC:
        raise FormatError("not a tracking result file (missing header)", path, 1, 1)
    seed, n_frames, config = 0, 0, {}
    records, summaries = [], []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            key, _, value = body.partition("=")
            if key == "seed":
                seed = int(value)
            elif key == "n_frames":
                n_frames = int(value)
            elif body.startswith("config "):
                k, _, v = body[len("config "):].partition("=")
                config[k.strip()] = v.strip()
            continue
        cur = _Cursor(_tokens(line), path, n)
        kind, col = cur.take("record kind")
        if kind == "I":
            frame = cur.int("frame index")
            tid = cur.int("trajectory id")
            coords = [cur.float(f"coordinate {k + 1}") for k in range(8)]
            conf = cur.float("confidence")
            cur.done()
            try:
                records.append(TextInstance(np.array(coords).reshape(4, 2), conf, tid, frame))
            except ValueError as exc:
                cur.fail(str(exc), 1)
        elif kind == "T":
            tid, birth, last, length = (cur.int(w) for w in ("id", "birth", "last", "length"))
            status, _ = cur.take("status")
            cur.done()
            summaries.append(TrajectorySummary(tid, birth, last, length, status))
        else:
            cur.fail(f"unknown record kind {kind!r}", col)
    keys = [(r.frame, r.trajectory_id) for r in records]
    if keys != sorted(keys) or len(set(keys)) != len(keys):
        raise FormatError("records must be sorted by (frame, trajectory id) without duplicates", path)
    return TrackingResult(records, config, seed, n_frames, summaries)


def load_result(path) -> TrackingResult:
    return parse_result(Path(path).read_text(encoding="utf-8"), path)


# metric reports -----------------------------------------------------------------


def dump_report_text(report: MetricsReport | dict) -> str:
    items = report.as_dict() if isinstance(report, MetricsReport) else report
    return "".join(f"{k}={_num(v) if isinstance(v, float) else v}\n" for k, v in items.items())


def dump_report_json(report: MetricsReport | dict) -> str:
    items = report.as_dict() if isinstance(report, MetricsReport) else report
    return json.dumps(items, indent=2, sort_keys=False) + "\n"


def parse_report_text(text: str, path=None) -> dict:
    out = {}
    for key, value in parse_key_values(text, path).items():
        try:
            out[key] = int(value)
        except ValueError:
            out[key] = float(value)
    return out
