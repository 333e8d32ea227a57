"""Command-line entry point: ``textrack {track,eval,synth,bench}``.

Exit status is 0 on success, 1 for invalid input (bad flags, malformed files,
bad configuration) and 2 for I/O failures. Nothing is left behind on failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Iterator, Optional, Sequence

from . import bench as benchmod
from . import io as fio
from .metrics import evaluate
from .synth import generate
from .tracker import TrackerConfig, VideoInput, run_video

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

log = logging.getLogger("textrack")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@contextlib.contextmanager
def _staged_dir(target: Path) -> Iterator[Path]:
    """Build a directory next to ``target`` and move it into place on success."""
    target = Path(target)
    if target.exists() and (not target.is_dir() or any(target.iterdir())):
        raise FileExistsError(f"output directory exists and is not empty: {target}")
    parent = target.parent if str(target.parent) else Path(".")
    parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=parent))
    try:
        yield stage
        if target.exists():
            target.rmdir()
        os.replace(stage, target)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise


@contextlib.contextmanager
def _all_or_nothing(paths: Sequence[Path]) -> Iterator[None]:
    """Remove any of ``paths`` created inside the block if it raises."""
    existed = {p: p.exists() for p in paths}
    try:
        yield
    except BaseException:
        for p in paths:
            if not existed[p] and p.exists():
                p.unlink()
        raise


def _cmd_track(args) -> int:
    cfg = fio.load_config(args.config)
    detections = fio.load_detections(args.detections)
    frames = fio.FrameDirectory(args.frames) if args.frames else None
    n_frames = len(detections)
    if frames is not None:
        n_frames = max(n_frames, len(frames))
    video = VideoInput(detections, frames, n_frames)
    result = run_video(video, cfg)
    fio.write_result(args.out, result)
    log.info("wrote %d records for %d frames to %s", len(result.records), n_frames, args.out)
    return EXIT_OK


def _cmd_eval(args) -> int:
    gt = fio.load_ground_truth(args.gt)
    result = fio.load_result(args.result)
    report = evaluate(gt, result, args.iou)
    out = Path(args.out)
    json_out = out.with_name(out.name + ".json")
    with _all_or_nothing([out, json_out]):
        fio.atomic_write(out, fio.dump_report_text(report))
        fio.atomic_write(json_out, fio.dump_report_json(report))
    sys.stdout.write(fio.dump_report_text(report))
    return EXIT_OK


def _cmd_synth(args) -> int:
    spec = fio.load_scenario_spec(args.spec)
    scenario = generate(spec)
    with _staged_dir(Path(args.out)) as stage:
        fio.write_frames(stage / "frames", scenario.frames)
        fio.write_detections(stage / "detections.txt", scenario.detections)
        fio.write_ground_truth(stage / "gt.txt", scenario.gt)
        fio.write_scenario_spec(stage / "spec.txt", spec)
    log.info("wrote %d frames to %s (%d boxes dropped)", spec.frames, args.out, scenario.dropped)
    return EXIT_OK


def _cmd_bench(args) -> int:
    spec = fio.load_scenario_spec(args.spec)
    base = fio.load_config(args.config) if args.config else TrackerConfig()
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    result = benchmod.run_ablation(spec, args.ablate, args.seeds, base, jobs=args.jobs)
    table = benchmod.summary_tsv(result)
    if args.out:
        with _staged_dir(Path(args.out)) as stage:
            for name, reports in result.cells.items():
                stem = benchmod.cell_dirname(name)
                agg = {"cell": name, "seeds": result.seeds, **benchmod.pooled(reports),
                       "per_seed": [r.as_dict() for r in reports]}
                flat = {"cell": name, **benchmod.pooled(reports)}
                fio.atomic_write(stage / f"{stem}.report", fio.dump_report_text(flat))
                fio.atomic_write(stage / f"{stem}.json", fio.dump_report_json(agg))
                fio.write_config(stage / f"{stem}.config", result.configs[name])
            fio.atomic_write(stage / "summary.tsv", table)
            benchmod.plot_bench(result, stage / "summary.png")
    sys.stdout.write(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="textrack", description="Online multi-text tracking with missed-detection recovery.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("track", help="track detections through a video")
    t.add_argument("--detections", required=True, help="detection file")
    t.add_argument("--frames", help="directory of 000000.pgm, 000001.pgm, ...")
    t.add_argument("--config", required=True, help="key=value tracker configuration")
    t.add_argument("--out", required=True, help="result file to write")
    t.set_defaults(func=_cmd_track)

    e = sub.add_parser("eval", help="score a tracking result against ground truth")
    e.add_argument("--gt", required=True, help="ground truth (canonical text or ICDAR-style XML)")
    e.add_argument("--result", required=True, help="result file written by 'track'")
    e.add_argument("--out", required=True, help="report path; a .json twin is written next to it")
    e.add_argument("--iou", type=float, default=0.5, help="IOU threshold for a match (default 0.5)")
    e.set_defaults(func=_cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic scenario")
    s.add_argument("--spec", required=True, help="key=value scenario specification")
    s.add_argument("--out", required=True, help="new or empty output directory")
    s.set_defaults(func=_cmd_synth)

    b = sub.add_parser("bench", help="run an ablation over seeded synthetic scenarios")
    b.add_argument("--spec", required=True, help="key=value scenario specification")
    b.add_argument("--ablate", required=True, choices=benchmod.ABLATIONS)
    b.add_argument("--seeds", type=int, required=True, help="number of consecutive seeds from the spec seed")
    b.add_argument("--config", help="base tracker configuration (defaults if omitted)")
    b.add_argument("--out", help="new or empty directory for reports, summary.tsv and summary.png")
    b.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    b.set_defaults(func=_cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"textrack {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"textrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
