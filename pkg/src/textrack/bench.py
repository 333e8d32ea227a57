"""Ablation harness: run tracker variants over seeded synthetic scenarios."""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .metrics import MetricsReport, evaluate
from .synth import ScenarioSpec, generate
from .tracker import TrackerConfig, VideoInput, run_video

ABLATIONS = ("scm", "embedding", "distances")

# columns of the summary table, in order
SUMMARY_FIELDS = ("mota", "motp", "idf1", "recall", "precision", "fmeasure",
                  "fp", "fn", "idsw", "mm", "pm", "ml")


def ablation_cells(kind: str, base: TrackerConfig = TrackerConfig()) -> dict[str, TrackerConfig]:
    """Named tracker variants for one ablation, in presentation order."""
    if kind == "scm":
        return {
            "complement_off": dataclasses.replace(base, complement_enabled=False),
            "complement_on": dataclasses.replace(base, complement_enabled=True),
        }
    if kind == "embedding":
        def emb(k):
            return dataclasses.replace(base, embedding_enabled=True,
                                       embedding=dataclasses.replace(base.embedding, kind=k))
        return {
            "geometry_only": dataclasses.replace(base, embedding_enabled=False),
            "visual": emb("patch"),
            "semantic": emb("transcription"),
            "visual+semantic": emb("patch+transcription"),
        }
    if kind == "distances":
        alpha = base.weights.alpha
        beta = base.weights.beta
        gamma = base.weights.gamma
        return {
            "De": base.with_weights(alpha=alpha, beta=0.0, gamma=0.0),
            "De+Dp": base.with_weights(alpha=alpha, beta=beta, gamma=0.0),
            "De+Dp+Dm": base.with_weights(alpha=alpha, beta=beta, gamma=gamma),
        }
    raise ValueError(f"unknown ablation {kind!r}; expected one of {ABLATIONS}")


def run_cell(spec: ScenarioSpec, cfg: TrackerConfig) -> MetricsReport:
    sc = generate(spec)
    result = run_video(VideoInput(sc.detections, sc.frames), cfg)
    return evaluate(sc.gt, result)


def seed_specs(spec: ScenarioSpec, n_seeds: int) -> list[ScenarioSpec]:
    if n_seeds < 1:
        raise ValueError("need at least one seed")
    return [dataclasses.replace(spec, seed=spec.seed + k) for k in range(n_seeds)]


def pooled(reports: Sequence[MetricsReport]) -> dict:
    """Aggregate over seeds by pooling the underlying counts.

    MOTA, IDF1 and recall are recomputed from summed counts rather than
    averaged, so long scenarios weigh more than short ones.
    """
    tot = {k: sum(getattr(r, k) for r in reports)
           for k in ("fp", "fn", "idsw", "mm", "pm", "ml", "idtp", "idfp", "idfn", "gt_boxes")}
    n_gt = tot["gt_boxes"]
    tp = n_gt - tot["fn"]
    n_pred = tp + tot["fp"]
    matched = [(r.motp, r.gt_boxes - r.fn) for r in reports]
    denom_id = 2 * tot["idtp"] + tot["idfp"] + tot["idfn"]
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    out = {
        "mota": 1.0 - (tot["fn"] + tot["fp"] + tot["idsw"]) / n_gt if n_gt else math.nan,
        "motp": (math.fsum(m * k for m, k in matched) / tp) if tp else 0.0,
        "idf1": 2 * tot["idtp"] / denom_id if denom_id else 0.0,
        "recall": recall,
        "precision": precision,
        "fmeasure": 2 * precision * recall / (precision + recall) if precision + recall else 0.0,
    }
    out.update({k: tot[k] for k in ("fp", "fn", "idsw", "mm", "pm", "ml")})
    return out


@dataclass
class BenchResult:
    ablation: str
    seeds: list[int]
    cells: dict[str, list[MetricsReport]]
    configs: dict[str, TrackerConfig]

    def summary(self) -> dict[str, dict]:
        return {name: pooled(reports) for name, reports in self.cells.items()}


def _job(args):
    spec, cfg = args
    return run_cell(spec, cfg)


def run_ablation(spec: ScenarioSpec, ablation: str, n_seeds: int,
                 base: TrackerConfig = TrackerConfig(), jobs: int = 1) -> BenchResult:
    """Every (cell, seed) pair is independent, so ``jobs > 1`` runs them in worker processes."""
    cells = ablation_cells(ablation, base)
    specs = seed_specs(spec, n_seeds)
    work = [(s, cfg) for cfg in cells.values() for s in specs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_job, work))
    else:
        reports = [_job(w) for w in work]
    out: dict[str, list[MetricsReport]] = {}
    it = iter(reports)
    for name in cells:
        out[name] = [next(it) for _ in specs]
    return BenchResult(ablation, [s.seed for s in specs], out, cells)


def summary_tsv(bench: BenchResult) -> str:
    header = ["cell", "seed"] + list(SUMMARY_FIELDS)
    rows = ["\t".join(header)]

    def fmt(v):
        return f"{v:.6f}" if isinstance(v, float) else str(v)

    for name, reports in bench.cells.items():
        for seed, rep in zip(bench.seeds, reports):
            d = rep.as_dict()
            rows.append("\t".join([name, str(seed)] + [fmt(d[k]) for k in SUMMARY_FIELDS]))
        agg = pooled(reports)
        rows.append("\t".join([name, "all"] + [fmt(agg[k]) for k in SUMMARY_FIELDS]))
    return "\n".join(rows) + "\n"


def plot_bench(bench: BenchResult, path: Path) -> None:
    """Grouped bars of the pooled metrics per cell, with per-seed values as dots."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = (("mota", "MOTA"), ("idf1", "IDF1"), ("recall", "Recall"), ("idsw", "ID switches"))
    names = list(bench.cells)
    fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.4), constrained_layout=True)
    colors = plt.get_cmap("tab10").colors
    for ax, (key, label) in zip(axes, panels):
        agg = [pooled(bench.cells[n])[key] for n in names]
        xs = range(len(names))
        ax.bar(xs, agg, color=[colors[k % len(colors)] for k in xs], alpha=0.75, width=0.6)
        for x, n in zip(xs, names):
            vals = [getattr(r, key) for r in bench.cells[n]]
            ax.plot([x] * len(vals), vals, "o", ms=3.5, color="black", alpha=0.6)
        ax.set_xticks(list(xs))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.set_title(label, fontsize=10)
        ax.spines[["top", "right"]].set_visible(False)
        if key != "idsw":
            lo = min(min(getattr(r, key) for r in bench.cells[n]) for n in names)
            ax.set_ylim(min(0.0, lo), 1.0)
    fig.suptitle(f"ablation: {bench.ablation} ({len(bench.seeds)} seeds)", fontsize=11)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cell_dirname(name: str) -> str:
    return name.replace("+", "_plus_")

