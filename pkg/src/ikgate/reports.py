"""Report assembly and emission: eval JSON, sweep/figure CSVs, static SVGs.

Everything written here is deterministic byte-for-byte for a fixed input:
sorted JSON keys, repr-formatted floats, no timestamps. The SVG renderer is
intentionally minimal (line plot and histogram bars) so plot files stay
diffable too.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from .errors import UndefinedAUCError
from .latency import StageCosts, expected_latency, path_costs
from .routing import (
    IKHistogram,
    QueryEvals,
    SweepReport,
    characterize,
    ik_accuracy,
    ik_auc,
    routed_quality,
    threshold_sweep,
)
from .scoring import IKScore


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def build_eval_report(
    scores: Sequence[IKScore],
    labels: Sequence,
    evals: Sequence[QueryEvals],
    grid: Sequence[float],
    latency_costs: StageCosts | None = None,
    prefix_used: bool = True,
    prefix_tokens: int = 0,
) -> tuple[dict, SweepReport, IKHistogram | None]:
    """Assemble the Table-1-shaped report for one dataset.

    AUC is reported as null with an explicit marker when the labels are
    single-class; the rest of the report still comes out.
    """
    sweep = threshold_sweep(evals, grid)
    at_half_quality, at_half_retr = routed_quality(evals, 0.5)

    try:
        auc = ik_auc(scores, labels)
        auc_undefined = False
    except UndefinedAUCError:
        auc = None
        auc_undefined = True

    histogram = characterize(scores) if len(scores) >= 20 else None

    report = {
        "n": len(evals),
        "prefix_tokens": prefix_tokens,
        "acc": ik_accuracy(scores, labels),
        "auc": auc,
        "auc_undefined": auc_undefined,
        "norag": sweep.endpoints[0],
        "rag": sweep.endpoints[1],
        "at_0p5": {"quality": at_half_quality, "retr": at_half_retr},
        "best": {
            "quality": sweep.best.mean_quality,
            "retr": sweep.best.retrieval_fraction,
            "theta": sweep.best.theta,
        },
    }
    if histogram is not None:
        report["histogram"] = {
            "bins": histogram.bins,
            "low_mass": histogram.low_mass,
            "high_mass": histogram.high_mass,
            "pattern": histogram.pattern.value,
        }
    if latency_costs is not None:
        report["latency"] = latency_section(latency_costs, sweep, prefix_used)
    return report, sweep, histogram


def latency_section(costs: StageCosts, sweep: SweepReport, prefix_used: bool) -> dict:
    norag_path, rag_path = path_costs(costs, prefix_used)
    at_best = expected_latency(costs, sweep.best.retrieval_fraction, prefix_used)
    return {
        "stage_costs_ms": {
            "ik_score": costs.ik_score_ms,
            "prefix_gen": costs.prefix_gen_ms,
            "norag_gen": costs.norag_gen_ms,
            "rag_gen": costs.rag_gen_ms,
            "retrieval": costs.retrieval_ms,
            "rerank": costs.rerank_ms,
        },
        "prefix_used": prefix_used,
        "norag_path_ms": norag_path,
        "rag_path_ms": rag_path,
        "baseline_always_rag_ms": at_best.baseline_always_rag_ms,
        "expected_ms_at_best": at_best.expected_ms,
        "savings_fraction_at_best": at_best.savings_fraction,
    }


def write_json(obj: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_sweep_csv(sweep: SweepReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["theta,mean_quality,retrieval_fraction,n"]
    for row in sweep.rows:
        lines.append(
            f"{row.theta},{_fmt(row.mean_quality)},{_fmt(row.retrieval_fraction)},{row.n}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_quality_curve_csv(sweep: SweepReport, path: str | Path) -> None:
    """Figure data: retrieval percentage on x, routed quality on y."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["retrieval_pct,quality,theta"]
    for row in sweep.rows:
        lines.append(f"{_fmt(row.retrieval_fraction * 100.0)},{_fmt(row.mean_quality)},{row.theta}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_histogram_csv(histogram: IKHistogram, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    width = 1.0 / histogram.BIN_COUNT
    lines = ["bin_lo,bin_hi,count"]
    for i, count in enumerate(histogram.bins):
        lines.append(f"{_fmt(i * width)},{_fmt((i + 1) * width)},{count}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_ablation_csv(rows: list[dict], columns: list[str], path: str | Path) -> None:
    """One row per ablation cell; incomplete cells keep their row with
    status=missing so the table shape is always complete."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(col, "")) for col in columns])


# --- minimal deterministic SVG ------------------------------------------------

_W, _H, _PAD = 640, 400, 48


def _svg_header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>',
        f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>',
    ]


def render_quality_curve_svg(sweep: SweepReport, path: str | Path, title: str) -> None:
    """Routed quality vs retrieval fraction, endpoints drawn as guide lines."""
    rows = [r for r in sweep.rows]
    xs = [r.retrieval_fraction for r in rows]
    ys = [r.mean_quality for r in rows]
    y_lo, y_hi = min(ys + [0.0]), max(ys + [1.0])

    def px(x: float) -> float:
        return _PAD + x * (_W - 2 * _PAD)

    def py(y: float) -> float:
        span = (y_hi - y_lo) or 1.0
        return _H - _PAD - (y - y_lo) / span * (_H - 2 * _PAD)

    parts = _svg_header(title)
    norag_y, rag_y = sweep.endpoints
    parts.append(
        f'<line x1="{px(0):.2f}" y1="{py(norag_y):.2f}" x2="{px(1):.2f}" y2="{py(norag_y):.2f}" stroke="red" stroke-dasharray="4 3"/>'
    )
    parts.append(
        f'<line x1="{px(0):.2f}" y1="{py(rag_y):.2f}" x2="{px(1):.2f}" y2="{py(rag_y):.2f}" stroke="orange" stroke-dasharray="4 3"/>'
    )
    points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    parts.append(f'<polyline points="{points}" fill="none" stroke="steelblue" stroke-width="2"/>')
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="steelblue"/>')
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")


def render_histogram_svg(histogram: IKHistogram, path: str | Path, title: str) -> None:
    parts = _svg_header(title)
    peak = max(histogram.bins) or 1
    width = (_W - 2 * _PAD) / histogram.BIN_COUNT
    for i, count in enumerate(histogram.bins):
        bar_h = count / peak * (_H - 2 * _PAD)
        x = _PAD + i * width
        y = _H - _PAD - bar_h
        parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{width - 2:.2f}" height="{bar_h:.2f}" fill="steelblue"/>'
        )
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
