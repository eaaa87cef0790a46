"""Run artifacts: the per-cycle metrics log, derived curve files, and a
dependency-free SVG line chart.

The metrics CSV is the canonical record of a run. Schema version 1 columns:

    cycle, similarity, delta,
    acc_images_1, acc_boxes_1, new_images_1, new_boxes_1,
    acc_images_2, acc_boxes_2, new_images_2, new_boxes_2,
    acc_<class>_1 ... , acc_<class>_2 ...

One row per completed cycle, appended as the cycle checkpoints; detector-2
columns stay empty for self-training runs. Values are written with full
float precision (repr) and no timestamps, so re-running or resuming a
deterministic run reproduces the file byte for byte.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Mapping, Sequence

from colabel.types import ClassTable

__all__ = [
    "METRICS_SCHEMA_VERSION",
    "append_metrics_row",
    "count_summary_csv",
    "curves_csv",
    "metrics_columns",
    "read_metrics",
    "svg_line_chart",
    "truncate_metrics",
    "write_metrics_header",
]

METRICS_SCHEMA_VERSION = 1


def metrics_columns(table: ClassTable) -> list[str]:
    fixed = [
        "cycle",
        "similarity",
        "delta",
        "acc_images_1",
        "acc_boxes_1",
        "new_images_1",
        "new_boxes_1",
        "acc_images_2",
        "acc_boxes_2",
        "new_images_2",
        "new_boxes_2",
    ]
    return fixed + [f"acc_{n}_1" for n in table.names] + [f"acc_{n}_2" for n in table.names]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_header(path: str | Path, table: ClassTable) -> None:
    Path(path).write_text(",".join(metrics_columns(table)) + "\n")


def append_metrics_row(path: str | Path, table: ClassTable, row: Mapping) -> None:
    cols = metrics_columns(table)
    unknown = set(row) - set(cols)
    if unknown:
        raise ValueError(f"metrics row has unknown columns: {sorted(unknown)}")
    line = ",".join(_cell(row.get(c)) for c in cols)
    with open(path, "a") as fh:
        fh.write(line + "\n")


def read_metrics(path: str | Path) -> list[dict[str, str]]:
    text = Path(path).read_text()
    reader = csv.DictReader(io.StringIO(text))
    return list(reader)


def truncate_metrics(path: str | Path, max_cycle: int) -> None:
    """Drop rows past ``max_cycle``; used when resuming from a checkpoint
    that predates the last thing the log recorded."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        return
    kept = [lines[0]]
    for line in lines[1:]:
        if not line.strip():
            continue
        cycle = int(line.split(",", 1)[0])
        if cycle <= max_cycle:
            kept.append(line)
    path.write_text("".join(l + "\n" for l in kept))


def curves_csv(rows: Sequence[Mapping[str, str]]) -> str:
    """Similarity and accumulation curves over cycles, one row per cycle."""
    out = ["cycle,similarity,delta,acc_images_1,acc_boxes_1,new_images_1,new_boxes_1"]
    for r in rows:
        out.append(
            ",".join(
                r.get(c, "")
                for c in (
                    "cycle",
                    "similarity",
                    "delta",
                    "acc_images_1",
                    "acc_boxes_1",
                    "new_images_1",
                    "new_boxes_1",
                )
            )
        )
    return "".join(line + "\n" for line in out)


def count_summary_csv(rows: Sequence[Mapping[str, str]], table: ClassTable) -> str:
    """Final per-class pseudo-label counts, from the last metrics row."""
    out = ["class,accumulated_1,accumulated_2"]
    if rows:
        last = rows[-1]
        for name in table.names:
            out.append(
                f"{name},{last.get(f'acc_{name}_1', '')},{last.get(f'acc_{name}_2', '')}"
            )
    return "".join(line + "\n" for line in out)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_line_chart(
    series: Sequence[tuple[str, Sequence[tuple[float, float]]]],
    *,
    title: str = "",
    x_label: str = "cycle",
    y_label: str = "",
    width: int = 640,
    height: int = 400,
) -> str:
    """Plain SVG polyline chart; no plotting dependency, fully deterministic.

    Each series is (label, [(x, y), ...]). Empty input yields a chart frame
    with no lines.
    """
    pad_l, pad_r, pad_t, pad_b = 56, 16, 28, 44
    plot_w = width - pad_l - pad_r
    plot_h = height - pad_t - pad_b

    points = [p for _, pts in series for p in pts]
    if points:
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        x_min, x_max = min(xs), max(xs)
        y_min, y_max = min(ys), max(ys)
        if x_min == x_max:
            x_min, x_max = x_min - 0.5, x_max + 0.5
        if y_min == y_max:
            y_min, y_max = y_min - 0.5, y_max + 0.5
    else:
        x_min, x_max, y_min, y_max = 0.0, 1.0, 0.0, 1.0

    def sx(x: float) -> float:
        return pad_l + (x - x_min) / (x_max - x_min) * plot_w

    def sy(y: float) -> float:
        return pad_t + plot_h - (y - y_min) / (y_max - y_min) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{pad_l}" y="{pad_t}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#888" stroke-width="1"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{title}</text>'
        )
    # four horizontal gridlines with y-axis labels
    for i in range(5):
        fy = y_min + (y_max - y_min) * i / 4
        y = sy(fy)
        if 0 < i < 4:
            parts.append(
                f'<line x1="{pad_l}" y1="{y:.1f}" x2="{pad_l + plot_w}" y2="{y:.1f}" '
                'stroke="#ddd" stroke-width="1"/>'
            )
        parts.append(
            f'<text x="{pad_l - 6}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{fy:.4g}</text>'
        )
    for i in range(5):
        fx = x_min + (x_max - x_min) * i / 4
        x = sx(fx)
        parts.append(
            f'<text x="{x:.1f}" y="{height - pad_b + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{fx:.4g}</text>'
        )
    parts.append(
        f'<text x="{pad_l + plot_w / 2:.1f}" y="{height - 8}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>'
    )
    if y_label:
        parts.append(
            f'<text x="14" y="{pad_t + plot_h / 2:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 14 {pad_t + plot_h / 2:.1f})">{y_label}</text>'
        )
    for idx, (label, pts) in enumerate(series):
        if not pts:
            continue
        color = _PALETTE[idx % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{pad_l + 8}" y="{pad_t + 16 + 14 * idx}" font-family="sans-serif" '
            f'font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "".join(parts) + "\n"
