"""Self-contained SVG charts for score series and category-share timelines.

Charts are rendered directly (fixed palette, fixed float formatting, no
external assets or fonts), so identical inputs produce identical bytes.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .metrics import ScoreSeries

__all__ = ["line_chart", "stacked_bar_chart", "render_report"]

_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5",
)

_W, _H = 640, 360
_ML, _MR, _MT, _MB = 60, 160, 40, 50


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _x_pos(day: int, days: int) -> float:
    span = _W - _ML - _MR
    if days <= 1:
        return _ML + span / 2
    return _ML + span * (day - 1) / (days - 1)


def _y_pos(value: float) -> float:
    span = _H - _MT - _MB
    return _MT + span * (1.0 - max(0.0, min(1.0, value)))


def _frame(title: str, days: int) -> list[str]:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" height="{_H - _MT - _MB}" '
        f'fill="none" stroke="#333"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = _y_pos(tick)
        parts.append(
            f'<line x1="{_ML - 4}" y1="{_fmt(y)}" x2="{_ML}" y2="{_fmt(y)}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{_ML - 8}" y="{_fmt(y + 4)}" text-anchor="end">{tick:g}</text>'
        )
    for day in range(1, days + 1):
        x = _x_pos(day, days)
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{_H - _MB}" x2="{_fmt(x)}" y2="{_H - _MB + 4}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{_fmt(x)}" y="{_H - _MB + 18}" text-anchor="middle">{day}</text>'
        )
    parts.append(
        f'<text x="{_W // 2}" y="{_H - 10}" text-anchor="middle">day</text>'
    )
    return parts


def _vrule(parts: list[str], switch_day: Optional[int], days: int) -> None:
    if switch_day is None or not 1 <= switch_day <= days:
        return
    x = _x_pos(switch_day, days)
    parts.append(
        f'<line x1="{_fmt(x)}" y1="{_MT}" x2="{_fmt(x)}" y2="{_H - _MB}" '
        f'stroke="#d62728" stroke-dasharray="6 3" class="switch-rule"/>'
    )
    parts.append(
        f'<text x="{_fmt(x + 4)}" y="{_MT + 12}" fill="#d62728">switch</text>'
    )


def line_chart(
    title: str,
    series: Sequence[tuple[str, Sequence[tuple[int, Optional[float]]]]],
    days: int,
    switch_day: Optional[int] = None,
) -> str:
    """Line chart over day 1..days; y fixed to [0, 1]; None values are gaps."""
    parts = _frame(title, days)
    for i, (label, points) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        coords = [
            f"{_fmt(_x_pos(day, days))},{_fmt(_y_pos(v))}"
            for day, v in points
            if v is not None
        ]
        if coords:
            parts.append(
                f'<polyline points="{" ".join(coords)}" fill="none" stroke="{color}" stroke-width="2"/>'
            )
        ly = _MT + 16 * i
        lx = _W - _MR + 12
        parts.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 24}" y="{ly + 4}">{label}</text>')
    _vrule(parts, switch_day, days)
    parts.append("</svg>")
    return "\n".join(parts)


def stacked_bar_chart(
    title: str,
    shares_by_day: Mapping[int, Mapping[str, float]],
    days: int,
    switch_day: Optional[int] = None,
) -> str:
    """Per-day stacked category shares (each column sums to at most 1)."""
    categories = sorted({cat for cell in shares_by_day.values() for cat in cell})
    colors = {cat: _PALETTE[i % len(_PALETTE)] for i, cat in enumerate(categories)}
    parts = _frame(title, days)
    span = _W - _ML - _MR
    bar_w = max(4.0, span / max(days, 1) * 0.6)
    for day in range(1, days + 1):
        cell = shares_by_day.get(day, {})
        x = _x_pos(day, days) - bar_w / 2
        base = 0.0
        for cat in sorted(cell):
            share = cell[cat]
            if share <= 0:
                continue
            y_top = _y_pos(base + share)
            height = _y_pos(base) - y_top
            parts.append(
                f'<rect x="{_fmt(x)}" y="{_fmt(y_top)}" width="{_fmt(bar_w)}" '
                f'height="{_fmt(height)}" fill="{colors[cat]}"/>'
            )
            base += share
    for i, cat in enumerate(categories):
        ly = _MT + 16 * i
        lx = _W - _MR + 12
        parts.append(f'<rect x="{lx}" y="{ly - 8}" width="12" height="12" fill="{colors[cat]}"/>')
        parts.append(f'<text x="{lx + 18}" y="{ly + 3}">{cat}</text>')
    _vrule(parts, switch_day, days)
    parts.append("</svg>")
    return "\n".join(parts)


def render_report(
    series: Sequence[ScoreSeries],
    shares: Mapping[tuple[str, str], Mapping[int, Mapping[str, float]]],
    out_dir: str | Path,
    days: int,
    switch_day: Optional[int] = None,
) -> list[Path]:
    """Write one score chart per (persona, platform) plus share charts.

    ``shares`` maps (persona, platform) to day -> category -> share.  Returns
    the written paths; an index file maps chart files back to their series.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    index = []
    for i, s in enumerate(sorted(series, key=lambda s: (s.persona, s.platform))):
        name = f"scores_p{i}_{s.platform}.svg"
        chart = line_chart(
            title=f"{s.persona} on {s.platform}",
            series=[
                ("ttk", [(row.day, row.ttk) for row in s.rows]),
                ("bailp", [(row.day, row.bailp) for row in s.rows]),
            ],
            days=days,
            switch_day=switch_day,
        )
        path = out / name
        path.write_text(chart, encoding="utf-8")
        written.append(path)
        index.append({"file": name, "kind": "scores", "persona": s.persona, "platform": s.platform})
        cell = shares.get((s.persona, s.platform))
        if cell:
            name = f"shares_p{i}_{s.platform}.svg"
            chart = stacked_bar_chart(
                title=f"ad categories: {s.persona} on {s.platform}",
                shares_by_day=cell,
                days=days,
                switch_day=switch_day,
            )
            path = out / name
            path.write_text(chart, encoding="utf-8")
            written.append(path)
            index.append({"file": name, "kind": "shares", "persona": s.persona, "platform": s.platform})
    index_path = out / "index.json"
    index_path.write_text(
        json.dumps(index, ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8"
    )
    written.append(index_path)
    return written
