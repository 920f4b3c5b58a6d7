"""Tidying of results logs and SVG charts of benchmark CSVs.

The chart has one panel per deletion percentage. Within a panel, target sizes
sit on the x axis, each strategy gets a bar for its median computational cost
(log scale, left axis) and a marker for its median percent change in
consistency (right axis).
"""

import csv
import io
import math
import statistics
from pathlib import Path

from .bench import CSV_COLUMNS, UNDEFINED, tidy

SERIES_COLORS = {"naive": "#4c72b0", "sisa_dare": "#dd8452"}
_FALLBACK_COLORS = ("#55a868", "#c44e52", "#8172b3", "#937860")

PANEL_W = 360
PANEL_H = 300
MARGIN = dict(left=70, right=60, top=50, bottom=60)


def tidy_file(log_path, csv_path=None):
    """Convert a results log file to CSV text; also write it when ``csv_path`` is given."""
    text = tidy(Path(log_path).read_text(encoding="utf-8"))
    if csv_path is not None:
        Path(csv_path).write_text(text, encoding="utf-8")
    return text


def read_results_csv(text):
    """Parse bench CSV text into typed rows; raises ``ValueError`` naming bad columns."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise ValueError("results CSV is empty")
    missing = [c for c in CSV_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise ValueError(f"results CSV lacks column(s): {', '.join(missing)}")
    rows = []
    for lineno, raw in enumerate(reader, start=2):
        try:
            pc = raw["percent_change"]
            rows.append(
                dict(
                    strategy=raw["strategy"],
                    target_size=int(raw["target_size"]),
                    delete_percentage=float(raw["delete_percentage"]),
                    percent_change=math.nan if pc == UNDEFINED else float(pc),
                    cost=float(raw["computational_cost_seconds"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: bad value in results CSV ({exc})") from exc
    if not rows:
        raise ValueError("results CSV has no data rows")
    return rows


def _fmt(x):
    return f"{x:.2f}".rstrip("0").rstrip(".") if x != int(x) else str(int(x))


def _median(values):
    values = [v for v in values if not math.isnan(v)]
    return statistics.median(values) if values else math.nan


def _nice_pct_range(values):
    finite = [v for v in values if not math.isnan(v)]
    hi = max([abs(v) for v in finite] + [1.0])
    step = 10 ** math.floor(math.log10(hi))
    hi = math.ceil(hi / step) * step
    return -hi, hi


def _esc(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_svg(rows):
    """SVG text for typed rows from :func:`read_results_csv`; deterministic in its input."""
    pcts = sorted({r["delete_percentage"] for r in rows})
    sizes = sorted({r["target_size"] for r in rows})
    strategies = sorted({r["strategy"] for r in rows}, key=lambda s: (s not in SERIES_COLORS, s))
    colors = {}
    for i, s in enumerate(strategies):
        colors[s] = SERIES_COLORS.get(s, _FALLBACK_COLORS[i % len(_FALLBACK_COLORS)])

    groups = {}
    for r in rows:
        groups.setdefault((r["delete_percentage"], r["target_size"], r["strategy"]), []).append(r)
    cost = {k: _median([r["cost"] for r in v]) for k, v in groups.items()}
    change = {k: _median([r["percent_change"] for r in v]) for k, v in groups.items()}

    positive = [c for c in cost.values() if c > 0]
    lo_exp = math.floor(math.log10(min(positive))) if positive else -4
    hi_exp = math.ceil(math.log10(max(positive))) if positive else 0
    if hi_exp <= lo_exp:
        hi_exp = lo_exp + 1
    p_lo, p_hi = _nice_pct_range(change.values())

    width = PANEL_W * len(pcts)
    height = PANEL_H + 40
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    plot_w = PANEL_W - MARGIN["left"] - MARGIN["right"]
    plot_h = PANEL_H - MARGIN["top"] - MARGIN["bottom"]

    for pi, pct in enumerate(pcts):
        x0 = pi * PANEL_W + MARGIN["left"]
        y0 = MARGIN["top"]
        yb = y0 + plot_h

        def ycost(c):
            if c <= 0:
                return yb
            t = (math.log10(c) - lo_exp) / (hi_exp - lo_exp)
            return yb - max(0.0, min(1.0, t)) * plot_h

        def ypct(v):
            return yb - (v - p_lo) / (p_hi - p_lo) * plot_h

        out.append(f'<g class="panel" data-delete-percentage="{pct!r}">')
        out.append(
            f'<text x="{x0 + plot_w / 2:.1f}" y="{y0 - 20}" text-anchor="middle" font-size="13">'
            f"delete_percentage = {_fmt(pct)}</text>"
        )
        out.append(f'<rect x="{x0}" y="{y0}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>')
        for e in range(lo_exp, hi_exp + 1):
            y = ycost(10.0**e)
            out.append(f'<line x1="{x0 - 4}" y1="{y:.1f}" x2="{x0 + plot_w}" y2="{y:.1f}" stroke="#ddd"/>')
            out.append(f'<text x="{x0 - 6}" y="{y + 4:.1f}" text-anchor="end">1e{e}</text>')
        for v in (p_lo, 0.0, p_hi):
            y = ypct(v)
            out.append(f'<text x="{x0 + plot_w + 6}" y="{y + 4:.1f}">{_fmt(v)}%</text>')
        y = ypct(0.0)
        out.append(
            f'<line x1="{x0}" y1="{y:.1f}" x2="{x0 + plot_w}" y2="{y:.1f}" stroke="#888" stroke-dasharray="4 3"/>'
        )
        out.append(
            f'<text transform="translate({x0 - 50},{y0 + plot_h / 2:.1f}) rotate(-90)" '
            'text-anchor="middle">computational cost (s, log)</text>'
        )
        out.append(
            f'<text transform="translate({x0 + plot_w + 48},{y0 + plot_h / 2:.1f}) rotate(90)" '
            'text-anchor="middle">percent change in consistency</text>'
        )

        group_w = plot_w / max(1, len(sizes))
        bar_w = group_w * 0.7 / max(1, len(strategies))
        for si, n in enumerate(sizes):
            gx = x0 + si * group_w + group_w * 0.15
            out.append(
                f'<text x="{x0 + (si + 0.5) * group_w:.1f}" y="{yb + 16}" text-anchor="middle">n = {n}</text>'
            )
            for ki, s in enumerate(strategies):
                key = (pct, n, s)
                if key not in cost:
                    continue
                bx = gx + ki * bar_w
                top = ycost(cost[key])
                out.append(
                    f'<rect x="{bx:.1f}" y="{top:.1f}" width="{bar_w:.1f}" height="{yb - top:.1f}" '
                    f'fill="{colors[s]}" fill-opacity="0.8"><title>{_esc(s)} n={n}: '
                    f"{cost[key]:.6g} s</title></rect>"
                )
                v = change[key]
                if not math.isnan(v):
                    out.append(
                        f'<circle cx="{bx + bar_w / 2:.1f}" cy="{ypct(v):.1f}" r="4" fill="white" '
                        f'stroke="black" stroke-width="1.5"><title>{_esc(s)} n={n}: {v:.6g}%</title></circle>'
                    )
        out.append("</g>")

    lx = MARGIN["left"]
    ly = PANEL_H + 20
    for s in strategies:
        out.append(f'<rect x="{lx}" y="{ly - 9}" width="12" height="10" fill="{colors[s]}"/>')
        out.append(f'<text x="{lx + 16}" y="{ly}">{_esc(s)} cost</text>')
        lx += 30 + 7 * len(s) + 30
    out.append(f'<circle cx="{lx + 6}" cy="{ly - 4}" r="4" fill="white" stroke="black" stroke-width="1.5"/>')
    out.append(f'<text x="{lx + 16}" y="{ly}">percent change</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot(csv_path, svg_path):
    """Render the chart for ``csv_path`` into ``svg_path``; nothing is written on error."""
    rows = read_results_csv(Path(csv_path).read_text(encoding="utf-8"))
    svg = render_svg(rows)
    Path(svg_path).write_text(svg, encoding="utf-8")
    return svg
