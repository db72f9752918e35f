"""Standalone SVG bar charts and the CSV tables behind them."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from xml.sax.saxutils import escape

METRICS = ("accuracy", "macro_f1", "macro_precision", "macro_recall")
METRIC_LABELS = {"accuracy": "Accuracy", "macro_f1": "F1-score",
                 "macro_precision": "Precision", "macro_recall": "Recall"}
FACTOR_ORDER = ("VC", "VQ", "AC", "IL", "SA")
PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3",
           "#8c8c8c")

WIDTH, HEIGHT = 720, 400
LEFT, RIGHT, TOP, BOTTOM = 60, 150, 40, 50


def _f(v: float) -> str:
    return f"{v:.2f}"


def bar_chart_svg(groups, series, values, title, ylabel, ymin=None, ymax=None) -> str:
    """Grouped bars: ``values[g][s]`` for group ``g`` and series ``s``."""
    flat = [v for row in values for v in row] or [0.0]
    lo = min(0.0, min(flat)) if ymin is None else ymin
    hi = max(0.0, max(flat)) if ymax is None else ymax
    if hi <= lo:
        hi = lo + 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def y(v):
        return TOP + ph * (hi - v) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.2f}" y="20" text-anchor="middle" font-size="14">'
           f'{escape(title)}</text>']
    for k in range(6):
        v = lo + (hi - lo) * k / 5
        out.append(f'<line x1="{LEFT}" y1="{_f(y(v))}" x2="{LEFT + pw}" y2="{_f(y(v))}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{LEFT - 6}" y="{_f(y(v) + 4)}" text-anchor="end">{v:.2f}</text>')
    out.append(f'<text x="14" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {TOP + ph / 2:.2f})">{escape(ylabel)}</text>')
    gw = pw / max(len(groups), 1)
    bw = gw * 0.8 / max(len(series), 1)
    for gi, g in enumerate(groups):
        x0 = LEFT + gi * gw + gw * 0.1
        for si, _ in enumerate(series):
            v = values[gi][si]
            top, bottom = sorted((y(v), y(0.0)))
            out.append(f'<rect x="{_f(x0 + si * bw)}" y="{_f(top)}" width="{_f(bw * 0.95)}" '
                       f'height="{_f(bottom - top)}" fill="{PALETTE[si % len(PALETTE)]}">'
                       f'<title>{escape(str(g))} {escape(str(series[si]))}: {v:.4f}</title></rect>')
        out.append(f'<text x="{_f(LEFT + gi * gw + gw / 2)}" y="{HEIGHT - BOTTOM + 16}" '
                   f'text-anchor="middle">{escape(str(g))}</text>')
    out.append(f'<line x1="{LEFT}" y1="{_f(y(0.0))}" x2="{LEFT + pw}" y2="{_f(y(0.0))}" '
               f'stroke="black"/>')
    for si, s in enumerate(series):
        ly = TOP + 10 + si * 18
        out.append(f'<rect x="{WIDTH - RIGHT + 15}" y="{ly - 9}" width="12" height="12" '
                   f'fill="{PALETTE[si % len(PALETTE)]}"/>')
        out.append(f'<text x="{WIDTH - RIGHT + 32}" y="{ly + 1}">{escape(str(s))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def find_results(root, filename) -> list:
    return sorted(Path(root).rglob(filename))


def factor_metrics(eval_files) -> dict:
    """``{factor: {metric: value}}``; the first file found per factor wins."""
    out = {}
    for p in eval_files:
        data = json.loads(Path(p).read_text())
        fac = data.get("factor", p.parent.name)
        out.setdefault(fac, {m: float(data["report"][m]) for m in METRICS})
    return out


def metrics_outputs(eval_files) -> dict:
    """File name -> text for the per-factor metric chart and table."""
    per = factor_metrics(eval_files)
    factors = [f for f in FACTOR_ORDER if f in per] + sorted(f for f in per if f not in FACTOR_ORDER)
    values = [[per[f][m] for m in METRICS] for f in factors]
    svg = bar_chart_svg(factors, [METRIC_LABELS[m] for m in METRICS], values,
                        "Results per QoE factor", "score", 0.0, 1.0)
    table = csv_text(("factor",) + METRICS, [[f] + row for f, row in zip(factors, values)])
    return {"metrics.svg": svg, "metrics.csv": table}


def ablation_outputs(ablation_files) -> dict:
    by_kind = {}
    for p in ablation_files:
        data = json.loads(Path(p).read_text())
        by_kind.setdefault(data["kind"], data)
    out = {}
    for kind, data in sorted(by_kind.items()):
        units = [e["removed"] for e in data["entries"]]
        deltas = [[-100.0 * e["delta"]] for e in data["entries"]]
        out[f"ablation_{kind}.svg"] = bar_chart_svg(
            units, ["change in macro-F1 (points)"], deltas,
            f"Removing one {kind} (baseline macro-F1 {data['baseline_f1']:.3f})", "points")
        out[f"ablation_{kind}.csv"] = csv_text(
            ("removed", "f1", "delta"),
            [[e["removed"], float(e["f1"]), float(e["delta"])] for e in data["entries"]])
    return out
