"""Dependency-free SVG plots drawn straight from the CSV outputs."""
from __future__ import annotations

import re
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

from .csvio import fmt, read_rows

RUN_ID = re.compile(r"^(?P<env>grid-catch|mini-pong)-(?P<variant>epsilon-greedy|noisy-net)-"
                    r"(?:p(?P<p>[0-9.]+)|(?P<tag>[a-z]+))-s(?P<seed>\d+)$")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
VARIANTS = ("noisy-net", "epsilon-greedy")

PANEL_W, PANEL_H, PAD = 420, 300, 50


def parse_run_id(run_id: str) -> dict:
    m = RUN_ID.match(run_id)
    if not m:
        return {"env": "?", "variant": "?", "p": run_id, "seed": "0"}
    d = m.groupdict()
    d["p"] = d["p"] if d["p"] is not None else d["tag"]
    return d


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


class _Panel:
    def __init__(self, x0, title, xr, yr, xlabel, ylabel):
        self.x0, self.title = x0, title
        self.xr, self.yr = xr, yr
        self.xlabel, self.ylabel = xlabel, ylabel
        self.parts: list[str] = []

    def sx(self, x):
        lo, hi = self.xr
        return self.x0 + PAD + (x - lo) / ((hi - lo) or 1.0) * (PANEL_W - 2 * PAD)

    def sy(self, y):
        lo, hi = self.yr
        return PANEL_H - PAD - (y - lo) / ((hi - lo) or 1.0) * (PANEL_H - 2 * PAD)

    def axes(self):
        x0, x1 = self.x0 + PAD, self.x0 + PANEL_W - PAD
        y0, y1 = PANEL_H - PAD, PAD
        p = self.parts
        p.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="#333"/>')
        for t in _ticks(*self.xr):
            X = self.sx(t)
            p.append(f'<text x="{X:.1f}" y="{y0 + 15}" font-size="9" text-anchor="middle">{fmt(round(t, 3))}</text>')
        for t in _ticks(*self.yr):
            Y = self.sy(t)
            p.append(f'<line x1="{x0}" x2="{x1}" y1="{Y:.1f}" y2="{Y:.1f}" stroke="#eee"/>')
            p.append(f'<text x="{x0 - 4}" y="{Y + 3:.1f}" font-size="9" text-anchor="end">{fmt(round(t, 3))}</text>')
        p.append(f'<text x="{(x0 + x1) / 2}" y="{y1 - 12}" font-size="12" text-anchor="middle">{escape(self.title)}</text>')
        p.append(f'<text x="{(x0 + x1) / 2}" y="{y0 + 32}" font-size="10" text-anchor="middle">{escape(self.xlabel)}</text>')
        p.append(f'<text x="{self.x0 + 12}" y="{(y0 + y1) / 2}" font-size="10" text-anchor="middle" '
                 f'transform="rotate(-90 {self.x0 + 12} {(y0 + y1) / 2})">{escape(self.ylabel)}</text>')

    def polyline(self, xs, ys, color):
        pts = " ".join(f"{self.sx(x):.2f},{self.sy(y):.2f}" for x, y in zip(xs, ys))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1" opacity="0.8"/>')

    def dot(self, x, y, color):
        self.parts.append(f'<circle cx="{self.sx(x):.2f}" cy="{self.sy(y):.2f}" r="3" fill="{color}"/>')


def _document(panels, legend, title) -> str:
    width = PANEL_W * max(1, len(panels))
    height = PANEL_H + 20 * (len(legend) // 4 + 1)
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
            f'<title>{escape(title)}</title>',
            f'<rect width="{width}" height="{height}" fill="white"/>']
    for panel in panels:
        panel.axes()
        body.extend(panel.parts)
    for k, (label, color) in enumerate(legend):
        x = 20 + (k % 4) * 150
        y = PANEL_H + 10 + 20 * (k // 4)
        body.append(f'<rect x="{x}" y="{y}" width="12" height="4" fill="{color}"/>')
        body.append(f'<text x="{x + 16}" y="{y + 6}" font-size="10">{escape(label)}</text>')
    body.append("</svg>")
    return "\n".join(body) + "\n"


def _colors(keys):
    return {k: PALETTE[i % len(PALETTE)] for i, k in enumerate(sorted(keys, key=str))}


def learning_curves_svg(episodes_csv, dest, title="training-time attacks") -> Path:
    """Rolling mean return vs. global step; one panel per exploration variant,
    one line per (p, seed) coloured by p."""
    rows = read_rows(episodes_csv)
    runs = defaultdict(list)
    for r in rows:
        runs[r["run_id"]].append(r)
    variants = sorted({parse_run_id(k)["variant"] for k in runs}, key=lambda v: (v not in VARIANTS, v))
    variants = [v for v in VARIANTS if v in variants] + [v for v in variants if v not in VARIANTS]
    if not variants:
        variants = list(VARIANTS)
    xs = [float(r["global_step"]) for r in rows] or [0.0, 1.0]
    ys = [float(r["rolling_mean_100"]) for r in rows] or [-1.0, 1.0]
    xr = (min(xs), max(xs))
    yr = (min(min(ys), -1.0), max(max(ys), 1.0))
    ps = {parse_run_id(k)["p"] for k in runs}
    color = _colors(ps)
    panels = []
    for i, v in enumerate(variants):
        panel = _Panel(i * PANEL_W, v, xr, yr, "global step", "mean return (last 100 episodes)")
        for run_id, rr in sorted(runs.items()):
            meta = parse_run_id(run_id)
            if meta["variant"] != v:
                continue
            panel.polyline([float(r["global_step"]) for r in rr],
                           [float(r["rolling_mean_100"]) for r in rr], color[meta["p"]])
        panels.append(panel)
    legend = [(f"p = {p}", color[p]) for p in sorted(ps, key=str)]
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(_document(panels, legend, title))
    return dest


def evaluations_svg(evals_csv, dest, title="evaluation returns") -> Path:
    """Per-seed evaluation means vs. training p; one panel per condition."""
    rows = read_rows(evals_csv)
    conds = sorted({r["condition"] for r in rows}) or ["clean", "attacked"]
    series = sorted({(parse_run_id(r["run_id"])["variant"], r["checkpoint"]) for r in rows})
    color = _colors(series)
    ys = [float(r["mean_return"]) for r in rows] or [-1.0, 1.0]
    ps = []
    for r in rows:
        try:
            ps.append(float(parse_run_id(r["run_id"])["p"]))
        except ValueError:
            pass
    xr = (min(ps + [0.0]), max(ps + [1.0]))
    yr = (min(min(ys), -1.0), max(max(ys), 1.0))
    panels = []
    for i, c in enumerate(conds):
        panel = _Panel(i * PANEL_W, f"{c} evaluation", xr, yr, "training-time p", "mean return")
        for r in rows:
            if r["condition"] != c:
                continue
            meta = parse_run_id(r["run_id"])
            try:
                x = float(meta["p"])
            except ValueError:
                x = 0.0
            panel.dot(x, float(r["mean_return"]), color[(meta["variant"], r["checkpoint"])])
        panels.append(panel)
    legend = [(f"{v} / {ck}", col) for (v, ck), col in color.items()]
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(_document(panels, legend, title))
    return dest
