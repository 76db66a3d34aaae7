"""Self-contained SVG line plots with mean +/- std bands across seeds."""

from __future__ import annotations

import math
from html import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=20, top=40, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def aggregate(runs: list[list[dict]], x_key: str, y_key: str):
    """Mean and std of ``y_key`` across runs at the x positions common to all runs."""
    if not runs:
        raise ValueError("no runs to aggregate")
    common = set.intersection(*({r[x_key] for r in run} for run in runs))
    xs = np.array(sorted(common))
    ys = []
    for run in runs:
        lookup = {r[x_key]: r[y_key] for r in run}
        ys.append([lookup[x] for x in xs])
    ys = np.array(ys, dtype=np.float64)
    return xs, ys.mean(axis=0), ys.std(axis=0)


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return list(np.arange(start, hi + step * 0.5, step))


def line_plot_svg(series, title, xlabel, ylabel) -> str:
    """``series`` is a list of ``(label, x, mean, std)``; returns SVG text."""
    finite = [(lab, x, m, s) for lab, x, m, s in series if len(x)]
    xs = np.concatenate([x for _, x, _, _ in finite]) if finite else np.array([0.0, 1.0])
    lows = np.concatenate([m - s for _, _, m, s in finite]) if finite else np.array([0.0])
    highs = np.concatenate([m + s for _, _, m, s in finite]) if finite else np.array([1.0])
    x0, x1 = float(np.nanmin(xs)), float(np.nanmax(xs))
    y0, y1 = float(np.nanmin(lows)), float(np.nanmax(highs))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN["top"] + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           'fill="none" stroke="#444"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{px(t):.1f}" y="{HEIGHT - MARGIN["bottom"] + 16}" '
                   f'text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{MARGIN["left"]}" x2="{MARGIN["left"] + pw}" y1="{py(t):.1f}" '
                   f'y2="{py(t):.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{py(t) + 4:.1f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2}" y="{HEIGHT - 12}" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2})">{escape(ylabel)}</text>')
    for i, (label, x, mean, std) in enumerate(finite):
        color = COLORS[i % len(COLORS)]
        upper = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, mean + std))
        lower = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[::-1], (mean - std)[::-1]))
        out.append(f'<polygon class="band" data-label="{escape(label)}" points="{upper} {lower}" '
                   f'fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, mean))
        out.append(f'<polyline class="mean" data-label="{escape(label)}" points="{line}" '
                   f'fill="none" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{MARGIN["left"] + 10}" y="{MARGIN["top"] + 16 + 14 * i}" '
                   f'fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


FIGURES = {
    "return_vs_steps.svg": ("step", "eval_return", "Return vs environment steps",
                            "environment steps", "eval return"),
    "return_vs_updates.svg": ("policy_updates", "eval_return", "Return vs policy updates",
                              "policy updates", "eval return"),
    "rollouts_vs_steps.svg": ("step", "model_rollouts", "Model rollouts vs environment steps",
                              "environment steps", "model rollouts"),
}


def render_figures(runs: list[list[dict]], label="memr") -> dict[str, str]:
    out = {}
    for name, (xk, yk, title, xl, yl) in FIGURES.items():
        x, mean, std = aggregate(runs, xk, yk)
        out[name] = line_plot_svg([(label, x, mean, std)], title, xl, yl)
    return out
