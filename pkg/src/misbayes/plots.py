"""Static SVG plots: posterior density overlays and violin summaries.

Plots are written as self-contained SVG text; densities use a Gaussian
kernel density estimate with Silverman's bandwidth. A sample without spread
is drawn as a point marker instead of a curve.
"""
from __future__ import annotations

import os
import re
from xml.sax.saxutils import escape

import numpy as np
from scipy import stats

from .errors import ContractError

WIDTH, HEIGHT = 640, 400
MARGIN = 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
KINDS = ("density-overlay", "violin-summary")


def _is_constant(x) -> bool:
    x = np.asarray(x, dtype=float)
    return x.size < 2 or np.ptp(x) <= 1e-12 * max(1.0, np.abs(x).max())


def _kde(x, grid):
    return stats.gaussian_kde(np.asarray(x, dtype=float), bw_method="silverman")(grid)


def _fmt(v) -> str:
    return f"{v:.2f}"


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "plot"


def _svg(body: list, title: str) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">'
    )
    parts = [head, f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
             f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>']
    parts.extend(body)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _axis(lo, hi, y0):
    body = [f'<line x1="{MARGIN}" y1="{y0}" x2="{WIDTH - MARGIN}" y2="{y0}" stroke="black"/>']
    for t in np.linspace(lo, hi, 5):
        px = MARGIN + (t - lo) / (hi - lo) * (WIDTH - 2 * MARGIN)
        body.append(f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}" y2="{y0 + 5}" stroke="black"/>')
        body.append(f'<text x="{_fmt(px)}" y="{y0 + 18}" text-anchor="middle">{t:.3g}</text>')
    return body


def density_overlay_svg(samples: dict, title: str) -> str:
    """One panel overlaying the densities of several named samples."""
    if not samples:
        raise ContractError("nothing to plot")
    allx = np.concatenate([np.asarray(v, float).ravel() for v in samples.values()])
    lo, hi = float(allx.min()), float(allx.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.1 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    grid = np.linspace(lo, hi, 256)
    curves = {k: None if _is_constant(v) else _kde(v, grid) for k, v in samples.items()}
    top = max([c.max() for c in curves.values() if c is not None] + [1e-300])
    y0 = HEIGHT - MARGIN
    span = HEIGHT - 2 * MARGIN - 20

    def px(x):
        return MARGIN + (x - lo) / (hi - lo) * (WIDTH - 2 * MARGIN)

    body = _axis(lo, hi, y0)
    for i, (name, dens) in enumerate(curves.items()):
        col = PALETTE[i % len(PALETTE)]
        if dens is None:
            x = float(np.asarray(samples[name], float).ravel()[0])
            body.append(f'<circle cx="{_fmt(px(x))}" cy="{y0 - span / 2}" r="5" fill="{col}"/>')
            body.append(f'<line x1="{_fmt(px(x))}" y1="{y0}" x2="{_fmt(px(x))}" y2="{y0 - span / 2}" stroke="{col}" stroke-dasharray="4 3"/>')
        else:
            pts = " ".join(f"{_fmt(px(g))},{_fmt(y0 - d / top * span)}" for g, d in zip(grid, dens))
            body.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="2"/>')
        ly = MARGIN + 16 * i
        body.append(f'<rect x="{WIDTH - MARGIN - 120}" y="{ly - 9}" width="10" height="10" fill="{col}"/>')
        body.append(f'<text x="{WIDTH - MARGIN - 105}" y="{ly}">{escape(str(name))}</text>')
    return _svg(body, title)


def violin_summary_svg(groups: dict, title: str, reference: float | None = None) -> str:
    """Side-by-side violins: mirrored KDE silhouette, quartile box and median."""
    if not groups:
        raise ContractError("nothing to plot")
    allx = np.concatenate([np.asarray(v, float).ravel() for v in groups.values()])
    lo, hi = float(allx.min()), float(allx.max())
    if reference is not None:
        lo, hi = min(lo, reference), max(hi, reference)
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.1 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    k = len(groups)
    slot = (WIDTH - 2 * MARGIN) / k
    half = 0.4 * slot

    def py(v):
        return HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2 * MARGIN - 20)

    body = [f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>']
    for t in np.linspace(lo, hi, 5):
        body.append(f'<text x="{MARGIN - 6}" y="{_fmt(py(t) + 4)}" text-anchor="end">{t:.3g}</text>')
    if reference is not None:
        body.append(f'<line x1="{MARGIN}" y1="{_fmt(py(reference))}" x2="{WIDTH - MARGIN}" y2="{_fmt(py(reference))}" '
                    f'stroke="gray" stroke-dasharray="5 4"/>')
    for i, (name, vals) in enumerate(groups.items()):
        vals = np.asarray(vals, float).ravel()
        col = PALETTE[i % len(PALETTE)]
        cx = MARGIN + slot * (i + 0.5)
        q1, q2, q3 = np.quantile(vals, [0.25, 0.5, 0.75])
        if _is_constant(vals):
            body.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(py(q2))}" r="5" fill="{col}"/>')
        else:
            grid = np.linspace(vals.min(), vals.max(), 128)
            d = _kde(vals, grid)
            w = d / d.max() * half
            right = [f"{_fmt(cx + wi)},{_fmt(py(g))}" for g, wi in zip(grid, w)]
            left = [f"{_fmt(cx - wi)},{_fmt(py(g))}" for g, wi in zip(grid[::-1], w[::-1])]
            body.append(f'<polygon points="{" ".join(right + left)}" fill="{col}" fill-opacity="0.35" stroke="{col}"/>')
            body.append(f'<rect x="{_fmt(cx - 4)}" y="{_fmt(py(q3))}" width="8" height="{_fmt(py(q1) - py(q3))}" fill="black"/>')
            body.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(py(q2))}" r="3" fill="white"/>')
        body.append(f'<text x="{_fmt(cx)}" y="{HEIGHT - MARGIN + 18}" text-anchor="middle">{escape(str(name))}</text>')
    return _svg(body, title)


def emit_plots(results: dict, kind: str, outdir, prefix: str = "", reference: float | None = None) -> list:
    """Write SVG files and return their paths.

    ``density-overlay``: ``results`` maps parameter -> {method: samples}; one
    SVG per parameter. ``violin-summary``: ``results`` maps label -> values;
    a single SVG.
    """
    if kind not in KINDS:
        raise ContractError(f"unknown plot kind {kind!r}")
    if not results:
        raise ContractError("nothing to plot")
    os.makedirs(outdir, exist_ok=True)
    paths = []
    if kind == "density-overlay":
        for param, by_method in results.items():
            path = os.path.join(outdir, f"{prefix}density_{_safe(param)}.svg")
            with open(path, "w") as fh:
                fh.write(density_overlay_svg(by_method, str(param)))
            paths.append(path)
    else:
        path = os.path.join(outdir, f"{prefix}violin.svg")
        with open(path, "w") as fh:
            fh.write(violin_summary_svg(results, prefix.rstrip("_") or "summary", reference))
        paths.append(path)
    return paths
