"""Standalone SVG charts (no plotting dependency)."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

W, H = 480, 320
ML, MR, MT, MB = 60, 20, 30, 60


def _svg(body, title):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">\n'
            f'<rect width="{W}" height="{H}" fill="white"/>\n'
            f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>\n'
            + "\n".join(body) + "\n</svg>\n")


def _scale(lo, hi, a, b):
    if hi <= lo:
        hi = lo + 1.0
    return lambda v: a + (v - lo) / (hi - lo) * (b - a)


def _axes(body, ylo, yhi, ylabel):
    body.append(f'<line x1="{ML}" y1="{H - MB}" x2="{W - MR}" y2="{H - MB}" stroke="black"/>')
    body.append(f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{H - MB}" stroke="black"/>')
    sy = _scale(ylo, yhi, H - MB, MT)
    for i in range(5):
        v = ylo + (yhi - ylo) * i / 4
        body.append(f'<text x="{ML - 4}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    body.append(f'<text x="14" y="{(MT + H - MB) / 2}" transform="rotate(-90 14 {(MT + H - MB) / 2})"'
                f' text-anchor="middle">{escape(ylabel)}</text>')
    return sy


def bar_chart(labels, values, title, ylabel, errors=None):
    """Bars with optional (low, high) error ranges."""
    vals = [v for v in values if v is not None and math.isfinite(v)]
    extra = [x for e in (errors or []) if e for x in e]
    lo = min([0.0] + vals + extra)
    hi = max([0.0] + vals + extra)
    body = []
    sy = _axes(body, lo, hi if hi > lo else lo + 1, ylabel)
    n = max(len(labels), 1)
    slot = (W - ML - MR) / n
    for i, (lab, v) in enumerate(zip(labels, values)):
        x = ML + i * slot + slot * 0.15
        w = slot * 0.7
        if v is not None and math.isfinite(v):
            y0, y1 = sorted((sy(0.0), sy(v)))
            body.append(f'<rect x="{x:.1f}" y="{y0:.1f}" width="{w:.1f}" height="{y1 - y0:.1f}" '
                        f'fill="#4c72b0"/>')
        if errors and errors[i]:
            cx = x + w / 2
            a, b = errors[i]
            body.append(f'<line x1="{cx:.1f}" y1="{sy(a):.1f}" x2="{cx:.1f}" y2="{sy(b):.1f}" '
                        f'stroke="black"/>')
        body.append(f'<text x="{x + w / 2:.1f}" y="{H - MB + 14}" text-anchor="middle">'
                    f'{escape(str(lab))}</text>')
    return _svg(body, title)


def line_chart(xs, ys, title, xlabel, ylabel, step=False):
    if len(xs) == 0:
        return _svg([], title)
    lo, hi = min(ys), max(ys)
    body = []
    sy = _axes(body, lo, hi, ylabel)
    sx = _scale(min(xs), max(xs), ML, W - MR)
    pts = []
    for i, (x, y) in enumerate(zip(xs, ys)):
        if step and i > 0:
            pts.append(f"{sx(x):.1f},{sy(ys[i - 1]):.1f}")
        pts.append(f"{sx(x):.1f},{sy(y):.1f}")
    body.append(f'<polyline fill="none" stroke="#4c72b0" stroke-width="1.5" '
                f'points="{" ".join(pts)}"/>')
    body.append(f'<text x="{(ML + W - MR) / 2}" y="{H - 20}" text-anchor="middle">'
                f'{escape(xlabel)}</text>')
    body.append(f'<text x="{ML}" y="{H - MB + 14}" text-anchor="middle">{min(xs):.3g}</text>')
    body.append(f'<text x="{W - MR}" y="{H - MB + 14}" text-anchor="middle">{max(xs):.3g}</text>')
    return _svg(body, title)
