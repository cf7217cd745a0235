"""Standalone SVG plots (line chart, scatter, reliability diagram) without a plotting library."""

from __future__ import annotations

from html import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")

W, H = 640, 480
LEFT, RIGHT, TOP, BOTTOM = 70, 160, 40, 50


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Frame:
    def __init__(self, xlo, xhi, ylo, yhi):
        if xhi <= xlo:
            xhi = xlo + 1.0
        if yhi <= ylo:
            yhi = ylo + 1.0
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def x(self, v):
        return LEFT + (v - self.xlo) / (self.xhi - self.xlo) * (W - LEFT - RIGHT)

    def y(self, v):
        return H - BOTTOM - (v - self.ylo) / (self.yhi - self.ylo) * (H - TOP - BOTTOM)


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.0f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{escape(title)}</text>',
    ]


def _axes(fr: _Frame, xlabel: str, ylabel: str, ticks: int = 5) -> list[str]:
    out = [
        f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>',
    ]
    for t in np.linspace(0, 1, ticks + 1):
        xv = fr.xlo + t * (fr.xhi - fr.xlo)
        yv = fr.ylo + t * (fr.yhi - fr.ylo)
        out.append(f'<text x="{_fmt(fr.x(xv))}" y="{H - BOTTOM + 18}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{xv:.3g}</text>')
        out.append(f'<text x="{LEFT - 6}" y="{_fmt(fr.y(yv) + 4)}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{yv:.3g}</text>')
    out.append(f'<text x="{(LEFT + W - RIGHT) / 2:.0f}" y="{H - 12}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{(TOP + H - BOTTOM) / 2:.0f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="13" transform="rotate(-90 16 {(TOP + H - BOTTOM) / 2:.0f})">{escape(ylabel)}</text>')
    return out


def _legend(names) -> list[str]:
    out = []
    for i, name in enumerate(names):
        y = TOP + 10 + 20 * i
        out.append(f'<rect x="{W - RIGHT + 15}" y="{y - 9}" width="12" height="12" fill="{PALETTE[i % len(PALETTE)]}"/>')
        out.append(f'<text x="{W - RIGHT + 32}" y="{y + 1}" font-family="sans-serif" font-size="12">{escape(str(name))}</text>')
    return out


def line_plot(series: dict[str, tuple], title: str, xlabel: str, ylabel: str) -> str:
    """``series`` maps a legend name to ``(xs, ys)``."""
    xs_all = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys_all = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    fr = _Frame(xs_all.min(), xs_all.max(), min(0.0, ys_all.min()), ys_all.max() * 1.05)
    out = _header(title) + _axes(fr, xlabel, ylabel)
    for i, (xs, ys) in enumerate(series.values()):
        pts = " ".join(f"{_fmt(fr.x(a))},{_fmt(fr.y(b))}" for a, b in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="2"/>')
    out += _legend(series.keys())
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_plot(points, labels, class_names, title: str) -> str:
    points = np.asarray(points, float)
    pad = 0.05 * (np.ptp(points, axis=0) + 1e-12)
    fr = _Frame(points[:, 0].min() - pad[0], points[:, 0].max() + pad[0],
                points[:, 1].min() - pad[1], points[:, 1].max() + pad[1])
    out = _header(title) + _axes(fr, "dim 1", "dim 2")
    for (a, b), lab in zip(points, labels):
        out.append(f'<circle cx="{_fmt(fr.x(a))}" cy="{_fmt(fr.y(b))}" r="3" '
                   f'fill="{PALETTE[int(lab) % len(PALETTE)]}" fill-opacity="0.8"/>')
    out += _legend(class_names)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def reliability_plot(table, title: str = "Reliability diagram") -> str:
    fr = _Frame(0.0, 1.0, 0.0, 1.0)
    out = _header(title) + _axes(fr, "confidence", "accuracy")
    out.append(f'<line x1="{_fmt(fr.x(0))}" y1="{_fmt(fr.y(0))}" x2="{_fmt(fr.x(1))}" y2="{_fmt(fr.y(1))}" '
               f'stroke="#999" stroke-dasharray="4 4"/>')
    for b in table.bins:
        if not b.count:
            continue
        x0, x1 = fr.x(b.lower), fr.x(b.upper)
        out.append(f'<rect x="{_fmt(x0)}" y="{_fmt(fr.y(b.accuracy))}" width="{_fmt(x1 - x0)}" '
                   f'height="{_fmt(fr.y(0) - fr.y(b.accuracy))}" fill="{PALETTE[0]}" fill-opacity="0.7" stroke="white"/>')
    out.append(f'<text x="{W - RIGHT + 15}" y="{TOP + 10}" font-family="sans-serif" font-size="12">'
               f'ECE = {table.ece:.4f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
