"""Small PNG line charts (loss curves, error over time) drawn with Pillow."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

PALETTE = [(31, 119, 180), (214, 39, 40), (44, 160, 44), (255, 127, 14), (148, 103, 189),
           (140, 86, 75)]


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def line_chart(path, series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
               size=(560, 360), logy: bool = False) -> Path:
    """Write a chart of ``{name: (x, y)}`` series to ``path``; returns the path."""
    W, H = size
    left, right, top, bottom = 70, 20, 30, 45
    img = Image.new("RGB", size, "white")
    d = ImageDraw.Draw(img)
    clean = {}
    for name, (x, y) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logy:
            ok &= y > 0
            y = np.where(ok, np.log10(np.where(y > 0, y, 1.0)), 0.0)
        clean[name] = (x[ok], y[ok])
    xs = np.concatenate([v[0] for v in clean.values()]) if clean else np.zeros(1)
    ys = np.concatenate([v[1] for v in clean.values()]) if clean else np.zeros(1)
    if xs.size == 0:
        xs = ys = np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + (abs(y0) if y0 else 1.0)

    def px(x, y):
        return (left + (x - x0) / (x1 - x0) * (W - left - right),
                H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom))

    d.rectangle([left, top, W - right, H - bottom], outline=(0, 0, 0))
    for ty in _ticks(y0, y1):
        _, yy = px(x0, ty)
        d.line([left - 4, yy, left, yy], fill=(0, 0, 0))
        label = f"1e{ty:.1f}" if logy else f"{ty:.3g}"
        d.text((4, yy - 6), label, fill=(0, 0, 0))
    for tx in _ticks(x0, x1):
        xx, _ = px(tx, y0)
        d.line([xx, H - bottom, xx, H - bottom + 4], fill=(0, 0, 0))
        d.text((xx - 10, H - bottom + 6), f"{tx:.3g}", fill=(0, 0, 0))
    d.text((left, 8), title, fill=(0, 0, 0))
    d.text((W // 2 - 20, H - 16), xlabel, fill=(0, 0, 0))
    d.text((4, top - 22), ylabel, fill=(0, 0, 0))
    for k, (name, (x, y)) in enumerate(clean.items()):
        col = PALETTE[k % len(PALETTE)]
        pts = [px(a, b) for a, b in zip(x, y)]
        if len(pts) > 1:
            d.line(pts, fill=col, width=2)
        elif pts:
            d.ellipse([pts[0][0] - 2, pts[0][1] - 2, pts[0][0] + 2, pts[0][1] + 2], fill=col)
        d.text((W - right - 150, top + 6 + 14 * k), name, fill=col)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path)
    return path
