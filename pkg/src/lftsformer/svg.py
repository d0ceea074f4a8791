"""Self-contained SVG charts; output depends only on the inputs (fixed number formatting)."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")
TIME_UNITS = 5000.0


def _f(x: float) -> str:
    return f"{x:.2f}"


def _doc(width: int, height: int, body: list[str], title: str) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, f"<title>{escape(title)}</title>",
                      f'<rect width="{width}" height="{height}" fill="white"/>',
                      f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
                      *body, "</svg>"]) + "\n"


def _shade(v: float) -> str:
    # 0 -> near white, 1 -> dark blue
    v = 0.0 if not math.isfinite(v) else min(1.0, max(0.0, v))
    r = round(247 - v * (247 - 8))
    g = round(251 - v * (251 - 48))
    b = round(255 - v * (255 - 107))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(values, row_labels, col_labels, title: str, cell: int = 22, vmin: float = 0.0,
            vmax: float = 1.0, annotate: bool = False) -> str:
    """Cells shaded linearly between ``vmin`` and ``vmax``; darker is larger."""
    values = np.asarray(values, dtype=np.float64)
    left, top = 110, 40
    width = left + cell * values.shape[1] + 20
    height = top + cell * values.shape[0] + 120
    span = (vmax - vmin) or 1.0
    body = []
    for i, row in enumerate(values):
        y = top + i * cell
        body.append(f'<text x="{left - 6}" y="{y + cell * 0.7:.1f}" text-anchor="end">{escape(str(row_labels[i]))}</text>')
        for j, v in enumerate(row):
            x = left + j * cell
            body.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{_shade((v - vmin) / span)}">'
                        f'<title>{escape(str(row_labels[i]))} / {escape(str(col_labels[j]))}: {v:.4f}</title></rect>')
            if annotate:
                colour = "white" if (v - vmin) / span > 0.6 else "black"
                body.append(f'<text x="{x + cell / 2:.1f}" y="{y + cell * 0.65:.1f}" text-anchor="middle" '
                            f'font-size="8" fill="{colour}">{v:.2f}</text>')
    y0 = top + cell * values.shape[0] + 6
    for j, name in enumerate(col_labels):
        x = left + j * cell + cell / 2
        body.append(f'<text transform="translate({x:.1f},{y0}) rotate(60)">{escape(str(name))}</text>')
    return _doc(width, height, body, title)


def line_chart(series: dict[str, np.ndarray], title: str, x=None, x_label: str = "", y_label: str = "",
               width: int = 640, height: int = 320) -> str:
    """Polylines on shared axes; ``x`` defaults to 1..n."""
    left, right, top, bottom = 60, 120, 30, 40
    ys = [np.asarray(v, dtype=np.float64) for v in series.values()]
    n = max((len(v) for v in ys), default=0)
    xs = np.arange(1, n + 1, dtype=np.float64) if x is None else np.asarray(x, dtype=np.float64)
    finite = np.concatenate([v[np.isfinite(v)] for v in ys]) if ys else np.zeros(1)
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    x_lo, x_hi = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    pw, ph = width - left - right, height - top - bottom
    sx = lambda v: left + (v - x_lo) / (x_hi - x_lo) * pw
    sy = lambda v: top + (hi - v) / (hi - lo) * ph
    body = [f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>']
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        body.append(f'<text x="{left - 4}" y="{_f(sy(v) + 4)}" text-anchor="end">{v:.4g}</text>')
        u = x_lo + (x_hi - x_lo) * k / 4
        body.append(f'<text x="{_f(sx(u))}" y="{top + ph + 14}" text-anchor="middle">{u:.4g}</text>')
    body.append(f'<text x="{left + pw / 2:.1f}" y="{height - 6}" text-anchor="middle">{escape(x_label)}</text>')
    body.append(f'<text transform="translate(14,{top + ph / 2:.1f}) rotate(-90)" text-anchor="middle">'
                f'{escape(y_label)}</text>')
    for i, (name, v) in enumerate(series.items()):
        v = np.asarray(v, dtype=np.float64)
        pts = " ".join(f"{_f(sx(a))},{_f(sy(b))}" for a, b in zip(xs, v) if math.isfinite(b))
        colour = PALETTE[i % len(PALETTE)]
        body.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{pts}"/>')
        body.append(f'<rect x="{width - right + 10}" y="{top + 16 * i}" width="10" height="10" fill="{colour}"/>')
        body.append(f'<text x="{width - right + 24}" y="{top + 16 * i + 9}">{escape(name)}</text>')
    return _doc(width, height, body, title)


def time_axis(n: int) -> np.ndarray:
    """Positions of ``n`` samples on a 0 to 5000 abstract time scale."""
    return np.linspace(0.0, TIME_UNITS, n) if n > 1 else np.zeros(n)


def blend_scores(mse, rmse, r2) -> np.ndarray:
    """Per-row product of min-max normalized (1 - MSE), (1 - RMSE) and R^2; higher is jointly better."""

    def norm(v):
        v = np.asarray(v, dtype=np.float64)
        ok = np.isfinite(v)
        out = np.zeros_like(v)
        if ok.any():
            lo, hi = v[ok].min(), v[ok].max()
            out[ok] = 0.5 if hi == lo else (v[ok] - lo) / (hi - lo)
        return out

    return (1 - norm(mse)) * (1 - norm(rmse)) * norm(r2)
