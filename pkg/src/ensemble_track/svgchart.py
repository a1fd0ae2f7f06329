"""Minimal deterministic SVG line charts: axes, polylines, legend.

Self-contained emitter for run artifacts — no plotting dependency.  Output is
a pure function of the input series (fixed color cycle, fixed geometry,
fixed number formatting), so chart files are byte-reproducible across runs
and platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = ["Series", "line_chart", "PALETTE"]

#: Fixed color cycle (classic ten-color qualitative palette).
PALETTE = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
    "#bcbd22",
    "#17becf",
)

# Fixed geometry: total canvas and margins around the plot box.
_WIDTH = 720.0
_HEIGHT = 440.0
_MARGIN_L = 64.0
_MARGIN_R = 16.0
_MARGIN_T = 34.0
_MARGIN_B = 46.0
_FONT = "font-family=\"Helvetica,Arial,sans-serif\""


@dataclass(frozen=True)
class Series:
    """One polyline: samples, legend label and optional style overrides."""

    x: np.ndarray
    y: np.ndarray
    label: str
    color: str | None = None
    width: float = 1.4
    dash: str | None = None  # e.g. "5,3" for a dashed line

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or y.shape != x.shape:
            raise ValueError(f"series needs matching 1-d x/y, got {x.shape} vs {y.shape}")
        if x.size < 2:
            raise ValueError("series needs at least two samples")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


def _nice_step(span: float, target: int) -> float:
    """Largest of {1,2,5}·10^k producing at least ``target`` intervals."""
    raw = span / max(target, 1)
    power = 10.0 ** math.floor(math.log10(raw))
    for mult in (5.0, 2.0, 1.0):
        if mult * power <= raw:
            return mult * power
    return power


def _ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Round tick positions covering [lo, hi] (degenerate ranges padded)."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("tick range must be finite")
    if hi <= lo:
        pad = 1.0 if lo == 0.0 else abs(lo) * 0.5
        lo, hi = lo - pad, hi + pad
    step = _nice_step(hi - lo, target)
    first = math.ceil(lo / step - 1e-9)
    last = math.floor(hi / step + 1e-9)
    return [k * step for k in range(first, last + 1)]


def _fmt(v: float) -> str:
    """Deterministic short label: %g with -0 normalized."""
    if v == 0.0:
        v = 0.0
    return f"{v:g}"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def line_chart(
    series: Sequence[Series],
    title: str = "",
    x_label: str = "",
    y_label: str = "",
) -> str:
    """Render the series as one SVG document (string, fixed 720x440 canvas)."""
    if not series:
        raise ValueError("line_chart needs at least one series")
    finite = [
        (np.asarray(s.x)[np.isfinite(s.x) & np.isfinite(s.y)],
         np.asarray(s.y)[np.isfinite(s.x) & np.isfinite(s.y)])
        for s in series
    ]
    xs = np.concatenate([f[0] for f in finite])
    ys = np.concatenate([f[1] for f in finite])
    if xs.size == 0:
        raise ValueError("series contain no finite samples")
    x_ticks = _ticks(float(xs.min()), float(xs.max()))
    y_ticks = _ticks(float(ys.min()), float(ys.max()))
    x_lo, x_hi = min(x_ticks[0], xs.min()), max(x_ticks[-1], xs.max())
    y_lo, y_hi = min(y_ticks[0], ys.min()), max(y_ticks[-1], ys.max())
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0

    box_w = _WIDTH - _MARGIN_L - _MARGIN_R
    box_h = _HEIGHT - _MARGIN_T - _MARGIN_B

    def px(v: float) -> float:
        return _MARGIN_L + (v - x_lo) / (x_hi - x_lo) * box_w

    def py(v: float) -> float:
        return _MARGIN_T + box_h - (v - y_lo) / (y_hi - y_lo) * box_h

    out: list[str] = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH:g}" '
        f'height="{_HEIGHT:g}" viewBox="0 0 {_WIDTH:g} {_HEIGHT:g}">'
    )
    out.append(f'<rect width="{_WIDTH:g}" height="{_HEIGHT:g}" fill="#ffffff"/>')
    if title:
        out.append(
            f'<text x="{_WIDTH / 2:.2f}" y="20" text-anchor="middle" '
            f'{_FONT} font-size="15" fill="#111111">{_esc(title)}</text>'
        )

    # Grid lines and tick labels.
    for tv in x_ticks:
        x = px(tv)
        out.append(
            f'<line x1="{x:.2f}" y1="{_MARGIN_T:.2f}" x2="{x:.2f}" '
            f'y2="{_MARGIN_T + box_h:.2f}" stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{x:.2f}" y="{_MARGIN_T + box_h + 18:.2f}" text-anchor="middle" '
            f'{_FONT} font-size="11" fill="#333333">{_esc(_fmt(tv))}</text>'
        )
    for tv in y_ticks:
        y = py(tv)
        out.append(
            f'<line x1="{_MARGIN_L:.2f}" y1="{y:.2f}" x2="{_MARGIN_L + box_w:.2f}" '
            f'y2="{y:.2f}" stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{_MARGIN_L - 6:.2f}" y="{y + 4:.2f}" text-anchor="end" '
            f'{_FONT} font-size="11" fill="#333333">{_esc(_fmt(tv))}</text>'
        )

    # Plot box frame and axis labels.
    out.append(
        f'<rect x="{_MARGIN_L:.2f}" y="{_MARGIN_T:.2f}" width="{box_w:.2f}" '
        f'height="{box_h:.2f}" fill="none" stroke="#444444" stroke-width="1"/>'
    )
    if x_label:
        out.append(
            f'<text x="{_MARGIN_L + box_w / 2:.2f}" y="{_HEIGHT - 8:.2f}" '
            f'text-anchor="middle" {_FONT} font-size="12" '
            f'fill="#111111">{_esc(x_label)}</text>'
        )
    if y_label:
        yx, yy = 16.0, _MARGIN_T + box_h / 2
        out.append(
            f'<text x="{yx:.2f}" y="{yy:.2f}" text-anchor="middle" {_FONT} '
            f'font-size="12" fill="#111111" '
            f'transform="rotate(-90 {yx:.2f} {yy:.2f})">{_esc(y_label)}</text>'
        )

    # Polylines, clipped to the plot box.
    out.append(
        f'<clipPath id="box"><rect x="{_MARGIN_L:.2f}" y="{_MARGIN_T:.2f}" '
        f'width="{box_w:.2f}" height="{box_h:.2f}"/></clipPath>'
    )
    out.append('<g clip-path="url(#box)">')
    for i, s in enumerate(series):
        color = s.color or PALETTE[i % len(PALETTE)]
        mask = np.isfinite(s.x) & np.isfinite(s.y)
        pts = " ".join(
            f"{px(float(a)):.2f},{py(float(b)):.2f}"
            for a, b in zip(s.x[mask], s.y[mask])
        )
        dash = f' stroke-dasharray="{s.dash}"' if s.dash else ""
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{s.width:g}"{dash}/>'
        )
    out.append("</g>")

    # Legend (top-right inside the box), one swatch + label per series.
    lx = _MARGIN_L + box_w - 170.0
    ly = _MARGIN_T + 10.0
    for i, s in enumerate(series):
        color = s.color or PALETTE[i % len(PALETTE)]
        y = ly + 16.0 * i
        dash = f' stroke-dasharray="{s.dash}"' if s.dash else ""
        out.append(
            f'<line x1="{lx:.2f}" y1="{y:.2f}" x2="{lx + 22:.2f}" y2="{y:.2f}" '
            f'stroke="{color}" stroke-width="{s.width:g}"{dash}/>'
        )
        out.append(
            f'<text x="{lx + 28:.2f}" y="{y + 4:.2f}" {_FONT} font-size="11" '
            f'fill="#111111">{_esc(s.label)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
