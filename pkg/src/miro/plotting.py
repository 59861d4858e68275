"""Deterministic SVG learning-curve plots.

For each (variant, distractors) group found in the metrics files: the
across-seed mean episode return as a line, with a shaded band of plus or
minus one sample standard deviation (a single seed gives a band of width
zero).  The SVG is written with fixed float formatting and no timestamps,
so identical inputs produce identical bytes.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .metrics import episode_returns, read_metrics, _group_rows

__all__ = ["plot", "render_svg"]

_W, _H = 860, 520
_ML, _MR, _MT, _MB = 70, 220, 40, 60

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def _nice_ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(1, n - 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = np.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 10))
        v += step
    return ticks


def _group_curves(paths):
    groups = _group_rows(paths)
    curves = {}
    for key, by_seed in sorted(groups.items()):
        seed_curves = []
        for seed in sorted(by_seed):
            eps = episode_returns(by_seed[seed])
            if not eps:
                raise DataError(f"no episode rows for group {key} seed {seed}")
            seed_curves.append([ret for _, ret in eps])
        n = min(len(c) for c in seed_curves)
        stacked = np.array([c[:n] for c in seed_curves])
        # sample std across seeds; a single seed has no spread by definition
        std = stacked.std(axis=0, ddof=1) if len(stacked) > 1 else np.zeros(n)
        curves[key] = (np.arange(n), stacked.mean(axis=0), std)
    return curves


def _fmt(x: float) -> str:
    return format(float(x), ".2f")


def render_svg(paths, title: str = "episode return") -> str:
    curves = _group_curves(paths)
    if not curves:
        raise DataError("no metrics to plot")
    x_max = max(len(xs) - 1 for xs, _, _ in curves.values())
    x_max = max(x_max, 1)
    y_lo = min(float((m - s).min()) for _, m, s in curves.values())
    y_hi = max(float((m + s).max()) for _, m, s in curves.values())
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    pw = _W - _ML - _MR
    ph = _H - _MT - _MB

    def sx(x):
        return _ML + pw * (x / x_max)

    def sy(y):
        return _MT + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    parts = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="Helvetica,Arial,sans-serif">'
    )
    parts.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
    parts.append(
        f'<text x="{_ML + pw / 2:.1f}" y="24" text-anchor="middle" font-size="16">{title}</text>'
    )
    # axes
    parts.append(
        f'<line x1="{_ML}" y1="{_MT + ph}" x2="{_ML + pw}" y2="{_MT + ph}" stroke="black"/>'
    )
    parts.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_MT + ph}" stroke="black"/>')
    for tx in _nice_ticks(0, x_max):
        if tx > x_max:
            continue
        parts.append(
            f'<line x1="{_fmt(sx(tx))}" y1="{_MT + ph}" x2="{_fmt(sx(tx))}" y2="{_MT + ph + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_fmt(sx(tx))}" y="{_MT + ph + 20}" text-anchor="middle" font-size="12">{int(tx)}</text>'
        )
    for ty in _nice_ticks(y_lo, y_hi):
        if ty < y_lo or ty > y_hi:
            continue
        parts.append(
            f'<line x1="{_ML - 5}" y1="{_fmt(sy(ty))}" x2="{_ML}" y2="{_fmt(sy(ty))}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_ML - 9}" y="{_fmt(sy(ty) + 4)}" text-anchor="end" font-size="12">{ty:g}</text>'
        )
    parts.append(
        f'<text x="{_ML + pw / 2:.1f}" y="{_H - 18}" text-anchor="middle" font-size="13">episode</text>'
    )
    parts.append(
        f'<text x="20" y="{_MT + ph / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 20 {_MT + ph / 2:.1f})">return</text>'
    )

    for idx, (key, (xs, mean, std)) in enumerate(sorted(curves.items())):
        color = _PALETTE[idx % len(_PALETTE)]
        upper = [(sx(x), sy(m + s)) for x, m, s in zip(xs, mean, std)]
        lower = [(sx(x), sy(m - s)) for x, m, s in zip(xs, mean, std)]
        band = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in upper + lower[::-1])
        parts.append(f'<polygon points="{band}" fill="{color}" opacity="0.2" stroke="none"/>')
        line = " ".join(f"{_fmt(sx(x))},{_fmt(sy(m))}" for x, m in zip(xs, mean))
        parts.append(
            f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.8"/>'
        )
        variant, distractors = key
        ly = _MT + 16 + 22 * idx
        lx = _ML + pw + 18
        parts.append(
            f'<line x1="{lx}" y1="{ly}" x2="{lx + 26}" y2="{ly}" stroke="{color}" stroke-width="3"/>'
        )
        parts.append(
            f'<text x="{lx + 32}" y="{ly + 4}" font-size="13">{variant}, distractors={distractors}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot(paths, out_path, title: str = "episode return") -> None:
    svg = render_svg(paths, title=title)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(svg)
