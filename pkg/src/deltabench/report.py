"""Histograms and time series of staleness, rendered as CSV and SVG."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .analysis import ChiEvent, DeltaReport

DEFAULT_BIN_WIDTH_US = 1000


@dataclass(frozen=True)
class Histogram:
    bin_width_us: int
    edges: tuple[int, ...]
    counts: tuple[int, ...]
    total: int
    min: int | None = None
    max: int | None = None
    median: int | None = None
    p99: int | None = None

    def bins(self):
        return zip(self.edges[:-1], self.edges[1:], self.counts)

    def proportion_in_first_bin(self) -> float:
        return self.counts[0] / self.total if self.total else 0.0


@dataclass(frozen=True)
class TimeSeries:
    points: tuple[tuple[int, int], ...] = ()


def _histogram(values: Sequence[int], width: int) -> Histogram:
    if width <= 0:
        raise ValueError("bin width must be positive")
    if not values:
        return Histogram(width, (0,), (), 0)
    vals = np.sort(np.asarray(values, dtype=np.int64))
    if vals[0] < 0:
        raise ValueError("histogram values must be non-negative")
    n = len(vals)
    nbins = int(vals[-1]) // width + 1
    counts = np.bincount(vals // width, minlength=nbins)
    return Histogram(
        bin_width_us=width,
        edges=tuple(range(0, (nbins + 1) * width, width)),
        counts=tuple(int(c) for c in counts),
        total=n,
        min=int(vals[0]),
        max=int(vals[-1]),
        median=int(vals[(n - 1) // 2]),
        p99=int(vals[math.ceil(0.99 * n) - 1]),
    )


def chi_histogram(events: Iterable[ChiEvent], bin_width_us: int = DEFAULT_BIN_WIDTH_US) -> Histogram:
    return _histogram([e.chi_us for e in events if e.chi_us > 0], bin_width_us)


def key_consistency_histogram(report: DeltaReport, bin_width_us: int = DEFAULT_BIN_WIDTH_US) -> Histogram:
    """Per-key Delta values, zeros included: bin 0 holds the consistently read keys."""
    return _histogram([r.delta_us for r in report.per_key.values()], bin_width_us)


def chi_timeseries(events: Iterable[ChiEvent]) -> TimeSeries:
    pts = sorted(((e.at_us, e.chi_us) for e in events if e.chi_us > 0), key=lambda p: p[0])
    return TimeSeries(tuple(pts))


def render_csv(obj: Histogram | TimeSeries) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if isinstance(obj, Histogram):
        w.writerow(("bin_low_us", "bin_high_us", "count"))
        w.writerows(obj.bins())
    else:
        w.writerow(("at_us", "chi_us"))
        w.writerows(obj.points)
    return buf.getvalue().encode("utf-8")


# --------------------------------------------------------------------------
# SVG


def _nice_step(span: float, target: int = 5) -> float:
    if span <= 0:
        return 1.0
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 5, 10):
        if raw <= m * mag:
            return m * mag
    return 10 * mag


def _ticks(lo: float, hi: float) -> list[float]:
    step = _nice_step(hi - lo)
    first = math.ceil(lo / step) * step
    out = []
    k = 0
    while first + k * step <= hi + step * 1e-9:
        out.append(first + k * step)
        k += 1
    return out


def _fmt(x: float) -> str:
    if abs(x - round(x)) < 1e-9:
        return str(int(round(x)))
    return f"{x:.3f}".rstrip("0").rstrip(".")


class _Canvas:
    MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 16, 32, 48

    def __init__(self, width: int, height: int, xmax: float, ymax: float):
        if width <= 0 or height <= 0:
            raise ValueError("canvas dimensions must be positive")
        self.w, self.h = width, height
        self.xmax = xmax if xmax > 0 else 1.0
        self.ymax = ymax if ymax > 0 else 1.0
        self.x0, self.x1 = self.MARGIN_L, max(self.MARGIN_L + 1, width - self.MARGIN_R)
        self.y0, self.y1 = max(self.MARGIN_T + 1, height - self.MARGIN_B), self.MARGIN_T
        self.parts: list[str] = []

    def sx(self, x: float) -> float:
        return self.x0 + (self.x1 - self.x0) * x / self.xmax

    def sy(self, y: float) -> float:
        return self.y0 - (self.y0 - self.y1) * y / self.ymax

    def add(self, s: str) -> None:
        self.parts.append(s)

    def axes(self, title: str, xlabel: str, ylabel: str, xscale: float, yscale: float) -> None:
        x0, x1, y0, y1 = self.x0, self.x1, self.y0, self.y1
        self.add(f'<text x="{self.w / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
        self.add(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
        self.add(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
        for t in _ticks(0, self.xmax / xscale):
            px = self.sx(t * xscale)
            self.add(f'<line x1="{px:.1f}" y1="{y0}" x2="{px:.1f}" y2="{y0 + 4}" stroke="black"/>')
            self.add(f'<text x="{px:.1f}" y="{y0 + 16}" text-anchor="middle" font-size="10">{_fmt(t)}</text>')
        for t in _ticks(0, self.ymax / yscale):
            py = self.sy(t * yscale)
            self.add(f'<line x1="{x0 - 4}" y1="{py:.1f}" x2="{x0}" y2="{py:.1f}" stroke="black"/>')
            self.add(f'<text x="{x0 - 6}" y="{py + 3:.1f}" text-anchor="end" font-size="10">{_fmt(t)}</text>')
        self.add(f'<text x="{(x0 + x1) / 2:.1f}" y="{self.h - 8}" text-anchor="middle" font-size="12">'
                 f'{escape(xlabel)}</text>')
        self.add(f'<text x="14" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 14 {(y0 + y1) / 2:.1f})">{escape(ylabel)}</text>')

    def document(self) -> bytes:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{self.w}" height="{self.h}" '
            f'viewBox="0 0 {self.w} {self.h}" font-family="sans-serif">\n'
            f'<rect x="0" y="0" width="{self.w}" height="{self.h}" fill="white"/>\n'
        )
        return (head + "\n".join(self.parts) + "\n</svg>\n").encode("utf-8")


def render_svg(obj: Histogram | TimeSeries, width_px: int = 640, height_px: int = 400,
               title: str | None = None) -> bytes:
    if isinstance(obj, Histogram):
        xmax = obj.edges[-1] if obj.counts else 0
        c = _Canvas(width_px, height_px, xmax, max(obj.counts, default=0))
        c.axes(title or "Histogram of staleness", "staleness (ms)", "count", 1000, 1)
        for lo, hi, n in obj.bins():
            if not n:
                continue
            x, y = c.sx(lo), c.sy(n)
            c.add(f'<rect x="{x:.2f}" y="{y:.2f}" width="{max(c.sx(hi) - x, 0.5):.2f}" '
                  f'height="{c.y0 - y:.2f}" fill="steelblue"/>')
        return c.document()
    pts = obj.points
    c = _Canvas(width_px, height_px, max((p[0] for p in pts), default=0), max((p[1] for p in pts), default=0))
    c.axes(title or "Staleness over time", "time (ms)", "staleness (ms)", 1000, 1000)
    for at, chi in pts:
        c.add(f'<circle cx="{c.sx(at):.2f}" cy="{c.sy(chi):.2f}" r="1.5" fill="firebrick"/>')
    return c.document()
