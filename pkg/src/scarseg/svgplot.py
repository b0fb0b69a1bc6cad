"""Hand-rolled SVG scatter and Bland-Altman panels.

SVG is emitted as plain text so tests can assert on it without an image
decoder: every data point is a ``<circle class="pt">``, axis ticks carry
their data value in a ``data-value`` attribute, and aggregate lines are
``<line class="agg-...">`` elements.
"""

from __future__ import annotations

from dataclasses import dataclass

WIDTH, HEIGHT = 480, 360
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 15, 15, 45
POINT_RADIUS = 3


@dataclass(frozen=True)
class LinearScale:
    lo: float
    hi: float
    pix_lo: float
    pix_hi: float

    def __call__(self, value: float) -> float:
        frac = (value - self.lo) / (self.hi - self.lo)
        return self.pix_lo + frac * (self.pix_hi - self.pix_lo)


def _padded(values, frac=0.08, min_span=1e-3):
    lo, hi = min(values), max(values)
    span = hi - lo
    if span < min_span:
        mid = 0.5 * (lo + hi)
        lo, hi = mid - min_span, mid + min_span
        span = hi - lo
    return lo - frac * span, hi + frac * span


def _ticks(lo, hi, n=5):
    return [lo + k * (hi - lo) / (n - 1) for k in range(n)]


def _axes(xscale, yscale, xlabel, ylabel):
    parts = [
        f'<line class="axis" x1="{MARGIN_L}" y1="{HEIGHT - MARGIN_B}" '
        f'x2="{WIDTH - MARGIN_R}" y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
        f'<line class="axis" x1="{MARGIN_L}" y1="{MARGIN_T}" '
        f'x2="{MARGIN_L}" y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
    ]
    for v in _ticks(xscale.lo, xscale.hi):
        px = xscale(v)
        parts.append(
            f'<line class="xtick" x1="{px:.2f}" y1="{HEIGHT - MARGIN_B}" '
            f'x2="{px:.2f}" y2="{HEIGHT - MARGIN_B + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text class="xtick-label" data-value="{v!r}" x="{px:.2f}" '
            f'y="{HEIGHT - MARGIN_B + 18}" font-size="10" text-anchor="middle">{v:.3f}</text>'
        )
    for v in _ticks(yscale.lo, yscale.hi):
        py = yscale(v)
        parts.append(
            f'<line class="ytick" x1="{MARGIN_L - 5}" y1="{py:.2f}" '
            f'x2="{MARGIN_L}" y2="{py:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text class="ytick-label" data-value="{v!r}" x="{MARGIN_L - 8}" '
            f'y="{py + 3:.2f}" font-size="10" text-anchor="end">{v:.3f}</text>'
        )
    parts.append(
        f'<text class="xlabel" x="{(MARGIN_L + WIDTH - MARGIN_R) / 2:.1f}" '
        f'y="{HEIGHT - 8}" font-size="12" text-anchor="middle">{xlabel}</text>'
    )
    parts.append(
        f'<text class="ylabel" x="14" y="{(MARGIN_T + HEIGHT - MARGIN_B) / 2:.1f}" '
        f'font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {(MARGIN_T + HEIGHT - MARGIN_B) / 2:.1f})">{ylabel}</text>'
    )
    return parts


def _document(parts):
    body = "\n  ".join(parts)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">\n  {body}\n</svg>\n'
    )


def burden_scatter_svg(gt, pred) -> str:
    """Predicted vs ground-truth scar burden with the identity line."""
    xscale = LinearScale(*_padded(list(gt) + [0.0]), MARGIN_L, WIDTH - MARGIN_R)
    yscale = LinearScale(*_padded(list(pred) + [0.0]), HEIGHT - MARGIN_B, MARGIN_T)
    parts = _axes(xscale, yscale, "ground-truth scar burden", "predicted scar burden")
    ident_hi = min(xscale.hi, yscale.hi)
    parts.append(
        f'<line class="identity" x1="{xscale(0):.2f}" y1="{yscale(0):.2f}" '
        f'x2="{xscale(ident_hi):.2f}" y2="{yscale(ident_hi):.2f}" '
        f'stroke="gray" stroke-dasharray="4 3"/>'
    )
    for gx, py in zip(gt, pred):
        parts.append(
            f'<circle class="pt" cx="{xscale(gx):.2f}" cy="{yscale(py):.2f}" '
            f'r="{POINT_RADIUS}" fill="steelblue" fill-opacity="0.7"/>'
        )
    return _document(parts)


def bland_altman_svg(gt, pred, mean_diff=None, loa_low=None, loa_high=None) -> str:
    """Differences (gt - pred) against pair means, with mean and LoA lines."""
    means = [(g + p) / 2.0 for g, p in zip(gt, pred)]
    diffs = [g - p for g, p in zip(gt, pred)]
    extremes = diffs + [v for v in (mean_diff, loa_low, loa_high, 0.0) if v is not None]
    xscale = LinearScale(*_padded(means + [0.0]), MARGIN_L, WIDTH - MARGIN_R)
    yscale = LinearScale(*_padded(extremes), HEIGHT - MARGIN_B, MARGIN_T)
    parts = _axes(xscale, yscale, "mean scar burden", "burden difference (truth - prediction)")
    parts.append(
        f'<line class="zero" x1="{MARGIN_L}" y1="{yscale(0.0):.2f}" '
        f'x2="{WIDTH - MARGIN_R}" y2="{yscale(0.0):.2f}" stroke="lightgray"/>'
    )
    for cls, value in (("agg-mean", mean_diff), ("agg-loa-low", loa_low),
                       ("agg-loa-high", loa_high)):
        if value is None:
            continue
        dash = "" if cls == "agg-mean" else ' stroke-dasharray="6 3"'
        parts.append(
            f'<line class="{cls}" data-value="{value!r}" x1="{MARGIN_L}" '
            f'y1="{yscale(value):.2f}" x2="{WIDTH - MARGIN_R}" y2="{yscale(value):.2f}" '
            f'stroke="firebrick"{dash}/>'
        )
    for mx, dy in zip(means, diffs):
        parts.append(
            f'<circle class="pt" cx="{xscale(mx):.2f}" cy="{yscale(dy):.2f}" '
            f'r="{POINT_RADIUS}" fill="steelblue" fill-opacity="0.7"/>'
        )
    return _document(parts)
