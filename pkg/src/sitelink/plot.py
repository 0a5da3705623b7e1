"""BLER waterfall charts written directly as SVG text."""

import math
from xml.sax.saxutils import escape

from .errors import NotCrossed
from .sweep import passing_snr

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H = 640, 420
ML, MR, MT, MB = 70, 20, 30, 55


def _fmt(x):
    return f"{x:.2f}".rstrip("0").rstrip(".")


def waterfall_svg(results, labels, target_bler=0.1, title="BLER vs SNR", provenance=()):
    """One curve per result on a log10 BLER axis, with a marker at each passing SNR."""
    xs = [p.snr_db for r in results for p in r.points]
    if not xs:
        raise ValueError("nothing to plot")
    x0, x1 = math.floor(min(xs)), math.ceil(max(xs))
    if x1 == x0:
        x1 = x0 + 1
    floor = min([p.bler for r in results for p in r.points if p.bler > 0] + [target_bler])
    y0 = min(-1, math.floor(math.log10(floor)))
    y1 = 0

    def px(x):
        return ML + (x - x0) / (x1 - x0) * (W - ML - MR)

    def py(b):
        lb = math.log10(max(b, 10 ** y0))
        return MT + (y1 - lb) / (y1 - y0) * (H - MT - MB)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">']
    if provenance:
        out.append("<desc>" + escape("\n".join(provenance)) + "</desc>")
    out.append(f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>')
    out.append(f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" '
               f'font-size="14">{escape(title)}</text>')
    # grid and ticks
    for d in range(y0, y1 + 1):
        y = py(10 ** d)
        out.append(f'<line x1="{ML}" y1="{y:.1f}" x2="{W - MR}" y2="{y:.1f}" stroke="#ccc"/>')
        out.append(f'<text x="{ML - 6}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">1e{d}</text>')
    step = 1 if x1 - x0 <= 12 else 2 if x1 - x0 <= 24 else 5
    for x in range(x0, x1 + 1, step):
        xx = px(x)
        out.append(f'<line x1="{xx:.1f}" y1="{MT}" x2="{xx:.1f}" y2="{H - MB}" stroke="#eee"/>')
        out.append(f'<text x="{xx:.1f}" y="{H - MB + 16}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{x}</text>')
    out.append(f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="black"/>')
    out.append(f'<text x="{(ML + W - MR) / 2:.1f}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">SNR (dB)</text>')
    out.append(f'<text x="16" y="{(MT + H - MB) / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 16 {(MT + H - MB) / 2:.1f})">BLER</text>')
    ty = py(target_bler)
    out.append(f'<line x1="{ML}" y1="{ty:.1f}" x2="{W - MR}" y2="{ty:.1f}" stroke="#888" stroke-dasharray="4 3"/>')
    for i, (r, label) in enumerate(zip(results, labels)):
        c = COLORS[i % len(COLORS)]
        pts = " ".join(f"{px(p.snr_db):.1f},{py(p.bler if p.block_errors else 10 ** y0):.1f}" for p in r.points)
        out.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="2"/>')
        for p in r.points:
            out.append(f'<circle cx="{px(p.snr_db):.1f}" cy="{py(p.bler if p.block_errors else 10 ** y0):.1f}" '
                       f'r="3" fill="{c}"/>')
        text = label
        try:
            s = passing_snr(r, target_bler)
            out.append(f'<path d="M {px(s) - 5:.1f} {ty - 5:.1f} L {px(s) + 5:.1f} {ty + 5:.1f} '
                       f'M {px(s) - 5:.1f} {ty + 5:.1f} L {px(s) + 5:.1f} {ty - 5:.1f}" stroke="{c}" stroke-width="2"/>')
            text = f"{label} ({_fmt(s)} dB)"
        except NotCrossed:
            pass
        ly = MT + 16 + 16 * i
        out.append(f'<line x1="{W - MR - 190}" y1="{ly - 4}" x2="{W - MR - 170}" y2="{ly - 4}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{W - MR - 165}" y="{ly}" font-family="sans-serif" font-size="11">{escape(text)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
