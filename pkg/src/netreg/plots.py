"""Minimal log-log line plots written as standalone SVG."""
import math

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H, _PAD = 480, 360, 56


def _ticks(lo, hi):
    return [10.0**k for k in range(math.floor(lo), math.ceil(hi) + 1)]


def loglog_svg(path, series, title="", xlabel="delta", ylabel="error", note=""):
    """Write ``series`` (name -> (xs, ys)) as a log-log plot; non-positive points are dropped."""
    pts = {
        name: [(math.log10(x), math.log10(y)) for x, y in zip(xs, ys) if x > 0 and y > 0]
        for name, (xs, ys) in series.items()
    }
    allx = [p[0] for v in pts.values() for p in v] or [0.0, 1.0]
    ally = [p[1] for v in pts.values() for p in v] or [0.0, 1.0]
    x0, x1 = math.floor(min(allx)), math.ceil(max(allx))
    y0, y1 = math.floor(min(ally)), math.ceil(max(ally))
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(v):
        return _PAD + (v - x0) / (x1 - x0) * (_W - 2 * _PAD)

    def sy(v):
        return _H - _PAD - (v - y0) / (y1 - y0) * (_H - 2 * _PAD)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
        f'<rect x="{_PAD}" y="{_PAD}" width="{_W - 2 * _PAD}" height="{_H - 2 * _PAD}" fill="none" stroke="black"/>',
    ]
    for t in range(x0, x1 + 1):
        out.append(f'<text x="{sx(t):.1f}" y="{_H - _PAD + 16}" text-anchor="middle">1e{t}</text>')
    for t in range(y0, y1 + 1):
        out.append(f'<text x="{_PAD - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">1e{t}</text>')
    out.append(f'<text x="{_W / 2}" y="{_H - 14}" text-anchor="middle">{xlabel}</text>')
    out.append(
        f'<text x="14" y="{_H / 2}" text-anchor="middle" transform="rotate(-90 14 {_H / 2})">{ylabel}</text>'
    )
    for k, (name, p) in enumerate(pts.items()):
        color = _COLORS[k % len(_COLORS)]
        coords = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in sorted(p))
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for a, b in p:
            out.append(f'<circle cx="{sx(a):.1f}" cy="{sy(b):.1f}" r="2.5" fill="{color}"/>')
        out.append(f'<text x="{_PAD + 8}" y="{_PAD + 14 + 14 * k}" fill="{color}">{name}</text>')
    if note:
        out.append(f'<text x="{_W - _PAD - 6}" y="{_H - _PAD - 8}" text-anchor="end">{note}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def line_svg(path, ys, title="", xlabel="iteration", ylabel="objective"):
    """Log-log trace plot of a positive sequence against its 1-based index."""
    xs = list(range(1, len(ys) + 1))
    loglog_svg(path, {ylabel: (xs, list(ys))}, title=title, xlabel=xlabel, ylabel=ylabel)
