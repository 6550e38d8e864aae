"""Hand-written SVG charts with byte-deterministic output.

Every chart uses an 800x600 viewBox and wraps each plotted region or
series in its own ``<g>`` with a ``<title>``, so the files can be checked
structurally without rendering them.
"""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 800, 600
MARGIN = (70, 30, 40, 60)  # left, right, top, bottom

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94",
    "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
)
SINGLE_COLOR = "#1f4fd6"
MULTI_COLOR = "#d62728"


def color(rank: int) -> str:
    return PALETTE[rank % len(PALETTE)]


def _n(v: float) -> str:
    """Fixed 2-decimal coordinates keep the output stable and small."""
    v = round(float(v), 2)
    return f"{v:.2f}".rstrip("0").rstrip(".") if v != 0 else "0"


class Canvas:
    def __init__(self, title: str = ""):
        self.parts: list[str] = []
        self.title = title
        self._depth = 0

    def open_group(self, title: str, **attrs):
        extra = "".join(f' {k.replace("_", "-")}="{escape(str(v))}"' for k, v in sorted(attrs.items()))
        self.parts.append(f"<g{extra}><title>{escape(title)}</title>")
        self._depth += 1

    def close_group(self):
        self.parts.append("</g>")
        self._depth -= 1

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, extra=""):
        self.parts.append(f'<line x1="{_n(x1)}" y1="{_n(y1)}" x2="{_n(x2)}" y2="{_n(y2)}" '
                          f'stroke="{stroke}" stroke-width="{_n(width)}"{extra}/>')

    def polyline(self, xs, ys, stroke="#000", width=1.0, opacity=1.0, fill="none"):
        pts = " ".join(f"{_n(x)},{_n(y)}" for x, y in zip(xs, ys))
        op = f' stroke-opacity="{_n(opacity)}"' if opacity != 1.0 else ""
        self.parts.append(f'<polyline points="{pts}" fill="{fill}" stroke="{stroke}" stroke-width="{_n(width)}"{op}/>')

    def rect(self, x, y, w, h, fill, stroke="none"):
        self.parts.append(f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(w)}" height="{_n(h)}" fill="{fill}" stroke="{stroke}"/>')

    def circle(self, cx, cy, r, fill, opacity=0.7):
        self.parts.append(f'<circle cx="{_n(cx)}" cy="{_n(cy)}" r="{_n(r)}" fill="{fill}" fill-opacity="{_n(opacity)}"/>')

    def text(self, x, y, s, size=12, anchor="start", extra=""):
        self.parts.append(f'<text x="{_n(x)}" y="{_n(y)}" font-size="{size}" text-anchor="{anchor}"{extra}>{escape(str(s))}</text>')

    def render(self) -> str:
        assert self._depth == 0, "unclosed group"
        head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
                f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
                f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">\n')
        title = f"<title>{escape(self.title)}</title>\n" if self.title else ""
        bg = f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>\n'
        return head + title + bg + "\n".join(self.parts) + "\n</svg>\n"


class Axes:
    """Linear data-to-pixel map for the plotting rectangle."""

    def __init__(self, xlim, ylim, box=None):
        l, r, t, b = MARGIN
        self.x0, self.x1, self.y0, self.y1 = box or (l, WIDTH - r, t, HEIGHT - b)
        self.xlim = _pad(xlim)
        self.ylim = _pad(ylim)

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (np.asarray(x, dtype=float) - lo) / (hi - lo) * (self.x1 - self.x0)

    def py(self, y):
        lo, hi = self.ylim
        return self.y1 - (np.asarray(y, dtype=float) - lo) / (hi - lo) * (self.y1 - self.y0)

    def frame(self, c: Canvas, xlabel="", ylabel="", ticks=5):
        c.open_group("axes")
        c.rect(self.x0, self.y0, self.x1 - self.x0, self.y1 - self.y0, "none", stroke="#444")
        for k in range(ticks + 1):
            fx = self.xlim[0] + (self.xlim[1] - self.xlim[0]) * k / ticks
            fy = self.ylim[0] + (self.ylim[1] - self.ylim[0]) * k / ticks
            c.text(self.px(fx), self.y1 + 16, f"{fx:.3g}", size=10, anchor="middle")
            c.text(self.x0 - 6, self.py(fy) + 4, f"{fy:.3g}", size=10, anchor="end")
        if xlabel:
            c.text((self.x0 + self.x1) / 2, HEIGHT - 15, xlabel, anchor="middle")
        if ylabel:
            c.text(18, (self.y0 + self.y1) / 2, ylabel, anchor="middle",
                   extra=f' transform="rotate(-90 18 {_n((self.y0 + self.y1) / 2)})"')
        c.close_group()


def _pad(lim):
    lo, hi = float(lim[0]), float(lim[1])
    if not (math.isfinite(lo) and math.isfinite(hi)):
        lo, hi = 0.0, 1.0
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def _title(c: Canvas, text: str):
    c.text(WIDTH / 2, 24, text, size=15, anchor="middle")


# -- charts ----------------------------------------------------------------------

def profile_chart(segments, feature_name: str) -> str:
    c = Canvas(f"Local linear profile of {feature_name}")
    if segments:
        xlo = min(s.xmin for s in segments)
        xhi = max(s.xmax for s in segments)
        vals = [s.value(v) for s in segments for v in (s.xmin, s.xmax)]
        ylo, yhi = min(vals), max(vals)
    else:
        xlo, xhi, ylo, yhi = 0, 1, -1, 1
    span = (yhi - ylo) or 1.0
    strip = 0.25 * span  # density strip below the lines
    ax = Axes((xlo, xhi), (ylo - strip, yhi))
    ax.frame(c, feature_name, "centred marginal effect")
    _title(c, f"Local linear profile: {feature_name}")
    base = ylo - strip
    for rank, s in enumerate(segments):
        col = color(rank)
        c.open_group(f"region {s.region_id} (count {s.count}, slope {s.slope:.4g})", id=f"region-{s.region_id}")
        c.line(ax.px(s.xmin), ax.py(s.value(s.xmin)), ax.px(s.xmax), ax.py(s.value(s.xmax)), stroke=col, width=2)
        c.polyline(ax.px(s.density_x), ax.py(base + 0.8 * strip * s.density), stroke=col, width=1, opacity=0.6)
        c.close_group()
    return c.render()


def bar_chart(names, values, title: str, ylabel: str = "") -> str:
    c = Canvas(title)
    values = [float(v) for v in values]
    finite = [v for v in values if math.isfinite(v)]
    hi = max(finite + [0.0])
    lo = min(finite + [0.0])
    ax = Axes((0, max(len(values), 1)), (lo, hi if hi > lo else lo + 1))
    ax.frame(c, "", ylabel, ticks=4)
    _title(c, title)
    for i, (name, v) in enumerate(zip(names, values)):
        c.open_group(f"{name}: {v:.6g}", id=f"bar-{i}")
        if math.isfinite(v):
            top, bot = ax.py(max(v, 0.0)), ax.py(min(v, 0.0))
            c.rect(ax.px(i + 0.15), top, ax.px(i + 0.85) - ax.px(i + 0.15), bot - top, color(i))
        c.text(ax.px(i + 0.5), ax.y1 + 30, name, size=10, anchor="middle")
        c.close_group()
    return c.render()


def importance_chart(table) -> str:
    rows = table.rows()
    return bar_chart([r[0] for r in rows], [r[1] for r in rows], "Joint importance", "JI")


def parallel_chart(pc) -> str:
    c = Canvas("Parallel coordinates of local linear models")
    k = len(pc.columns)
    vals = pc.values
    lo = float(vals.min()) if vals.size else -1.0
    hi = float(vals.max()) if vals.size else 1.0
    ax = Axes((0, max(k - 1, 1)), (lo, hi))
    ax.frame(c, "", "coefficient", ticks=4)
    _title(c, f"Parallel coordinates ({len(pc.region_ids)} regions)")
    c.open_group("feature axes")
    for j, name in enumerate(pc.columns):
        c.line(ax.px(j), ax.y0, ax.px(j), ax.y1, stroke="#999")
        c.text(ax.px(j), ax.y1 + 30, name, size=11, anchor="middle")
    c.close_group()
    top = float(pc.counts.max()) if pc.counts.size else 1.0
    for rank, (rid, cnt, row) in enumerate(zip(pc.region_ids, pc.counts, vals)):
        c.open_group(f"region {int(rid)} (count {int(cnt)})", id=f"region-{int(rid)}")
        c.polyline(ax.px(np.arange(k)), ax.py(row), stroke=color(rank), width=0.5 + 3.0 * cnt / top, opacity=0.7)
        c.close_group()
    return c.render()


def polar_chart(points) -> str:
    c = Canvas("Polar view of local linear models")
    rmax = max([p.radius for p in points] + [1.0])
    cx, cy, R = WIDTH / 2, HEIGHT / 2 + 10, 250
    _title(c, "LLM directions (angle) and region sizes (radius)")
    c.open_group("grid")
    for frac in (0.25, 0.5, 0.75, 1.0):
        c.parts.append(f'<circle cx="{_n(cx)}" cy="{_n(cy)}" r="{_n(R * frac)}" fill="none" stroke="#ccc"/>')
        c.text(cx + R * frac + 2, cy - 2, f"{rmax * frac:.3g}", size=9)
    c.close_group()
    for p in points:
        x = cx + R * p.radius / rmax * math.cos(p.angle)
        y = cy - R * p.radius / rmax * math.sin(p.angle)
        kind = "single" if p.single_flag else "mixed"
        c.open_group(f"region {p.region_id} ({kind}, radius {p.radius:.6g})", id=f"region-{p.region_id}")
        c.circle(x, y, 3.5, SINGLE_COLOR if p.single_flag else MULTI_COLOR)
        c.close_group()
    return c.render()


def extrapolation_chart(rows, perf_name: str) -> str:
    c = Canvas("Local versus global performance")
    vals = [v for r in rows for v in (r.local_perf, r.global_perf) if math.isfinite(v)]
    hi = max(vals + [1e-12])
    ax = Axes((0, max(len(rows), 1)), (0, hi))
    ax.frame(c, "region", perf_name, ticks=4)
    _title(c, f"Local (dark) and global (light) {perf_name} of the largest regions")
    for i, r in enumerate(rows):
        c.open_group(f"region {r.region_id}: {r.verdict}", id=f"region-{r.region_id}")
        for off, v, col in ((0.1, r.local_perf, "#1f77b4"), (0.5, r.global_perf, "#aec7e8")):
            if math.isfinite(v):
                c.rect(ax.px(i + off), ax.py(v), ax.px(i + off + 0.4) - ax.px(i + off), ax.y1 - ax.py(v), col)
        c.text(ax.px(i + 0.5), ax.y1 + 30, f"{r.region_id}:{r.verdict[:5]}", size=9, anchor="middle")
        c.close_group()
    return c.render()


def regionmap_chart(grid, max_cells: int = 200) -> str:
    """Activation-region map of a 2-D input grid.

    The grid is subsampled to at most ``max_cells`` per side and drawn as
    horizontal runs; the legend lists every pattern found at full resolution.
    """
    res_y, res_x = grid.cell_map.shape
    step = max(1, math.ceil(max(res_x, res_y) / max_cells))
    sub = grid.cell_map[::step, ::step]
    xs, ys = grid.xs[::step], grid.ys[::step]
    n = len(grid.patterns)
    c = Canvas("Activation regions")
    box = (MARGIN[0], MARGIN[0] + 480, MARGIN[2], MARGIN[2] + 480)
    dx = (xs[-1] - xs[0]) / max(len(xs) - 1, 1) if len(xs) > 1 else 1.0
    dy = (ys[-1] - ys[0]) / max(len(ys) - 1, 1) if len(ys) > 1 else 1.0
    ax = Axes((xs[0] - dx / 2, xs[-1] + dx / 2), (ys[0] - dy / 2, ys[-1] + dy / 2), box=box)
    _title(c, f"{n} activation regions")
    cw = (ax.x1 - ax.x0) / sub.shape[1]
    ch = (ax.y1 - ax.y0) / sub.shape[0]
    runs: list[list[tuple[int, int, int]]] = [[] for _ in range(n)]
    for iy in range(sub.shape[0]):
        row = sub[iy]
        cuts = np.flatnonzero(np.diff(row)) + 1
        starts = np.r_[0, cuts]
        ends = np.r_[cuts, row.size]
        for s, e in zip(starts, ends):
            runs[int(row[s])].append((iy, int(s), int(e)))
    for k, pat in enumerate(grid.patterns):
        c.open_group(f"region {k}: {pat}", id=f"region-{k}")
        for iy, s, e in runs[k]:
            # row iy holds y = ys[iy]; larger y is drawn higher
            c.rect(ax.x0 + s * cw, ax.y1 - (iy + 1) * ch, (e - s) * cw, ch, color(k))
        c.close_group()
    ax.frame(c, "x1", "x2", ticks=4)
    c.open_group("legend")
    lx = box[1] + 20
    rows_avail = (HEIGHT - 60) // 14
    for k, pat in enumerate(grid.patterns):
        col_off = (k // rows_avail) * 110
        y = 50 + (k % rows_avail) * 14
        c.rect(lx + col_off, y - 9, 10, 10, color(k))
        label = str(pat)
        c.text(lx + col_off + 14, y, label if len(label) <= 14 else label[:13] + "~", size=9)
    c.close_group()
    return c.render()
