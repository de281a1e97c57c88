"""CSV tables, static SVG charts and a run manifest.

Everything is rendered in memory first and only then written, so a failed run
leaves no partial output. Numbers are printed with a fixed format and nothing
time-dependent goes into CSV or SVG, which keeps output bytes reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from html import escape
from pathlib import Path

import numpy as np

FLOAT_FMT = "{:.10g}"
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    return str(v)


def csv_text(rows, columns=None) -> str:
    if not rows:
        raise ValueError("table has no rows")
    columns = list(columns or rows[0].keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def matrix_csv(A, row_labels=None, col_labels=None) -> str:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    cols = list(col_labels) if col_labels is not None else [str(j) for j in range(A.shape[1])]
    rows = list(row_labels) if row_labels is not None else [str(i) for i in range(A.shape[0])]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + cols)
    for lab, row in zip(rows, A):
        w.writerow([lab] + [_fmt(x) for x in row])
    return buf.getvalue()


# ---------------------------------------------------------------- SVG

def _ticks(lo, hi, n=5):
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.floor(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


class _Canvas:
    W, H = 640, 400
    left, right, top, bottom = 70, 20, 40, 60

    def __init__(self, title):
        self.parts = []
        self.title = title

    def text(self, x, y, s, anchor="middle", size=12, rotate=None):
        tr = f' transform="rotate({rotate} {x:.1f} {y:.1f})"' if rotate is not None else ""
        self.parts.append(f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" text-anchor="{anchor}"{tr}>{escape(str(s))}</text>')

    def render(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.W}" height="{self.H}" '
                f'viewBox="0 0 {self.W} {self.H}" font-family="sans-serif">')
        body = [f'<rect width="{self.W}" height="{self.H}" fill="white"/>']
        self.text(self.W / 2, 22, self.title, size=15)
        return "\n".join([head] + body + self.parts + ["</svg>"]) + "\n"

    def axes(self, xlo, xhi, ylo, yhi, xlabel, ylabel, xticks=None):
        pw = self.W - self.left - self.right
        ph = self.H - self.top - self.bottom
        yt = _ticks(ylo, yhi)
        ylo, yhi = min(yt[0], ylo), max(yt[-1], yhi)
        sx = lambda x: self.left + (x - xlo) / (xhi - xlo or 1.0) * pw
        sy = lambda y: self.top + ph - (y - ylo) / (yhi - ylo or 1.0) * ph
        p = self.parts
        p.append(f'<line x1="{self.left}" y1="{self.top + ph}" x2="{self.left + pw}" y2="{self.top + ph}" stroke="black"/>')
        p.append(f'<line x1="{self.left}" y1="{self.top}" x2="{self.left}" y2="{self.top + ph}" stroke="black"/>')
        for v in yt:
            y = sy(v)
            p.append(f'<line x1="{self.left - 4}" y1="{y:.1f}" x2="{self.left + pw}" y2="{y:.1f}" stroke="#ddd"/>')
            self.text(self.left - 8, y + 4, _fmt(v), anchor="end", size=10)
        for v, lab in (xticks if xticks is not None else [(v, _fmt(v)) for v in _ticks(xlo, xhi)]):
            if xlo - 1e-9 <= v <= xhi + 1e-9:
                self.text(sx(v), self.top + ph + 16, lab, size=10)
        self.text(self.left + pw / 2, self.H - 12, xlabel)
        self.text(16, self.top + ph / 2, ylabel, rotate=-90)
        return sx, sy

    def legend(self, names):
        for k, name in enumerate(names):
            x = self.left + 10 + 150 * k
            self.parts.append(f'<rect x="{x}" y="{self.top - 14}" width="12" height="8" fill="{PALETTE[k % len(PALETTE)]}"/>')
            self.text(x + 16, self.top - 6, name, anchor="start", size=10)


def line_chart(title, x, series: dict, xlabel, ylabel) -> str:
    """Lines with markers; ``series`` maps a legend name to y values."""
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    allv = np.concatenate([v[np.isfinite(v)] for v in ys.values()] or [np.zeros(1)])
    c = _Canvas(title)
    lo, hi = (float(allv.min()), float(allv.max())) if allv.size else (0.0, 1.0)
    pad = 0.05 * (hi - lo or abs(hi) or 1.0)
    sx, sy = c.axes(float(x.min()), float(x.max()), lo - pad, hi + pad, xlabel, ylabel)
    for k, (name, y) in enumerate(ys.items()):
        col = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x, y) if np.isfinite(b))
        c.parts.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="2"/>')
        for a, b in zip(x, y):
            if np.isfinite(b):
                c.parts.append(f'<circle cx="{sx(a):.1f}" cy="{sy(b):.1f}" r="3" fill="{col}"/>')
    if len(ys) > 1:
        c.legend(list(ys))
    return c.render()


def bar_chart(title, labels, series: dict, ylabel, xlabel="") -> str:
    """Grouped bars, one group per label; negative values hang below zero."""
    ys = {k: np.nan_to_num(np.asarray(v, dtype=float)) for k, v in series.items()}
    allv = np.concatenate(list(ys.values()) + [np.zeros(1)])
    c = _Canvas(title)
    c.bottom = 110
    n = len(labels)
    sx, sy = c.axes(0.0, float(n), float(min(allv.min(), 0.0)), float(max(allv.max(), 0.0)) * 1.05 or 1.0,
                    xlabel, ylabel, xticks=[])
    g = len(ys)
    width = 0.8 / g
    for k, (name, y) in enumerate(ys.items()):
        col = PALETTE[k % len(PALETTE)]
        for i, v in enumerate(y):
            x0 = sx(i + 0.1 + k * width)
            x1 = sx(i + 0.1 + (k + 1) * width)
            y0, y1 = sorted((sy(0.0), sy(v)))
            c.parts.append(f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{x1 - x0:.1f}" height="{y1 - y0:.1f}" fill="{col}"/>')
    for i, lab in enumerate(labels):
        x = sx(i + 0.5)
        y = c.H - c.bottom + 14
        c.text(x, y, lab, anchor="end", size=10, rotate=-40)
    if g > 1:
        c.legend(list(ys))
    return c.render()


# ---------------------------------------------------------------- bundles

def sweep_outputs(res, zone_names, compare_level: float | None = None) -> dict:
    """Tables and charts for a demand-level sweep (see ``experiments.sweep``)."""
    rows = res.rows
    lv = [r["level"] for r in rows]
    files = {
        "sweep.csv": csv_text(rows),
        "sweep_trends.csv": csv_text([{"check": k, "holds": v} for k, v in res.flags.items()]),
        "profit_vs_level.svg": line_chart("Platform profit", lv, {"profit": [r["profit"] for r in rows]},
                                          "parcel-to-ride demand level", "$/min"),
        "drivers_vs_level.svg": line_chart("Drivers", lv, {"drivers": [r["drivers"] for r in rows]},
                                           "parcel-to-ride demand level", "drivers"),
        "rates_vs_level.svg": line_chart(
            "Served demand", lv,
            {"passengers": [r["passengers"] for r in rows],
             "flexible parcels": [r["flexible_parcels"] for r in rows],
             "on-demand parcels": [r["ondemand_parcels"] for r in rows]},
            "parcel-to-ride demand level", "orders/min"),
    }
    if res.zonal:
        k = len(lv) - 1 if compare_level is None else int(np.argmin(np.abs(np.asarray(lv) - compare_level)))
        base, z = res.zonal[0], res.zonal[k]
        # re-rendered reports pass the stored change so rounding in the CSV cannot alter it
        change = z.get("idle_driver_change", z["idle_drivers"] - base["idle_drivers"])
        zrows = [
            {"zone": n, "idle_drivers_base": base["idle_drivers"][i], "idle_drivers": z["idle_drivers"][i],
             "idle_driver_change": change[i], "flexible_in": z["flexible_in"][i], "ondemand_in": z["ondemand_in"][i]}
            for i, n in enumerate(zone_names)
        ]
        files["zones.csv"] = csv_text(zrows)
        files["idle_driver_change.svg"] = bar_chart(
            f"Idle drivers: level {_fmt(lv[k])} minus level {_fmt(lv[0])}", zone_names, {"change": change}, "drivers")
        files["demand_split.svg"] = bar_chart(
            f"Parcel attraction by zone at level {_fmt(lv[k])}", zone_names,
            {"flexible": z["flexible_in"], "on-demand": z["ondemand_in"]}, "orders/min")
    return files


def benchmark_outputs(rows) -> dict:
    names = [r["structure"] for r in rows]
    return {
        "benchmarks.csv": csv_text(rows, _union_columns(rows)),
        "benchmark_profit.svg": bar_chart("Profit by market structure", names,
                                          {"profit": [r["profit"] for r in rows]}, "$/min"),
        "benchmark_customers.svg": bar_chart(
            "Customers served by market structure", names,
            {"passengers": [r["passengers"] for r in rows],
             "parcels": [r["flexible_parcels"] + r["ondemand_parcels"] for r in rows]}, "orders/min"),
    }


def _union_columns(rows):
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    return cols


def config_hash(*objs) -> str:
    blob = json.dumps(objs, sort_keys=True, default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        return {k: getattr(o, k) for k in o.__dataclass_fields__}
    return str(o)


def emit_reports(files: dict, outdir, manifest: dict | None = None) -> list:
    """Write rendered ``files`` (name -> text) plus ``manifest.json`` into ``outdir``.

    Raises ``ValueError`` before touching the directory when there is nothing to write.
    """
    if not files:
        raise ValueError("no results to report")
    out = Path(outdir)
    man = dict(manifest or {})
    man["files"] = {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())}
    rendered = dict(files)
    rendered["manifest.json"] = json.dumps(man, indent=1, sort_keys=True, default=_jsonable) + "\n"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in sorted(rendered.items()):
        path = out / name
        path.write_text(text)
        written.append(path)
    return written
