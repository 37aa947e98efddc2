"""Result containers and deterministic CSV / JSON / SVG output."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

FORMATS = ("csv", "json", "svg")


@dataclass
class PlotSpec:
    title: str
    xlabel: str
    ylabel: str
    series: dict  # name -> list of (x, y)
    logx: bool = False
    logy: bool = False


@dataclass
class ExperimentResult:
    name: str
    columns: list
    rows: list
    summary: dict
    checks: dict
    plot: PlotSpec | None = None
    artifacts: dict = field(default_factory=dict)  # file name -> text

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _plain(x):
    """JSON/CSV-friendly scalars; floats keep their shortest round-trip repr."""
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def to_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result.columns)
    for row in result.rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in _plain(row)])
    return buf.getvalue()


def read_csv(text: str) -> tuple[list[str], list[list[str]]]:
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]


def to_json(result: ExperimentResult) -> str:
    data = {
        "experiment": result.name,
        "passed": result.passed,
        "checks": result.checks,
        "summary": result.summary,
    }
    return json.dumps(_plain(data), sort_keys=True, indent=2, allow_nan=True) + "\n"


# -- SVG -------------------------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def to_svg(plot: PlotSpec, width: int = 480, height: int = 320) -> str:
    """Static line plot; identical input gives identical bytes."""
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom

    def tx(v, log):
        return math.log10(v) if log else v

    pts = [(tx(x, plot.logx), tx(y, plot.logy)) for s in plot.series.values() for x, y in s]
    if pts:
        xs, ys = zip(*pts)
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(x):
        return left + (tx(x, plot.logx) - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (tx(y, plot.logy) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="14">{escape(plot.title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for t in range(5):
        fx = x0 + (x1 - x0) * t / 4
        fy = y0 + (y1 - y0) * t / 4
        lx = 10**fx if plot.logx else fx
        ly = 10**fy if plot.logy else fy
        X = left + pw * t / 4
        Y = top + ph - ph * t / 4
        out.append(f'<text x="{X:.2f}" y="{top + ph + 16}" text-anchor="middle" font-size="10">{_fmt(lx)}</text>')
        out.append(f'<text x="{left - 4}" y="{Y + 3:.2f}" text-anchor="end" font-size="10">{_fmt(ly)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle" font-size="12">{escape(plot.xlabel)}</text>')
    out.append(
        f'<text x="14" y="{top + ph / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {top + ph / 2})">{escape(plot.ylabel)}</text>'
    )
    for i, (name, series) in enumerate(plot.series.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in series)
        if coords:
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in series:
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.5" fill="{color}"/>')
        out.append(f'<text x="{left + pw - 4}" y="{top + 14 + 14 * i}" text-anchor="end" font-size="11" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(result: ExperimentResult, out_dir: str | Path, formats=("csv",)) -> list[Path]:
    """Write ``<name>.csv`` always, plus JSON summary and SVG plot when requested."""
    formats = set(formats) | {"csv"}
    bad = formats - set(FORMATS)
    if bad:
        raise ValueError(f"unknown formats {sorted(bad)}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    stem = result.name.replace("-", "_")
    written = []

    def write(name, text):
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)

    write(f"{stem}.csv", to_csv(result))
    if "json" in formats:
        write(f"{stem}.json", to_json(result))
    if "svg" in formats and result.plot is not None:
        write(f"{stem}.svg", to_svg(result.plot))
    for name, text in sorted(result.artifacts.items()):
        write(name, text)
    return written
