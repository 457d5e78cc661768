"""CSV and SVG output for saddle reports and simulation summaries."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .saddle import SaddleReport


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{v:.10g}"


def write_csv(path: Path, rows, header=None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    if header:
        w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def csv_text(rows, header=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    if header:
        w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def matrix_rows(report: SaddleReport):
    rows = []
    for i, lab in enumerate(report.labels):
        cells = [f"{_fmt(report.payoff[i, j])}±{_fmt(report.stderr[i, j])}"
                 for j in range(len(report.labels))]
        rows.append([lab] + cells)
    return rows


def summary_rows(report: SaddleReport):
    rows = [[lab, _fmt(r), _fmt(l)] for lab, r, l in zip(report.labels, report.R, report.lambdas)]
    rows.append(["R_min", _fmt(report.R_min), report.labels[report.maximin_row]])
    rows.append(["sup_inf", _fmt(report.sup_inf), ""])
    rows.append(["inf_sup", _fmt(report.inf_sup), ""])
    rows.append(["gap", _fmt(report.gap), _fmt(report.gap_stderr)])
    rows.append(["mixed_value_lp", _fmt(report.lp_value), ""])
    rows.append(["worst_mixture", " ".join(_fmt(w) for w in report.worst_mixture), ""])
    for k in sorted(report.checks):
        rows.append([f"check_{k}", "pass" if report.checks[k] else "fail", ""])
    for lab, why in report.excluded:
        rows.append(["excluded", lab, why])
    rows.append(["note", report.footer, ""])
    return rows


def diagonal_svg(R, values, errors, title="diagonal value vs R", width=480, height=320) -> str:
    """Tiny standalone line chart with +-1 stderr whiskers."""
    R = np.asarray(R, dtype=float)
    v = np.asarray(values, dtype=float)
    e = np.asarray(errors, dtype=float)
    order = np.argsort(R, kind="stable")
    R, v, e = R[order], v[order], e[order]
    pad = 48
    x0, x1 = float(R.min()), float(R.max())
    y0, y1 = float(np.min(v - e)), float(np.max(v + e))
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(R, v))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12">R</text>',
        f'<text x="{pad - 4}" y="{pad - 6}" font-size="10">{_fmt(y1)}</text>',
        f'<text x="{pad - 4}" y="{height - pad + 14}" font-size="10">{_fmt(y0)}</text>',
        f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{pts}"/>',
    ]
    for a, b, s in zip(R, v, e):
        parts.append(f'<line x1="{px(a):.2f}" y1="{py(b - s):.2f}" x2="{px(a):.2f}" '
                     f'y2="{py(b + s):.2f}" stroke="gray"/>')
        parts.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="steelblue"/>')
        parts.append(f'<text x="{px(a):.2f}" y="{height - pad + 14}" text-anchor="middle" '
                     f'font-size="10">{_fmt(a)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(report: SaddleReport, out_dir) -> list:
    """Write ``payoff_matrix.csv``, ``summary.csv`` and ``diagonal.svg``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "payoff_matrix.csv", out / "summary.csv", out / "diagonal.svg"]
    write_csv(files[0], matrix_rows(report), header=["strategy\\truth"] + list(report.labels))
    write_csv(files[1], summary_rows(report), header=["key", "value", "extra"])
    svg = diagonal_svg(report.R, np.diag(report.payoff), np.diag(report.stderr))
    svg = svg.replace("</svg>", f'<desc>{escape(report.footer)}</desc>\n</svg>')
    files[2].write_text(svg, encoding="utf-8", newline="")
    return files
