"""Experiment reports and their CSV / JSON / SVG renderings."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

FORMATS = ("csv", "json", "svg")


@dataclass
class Report:
    experiment: str
    columns: list
    rows: list = field(default_factory=list)
    # condition name -> K x K (or K x K+1 with an "undetected" column) counts
    confusions: dict = field(default_factory=dict)
    # named real-valued matrices, e.g. the position-study accuracy grid
    matrices: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(**d)

    def accuracies(self) -> list[float]:
        return [row["accuracy"] for row in self.rows if "accuracy" in row]

    def select(self, **where) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in where.items())]

    def accuracy(self, **where) -> float:
        rows = self.select(**where)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {where}")
        return rows[0]["accuracy"]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(report.columns)
    for row in report.rows:
        writer.writerow([_fmt(row.get(c, "")) for c in report.columns])
    return buf.getvalue()


def to_json(report: Report) -> str:
    return json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n"


# --- SVG --------------------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
W, H, MARGIN = 640, 400, 60


def line_chart(series: dict, xlabel: str, ylabel: str, title: str) -> str:
    """series: name -> list of (x, y). y is assumed to lie in [0, 1]."""
    xs = [x for pts in series.values() for x, _ in pts]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    pw, ph = W - 2 * MARGIN, H - 2 * MARGIN

    def px(x):
        return MARGIN + (x - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN + (1.0 - y) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<text x="{W / 2:.1f}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
    ]
    for t in np.linspace(0, 1, 6):
        parts.append(
            f'<text x="{MARGIN - 6}" y="{py(t) + 4:.1f}" text-anchor="end" font-size="11">{t:.1f}</text>'
        )
    for x in sorted(set(xs)):
        parts.append(
            f'<text x="{px(x):.1f}" y="{H - MARGIN + 16}" text-anchor="middle" font-size="11">{_fmt(x)}</text>'
        )
    parts.append(
        f'<text x="{W / 2:.1f}" y="{H - 14}" text-anchor="middle" font-size="13">{escape(xlabel)}</text>'
    )
    parts.append(
        f'<text x="16" y="{H / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {H / 2:.1f})">{escape(ylabel)}</text>'
    )
    for i, (name, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = sorted(pts)
        path = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = MARGIN + 14 + 16 * i
        parts.append(f'<rect x="{W - MARGIN - 150}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{W - MARGIN - 135}" y="{ly}" font-size="11">{escape(str(name))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def heatmap(matrix, title: str, row_label: str = "true", col_label: str = "predicted") -> str:
    m = np.asarray(matrix, dtype=float)
    rows, cols = m.shape
    cell = max(12, min(40, 480 // max(rows, cols)))
    width, height = 2 * MARGIN + cols * cell, 2 * MARGIN + rows * cell
    # rows are normalised so that confusion counts and accuracies share a scale
    norm = m / np.maximum(m.max(axis=1, keepdims=True), 1e-12)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for i in range(rows):
        for j in range(cols):
            shade = int(round(255 * (1.0 - norm[i, j])))
            parts.append(
                f'<rect x="{MARGIN + j * cell}" y="{MARGIN + i * cell}" width="{cell}" height="{cell}" '
                f'fill="rgb({shade},{shade},255)"><title>{_fmt(m[i, j].item())}</title></rect>'
            )
    parts.append(
        f'<text x="{width / 2:.1f}" y="{height - 14}" text-anchor="middle" font-size="12">{escape(col_label)}</text>'
    )
    parts.append(
        f'<text x="16" y="{height / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {height / 2:.1f})">{escape(row_label)}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _series(report: Report, x: str, keys: list[str]) -> dict:
    series: dict = {}
    for row in report.rows:
        if x not in row or "accuracy" not in row:
            continue
        name = " ".join(f"{row[k]}" for k in keys if k in row)
        series.setdefault(name, []).append((row[x], row["accuracy"]))
    return series


def svg_documents(report: Report) -> dict[str, str]:
    """File stem -> SVG text."""
    docs = {}
    group_keys = [c for c in report.columns if c not in ("snr_db", "n_pkt", "accuracy", "n", "correct")]
    if any("snr_db" in r for r in report.rows):
        keys = [k for k in group_keys if k != "n_pkt"]
        if "n_pkt" in report.columns:
            keys.append("n_pkt")
        s = _series(report, "snr_db", keys)
        if s:
            docs["accuracy_vs_snr"] = line_chart(s, "SNR (dB)", "accuracy", f"{report.experiment}: accuracy vs SNR")
    if "n_pkt" in report.columns:
        keys = [k for k in group_keys] + ["snr_db"]
        s = _series(report, "n_pkt", keys)
        if s:
            docs["accuracy_vs_npkt"] = line_chart(
                s, "packets fused", "accuracy", f"{report.experiment}: accuracy vs packets"
            )
    for name, m in sorted(report.confusions.items()):
        docs[f"confusion_{_slug(name)}"] = heatmap(m, f"confusion {name}")
    for name, m in sorted(report.matrices.items()):
        docs[f"matrix_{_slug(name)}"] = heatmap(m, name, "model", "position")
    return docs


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def emit_report(report: Report, out_dir, formats=FORMATS) -> list[Path]:
    """Write the requested renderings; output bytes depend only on ``report``."""
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = _slug(report.experiment)
    written = []
    if "csv" in formats:
        p = out / f"{stem}.csv"
        p.write_text(to_csv(report))
        written.append(p)
    if "json" in formats:
        p = out / f"{stem}.json"
        p.write_text(to_json(report))
        written.append(p)
    if "svg" in formats:
        for name, text in svg_documents(report).items():
            p = out / f"{stem}_{name}.svg"
            p.write_text(text)
            written.append(p)
    return written


def load_report(path) -> Report:
    return Report.from_dict(json.loads(Path(path).read_text()))
