"""Result files: CSV tables, simple SVG plots, raw SDRAM dumps and the run
manifest. Output bytes depend only on the results, so identical
(config, seed) runs give identical directories."""

from __future__ import annotations

import csv
import io
import json
import os
import shutil
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .acquisition import SdramImage, export_sdram

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def fmt(v) -> str:
    """Stable text form of a table cell."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


# -------------------------------------------------------------------- SVG

W, H, PAD = 480, 320, 48


def _scale(vals, lo_px, hi_px):
    v = np.asarray(vals, float)
    lo, hi = float(np.nanmin(v)), float(np.nanmax(v))
    if hi <= lo:
        hi = lo + 1.0
    return lo, hi, lambda x: lo_px + (np.asarray(x, float) - lo) / (hi - lo) * (hi_px - lo_px)


def _frame(title: str, xlabel: str, ylabel: str, xr, yr) -> list[str]:
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
            f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
            f'<rect x="{PAD}" y="{PAD // 2}" width="{W - 1.5 * PAD:g}" height="{H - 1.5 * PAD:g}" '
            'fill="none" stroke="black"/>',
            f'<text x="{W / 2:g}" y="16" text-anchor="middle" font-size="12">{title}</text>',
            f'<text x="{W / 2:g}" y="{H - 6}" text-anchor="middle" font-size="11">{xlabel} '
            f'[{xr[0]:.4g}, {xr[1]:.4g}]</text>',
            f'<text x="12" y="{H / 2:g}" font-size="11" transform="rotate(-90 12 {H / 2:g})" '
            f'text-anchor="middle">{ylabel} [{yr[0]:.4g}, {yr[1]:.4g}]</text>']


def svg_lines(title: str, x, series: dict, xlabel: str = "x", ylabel: str = "y") -> str:
    """Polyline plot of ``series = {label: y}`` against ``x``."""
    x = np.asarray(x, float)
    ys = [np.asarray(v, float) for v in series.values()]
    xlo, xhi, sx = _scale(x, PAD, W - PAD // 2)
    ylo, yhi, sy = _scale(np.concatenate(ys) if ys else [0, 1], H - PAD, PAD // 2)
    out = _frame(title, xlabel, ylabel, (xlo, xhi), (ylo, yhi))
    for k, (label, y) in enumerate(zip(series, ys)):
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx(x), sy(y)))
        c = PALETTE[k % len(PALETTE)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{W - PAD:g}" y="{PAD + 14 * k}" font-size="10" fill="{c}" '
                   f'text-anchor="end">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def svg_histogram(title: str, counts, edges, xlabel: str = "x") -> str:
    counts = np.asarray(counts, float)
    edges = np.asarray(edges, float)
    xlo, xhi, sx = _scale(edges, PAD, W - PAD // 2)
    top = max(float(counts.max()) if counts.size else 1.0, 1.0)
    out = _frame(title, xlabel, "counts", (xlo, xhi), (0.0, top))
    base = H - PAD
    span = H - 1.5 * PAD
    for c, a, b in zip(counts, sx(edges[:-1]), sx(edges[1:])):
        if c > 0:
            h = c / top * span
            out.append(f'<rect x="{a:.2f}" y="{base - h:.2f}" width="{max(b - a, 0.5):.2f}" '
                       f'height="{h:.2f}" fill="{PALETTE[0]}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def svg_map(title: str, x, y, z, xlabel: str = "x", ylabel: str = "y") -> str:
    """Grey-scale map of ``z[len(y), len(x)]``."""
    z = np.asarray(z, float)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    zlo, zhi = float(z.min()), float(z.max())
    zhi = zhi if zhi > zlo else zlo + 1
    out = _frame(title, xlabel, ylabel, (x.min(), x.max()), (y.min(), y.max()))
    cw = (W - 1.5 * PAD) / max(x.size, 1)
    ch = (H - 1.5 * PAD) / max(y.size, 1)
    for i in range(y.size):
        for j in range(x.size):
            g = int(round(255 * (1 - (z[i, j] - zlo) / (zhi - zlo))))
            out.append(f'<rect x="{PAD + j * cw:.2f}" y="{H - PAD - (i + 1) * ch:.2f}" width="{cw:.2f}" '
                       f'height="{ch:.2f}" fill="rgb({g},{g},{g})"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ----------------------------------------------------------------- writer

def timestamp() -> str:
    """Build time from ``SOURCE_DATE_EPOCH`` (0 when unset) so that outputs
    stay reproducible."""
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class ResultWriter:
    """Collects files under ``out_dir``; on failure the files written so far
    are removed."""

    def __init__(self, out_dir, command: str, seed: int, config_digest: str, options: dict | None = None):
        self.root = Path(out_dir)
        self.command = command
        self.seed = seed
        self.digest = config_digest
        self.options = options or {}
        self.files: list[Path] = []
        self.summary: dict = {}
        self._made_root = not self.root.exists()

    def _write(self, rel: str, text: str | bytes) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(text, bytes):
            path.write_bytes(text)
        else:
            path.write_text(text)
        self.files.append(path)
        return path

    def table(self, experiment: str, name: str, header, rows):
        return self._write(f"{experiment}/{name}.csv", csv_text(header, rows))

    def svg(self, experiment: str, name: str, text: str):
        return self._write(f"{experiment}/{name}.svg", text)

    def sdram(self, image: SdramImage):
        if image.regions:
            self.files.extend(export_sdram(image, self.root))

    def json(self, rel: str, obj):
        return self._write(rel, json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")

    def manifest(self) -> Path:
        files = sorted(str(p.relative_to(self.root)) for p in self.files)
        doc = {"artifact_version": __version__, "command": self.command, "seed": self.seed,
               "config_digest": self.digest, "options": self.options, "created": timestamp(),
               "files": files, "summary": self.summary}
        return self.json("manifest.json", doc)

    def discard(self):
        for p in self.files:
            if p.exists():
                p.unlink()
        if self._made_root and self.root.exists():
            shutil.rmtree(self.root, ignore_errors=True)
        else:
            for d in sorted({p.parent for p in self.files}, key=lambda q: -len(q.parts)):
                if d != self.root and d.exists() and not any(d.iterdir()):
                    d.rmdir()


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(format(float(obj), ".12g"))
    return obj
