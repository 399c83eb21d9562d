"""Per-head T x N attention heatmaps as numeric CSV grids or SVG."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .inference import AttentionRecord
from .util import atomic_write_text

CELL = 22
GAP = 30


def grid_csv(rec: AttentionRecord) -> str:
    H, T, N = rec.weights.shape
    lines = ["head,step," + ",".join(f"ctx{i}" for i in range(N))]
    for h in range(H):
        for t in range(T):
            lines.append(f"{h},{t}," + ",".join(repr(float(x)) for x in rec.weights[h, t]))
    return "\n".join(lines) + "\n"


def gray_levels(weights: np.ndarray) -> np.ndarray:
    """0..255 luminance proportional to weight, the global maximum at white."""
    top = weights.max()
    if top <= 0:
        return np.zeros(weights.shape, dtype=int)
    return np.rint(255.0 * weights / top).astype(int)


def svg(rec: AttentionRecord, labels: list[str] | None = None) -> str:
    H, T, N = rec.weights.shape
    lum = gray_levels(rec.weights)
    panel_w = N * CELL
    width = H * panel_w + (H + 1) * GAP
    height = T * CELL + 2 * GAP
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="#3c3c3c"/>']
    for h in range(H):
        x0 = GAP + h * (panel_w + GAP)
        title = labels[h] if labels else f"head {h + 1}"
        parts.append(f'<text x="{x0}" y="{GAP - 8}" font-size="12" fill="#ffffff">{title}</text>')
        for t in range(T):
            for i in range(N):
                g = lum[h, t, i]
                parts.append(
                    f'<rect class="cell" data-head="{h}" data-step="{t}" data-ctx="{i}" '
                    f'x="{x0 + i * CELL}" y="{GAP + t * CELL}" width="{CELL}" height="{CELL}" '
                    f'fill="#{g:02x}{g:02x}{g:02x}"><title>{rec.weights[h, t, i]:.4f}</title></rect>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def export_heatmap(attention_csv, out_path, format: str = "svg") -> Path:
    """Render an attention CSV file; malformed rows raise with their row number."""
    rec = AttentionRecord.from_csv(attention_csv)
    if format == "csv-grid":
        text = grid_csv(rec)
    elif format == "svg":
        text = svg(rec)
    else:
        raise ValueError(f"unknown heatmap format {format!r} (csv-grid or svg)")
    atomic_write_text(out_path, text)
    return Path(out_path)
