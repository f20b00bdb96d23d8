"""Report rendering: SVG overlays, matplotlib figures, metric tables.

SVG coordinates match pixel coordinates 1:1 (y down), so paths overlay the
embedded density raster without any transform. Matplotlib figures mirror the
same content for quick visual inspection alongside the delimited outputs.
"""
from __future__ import annotations

import base64
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

from .geometry import Polygon  # noqa: E402
from .metrics import MetricsReport  # noqa: E402

PALETTE = [
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
    "#46f0f0", "#f032e6", "#bcf60c", "#fabebe", "#008080",
    "#9a6324", "#800000", "#aaffc3", "#808000", "#000075",
]


def _density_png_b64(grid: np.ndarray) -> str:
    img = Image.fromarray((np.clip(grid, 0, 1) * 255).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _path_d(poly: Polygon) -> str:
    pts = poly.vertices
    head = f"M {pts[0][0]:.3f},{pts[0][1]:.3f}"
    rest = " ".join(f"L {x:.3f},{y:.3f}" for x, y in pts[1:])
    return f"{head} {rest} Z"


def svg_overlay(
    rooms: list[Polygon],
    density: np.ndarray | None = None,
    gt_rooms: list[Polygon] | None = None,
    size: tuple[int, int] = (256, 256),
) -> str:
    """SVG document: optional density underlay, filled room paths, dashed GT."""
    h, w = density.shape if density is not None else size
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">'
    ]
    if density is not None:
        parts.append(
            f'<image x="0" y="0" width="{w}" height="{h}" '
            f'href="data:image/png;base64,{_density_png_b64(density)}"/>'
        )
    else:
        parts.append(f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>')
    for i, room in enumerate(rooms):
        color = PALETTE[i % len(PALETTE)]
        parts.append(
            f'<path d="{_path_d(room)}" fill="{color}" fill-opacity="0.45" '
            f'stroke="{color}" stroke-width="1.2"/>'
        )
    if gt_rooms:
        for room in gt_rooms:
            parts.append(
                f'<path d="{_path_d(room)}" fill="none" stroke="#222222" '
                f'stroke-width="0.8" stroke-dasharray="4,3"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts)


def save_solution_figure(
    path: Path,
    density: np.ndarray,
    rooms: list[Polygon],
    gt_rooms: list[Polygon] | None = None,
    score_trace: list[float] | None = None,
    title: str = "",
) -> None:
    ncols = 2 if score_trace else 1
    fig, axes = plt.subplots(1, ncols, figsize=(5.4 * ncols, 5.4))
    ax = axes[0] if ncols == 2 else axes
    ax.imshow(density, cmap="gray_r", origin="upper", interpolation="nearest")
    for i, room in enumerate(rooms):
        pts = np.vstack([room.vertices, room.vertices[:1]])
        color = PALETTE[i % len(PALETTE)]
        ax.fill(pts[:, 0], pts[:, 1], color=color, alpha=0.4)
        ax.plot(pts[:, 0], pts[:, 1], color=color, lw=1.2)
    if gt_rooms:
        for room in gt_rooms:
            pts = np.vstack([room.vertices, room.vertices[:1]])
            ax.plot(pts[:, 0], pts[:, 1], "k--", lw=0.8)
    ax.set_title(title or f"{len(rooms)} rooms")
    ax.set_xlim(0, density.shape[1])
    ax.set_ylim(density.shape[0], 0)
    if score_trace:
        ax2 = axes[1]
        ax2.plot(score_trace, lw=1.0)
        ax2.set_xlabel("iteration")
        ax2.set_ylabel("best score")
        ax2.set_title("search progress")
        ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


_COLUMNS = [
    ("room", "Room"),
    ("corner", "Corner"),
    ("angle", "Angle"),
    ("ma", "MA"),
]


def metrics_rows(reports: dict[str, MetricsReport]) -> list[dict]:
    rows = []
    for name, rep in reports.items():
        d = rep.as_dict()
        row = {"scene": name}
        for key, _ in _COLUMNS:
            row[f"{key}_precision"] = d[key]["precision"]
            row[f"{key}_recall"] = d[key]["recall"]
        rows.append(row)
    return rows


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    if not reports:
        raise ValueError("no reports to aggregate")
    fields = [
        "room_precision", "room_recall", "corner_precision", "corner_recall",
        "angle_precision", "angle_recall", "ma_precision", "ma_recall",
    ]
    return MetricsReport(**{f: float(np.mean([getattr(r, f) for r in reports])) for f in fields})


def metrics_table(reports: dict[str, MetricsReport]) -> str:
    """Aligned plain-text table in Room / Corner / Angle / MA column order."""
    name_w = max([len(n) for n in reports] + [len("scene")])
    header1 = " " * name_w + "  " + "  ".join(f"{label:^12}" for _, label in _COLUMNS)
    header2 = f"{'scene':<{name_w}}  " + "  ".join(f"{'Prec':>5} {'Rec':>6}" for _ in _COLUMNS)
    lines = [header1, header2]
    for name, rep in reports.items():
        d = rep.as_dict()
        cells = "  ".join(
            f"{d[key]['precision']:>5.2f} {d[key]['recall']:>6.2f}" for key, _ in _COLUMNS
        )
        lines.append(f"{name:<{name_w}}  {cells}")
    return "\n".join(lines) + "\n"


def metrics_csv(reports: dict[str, MetricsReport]) -> str:
    cols = ["scene"] + [f"{k}_{m}" for k, _ in _COLUMNS for m in ("precision", "recall")]
    lines = [",".join(cols)]
    for row in metrics_rows(reports):
        lines.append(",".join(str(row[c]) if c == "scene" else f"{row[c]:.6f}" for c in cols))
    return "\n".join(lines) + "\n"


def save_metrics_figure(path: Path, reports: dict[str, MetricsReport]) -> None:
    """Grouped precision/recall bars, one group per metric, averaged."""
    mean = mean_report(list(reports.values()))
    d = mean.as_dict()
    labels = [label for _, label in _COLUMNS]
    prec = [d[key]["precision"] for key, _ in _COLUMNS]
    rec = [d[key]["recall"] for key, _ in _COLUMNS]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.18, prec, width=0.36, label="precision", color="#4363d8")
    ax.bar(x + 0.18, rec, width=0.36, label="recall", color="#f58231")
    ax.set_xticks(x, labels)
    ax.set_ylim(0, 1.05)
    ax.legend()
    ax.set_title(f"metrics over {len(reports)} scene(s)")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
