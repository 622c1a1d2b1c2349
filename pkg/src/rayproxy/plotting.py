"""Spot diagrams: scatter of ray intersections with a plane, as SVG + CSV."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ._util import atomic_write_text
from .optics import OpticalSystem, TraceStatus, propagate_batch, trace_batch


def trace_spot_points(
    system: OpticalSystem,
    origins: np.ndarray,
    directions: np.ndarray,
    depth_z: float,
) -> np.ndarray:
    """Exact-trace a bundle and intersect the survivors with z = depth_z."""
    o, d, status, _ = trace_batch(origins, directions, system)
    ok = status == TraceStatus.EMERGED.value
    pts = propagate_batch(o[ok], d[ok], depth_z)
    return pts[~np.isnan(pts[:, 0])]


def spot_diagram(points: np.ndarray, svg_path, csv_path=None, title: str | None = None) -> None:
    """Write the spot scatter as a standalone SVG plus a CSV of raw points (mm)."""
    points = np.atleast_2d(points)
    if points.shape[0] < 1 or points.shape[1] != 2:
        raise ValueError("need at least one (x, y) point")
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(points[:, 0], points[:, 1], s=2, linewidths=0, alpha=0.6)
    ax.set_aspect("equal")
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)

    if csv_path is None:
        csv_path = str(svg_path).rsplit(".", 1)[0] + ".csv"
    lines = ["x_mm,y_mm"] + [f"{float(x)!r},{float(y)!r}" for x, y in points]
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
