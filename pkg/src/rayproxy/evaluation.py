"""Error metrics between predicted and exact output rays, plus depth queries.

Positional error is the Euclidean distance between target-plane positions in
micrometers; angular error is the angle between the reconstructed 3D unit
directions in degrees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import RayDataset
from .optics import MIN_FORWARD_DZ, OpticalSystem, TraceStatus, propagate_batch, trace_batch

EVAL_CSV_HEADER = (
    "condition,n_rays,pos_mean_um,pos_median_um,pos_p95_um,"
    "ang_mean_deg,ang_median_deg,ang_p95_deg"
)


def reconstruct_directions(d2: np.ndarray, clamp: bool = False) -> np.ndarray:
    """Lift transverse direction components (dx, dy) to forward unit 3-vectors
    via dz = sqrt(1 - dx^2 - dy^2).

    Ground-truth records must be reconstructible (dx^2 + dy^2 < 1); model
    outputs may use ``clamp=True``, which flattens an out-of-disk prediction
    onto the horizon (dz = 0) and renormalizes.
    """
    d2 = np.atleast_2d(d2)
    r2 = d2[:, 0] ** 2 + d2[:, 1] ** 2
    if not clamp:
        bad = np.flatnonzero(r2 >= 1.0)
        if bad.size:
            raise ValueError(f"record {bad[0]}: direction not reconstructible (dx^2+dy^2 = {r2[bad[0]]})")
    dz = np.sqrt(np.clip(1.0 - r2, 0.0, None))
    d3 = np.column_stack([d2[:, 0], d2[:, 1], dz])
    if clamp:
        over = r2 > 1.0
        if over.any():
            d3[over] /= np.linalg.norm(d3[over], axis=1, keepdims=True)
    return d3


def ray_errors(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-ray (positional_um, angular_deg) between two (N, 4) ray blocks."""
    pred = np.atleast_2d(pred)
    gt = np.atleast_2d(gt)
    if pred.shape != gt.shape or pred.shape[1] != 4:
        raise ValueError(f"expected matching (N, 4) blocks, got {pred.shape} vs {gt.shape}")
    pos_um = np.linalg.norm(pred[:, :2] - gt[:, :2], axis=1) * 1000.0
    dp = reconstruct_directions(pred[:, 2:4], clamp=True)
    dg = reconstruct_directions(gt[:, 2:4])
    # 2 atan2(|a-b|, |a+b|) == arccos(a.b) for unit vectors, but stays exact
    # at zero separation where arccos loses half the mantissa
    diff = np.linalg.norm(dp - dg, axis=1)
    summ = np.linalg.norm(dp + dg, axis=1)
    ang_deg = np.degrees(2.0 * np.arctan2(diff, summ))
    return pos_um, ang_deg


@dataclass(frozen=True)
class EvalReport:
    condition: str
    n_rays: int
    pos_mean_um: float
    pos_median_um: float
    pos_p95_um: float
    ang_mean_deg: float
    ang_median_deg: float
    ang_p95_deg: float

    @classmethod
    def from_errors(cls, condition: str, pos_um: np.ndarray, ang_deg: np.ndarray) -> "EvalReport":
        if len(pos_um) == 0:
            raise ValueError("cannot build a report from zero rays")
        return cls(
            condition=condition,
            n_rays=len(pos_um),
            pos_mean_um=float(np.mean(pos_um)),
            pos_median_um=float(np.median(pos_um)),
            pos_p95_um=float(np.percentile(pos_um, 95)),
            ang_mean_deg=float(np.mean(ang_deg)),
            ang_median_deg=float(np.median(ang_deg)),
            ang_p95_deg=float(np.percentile(ang_deg, 95)),
        )

    def csv_row(self) -> str:
        return (
            f"{self.condition},{self.n_rays},{self.pos_mean_um!r},{self.pos_median_um!r},"
            f"{self.pos_p95_um!r},{self.ang_mean_deg!r},{self.ang_median_deg!r},{self.ang_p95_deg!r}"
        )

    def __str__(self) -> str:
        return (
            f"{self.condition}: n={self.n_rays} "
            f"pos(um) mean={self.pos_mean_um:.3g} median={self.pos_median_um:.3g} p95={self.pos_p95_um:.3g} | "
            f"ang(deg) mean={self.ang_mean_deg:.3g} median={self.ang_median_deg:.3g} p95={self.ang_p95_deg:.3g}"
        )


def evaluate(predict_fn, records: RayDataset, condition: str) -> EvalReport:
    """Score a predictor against exact ground truth over a dataset."""
    if len(records) == 0:
        raise ValueError("records must be non-empty")
    pred = predict_fn(records.inputs)
    pos, ang = ray_errors(pred, records.outputs)
    return EvalReport.from_errors(condition, pos, ang)


def exact_forward_fn(system: OpticalSystem):
    """A predictor backed by the exact tracer: maps (N, 4) source rays to
    (N, 4) target-plane rays. Rays that do not emerge come back NaN."""

    def predict(inputs: np.ndarray) -> np.ndarray:
        inputs = np.atleast_2d(inputs)
        n = inputs.shape[0]
        origins = np.column_stack([inputs[:, 0], inputs[:, 1], np.full(n, system.source_z)])
        dirs = np.column_stack([inputs[:, 2], inputs[:, 3],
                                np.sqrt(np.clip(1.0 - inputs[:, 2] ** 2 - inputs[:, 3] ** 2, 0.0, None))])
        o, d, status, _ = trace_batch(origins, dirs, system)
        out = np.full((n, 4), np.nan)
        ok = status == TraceStatus.EMERGED.value
        pts = propagate_batch(o[ok], d[ok], system.target_z)
        out[ok, 0:2] = pts
        out[ok, 2:4] = d[ok, :2]
        return out

    return predict


def query_at_depth(predict_fn, inputs: np.ndarray, depth_z: float, target_z: float):
    """Evaluate the system's effect on a plane past the training target:
    predict the target-plane ray, then free-space transport to depth_z.

    Returns (points (N,2) mm at depth_z, transverse directions (N,2)); the
    direction is depth-invariant.
    """
    if depth_z < target_z:
        raise ValueError(f"depth_z={depth_z} precedes the training target plane {target_z}")
    out = np.atleast_2d(predict_fn(np.atleast_2d(inputs)))
    d3 = reconstruct_directions(out[:, 2:4], clamp=True)
    if np.any(d3[:, 2] <= MIN_FORWARD_DZ):
        bad = int(np.flatnonzero(d3[:, 2] <= MIN_FORWARD_DZ)[0])
        raise ValueError(f"ray {bad}: reconstructed direction has no forward component")
    origins = np.column_stack([out[:, 0], out[:, 1], np.full(len(out), target_z)])
    points = propagate_batch(origins, d3, depth_z)
    return points, out[:, 2:4]
