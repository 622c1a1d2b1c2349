"""Training orchestration and the two generalization experiments:
held-out grid cells, and a continuous novel ray pattern traced fresh."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ._util import STREAM_NOVEL, atomic_write_text, keyed_rng
from .dataset import DatasetSplit, RayDataset, SourceGrid, load_dataset, split_cells, split_masks
from .estimator import RayMlpRegressor
from .evaluation import EvalReport, evaluate
from .nn import MlpParams, save_checkpoint
from .optics import OpticalSystem, TraceStatus, propagate_batch, trace_batch
from .prescription import load_prescription

HISTORY_CSV_HEADER = "epoch,lr,train_loss,test_pos_um,test_ang_deg"


@dataclass
class TrainRun:
    """Everything one training launch needs; files must exist up front."""

    prescription_path: str
    dataset_path: str
    checkpoint_path: str
    history_path: str
    epochs: int = 3000
    seed: int = 0
    split_fraction: float = 0.8
    hidden_width: int = 256
    hidden_layers: int = 6
    skip_period: int = 3
    batch_size: int = 4096
    base_lr: float = 5e-4
    final_lr: float = 1e-5
    weight_decay: float = 1e-2
    expected_grid: tuple[float, int] | None = None  # (extent, cells_per_side) sanity gate


def final_checkpoint_path(checkpoint_path: str) -> str:
    root, ext = os.path.splitext(checkpoint_path)
    return f"{root}.final{ext or '.bin'}"


def train(run: TrainRun) -> tuple[MlpParams, list[dict]]:
    """Fit the proxy on the dataset's training cells.

    Persists the best-by-test checkpoint (positional error first, angular as
    tie-break) at run.checkpoint_path, the last-epoch parameters alongside it,
    and the per-epoch history CSV. Returns (best_params, history).
    """
    if run.epochs < 1:
        raise ValueError("epochs must be >= 1")
    for path in (run.prescription_path, run.dataset_path):
        if not os.path.exists(path):
            raise FileNotFoundError(path)
    load_prescription(run.prescription_path)  # validates the referenced system
    ds = load_dataset(run.dataset_path)
    if run.expected_grid is not None:
        extent, cells = run.expected_grid
        if abs(ds.grid.extent - extent) > 1e-12 or ds.grid.cells_per_side != cells:
            raise ValueError(
                f"dataset grid ({ds.grid.extent}, {ds.grid.cells_per_side}) does not match "
                f"the configured grid ({extent}, {cells})"
            )

    split = split_cells(ds.grid, run.split_fraction, run.seed)
    train_mask, test_mask = split_masks(ds, split)
    train_ds = ds.select(train_mask)
    test_ds = ds.select(test_mask)

    est = RayMlpRegressor(
        hidden_width=run.hidden_width,
        hidden_layers=run.hidden_layers,
        skip_period=run.skip_period,
        epochs=run.epochs,
        batch_size=run.batch_size,
        base_lr=run.base_lr,
        final_lr=run.final_lr,
        weight_decay=run.weight_decay,
        seed=run.seed,
    )

    best: dict = {"key": None, "params": None}

    def on_epoch(epoch, params, entry):
        key = (entry["test_pos_um"], entry["test_ang_deg"])
        if best["key"] is None or key < best["key"]:
            best["key"] = key
            best["params"] = params.copy()

    est.fit(train_ds.inputs, train_ds.outputs,
            eval_set=(test_ds.inputs, test_ds.outputs),
            epoch_callback=on_epoch)

    save_checkpoint(best["params"], run.checkpoint_path)
    save_checkpoint(est.params_, final_checkpoint_path(run.checkpoint_path))
    lines = [HISTORY_CSV_HEADER]
    for e in est.history_:
        lines.append(f"{e['epoch']},{e['lr']!r},{e['train_loss']!r},{e['test_pos_um']!r},{e['test_ang_deg']!r}")
    atomic_write_text(run.history_path, "\n".join(lines) + "\n")
    return best["params"], est.history_


def experiment_unseen_cell(predict_fn, ds: RayDataset, split: DatasetSplit) -> EvalReport:
    """Score the proxy on records from cells the training never saw."""
    leak = split.train_cells & split.test_cells
    if leak:
        raise ValueError(f"split leaks cells between train and test: {sorted(leak)[:5]}")
    if not split.test_cells:
        raise ValueError("split has no test cells")
    _, test_mask = split_masks(ds, split)
    test_ds = ds.select(test_mask)
    if len(test_ds) == 0:
        raise ValueError("no records fall in the test cells")
    seen = set(int(c) for c in np.unique(test_ds.cell_id))
    if seen & split.train_cells:
        raise ValueError("evaluation records overlap training cells")
    return evaluate(predict_fn, test_ds, "unseen_grid_cell")


def experiment_novel_pattern(
    predict_fn,
    system: OpticalSystem,
    grid: SourceGrid,
    count: int,
    seed: int,
) -> EvalReport:
    """Score the proxy on a fresh continuous ray pattern: origins uniform over
    the source extent (not cell centers), directions drawn over the entrance
    disk from a stream disjoint from every training stream."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = keyed_rng(seed, STREAM_NOVEL)
    origins2 = rng.random((count, 2)) * grid.extent - grid.extent / 2.0
    origins2[:, 0] += grid.center[0]
    origins2[:, 1] += grid.center[1]

    if system.surfaces:
        disk_r = system.surfaces[0].semi_aperture
        disk_z = system.surfaces[0].vertex_z
    else:
        disk_r, disk_z = 1.0, system.source_z + 1.0
    u = rng.random((count, 2))
    r = disk_r * np.sqrt(u[:, 0])
    theta = 2.0 * np.pi * u[:, 1]
    targets = np.column_stack([r * np.cos(theta), r * np.sin(theta), np.full(count, disk_z)])
    origins3 = np.column_stack([origins2, np.full(count, system.source_z)])
    dirs = targets - origins3
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    o, d, status, _ = trace_batch(origins3, dirs, system)
    ok = status == TraceStatus.EMERGED.value
    pts = propagate_batch(o[ok], d[ok], system.target_z)
    fwd = ~np.isnan(pts[:, 0])
    if not fwd.any():
        raise ValueError("novel pattern produced zero surviving rays")

    gt = RayDataset(
        grid=grid,
        cell_id=np.zeros(int(fwd.sum()), dtype=np.uint32),
        p_i=origins2[ok][fwd],
        d_i=dirs[ok][fwd, :2],
        p_o=pts[fwd],
        d_o=d[ok][fwd, :2],
    )
    return evaluate(predict_fn, gt, "novel_ray_pattern")
