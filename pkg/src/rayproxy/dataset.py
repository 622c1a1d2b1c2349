"""Ray-pair dataset synthesis and storage.

A dataset pairs input rays leaving a square source grid (origin = cell
center, direction drawn by Monte Carlo over the entrance aperture) with the
exactly traced output ray on the target plane. Directions are stored as
transverse components (dx, dy); the axial component is implied,
dz = +sqrt(1 - dx^2 - dy^2). Rays that vignette, miss, or suffer total
internal reflection are dropped and tallied per cell.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._util import STREAM_DIRECTIONS, STREAM_SPLIT, atomic_write_bytes, atomic_write_text, keyed_rng
from .optics import OpticalSystem, TraceStatus, propagate_batch, trace_batch

DATASET_MAGIC = b"R2RD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHQdQ")  # magic, version, count, extent, cells_per_side
_RECORD_DTYPE = np.dtype([("cell_id", "<u4"), ("vals", "<f8", (8,))])

CSV_HEADER = "cell_id,pix,piy,dix,diy,pox,poy,dox,doy"


class DatasetFormatError(ValueError):
    """Corrupt or mismatched dataset file; message carries byte/line position."""


@dataclass(frozen=True)
class SourceGrid:
    """Square source of cells_per_side^2 cells covering extent x extent mm."""

    extent: float
    cells_per_side: int
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        if self.cells_per_side < 1:
            raise ValueError("cells_per_side must be >= 1")

    @property
    def pitch(self) -> float:
        return self.extent / self.cells_per_side

    @property
    def n_cells(self) -> int:
        return self.cells_per_side**2


def cell_centers(grid: SourceGrid) -> np.ndarray:
    """(n_cells, 2) centers in row-major cell order; the row index is the cell id.

    Cell (row r, col c) has id r*cells_per_side + c and center
    grid.center + (-extent/2 + (c+0.5)*pitch, -extent/2 + (r+0.5)*pitch).
    """
    m = grid.cells_per_side
    coords = -grid.extent / 2.0 + (np.arange(m) + 0.5) * grid.pitch
    cx, cy = np.meshgrid(coords, coords)  # x varies fastest (column index)
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    centers[:, 0] += grid.center[0]
    centers[:, 1] += grid.center[1]
    return centers


class RaySample(NamedTuple):
    cell_id: int
    p_i: np.ndarray
    d_i: np.ndarray
    p_o: np.ndarray
    d_o: np.ndarray


@dataclass
class RayDataset:
    """Column-array container for ray pairs; indexing yields RaySample views."""

    grid: SourceGrid
    cell_id: np.ndarray
    p_i: np.ndarray
    d_i: np.ndarray
    p_o: np.ndarray
    d_o: np.ndarray

    def __len__(self) -> int:
        return len(self.cell_id)

    def __getitem__(self, i: int) -> RaySample:
        return RaySample(int(self.cell_id[i]), self.p_i[i], self.d_i[i], self.p_o[i], self.d_o[i])

    @property
    def inputs(self) -> np.ndarray:
        """(N, 4) model inputs: source position and transverse direction."""
        return np.hstack([self.p_i, self.d_i])

    @property
    def outputs(self) -> np.ndarray:
        """(N, 4) targets: target-plane position and transverse direction."""
        return np.hstack([self.p_o, self.d_o])

    def select(self, mask) -> "RayDataset":
        return RayDataset(self.grid, self.cell_id[mask], self.p_i[mask], self.d_i[mask],
                          self.p_o[mask], self.d_o[mask])


@dataclass(frozen=True)
class DatasetSplit:
    train_cells: frozenset[int]
    test_cells: frozenset[int]
    seed: int


@dataclass
class GenerationReport:
    rays_per_cell: int
    seed: int
    kept: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    missed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    vignetted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    tir: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    nonforward: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def as_text(self) -> str:
        lines = [
            f"rays_per_cell={self.rays_per_cell} seed={self.seed} cells={len(self.kept)}",
            f"totals: kept={self.kept.sum()} missed={self.missed.sum()} "
            f"vignetted={self.vignetted.sum()} tir={self.tir.sum()} nonforward={self.nonforward.sum()}",
            "cell_id kept missed vignetted tir nonforward",
        ]
        for i in range(len(self.kept)):
            lines.append(
                f"{i} {self.kept[i]} {self.missed[i]} {self.vignetted[i]} {self.tir[i]} {self.nonforward[i]}"
            )
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        atomic_write_text(path, self.as_text())


def sample_directions(
    origin,
    system: OpticalSystem,
    count: int,
    seed: int,
    stream_index: int = 0,
) -> np.ndarray:
    """Unit directions from a source point toward uniform points on the
    entrance disk (first surface's clear aperture at its vertex plane).

    Uniformity on the disk comes from the polar map r = R*sqrt(u). The draw
    is a counter-based stream keyed by (seed, stream_index), so repeated and
    out-of-order calls reproduce bit-identically. A system with no surfaces
    falls back to a unit disk 1 mm ahead of the source plane to keep the
    degenerate case well-defined.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if system.surfaces:
        disk_r = system.surfaces[0].semi_aperture
        disk_z = system.surfaces[0].vertex_z
    else:
        disk_r = 1.0
        disk_z = system.source_z + 1.0
    rng = keyed_rng(seed, STREAM_DIRECTIONS, stream_index)
    u = rng.random((count, 2))
    r = disk_r * np.sqrt(u[:, 0])
    theta = 2.0 * np.pi * u[:, 1]
    src = np.array([origin[0], origin[1], system.source_z], dtype=np.float64)
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), np.full(count, disk_z)])
    d = pts - src
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d


def generate(
    system: OpticalSystem,
    grid: SourceGrid,
    rays_per_cell: int,
    seed: int,
) -> tuple[RayDataset, GenerationReport]:
    """Synthesize the training corpus: per cell, sample directions, trace
    exactly, transport survivors to the target plane.

    Raises when any cell loses all of its rays (the source geometry is then
    incompatible with the system). Deterministic in (system, grid,
    rays_per_cell, seed); per-cell streams are independent, so any partition
    of the cell loop yields the same records in cell order.
    """
    if rays_per_cell < 1:
        raise ValueError("rays_per_cell must be >= 1")
    centers = cell_centers(grid)
    n_cells = grid.n_cells
    report = GenerationReport(
        rays_per_cell=rays_per_cell,
        seed=seed,
        kept=np.zeros(n_cells, dtype=np.int64),
        missed=np.zeros(n_cells, dtype=np.int64),
        vignetted=np.zeros(n_cells, dtype=np.int64),
        tir=np.zeros(n_cells, dtype=np.int64),
        nonforward=np.zeros(n_cells, dtype=np.int64),
    )

    chunks = []
    for cid in range(n_cells):
        d_in = sample_directions(centers[cid], system, rays_per_cell, seed, stream_index=cid)
        o_in = np.tile(np.append(centers[cid], system.source_z), (rays_per_cell, 1))
        o_out, d_out, status, _ = trace_batch(o_in, d_in, system)
        emerged = status == TraceStatus.EMERGED.value
        report.missed[cid] = int((status == TraceStatus.MISSED.value).sum())
        report.vignetted[cid] = int((status == TraceStatus.VIGNETTED.value).sum())
        report.tir[cid] = int((status == TraceStatus.TIR.value).sum())

        p_o = propagate_batch(o_out[emerged], d_out[emerged], system.target_z)
        fwd = ~np.isnan(p_o[:, 0])
        report.nonforward[cid] = int((~fwd).sum())
        kept = int(fwd.sum())
        report.kept[cid] = kept
        if kept == 0:
            raise ValueError(f"cell {cid} produced no surviving rays; source/system geometry mismatch")
        chunks.append((
            np.full(kept, cid, dtype=np.uint32),
            np.tile(centers[cid], (kept, 1)),
            d_in[emerged][fwd, :2],
            p_o[fwd],
            d_out[emerged][fwd, :2],
        ))

    return RayDataset(
        grid=grid,
        cell_id=np.concatenate([c[0] for c in chunks]),
        p_i=np.vstack([c[1] for c in chunks]),
        d_i=np.vstack([c[2] for c in chunks]),
        p_o=np.vstack([c[3] for c in chunks]),
        d_o=np.vstack([c[4] for c in chunks]),
    ), report


def split_cells(grid: SourceGrid, fraction: float, seed: int) -> DatasetSplit:
    """Cell-level train/test split: a seeded permutation of cell ids with the
    first round(fraction * n) cells for training. Never splits within a cell."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be strictly between 0 and 1")
    n = grid.n_cells
    n_train = round(fraction * n)
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} cells at fraction {fraction} leaves one side empty")
    perm = keyed_rng(seed, STREAM_SPLIT).permutation(n)
    return DatasetSplit(
        train_cells=frozenset(int(c) for c in perm[:n_train]),
        test_cells=frozenset(int(c) for c in perm[n_train:]),
        seed=seed,
    )


def split_masks(ds: RayDataset, split: DatasetSplit) -> tuple[np.ndarray, np.ndarray]:
    """Boolean record masks (train, test) for a cell-level split."""
    train_ids = np.array(sorted(split.train_cells), dtype=np.uint32)
    train = np.isin(ds.cell_id, train_ids)
    return train, ~train


def save_dataset(ds: RayDataset, path, format: str = "binary") -> None:
    """Write a dataset; binary round-trips bit-exactly, CSV keeps full
    precision via shortest round-trip decimal representation.

    The binary header stores only the grid extent and cell count, so a
    non-default grid center is not persisted.
    """
    if format == "binary":
        rec = np.empty(len(ds), dtype=_RECORD_DTYPE)
        rec["cell_id"] = ds.cell_id
        rec["vals"][:, 0:2] = ds.p_i
        rec["vals"][:, 2:4] = ds.d_i
        rec["vals"][:, 4:6] = ds.p_o
        rec["vals"][:, 6:8] = ds.d_o
        header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(ds),
                              ds.grid.extent, ds.grid.cells_per_side)
        atomic_write_bytes(path, header + rec.tobytes())
    elif format == "csv":
        lines = [CSV_HEADER]
        for i in range(len(ds)):
            vals = [ds.p_i[i, 0], ds.p_i[i, 1], ds.d_i[i, 0], ds.d_i[i, 1],
                    ds.p_o[i, 0], ds.p_o[i, 1], ds.d_o[i, 0], ds.d_o[i, 1]]
            lines.append(f"{int(ds.cell_id[i])}," + ",".join(repr(float(v)) for v in vals))
        atomic_write_text(path, "\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown dataset format {format!r}")


def load_dataset(path, format: str = "binary", grid: SourceGrid | None = None) -> RayDataset:
    """Read a dataset back. The CSV format carries no grid metadata, so pass
    ``grid`` explicitly when it matters; binary restores it from the header."""
    if format == "binary":
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < _HEADER.size:
            raise DatasetFormatError(f"header truncated: file is {len(blob)} bytes, need {_HEADER.size}")
        magic, version, count, extent, cells = _HEADER.unpack_from(blob, 0)
        if magic != DATASET_MAGIC:
            raise DatasetFormatError(f"bad magic {magic!r} at byte 0")
        if version != DATASET_VERSION:
            raise DatasetFormatError(f"unsupported version {version} at byte 4")
        body = blob[_HEADER.size:]
        expected = count * _RECORD_DTYPE.itemsize
        if len(body) != expected:
            whole = len(body) // _RECORD_DTYPE.itemsize
            raise DatasetFormatError(
                f"truncated record {whole} at byte {_HEADER.size + whole * _RECORD_DTYPE.itemsize}: "
                f"expected {count} records ({expected} bytes), found {len(body)} bytes"
            )
        rec = np.frombuffer(body, dtype=_RECORD_DTYPE)
        grid = SourceGrid(extent=extent, cells_per_side=int(cells))
        vals = rec["vals"]
        return RayDataset(grid, rec["cell_id"].astype(np.uint32), vals[:, 0:2].copy(),
                          vals[:, 2:4].copy(), vals[:, 4:6].copy(), vals[:, 6:8].copy())

    if format == "csv":
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != CSV_HEADER:
            raise DatasetFormatError(f"line 1: expected header {CSV_HEADER!r}")
        rows = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 9:
                raise DatasetFormatError(f"line {lineno}: expected 9 columns, found {len(parts)}")
            try:
                rows.append((int(parts[0]), [float(p) for p in parts[1:]]))
            except ValueError as e:
                raise DatasetFormatError(f"line {lineno}: {e}") from None
        cell_id = np.array([r[0] for r in rows], dtype=np.uint32)
        vals = np.array([r[1] for r in rows], dtype=np.float64).reshape(-1, 8)
        if grid is None:
            side = int(cell_id.max()) + 1 if len(rows) else 1
            grid = SourceGrid(extent=1.0, cells_per_side=max(int(np.ceil(np.sqrt(side))), 1))
        return RayDataset(grid, cell_id, vals[:, 0:2], vals[:, 2:4], vals[:, 4:6], vals[:, 6:8])

    raise ValueError(f"unknown dataset format {format!r}")
