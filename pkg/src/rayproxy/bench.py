"""Throughput comparison: exact Newton-path tracing vs proxy inference."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ._util import STREAM_BENCH, keyed_rng
from .optics import OpticalSystem, trace_batch

BENCH_CSV_HEADER = "method,batch_size,rays_per_second_median"


@dataclass(frozen=True)
class BenchRow:
    method: str
    batch_size: int
    rays_per_second_median: float

    def csv_row(self) -> str:
        return f"{self.method},{self.batch_size},{self.rays_per_second_median!r}"


def _bench_rays(system: OpticalSystem, count: int, seed: int):
    """Axial-point rays fanned over the entrance disk; enough variety to keep
    the tracer honest, cheap enough to rebuild per batch size."""
    if system.surfaces:
        disk_r = system.surfaces[0].semi_aperture
        disk_z = system.surfaces[0].vertex_z
    else:
        disk_r, disk_z = 1.0, system.source_z + 1.0
    rng = keyed_rng(seed, STREAM_BENCH)
    u = rng.random((count, 2))
    r = 0.7 * disk_r * np.sqrt(u[:, 0])  # stay inside the rim so most rays survive
    theta = 2.0 * np.pi * u[:, 1]
    origins = np.tile([0.0, 0.0, system.source_z], (count, 1))
    targets = np.column_stack([r * np.cos(theta), r * np.sin(theta), np.full(count, disk_z)])
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return origins, dirs


def _median_rate(fn, count: int, repeats: int) -> float:
    fn()  # warm caches and allocator
    rates = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        rates.append(count / (time.perf_counter() - t0))
    return float(np.median(rates))


def bench(
    predict_fn,
    system: OpticalSystem,
    batch_sizes: list[int],
    repeats: int = 5,
    seed: int = 0,
) -> list[BenchRow]:
    """Median rays/second for exact tracing and proxy inference at each batch
    size (same rays, same process, warm caches)."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rows = []
    for n in batch_sizes:
        origins, dirs = _bench_rays(system, n, seed)
        inputs = np.column_stack([origins[:, :2], dirs[:, :2]])
        rows.append(BenchRow("exact", n, _median_rate(lambda: trace_batch(origins, dirs, system), n, repeats)))
        rows.append(BenchRow("proxy", n, _median_rate(lambda: predict_fn(inputs), n, repeats)))
    return rows


def bench_csv(rows: list[BenchRow]) -> str:
    return "\n".join([BENCH_CSV_HEADER] + [r.csv_row() for r in rows]) + "\n"
