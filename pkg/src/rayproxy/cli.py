"""Command-line pipeline: design, gen, train, eval, bench, plot.

Configuration is a flat key=value text file; command-line flags override
config values, which override the built-in defaults (sized so that
``gen && train && eval`` with no arguments runs the full-scale experiment).
Exit codes: 0 success, 1 runtime failure, 2 usage/config error. All outputs
are written atomically.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from ._util import atomic_write_text, keyed_rng, STREAM_DIRECTIONS
from .bench import bench, bench_csv
from .dataset import SourceGrid, generate, load_dataset, sample_directions, save_dataset, split_cells
from .estimator import RayMlpRegressor
from .evaluation import EVAL_CSV_HEADER
from .experiments import TrainRun, experiment_novel_pattern, experiment_unseen_cell, train
from .nn import load_checkpoint
from .optics import design_singlet
from .plotting import spot_diagram, trace_spot_points
from .prescription import load_prescription, save_prescription


@dataclass
class PipelineConfig:
    """Defaults reproduce the full-scale experiment configuration."""

    prescription: str = "prescription.txt"
    dataset: str = "dataset.bin"
    checkpoint: str = "checkpoint.bin"
    history: str = "history.csv"
    out_dir: str = "."
    extent: float = 12.0
    cells_per_side: int = 24
    rays_per_cell: int = 1024
    seed: int = 0
    split_fraction: float = 0.8
    hidden_width: int = 256
    hidden_layers: int = 6
    skip_period: int = 3
    epochs: int = 3000
    batch_size: int = 4096
    base_lr: float = 5e-4
    final_lr: float = 1e-5
    weight_decay: float = 1e-2
    novel_count: int = 1_000_000
    focal: float = 60.0
    aperture: float = 50.6
    index: float = 1.5168
    thickness: float = 8.0

    def path(self, name: str) -> str:
        value = getattr(self, name)
        return value if os.path.isabs(value) else os.path.join(self.out_dir, value)


class ConfigError(ValueError):
    pass


def load_config_file(path: str) -> dict:
    values = {}
    types = {f.name: f.type for f in fields(PipelineConfig)}
    casts = {"str": str, "float": float, "int": int}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in types:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = casts[types[key]](val.strip())
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {val.strip()!r}") from None
    return values


def build_config(args) -> PipelineConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for f in fields(PipelineConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    cfg = PipelineConfig(**values)
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out-dir", dest="out_dir", help="directory for outputs (default .)")
    p.add_argument("--seed", type=int, help="master seed for all derived streams")
    p.add_argument("--threads", type=int, help="cap BLAS/threadpool parallelism")
    p.add_argument("--fast", action="store_true",
                   help="permit nondeterministic parallel reductions (currently none exist; reserved)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rayproxy",
                                     description="Exact lens ray tracing and a trainable neural proxy.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="write a biconvex singlet prescription")
    p.add_argument("--focal", type=float, required=True)
    p.add_argument("--aperture", type=float, required=True)
    p.add_argument("--index", type=float)
    p.add_argument("--thickness", type=float)
    p.add_argument("--source-distance", dest="source_distance", type=float,
                   help="source plane distance before the front vertex (default: focal)")
    p.add_argument("--prescription", help="output file name")
    _add_common(p)

    p = sub.add_parser("gen", help="synthesize the ray-pair dataset")
    p.add_argument("--prescription")
    p.add_argument("--dataset")
    p.add_argument("--extent", type=float)
    p.add_argument("--cells-per-side", dest="cells_per_side", type=int)
    p.add_argument("--rays-per-cell", dest="rays_per_cell", type=int)
    _add_common(p)

    p = sub.add_parser("train", help="train the proxy on a generated dataset")
    p.add_argument("--prescription")
    p.add_argument("--dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--history")
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden-width", dest="hidden_width", type=int)
    p.add_argument("--hidden-layers", dest="hidden_layers", type=int)
    p.add_argument("--skip-period", dest="skip_period", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--final-lr", dest="final_lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--split-fraction", dest="split_fraction", type=float)
    p.add_argument("--extent", type=float)
    p.add_argument("--cells-per-side", dest="cells_per_side", type=int)
    _add_common(p)

    p = sub.add_parser("eval", help="run both generalization conditions and print the report")
    p.add_argument("--prescription")
    p.add_argument("--dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--split-fraction", dest="split_fraction", type=float)
    p.add_argument("--novel-count", dest="novel_count", type=int)
    p.add_argument("--reports", default=None, help="output CSV (default <out-dir>/eval_reports.csv)")
    _add_common(p)

    p = sub.add_parser("bench", help="throughput of exact tracer vs proxy")
    p.add_argument("--prescription")
    p.add_argument("--checkpoint")
    p.add_argument("--batch-sizes", dest="batch_sizes", default="100,10000,1000000",
                   help="comma-separated ray counts")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--bench-out", dest="bench_out", default=None,
                   help="output CSV (default <out-dir>/bench.csv)")
    _add_common(p)

    p = sub.add_parser("plot", help="spot diagram at a chosen depth")
    p.add_argument("--prescription")
    p.add_argument("--checkpoint", help="use the proxy; omit for the exact tracer")
    p.add_argument("--depth", type=float, help="plane z in mm (default: training target plane)")
    p.add_argument("--source", default="0,0", help="source point x,y in mm")
    p.add_argument("--rays", type=int, default=1024)
    p.add_argument("--spot-out", dest="spot_out", default=None,
                   help="output SVG (default <out-dir>/spot.svg)")
    _add_common(p)

    return parser


def cmd_design(args, cfg: PipelineConfig) -> int:
    try:
        system = design_singlet(
            focal=cfg.focal,
            aperture=cfg.aperture,
            index=cfg.index,
            center_thickness=cfg.thickness,
            source_distance=args.source_distance,
        )
    except ValueError as e:  # infeasible request is a configuration error
        print(f"design error: {e}", file=sys.stderr)
        return 2
    out = cfg.path("prescription")
    save_prescription(system, out)
    print(f"wrote {out}")
    return 0


def cmd_gen(args, cfg: PipelineConfig) -> int:
    system = load_prescription(cfg.path("prescription"))
    grid = SourceGrid(extent=cfg.extent, cells_per_side=cfg.cells_per_side)
    ds, report = generate(system, grid, cfg.rays_per_cell, cfg.seed)
    out = cfg.path("dataset")
    save_dataset(ds, out, format="binary")
    report.save(out + ".report.txt")
    print(f"wrote {out}: {len(ds)} records "
          f"({report.kept.sum()} kept / {report.missed.sum()} missed / "
          f"{report.vignetted.sum()} vignetted / {report.tir.sum()} tir)")
    return 0


def cmd_train(args, cfg: PipelineConfig) -> int:
    run = TrainRun(
        prescription_path=cfg.path("prescription"),
        dataset_path=cfg.path("dataset"),
        checkpoint_path=cfg.path("checkpoint"),
        history_path=cfg.path("history"),
        epochs=cfg.epochs,
        seed=cfg.seed,
        split_fraction=cfg.split_fraction,
        hidden_width=cfg.hidden_width,
        hidden_layers=cfg.hidden_layers,
        skip_period=cfg.skip_period,
        batch_size=cfg.batch_size,
        base_lr=cfg.base_lr,
        final_lr=cfg.final_lr,
        weight_decay=cfg.weight_decay,
        expected_grid=(cfg.extent, cfg.cells_per_side),
    )
    _, history = train(run)
    last = history[-1]
    print(f"wrote {run.checkpoint_path} (best) and history; "
          f"final test pos={last['test_pos_um']:.3g} um ang={last['test_ang_deg']:.3g} deg")
    return 0


def cmd_eval(args, cfg: PipelineConfig) -> int:
    ckpt = cfg.path("checkpoint")
    if not os.path.exists(ckpt):
        raise FileNotFoundError(f"checkpoint not found: {ckpt} (run `rayproxy train` first)")
    params = load_checkpoint(ckpt)
    est = RayMlpRegressor.from_params(params)
    system = load_prescription(cfg.path("prescription"))
    ds = load_dataset(cfg.path("dataset"))
    split = split_cells(ds.grid, cfg.split_fraction, cfg.seed)

    unseen = experiment_unseen_cell(est.predict, ds, split)
    novel = experiment_novel_pattern(est.predict, system, ds.grid, cfg.novel_count, cfg.seed)

    out = args.reports or os.path.join(cfg.out_dir, "eval_reports.csv")
    atomic_write_text(out, "\n".join([EVAL_CSV_HEADER, unseen.csv_row(), novel.csv_row()]) + "\n")
    print("errors are aggregated as mean/median/p95; the mean is the headline statistic")
    print(unseen)
    print(novel)
    print(f"wrote {out}")
    return 0


def cmd_bench(args, cfg: PipelineConfig) -> int:
    params = load_checkpoint(cfg.path("checkpoint"))
    est = RayMlpRegressor.from_params(params)
    system = load_prescription(cfg.path("prescription"))
    sizes = [int(s) for s in args.batch_sizes.split(",") if s]
    rows = bench(est.predict, system, sizes, repeats=args.repeats, seed=cfg.seed)
    out = args.bench_out or os.path.join(cfg.out_dir, "bench.csv")
    atomic_write_text(out, bench_csv(rows))
    for r in rows:
        print(f"{r.method:6s} batch={r.batch_size:<9d} {r.rays_per_second_median:,.0f} rays/s")
    print(f"wrote {out}")
    return 0


def cmd_plot(args, cfg: PipelineConfig) -> int:
    system = load_prescription(cfg.path("prescription"))
    depth = args.depth if args.depth is not None else system.target_z
    sx, sy = (float(v) for v in args.source.split(","))
    dirs = sample_directions((sx, sy), system, args.rays, cfg.seed)
    origins = np.tile([sx, sy, system.source_z], (args.rays, 1))

    if args.checkpoint:
        from .evaluation import query_at_depth

        params = load_checkpoint(cfg.path("checkpoint"))
        est = RayMlpRegressor.from_params(params)
        inputs = np.column_stack([origins[:, :2], dirs[:, :2]])
        points, _ = query_at_depth(est.predict, inputs, depth, system.target_z)
        label = "proxy"
    else:
        points = trace_spot_points(system, origins, dirs, depth)
        label = "exact"
    out = args.spot_out or os.path.join(cfg.out_dir, "spot.svg")
    spot_diagram(points, out, title=f"{label} spot at z={depth:g} mm")
    print(f"wrote {out} and companion CSV ({len(points)} points)")
    return 0


_COMMANDS = {
    "design": cmd_design,
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        if args.threads:
            import threadpoolctl

            with threadpoolctl.threadpool_limits(limits=args.threads):
                return _COMMANDS[args.command](args, cfg)
        return _COMMANDS[args.command](args, cfg)
    except Exception as e:  # runtime failures map to exit 1 with a diagnostic
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
