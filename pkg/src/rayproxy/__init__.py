"""rayproxy: exact sequential lens ray tracing plus a trainable neural proxy
that maps source rays to target-plane rays in a single forward pass."""

from .dataset import (
    DatasetSplit,
    GenerationReport,
    RayDataset,
    RaySample,
    SourceGrid,
    cell_centers,
    generate,
    load_dataset,
    sample_directions,
    save_dataset,
    split_cells,
)
from .estimator import RayMlpRegressor
from .evaluation import EvalReport, evaluate, exact_forward_fn, query_at_depth
from .experiments import TrainRun, experiment_novel_pattern, experiment_unseen_cell, train
from .optics import (
    OpticalSystem,
    Ray3,
    Surface,
    SurfaceKind,
    TraceOutcome,
    TraceStatus,
    design_singlet,
    intersect_analytic,
    intersect_newton,
    paraxial_efl,
    propagate_to_plane,
    refract,
    trace,
    trace_batch,
)
from .prescription import load_prescription, parse_prescription, save_prescription

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit",
    "EvalReport",
    "GenerationReport",
    "OpticalSystem",
    "Ray3",
    "RayDataset",
    "RayMlpRegressor",
    "RaySample",
    "SourceGrid",
    "Surface",
    "SurfaceKind",
    "TraceOutcome",
    "TraceStatus",
    "TrainRun",
    "cell_centers",
    "design_singlet",
    "evaluate",
    "exact_forward_fn",
    "experiment_novel_pattern",
    "experiment_unseen_cell",
    "generate",
    "intersect_analytic",
    "intersect_newton",
    "load_dataset",
    "load_prescription",
    "paraxial_efl",
    "parse_prescription",
    "propagate_to_plane",
    "query_at_depth",
    "refract",
    "sample_directions",
    "save_dataset",
    "save_prescription",
    "split_cells",
    "trace",
    "trace_batch",
    "train",
]
