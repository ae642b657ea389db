"""Grouped coprime-subarray DOA estimation with CRLB-weighted fusion."""

from .array_model import (
    ArrayConfig,
    ConfigError,
    GroupGeometry,
    load_config,
    save_config,
    validate_config,
)
from .bench import BenchSpec, ResultRow, compute_rmse, emit_csv, parse_csv, run_sweep
from .fusion import (
    CrlbReport,
    FusedEstimate,
    crlb_group_approx,
    crlb_group_exact,
    estimate_doa,
    fuse,
    fused_crlb,
    group_candidates,
    select_true_tuple,
    weights_crlb_ratio,
    weights_exact,
)
from .mbdnn import (
    Dataset,
    MlpModel,
    MlpSpec,
    TrainConfig,
    generate_dataset,
    grad_check,
    init_model,
    load_model,
    predict_doa,
    save_model,
    train,
)
from .signal_sim import (
    SimScenario,
    derive_seed,
    read_snapshots,
    sample_covariance,
    simulate_group,
    write_snapshots,
)
from .subspace import enumerate_candidates, noise_subspace, root_music_phase

__version__ = "0.1.0"

__all__ = [
    "ArrayConfig",
    "BenchSpec",
    "ConfigError",
    "CrlbReport",
    "Dataset",
    "FusedEstimate",
    "GroupGeometry",
    "MlpModel",
    "MlpSpec",
    "ResultRow",
    "SimScenario",
    "TrainConfig",
    "compute_rmse",
    "crlb_group_approx",
    "crlb_group_exact",
    "derive_seed",
    "emit_csv",
    "enumerate_candidates",
    "estimate_doa",
    "fuse",
    "fused_crlb",
    "generate_dataset",
    "grad_check",
    "group_candidates",
    "init_model",
    "load_config",
    "load_model",
    "noise_subspace",
    "parse_csv",
    "predict_doa",
    "read_snapshots",
    "root_music_phase",
    "run_sweep",
    "sample_covariance",
    "save_config",
    "save_model",
    "select_true_tuple",
    "simulate_group",
    "train",
    "validate_config",
    "weights_crlb_ratio",
    "weights_exact",
    "write_snapshots",
]
