"""Monte-Carlo RMSE benchmark over SNR / snapshot / subarray-count grids.

Every grid cell runs ``trials`` independent scenarios per method.  Trial
seeds derive from (master seed, cell, trial) only, never from the
method, so different methods consume identical snapshots and compare
paired.  Trials that abort (degenerate spectrum, guard violations) are
excluded from the RMSE and counted in the ``failures`` column.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .array_model import ArrayConfig, validate_config
from .fusion import (
    AngleOutOfGuardError,
    GroupFailureError,
    NonPositiveCrlbError,
    estimate_doa,
    fused_crlb,
    group_candidates,
)
from .mbdnn import MlpModel, ModelFormatError, load_model, predict_doa
from .signal_sim import SimScenario, derive_seed

METHODS = ("crlb_ratio", "exact_crlb", "mbdnn")

CSV_HEADER = (
    "method,snr_db,snapshots,K,rmse_deg,crlb_fused_deg,trials_used,failures,wall_ms"
)

#: Per-trial failures that end the trial but not the sweep.
TRIAL_ERRORS = (GroupFailureError, AngleOutOfGuardError, NonPositiveCrlbError)


class EmptyTrialSetError(ValueError):
    """RMSE requested over zero estimates."""


class ModelLoadError(RuntimeError):
    """The mbdnn method was requested but its model cannot be loaded."""


@dataclass(frozen=True)
class BenchSpec:
    """One sweep request.

    Grids multiply: every combination of SNR, snapshot count, and
    uniform subarray count ``K`` becomes a cell.  ``k_grid=None`` keeps
    the configuration's own subarray counts.
    """

    cfg: ArrayConfig
    theta0_deg: float = 41.0
    snr_grid: tuple[float, ...] = (-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0)
    snapshot_grid: tuple[int, ...] = (200,)
    k_grid: tuple[int, ...] | None = None
    trials: int = 200
    methods: tuple[str, ...] = ("crlb_ratio",)
    model_path: str | None = None
    master_seed: int = 0

    def validate(self) -> "BenchSpec":
        validate_config(self.cfg)
        if not abs(self.theta0_deg) < 90.0:
            raise ValueError(f"theta0_deg={self.theta0_deg} out of range")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_grid or not self.snapshot_grid:
            raise ValueError("empty sweep grid")
        if self.k_grid is not None and (
            len(self.k_grid) == 0 or any(k < 2 for k in self.k_grid)
        ):
            raise ValueError(f"bad k_grid {self.k_grid}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}, expected one of {METHODS}")
        if "mbdnn" in self.methods and not self.model_path:
            raise ValueError("method mbdnn requires a model path")
        return self


@dataclass(frozen=True)
class ResultRow:
    """One benchmark cell for one method."""

    method: str
    snr_db: float
    snapshots: int
    K: int
    rmse_deg: float
    crlb_fused_deg: float
    trials_used: int
    failures: int
    wall_ms: float


def compute_rmse(estimates_deg: Sequence[float], theta0_deg: float) -> float:
    """Root-mean-squared error of angle estimates, in degrees."""
    values = np.asarray(estimates_deg, dtype=float)
    if values.size == 0:
        raise EmptyTrialSetError("no estimates to average")
    return float(np.sqrt(np.mean((values - theta0_deg) ** 2)))


def _cell_config(spec: BenchSpec, k: int | None) -> ArrayConfig:
    if k is None:
        return spec.cfg
    return replace(spec.cfg, K=tuple(k for _ in spec.cfg.M))


def _reported_k(cfg: ArrayConfig) -> int:
    # The CSV has one K column; heterogeneous counts report as 0.
    return cfg.K[0] if len(set(cfg.K)) == 1 else 0


def _run_trial(
    method: str,
    scenario: SimScenario,
    model: MlpModel | None,
) -> float:
    """One trial's estimate in degrees."""
    if method == "mbdnn":
        sets = group_candidates(scenario)
        return predict_doa(model, sets)
    est = estimate_doa(scenario, method=method)
    return math.degrees(est.theta_hat)


def run_sweep(spec: BenchSpec) -> list[ResultRow]:
    """Run the full grid for every requested method."""
    spec.validate()
    model = None
    if "mbdnn" in spec.methods:
        try:
            model = load_model(spec.model_path)
        except (ModelFormatError, OSError) as err:
            raise ModelLoadError(f"cannot load {spec.model_path}: {err}") from err
    theta0 = math.radians(spec.theta0_deg)
    rows: list[ResultRow] = []
    k_values: tuple[int | None, ...] = spec.k_grid or (None,)
    cell = 0
    for k in k_values:
        cfg = _cell_config(spec, k)
        validate_config(cfg)
        for snapshots in spec.snapshot_grid:
            for snr in spec.snr_grid:
                crlb_deg = math.degrees(
                    math.sqrt(fused_crlb(cfg, theta0, snr, snapshots).fused_bound)
                )
                for method in spec.methods:
                    start = time.perf_counter()
                    estimates: list[float] = []
                    failures = 0
                    for trial in range(spec.trials):
                        scenario = SimScenario(
                            cfg=cfg,
                            theta0=theta0,
                            snr_db=snr,
                            snapshots=snapshots,
                            seed=derive_seed(spec.master_seed, cell, trial),
                        )
                        try:
                            estimates.append(_run_trial(method, scenario, model))
                        except TRIAL_ERRORS:
                            failures += 1
                    wall_ms = round((time.perf_counter() - start) * 1e3, 3)
                    rmse = (
                        compute_rmse(estimates, spec.theta0_deg)
                        if estimates
                        else float("nan")
                    )
                    rows.append(
                        ResultRow(
                            method=method,
                            snr_db=float(snr),
                            snapshots=int(snapshots),
                            K=_reported_k(cfg),
                            rmse_deg=rmse,
                            crlb_fused_deg=crlb_deg,
                            trials_used=len(estimates),
                            failures=failures,
                            wall_ms=wall_ms,
                        )
                    )
                cell += 1
    return rows


def emit_csv(rows: Sequence[ResultRow], path=None) -> str:
    """Render rows as CSV; optionally write to ``path``.

    Floats use ``repr`` so parsing the text back reproduces them
    exactly.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for row in rows:
        writer.writerow(
            [
                row.method,
                repr(row.snr_db),
                row.snapshots,
                row.K,
                repr(row.rmse_deg),
                repr(row.crlb_fused_deg),
                row.trials_used,
                row.failures,
                repr(row.wall_ms),
            ]
        )
    text = buffer.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def parse_csv(text: str) -> list[ResultRow]:
    """Inverse of :func:`emit_csv`."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != CSV_HEADER.split(","):
        raise ValueError(f"unexpected benchmark CSV header {header}")
    rows = []
    for record in reader:
        if not record:
            continue
        rows.append(
            ResultRow(
                method=record[0],
                snr_db=float(record[1]),
                snapshots=int(record[2]),
                K=int(record[3]),
                rmse_deg=float(record[4]),
                crlb_fused_deg=float(record[5]),
                trials_used=int(record[6]),
                failures=int(record[7]),
                wall_ms=float(record[8]),
            )
        )
    return rows


def emit_plot_data(rows: Sequence[ResultRow], prefix, x_field: str = "snr_db") -> list:
    """Write per-method ``(x, rmse, crlb)`` triples for external plotting.

    One whitespace-delimited file per method, named
    ``<prefix>.<method>.dat``.  Returns the written paths.
    """
    if x_field not in ("snr_db", "snapshots", "K"):
        raise ValueError(f"cannot plot against {x_field!r}")
    paths = []
    for method in dict.fromkeys(r.method for r in rows):
        path = f"{prefix}.{method}.dat"
        with open(path, "w") as fh:
            fh.write(f"# {x_field} rmse_deg crlb_fused_deg\n")
            for row in rows:
                if row.method == method:
                    fh.write(
                        f"{getattr(row, x_field)} {row.rmse_deg!r} "
                        f"{row.crlb_fused_deg!r}\n"
                    )
        paths.append(path)
    return paths
