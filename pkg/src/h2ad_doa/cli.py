"""Command-line front end.

Subcommands: validate, simulate, estimate, dataset, train, predict,
bench.  Exit codes: 0 on success, 2 for configuration/usage problems,
3 for runtime failures (estimation aborts, unreadable artifacts).
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import bench as bench_mod
from . import mbdnn
from .array_model import ConfigError, load_config
from .fusion import (
    crlb_group_exact,
    fuse,
    fused_crlb,
    group_candidates,
    select_true_tuple,
    weights_crlb_ratio,
    weights_exact,
)
from .signal_sim import SimScenario, simulate_group, write_snapshots


def _add_scenario_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--theta0-deg", type=float, default=41.0)
    parser.add_argument("--snr-db", type=float, default=0.0)
    parser.add_argument("--snapshots", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)


def _scenario(args) -> SimScenario:
    cfg = load_config(args.config)
    return SimScenario(
        cfg=cfg,
        theta0=math.radians(args.theta0_deg),
        snr_db=args.snr_db,
        snapshots=args.snapshots,
        seed=args.seed,
    ).validate()


def _parse_grid(text: str, cast):
    try:
        return tuple(cast(v) for v in text.split(",") if v.strip())
    except ValueError as err:
        raise ConfigError(f"bad grid {text!r}: {err}") from err


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"groups={cfg.num_groups} M={list(cfg.M)} K={list(cfg.K)}")
    print(f"total_antennas={cfg.total_antennas}")
    return 0


def _cmd_simulate(args) -> int:
    scenario = _scenario(args)
    for q in range(scenario.cfg.num_groups):
        snap = simulate_group(scenario, q)
        path = f"{args.out}.group{q}.snap"
        write_snapshots(snap, path)
        print(f"wrote {path} ({snap.num_subarrays}x{snap.snapshots})")
    return 0


def _cmd_estimate(args) -> int:
    scenario = _scenario(args)
    sets = group_candidates(scenario)
    selected = select_true_tuple(sets)
    ratio_w = weights_crlb_ratio(scenario.cfg)
    plug_in = selected.mean
    crlbs = [
        crlb_group_exact(scenario.cfg, q, plug_in, scenario.snr_db, scenario.snapshots)
        for q in range(scenario.cfg.num_groups)
    ]
    exact_w = weights_exact(crlbs)
    report = fused_crlb(scenario.cfg, plug_in, scenario.snr_db, scenario.snapshots)
    result = {
        "candidates_deg": {
            str(cs.group_index): [float(v) for v in np.degrees(cs.angles)]
            for cs in sets
        },
        "phase_rad": {str(cs.group_index): cs.phase_hat for cs in sets},
        "tuple_deg": [float(v) for v in np.degrees(selected.angles)],
        "tuple_indices": list(selected.member_indices),
        "dispersion_rad2": selected.dispersion,
        "weights_crlb_ratio": [float(w) for w in ratio_w.weights],
        "weights_exact_crlb": [float(w) for w in exact_w.weights],
        "crlb_per_group_rad2": [float(c) for c in crlbs],
        "crlb_fused_rad2": report.fused_bound,
        "fused_deg_crlb_ratio": math.degrees(fuse(selected, ratio_w)),
        "fused_deg_exact_crlb": math.degrees(fuse(selected, exact_w)),
    }
    if args.dump_candidates:
        with open(args.dump_candidates, "w") as fh:
            fh.write("group\tindex\tangle_deg\tphase_rad\n")
            for cs in sets:
                for i, angle in enumerate(np.degrees(cs.angles)):
                    fh.write(f"{cs.group_index}\t{i}\t{angle!r}\t{cs.phase_hat!r}\n")
    if args.json:
        print(json.dumps(result, indent=2))
    else:
        for key, value in result.items():
            print(f"{key}: {value}")
    return 0


def _cmd_dataset(args) -> int:
    cfg = load_config(args.config)
    thetas = np.arange(args.theta_min, args.theta_max + 1e-9, args.theta_step)
    snrs = np.arange(args.snr_min, args.snr_max + 1e-9, args.snr_step)
    ds = mbdnn.generate_dataset(
        cfg,
        thetas_deg=thetas,
        snrs_db=snrs,
        trials_per_cell=args.trials,
        snapshots=args.snapshots,
        master_seed=args.seed,
    )
    ds.save_csv(args.out)
    print(f"wrote {args.out}: {len(ds)} samples, {ds.skipped} skipped")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    dataset = mbdnn.Dataset.load_csv(args.dataset)
    if args.model_in:
        model = mbdnn.load_model(args.model_in)
    else:
        model = mbdnn.init_model(mbdnn.MlpSpec.from_config(cfg), seed=args.seed)
    stages = ("mb_fcnn", "fusion_net") if args.stage == "all" else (args.stage,)
    for stage in stages:
        train_cfg = mbdnn.TrainConfig(
            stage=stage,
            epochs=args.epochs,
            batch_size=args.batch_size,
            lr=args.lr,
            seed=args.seed,
        )
        _, history = mbdnn.train(model, dataset, train_cfg)
        print(f"stage {stage}: final loss {history[-1]:.6g} deg^2")
    mbdnn.save_model(model, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_predict(args) -> int:
    scenario = _scenario(args)
    model = mbdnn.load_model(args.model)
    sets = group_candidates(scenario)
    prediction = mbdnn.predict_doa(model, sets)
    if args.json:
        print(json.dumps({"theta_hat_deg": prediction}))
    else:
        print(f"theta_hat_deg: {prediction}")
    return 0


def _cmd_bench(args) -> int:
    cfg = load_config(args.config)
    spec = bench_mod.BenchSpec(
        cfg=cfg,
        theta0_deg=args.theta0_deg,
        snr_grid=_parse_grid(args.snr_grid, float),
        snapshot_grid=_parse_grid(args.snapshot_grid, int),
        k_grid=_parse_grid(args.k_grid, int) if args.k_grid else None,
        trials=args.trials,
        methods=tuple(m.strip() for m in args.methods.split(",")),
        model_path=args.model,
        master_seed=args.seed,
    )
    try:
        spec.validate()
    except ValueError as err:
        raise ConfigError(str(err)) from err
    rows = bench_mod.run_sweep(spec)
    text = bench_mod.emit_csv(rows, args.out)
    if args.out:
        print(f"wrote {args.out} ({len(rows)} rows)")
    else:
        print(text, end="")
    if args.emit_plot_data:
        x_field = (
            "snapshots"
            if len(spec.snapshot_grid) > 1
            else "K" if spec.k_grid and len(spec.k_grid) > 1 else "snr_db"
        )
        for path in bench_mod.emit_plot_data(rows, args.emit_plot_data, x_field):
            print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="h2ad-doa",
        description="Grouped coprime-subarray DOA estimation and benchmarking",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config file and report N")
    p.add_argument("--config", required=True)
    p.set_defaults(handler=_cmd_validate)

    p = sub.add_parser("simulate", help="write per-group snapshot files")
    p.add_argument("--config", required=True)
    _add_scenario_args(p)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("estimate", help="run the estimation pipeline once")
    p.add_argument("--config", required=True)
    _add_scenario_args(p)
    p.add_argument("--json", action="store_true")
    p.add_argument("--dump-candidates", metavar="PATH")
    p.set_defaults(handler=_cmd_estimate)

    p = sub.add_parser("dataset", help="generate a training dataset CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--theta-min", type=float, default=-89.0)
    p.add_argument("--theta-max", type=float, default=89.0)
    p.add_argument("--theta-step", type=float, default=1.0)
    p.add_argument("--snr-min", type=float, default=-15.0)
    p.add_argument("--snr-max", type=float, default=15.0)
    p.add_argument("--snr-step", type=float, default=5.0)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--snapshots", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_dataset)

    p = sub.add_parser("train", help="train the fusion network")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--stage", choices=("mb_fcnn", "fusion_net", "joint", "all"),
                   default="all")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-in", help="continue from an existing model file")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("predict", help="network DOA prediction for one scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    _add_scenario_args(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=_cmd_predict)

    p = sub.add_parser("bench", help="Monte-Carlo RMSE sweep to CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--theta0-deg", type=float, default=41.0)
    p.add_argument("--snr-grid", default="-15,-10,-5,0,5,10,15")
    p.add_argument("--snapshot-grid", default="200")
    p.add_argument("--k-grid", default=None)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--methods", default="crlb_ratio")
    p.add_argument("--model", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--emit-plot-data", metavar="PREFIX")
    p.set_defaults(handler=_cmd_bench)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    try:
        return args.handler(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
