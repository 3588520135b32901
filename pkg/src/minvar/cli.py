"""Command-line entry point for reproducible experiments.

Subcommands: train, backtest, analyze, verify-theory, synth-data.
Every run materializes all config defaults, echoes the resulting JSON into
the output directory, and writes deterministic CSVs under
``out/<name>/{checkpoints,reports,configs}``.

Exit codes: 0 success, 2 config or validation error, 3 runtime failure.

Heavy imports happen inside the command handlers so that ``--threads`` can
cap the BLAS thread pools through environment variables before the numeric
stack loads.
"""
import argparse
import copy
import json
import os
import sys
from pathlib import Path

from .errors import (
    CheckpointError,
    IngestionError,
    InsufficientHistoryError,
    InvalidConfigError,
    MinvarError,
    UniverseTooSmallError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CONFIG_ERRORS = (
    InvalidConfigError,
    IngestionError,
    UniverseTooSmallError,
    InsufficientHistoryError,
)

DEFAULT_CONFIG = {
    "name": "experiment",
    "data": {"synthetic": {"n_assets": 10, "n_days": 4000, "seed": 100}},
    "filter_threshold": None,
    "delta_in": 21,
    "delta_out": 21,
    "split": {"valid_frac": 0.2, "test_frac": 0.2},
    "strategies": ["EW", "Historical", "LW-D", "LW-CC", "OAS", "PFL", "DFL"],
    "train": {
        "grid": [
            {"objective": "dfl", "learning_rate": 3e-4, "batch_size": 32},
            {"objective": "pfl", "learning_rate": 1e-5, "batch_size": 16},
        ],
        "max_epochs": 50,
        "patience": 7,
        "init_scale": 0.01,
    },
    "seeds": [0, 1, 2],
    "ablation": None,
    "analyze": {"strategy": "DFL", "k": 3, "lower_pct": 2.5, "upper_pct": 97.5},
    "theory": {"n_instances": 100, "n_assets": [4, 6, 8]},
    "out": "out",
}


def _deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(path: str | None) -> dict:
    """Merge the user's JSON config over the defaults."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    p = Path(path)
    if not p.exists():
        raise InvalidConfigError(f"no such config file: {p}")
    try:
        user = json.loads(p.read_text())
    except ValueError as exc:
        raise InvalidConfigError(f"{p}: invalid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise InvalidConfigError(f"{p}: config must be a JSON object")
    unknown = set(user) - set(DEFAULT_CONFIG)
    if unknown:
        raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
    return _deep_merge(DEFAULT_CONFIG, user)


def experiment_dir(config: dict) -> Path:
    root = Path(config["out"]) / str(config["name"])
    for sub in ("checkpoints", "reports", "configs"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    return root


def echo_config(config: dict, exp_dir: Path) -> None:
    (exp_dir / "configs" / "config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n"
    )


def _build_panel(config: dict, seed_offset: int):
    """Panel for one experiment seed: CSV input or a synthetic draw."""
    from . import data

    source = config["data"]
    if "csv" in source and source.get("csv"):
        panel = data.load_returns(source["csv"])
    elif "synthetic" in source and source.get("synthetic"):
        synth = source["synthetic"]
        spec = data.two_regime_universe(int(synth["n_assets"]))
        panel = data.generate_synthetic(
            int(synth["n_assets"]),
            int(synth["n_days"]),
            int(synth["seed"]) + seed_offset,
            spec,
        )
    else:
        raise InvalidConfigError("data source must provide 'csv' or 'synthetic'")
    if config.get("filter_threshold") is not None:
        panel = data.filter_universe(panel, float(config["filter_threshold"]))
    return panel


def _prepare(config: dict, seed_offset: int):
    """Returns (panel, train, valid, test, lead) where lead = test + lead-in."""
    from . import data

    panel = _build_panel(config, seed_offset)
    split = data.SplitSpec(
        1.0 - config["split"]["valid_frac"] - config["split"]["test_frac"],
        config["split"]["valid_frac"],
        config["split"]["test_frac"],
    )
    train, valid, test = data.split_panel(panel, split)
    start = panel.n_days - test.n_days - config["delta_in"]
    if start < 0:
        raise InsufficientHistoryError("panel too short for the test lead-in window")
    lead = data.ReturnsPanel(
        dates=list(panel.dates[start:]),
        tickers=list(panel.tickers),
        values=panel.values[start:].copy(),
    )
    return panel, train, valid, test, lead


def _checkpoint_path(exp_dir: Path, objective: str, seed: int) -> Path:
    return exp_dir / "checkpoints" / f"{objective}_seed{seed}.ckpt"


def _objectives_for(config: dict) -> list:
    from . import backtest

    wanted = []
    for kind in config["strategies"]:
        if kind in backtest.LEARNED_KINDS:
            wanted.append("dfl" if kind == backtest.KIND_DFL else "pfl")
    return wanted


def cmd_train(config: dict) -> int:
    from . import data, forecaster, training
    from .reportio import write_report

    exp_dir = experiment_dir(config)
    echo_config(config, exp_dir)
    objectives = _objectives_for(config)
    if not objectives:
        raise InvalidConfigError("no learned strategy (PFL/DFL) in strategies list")
    if not config["seeds"]:
        raise InvalidConfigError("seeds list must be nonempty for training")
    tr_cfg = config["train"]
    for objective in objectives:
        entries = [g for g in tr_cfg["grid"] if g.get("objective") == objective]
        if not entries:
            raise InvalidConfigError(f"train grid has no entry for {objective!r}")
        for s in config["seeds"]:
            _, train_p, valid_p, _, _ = _prepare(config, s)
            tr = data.make_windows(train_p, config["delta_in"], config["delta_out"])
            va = data.make_windows(valid_p, config["delta_in"], config["delta_out"])
            grid = [
                training.TrainConfig(
                    objective=objective,
                    learning_rate=float(g["learning_rate"]),
                    batch_size=int(g["batch_size"]),
                    seed=s,
                    delta_in=config["delta_in"],
                    delta_out=config["delta_out"],
                    max_epochs=int(tr_cfg["max_epochs"]),
                    patience=int(tr_cfg["patience"]),
                    h_dim=int(g.get("h_dim", forecaster.H_DIM_DEFAULT)),
                )
                for g in entries
            ]
            (best_cfg, params, record), results = training.grid_search(
                grid, tr, va, init_scale=float(tr_cfg["init_scale"])
            )
            forecaster.save_checkpoint(
                _checkpoint_path(exp_dir, objective, s),
                params,
                meta={
                    "objective": objective,
                    "seed": s,
                    "learning_rate": best_cfg.learning_rate,
                    "batch_size": best_cfg.batch_size,
                    "best_epoch": record.best_epoch,
                },
            )
            base = exp_dir / "checkpoints" / f"{objective}_seed{s}"
            write_report(
                f"{base}_record.csv",
                "train_record.v1",
                ["epoch", "train_loss", "valid_loss", "seconds", "is_best"],
                [
                    [e, tl, vl, sec, int(e == record.best_epoch)]
                    for e, (tl, vl, sec) in enumerate(
                        zip(record.train_loss, record.valid_loss, record.seconds)
                    )
                ],
            )
            write_report(
                f"{base}_grid.csv",
                "train_grid.v1",
                [
                    "objective",
                    "learning_rate",
                    "batch_size",
                    "best_epoch",
                    "best_valid_loss",
                    "stopping_reason",
                    "skipped",
                ],
                [
                    [
                        c.objective,
                        c.learning_rate,
                        c.batch_size,
                        r.best_epoch,
                        r.valid_loss[r.best_epoch],
                        r.stopping_reason,
                        r.skipped_samples,
                    ]
                    for c, _, r in results
                ],
            )
            print(f"trained {objective} seed {s}: best epoch {record.best_epoch}")
    return EXIT_OK


def cmd_backtest(config: dict) -> int:
    import numpy as np

    from . import backtest, forecaster

    exp_dir = experiment_dir(config)
    echo_config(config, exp_dir)
    strategies = config["strategies"]
    seeds = config["seeds"]
    if not seeds:
        raise InvalidConfigError("seeds list must be nonempty")
    seed_dependent = "synthetic" in config["data"] and config["data"].get("synthetic")

    vols: dict = {kind: [] for kind in strategies}
    errors: dict = {}
    all_reports = []
    for s in seeds:
        if seed_dependent or s == seeds[0]:
            kinds = list(strategies)
        else:
            # fixed CSV panel: deterministic strategies are seed-independent
            kinds = [k for k in strategies if k in backtest.LEARNED_KINDS]
        if not kinds:
            continue
        _, _, _, _, lead = _prepare(config, s)
        models = {}
        for kind in [k for k in kinds if k in backtest.LEARNED_KINDS]:
            objective = "dfl" if kind == backtest.KIND_DFL else "pfl"
            try:
                params, _ = forecaster.load_checkpoint(
                    _checkpoint_path(exp_dir, objective, s)
                )
                models[kind] = {s: params}
            except CheckpointError as exc:
                errors.setdefault(kind, str(exc))
                kinds.remove(kind)
        rows, reports = backtest.run_suite(
            kinds, lead, config["delta_in"], config["delta_out"], models
        )
        for row in rows:
            if row.error:
                errors.setdefault(row.strategy, row.error)
            else:
                vols[row.strategy].append(row.mean_vol)
        for report in reports:
            report.seed = s
            all_reports.append(report)

    table = []
    for kind in strategies:
        if kind in errors:
            table.append(backtest.SuiteRow(kind, None, None, 0, error=errors[kind]))
            continue
        v = vols[kind]
        table.append(
            backtest.SuiteRow(
                kind,
                float(np.mean(v)),
                float(np.std(v)) if len(v) > 1 else None,
                len(v),
            )
        )
    backtest.write_vol_table(table, exp_dir / "reports" / "vol_table.csv")
    backtest.write_weights_history(
        all_reports, exp_dir / "reports" / "weights_history.csv"
    )

    if config.get("ablation"):
        ab = config["ablation"]
        kind = ab.get("strategy", backtest.KIND_HISTORICAL)
        if kind not in (backtest.KIND_EW,) + backtest.ESTIMATOR_KINDS:
            raise InvalidConfigError(
                f"ablation supports estimator strategies only, got {kind!r}"
            )
        panel, _, _, _, _ = _prepare(config, seeds[0])
        grid = backtest.delta_ablation(
            lambda din, dout: backtest.Strategy(kind),
            panel,
            list(ab["delta_in"]),
            list(ab["delta_out"]),
        )
        backtest.write_ablation_grid(
            grid,
            list(ab["delta_in"]),
            list(ab["delta_out"]),
            exp_dir / "reports" / "ablation_grid.csv",
        )

    for row in table:
        cell = "FAILED" if row.error else f"{row.mean_vol:.6f}"
        print(f"{row.strategy}: {cell}")
    return EXIT_RUNTIME if errors else EXIT_OK


def _read_weights_history(path: Path):
    import csv

    import numpy as np

    if not path.exists():
        raise InvalidConfigError(f"missing backtest artifact: {path}")
    with path.open() as fh:
        schema = fh.readline()
        if not schema.startswith("# schema=weights_history"):
            raise InvalidConfigError(f"{path}: unexpected schema line {schema!r}")
        reader = csv.reader(fh)
        header = next(reader)
        tickers = header[3:]
        history: dict = {}
        for row in reader:
            history.setdefault(row[0], []).append([float(x) for x in row[3:]])
    return tickers, {k: np.array(v) for k, v in history.items()}


def cmd_analyze(config: dict) -> int:
    from . import analysis
    from .covariance import sample_cov
    from .gmvp import solve_gmvp_full

    exp_dir = experiment_dir(config)
    echo_config(config, exp_dir)
    reports_dir = exp_dir / "reports"
    tickers, history = _read_weights_history(reports_dir / "weights_history.csv")
    _, train_p, _, test_p, _ = _prepare(config, config["seeds"][0] if config["seeds"] else 0)
    if list(train_p.tickers) != list(tickers):
        raise InvalidConfigError(
            "weights history tickers do not match the configured data source"
        )

    opts = config["analyze"]
    target = opts["strategy"]
    if target not in history:
        raise InvalidConfigError(
            f"strategy {target!r} not present in weights history"
        )

    precision = solve_gmvp_full(sample_cov(train_p.values)).precision
    perm = analysis.bbc_reorder(precision)
    analysis.write_precision_reordered(
        precision, perm, tickers, reports_dir / "precision_reordered.csv"
    )
    analysis.write_permutation(perm, tickers, reports_dir / "permutation.csv")

    weights = history[target]
    report = analysis.attribution(weights.mean(axis=0), sample_cov(test_p.values))
    analysis.write_attribution_regions(
        report, reports_dir / "attribution_regions.csv"
    )

    k = int(opts["k"])
    entries = [
        (kind, k, analysis.volatility_rank_precision(train_p.values, history[kind], k))
        for kind in config["strategies"]
        if kind in history
    ]
    analysis.write_rank_precision(entries, reports_dir / "rank_precision.csv")

    env = analysis.weight_distribution(
        weights, float(opts["lower_pct"]), float(opts["upper_pct"])
    )
    analysis.write_weight_envelope(env, tickers, reports_dir / "weight_envelope.csv")
    print(f"analysis reports written to {reports_dir}")
    return EXIT_OK


def cmd_verify_theory(config: dict, base_seed: int) -> int:
    from . import theory

    exp_dir = experiment_dir(config)
    echo_config(config, exp_dir)
    opts = config["theory"]
    entries = theory.certify(
        int(opts["n_instances"]), [int(n) for n in opts["n_assets"]], base_seed
    )
    theory.write_theory_report(entries, exp_dir / "reports" / "theory_report.csv")
    n_pass = sum(1 for e in entries if e.lift.pass_charpoly)
    print(
        f"certified {len(entries)} instances; "
        f"characteristic-polynomial identity passed on {n_pass}"
    )
    return EXIT_OK


def cmd_synth_data(config: dict) -> int:
    exp_dir = experiment_dir(config)
    echo_config(config, exp_dir)
    if not config["data"].get("synthetic"):
        raise InvalidConfigError("synth-data requires a synthetic data source")
    panel = _build_panel(config, 0)
    out_path = exp_dir / "reports" / "synthetic_returns.csv"
    with out_path.open("w") as fh:
        fh.write("date," + ",".join(panel.tickers) + "\n")
        for t in range(panel.n_days):
            row = ",".join(f"{x:.17g}" for x in panel.values[t])
            fh.write(f"{panel.dates[t]},{row}\n")
    print(f"wrote {panel.n_days} x {panel.n_assets} returns to {out_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="minvar",
        description="Decision-focused covariance forecasting experiments",
    )
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--out", help="output root (overrides config)")
    parser.add_argument("--seed", type=int, help="override the config seeds list")
    parser.add_argument("--threads", type=int, help="cap BLAS thread pools")
    parser.add_argument(
        "command",
        choices=["train", "backtest", "analyze", "verify-theory", "synth-data"],
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ[var] = str(args.threads)
    try:
        config = load_config(args.config)
        if args.out is not None:
            config["out"] = args.out
        if args.seed is not None:
            config["seeds"] = [args.seed]
        if args.command == "train":
            return cmd_train(config)
        if args.command == "backtest":
            return cmd_backtest(config)
        if args.command == "analyze":
            return cmd_analyze(config)
        if args.command == "verify-theory":
            return cmd_verify_theory(config, args.seed if args.seed is not None else 0)
        return cmd_synth_data(config)
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MinvarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
