"""Command-line surface: train / eval / traverse / curves / ablate.

Each training run owns one output directory (guarded by a lock file) holding
the echoed config, an append-only JSONL step log, checkpoints, figures and
reports. Plots are always rendered from the emitted numeric tables, never
straight from memory. Exit codes: 0 success, 2 configuration errors, 3
runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
import zlib
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from . import config as cfgmod
from . import metrics as metricmod
from .data import FactorDataset, _batch_indices, denormalize_pixels, load_celeba_dir, load_dsprites, toy_dataset
from .errors import CheckpointError, ConfigError, MetricFailure, TrainingError
from .training import TrainState, ablation_variants, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class RunLockError(RuntimeError):
    pass


def _acquire_lock(run_dir: Path) -> Path:
    lock = run_dir / "run.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunLockError(
            f"{run_dir} is owned by another run (remove {lock} if that run is dead)"
        ) from None
    with os.fdopen(fd, "w") as fh:
        fh.write(f"pid={os.getpid()} time={time.time()}\n")
    return lock


def _load_dataset(cfg: cfgmod.ExperimentConfig) -> FactorDataset:
    data_cfg = cfg["data"]
    name = data_cfg["dataset"]
    if name == "toy":
        return toy_dataset()
    if name == "dsprites":
        if not data_cfg["path"]:
            raise ConfigError("data.path must point at the sprites archive for dataset=dsprites")
        return load_dsprites(data_cfg["path"])
    if name == "celeba":
        if not data_cfg["path"]:
            raise ConfigError("data.path must point at an image directory for dataset=celeba")
        return load_celeba_dir(data_cfg["path"], side=int(cfg["model"]["side"]))
    raise ConfigError(f"unknown dataset {name!r} (expected toy, dsprites or celeba)")


def _representation(state: TrainState, source: str):
    if source == "auto":
        source = "obe" if state.obe is not None else "encoder"
    if source == "obe":
        if state.obe is None:
            raise ConfigError("this checkpoint has no basis-expansion module")
        return metricmod.obe_representation(state.obe), "obe"
    if source == "encoder":
        return metricmod.encoder_representation(state.encoder), "encoder"
    raise ConfigError(f"unknown representation source {source!r}")


def _resolved_config(args, base: dict | None = None) -> cfgmod.ExperimentConfig:
    if args.config:
        cfg = cfgmod.load_config(args.config)
    elif base is not None:
        cfg = cfgmod.from_dict(base)
    else:
        raise ConfigError("--config is required")
    if args.set:
        cfg = cfgmod.apply_overrides(cfg, args.set)
    if getattr(args, "seed", None) is not None:
        cfg = cfgmod.apply_overrides(cfg, [f"run.seed={args.seed}"])
    return cfg


def _prepare_run_dir(out: str | None, cfg: cfgmod.ExperimentConfig) -> Path:
    target = out or cfg["run"]["out"]
    if not target:
        raise ConfigError("an output directory is required (--out or run.out)")
    run_dir = Path(target)
    run_dir.mkdir(parents=True, exist_ok=True)
    for sub in ("checkpoints", "figures", "reports"):
        (run_dir / sub).mkdir(exist_ok=True)
    return run_dir


def _train_into(run_dir: Path, cfg: cfgmod.ExperimentConfig, dataset: FactorDataset):
    """Shared by cmd_train and cmd_ablate: train one model into run_dir."""
    (run_dir / "config.yaml").write_text(cfg.to_yaml())
    train_cfg = cfg.train_config()
    log_path = run_dir / "log.jsonl"
    ckpt_dir = run_dir / "checkpoints"

    log_fh = open(log_path, "w")  # one run, one log; append-only within the run

    def on_step(state, report):
        log_fh.write(report.to_json() + "\n")
        log_fh.flush()

    def on_checkpoint(state):
        ckpt.save_checkpoint(
            ckpt_dir / f"ckpt_{state.iteration:06d}.npz",
            state,
            extra={"experiment": cfg.raw},
        )

    t0 = time.perf_counter()
    try:
        state, log = train(
            train_cfg,
            dataset,
            on_step=on_step,
            on_checkpoint=on_checkpoint,
            checkpoint_every=int(cfg["run"]["checkpoint_every"]),
        )
    finally:
        log_fh.close()
    summary = {
        "iterations": state.iteration,
        "wall_time_s": time.perf_counter() - t0,
        "final_checkpoint": str(ckpt_dir / f"ckpt_{state.iteration:06d}.npz"),
        "final_losses": None if not log.reports else json.loads(log.reports[-1].to_json()),
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    return state, summary


def cmd_train(args) -> int:
    cfg = _resolved_config(args)
    run_dir = _prepare_run_dir(args.out, cfg)
    lock = _acquire_lock(run_dir)
    try:
        dataset = _load_dataset(cfg)
        _train_into(run_dir, cfg, dataset)
    finally:
        lock.unlink(missing_ok=True)
    print(f"run complete: {run_dir}")
    return EXIT_OK


def _metric_plan(state: TrainState, dataset: FactorDataset, names: list[str]):
    """(metric, skip_reason) pairs; labeled-data metrics skip on unlabeled sets."""
    plan = []
    labeled = dataset.labeled and len(dataset.active_factors()) >= 2
    for name in names:
        if name in ("factorvae", "mig", "sap") and not labeled:
            plan.append((name, "requires factor labels"))
        elif name not in ("factorvae", "mig", "sap", "vp"):
            raise ConfigError(f"unknown metric {name!r}")
        else:
            plan.append((name, None))
    return plan


def _eval_checkpoint(
    state: TrainState,
    dataset: FactorDataset,
    cfg: cfgmod.ExperimentConfig,
    names: list[str],
    seeds: list[int],
    model_id: str,
) -> list[metricmod.MetricReport]:
    mc = cfg["metrics"]
    rep, rep_name = _representation(state, mc["representation"])
    reports = []
    for seed in seeds:
        scores: dict[str, float | None] = {}
        skipped: dict[str, str] = {}
        for name, reason in _metric_plan(state, dataset, names):
            if reason is not None:
                scores[name] = None
                skipped[name] = reason
                continue
            if name == "factorvae":
                scores[name] = metricmod.factorvae_score(
                    rep,
                    dataset,
                    votes=int(mc["factorvae_votes"]),
                    eval_votes=int(mc["factorvae_eval_votes"]),
                    batch_per_vote=int(mc["factorvae_batch"]),
                    seed=seed,
                )
            elif name == "mig":
                scores[name] = metricmod.mig_score(
                    rep, dataset, bins=int(mc["mig_bins"]), samples=int(mc["mig_samples"]), seed=seed
                )
            elif name == "sap":
                scores[name] = metricmod.sap_score(
                    rep, dataset, samples=int(mc["sap_samples"]), seed=seed
                )
            elif name == "vp":
                scores[name] = metricmod.vp_score(
                    state.generator,
                    k=state.config.k,
                    d=state.config.d,
                    train_ratio=float(mc["vp_train_ratio"]),
                    epochs=int(mc["vp_epochs"]),
                    pairs=int(mc["vp_pairs"]),
                    seed=seed,
                )
        reports.append(
            metricmod.MetricReport(
                model_id=model_id,
                seed=seed,
                scores=scores,
                protocol={**mc, "representation": rep_name, "iteration": state.iteration},
                skipped=skipped,
            )
        )
    return reports


def cmd_eval(args) -> int:
    state, header = ckpt.load_checkpoint(args.checkpoint)
    base = header.get("extra", {}).get("experiment")
    cfg = _resolved_config(args, base=base)
    dataset = _load_dataset(cfg)
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent.parent
    reports_dir = out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    model_id = Path(args.checkpoint).stem

    reports = _eval_checkpoint(state, dataset, cfg, names, seeds, model_id)
    for r in reports:
        (reports_dir / f"metrics_{model_id}_seed{r.seed}.json").write_text(r.to_json() + "\n")
    agg = metricmod.aggregate_reports(reports)
    table = metricmod.format_aggregate_table(agg)
    (reports_dir / f"metrics_{model_id}_aggregate.tsv").write_text(table)
    for r in reports:
        skip_note = f"  (skipped: {r.skipped})" if r.skipped else ""
        print(f"seed {r.seed}: {r.scores}{skip_note}")
    print(table, end="")
    return EXIT_OK


def _image_grid(images: np.ndarray) -> np.ndarray:
    """(rows, cols, C, n, n) in [-1, 1] -> uint8 grid (rows*n, cols*n [, 3])."""
    rows, cols, c, n, _ = images.shape
    grid = images.transpose(0, 3, 1, 4, 2).reshape(rows * n, cols * n, c)
    grid = denormalize_pixels(grid)
    return grid[..., 0] if c == 1 else grid


def cmd_traverse(args) -> int:
    from PIL import Image

    state, _ = ckpt.load_checkpoint(args.checkpoint)
    g = state.generator
    k = state.config.k
    dims = list(range(k)) if args.dims == "all" else [int(x) for x in args.dims.split(",")]
    for dim in dims:
        if not (0 <= dim < k):
            raise ConfigError(f"dim {dim} out of range for k={k}")
    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent.parent
    fig_dir = out / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)

    gen = torch.Generator().manual_seed(args.seed)
    z = torch.randn(args.rows, state.config.d, generator=gen)
    base_c = torch.rand(args.rows, k, generator=gen) * 2 - 1
    sweep = torch.linspace(-1.0, 1.0, args.steps) if args.steps > 1 else torch.zeros(1)
    g.eval()
    written = []
    for dim in dims:
        panels = np.empty(
            (args.rows, args.steps, state.config.channels, state.config.side, state.config.side),
            dtype=np.float32,
        )
        with torch.no_grad():
            for col, value in enumerate(sweep):
                c = base_c.clone()
                c[:, dim] = value
                panels[:, col] = g(z, c).numpy()
        path = fig_dir / f"traverse_dim{dim}.png"
        Image.fromarray(_image_grid(panels)).save(path)
        written.append(str(path))
    print("\n".join(written))
    return EXIT_OK


def _write_curve_table(path: Path, curves: metricmod.CurveSet) -> None:
    k = curves.values.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sweep"] + [f"coeff_{i}" for i in range(k)])
        for s in range(len(curves.sweep)):
            writer.writerow([repr(float(curves.sweep[s]))] + [repr(float(v)) for v in curves.values[:, s]])


def _read_curve_table(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.asarray([[float(v) for v in row] for row in body])
    return data[:, 0], data[:, 1:].T  # sweep, (k, S)


def _plot_curve_table(table_path: Path, fig_path: Path, dim: int) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sweep, values = _read_curve_table(table_path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for i, row in enumerate(values):
        style = {"linewidth": 2.2} if i == dim else {"linewidth": 1.0, "alpha": 0.6}
        ax.plot(sweep, row, label=f"coeff {i}", **style)
    ax.set_xlabel(f"code dim {dim}")
    ax.set_ylabel("selected coefficient")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def cmd_curves(args) -> int:
    state, _ = ckpt.load_checkpoint(args.checkpoint)
    if state.obe is None:
        raise ConfigError("curves need a checkpoint with the basis-expansion module")
    k = state.config.k
    dims = list(range(k)) if args.dim == "all" else [int(args.dim)]
    for dim in dims:
        if not (0 <= dim < k):
            raise ConfigError(f"dim {dim} out of range for k={k}")
    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent.parent
    reports_dir = out / "reports"
    fig_dir = out / "figures"
    reports_dir.mkdir(parents=True, exist_ok=True)
    fig_dir.mkdir(parents=True, exist_ok=True)

    sweep = np.linspace(-1.0, 1.0, args.sweep_steps)
    selectivity = {"basis_mode": state.obe.basis.mode, "per_dim": {}}
    for dim in dims:
        curves = metricmod.correlation_curves(
            state.generator, state.obe, dim, sweep, seed=args.seed
        )
        table_path = reports_dir / f"curves_{state.obe.basis.mode}_dim{dim}.csv"
        _write_curve_table(table_path, curves)
        _plot_curve_table(table_path, fig_dir / f"curves_{state.obe.basis.mode}_dim{dim}.png", dim)
        tv = curves.total_variation()
        others = np.delete(tv, dim)
        selectivity["per_dim"][str(dim)] = {
            "matched_tv": float(tv[dim]),
            "max_unmatched_tv": float(others.max()) if len(others) else 0.0,
            "selectivity_ratio": curves.selectivity(),
        }
        print(f"dim {dim}: selectivity {selectivity['per_dim'][str(dim)]['selectivity_ratio']:.3f}")
    sel_path = reports_dir / f"curve_selectivity_{state.obe.basis.mode}.json"
    sel_path.write_text(json.dumps(selectivity, indent=2))
    print(f"selectivity report: {sel_path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolved_config(args)
    run_dir = _prepare_run_dir(args.out, cfg)
    lock = _acquire_lock(run_dir)
    try:
        dataset = _load_dataset(cfg)
        variants = ablation_variants(cfg.train_config())
        names = [m.strip() for m in args.metrics.split(",") if m.strip()]
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]

        # seed audit: every variant must consume the identical batch stream
        probe = [
            idx.tolist()
            for _, idx in zip(
                range(3), _batch_indices(len(dataset), cfg.train_config().batch, cfg.seed, True)
            )
        ]
        audit = {
            "seed": cfg.seed,
            "first_batches_checksum": zlib.crc32(json.dumps(probe).encode()),
        }

        rows = {}
        failures = {}
        for variant_name, variant_cfg in variants.items():
            vdir = run_dir / variant_name
            vdir.mkdir(exist_ok=True)
            for sub in ("checkpoints", "figures", "reports"):
                (vdir / sub).mkdir(exist_ok=True)
            vcfg = cfgmod.from_dict(
                {
                    **cfg.raw,
                    "ablation": {
                        "obe_off": variant_cfg.obe_off,
                        "alternating_off": variant_cfg.alternating_off,
                        "infogan_term_off": variant_cfg.infogan_term_off,
                    },
                }
            )
            try:
                state, _ = _train_into(vdir, vcfg, dataset)
                reports = _eval_checkpoint(
                    state, dataset, vcfg, names, seeds, model_id=variant_name
                )
                agg = metricmod.aggregate_reports(reports)
                rows[variant_name] = {name: agg.get(name) for name in names}
            except (TrainingError, MetricFailure) as exc:
                failures[variant_name] = str(exc)
                rows[variant_name] = {name: None for name in names}

        lines = ["variant\t" + "\t".join(names)]
        for variant_name, scores in rows.items():
            cells = []
            for name in names:
                entry = scores.get(name)
                cells.append("-" if entry is None else f"{entry[0]:.4f}±{entry[1]:.4f}")
            lines.append(variant_name + "\t" + "\t".join(cells))
        table = "\n".join(lines) + "\n"
        report = {
            "table": table,
            "seed_audit": audit,
            "failures": failures,
            "reference_full_scale": metricmod.REFERENCE_SCORES["alternating_ablation"],
        }
        (run_dir / "reports" / "ablation.json").write_text(json.dumps(report, indent=2))
        (run_dir / "reports" / "ablation.tsv").write_text(table)
        print(table, end="")
    finally:
        lock.unlink(missing_ok=True)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obegan", description="Train and evaluate basis-expansion disentanglement models"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required: bool):
        p.add_argument("--config", required=config_required, help="YAML experiment config")
        p.add_argument("--set", action="append", default=[], metavar="KEY.PATH=VALUE")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")

    p_train = sub.add_parser("train", help="run the training loop")
    add_common(p_train, config_required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint with the metric suite")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--metrics", default="factorvae,mig,sap,vp")
    p_eval.add_argument("--seeds", default="0")
    add_common(p_eval, config_required=False)
    p_eval.set_defaults(func=cmd_eval)

    p_trav = sub.add_parser("traverse", help="emit latent traversal image grids")
    p_trav.add_argument("--checkpoint", required=True)
    p_trav.add_argument("--dims", default="all")
    p_trav.add_argument("--steps", type=int, default=8)
    p_trav.add_argument("--rows", type=int, default=6)
    p_trav.add_argument("--out", default=None)
    p_trav.add_argument("--seed", type=int, default=0)
    p_trav.set_defaults(func=cmd_traverse)

    p_curv = sub.add_parser("curves", help="code-vs-coefficient correlation curves")
    p_curv.add_argument("--checkpoint", required=True)
    p_curv.add_argument("--dim", default="all")
    p_curv.add_argument("--sweep-steps", type=int, default=21, dest="sweep_steps")
    p_curv.add_argument("--out", default=None)
    p_curv.add_argument("--seed", type=int, default=0)
    p_curv.set_defaults(func=cmd_curves)

    p_abl = sub.add_parser("ablate", help="train and compare the ablation variants")
    add_common(p_abl, config_required=True)
    p_abl.add_argument("--metrics", default="factorvae,mig,sap")
    p_abl.add_argument("--seeds", default="0")
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, MetricFailure, CheckpointError, RunLockError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
