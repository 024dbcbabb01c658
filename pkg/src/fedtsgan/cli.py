"""Command-line entry point: gen-data, train, evaluate, audit, account,
calibrate.

Every run directory is self-describing: it holds a copy of the config, a
manifest (config hash, resolved seeds, package version, any calibration
result) and machine-readable outputs (CSV histories and breakdowns, JSON
reports). Identical config and seeds reproduce every byte.

Exit codes: 0 success, 2 config error, 3 numerical divergence,
4 infeasible calibration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, accounting, audit as audit_mod, metrics
from .config import ConfigError, ExperimentConfig, build_dataset, parse_config
from .data import partition, save_csv, save_sidecar
from .dpmech import DpParams
from .federation import (
    GeneratorBank,
    TrainResult,
    bank_from_state,
    synthesize,
    train,
)
from . import nn

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_INFEASIBLE = 4


def _out_dir(cfg: ExperimentConfig) -> Path:
    root = os.environ.get("FEDTSGAN_OUTPUT_ROOT")
    out = Path(root) / cfg.output_dir if root else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, cfg: ExperimentConfig, extra: dict | None = None):
    manifest = {
        "version": __version__,
        "config_sha256": hashlib.sha256(cfg.raw_text.encode()).hexdigest(),
        "dataset_seed": cfg.dataset.get("seed"),
        "train_seed": cfg.train.seed,
    }
    manifest.update(extra or {})
    (out / "config.ini").write_text(cfg.raw_text)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(path: str) -> ExperimentConfig:
    try:
        return parse_config(path)
    except (ConfigError, FileNotFoundError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    dataset = build_dataset(cfg)
    out = _out_dir(cfg)
    save_csv(dataset, out / "data.csv")
    save_sidecar(dataset, out / "data.meta.json")
    _write_manifest(out, cfg, {"n_samples": dataset.n_samples})
    print(f"wrote {dataset.n_samples} samples to {out / 'data.csv'}")
    return EXIT_OK


def _resolve_dp(cfg: ExperimentConfig, n_samples: int) -> dict:
    """Budget mode: pick sigma through the accountant for this run's
    sampling rate and iteration count."""
    extra: dict = {}
    if cfg.dp is not None and cfg.dp.budget_mode:
        gamma = cfg.train.batch_size / n_samples
        sigma, steps, achieved = accounting.calibrate(
            cfg.dp.epsilon, cfg.dp.delta, gamma, cfg.train.max_iters
        )
        cfg.train.dp = DpParams(cfg.dp.clip, sigma)
        extra["calibration"] = {
            "sigma": sigma,
            "t_max": steps,
            "achieved_epsilon": achieved,
            "epsilon_target": cfg.dp.epsilon,
            "delta": cfg.dp.delta,
            "gamma": gamma,
        }
    return extra


def _write_history(path: Path, history: list[dict]):
    keys: list[str] = ["iteration"]
    for row in history:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in history:
            writer.writerow({k: _fmt(row.get(k)) for k in keys})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return v


def save_bank(bank: GeneratorBank, path: Path):
    nn.save_models(path, {f"g{a}": g for a, g in bank.generators.items()})
    sidecar = {
        "latent_dim": bank.latent_dim,
        "t_steps": bank.t_steps,
        "meta": bank.meta,
    }
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bank(path: Path) -> GeneratorBank:
    models = nn.load_models(path)
    with open(Path(path).with_suffix(".json")) as fh:
        sidecar = json.load(fh)
    return GeneratorBank(
        {int(name[1:]): m for name, m in models.items()},
        sidecar["latent_dim"],
        sidecar["t_steps"],
        sidecar["meta"],
    )


def run_training(cfg: ExperimentConfig) -> tuple[TrainResult, dict]:
    dataset = build_dataset(cfg)
    views = partition(dataset, cfg.assignment)
    extra = _resolve_dp(cfg, dataset.n_samples)
    result = train(cfg.train, views)
    return result, extra


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    result, extra = run_training(cfg)
    out = _out_dir(cfg)
    _write_history(out / "history.csv", result.history)
    save_bank(result.best_bank, out / "best_generators.npz")
    save_bank(bank_from_state(result.state), out / "final_generators.npz")
    extra.update(
        {
            "best_awd": result.best_awd,
            "best_iteration": result.best_iteration,
            "diverged": result.diverged,
            "topology": cfg.train.topology,
        }
    )
    _write_manifest(out, cfg, extra)
    print(
        f"trained {cfg.train.topology} for {result.state.iteration} iterations; "
        f"best awd {result.best_awd:.6g} at iteration {result.best_iteration}"
    )
    return EXIT_DIVERGED if result.diverged else EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    dataset = build_dataset(cfg)
    ev = cfg.eval
    out = _out_dir(cfg)

    if ev.get("control") == "identity":
        synth = dataset
    else:
        checkpoint = args.checkpoint or ev.get("checkpoint")
        if not checkpoint:
            raise ConfigError("evaluate needs a checkpoint (flag or [eval] section)")
        bank = load_bank(Path(checkpoint))
        n = int(ev.get("synth_samples", dataset.n_samples))
        synth = synthesize(bank, n, int(ev.get("seed", 0)))

    report: dict = {"metrics": {}}
    wanted = [m.strip() for m in ev.get("metrics", "awd").split(",") if m.strip()]
    if "awd" in wanted:
        value, cells = metrics.awd_breakdown(dataset, synth)
        report["metrics"]["awd"] = value
        with open(out / "awd_cells.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["attribute", "time_step", "wd"])
            for a in range(cells.shape[0]):
                for t in range(cells.shape[1]):
                    writer.writerow([a, t, f"{cells[a, t]:.17g}"])
    if "amplitude_awd" in wanted:
        report["metrics"]["amplitude_awd"] = metrics.amplitude_awd(dataset, synth)
    if "mae" in wanted:
        report["metrics"]["mae"] = metrics.sine_mae(synth, dataset.frequencies())
    if "pca" in wanted:
        proj = metrics.pca_2d([dataset, synth])
        with open(out / "pca_coords.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source", "pc1", "pc2"])
            for label, coords in zip(("real", "synth"), proj.coords):
                for row in coords:
                    vals = [f"{v:.17g}" for v in row] + [""] * (2 - row.size)
                    writer.writerow([label] + vals)
        report["metrics"]["pca_explained_ratio"] = proj.explained_ratio
        report["metrics"]["pca_degenerate"] = proj.degenerate

    task = ev.get("task")
    if task:
        n_test = max(1, dataset.n_samples // 4)
        real_train = _subset(dataset, slice(0, dataset.n_samples - n_test))
        real_test = _subset(dataset, slice(dataset.n_samples - n_test, None))
        tpd_report = metrics.tpd(real_train, real_test, synth, task, seed=int(ev.get("seed", 0)))
        report["metrics"]["tpd"] = tpd_report.value
        report["tpd_breakdown"] = tpd_report.breakdown

    with open(out / "evaluation.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, cfg)
    print(json.dumps(report["metrics"], indent=2, sort_keys=True))
    return EXIT_OK


def _subset(dataset, sl):
    from .data import TimeSeriesDataset

    return TimeSeriesDataset(
        dataset.data[sl],
        None if dataset.labels is None else dataset.labels[sl],
        list(dataset.attribute_names),
        dict(dataset.meta),
    )


def make_trainer(cfg: ExperimentConfig, n_synth: int | None = None):
    """Shadow-run trainer for the audit: retrains the configured federation
    on whatever dataset the audit hands it, with the given seed."""

    def trainer(dataset, seed):
        train_cfg = TrainConfigCopy(cfg.train, seed)
        views = partition(dataset, cfg.assignment)
        result = train(train_cfg, views)
        if result.diverged:
            return None
        n = n_synth or dataset.n_samples
        return synthesize(result.best_bank, n, seed)

    return trainer


def TrainConfigCopy(base, seed):
    from dataclasses import replace

    return replace(base, seed=seed)


def cmd_audit(args) -> int:
    cfg = _load_config(args.config)
    dataset = build_dataset(cfg)
    au = cfg.audit
    out = _out_dir(cfg)
    audit_cfg = audit_mod.AuditConfig(
        shadow_pairs=int(au.get("shadow_pairs", 10)),
        knn_k=int(au.get("knn_k", 5)),
        candidate_m=int(au.get("candidate_m", 10)),
        norm=int(au.get("norm", 2)),
        seed=int(au.get("seed", 0)),
    )
    trainer = make_trainer(cfg, n_synth=int(au["synth_samples"]) if "synth_samples" in au else None)

    selector = au.get("selector", "outlier")
    if selector == "outlier":
        target = audit_mod.select_target_outlier(dataset, audit_cfg.norm)
    elif selector == "influential":
        target = audit_mod.select_target_influential(
            dataset, trainer, audit_cfg.candidate_m, audit_cfg.knn_k, audit_cfg.norm, audit_cfg.seed
        )
    else:
        try:
            target = int(selector)
        except ValueError:
            raise ConfigError(f"selector must be outlier, influential, or an index; got {selector!r}")

    report = audit_mod.run_assd(dataset, target, trainer, audit_cfg, selector=selector)
    rounds = int(au.get("rounds", 0))
    if rounds > 0:
        adversary = audit_mod.threshold_adversary(report, dataset, audit_cfg)
        report.win_rate = audit_mod.loo_game(
            dataset, target, trainer, adversary, rounds, audit_cfg.seed
        )

    with open(out / "audit.json", "w") as fh:
        json.dump(
            {
                "target_index": report.target_index,
                "selector": report.selector,
                "auc": report.auc,
                "win_rate": report.win_rate,
                "invalid_runs": report.invalid_runs,
                "config": report.config,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    with open(out / "audit_features.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["world", "feature"])
        for world, feats in ((0, report.features_world0), (1, report.features_world1)):
            for f in feats:
                writer.writerow([world, f"{f:.17g}"])
    _write_manifest(out, cfg)
    print(f"target {report.target_index} ({selector}): auc {report.auc:.4f}")
    return EXIT_OK


def cmd_account(args) -> int:
    alphas = accounting.DEFAULT_ALPHAS
    rows = []
    for mode, name in ((False, "eps_discriminator"), (True, "eps_generator")):
        curve = accounting.compose(
            accounting.subsample_amplify(args.sigma, args.gamma, alphas, mode), args.steps
        )
        rows.append((name, curve))
    writer = csv.writer(sys.stdout)
    writer.writerow(["alpha"] + [name for name, _ in rows])
    for i, alpha in enumerate(alphas):
        writer.writerow([alpha] + [f"{curve.eps[i]:.12g}" for _, curve in rows])
    report = accounting.privacy_report(args.sigma, args.gamma, args.steps, args.delta, alphas)
    for surface in ("external", "internal"):
        for model in ("discriminator", "generator"):
            entry = report[surface][model]
            writer.writerow(
                [f"final_{surface}_{model}", f"{entry['epsilon']:.12g}", f"alpha={entry['alpha']}"]
            )
    return EXIT_OK


def cmd_calibrate(args) -> int:
    sigma, steps, achieved = accounting.calibrate(
        args.epsilon, args.delta, args.gamma, args.steps
    )
    print(f"sigma,{sigma:.2f}")
    print(f"t_max,{steps}")
    print(f"achieved_epsilon,{achieved:.12g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedtsgan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (
        ("gen-data", cmd_gen_data),
        ("train", cmd_train),
        ("audit", cmd_audit),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.set_defaults(fn=fn)

    p = sub.add_parser("evaluate")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("account")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.set_defaults(fn=cmd_account)

    p = sub.add_parser("calibrate")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.set_defaults(fn=cmd_calibrate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except accounting.InfeasibleBudgetError as exc:
        print(f"infeasible calibration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
