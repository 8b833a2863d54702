"""Experiment runner CLI.

Usage: spikefed run <config> [-o DIR] [--seed N] [--dry-run]

Writes history.csv, credits.csv, energy.csv, distribution.csv and
summary.json into the output directory. Files are written to temporary
names and renamed on success, so a failed run leaves nothing partial
behind. Reruns with identical configs produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile

from . import metrics
from .config import (
    ConfigError,
    ExperimentConfig,
    build_datasets,
    build_network_config,
    build_partition,
    parse_config,
)
from .federation import RoundRecord, run_federation
from .selection import credit_csv_row

__all__ = ["main", "run"]


def _fmt(value: float) -> str:
    return repr(float(value))


def _history_rows(history: list[RoundRecord]) -> list[str]:
    rows = ["round,candidates,credits,selected,test_accuracy,flops,sops"]
    for rec in history:
        credits = "|".join(f"{c.client_id}:{_fmt(c.delta_r)}" for c in rec.credits)
        rows.append(",".join([
            str(rec.round),
            "|".join(str(c) for c in rec.candidate_ids),
            credits,
            "|".join(str(c) for c in rec.selected_ids),
            _fmt(rec.test_accuracy),
            str(rec.train_flops),
            str(rec.train_sops),
        ]))
    return rows


def _credit_rows(history: list[RoundRecord]) -> list[str]:
    rows = ["round,client_id,delta_r,rates_before...,rates_after..."]
    for rec in history:
        for credit in rec.credits:
            rows.append(credit_csv_row(rec.round, credit))
    return rows


def _energy_rows(history: list[RoundRecord]) -> list[str]:
    rows = ["round,flops,sops,pj"]
    ledger = metrics.EnergyLedger()
    for rec in history:
        ledger.charge(flops=rec.train_flops, sops=rec.train_sops)
        rows.append(",".join([str(rec.round), str(ledger.flops), str(ledger.sops),
                              _fmt(metrics.energy_pj(ledger))]))
    return rows


def _distribution_rows(history, histograms) -> list[str]:
    n_classes = histograms.shape[1]
    trace = metrics.selected_distribution(
        [rec.selected_ids for rec in history], histograms)
    header = ["round"]
    header += [f"count_{c}" for c in range(n_classes)]
    header += [f"prop_{c}" for c in range(n_classes)]
    rows = [",".join(header)]
    for rec, counts, props in zip(history, trace.counts, trace.proportions):
        cells = [str(rec.round)]
        cells += [str(int(v)) for v in counts]
        cells += [_fmt(v) for v in props]
        rows.append(",".join(cells))
    return rows


def _write_atomic(output_dir: str, name: str, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=output_dir, prefix=f".{name}.")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, os.path.join(output_dir, name))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(cfg: ExperimentConfig, output_dir: str, dry_run: bool = False) -> int:
    """Execute one experiment; returns the process exit code."""
    try:
        cfg.validate()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if dry_run:
        for field in dataclasses.fields(cfg):
            print(f"{field.name} = {getattr(cfg, field.name)}")
        return 0
    try:
        os.makedirs(output_dir, exist_ok=True)
        if not os.access(output_dir, os.W_OK):
            raise OSError(f"output directory {output_dir} is not writable")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        train, test = build_datasets(cfg)
        partition = build_partition(cfg, train)
        net_cfg = build_network_config(cfg.layers, train.sample_shape,
                                       train.n_classes, cfg.t_steps, cfg.u_theta,
                                       cfg.u_reset, cfg.surrogate_alpha)
        fed_cfg = cfg.federation_config()
        history = run_federation(train, test, partition, net_cfg, fed_cfg,
                                 master_seed=cfg.seed)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    accuracies = [rec.test_accuracy for rec in history]
    total_flops = sum(rec.train_flops for rec in history)
    total_sops = sum(rec.train_sops for rec in history)
    summary = {
        "final_accuracy": accuracies[-1],
        "rounds": len(history),
        "rounds_to_target": {
            repr(t): metrics.rounds_to_target(accuracies, t) for t in cfg.targets
        },
        "total_flops": total_flops,
        "total_sops": total_sops,
        "total_pj": metrics.energy_pj(
            metrics.EnergyLedger(flops=total_flops, sops=total_sops)),
    }
    histograms = partition.class_histograms(train)
    outputs = {
        "history.csv": "\n".join(_history_rows(history)) + "\n",
        "credits.csv": "\n".join(_credit_rows(history)) + "\n",
        "energy.csv": "\n".join(_energy_rows(history)) + "\n",
        "distribution.csv": "\n".join(_distribution_rows(history, histograms)) + "\n",
        "summary.json": json.dumps(summary, indent=2, sort_keys=True) + "\n",
    }
    try:
        for name, text in outputs.items():
            _write_atomic(output_dir, name, text)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"final accuracy {accuracies[-1]:.4f} after {len(history)} rounds; "
          f"outputs in {output_dir}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="spikefed")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run one experiment from a config file")
    run_p.add_argument("config", help="path to the experiment config")
    run_p.add_argument("-o", "--output", default="out", help="output directory")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    run_p.add_argument("--dry-run", action="store_true",
                       help="validate and print the resolved config, then exit")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    return run(cfg, args.output, dry_run=args.dry_run)


if __name__ == "__main__":
    sys.exit(main())
