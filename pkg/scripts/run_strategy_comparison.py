#!/usr/bin/env python3
"""Train the embedding under each continent sampling strategy and compare
per-group FARs at a shared overall operating point.

Runs natural sampling (the imbalanced baseline) plus the three mitigations
(equal, adjusted, dynamic), evaluates each at the target overall FAR, and
prints a table of worst-group/overall FAR ratios and FRR cost. Results land
in <outdir>/<strategy>/ with the usual metrics/report files plus a combined
summary.csv.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from fairtriplet.config import EvalConfig, ExperimentConfig, SamplerConfig
from fairtriplet.datagen import GeneratorConfig
from fairtriplet.harness import (
    aggregate_reports,
    latest_checkpoint,
    run_eval,
    run_training,
    write_summary_csv,
)
from fairtriplet.model import TrainingConfig

STRATEGIES = {
    "natural": SamplerConfig(variant="natural", axis="continent"),
    "equal": SamplerConfig(variant="fixed", axis="continent", weights="equal"),
    "adjusted": SamplerConfig(variant="fixed", axis="continent", weights="adjusted"),
    "dynamic": SamplerConfig(variant="dynamic", axis="continent"),
}


def experiment_config(args, name: str, sampler: SamplerConfig) -> ExperimentConfig:
    return ExperimentConfig(
        seed=args.seed,
        output_dir=str(Path(args.outdir) / name),
        data=GeneratorConfig(n_pairs=args.pairs, input_dim=args.input_dim),
        training=TrainingConfig(total_steps=args.steps, batch_n=args.batch),
        sampler=sampler,
        eval=EvalConfig(
            target_far=args.target_far,
            n_eval_pairs=args.eval_pairs,
            group_pool_size=args.pool,
            validation_every=args.validate_every,
        ),
    )


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", default="runs/strategy_comparison")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--pairs", type=int, default=50_000)
    ap.add_argument("--input-dim", type=int, default=32, dest="input_dim")
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--batch", type=int, default=2048)
    ap.add_argument("--target-far", type=float, default=1e-3, dest="target_far")
    ap.add_argument("--eval-pairs", type=int, default=2000, dest="eval_pairs")
    ap.add_argument("--pool", type=int, default=300)
    ap.add_argument("--validate-every", type=int, default=20, dest="validate_every")
    ap.add_argument("--strategies", nargs="+", default=list(STRATEGIES),
                    choices=list(STRATEGIES))
    args = ap.parse_args()

    run_dirs = []
    for name in args.strategies:
        cfg = experiment_config(args, name, STRATEGIES[name])
        t0 = time.perf_counter()
        record = run_training(cfg)
        run_eval(cfg, latest_checkpoint(cfg.output_dir))
        print(f"[{name}] {record.final_step} steps in {time.perf_counter() - t0:.0f}s")
        run_dirs.append(cfg.output_dir)

    rows = aggregate_reports(run_dirs)
    write_summary_csv(Path(args.outdir) / "summary.csv", rows)

    base = next((r for r in rows if r["run"].endswith("natural")), rows[0])
    print(f"\n{'strategy':<26} {'overall FAR':>12} {'worst grp':>10} "
          f"{'worst FAR':>10} {'ratio':>8} {'FRR':>8} {'FRR vs base':>12}")
    for row in rows:
        name = Path(row["run"]).name
        frr_rel = row["overall_frr"] / base["overall_frr"] if base["overall_frr"] else float("inf")
        print(f"{name:<26} {row['overall_far']:>12.2e} {row['worst_group']:>10} "
              f"{row['worst_group_far']:>10.2e} {row['worst_to_overall']:>8.1f} "
              f"{row['overall_frr']:>8.3f} {frr_rel:>12.2f}")
    ratio_base = base["worst_to_overall"]
    print(f"\nworst-group/overall ratio under natural sampling: {ratio_base:.1f}")
    for row in rows:
        if row is base:
            continue
        name = Path(row["run"]).name
        improvement = ratio_base / row["worst_to_overall"] if row["worst_to_overall"] else float("inf")
        print(f"  {name}: ratio improvement {improvement:.1f}x")
    print(f"\nsummary written to {Path(args.outdir) / 'summary.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
