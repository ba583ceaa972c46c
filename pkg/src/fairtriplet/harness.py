"""Experiment orchestration: the train loop wiring sampler -> miner ->
optimizer, periodic validation feeding the dynamic scheduler, checkpointing
with exact resume, and report generation.

All randomness flows from the experiment seed, split into named streams
(data generation, batch sampling, mining, weight init, ROC splits), so
changing one consumer never perturbs the others. Every output file except
``timings.json`` is a pure function of config + seed, byte for byte.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .core import ConfigError, Dataset, DEFAULT_TAXONOMY
from .datagen import generate_dataset
from .dataio import (
    load_dataset,
    write_embeddings_csv,
    write_far_matrix_csv,
    write_roc_csv,
)
from .evaluation import (
    EvalSet,
    calibrate_threshold,
    default_theta_grid,
    far_counts,
    far_matrix,
    frr_counts,
    gender_far,
    gender_pools,
    per_group_far,
    per_group_frr,
    roc_curve,
    roc_curve_over_splits,
)
from .mining import assemble_batch, mine_semi_hard, schedule_minibatches
from .model import (
    EmbeddingNetwork,
    OptimizerState,
    adam_step,
    load_checkpoint,
    loss_gradients,
    save_checkpoint,
)
from .sampling import SamplerSpec, probabilities, update_dynamic_weights

METRICS_FILE = "metrics.json"
TIMINGS_FILE = "timings.json"
REPORT_FILE = "report.json"

_STREAMS = {
    "datagen-train": 0,
    "datagen-val": 1,
    "datagen-val-pools": 2,
    "datagen-eval": 3,
    "datagen-eval-pools": 4,
    "sampler": 5,
    "miner": 6,
    "init": 7,
    "roc": 8,
    "geometry": 9,
}


def stream_seed(cfg: ExperimentConfig, name: str, extra: int = 0) -> int:
    """Derived integer seed for a named randomness stream."""
    ss = np.random.SeedSequence([cfg.seed, _STREAMS[name], cfg.data.seed, extra])
    return int(ss.generate_state(1)[0])


def stream_rng(cfg: ExperimentConfig, name: str, extra: int = 0) -> np.random.Generator:
    return np.random.default_rng(stream_seed(cfg, name, extra))


@dataclass
class RunRecord:
    """Append-only account of one training run."""

    config_hash: str
    epochs: list[dict] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    final_step: int = 0

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "config_hash": self.config_hash,
            "final_step": self.final_step,
            "checkpoints": self.checkpoints,
            "epochs": self.epochs,
        }


def _dump_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def _shared_geometry_seed(cfg: ExperimentConfig) -> int:
    """All of a run's datasets share one latent population; only identity and
    noise draws differ between train, validation, and evaluation sets."""
    return stream_seed(cfg, "geometry")


def _training_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data_path is not None:
        ds = load_dataset(cfg.data_path)
        if ds.input_dim != cfg.data.input_dim:
            raise ConfigError(
                f"dataset file input_dim {ds.input_dim} != configured {cfg.data.input_dim}"
            )
        return ds
    return generate_dataset(cfg.data.with_(
        seed=stream_seed(cfg, "datagen-train"),
        geometry_seed=_shared_geometry_seed(cfg),
    ))


def _natural_dataset(cfg: ExperimentConfig, stream: str, n_pairs: int) -> Dataset:
    return generate_dataset(cfg.data.with_(
        seed=stream_seed(cfg, stream),
        geometry_seed=_shared_geometry_seed(cfg),
        n_pairs=n_pairs,
        duplicate_rate=0.0,
    ))


def _group_pool_datasets(cfg: ExperimentConfig, axis: str, stream: str,
                         pool_size: int) -> dict[str, Dataset]:
    """One dataset of exactly pool_size pairs per group on the axis."""
    groups = DEFAULT_TAXONOMY.groups(axis)
    pools = {}
    for k, g in enumerate(groups):
        pools[g] = generate_dataset(
            cfg.data.with_(
                seed=stream_seed(cfg, stream, extra=k + 1),
                geometry_seed=_shared_geometry_seed(cfg),
                n_pairs=pool_size,
                composition={g: 1.0},
                duplicate_rate=0.0,
            )
        )
    return pools


def _rng_state_json(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state)


def _rng_from_state(state_json: str) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = json.loads(state_json)
    return rng


def _sampler_state_extras(sampler: SamplerSpec) -> str:
    if sampler.dynamic is None:
        return json.dumps(None)
    st = sampler.dynamic
    return json.dumps(
        {"weights": st.weights, "lam": st.lam,
         "alpha_smooth": st.alpha_smooth, "epoch": st.epoch}
    )


def _sampler_with_state(sampler: SamplerSpec, state_json: str) -> SamplerSpec:
    data = json.loads(state_json)
    if data is None:
        return sampler
    from .sampling import DynamicState

    return sampler.with_dynamic(DynamicState(
        weights=data["weights"], lam=data["lam"],
        alpha_smooth=data["alpha_smooth"], epoch=data["epoch"],
    ))


def run_training(cfg: ExperimentConfig, stop_after: int | None = None,
                 resume_from: str | Path | None = None) -> RunRecord:
    """Train per the config; returns the RunRecord and writes metrics files.

    ``stop_after`` interrupts the run after that round (checkpointing first);
    ``resume_from`` continues from a checkpoint of the identical config and
    reproduces the uninterrupted run exactly.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = cfg.training
    full_hash = cfg.config_hash()

    train_ds = _training_dataset(cfg)
    val_ds = _natural_dataset(cfg, "datagen-val", cfg.eval.n_eval_pairs)
    val_pool_ds = _group_pool_datasets(
        cfg, cfg.sampler.axis, "datagen-val-pools", cfg.eval.group_pool_size
    )
    far_floor = cfg.eval.resolved_far_floor()
    mb_per_round = math.ceil(2 * tcfg.batch_n / tcfg.minibatch_size)

    if resume_from is not None:
        net, opt, start_step, _, extras = load_checkpoint(resume_from, full_hash)
        rng_sampler = _rng_from_state(extras["rng_sampler"])
        rng_miner = _rng_from_state(extras["rng_miner"])
        sampler = _sampler_with_state(cfg.sampler.build(), extras["sampler_state"])
        record = RunRecord(
            config_hash=full_hash,
            epochs=json.loads(extras["epochs"]),
            checkpoints=json.loads(extras["checkpoint_paths"]),
            final_step=start_step,
        )
        loss_buffer: list[float] = json.loads(extras["loss_buffer"])
    else:
        net = EmbeddingNetwork.create(
            train_ds.input_dim, tcfg.hidden_dims, tcfg.embed_dim,
            tcfg.activation, stream_rng(cfg, "init"),
        )
        opt = OptimizerState.for_network(
            net, tcfg.lr_init, tcfg.lr_final,
            decay_steps=tcfg.total_steps * mb_per_round,
        )
        start_step = 0
        rng_sampler = stream_rng(cfg, "sampler")
        rng_miner = stream_rng(cfg, "miner")
        sampler = cfg.sampler.build()
        record = RunRecord(config_hash=full_hash)
        loss_buffer = []

    def checkpoint_path(step: int) -> Path:
        return out / "checkpoints" / f"ckpt_{step:06d}.npz"

    def save_state(step: int) -> Path:
        path = checkpoint_path(step)
        save_checkpoint(
            path, net, opt, step, full_hash,
            extras={
                "model_hash": cfg.model_hash(),
                "rng_sampler": _rng_state_json(rng_sampler),
                "rng_miner": _rng_state_json(rng_miner),
                "sampler_state": _sampler_state_extras(sampler),
                "epochs": json.dumps(record.epochs),
                "checkpoint_paths": json.dumps(record.checkpoints),
                "loss_buffer": json.dumps(loss_buffer),
            },
        )
        return path

    t_start = time.perf_counter()
    step = start_step
    try:
        for step in range(start_step + 1, tcfg.total_steps + 1):
            batch = assemble_batch(train_ds, sampler, tcfg.batch_n, rng_sampler)
            batch = batch.embed_with(net)
            triplets = mine_semi_hard(batch, tcfg.margin, rng_miner)
            minibatches = schedule_minibatches(triplets, tcfg.minibatch_size, rng_miner)
            features = batch.flat_features()
            losses = []
            for mb in minibatches:
                loss, grads = loss_gradients(net, features, mb, tcfg.margin)
                adam_step(opt, net, grads)
                losses.append(loss)
            loss_buffer.append(float(np.mean(losses)) if losses else 0.0)

            at_validation = (
                step % cfg.eval.validation_every == 0 or step == tcfg.total_steps
            )
            if at_validation:
                entry = _validation_entry(
                    cfg, net, sampler, step, train_ds, val_ds, val_pool_ds, loss_buffer
                )
                loss_buffer = []
                if sampler.variant == "dynamic":
                    new_state = update_dynamic_weights(
                        sampler.dynamic, entry["group_far"], far_floor
                    )
                    entry["dynamic_weights_prev"] = dict(sampler.dynamic.weights)
                    entry["dynamic_weights"] = dict(new_state.weights)
                    sampler = sampler.with_dynamic(new_state)
                record.epochs.append(entry)
                path = save_state(step)
                record.checkpoints.append(str(path.relative_to(out)))
            if stop_after is not None and step >= stop_after:
                if not at_validation:
                    path = save_state(step)
                    record.checkpoints.append(str(path.relative_to(out)))
                break
    except Exception as e:
        record.final_step = step
        failure = record.to_dict()
        failure["failed_at_step"] = step
        failure["error"] = f"{type(e).__name__}: {e}"
        _dump_json(out / METRICS_FILE, failure)
        raise

    record.final_step = step
    _dump_json(out / METRICS_FILE, record.to_dict())
    _dump_json(out / TIMINGS_FILE, {
        "total_seconds": time.perf_counter() - t_start,
        "steps": step - start_step,
    })
    return record


def _validation_entry(cfg: ExperimentConfig, net: EmbeddingNetwork,
                      sampler: SamplerSpec, step: int, train_ds: Dataset,
                      val_ds: Dataset, val_pool_ds: dict[str, Dataset],
                      loss_buffer: list[float]) -> dict:
    val_es = EvalSet.from_dataset(net, val_ds)
    theta = calibrate_threshold(val_es, cfg.eval.target_far)
    accepted, comparisons = far_counts(
        val_es.selfie_emb, val_es.identity_ids,
        val_es.doc_emb, val_es.identity_ids, theta,
    )
    rejected, genuine = frr_counts(val_es, theta)
    pools = {g: EvalSet.from_dataset(net, ds) for g, ds in val_pool_ds.items()}
    return {
        "step": step,
        "mean_loss": float(np.mean(loss_buffer)) if loss_buffer else None,
        "theta": theta,
        "overall_far": accepted / comparisons,
        "overall_frr": rejected / genuine,
        "group_far": per_group_far(pools, theta),
        "group_frr": per_group_frr(pools, theta),
        "sampling_probabilities": probabilities(sampler, train_ds),
    }


def latest_checkpoint(run_dir: str | Path) -> Path:
    ckpts = sorted(Path(run_dir).glob("checkpoints/ckpt_*.npz"))
    if not ckpts:
        raise ConfigError(f"no checkpoints under {run_dir}")
    return ckpts[-1]


def run_eval(cfg: ExperimentConfig, checkpoint: str | Path,
             out_dir: str | Path | None = None) -> dict:
    """Evaluate a checkpoint on freshly derived evaluation data and write the
    JSON/CSV report files. Returns the report dict."""
    cfg.validate()
    net, _, step, _, extras = load_checkpoint(checkpoint)
    if extras.get("model_hash") != cfg.model_hash():
        raise ConfigError(
            "checkpoint was trained under a different seed/data/training config"
        )
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir) / "eval"
    out.mkdir(parents=True, exist_ok=True)

    eval_ds = _natural_dataset(cfg, "datagen-eval", cfg.eval.n_eval_pairs)
    pool_ds = _group_pool_datasets(
        cfg, cfg.eval.matrix_axis, "datagen-eval-pools", cfg.eval.group_pool_size
    )
    es = EvalSet.from_dataset(net, eval_ds)
    theta = calibrate_threshold(es, cfg.eval.target_far)
    accepted, comparisons = far_counts(
        es.selfie_emb, es.identity_ids, es.doc_emb, es.identity_ids, theta,
    )
    rejected, genuine = frr_counts(es, theta)

    pools = {g: EvalSet.from_dataset(net, ds) for g, ds in pool_ds.items()}
    matrix = far_matrix(pools, theta, axis=cfg.eval.matrix_axis)
    g_far = per_group_far(pools, theta)
    g_frr = per_group_frr(pools, theta)
    genders = gender_far(gender_pools(es), theta)

    grid = default_theta_grid(es, cfg.eval.roc_points)
    if cfg.eval.n_roc_splits > 1:
        curve = roc_curve_over_splits(
            es, grid, cfg.eval.n_roc_splits, cfg.eval.split_fraction,
            stream_rng(cfg, "roc"),
        )
    else:
        curve = roc_curve(es, grid)

    trajectory = None
    metrics_path = Path(cfg.output_dir) / METRICS_FILE
    if metrics_path.exists():
        metrics = json.loads(metrics_path.read_text())
        trajectory = [
            {k: e[k] for k in ("step", "sampling_probabilities", "dynamic_weights",
                               "dynamic_weights_prev", "group_far") if k in e}
            for e in metrics.get("epochs", [])
        ]

    matrix_file = f"far_matrix_{cfg.eval.matrix_axis}.csv"
    write_far_matrix_csv(out / matrix_file, matrix, cfg.config_hash())
    write_roc_csv(out / "roc.csv", curve, cfg.config_hash())

    report = {
        "schema_version": 1,
        "config_hash": cfg.config_hash(),
        "model_hash": cfg.model_hash(),
        "checkpoint_step": step,
        "target_far": cfg.eval.target_far,
        "theta": theta,
        "overall": {
            "far": accepted / comparisons,
            "far_accepted": accepted,
            "far_comparisons": comparisons,
            "frr": rejected / genuine,
            "frr_rejected": rejected,
            "genuine_pairs": genuine,
        },
        "group_far": g_far,
        "group_frr": g_frr,
        "gender_far": genders,
        "sampler_variant": cfg.sampler.variant,
        "sampler_axis": cfg.sampler.axis,
        "weight_trajectory": trajectory,
        "matrix_files": [matrix_file],
        "roc_file": "roc.csv",
    }
    _dump_json(out / REPORT_FILE, report)
    return report


def export_embeddings(checkpoint: str | Path, dataset: Dataset,
                      out_path: str | Path) -> int:
    """Embed a dataset with a checkpointed network and write the CSV export."""
    net, _, _, _, _ = load_checkpoint(checkpoint)
    if net.input_dim != dataset.input_dim:
        raise ConfigError(
            f"checkpoint expects input_dim {net.input_dim}, dataset has {dataset.input_dim}"
        )
    return write_embeddings_csv(out_path, net, dataset)


def aggregate_reports(run_dirs: list[str | Path]) -> list[dict]:
    """Plot-ready comparison rows from several runs' eval reports."""
    rows = []
    for run_dir in run_dirs:
        report_path = Path(run_dir) / "eval" / REPORT_FILE
        if not report_path.exists():
            raise ConfigError(f"no eval report under {run_dir}")
        rep = json.loads(report_path.read_text())
        g_far = rep["group_far"]
        worst = max(g_far, key=lambda g: g_far[g])
        overall = rep["overall"]["far"]
        row = {
            "run": str(run_dir),
            "config_hash": rep["config_hash"],
            "sampler": f'{rep["sampler_variant"]}/{rep["sampler_axis"]}',
            "theta": rep["theta"],
            "overall_far": overall,
            "overall_frr": rep["overall"]["frr"],
            "worst_group": worst,
            "worst_group_far": g_far[worst],
            "worst_to_overall": g_far[worst] / overall if overall > 0 else float("inf"),
        }
        for g, v in sorted(rep["gender_far"].items()):
            row[f"far_{g}"] = v
        rows.append(row)
    return rows


def write_summary_csv(path: str | Path, rows: list[dict]) -> None:
    import csv

    if not rows:
        raise ConfigError("no rows to summarize")
    keys = list(rows[0])
    for row in rows[1:]:
        keys += [k for k in row if k not in keys]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
