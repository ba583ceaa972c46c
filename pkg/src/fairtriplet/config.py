"""Experiment configuration: YAML parsing, defaults, canonical hashing.

Config files are nested key/value YAML. The canonical serialization (sorted
JSON of the fully resolved config) defines two hashes:

* ``config_hash``: the whole experiment; resume requires an exact match.
* ``model_hash``: seed + data + training sections only; evaluating a
  checkpoint requires the model hash to match, so eval settings can change
  without invalidating trained checkpoints.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .core import ConfigError, DEFAULT_TAXONOMY
from .datagen import GeneratorConfig, GroupGeometry
from .model import TrainingConfig
from .sampling import (
    DynamicState,
    FAR_WEIGHT_EXPONENT,
    SamplerSpec,
    preset_weights,
)


@dataclass(frozen=True)
class SamplerConfig:
    variant: str = "natural"
    axis: str = "continent"
    weights: Mapping[str, float] | str | None = None  # map or preset name
    lam: float = FAR_WEIGHT_EXPONENT
    alpha_smooth: float = 0.2

    def resolved_weights(self) -> dict[str, float] | None:
        if isinstance(self.weights, str):
            return preset_weights(self.weights, self.axis)
        return dict(self.weights) if self.weights is not None else None

    def build(self) -> SamplerSpec:
        if self.variant == "dynamic":
            groups = DEFAULT_TAXONOMY.groups(self.axis)
            return SamplerSpec(
                variant="dynamic",
                axis=self.axis,
                dynamic=DynamicState.uniform(groups, lam=self.lam,
                                             alpha_smooth=self.alpha_smooth),
            )
        return SamplerSpec(
            variant=self.variant,
            axis=self.axis,
            weights=self.resolved_weights(),
        )


@dataclass(frozen=True)
class EvalConfig:
    target_far: float = 1e-3
    n_eval_pairs: int = 2000          # natural-composition pool for calibration
    group_pool_size: int = 300        # per-group pool for FAR matrices
    matrix_axis: str = "continent"
    roc_points: int = 50
    n_roc_splits: int = 1
    split_fraction: float = 0.5
    validation_every: int = 200       # training rounds between validations
    far_floor: float | None = None    # default: 1 / pool impostor comparisons

    def validate(self) -> None:
        if not 0 < self.target_far <= 1:
            raise ConfigError("target_far must be in (0, 1]")
        if min(self.n_eval_pairs, self.group_pool_size, self.roc_points,
               self.n_roc_splits, self.validation_every) < 1:
            raise ConfigError("eval sizes must be positive")
        if self.matrix_axis not in ("continent", "country"):
            raise ConfigError("matrix_axis must be continent or country")
        if not 0 < self.split_fraction <= 1:
            raise ConfigError("split_fraction must be in (0, 1]")
        if self.far_floor is not None and self.far_floor <= 0:
            raise ConfigError("far_floor must be > 0")

    def resolved_far_floor(self) -> float:
        if self.far_floor is not None:
            return self.far_floor
        n = self.group_pool_size
        return 1.0 / (n * (n - 1)) if n > 1 else 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/experiment"
    data: GeneratorConfig = field(default_factory=GeneratorConfig)
    data_path: str | None = None      # use a dataset file instead of generating
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        self.data.validate()
        self.training.validate()
        self.eval.validate()
        self.sampler.build()  # raises on bad sampler settings
        if self.data_path is not None and not Path(self.data_path).exists():
            raise ConfigError(f"dataset file not found: {self.data_path}")

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    # ---- canonical form and hashes ----

    def to_dict(self) -> dict[str, Any]:
        # output_dir is deliberately absent: where a run writes is an
        # execution detail, not part of the experiment's identity.
        d = {
            "seed": self.seed,
            "data_path": self.data_path,
            "data": _plain(asdict(self.data)),
            "training": _plain(asdict(self.training)),
            "sampler": {
                "variant": self.sampler.variant,
                "axis": self.sampler.axis,
                "weights": self.sampler.weights
                if isinstance(self.sampler.weights, str)
                else (_plain(dict(self.sampler.weights)) if self.sampler.weights else None),
                "lam": self.sampler.lam,
                "alpha_smooth": self.sampler.alpha_smooth,
            },
            "eval": _plain(asdict(self.eval)),
        }
        d["data"].pop("taxonomy", None)
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def model_hash(self) -> str:
        d = self.to_dict()
        part = {k: d[k] for k in ("seed", "data", "data_path", "training")}
        text = json.dumps(part, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _plain(obj):
    """Make a config fragment JSON-clean (tuples -> lists, numpy -> python)."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (int, float, str, bool)) or obj is None:
        return obj
    if hasattr(obj, "item"):
        return obj.item()
    raise ConfigError(f"cannot serialize config value of type {type(obj)!r}")


def _num(x, kind=float):
    """YAML 1.1 parses '1e-3' as a string; coerce numerics defensively."""
    try:
        return kind(x)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {x!r}") from None


def _section(d: Mapping[str, Any], name: str) -> dict[str, Any]:
    sec = d.get(name, {})
    if sec is None:
        sec = {}
    if not isinstance(sec, Mapping):
        raise ConfigError(f"section {name!r} must be a mapping")
    return dict(sec)


_GEN_FLOATS = (
    "identity_spread", "gender_offset", "selfie_noise",
    "domain_shift_strength", "duplicate_rate",
)


def config_from_dict(raw: Mapping[str, Any]) -> ExperimentConfig:
    known = {"seed", "output_dir", "data", "training", "sampler", "eval"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    data_sec = _section(raw, "data")
    data_path = data_sec.pop("path", None)
    geo_sec = data_sec.pop("geometry", None)
    gen_kwargs: dict[str, Any] = {}
    for key in ("seed", "input_dim", "n_pairs"):
        if key in data_sec:
            gen_kwargs[key] = _num(data_sec.pop(key), int)
    if "geometry_seed" in data_sec:
        val = data_sec.pop("geometry_seed")
        gen_kwargs["geometry_seed"] = None if val is None else _num(val, int)
    for key in _GEN_FLOATS:
        if key in data_sec:
            gen_kwargs[key] = _num(data_sec.pop(key))
    for key in ("composition", "country_weights", "doc_noise", "gender_spread"):
        if key in data_sec:
            val = data_sec.pop(key)
            gen_kwargs[key] = (
                {str(k): _num(v) for k, v in val.items()} if val is not None else None
            )
    if "gender_split" in data_sec:
        gen_kwargs["gender_split"] = {
            str(c): {str(g): _num(p) for g, p in row.items()}
            for c, row in data_sec.pop("gender_split").items()
        }
    if data_sec:
        raise ConfigError(f"unknown data keys: {sorted(data_sec)}")
    if geo_sec:
        gen_kwargs["geometry"] = GroupGeometry(
            **{str(k): _num(v) for k, v in geo_sec.items()}
        )
    data = GeneratorConfig(**gen_kwargs)

    tr_sec = _section(raw, "training")
    tr_kwargs: dict[str, Any] = {}
    for key in ("batch_n", "minibatch_size", "total_steps", "embed_dim", "seed"):
        if key in tr_sec:
            tr_kwargs[key] = _num(tr_sec.pop(key), int)
    for key in ("margin", "lr_init", "lr_final"):
        if key in tr_sec:
            tr_kwargs[key] = _num(tr_sec.pop(key))
    if "hidden_dims" in tr_sec:
        tr_kwargs["hidden_dims"] = tuple(int(x) for x in tr_sec.pop("hidden_dims"))
    if "activation" in tr_sec:
        tr_kwargs["activation"] = str(tr_sec.pop("activation"))
    if tr_sec:
        raise ConfigError(f"unknown training keys: {sorted(tr_sec)}")
    training = TrainingConfig(**tr_kwargs)

    sm_sec = _section(raw, "sampler")
    sm_kwargs: dict[str, Any] = {}
    if "variant" in sm_sec:
        sm_kwargs["variant"] = str(sm_sec.pop("variant"))
    if "axis" in sm_sec:
        sm_kwargs["axis"] = str(sm_sec.pop("axis"))
    if "weights" in sm_sec:
        w = sm_sec.pop("weights")
        sm_kwargs["weights"] = (
            w if isinstance(w, str) or w is None
            else {str(k): _num(v) for k, v in w.items()}
        )
    for key in ("lam", "alpha_smooth"):
        if key in sm_sec:
            sm_kwargs[key] = _num(sm_sec.pop(key))
    if sm_sec:
        raise ConfigError(f"unknown sampler keys: {sorted(sm_sec)}")
    sampler = SamplerConfig(**sm_kwargs)

    ev_sec = _section(raw, "eval")
    ev_kwargs: dict[str, Any] = {}
    for key in ("n_eval_pairs", "group_pool_size", "roc_points", "n_roc_splits",
                "validation_every"):
        if key in ev_sec:
            ev_kwargs[key] = _num(ev_sec.pop(key), int)
    for key in ("target_far", "split_fraction", "far_floor"):
        if key in ev_sec:
            val = ev_sec.pop(key)
            ev_kwargs[key] = None if val is None else _num(val)
    if "matrix_axis" in ev_sec:
        ev_kwargs["matrix_axis"] = str(ev_sec.pop("matrix_axis"))
    if ev_sec:
        raise ConfigError(f"unknown eval keys: {sorted(ev_sec)}")
    eval_cfg = EvalConfig(**ev_kwargs)

    cfg = ExperimentConfig(
        seed=_num(raw.get("seed", 0), int),
        output_dir=str(raw.get("output_dir", "runs/experiment")),
        data=data,
        data_path=str(data_path) if data_path is not None else None,
        training=training,
        sampler=sampler,
        eval=eval_cfg,
    )
    try:
        cfg.validate()
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"config root must be a mapping: {path}")
    return config_from_dict(raw)
