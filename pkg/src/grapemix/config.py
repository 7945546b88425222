"""Run configuration: parsing, validation, and runtime assembly.

A run config is a YAML or JSON file describing the algorithm
hyperparameters, the model, and the data: each domain/task entry either
points at a line-delimited dataset file or gives a synthetic spec
(a Markov language, an interpolation of other languages, or a component
of a quadratic task family).  Unknown keys and constraint violations
raise ConfigError naming the offending key, so a typo'd experiment file
fails loudly instead of silently using a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .data import (
    Dataset,
    MarkovLanguageSpec,
    MixtureStore,
    generate_markov_corpus,
    ingest_dataset,
    stream_rng,
)
from .errors import ConfigError
from .models import CharLMModel, DifferentiableModel, QuadraticTaskFamily, SoftmaxModel
from .reweighting import ALGORITHMS, MIX_MODES, SCHEDULES, ReweightConfig
from .simplex import SimplexWeights

_TOP_KEYS = {
    "seed", "out_dir", "algorithm", "total_steps", "step_ratio_alpha", "step_ratio_z",
    "update_every_alpha", "update_every_z", "lr", "ema_beta", "task_mix_mode",
    "domain_mix_mode", "eval_replicates", "train_batch_size", "eval_batch_size",
    "eval_every", "optimizer", "weight_floor", "divergence_factor", "model",
    "domains", "tasks", "init_alpha", "init_z", "init_params",
}
_LR_KEYS = {"schedule", "base"}
_OPT_KEYS = {"kind", "beta1", "beta2", "eps", "weight_decay"}
_MODEL_KEYS = {"kind", "vocab_size", "n_features", "n_classes", "dim", "curvatures", "centers"}
_ENTRY_KEYS = {
    "label", "path", "markov", "markov_mix", "length", "seq_len",
    "mix", "noise", "size", "task_index",
}
_MARKOV_KEYS = {"vocab_size", "transition"}
_MIX_KEYS = {"of", "coeffs"}


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def _check_keys(mapping: dict, allowed: set[str], where: str):
    _require(isinstance(mapping, dict), f"{where} must be a mapping")
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


@dataclass
class RunConfig:
    """Everything needed to reproduce one run: hyperparameters plus data/model specs."""

    reweight: ReweightConfig
    model_spec: dict
    domain_specs: list[dict]
    task_specs: list[dict]
    seed: int = 0
    out_dir: str | None = None
    init_alpha_path: str | None = None
    init_z_path: str | None = None
    init_params: list[float] | None = None

    @property
    def domain_labels(self) -> tuple[str, ...]:
        return tuple(spec["label"] for spec in self.domain_specs)

    @property
    def task_labels(self) -> tuple[str, ...]:
        return tuple(spec["label"] for spec in self.task_specs)


def load_config_file(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".json":
            raw = json.loads(text)
        else:
            raw = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw: dict, base_dir: str | Path = ".") -> RunConfig:
    """Validate a raw mapping into a RunConfig, filling documented defaults."""
    _check_keys(raw, _TOP_KEYS, "config")

    lr = dict(raw.get("lr", {}))
    _check_keys(lr, _LR_KEYS, "lr")
    schedule = lr.get("schedule", "constant")
    _require(schedule in SCHEDULES, f"field lr.schedule must be one of {SCHEDULES}")
    base_lr = float(lr.get("base", 0.1))

    opt = dict(raw.get("optimizer", {}))
    _check_keys(opt, _OPT_KEYS, "optimizer")
    opt_kind = opt.get("kind", "sgd")
    _require(opt_kind in ("sgd", "adamw"), "field optimizer.kind must be 'sgd' or 'adamw'")

    algorithm = raw.get("algorithm", "grape")
    _require(algorithm in ALGORITHMS, f"field algorithm must be one of {ALGORITHMS}")
    for mode_key in ("task_mix_mode", "domain_mix_mode"):
        _require(raw.get(mode_key, "sampled") in MIX_MODES, f"field {mode_key} must be one of {MIX_MODES}")

    try:
        reweight = ReweightConfig(
            algorithm=algorithm,
            total_steps=int(raw.get("total_steps", 1000)),
            step_ratio_alpha=float(raw.get("step_ratio_alpha", 1.5)),
            step_ratio_z=float(raw.get("step_ratio_z", 10.0)),
            update_every_alpha=int(raw.get("update_every_alpha", 100)),
            update_every_z=int(raw.get("update_every_z", 100)),
            lr_schedule=schedule,
            base_lr=base_lr,
            ema_beta=float(raw.get("ema_beta", 0.7)),
            task_mix_mode=raw.get("task_mix_mode", "sampled"),
            domain_mix_mode=raw.get("domain_mix_mode", "sampled"),
            eval_replicates=int(raw.get("eval_replicates", 1)),
            train_batch_size=int(raw.get("train_batch_size", 16)),
            eval_batch_size=None if raw.get("eval_batch_size") is None else int(raw["eval_batch_size"]),
            eval_every=int(raw.get("eval_every", 10)),
            optimizer=opt_kind,
            adam_beta1=float(opt.get("beta1", 0.9)),
            adam_beta2=float(opt.get("beta2", 0.999)),
            adam_eps=float(opt.get("eps", 1e-8)),
            weight_decay=float(opt.get("weight_decay", 0.01 if opt_kind == "adamw" else 0.0)),
            weight_floor=float(raw.get("weight_floor", 0.0)),
            divergence_factor=float(raw.get("divergence_factor", 1e6)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid field value: {exc}") from exc

    model_spec = dict(raw.get("model", {}))
    _check_keys(model_spec, _MODEL_KEYS, "model")
    kind = model_spec.get("kind")
    _require(kind in ("quadratic", "softmax", "char_lm"), "field model.kind must be quadratic, softmax or char_lm")

    domain_specs = _parse_entries(raw.get("domains"), "domains", base_dir)
    task_specs = _parse_entries(raw.get("tasks"), "tasks", base_dir)
    labels = [spec["label"] for spec in domain_specs + task_specs]
    _require(len(set(labels)) == len(labels), "field domains/tasks: labels must be unique")

    init_alpha = raw.get("init_alpha")
    init_z = raw.get("init_z")
    for name, value in (("init_alpha", init_alpha), ("init_z", init_z)):
        if value is not None:
            resolved = Path(base_dir) / value
            _require(resolved.exists(), f"field {name}: file {resolved} does not exist")

    init_params = raw.get("init_params")
    if init_params is not None:
        _require(isinstance(init_params, list), "field init_params must be a list of numbers")

    return RunConfig(
        reweight=reweight,
        model_spec=model_spec,
        domain_specs=domain_specs,
        task_specs=task_specs,
        seed=int(raw.get("seed", 0)),
        out_dir=raw.get("out_dir"),
        init_alpha_path=None if init_alpha is None else str(Path(base_dir) / init_alpha),
        init_z_path=None if init_z is None else str(Path(base_dir) / init_z),
        init_params=init_params,
    )


def _parse_entries(entries, where: str, base_dir) -> list[dict]:
    _require(isinstance(entries, list) and entries, f"field {where} must be a nonempty list")
    parsed = []
    for i, entry in enumerate(entries):
        spot = f"{where}[{i}]"
        _check_keys(entry, _ENTRY_KEYS, spot)
        _require("label" in entry, f"field {spot}.label is required")
        sources = [key for key in ("path", "markov", "markov_mix", "mix", "task_index") if key in entry]
        _require(len(sources) == 1, f"field {spot}: need exactly one of path/markov/markov_mix/mix/task_index")
        entry = dict(entry)
        if "path" in entry:
            resolved = Path(base_dir) / entry["path"]
            _require(resolved.exists(), f"field {spot}.path: file {resolved} does not exist")
            entry["path"] = str(resolved)
        if "markov" in entry:
            _check_keys(entry["markov"], _MARKOV_KEYS, f"{spot}.markov")
        if "markov_mix" in entry:
            _check_keys(entry["markov_mix"], _MIX_KEYS, f"{spot}.markov_mix")
        parsed.append(entry)
    return parsed


# ---------------------------------------------------------------------------
# Runtime assembly
# ---------------------------------------------------------------------------


def build_model(cfg: RunConfig) -> DifferentiableModel:
    spec = cfg.model_spec
    kind = spec["kind"]
    if kind == "char_lm":
        _require("vocab_size" in spec, "field model.vocab_size is required for char_lm")
        return CharLMModel(int(spec["vocab_size"]))
    if kind == "softmax":
        _require("n_features" in spec and "n_classes" in spec,
                 "fields model.n_features and model.n_classes are required for softmax")
        return SoftmaxModel(int(spec["n_features"]), int(spec["n_classes"]))
    _require("curvatures" in spec and "centers" in spec,
             "fields model.curvatures and model.centers are required for quadratic")
    family = QuadraticTaskFamily(np.asarray(spec["curvatures"], dtype=np.float64),
                                 np.asarray(spec["centers"], dtype=np.float64))
    return family.model()


def build_store(cfg: RunConfig, model: DifferentiableModel) -> MixtureStore:
    """Materialize every domain/task dataset (files or synthetic draws).

    Synthetic corpora use per-label RNG streams derived from the run
    seed, so the data layer is reproducible and independent of entry
    order elsewhere in the config.
    """
    markov_specs: dict[str, MarkovLanguageSpec] = {}

    def build_one(entry: dict) -> Dataset:
        label = entry["label"]
        if "path" in entry:
            return ingest_dataset(entry["path"])
        if "markov" in entry or "markov_mix" in entry:
            if "markov" in entry:
                m = entry["markov"]
                spec = MarkovLanguageSpec(int(m["vocab_size"]), np.asarray(m["transition"], dtype=np.float64))
            else:
                mix = entry["markov_mix"]
                missing = [name for name in mix["of"] if name not in markov_specs]
                _require(not missing, f"markov_mix for {label!r} references unknown languages {missing}")
                spec = MarkovLanguageSpec.interpolate(
                    [markov_specs[name] for name in mix["of"]],
                    [float(c) for c in mix["coeffs"]],
                )
            markov_specs[label] = spec
            length = int(entry.get("length", 10000))
            seq_len = int(entry.get("seq_len", 64))
            return generate_markov_corpus(spec, length, stream_rng(cfg.seed, f"corpus/{label}"), seq_len)
        family = getattr(model, "family", None)
        _require(family is not None, f"entry {label!r} needs a quadratic model")
        if "task_index" in entry:
            return family.task_dataset(int(entry["task_index"]))
        noise = float(entry.get("noise", 0.0))
        size = int(entry.get("size", 1))
        rng = stream_rng(cfg.seed, f"corpus/{label}") if noise > 0 else None
        return family.domain_dataset(np.asarray(entry["mix"], dtype=np.float64), noise=noise, size=size, rng=rng)

    domains = {entry["label"]: build_one(entry) for entry in cfg.domain_specs}
    tasks = {entry["label"]: build_one(entry) for entry in cfg.task_specs}
    return MixtureStore(domains, tasks)


def load_initial_weights(cfg: RunConfig) -> tuple[SimplexWeights | None, SimplexWeights | None]:
    alpha = SimplexWeights.load(cfg.init_alpha_path) if cfg.init_alpha_path else None
    z = SimplexWeights.load(cfg.init_z_path) if cfg.init_z_path else None
    return alpha, z
