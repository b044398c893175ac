"""Run configuration: one JSON file describing a full experiment.

Relative paths inside the file are resolved against the config file's own
directory, so a config directory can be moved as a unit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .data import atomic_write_text
from .errors import ConfigError, InvalidSpec, MissingArtifact, ParseFailure
from .estimation import EstimationConfig
from .models import ModelSpec
from .perturb import PerturbationSpec, load_synonym_table

SCHEMA_VERSION = 1
DEFAULT_N_LIST = (2, 5, 8, 11, 14, 17, 20, 23)


@dataclass
class RunConfig:
    global_seed: int
    dataset_path: str
    model: ModelSpec
    pspec: PerturbationSpec
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    k_folds: int = 5
    n_list: tuple[int, ...] = DEFAULT_N_LIST
    output_dir: str = "out"
    threads: int = 1

    def validate(self) -> None:
        self.model.validate()
        self.pspec.validate()
        self.estimation.validate()
        if self.k_folds < 2:
            raise InvalidSpec("k_folds must be >= 2")
        if self.threads < 1:
            raise InvalidSpec("threads must be >= 1")
        if not self.n_list or any(n < 2 for n in self.n_list):
            raise InvalidSpec("n_list values must be >= 2")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise InvalidSpec("n_list must be strictly increasing")
        if not os.path.exists(self.dataset_path):
            raise MissingArtifact(f"dataset not found: {self.dataset_path}")
        if self.model.kind == "replay" and not os.path.exists(self.model.replay_path):
            raise MissingArtifact(f"replay outputs not found: {self.model.replay_path}")


def pspec_to_jsonable(pspec: PerturbationSpec) -> dict:
    return {
        "image_noise_std_range": list(pspec.image_noise_std_range),
        "image_shift_max": pspec.image_shift_max,
        "image_scale_range": list(pspec.image_scale_range),
        "text_swap_prob": pspec.text_swap_prob,
        "synonym_table": {str(k): list(v) for k, v in pspec.synonym_table.items()},
        "text_subset_keep": None
        if pspec.text_subset_keep is None
        else list(pspec.text_subset_keep),
        "joint_correlation": pspec.joint_correlation,
        "n_resamples": pspec.n_resamples,
    }


def pspec_from_jsonable(obj: dict, base_dir: str = ".") -> PerturbationSpec:
    table_path = obj.get("synonym_table_path")
    if table_path is not None:
        table = load_synonym_table(_resolve_path(table_path, base_dir))
    else:
        table = {int(k): tuple(v) for k, v in obj.get("synonym_table", {}).items()}
    keep = obj.get("text_subset_keep")
    return PerturbationSpec(
        image_noise_std_range=tuple(obj.get("image_noise_std_range", (0.1, 0.1))),
        image_shift_max=obj.get("image_shift_max", 0),
        image_scale_range=tuple(obj.get("image_scale_range", (1.0, 1.0))),
        text_swap_prob=obj.get("text_swap_prob", 0.1),
        synonym_table=table,
        text_subset_keep=None if keep is None else tuple(keep),
        joint_correlation=obj.get("joint_correlation", 0.0),
        n_resamples=obj.get("n_resamples", 20),
    )


def config_to_jsonable(cfg: RunConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "global_seed": cfg.global_seed,
        "dataset": cfg.dataset_path,
        "output_dir": cfg.output_dir,
        "threads": cfg.threads,
        "k_folds": cfg.k_folds,
        "n_list": list(cfg.n_list),
        "model": cfg.model.to_jsonable(),
        "perturbation": pspec_to_jsonable(cfg.pspec),
        "estimation": {
            "n_resamples": cfg.estimation.n_resamples,
            "benchmark_repeats": cfg.estimation.benchmark_repeats,
            "encode_hard": cfg.estimation.encode_hard,
            "reduction": cfg.estimation.reduction,
        },
    }


def _resolve_path(path: str, base_dir: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def config_from_jsonable(obj: dict, base_dir: str = ".") -> RunConfig:
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}")
    for key in ("global_seed", "dataset", "model", "perturbation"):
        if key not in obj:
            raise ConfigError(f"config missing required field {key!r}")
    est = obj.get("estimation", {})
    model = ModelSpec.from_jsonable(obj["model"])
    if model.replay_path is not None:
        model.replay_path = _resolve_path(model.replay_path, base_dir)
    cfg = RunConfig(
        global_seed=int(obj["global_seed"]),
        dataset_path=_resolve_path(str(obj["dataset"]), base_dir),
        model=model,
        pspec=pspec_from_jsonable(obj["perturbation"], base_dir),
        estimation=EstimationConfig(
            n_resamples=int(est.get("n_resamples", 20)),
            benchmark_repeats=int(est.get("benchmark_repeats", 100)),
            encode_hard=bool(est.get("encode_hard", False)),
            reduction=str(est.get("reduction", "per-dimension")),
        ),
        k_folds=int(obj.get("k_folds", 5)),
        n_list=tuple(int(n) for n in obj.get("n_list", DEFAULT_N_LIST)),
        output_dir=_resolve_path(str(obj.get("output_dir", "out")), base_dir),
        threads=int(obj.get("threads", 1)),
    )
    return cfg


def load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise MissingArtifact(f"config not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseFailure(f"bad config JSON: {exc}", line=exc.lineno) from exc
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = config_from_jsonable(obj, base_dir=os.path.dirname(os.path.abspath(path)))
    cfg.validate()
    return cfg


def save_config(cfg: RunConfig, path: str) -> None:
    atomic_write_text(path, json.dumps(config_to_jsonable(cfg), indent=2) + "\n")
