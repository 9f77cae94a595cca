"""Run configuration: a YAML file with fixed sections, validated strictly.

Unknown keys are rejected, so every key in a config file is either consumed or
reported. Hyperparameter symbols also have short aliases usable in
``--override`` (``gamma``, ``alpha``, ``r``, ``pi_h``, ``pi_s``, ``lr``, ``k``,
``E_h``).
"""

import copy
from pathlib import Path
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

METHODS = ("scommer", "er", "sgd", "joint")

ALIASES = {
    "gamma": "ema.gamma",
    "alpha": "ema.alpha",
    "r": "ema.rate",
    "pi_h": "dropout.pi_h",
    "pi_s": "dropout.pi_s",
    "E_h": "dropout.warmup_epochs",
    "lr": "training.lr",
    "eta": "training.lr",
    "k": "sparsity.ratios",
    "buffer_size": "buffer.size",
    "epochs": "training.epochs",
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Section):
    arch: Literal["small_conv"] = "small_conv"
    channels: List[int] = [16, 32]
    hidden: int = Field(128, gt=0)

    @field_validator("channels")
    @classmethod
    def _positive(cls, v):
        if not v or any(c <= 0 for c in v):
            raise ValueError("channels must be a nonempty list of positive integers")
        return v


class GCILConfig(_Section):
    n_tasks: int = Field(20, gt=0)
    samples_per_task: int = Field(1000, gt=0)
    max_classes: int = Field(50, ge=2)
    weighting: Literal["unif", "longtail"] = "unif"
    seed: int = 1993


class DatasetConfig(_Section):
    kind: Literal["mnist_desk", "idx", "blobs"] = "mnist_desk"
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    protocol: Literal["class_il", "gcil"] = "class_il"
    n_tasks: int = Field(5, gt=0)
    train_per_class: Optional[int] = Field(None, gt=0)
    test_per_class: Optional[int] = Field(None, gt=0)
    gcil: GCILConfig = Field(default_factory=GCILConfig)
    blob_classes: int = Field(10, gt=1)
    blob_size: int = Field(8, gt=0)
    blob_noise: float = Field(0.25, ge=0)
    blob_train_per_class: int = Field(50, gt=0)
    blob_test_per_class: int = Field(20, gt=0)

    @model_validator(mode="after")
    def _paths(self):
        if self.kind == "idx":
            missing = [k for k in ("train_images", "train_labels", "test_images", "test_labels")
                       if getattr(self, k) is None]
            if missing:
                raise ValueError(f"kind 'idx' needs paths for {', '.join(missing)}")
        return self


class BufferConfig(_Section):
    size: int = Field(200, ge=0)
    batch_size: int = Field(32, gt=0)
    augment: bool = False


class SparsityConfig(_Section):
    enabled: bool = True
    ratios: List[float] = [0.9, 0.8]
    hidden_ratio: Optional[float] = None
    dropout_layer: int = -1

    @field_validator("ratios")
    @classmethod
    def _ratio_range(cls, v):
        bad = [r for r in v if not 0.0 < r <= 1.0]
        if bad:
            raise ValueError(f"sparsity ratios must lie in (0, 1], got {bad}")
        return v

    @field_validator("hidden_ratio")
    @classmethod
    def _hidden_range(cls, v):
        if v is not None and not 0.0 < v <= 1.0:
            raise ValueError(f"hidden_ratio must lie in (0, 1], got {v}")
        return v


class DropoutConfig(_Section):
    enabled: bool = True
    pi_h: float = Field(0.5, ge=0)
    pi_s: float = Field(2.0, ge=0)
    warmup_epochs: int = Field(1, ge=0)
    retain_factor: float = Field(1.1, gt=0)
    count_during_warmup: bool = True


class EMAConfig(_Section):
    enabled: bool = True
    alpha: float = Field(0.999, ge=0, le=1)
    rate: float = Field(0.5, ge=0, le=1)
    gamma: float = Field(0.15, ge=0)


class TrainingConfig(_Section):
    epochs: int = Field(5, ge=1)
    batch_size: int = Field(32, gt=0)
    lr: float = Field(0.1, gt=0)
    momentum: float = Field(0.0, ge=0, lt=1)
    weight_decay: float = Field(0.0, ge=0)
    eval_batch_size: int = Field(500, gt=0)


class OutputConfig(_Section):
    dir: str = "runs/default"
    checkpoints: bool = True
    task_checkpoints: bool = False
    activity: bool = True
    events: bool = True


class RunConfig(_Section):
    method: Literal["scommer", "er", "sgd", "joint"] = "scommer"
    model: ModelConfig = Field(default_factory=ModelConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    buffer: BufferConfig = Field(default_factory=BufferConfig)
    sparsity: SparsityConfig = Field(default_factory=SparsityConfig)
    dropout: DropoutConfig = Field(default_factory=DropoutConfig)
    ema: EMAConfig = Field(default_factory=EMAConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    seeds: List[int] = [0, 1, 2]
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _consistency(self):
        if self.sparsity.enabled and len(self.sparsity.ratios) != len(self.model.channels):
            raise ValueError(
                f"sparsity.ratios has {len(self.sparsity.ratios)} entries for "
                f"{len(self.model.channels)} conv blocks"
            )
        if not self.seeds:
            raise ValueError("seeds must list at least one seed")
        return self

    def dump(self):
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)


def _problems(exc):
    return [f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()]


def validate(data):
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(_problems(exc)) from None


def load_config(path, overrides=()):
    """Read a YAML config, apply ``KEY=VALUE`` overrides and validate."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    data = apply_overrides(data, overrides)
    cfg = validate(data)
    return _resolve_paths(cfg, path.parent)


def apply_overrides(data, overrides):
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, raw = item.split("=", 1)
        key = ALIASES.get(key.strip(), key.strip())
        value = yaml.safe_load(raw)
        if key == "sparsity.ratios" and not isinstance(value, list):
            # a scalar %k sets the last (dropout) block
            base = data.get("sparsity", {}).get("ratios", list(SparsityConfig().ratios))
            value = list(base[:-1]) + [value]
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-section")
        node[parts[-1]] = value
    return data


def _resolve_paths(cfg, base):
    ds = cfg.dataset
    for key in ("train_images", "train_labels", "test_images", "test_labels"):
        val = getattr(ds, key)
        if val is not None and not Path(val).is_absolute():
            setattr(ds, key, str((base / val).resolve()))
    return cfg
