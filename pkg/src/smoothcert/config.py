"""Experiment configuration: JSON schema validation with dotted field paths.

Every command reads one JSON config file.  Validation happens before any
compute, and every error names the offending field by its path from the
config root ("pretrain.sgd.base_lr" style), so a bad config fails fast with
an actionable message.  All randomness enters through the `seeds` object;
there are no default seeds, which keeps every run reproducible on purpose.

The SMOOTHCERT_SEED environment variable, when set, overrides every seed in
the config with its value (a CI convenience for re-rolling a whole run).
"""

import json
import os
from dataclasses import dataclass

from .data import NoiseSpec
from .network import conv_classifier
from .optim import SgdConfig

SEED_ENV_VAR = "SMOOTHCERT_SEED"


class ConfigError(ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"config error at {path}: {message}")


def _get(obj, path, key, kind, required=True, default=None):
    full = f"{path}.{key}" if path else key
    if key not in obj:
        if required:
            raise ConfigError(full, "missing required field")
        return default
    value = obj[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(full, "expected an integer, got a boolean")
    if not isinstance(value, kind):
        raise ConfigError(full, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _get_list(obj, path, key, item_kind, required=True, default=None):
    value = _get(obj, path, key, list, required=required, default=None)
    if value is None:
        return default
    full = f"{path}.{key}" if path else key
    out = []
    for i, item in enumerate(value):
        if item_kind is float and isinstance(item, int) and not isinstance(item, bool):
            item = float(item)
        if not isinstance(item, item_kind) or isinstance(item, bool):
            raise ConfigError(f"{full}[{i}]", f"expected {item_kind.__name__}")
        out.append(item)
    return out


def _no_unknown_keys(obj, path, allowed):
    for key in obj:
        if key not in allowed:
            full = f"{path}.{key}" if path else key
            raise ConfigError(full, "unknown field")


@dataclass(frozen=True)
class DatasetSection:
    source: str
    num_classes: int = None
    per_class_train: int = None
    per_class_test: int = None
    size: int = 16
    contrast: float = 0.75
    train_images: str = None
    test_images: str = None


@dataclass(frozen=True)
class TransferSection:
    upstream_classes: tuple
    downstream_classes: tuple


@dataclass(frozen=True)
class SmoothingSection:
    sigmas: tuple
    n0: int
    n: int
    alpha: float
    batch: int
    max_inputs: int


@dataclass(frozen=True)
class Config:
    command: str
    out_dir: str
    seeds: dict
    dataset: DatasetSection
    transfer: TransferSection = None
    model: dict = None
    noise: NoiseSpec = None
    sgd: SgdConfig = None
    eval_every: int = 1
    finetune_mode: str = None
    allow_noisy_finetune: bool = False
    checkpoint_in: str = None
    smoothing: SmoothingSection = None


def _parse_seeds(doc, required_keys):
    seeds_obj = _get(doc, "", "seeds", dict)
    override = os.environ.get(SEED_ENV_VAR)
    seeds = {}
    for key in required_keys:
        seeds[key] = _get(seeds_obj, "seeds", key, int)
    _no_unknown_keys(seeds_obj, "seeds", set(required_keys))
    if override is not None:
        try:
            value = int(override)
        except ValueError:
            raise ConfigError(SEED_ENV_VAR, f"environment override must be an "
                              f"integer, got {override!r}") from None
        seeds = {key: value for key in seeds}
    return seeds


def _parse_dataset(doc):
    obj = _get(doc, "", "dataset", dict)
    source = _get(obj, "dataset", "source", str)
    if source == "synth":
        _no_unknown_keys(obj, "dataset", {"source", "num_classes", "per_class_train",
                                          "per_class_test", "size", "contrast"})
        section = DatasetSection(
            source=source,
            num_classes=_get(obj, "dataset", "num_classes", int),
            per_class_train=_get(obj, "dataset", "per_class_train", int),
            per_class_test=_get(obj, "dataset", "per_class_test", int),
            size=_get(obj, "dataset", "size", int, required=False, default=16),
            contrast=_get(obj, "dataset", "contrast", float,
                          required=False, default=0.75),
        )
        if not 1 <= section.num_classes <= 16:
            raise ConfigError("dataset.num_classes", "must be in [1, 16]")
        for key in ("per_class_train", "per_class_test", "size"):
            if getattr(section, key) < 1:
                raise ConfigError(f"dataset.{key}", "must be positive")
        if not 0.0 < section.contrast <= 1.0:
            raise ConfigError("dataset.contrast", "must lie in (0, 1]")
        return section
    if source == "idx":
        _no_unknown_keys(obj, "dataset", {"source", "train_images", "test_images"})
        return DatasetSection(
            source=source,
            train_images=_get(obj, "dataset", "train_images", str),
            test_images=_get(obj, "dataset", "test_images", str),
        )
    raise ConfigError("dataset.source", f"must be 'synth' or 'idx', got {source!r}")


def _parse_transfer(doc, dataset):
    obj = _get(doc, "", "transfer", dict, required=False)
    if obj is None:
        return None
    _no_unknown_keys(obj, "transfer", {"upstream_classes", "downstream_classes"})
    up = _get_list(obj, "transfer", "upstream_classes", int)
    down = _get_list(obj, "transfer", "downstream_classes", int)
    if not up or not down:
        raise ConfigError("transfer", "class lists must be non-empty")
    if set(up) & set(down):
        raise ConfigError("transfer", "upstream and downstream classes overlap")
    return TransferSection(upstream_classes=tuple(up), downstream_classes=tuple(down))


def _parse_sgd(doc, path="sgd"):
    obj = _get(doc, "", path, dict)
    _no_unknown_keys(obj, path, {"base_lr", "epochs", "momentum", "warmup_epochs",
                                 "batch_size"})
    kwargs = dict(
        base_lr=_get(obj, path, "base_lr", float),
        epochs=_get(obj, path, "epochs", int),
        momentum=_get(obj, path, "momentum", float, required=False, default=0.9),
        warmup_epochs=_get(obj, path, "warmup_epochs", int, required=False, default=0),
        batch_size=_get(obj, path, "batch_size", int, required=False, default=128),
    )
    try:
        return SgdConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


def _parse_noise(doc, seed, required, default_sigmas):
    obj = _get(doc, "", "noise", dict, required=required,
               default=None)
    if obj is None:
        return NoiseSpec(sigmas=default_sigmas, seed=seed)
    _no_unknown_keys(obj, "noise", {"sigmas", "weights"})
    sigmas = _get_list(obj, "noise", "sigmas", float)
    weights = _get_list(obj, "noise", "weights", float, required=False)
    try:
        return NoiseSpec(sigmas=tuple(sigmas),
                         weights=None if weights is None else tuple(weights),
                         seed=seed)
    except ValueError as e:
        raise ConfigError("noise", str(e)) from None


def _parse_model(doc):
    obj = _get(doc, "", "model", dict)
    _no_unknown_keys(obj, "model", {"channels", "blocks", "norm_kind", "groups"})
    model = dict(
        channels=_get(obj, "model", "channels", int),
        blocks=_get(obj, "model", "blocks", int),
        norm_kind=_get(obj, "model", "norm_kind", str),
        groups=_get(obj, "model", "groups", int, required=False),
    )
    if model["channels"] < 1:
        raise ConfigError("model.channels", "must be positive")
    if model["blocks"] < 1:
        raise ConfigError("model.blocks", "must be positive")
    if model["norm_kind"] not in ("batch", "instance", "group", "layer"):
        raise ConfigError("model.norm_kind", f"unknown kind {model['norm_kind']!r}")
    return model


def _parse_smoothing(doc):
    obj = _get(doc, "", "smoothing", dict)
    _no_unknown_keys(obj, "smoothing", {"sigmas", "n0", "n", "alpha", "batch",
                                        "max_inputs"})
    section = SmoothingSection(
        sigmas=tuple(_get_list(obj, "smoothing", "sigmas", float)),
        n0=_get(obj, "smoothing", "n0", int, required=False, default=100),
        n=_get(obj, "smoothing", "n", int),
        alpha=_get(obj, "smoothing", "alpha", float, required=False, default=0.001),
        batch=_get(obj, "smoothing", "batch", int, required=False, default=500),
        max_inputs=_get(obj, "smoothing", "max_inputs", int),
    )
    if not section.sigmas:
        raise ConfigError("smoothing.sigmas", "must be non-empty")
    if any(s <= 0 for s in section.sigmas):
        raise ConfigError("smoothing.sigmas", "certification sigma must be positive")
    for key, low in (("n0", 1), ("n", 1), ("batch", 1), ("max_inputs", 1)):
        if getattr(section, key) < low:
            raise ConfigError(f"smoothing.{key}", f"must be >= {low}")
    if not 0.0 < section.alpha < 1.0:
        raise ConfigError("smoothing.alpha", "must lie strictly in (0, 1)")
    return section


COMMAND_FIELDS = {
    "pretrain": {"out_dir", "seeds", "dataset", "transfer", "model", "noise",
                 "sgd", "eval_every"},
    "finetune": {"out_dir", "seeds", "dataset", "transfer", "checkpoint_in",
                 "noise", "sgd", "eval_every", "finetune_mode",
                 "allow_noisy_finetune"},
    "certify": {"out_dir", "seeds", "dataset", "transfer", "checkpoint_in",
                "smoothing"},
}

COMMAND_SEEDS = {
    "pretrain": ("data_train", "data_test", "transfer", "init", "train"),
    "finetune": ("data_train", "data_test", "transfer", "head", "train"),
    "certify": ("data_train", "data_test", "transfer", "certify"),
}


def load_config(path, command):
    """Parse and validate a config file for one command."""
    if command not in COMMAND_FIELDS:
        raise ValueError(f"unknown command {command!r}")
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise ConfigError("(file)", f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError("(file)", f"{path} is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("(file)", "top level must be a JSON object")
    return validate_config(doc, command)


def validate_config(doc, command):
    _no_unknown_keys(doc, "", COMMAND_FIELDS[command])
    out_dir = _get(doc, "", "out_dir", str)
    dataset = _parse_dataset(doc)
    transfer = _parse_transfer(doc, dataset)
    seed_keys = [k for k in COMMAND_SEEDS[command]
                 if k != "transfer" or transfer is not None]
    seeds = _parse_seeds(doc, seed_keys)

    kwargs = dict(command=command, out_dir=out_dir, seeds=seeds,
                  dataset=dataset, transfer=transfer)
    if command == "pretrain":
        kwargs["model"] = _parse_model(doc)
        kwargs["sgd"] = _parse_sgd(doc)
        kwargs["noise"] = _parse_noise(doc, seeds["train"], required=True,
                                       default_sigmas=(0.0,))
        kwargs["eval_every"] = _get(doc, "", "eval_every", int,
                                    required=False, default=1)
    elif command == "finetune":
        kwargs["checkpoint_in"] = _get(doc, "", "checkpoint_in", str)
        kwargs["sgd"] = _parse_sgd(doc)
        kwargs["noise"] = _parse_noise(doc, seeds["train"], required=False,
                                       default_sigmas=(0.0,))
        kwargs["eval_every"] = _get(doc, "", "eval_every", int,
                                    required=False, default=1)
        mode = _get(doc, "", "finetune_mode", str, required=False,
                    default="full_network")
        if mode not in ("full_network", "fixed_feature"):
            raise ConfigError("finetune_mode", f"unknown mode {mode!r}")
        kwargs["finetune_mode"] = mode
        kwargs["allow_noisy_finetune"] = _get(doc, "", "allow_noisy_finetune",
                                              bool, required=False, default=False)
    else:
        kwargs["checkpoint_in"] = _get(doc, "", "checkpoint_in", str)
        kwargs["smoothing"] = _parse_smoothing(doc)
    if "eval_every" in kwargs and kwargs["eval_every"] < 1:
        raise ConfigError("eval_every", "must be >= 1")
    return Config(**kwargs)


def model_spec_for(model, image_shape, num_classes):
    """Instantiate the model section against the actual image shape."""
    return conv_classifier(
        input_shape=tuple(image_shape),
        channels=model["channels"],
        blocks=model["blocks"],
        norm_kind=model["norm_kind"],
        groups=model["groups"],
        num_classes=num_classes,
    )
