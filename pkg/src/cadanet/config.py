"""Flat text experiment configs: ``section.key = value`` per line.

Configs are the experiment ledger: every run writes its fully-resolved
config (all keys, sorted) beside its outputs.  Unknown keys, bad values,
and duplicates are hard errors carrying the file line number.  Command
line overrides use the same ``key=value`` syntax and are applied after
the file.  Four stages are always present; toy and full models differ
only in widths/blocks.
"""

import os
from dataclasses import dataclass

from .backbone import (BackboneConfig, DownsampleSpec, StageConfig,
                       canonical_text)
from .errors import ConfigurationError
from .train import TrainConfig

_ENUMS = {
    "backbone.variant": ("original", "b", "d", "e"),
    "backbone.stem": ("auto", "classic", "deep", "deep-nopool"),
    "downsample.kind": ("none", "ideal", "box", "binomial3", "avgpool",
                        "dwconv", "cadasp"),
    "downsample.geometry": ("square", "disc"),
    "data.kind": ("synthetic", "cifar"),
}
_STAGE_ENUMS = {
    "filter": ("conv3x3", "dwconv", "cada", "cadasp", "da", "dasp"),
    "norm_act": ("auto", "none", "bn", "relu", "bn+relu"),
}

NUM_STAGES = 4


def _schema():
    """key -> (kind, default).  kind in {int, float, bool, str, enum,
    hw, triple, headch}."""
    s = {
        "backbone.variant": ("enum", "d"),
        "backbone.stem": ("enum", "auto"),
        "backbone.num_classes": ("int", "10"),
        "backbone.input_hw": ("hw", "32x32"),
        "downsample.kind": ("enum", "none"),
        "downsample.k": ("int", "3"),
        "downsample.head_channels": ("headch", "all"),
        "downsample.bases": ("int", "8"),
        "downsample.ca_kernel": ("int", "3"),
        "downsample.geometry": ("enum", "square"),
        "train.epochs": ("int", "5"),
        "train.batch_size": ("int", "32"),
        "train.base_lr": ("float", "0.1"),
        "train.momentum": ("float", "0.9"),
        "train.weight_decay": ("float", "1e-4"),
        "train.seed": ("int", "0"),
        "train.crop_pad": ("int", "0"),
        "train.hflip": ("bool", "false"),
        "train.mean": ("triple", "0,0,0"),
        "train.std": ("triple", "1,1,1"),
        "train.bn_weight_decay": ("bool", "true"),
        "data.kind": ("enum", "synthetic"),
        "data.path": ("str", ""),
        "data.val_path": ("str", ""),
        "data.classes": ("int", "4"),
        "data.train_samples": ("int", "256"),
        "data.val_samples": ("int", "64"),
        "data.image_hw": ("int", "32"),
        "data.noise": ("float", "0.25"),
        "out.dir": ("str", "runs/default"),
        "prune.tolerance": ("float", "0.001"),
        "spectra.grid": ("int", "64"),
    }
    stage_defaults = {
        "blocks": ("int", None), "width": ("int", None),
        "stride": ("int", None), "filter": ("enum", "conv3x3"),
        "bases": ("int", "4"), "head_channels": ("headch", "8"),
        "ca_kernel": ("int", "3"), "agg_kernel": ("int", "7"),
        "norm_act": ("enum", "auto"), "pos_encoding": ("bool", "true"),
    }
    toy = {"blocks": ("1", "1", "1", "1"), "width": ("16", "32", "64", "128"),
           "stride": ("1", "2", "2", "2")}
    for i in range(1, NUM_STAGES + 1):
        for name, (kind, default) in stage_defaults.items():
            if default is None:
                default = toy[name][i - 1]
            s[f"stage{i}.{name}"] = (kind, default)
    return s


SCHEMA = _schema()


def _parse_value(key, raw, where):
    kind, _ = SCHEMA[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw not in ("true", "false"):
                raise ValueError
            return raw == "true"
        if kind == "hw":
            parts = raw.split("x") if "x" in raw else [raw, raw]
            return (int(parts[0]), int(parts[1]))
        if kind == "triple":
            vals = tuple(float(v) for v in raw.split(","))
            if len(vals) != 3:
                raise ValueError
            return vals
        if kind == "headch":
            return 0 if raw == "all" else int(raw)
    except ValueError:
        raise ConfigurationError(
            f"{where}: key {key!r} has malformed value {raw!r} "
            f"(expected {kind})") from None
    if kind == "enum":
        allowed = _ENUMS.get(key)
        if allowed is None:
            allowed = _STAGE_ENUMS[key.split(".", 1)[1]]
        if raw not in allowed:
            raise ConfigurationError(
                f"{where}: key {key!r} has value {raw!r}; allowed: "
                f"{', '.join(allowed)}")
        return raw
    return raw


def parse_file(path):
    """Raw key -> (value string, line number); validates syntax only."""
    entries = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        where = f"{path}:{lineno}"
        if "=" not in stripped:
            raise ConfigurationError(
                f"{where}: expected 'key = value', got {line.strip()!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ConfigurationError(f"{where}: unknown key {key!r}")
        if key in entries:
            raise ConfigurationError(
                f"{where}: duplicate key {key!r} (first set on line "
                f"{entries[key][1]})")
        entries[key] = (value, lineno)
    return {k: v for k, (v, _) in entries.items()}, \
        {k: ln for k, (_, ln) in entries.items()}


def parse_overrides(pairs):
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigurationError(
                f"override {pair!r}: expected key=value")
        key, _, value = pair.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigurationError(f"override: unknown key {key!r}")
        out[key] = value.strip()
    return out


@dataclass
class Experiment:
    backbone: BackboneConfig
    train: TrainConfig
    data: dict
    out_dir: str
    seed: int
    prune_tolerance: float
    spectra_grid: int
    keys: dict                      # canonical string form of everything

    def canonical(self):
        return canonical_text(self.keys)

    def write_resolved(self, directory):
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, "resolved.cfg")
        with open(path, "w") as fh:
            fh.write(self.canonical())
        return path


def resolve(config_path=None, overrides=(), seed=None, out_dir=None):
    """Merge defaults <- file <- overrides <- flags into an Experiment."""
    raw = {k: d for k, (_, d) in SCHEMA.items()}
    lines = {}
    if config_path is not None:
        file_raw, lines = parse_file(config_path)
        raw.update(file_raw)
    raw.update(parse_overrides(list(overrides)))
    if seed is not None:
        raw["train.seed"] = str(seed)
    if out_dir is not None:
        raw["out.dir"] = out_dir

    vals = {}
    for key, value in raw.items():
        where = (f"{config_path}:{lines[key]}" if key in lines
                 else f"config key")
        vals[key] = _parse_value(key, value, where)

    stages = []
    for i in range(1, NUM_STAGES + 1):
        p = f"stage{i}."
        width = vals[p + "width"]
        hc = vals[p + "head_channels"]
        stages.append(StageConfig(
            blocks=vals[p + "blocks"], width=width,
            stride=vals[p + "stride"], filter=vals[p + "filter"],
            bases=vals[p + "bases"],
            head_channels=width if hc == 0 else hc,
            ca_kernel=vals[p + "ca_kernel"],
            agg_kernel=vals[p + "agg_kernel"],
            norm_act=vals[p + "norm_act"],
            pos_encoding=vals[p + "pos_encoding"]))
    downsample = None
    if vals["downsample.kind"] != "none":
        downsample = DownsampleSpec(
            kind=vals["downsample.kind"], k=vals["downsample.k"],
            head_channels=vals["downsample.head_channels"],
            bases=vals["downsample.bases"],
            ca_kernel=vals["downsample.ca_kernel"],
            geometry=vals["downsample.geometry"])
    bcfg = BackboneConfig(
        variant=vals["backbone.variant"], stem=vals["backbone.stem"],
        num_classes=vals["backbone.num_classes"],
        input_hw=vals["backbone.input_hw"], stages=tuple(stages),
        downsample=downsample)
    bcfg.validate()
    tcfg = TrainConfig(
        base_lr=vals["train.base_lr"], momentum=vals["train.momentum"],
        weight_decay=vals["train.weight_decay"],
        epochs=vals["train.epochs"], batch_size=vals["train.batch_size"],
        seed=vals["train.seed"], crop_pad=vals["train.crop_pad"],
        hflip=vals["train.hflip"], mean=vals["train.mean"],
        std=vals["train.std"],
        bn_weight_decay=vals["train.bn_weight_decay"])
    tcfg.validate()
    data = {k.split(".", 1)[1]: v for k, v in vals.items()
            if k.startswith("data.")}
    if data["kind"] == "cifar":
        if not data["path"] or not data["val_path"]:
            raise ConfigurationError(
                "data.kind=cifar requires data.path and data.val_path")

    canonical_keys = {}
    for key, value in vals.items():
        if key == "backbone.input_hw":
            canonical_keys[key] = f"{value[0]}x{value[1]}"
        elif key.endswith(("head_channels",)):
            canonical_keys[key] = str(value) if value else "all"
        elif isinstance(value, bool):
            canonical_keys[key] = "true" if value else "false"
        elif isinstance(value, tuple):
            canonical_keys[key] = ",".join(f"{v:g}" for v in value)
        elif isinstance(value, float):
            canonical_keys[key] = f"{value:g}"
        else:
            canonical_keys[key] = str(value)
    return Experiment(
        backbone=bcfg, train=tcfg, data=data, out_dir=vals["out.dir"],
        seed=vals["train.seed"], prune_tolerance=vals["prune.tolerance"],
        spectra_grid=vals["spectra.grid"], keys=canonical_keys)


def load_dataset_pair(experiment):
    """Train/val Dataset pair from the data section."""
    from .train import load_cifar_binary, synthetic_dataset
    data = experiment.data
    if data["kind"] == "cifar":
        return load_cifar_binary(data["path"]), \
            load_cifar_binary(data["val_path"])
    return synthetic_dataset(
        classes=data["classes"], train_samples=data["train_samples"],
        val_samples=data["val_samples"], image_hw=data["image_hw"],
        noise=data["noise"], seed=experiment.seed)


def preset_path(name):
    """Resolve a shipped preset name (with or without .cfg) to its path."""
    here = os.path.dirname(__file__)
    fname = name if name.endswith(".cfg") else name + ".cfg"
    return os.path.join(here, "configs", fname)


def find_config(name_or_path):
    """A real path wins; otherwise fall back to the shipped presets."""
    if os.path.exists(name_or_path):
        return name_or_path
    candidate = preset_path(os.path.basename(name_or_path))
    if os.path.exists(candidate):
        return candidate
    raise ConfigurationError(
        f"config {name_or_path!r} not found (not a file, not a preset)")
