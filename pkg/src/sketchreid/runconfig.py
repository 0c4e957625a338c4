"""Resolved run configuration: file values merged with CLI flag overrides.

The config file is a TOML subset (sections, strings, numbers, booleans, flat
arrays). Every command echoes the fully resolved configuration into its
output directory.
"""

import sys
from dataclasses import asdict, dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from sketchreid.data import SynthConfig
from sketchreid.errors import ConfigError
from sketchreid.network import NetworkConfig
from sketchreid.trainer import TrainConfig


@dataclass
class EvalSettings:
    trials: int = 10
    seed: int = 0
    gallery_camera: str = "A"
    svg: bool = True


@dataclass
class SplitSettings:
    train_fraction: float = 2.0 / 3.0
    seed: int = 0


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    network: dict = field(default_factory=dict)   # overrides for NetworkConfig
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSettings = field(default_factory=SplitSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    manifest: str = ""

    def network_config(self, n_classes, ablation=None):
        kw = dict(self.network)
        kw["n_classes"] = n_classes
        flags = ablation or ""
        if self.train.no_spt or flags == "no_spt":
            kw["with_spt"] = False
        if self.train.no_ase or flags == "no_ase":
            kw["with_ase"] = False
        return NetworkConfig(**kw)


_SYNTH_KEYS = {
    "identities": "n_identities", "variants": "n_variants",
    "images_per_camera": "images_per_camera", "side": "side",
    "body_harmonics": "body_harmonics", "clothing_harmonics": "clothing_harmonics",
    "base_radius": "base_radius", "body_amp": "body_amp",
    "clothing_amp": "clothing_amp", "jitter_rotation": "jitter_rotation",
    "jitter_scale": "jitter_scale", "jitter_translation": "jitter_translation",
    "pixel_noise": "pixel_noise", "seed": "seed",
}

_NETWORK_KEYS = {
    "stripes": "n_stripes", "stages": "stages", "input_side": "input_side",
    "angles": "n_angles", "radii": "n_radii", "max_radius": "max_radius",
    "reduction": "reduction",
}

_TRAIN_KEYS = {
    "epochs_warmup": "epochs_warmup", "epochs_joint": "epochs_joint",
    "epochs_refine": "epochs_refine", "base_lr": "base_lr", "spt_lr": "spt_lr",
    "decay": "lr_decay", "decay_period": "lr_period",
    "batch_triplets": "batch_triplets", "anchors_per_id": "anchors_per_id",
    "momentum": "momentum", "weight_decay": "weight_decay", "margin": "margin",
    "eta": "eta", "seed": "seed", "fixed_theta": "fixed_theta",
    "no_spt": "no_spt", "no_ase": "no_ase", "no_triplet": "no_triplet",
}


def _take(section, mapping, section_name):
    out = {}
    for key, value in section.items():
        if key not in mapping:
            raise ConfigError(f"unknown key {key!r} in [{section_name}]")
        out[mapping[key]] = tuple(value) if isinstance(value, list) else value
    return out


def load_run_config(path=None, overrides=None):
    """Parse the config file (if any) and apply flat 'section.key' overrides."""
    raw = {}
    if path is not None:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        raw.setdefault(section, {})[key] = value
    known = {"synth", "network", "train", "split", "eval", "io"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = RunConfig(
        synth=SynthConfig(**_take(raw.get("synth", {}), _SYNTH_KEYS, "synth")),
        network=_take(raw.get("network", {}), _NETWORK_KEYS, "network"),
        train=TrainConfig(**_take(raw.get("train", {}), _TRAIN_KEYS, "train")),
    )
    split = raw.get("split", {})
    cfg.split = SplitSettings(
        train_fraction=split.get("train_fraction", SplitSettings.train_fraction),
        seed=split.get("seed", 0),
    )
    ev = raw.get("eval", {})
    cfg.eval = EvalSettings(
        trials=ev.get("trials", 10), seed=ev.get("seed", 0),
        gallery_camera=ev.get("gallery_camera", "A"), svg=ev.get("svg", True),
    )
    cfg.manifest = raw.get("io", {}).get("manifest", "")
    return cfg


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def echo_config(cfg, path):
    """Write the resolved configuration as deterministic TOML."""
    inverse = {
        "synth": (asdict(cfg.synth), {v: k for k, v in _SYNTH_KEYS.items()}),
        "network": (dict(cfg.network), {v: v for v in cfg.network}),
        "train": (asdict(cfg.train), {v: k for k, v in _TRAIN_KEYS.items()}),
        "split": (asdict(cfg.split), {"train_fraction": "train_fraction",
                                      "seed": "seed"}),
        "eval": (asdict(cfg.eval), {k: k for k in ("trials", "seed",
                                                   "gallery_camera", "svg")}),
    }
    lines = []
    for section, (values, names) in inverse.items():
        lines.append(f"[{section}]")
        for field_name in sorted(values):
            if field_name not in names:
                continue
            lines.append(f"{names[field_name]} = {_toml_value(values[field_name])}")
        lines.append("")
    if cfg.manifest:
        lines.append("[io]")
        lines.append(f"manifest = {_toml_value(cfg.manifest)}")
        lines.append("")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines))
