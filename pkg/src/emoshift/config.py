"""Run configuration: profiles, TOML files, and dotted command-line overrides.

Precedence, lowest to highest: profile defaults, config file, --set overrides,
dedicated flags. A top-level seed flows into every sub-config whose section
does not pin its own.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from emoshift.encoders import EncoderConfig
from emoshift.losses import LossWeights
from emoshift.space import SpaceTrainConfig
from emoshift.transfer import TransferConfig


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass(frozen=True)
class PathsConfig:
    manifest: str = "out/manifest.jsonl"
    images: str | None = None  # image root; None resolves against the manifest
    out_dir: str = "out"


@dataclass(frozen=True)
class DatasetConfig:
    n_per_class: int = 8
    image_size: int = 32

    def __post_init__(self):
        if self.n_per_class <= 0 or self.image_size < 16:
            raise ValueError("n_per_class must be positive and image_size >= 16")


@dataclass(frozen=True)
class ClassifierConfig:
    steps: int = 300
    batch_size: int = 32
    learning_rate: float = 5e-2

    def __post_init__(self):
        if min(self.steps, self.batch_size) <= 0 or self.learning_rate <= 0:
            raise ValueError("classifier steps, batch_size, learning_rate "
                             "must be positive")


@dataclass(frozen=True)
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    space: SpaceTrainConfig = field(default_factory=SpaceTrainConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    # fixed alternating-step count for train-space; None derives from epochs
    space_steps: int | None = None

    def as_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "paths": PathsConfig,
    "dataset": DatasetConfig,
    "encoder": EncoderConfig,
    "space": SpaceTrainConfig,
    "classifier": ClassifierConfig,
    "transfer": TransferConfig,
    "weights": LossWeights,
}
_TOP_LEVEL = {"seed", "space_steps"}

# full-scale hyperparameters are the sub-config defaults; the toy profile
# shrinks every stage so the whole pipeline finishes in minutes on CPU
PROFILES: dict[str, dict] = {
    "full": {},
    "toy": {
        "dataset": {"n_per_class": 8, "image_size": 32},
        "encoder": {"backend": "toy_stub", "d_t": 32, "visual_channels": 64,
                    "d": 32},
        "space": {"d": 32, "n_entries": 16, "batch_size": 16,
                  "learning_rate": 5e-3, "log_every": 50},
        "space_steps": 300,
        "classifier": {"steps": 300, "batch_size": 32, "learning_rate": 5e-2},
        "transfer": {"d_tok": 64, "n_blocks": 2, "n_heads": 4, "batch_size": 4,
                     "learning_rate": 1e-3, "iterations": 2000,
                     "decoder_channels": 32, "n_patches": 8, "patch_size": 16,
                     "log_every": 100},
    },
}


def _parse_scalar(raw: str):
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    if raw.lower() in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            continue
    return raw


def parse_override(item: str) -> tuple[tuple[str, ...], object]:
    """'section.key=value' (or 'key=value' for top-level) -> (path, value)."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    path = tuple(key.strip().split("."))
    if len(path) > 2 or not all(path):
        raise ConfigError(f"override key {key!r} must be 'key' or 'section.key'")
    return path, _parse_scalar(raw.strip())


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _build_section(name: str, cls, data: dict):
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"[{name}] has no field {key!r}; "
                              f"known fields: {', '.join(sorted(known))}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{name}] {e}") from e


def build_run_config(data: dict) -> RunConfig:
    """Assemble a validated RunConfig from a plain nested dict."""
    data = dict(data)
    seed = data.pop("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    space_steps = data.pop("space_steps", None)
    if space_steps is not None and (not isinstance(space_steps, int)
                                    or space_steps <= 0):
        raise ConfigError(f"space_steps must be a positive integer or unset, "
                          f"got {space_steps!r}")

    sections = {}
    for name, cls in _SECTIONS.items():
        section = data.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table of key = value pairs")
        if "seed" in {f.name for f in fields(cls)}:
            section = {"seed": seed, **section}
        sections[name] = _build_section(name, cls, section)
    if data:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(data))}; "
                          f"known sections: {', '.join(sorted(_SECTIONS))}")
    return RunConfig(seed=seed, space_steps=space_steps, **sections)


def load_run_config(config_path: str | Path | None = None, profile: str = "full",
                    overrides: list[str] | None = None,
                    seed: int | None = None) -> RunConfig:
    """Layer profile, optional TOML file, and dotted overrides into a RunConfig."""
    if profile not in PROFILES:
        raise ConfigError(f"profile must be one of {sorted(PROFILES)}, "
                          f"got {profile!r}")
    data = dict(PROFILES[profile])

    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, "rb") as f:
                file_data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config file {path}: {e}") from e
        data = _merge(data, file_data)

    for item in overrides or []:
        keys, value = parse_override(item)
        if len(keys) == 1:
            if keys[0] not in _TOP_LEVEL:
                raise ConfigError(f"unknown top-level key {keys[0]!r}; "
                                  f"top-level keys: {', '.join(sorted(_TOP_LEVEL))}")
            data[keys[0]] = value
        else:
            if keys[0] not in _SECTIONS:
                raise ConfigError(f"unknown config section {keys[0]!r}; "
                                  f"sections: {', '.join(sorted(_SECTIONS))}")
            data = _merge(data, {keys[0]: {keys[1]: value}})

    if seed is not None:
        data["seed"] = seed
    return build_run_config(data)
