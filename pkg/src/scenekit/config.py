"""Plain-text configuration files and flag overrides.

Files use INI-style sections mirroring the config types, e.g.::

    [backbone]
    stages = 16:2:2, 32:2:2, 32:2:2

    [train]
    strategy = direct
    epochs = 50

Every command-line flag overrides its config key. Unknown sections or
keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .attention import AttentionConfig
from .augment import MixupConfig
from .backbone import BackboneConfig, ConvStage
from .head import HeadConfig, LossConfig
from .model import ModelConfig
from .trainer import TrainConfig

_BOOL_TRUE = ("1", "true", "yes", "on")
_BOOL_FALSE = ("0", "false", "no", "off")

KNOWN_KEYS = {
    "backbone": ("stages", "in_channels"),
    "attention": ("num_heads", "key_dim", "stream_pool_mode", "concat_axis"),
    "head": ("hidden_width", "dropout_rate", "num_classes"),
    "loss": ("lambda", "epsilon"),
    "mixup": ("uniform_low", "uniform_high", "beta_alpha", "beta_beta"),
    "model": ("pool", "zero_init_biases"),
    "train": ("strategy", "learning_rate", "batch_size", "epochs", "optimizer",
              "beta1", "beta2", "adam_epsilon", "seed", "crop_reduction",
              "erase_size", "erase_fill", "val_fraction", "patience",
              "val_acc_target"),
}


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in _BOOL_TRUE:
        return True
    if lowered in _BOOL_FALSE:
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_stages(text: str) -> tuple[ConvStage, ...]:
    stages = []
    for part in text.split(","):
        fields = part.strip().split(":")
        if len(fields) != 3:
            raise ConfigError(f"stage {part.strip()!r} must be channels:kernel:stride")
        stages.append(ConvStage(int(fields[0]), int(fields[1]), int(fields[2])))
    if not stages:
        raise ConfigError("backbone stages list is empty")
    return tuple(stages)


def read_config_file(path: Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    parser.read_string(text, source=str(path))
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in KNOWN_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        out[section] = {}
        for key, value in parser.items(section):
            if key not in KNOWN_KEYS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            out[section][key] = value
    return out


class ConfigBundle:
    """Merged view of a config file plus command-line overrides."""

    def __init__(self, file_path: Path | None = None):
        self.values: dict[str, dict[str, str]] = (
            read_config_file(file_path) if file_path else {})

    def override(self, section: str, key: str, value) -> None:
        if value is None:
            return
        if section not in KNOWN_KEYS or key not in KNOWN_KEYS[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        self.values.setdefault(section, {})[key] = str(value)

    def _get(self, section: str, key: str, cast, default):
        raw = self.values.get(section, {}).get(key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc

    def _get_optional(self, section: str, key: str, cast):
        raw = self.values.get(section, {}).get(key)
        if raw is None or raw.strip().lower() in ("", "none"):
            return None
        return self._get(section, key, cast, None)

    def model_config(self, num_classes: int | None = None) -> ModelConfig:
        backbone = BackboneConfig(
            stages=self._get("backbone", "stages", _parse_stages, BackboneConfig().stages),
            in_channels=self._get("backbone", "in_channels", int, 3),
        )
        attention = AttentionConfig(
            num_heads=self._get("attention", "num_heads", int, 16),
            key_dim=self._get("attention", "key_dim", int, 128),
            stream_pool_mode=self._get("attention", "stream_pool_mode", str, "average"),
            concat_axis=self._get("attention", "concat_axis", str, "channel"),
        )
        head = HeadConfig(
            hidden_width=self._get("head", "hidden_width", int, 128),
            dropout_rate=self._get("head", "dropout_rate", float, 0.2),
            num_classes=(num_classes if num_classes is not None
                         else self._get("head", "num_classes", int, 45)),
        )
        loss = LossConfig(
            lam=self._get("loss", "lambda", float, 1e-4),
            epsilon=self._get("loss", "epsilon", float, 1e-12),
        )
        return ModelConfig(
            backbone=backbone, attention=attention, head=head, loss=loss,
            pool=self._get("model", "pool", str, "attention"),
            zero_init_biases=self._get("model", "zero_init_biases", _parse_bool, False),
        )

    def train_config(self) -> TrainConfig:
        mixup = MixupConfig(
            uniform_low=self._get("mixup", "uniform_low", float, 0.0),
            uniform_high=self._get("mixup", "uniform_high", float, 1.0),
            beta_alpha=self._get("mixup", "beta_alpha", float, 0.2),
            beta_beta=self._get("mixup", "beta_beta", float, 0.2),
        )
        return TrainConfig(
            strategy=self._get("train", "strategy", str, "direct"),
            learning_rate=self._get_optional("train", "learning_rate", float),
            batch_size=self._get("train", "batch_size", int, 32),
            epochs=self._get("train", "epochs", int, 10),
            optimizer=self._get("train", "optimizer", str, "adam"),
            beta1=self._get("train", "beta1", float, 0.9),
            beta2=self._get("train", "beta2", float, 0.999),
            adam_epsilon=self._get("train", "adam_epsilon", float, 1e-8),
            seed=self._get("train", "seed", int, 0),
            crop_reduction=self._get("train", "crop_reduction", int, 10),
            erase_size=self._get("train", "erase_size", int, 20),
            erase_fill=self._get("train", "erase_fill", float, 0.0),
            val_fraction=self._get("train", "val_fraction", float, 0.1),
            patience=self._get_optional("train", "patience", int),
            val_acc_target=self._get_optional("train", "val_acc_target", float),
        )

    def resolved(self) -> dict:
        return {section: dict(keys) for section, keys in sorted(self.values.items())}
