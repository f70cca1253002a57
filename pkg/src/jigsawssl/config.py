"""Experiment configuration: a flat INI document with one section level.

Unknown sections or keys are hard errors (a silently ignored typo in a
hyperparameter invalidates an experiment).  Values round-trip losslessly
through the file representation, and the config hash is taken over sorted
``section.key=value`` lines so key order never matters.

Override precedence (lowest to highest): built-in defaults, named profile,
``--config`` file, ``JIGSAWSSL_SECTION_KEY`` environment variables, explicit
``--section.key`` command-line flags.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .augment import AugmentationPolicy
from .engine import TrainConfig
from .errors import ConfigError

ENV_PREFIX = "JIGSAWSSL_"


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_ints(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in raw.split(",") if part.strip() != "")
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {raw!r}") from None


def _parse_float_pair(raw: str) -> tuple[float, float]:
    parts = [p for p in raw.split(",") if p.strip() != ""]
    if len(parts) != 2:
        raise ConfigError(f"expected two comma-separated floats, got {raw!r}")
    return (float(parts[0]), float(parts[1]))


def _parse_opt_int(raw: str):
    return None if raw.strip() == "" else int(raw)


def _parse_opt_floats(raw: str):
    if raw.strip() == "":
        return None
    return tuple(float(p) for p in raw.split(",") if p.strip() != "")


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_render(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _ident(raw: str) -> str:
    return raw


# (parser, default) per section.key
SCHEMA: dict[str, dict[str, tuple] ] = {
    "run": {
        "name": (_ident, "experiment"),
        "out_dir": (_ident, "runs/experiment"),
    },
    "data": {
        "manifest": (_ident, ""),
        "eval_manifest": (_ident, ""),
        "image_size": (int, 224),
        "resize_to": (int, 256),
        "crop_size": (int, 224),
        "mean": (_parse_opt_floats, None),
        "std": (_parse_opt_floats, None),
    },
    "train": {
        "batch_size": (int, 16),
        "epochs": (int, 200),
        "lr_init": (float, 0.002),
        "momentum": (float, 0.9),
        "weight_decay": (float, 0.001),
        "granularity_schedule": (_parse_ints, (8, 4, 2, 1)),
        "lambda": (float, 0.005),
        "beta": (float, 1.0),
        "projector_dim": (int, 512),
        "pool_size": (int, 64),
        "seed": (int, 0),
        "checkpoint_every": (int, 0),
    },
    "network": {
        "backbone": (_ident, "small"),
        "widths": (_parse_ints, (8, 16, 32, 64)),
        "head_width": (_parse_opt_int, None),
        "projector_hidden": (_parse_opt_int, None),
    },
    "augment": {
        "crop_scale": (_parse_float_pair, (0.6, 1.0)),
        "crop_ratio": (_parse_float_pair, (0.75, 4 / 3)),
        "flip_prob": (float, 0.5),
        "jitter_prob": (float, 0.8),
        "brightness": (float, 0.4),
        "contrast": (float, 0.4),
        "saturation": (float, 0.4),
        "hue": (float, 0.1),
        "grayscale_prob": (float, 0.2),
        "blur_prob": (float, 0.5),
        "blur_sigma": (_parse_float_pair, (0.1, 2.0)),
        "solarize_prob": (float, 0.1),
        "solarize_threshold": (float, 0.5),
    },
    "ablation": {
        "jigsaw": (_parse_bool, True),
        "progressive": (_parse_bool, True),
        "barlow": (_parse_bool, True),
    },
}


@dataclass
class ExperimentConfig:
    """Typed view over the full section/key table."""

    sections: dict[str, dict[str, object]]

    # -- construction ------------------------------------------------------

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls({s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()})

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "ExperimentConfig":
        config = cls.defaults()
        config.update_from_text(text, source)
        return config

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text(), source=str(path))

    def update_from_text(self, text: str, source: str = "<string>") -> None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {source}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                self.set(section, key, raw)

    # -- access ------------------------------------------------------------

    def _spec(self, section: str, key: str):
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        return SCHEMA[section][key]

    def get(self, section: str, key: str):
        self._spec(section, key)
        return self.sections[section][key]

    def set(self, section: str, key: str, raw: str) -> None:
        parse, _default = self._spec(section, key)
        try:
            self.sections[section][key] = parse(raw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from exc

    def apply_env(self, environ: dict) -> None:
        for section, keys in SCHEMA.items():
            for key in keys:
                var = f"{ENV_PREFIX}{section.upper()}_{key.upper()}"
                if var in environ:
                    self.set(section, key, environ[var])

    def apply_overrides(self, pairs: list[tuple[str, str]]) -> None:
        """Apply (``section.key``, raw value) command-line overrides."""
        for dotted, raw in pairs:
            if "." not in dotted:
                raise ConfigError(f"override key must be section.key, got {dotted!r}")
            section, key = dotted.split(".", 1)
            self.set(section, key, raw)

    # -- serialization -----------------------------------------------------

    def to_ini(self) -> str:
        out = io.StringIO()
        for section in SCHEMA:
            out.write(f"[{section}]\n")
            for key in SCHEMA[section]:
                out.write(f"{key} = {_render(self.sections[section][key])}\n")
            out.write("\n")
        return out.getvalue()

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ini())
        return path

    def hash(self) -> str:
        lines = sorted(
            f"{section}.{key}={_render(value)}"
            for section, keys in self.sections.items()
            for key, value in keys.items()
        )
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]

    # -- derived objects ----------------------------------------------------

    def train_config(self, mode: str, num_classes: int | None = None) -> TrainConfig:
        t = self.sections["train"]
        n = self.sections["network"]
        a = self.sections["ablation"]
        return TrainConfig(
            batch_size=t["batch_size"],
            epochs=t["epochs"],
            lr_init=t["lr_init"],
            momentum=t["momentum"],
            weight_decay=t["weight_decay"],
            granularity_schedule=tuple(t["granularity_schedule"]),
            barlow_lambda=t["lambda"],
            beta=t["beta"],
            projector_dim=t["projector_dim"],
            pool_size=t["pool_size"],
            seed=t["seed"],
            mode=mode,
            use_jigsaw=a["jigsaw"],
            progressive=a["progressive"],
            use_barlow=a["barlow"],
            backbone=n["backbone"],
            widths=tuple(n["widths"]),
            head_width=n["head_width"],
            projector_hidden=n["projector_hidden"],
            num_classes=num_classes,
            checkpoint_every=t["checkpoint_every"],
        )

    def augment_policy(self) -> AugmentationPolicy:
        g = self.sections["augment"]
        return AugmentationPolicy(
            crop_scale=tuple(g["crop_scale"]),
            crop_ratio=tuple(g["crop_ratio"]),
            flip_prob=g["flip_prob"],
            jitter_prob=g["jitter_prob"],
            brightness=g["brightness"],
            contrast=g["contrast"],
            saturation=g["saturation"],
            hue=g["hue"],
            grayscale_prob=g["grayscale_prob"],
            blur_prob=g["blur_prob"],
            blur_sigma=tuple(g["blur_sigma"]),
            solarize_prob=g["solarize_prob"],
            solarize_threshold=g["solarize_threshold"],
        )


def available_profiles() -> list[str]:
    root = resources.files("jigsawssl").joinpath("profiles")
    return sorted(p.name[: -len(".ini")] for p in root.iterdir() if p.name.endswith(".ini"))


def load_profile(name: str) -> str:
    """Raw INI text of a packaged profile."""
    path = resources.files("jigsawssl").joinpath("profiles", f"{name}.ini")
    if not path.is_file():
        raise ConfigError(f"unknown profile {name!r}; available: {available_profiles()}")
    return path.read_text()
