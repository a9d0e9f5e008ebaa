"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment. Values from the file are
overridden by command-line flags. Every command writes the resolved
configuration next to its outputs so the run can be repeated.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable, Mapping

from .core import InputError
from .models import ModelConfig, ModelKind
from .probe import ProbeConfig
from .trainer import TrainConfig

# derived seeds: seed + offset
SEED_OFFSETS = {"train": 0, "split": 1, "probe": 2, "power": 3}


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ratios(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _fmt(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return "" if value is None else str(value)


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "seed": (int, 0),
    # model
    "model": (str, "TransE"),
    "dim": (int, 512),
    "margin": (float, 6.0),
    "p_norm": (int, 1),
    "adversarial_temperature": (float, 1.0),
    "regularization": (float, 0.0),
    # training
    "learning_rate": (float, 1e-4),
    "num_negative": (int, 60),
    "num_epoch": (int, 2000),
    "batch_size": (int, 256),
    "eval_every": (int, 50),
    "eval_sample": (int, 5000),
    "workers": (int, 1),
    "backend": (str, "auto"),
    # splitting
    "ratios": (_ratios, (0.8, 0.1, 0.1)),
    # probes
    "probe_dropout": (float, 0.1),
    "probe_train_fraction": (float, 0.9),
    "probe_epochs": (int, 100),
    "probe_learning_rate": (float, 0.1),
    "probe_batch_size": (int, 256),
    "power_samples": (int, 10_000),
    "power_percentile": (float, 95.0),
    # paths
    "train": (str, None),
    "valid": (str, None),
    "test": (str, None),
    "closure": (str, None),
    "labels": (str, None),
    "reciprocals": (str, None),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{source}:{lineno}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in SCHEMA:
            raise InputError(f"{source}:{lineno}: unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            out[key] = parser(value) if value != "" else None
        except ValueError as exc:
            raise InputError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def read_config(path: str | Path) -> dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


class RunConfig(dict):
    """Resolved settings: defaults, then the config file, then flags."""

    @classmethod
    def resolve(cls, file_values: Mapping[str, Any] | None = None, flags: Mapping[str, Any] | None = None) -> "RunConfig":
        cfg = cls({k: default for k, (_, default) in SCHEMA.items()})
        for source in (file_values or {}), (flags or {}):
            for key, value in source.items():
                if key not in SCHEMA:
                    raise InputError(f"unknown configuration key {key!r}")
                if value is not None:
                    cfg[key] = value
        return cfg

    def seed_for(self, component: str) -> int:
        return int(self["seed"]) + SEED_OFFSETS[component]

    def dump(self) -> str:
        return "".join(f"{k} = {_fmt(self[k])}\n" for k in sorted(self))

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dump(), encoding="utf-8")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            ModelKind.parse(self["model"]),
            dim=self["dim"],
            margin=self["margin"],
            p_norm=self["p_norm"],
            adversarial_temperature=self["adversarial_temperature"],
            regularization=self["regularization"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self["learning_rate"],
            num_negative=self["num_negative"],
            num_epoch=self["num_epoch"],
            batch_size=self["batch_size"],
            eval_every=self["eval_every"],
            eval_sample=self["eval_sample"],
            seed=self.seed_for("train"),
            worker_count=self["workers"],
        )

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(
            dropout=self["probe_dropout"],
            train_fraction=self["probe_train_fraction"],
            epochs=self["probe_epochs"],
            learning_rate=self["probe_learning_rate"],
            batch_size=self["probe_batch_size"],
            seed=self.seed_for("probe"),
        )
