"""Run configuration: flat key=value sections in a single text file.

Two built-in profiles share every interface: "paper" reproduces the
published training protocol (Adam 0.9/0.999/1e-8, batch 16, lr 1e-5,
10 epochs, seeds 1000/2000/3000, 25 positions); "toy" shrinks the model so
the whole suite runs on a laptop in minutes. The only environment override
is RUN_SEED, for CI.
"""

from __future__ import annotations

import configparser
import os
from copy import deepcopy
from pathlib import Path

from .errors import InputDataError
from .training import TrainSettings
from .transformer import ModelConfig

SECTION_ORDER = ("model", "classifier", "cvae", "training", "data", "eval")

PAPER_DEFAULTS: dict[str, dict[str, str]] = {
    "model": {
        "layers": "6",
        "hidden": "512",
        "heads": "8",
        "ffn": "2048",
        "max_pos": "25",
        "dropout": "0.1",
    },
    "classifier": {"kind": "mixture", "abs_diff": "false"},
    "cvae": {
        "pooling": "concoder",
        "latent_dim": "",
        "kl_warmup_epochs": "1.0",
        "beta": "1.0",
    },
    "training": {
        "batch_size": "16",
        "lr": "1e-5",
        "epochs": "10",
        "seeds": "1000,2000,3000",
        "adam_beta1": "0.9",
        "adam_beta2": "0.999",
        "adam_eps": "1e-8",
        "lambda_ce": "1.0",
        "sample_latent": "true",
        "num_threads": "1",
    },
    "data": {
        "train": "",
        "val": "",
        "test": "",
        "format": "jsonl",
        "delimiter": ",",
        "min_freq": "3",
        "max_len": "25",
        "col_premise": "premise",
        "col_hypothesis": "hypothesis",
        "col_label": "label",
        "col_explanation": "explanation",
        "col_explanation_1": "explanation_1",
        "col_explanation_2": "explanation_2",
        "col_explanation_3": "explanation_3",
    },
    "eval": {"annotations": "", "bleu_smoothing": "false"},
}

TOY_OVERRIDES: dict[str, dict[str, str]] = {
    "model": {"layers": "2", "hidden": "64", "heads": "2", "ffn": "256", "dropout": "0.0"},
    "training": {"batch_size": "4", "lr": "1e-3", "epochs": "200", "seeds": "1000"},
    "data": {"min_freq": "1"},
}


def _as_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes", "on"):
        return True
    if text.lower() in ("false", "0", "no", "off"):
        return False
    raise InputDataError(f"expected a boolean, got {text!r}")


class RunConfig:
    """Resolved configuration: every key present, every value a string."""

    def __init__(self, sections: dict[str, dict[str, str]]):
        self.sections = sections

    def get(self, section: str, key: str) -> str:
        try:
            return self.sections[section][key]
        except KeyError as exc:
            raise InputDataError(f"missing config key {section}.{key}") from exc

    def model_config(self, vocab_size: int) -> ModelConfig:
        latent = self.get("cvae", "latent_dim").strip()
        return ModelConfig(
            vocab_size=vocab_size,
            layers=int(self.get("model", "layers")),
            hidden=int(self.get("model", "hidden")),
            heads=int(self.get("model", "heads")),
            ffn=int(self.get("model", "ffn")),
            max_pos=int(self.get("model", "max_pos")),
            dropout=float(self.get("model", "dropout")),
            latent_dim=int(latent) if latent else None,
        )

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            batch_size=int(self.get("training", "batch_size")),
            lr=float(self.get("training", "lr")),
            epochs=int(self.get("training", "epochs")),
            adam_beta1=float(self.get("training", "adam_beta1")),
            adam_beta2=float(self.get("training", "adam_beta2")),
            adam_eps=float(self.get("training", "adam_eps")),
            beta=float(self.get("cvae", "beta")),
            kl_warmup_epochs=float(self.get("cvae", "kl_warmup_epochs")),
            lambda_ce=float(self.get("training", "lambda_ce")),
            sample_latent=_as_bool(self.get("training", "sample_latent")),
            max_len=int(self.get("data", "max_len")),
            num_threads=int(self.get("training", "num_threads")),
        )

    def seeds(self) -> list[int]:
        override = os.environ.get("RUN_SEED")
        if override:
            return [int(override)]
        return [int(s) for s in self.get("training", "seeds").split(",") if s.strip()]

    def schema(self) -> dict[str, str]:
        keys = (
            "premise", "hypothesis", "label", "explanation",
            "explanation_1", "explanation_2", "explanation_3",
        )
        return {k: self.get("data", f"col_{k}") for k in keys}

    def min_freq(self) -> int:
        return int(self.get("data", "min_freq"))

    def copy(self) -> "RunConfig":
        return RunConfig(deepcopy(self.sections))


def default_config(profile: str = "paper") -> RunConfig:
    sections = deepcopy(PAPER_DEFAULTS)
    if profile == "toy":
        for section, values in TOY_OVERRIDES.items():
            sections[section].update(values)
    elif profile != "paper":
        raise InputDataError(f"unknown profile {profile!r}")
    return RunConfig(sections)


def load_run_config(path: str | Path | None, profile: str = "paper") -> RunConfig:
    """Profile defaults overlaid with the file's key=value sections."""
    config = default_config(profile)
    if path is None:
        return config
    path = Path(path)
    if not path.exists():
        raise InputDataError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    for section in parser.sections():
        if section not in config.sections:
            raise InputDataError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in config.sections[section]:
                raise InputDataError(f"unknown config key {section}.{key}")
            config.sections[section][key] = value
    return config


def save_run_config(config: RunConfig, path: str | Path) -> None:
    """Echo the fully resolved configuration next to a run's outputs."""
    lines = []
    for section in SECTION_ORDER:
        lines.append(f"[{section}]")
        for key, value in config.sections[section].items():
            lines.append(f"{key} = {value}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")
