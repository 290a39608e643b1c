"""Experiment configuration and reproducible per-trial seeding."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np


@dataclass
class ExperimentConfig:
    scenario: str
    seed: int = 0
    trials: Optional[int] = None  # None -> scenario default
    params: dict[str, Any] = field(default_factory=dict)
    out_dir: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        known = {"scenario", "seed", "trials", "params", "out_dir"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "scenario" not in data:
            raise ValueError("config must name a scenario")
        return ExperimentConfig(
            scenario=data["scenario"],
            seed=int(data.get("seed", 0)),
            trials=None if data.get("trials") is None else int(data["trials"]),
            params=dict(data.get("params", {})),
            out_dir=data.get("out_dir"),
        )

    def save(self, path: Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path: Path) -> "ExperimentConfig":
        with open(path) as fh:
            return ExperimentConfig.from_dict(json.load(fh))


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    """Independent, order-insensitive per-trial generator."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(trial_index,))
    return np.random.default_rng(seq)
