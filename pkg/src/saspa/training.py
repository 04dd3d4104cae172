"""Replacement sampling of augmentations into training, plus per-dataset defaults."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .dataset import DatasetDescriptor
from .errors import RegistryError, TrainingError
from .manifest import AugmentationManifest

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.4
FEW_SHOT_ALPHA = 0.6
HIGH_ALPHA_DELTA = 0.2
FEW_SHOT_EPOCHS = 100
ALPHA_OVERRIDES = {"cub": 0.1}
REGIMES = ("full", "few_shot", "high")


@dataclass(frozen=True)
class HyperparameterRecord:
    learning_rate: float
    batch_size: int
    weight_decay: float
    epochs: int
    optimizer: str
    momentum: float

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "weight_decay", "epochs", "momentum"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


HYPERPARAMETERS = {
    "aircraft": HyperparameterRecord(0.001, 4, 1e-5, 140, "SGD", 0.9),
    "compcars": HyperparameterRecord(0.001, 8, 1e-5, 140, "SGD", 0.9),
    "cars": HyperparameterRecord(0.001, 8, 1e-5, 140, "SGD", 0.9),
    "cub": HyperparameterRecord(0.001, 16, 1e-5, 140, "SGD", 0.9),
    "dtd": HyperparameterRecord(0.001, 16, 1e-5, 140, "SGD", 0.9),
    "airbusvsboeing": HyperparameterRecord(0.001, 4, 1e-5, 140, "SGD", 0.9),
}


def dataset_key(name: str) -> str:
    """Registry key: lowercase alphanumerics only ("Airbus vs. Boeing" -> "airbusvsboeing")."""
    return re.sub(r"[^a-z0-9]", "", name.lower())


def default_hyperparameters(dataset_name: str) -> HyperparameterRecord:
    try:
        return HYPERPARAMETERS[dataset_key(dataset_name)]
    except KeyError:
        raise RegistryError(f"no hyperparameters registered for dataset {dataset_name!r}") from None


def resolve_alpha(dataset_name: str, regime: str = "full", override: float | None = None) -> float:
    if regime not in REGIMES:
        raise RegistryError(f"unknown regime {regime!r}")
    if override is not None:
        if not 0.0 <= override <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {override}")
        return float(override)
    key = dataset_key(dataset_name)
    if key not in HYPERPARAMETERS:
        raise RegistryError(f"unknown dataset {dataset_name!r}; pass an explicit alpha")
    if regime == "few_shot":
        return FEW_SHOT_ALPHA
    alpha = ALPHA_OVERRIDES.get(key, DEFAULT_ALPHA)
    if regime == "high":
        alpha = round(alpha + HIGH_ALPHA_DELTA, 10)
    return alpha


@dataclass(frozen=True)
class ReplacementPolicy:
    alpha: float = DEFAULT_ALPHA
    M: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class Slot:
    slot_index: int
    source: str  # "real" | "synthetic"
    image_ref: str
    real_image_id: str


@dataclass(frozen=True)
class EpochPlan:
    epoch: int
    slots: tuple[Slot, ...]

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def synthetic_count(self) -> int:
        return sum(s.source == "synthetic" for s in self.slots)

    @property
    def synthetic_fraction(self) -> float:
        return self.synthetic_count / len(self.slots) if self.slots else 0.0


def sample_epoch(
    d: DatasetDescriptor, m: AugmentationManifest, p: ReplacementPolicy, epoch: int
) -> EpochPlan:
    """Replace each train image, independently with probability ``alpha``, by one of its kept augmentations.

    Images with no kept augmentation always stay real. The plan has exactly one
    slot per train image and depends only on ``(seed, epoch)``.
    """
    kept = m.kept_by_source()
    rng = np.random.default_rng([p.seed, epoch])
    train = d.split("train")
    coins = rng.random(len(train))
    picks = rng.random(len(train))
    slots = []
    for i, image_id in enumerate(train):
        augs = kept.get(image_id)
        if augs and coins[i] < p.alpha:
            ref = augs[min(int(picks[i] * len(augs)), len(augs) - 1)]
            slots.append(Slot(i, "synthetic", ref, image_id))
        else:
            slots.append(Slot(i, "real", image_id, image_id))
    return EpochPlan(epoch, tuple(slots))


class TrainerCallback(Protocol):
    """Consumes one epoch plan; may return a metrics dict for the run log."""

    def __call__(self, epoch: int, plan: EpochPlan) -> dict | None: ...


class CountingTrainer:
    """Trainer stand-in that records what it was fed."""

    def __init__(self):
        self.plans: list[EpochPlan] = []

    def __call__(self, epoch, plan):
        self.plans.append(plan)
        return {"slots": len(plan), "synthetic": plan.synthetic_count}


TRAINERS: dict[str, Callable[[], TrainerCallback]] = {"count": CountingTrainer}


def get_trainer(name: str) -> TrainerCallback:
    try:
        return TRAINERS[name]()
    except KeyError:
        raise RegistryError(f"unknown trainer {name!r}; available: {sorted(TRAINERS)}") from None


def run_training(
    d: DatasetDescriptor,
    m: AugmentationManifest,
    p: ReplacementPolicy,
    trainer: TrainerCallback,
    epochs: int,
    log_path=None,
    stop_augmentation_epoch: int | None = None,
) -> list[dict]:
    """Feed ``trainer`` a fresh plan every epoch and return the run log.

    From ``stop_augmentation_epoch`` on (never, by default) plans are all-real.
    The log file, when given, gains one line per epoch so a trainer failure
    leaves the completed epochs on disk.
    """
    if m.pending():
        raise TrainingError("manifest has unfiltered (pending) records")
    log: list[dict] = []
    path = Path(log_path) if log_path else None
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("", encoding="utf-8")
    for epoch in range(epochs):
        policy = p
        if stop_augmentation_epoch is not None and epoch >= stop_augmentation_epoch:
            policy = ReplacementPolicy(0.0, p.M, p.seed)
        plan = sample_epoch(d, m, policy, epoch)
        try:
            metrics = trainer(epoch, plan)
        except Exception as exc:
            raise TrainingError(f"trainer failed at epoch {epoch}: {exc}", log) from exc
        entry = {"epoch": epoch, "synthetic_fraction": plan.synthetic_fraction}
        if metrics:
            entry["trainer_metrics"] = metrics
        log.append(entry)
        if path is not None:
            with path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return log
