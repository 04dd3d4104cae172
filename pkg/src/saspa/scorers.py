"""Model-free score providers for tests and offline runs.

Real CLIP / classifier providers implement the same two methods
(``similarities`` and ``softmax``) and are passed to :class:`Scorers` directly.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DatasetDescriptor, ImageRecord
from .errors import RegistryError
from .filtering import SIMILARITY, SOFTMAX, Scorers, ScoreVector, compute_class_thresholds, semantic_prompt_set
from .manifest import AugmentationRecord
from .utils import stable_digest


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


class HashScorer:
    """Pseudo-random but reproducible scores keyed on the record's aug_id.

    Roughly ``drop_rate`` of records fail each check: the target label (label 0
    for the semantic set, the record's sub-class otherwise) loses the argmax or
    falls to the bottom of the softmax.
    """

    def __init__(self, meta_class: str, class_names: Sequence[str], drop_rate: float = 0.1, seed: int = 0):
        self.meta_class = meta_class
        self.class_names = list(class_names)
        self.drop_rate = drop_rate
        self.seed = seed

    def _rng(self, *key) -> np.random.Generator:
        return np.random.default_rng(int(stable_digest([self.seed, *key]), 16))

    def similarities(self, record: AugmentationRecord, texts: Sequence[str]) -> ScoreVector:
        texts = list(texts)
        rng = self._rng("sim", record.aug_id, texts)
        target = 0 if texts == semantic_prompt_set(self.meta_class) else record.sub_class
        scores = rng.uniform(0.1, 0.3, size=len(texts))
        if rng.random() >= self.drop_rate:
            scores[target] = 0.35
        else:
            scores[target] = 0.05
        return ScoreVector(texts, scores, SIMILARITY)

    def _class_softmax(self, true_label: int, *key) -> ScoreVector:
        rng = self._rng("cls", *key)
        logits = rng.normal(size=len(self.class_names))
        margin = rng.uniform(0.5, 3.0)
        if rng.random() >= self.drop_rate:
            logits[true_label] = logits.max() + margin
        else:
            logits[true_label] = logits.min() - margin
        return ScoreVector(self.class_names, _softmax(logits), SOFTMAX)

    def softmax(self, record: AugmentationRecord) -> ScoreVector:
        return self._class_softmax(record.sub_class, record.aug_id)

    def softmax_real(self, image: ImageRecord) -> ScoreVector:
        return self._class_softmax(image.sub_class, "real", image.id)


class TableScorer:
    """Scores looked up by aug_id from a JSON table.

    Table layout::

        {"<aug_id>": {"similarity": {"<text>": score, ...}, "softmax": [p0, p1, ...]}}
    """

    def __init__(self, table: dict, class_names: Sequence[str]):
        self.table = table
        self.class_names = list(class_names)

    @classmethod
    def from_file(cls, path, class_names) -> "TableScorer":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), class_names)

    def similarities(self, record, texts):
        row = self.table[record.aug_id]["similarity"]
        return ScoreVector(list(texts), [row[t] for t in texts], SIMILARITY)

    def softmax(self, record):
        return ScoreVector(self.class_names, self.table[record.aug_id]["softmax"], SOFTMAX)


SCORER_NAMES = ("hash", "keep_all", "table:<path>")


def build_scorers(name: str, d: DatasetDescriptor, seed: int = 0, need_thresholds: bool = False) -> Scorers:
    if name in ("hash", "keep_all"):
        provider = HashScorer(d.meta_class, d.sub_classes, 0.1 if name == "hash" else 0.0, seed)
    elif name.startswith("table:"):
        provider = TableScorer.from_file(name[len("table:"):], d.sub_classes)
    else:
        raise RegistryError(f"unknown scorer {name!r}; available: {', '.join(SCORER_NAMES)}")
    scorers = Scorers(d.meta_class, d.sub_classes, text_image=provider, classifier=provider)
    if need_thresholds:
        if not hasattr(provider, "softmax_real"):
            raise RegistryError(f"scorer {name!r} cannot score real images for ALIA thresholds")
        confidences = [
            (img.sub_class, float(provider.softmax_real(img).scores[img.sub_class])) for img in d.train
        ]
        scorers.thresholds = compute_class_thresholds(confidences, classes=sorted({c for c, _ in confidences}))
    return scorers
