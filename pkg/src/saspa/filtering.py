"""Meta-class and sub-class fidelity filters for generated augmentations."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import FilterError
from .manifest import AugmentationManifest, AugmentationRecord

logger = logging.getLogger(__name__)

DEFAULT_TOPK = 10
# predictive-confidence filtering is unreliable with very few shots
TOPK_MIN_SHOTS = 9
SIMILARITY = "text_image_similarity"
SOFTMAX = "classifier_softmax"


@dataclass(frozen=True)
class ScoreVector:
    labels: tuple[str, ...]
    scores: np.ndarray = field(repr=False)
    kind: str = SIMILARITY

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "scores", scores)
        if self.kind not in (SIMILARITY, SOFTMAX):
            raise ValueError(f"unknown score kind {self.kind!r}")
        if len(self.labels) != scores.size:
            raise ValueError(f"{len(self.labels)} labels but {scores.size} scores")
        if self.kind == SOFTMAX and scores.size:
            if (scores < 0).any() or abs(scores.sum() - 1.0) > 1e-6:
                raise ValueError("softmax scores must be non-negative and sum to 1")

    def __len__(self) -> int:
        return self.scores.size


@dataclass(frozen=True)
class FilterVerdict:
    aug_id: str
    keep: bool
    stage: str
    reason: str = ""

    def __post_init__(self):
        if not self.keep and not self.reason:
            raise ValueError("a drop verdict needs a reason")


@dataclass(frozen=True)
class ClassThresholds:
    thresholds: dict[int, float]

    def __post_init__(self):
        for c, t in self.thresholds.items():
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"threshold for class {c} outside [0, 1]: {t}")

    def __getitem__(self, c: int) -> float:
        return self.thresholds[c]

    def __contains__(self, c) -> bool:
        return c in self.thresholds


def first_argmax(scores: np.ndarray) -> int:
    """Index of the maximum; ties go to the lowest index."""
    return int(np.argmax(scores))


def _require_kind(s: ScoreVector, kind: str) -> None:
    if len(s) == 0:
        raise FilterError("empty score vector")
    if s.kind != kind:
        raise FilterError(f"expected {kind} scores, got {s.kind}")


def _check_label(s: ScoreVector, true_label: int) -> None:
    if not 0 <= true_label < len(s):
        raise FilterError(f"true label {true_label} out of range for {len(s)} classes")


def semantic_prompt_set(meta_class: str) -> list[str]:
    if not meta_class:
        raise FilterError("meta_class must be non-empty")
    return [
        f"a photo of a {meta_class.lower()}",
        "a photo of an object",
        "a photo of a scene",
        "a photo",
        "a black photo",
    ]


def semantic_filter(s: ScoreVector, aug_id: str = "") -> FilterVerdict:
    """Keep iff the meta-class prompt (label 0) scores highest."""
    _require_kind(s, SIMILARITY)
    best = first_argmax(s.scores)
    if best == 0:
        return FilterVerdict(aug_id, True, "semantic")
    return FilterVerdict(aug_id, False, "semantic", f"semantic_argmax={s.labels[best]}")


def true_label_rank(scores: np.ndarray, true_label: int) -> int:
    """1-based rank by descending score; ties resolved by ascending class index."""
    t = scores[true_label]
    return 1 + int(np.count_nonzero(scores > t)) + int(np.count_nonzero(scores[:true_label] == t))


def topk_confidence_filter(
    s: ScoreVector, true_label: int, k: int = DEFAULT_TOPK, aug_id: str = ""
) -> FilterVerdict:
    _require_kind(s, SOFTMAX)
    _check_label(s, true_label)
    if not 1 <= k <= len(s):
        raise FilterError(f"k={k} outside [1, {len(s)}]")
    rank = true_label_rank(s.scores, true_label)
    if rank <= k:
        return FilterVerdict(aug_id, True, "topk")
    return FilterVerdict(aug_id, False, "topk", f"true_rank={rank}>k={k}")


def compute_class_thresholds(train_confidences: Iterable[tuple[int, float]], classes: Sequence[int] | None = None) -> ClassThresholds:
    """Per-class mean of the correct-label softmax score over training images."""
    sums: dict[int, float] = {}
    counts: Counter = Counter()
    for c, score in train_confidences:
        sums[c] = sums.get(c, 0.0) + float(score)
        counts[c] += 1
    for c in classes or ():
        if counts[c] == 0:
            raise FilterError(f"class {c} has no training confidences")
    if not counts:
        raise FilterError("no training confidences")
    return ClassThresholds({c: sums[c] / counts[c] for c in sorted(sums)})


def alia_threshold_filter(
    s: ScoreVector, true_label: int, t: ClassThresholds, aug_id: str = ""
) -> FilterVerdict:
    """Drop when the predicted class's confidence reaches its threshold.

    Both confident-correct (redundant) and confident-wrong (drifted) images go.
    """
    _require_kind(s, SOFTMAX)
    _check_label(s, true_label)
    pred = first_argmax(s.scores)
    if pred not in t:
        raise FilterError(f"no threshold for predicted class {pred}")
    conf = float(s.scores[pred])
    if conf >= t[pred]:
        return FilterVerdict(
            aug_id, False, "alia", f"confidence={conf:.4f}>=t[{s.labels[pred]}]={t[pred]:.4f}"
        )
    return FilterVerdict(aug_id, True, "alia")


def clip_label_filter(s: ScoreVector, true_label: int, aug_id: str = "") -> FilterVerdict:
    _require_kind(s, SIMILARITY)
    _check_label(s, true_label)
    best = first_argmax(s.scores)
    if best == true_label or s.scores[best] == s.scores[true_label]:
        return FilterVerdict(aug_id, True, "clip_label")
    return FilterVerdict(aug_id, False, "clip_label", f"clip_argmax={s.labels[best]}")


# -- pipeline ------------------------------------------------------------------


class TextImageScorer(Protocol):
    """Text-image similarity provider (e.g. CLIP)."""

    def similarities(self, record: AugmentationRecord, texts: Sequence[str]) -> ScoreVector: ...


class ClassifierScorer(Protocol):
    """Softmax provider from a classifier trained on the real dataset."""

    def softmax(self, record: AugmentationRecord) -> ScoreVector: ...


@dataclass
class Scorers:
    meta_class: str
    class_names: Sequence[str]
    text_image: TextImageScorer | None = None
    classifier: ClassifierScorer | None = None
    thresholds: ClassThresholds | None = None
    label_template: str = "a photo of a {}"


@dataclass(frozen=True)
class FilterConfig:
    use_semantic: bool = True
    use_topk: bool = True
    k: int = DEFAULT_TOPK
    alternative: str = "none"

    def __post_init__(self):
        if self.alternative not in ("none", "alia", "clip_label"):
            raise ValueError(f"unknown alternative filter {self.alternative!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @classmethod
    def for_shots(cls, shots: int | None, **kwargs) -> "FilterConfig":
        cfg = cls(**kwargs)
        if shots is not None and shots < TOPK_MIN_SHOTS and cfg.use_topk:
            cfg = cls(**{**kwargs, "use_topk": False})
        return cfg

    @property
    def stages(self) -> list[str]:
        out = []
        if self.use_semantic:
            out.append("semantic")
        if self.use_topk:
            out.append("topk")
        if self.alternative != "none":
            out.append(self.alternative)
        return out

    def to_dict(self) -> dict:
        return {"use_semantic": self.use_semantic, "use_topk": self.use_topk, "k": self.k,
                "alternative": self.alternative}


@dataclass
class StageStats:
    name: str
    evaluated: int = 0
    dropped: int = 0
    reasons: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {"name": self.name, "evaluated": self.evaluated, "dropped": self.dropped,
                "reasons": dict(sorted(self.reasons.items()))}


@dataclass
class FilterReport:
    total: int
    kept: int
    dropped: int
    scorer_errors: int
    per_stage: list[StageStats]

    @property
    def drop_fraction(self) -> float:
        return self.dropped / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "kept": self.kept,
            "dropped": self.dropped,
            "scorer_errors": self.scorer_errors,
            "drop_fraction": self.drop_fraction,
            "per_stage": [s.to_dict() for s in self.per_stage],
        }


def _stage_verdict(stage: str, record: AugmentationRecord, scorers: Scorers, config: FilterConfig) -> FilterVerdict:
    if stage == "semantic":
        if scorers.text_image is None:
            raise FilterError("semantic filtering needs a text-image scorer")
        s = scorers.text_image.similarities(record, semantic_prompt_set(scorers.meta_class))
        return semantic_filter(s, aug_id=record.aug_id)
    if stage == "clip_label":
        if scorers.text_image is None:
            raise FilterError("CLIP-label filtering needs a text-image scorer")
        texts = [scorers.label_template.format(n) for n in scorers.class_names]
        s = scorers.text_image.similarities(record, texts)
        return clip_label_filter(s, record.sub_class, aug_id=record.aug_id)
    if scorers.classifier is None:
        raise FilterError(f"{stage} filtering needs a classifier scorer")
    s = scorers.classifier.softmax(record)
    if stage == "topk":
        return topk_confidence_filter(s, record.sub_class, min(config.k, len(s)), aug_id=record.aug_id)
    if scorers.thresholds is None:
        raise FilterError("ALIA filtering needs class thresholds")
    return alia_threshold_filter(s, record.sub_class, scorers.thresholds, aug_id=record.aug_id)


def apply_filter_pipeline(
    manifest: AugmentationManifest, scorers: Scorers, config: FilterConfig = FilterConfig()
) -> tuple[AugmentationManifest, FilterReport]:
    """Give every pending record a final verdict.

    Stages run cheapest-first (semantic, then top-k, then the alternative filter);
    a record dropped by one stage is not scored by the next. A scorer exception
    drops the record with reason ``scorer_error``.
    """
    pending = manifest.pending()
    if not pending:
        raise FilterError("manifest has no pending records")
    for stage in config.stages:
        # fail fast on missing providers, before any record is touched
        if stage in ("semantic", "clip_label") and scorers.text_image is None:
            raise FilterError(f"{stage} filtering needs a text-image scorer")
        if stage in ("topk", "alia") and scorers.classifier is None:
            raise FilterError(f"{stage} filtering needs a classifier scorer")
        if stage == "alia" and scorers.thresholds is None:
            raise FilterError("ALIA filtering needs class thresholds")

    stats = [StageStats(name) for name in config.stages]
    verdicts: dict[str, tuple[bool, str | None]] = {}
    scorer_errors = 0
    for record in pending:
        keep, reason = True, None
        for stage_stats in stats:
            stage_stats.evaluated += 1
            try:
                v = _stage_verdict(stage_stats.name, record, scorers, config)
            except Exception as exc:
                logger.warning("scorer failed on %s at %s: %s", record.aug_id, stage_stats.name, exc)
                scorer_errors += 1
                keep, reason = False, "scorer_error"
                stage_stats.dropped += 1
                stage_stats.reasons["scorer_error"] += 1
                break
            if not v.keep:
                keep, reason = False, f"{v.stage}: {v.reason}"
                stage_stats.dropped += 1
                stage_stats.reasons[v.reason] += 1
                break
        verdicts[record.aug_id] = (keep, reason)

    out = manifest.copy()
    out.set_verdicts(verdicts)
    kept = sum(k for k, _ in verdicts.values())
    report = FilterReport(len(pending), kept, len(pending) - kept, scorer_errors, stats)
    return out, report
