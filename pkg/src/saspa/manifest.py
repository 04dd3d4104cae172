"""Append-only augmentation manifest stored as JSON lines.

Line 1 is a header ``{"version": 1, "dataset_name": ..., "stage_log": [...]}``;
every following line is one :class:`AugmentationRecord`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

from .errors import ManifestError
from .utils import atomic_write_text, canonical_json, utc_timestamp

MANIFEST_VERSION = 1
VERDICTS = ("pending", "kept", "dropped")


@dataclass(frozen=True)
class AugmentationRecord:
    aug_id: str
    source_image_id: str
    sub_class: int
    prompt_text: str
    reference_image_id: str | None
    method: str
    params_digest: str
    seed: int
    output_path: str
    verdict: str = "pending"
    drop_reason: str | None = None

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ManifestError(f"record {self.aug_id}: unknown verdict {self.verdict!r}")
        if self.verdict == "dropped" and not self.drop_reason:
            raise ManifestError(f"record {self.aug_id}: dropped without a reason")

    def to_dict(self) -> dict:
        out = asdict(self)
        if out["drop_reason"] is None:
            del out["drop_reason"]
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "AugmentationRecord":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ManifestError(f"unknown record fields {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class StageEntry:
    stage: str
    params_digest: str
    timestamp: str

    def to_list(self) -> list:
        return [self.stage, self.params_digest, self.timestamp]


@dataclass
class AugmentationManifest:
    dataset_name: str
    records: list[AugmentationRecord] = field(default_factory=list)
    stage_log: list[StageEntry] = field(default_factory=list)

    def copy(self) -> "AugmentationManifest":
        return AugmentationManifest(self.dataset_name, list(self.records), list(self.stage_log))

    @property
    def aug_ids(self) -> set[str]:
        return {r.aug_id for r in self.records}

    def count(self, verdict: str) -> int:
        return sum(r.verdict == verdict for r in self.records)

    def pending(self) -> list[AugmentationRecord]:
        return [r for r in self.records if r.verdict == "pending"]

    def kept_by_source(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for r in self.records:
            if r.verdict == "kept":
                out.setdefault(r.source_image_id, []).append(r.aug_id)
        return out

    def append(self, records: Iterable[AugmentationRecord]) -> None:
        existing = self.aug_ids
        for r in records:
            if r.aug_id in existing:
                raise ManifestError(f"duplicate aug_id {r.aug_id}")
            existing.add(r.aug_id)
            self.records.append(r)

    def set_verdicts(self, verdicts: dict[str, tuple[bool, str | None]]) -> None:
        """Finalize pending records; ``verdicts`` maps aug_id to (keep, reason)."""
        out = []
        for r in self.records:
            if r.aug_id in verdicts:
                if r.verdict != "pending":
                    raise ManifestError(f"record {r.aug_id} already has verdict {r.verdict}")
                keep, reason = verdicts[r.aug_id]
                r = replace(r, verdict="kept" if keep else "dropped",
                            drop_reason=None if keep else reason)
            out.append(r)
        self.records = out

    def reset_verdicts(self) -> None:
        self.records = [replace(r, verdict="pending", drop_reason=None) for r in self.records]

    def log_stage(self, stage: str, params_digest: str, reproducible: bool = True) -> StageEntry:
        entry = StageEntry(stage, params_digest, utc_timestamp(reproducible))
        self.stage_log.append(entry)
        return entry

    def last_stage(self, stage: str) -> StageEntry | None:
        for entry in reversed(self.stage_log):
            if entry.stage == stage:
                return entry
        return None

    def validate_sources(self, image_ids: set[str]) -> None:
        for r in self.records:
            if r.source_image_id not in image_ids:
                raise ManifestError(f"record {r.aug_id} references unknown image {r.source_image_id!r}")


def dumps_manifest(m: AugmentationManifest) -> str:
    header = {
        "version": MANIFEST_VERSION,
        "dataset_name": m.dataset_name,
        "stage_log": [e.to_list() for e in m.stage_log],
    }
    lines = [canonical_json(header)] + [canonical_json(r.to_dict()) for r in m.records]
    return "\n".join(lines) + "\n"


def write_manifest(m: AugmentationManifest, path) -> None:
    atomic_write_text(path, dumps_manifest(m))


def loads_manifest(text: str) -> AugmentationManifest:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ManifestError("empty manifest: missing header", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"unparseable header: {exc.msg}", line=1) from exc
    if not isinstance(header, dict):
        raise ManifestError("header is not an object", line=1)
    if header.get("version") != MANIFEST_VERSION:
        raise ManifestError(
            f"version mismatch: expected {MANIFEST_VERSION}, found {header.get('version')!r}", line=1
        )
    try:
        stage_log = [StageEntry(*entry) for entry in header.get("stage_log", [])]
        m = AugmentationManifest(str(header["dataset_name"]), [], stage_log)
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"malformed header: {exc}", line=1) from exc
    for n, line in enumerate(lines[1:], start=2):
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"unparseable record: {exc.msg}", line=n) from exc
        try:
            m.records.append(AugmentationRecord.from_dict(doc))
        except ManifestError as exc:
            raise ManifestError(str(exc), line=n) from exc
        except TypeError as exc:
            raise ManifestError(f"malformed record: {exc}", line=n) from exc
    return m


def read_manifest(path) -> AugmentationManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    return loads_manifest(path.read_text(encoding="utf-8"))
