"""Dataset descriptors and split construction.

A descriptor is a YAML (or JSON) document::

    name: aircraft
    meta_class: Airplane
    sub_classes: [Boeing 707-320, ...]
    background_tags: [sky, grass, road]   # optional
    images:
      - {id: a001, path: images/a001.jpg, sub_class: 0, background_tag: sky, caption: ...}
    splits:
      train: [a001, ...]
      val: [...]
      test: [...]

Image paths are resolved relative to the descriptor's directory.
"""

from __future__ import annotations

import math
import random
import warnings
from collections import defaultdict
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Mapping

import yaml

from .errors import DescriptorError

DISJOINT_SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    sub_class: int
    background_tag: str | None = None
    caption: str | None = None

    def to_dict(self) -> dict:
        out = {"id": self.id, "path": self.path, "sub_class": self.sub_class}
        if self.background_tag is not None:
            out["background_tag"] = self.background_tag
        if self.caption is not None:
            out["caption"] = self.caption
        return out


@dataclass(frozen=True)
class DatasetDescriptor:
    name: str
    meta_class: str
    sub_classes: tuple[str, ...]
    images: tuple[ImageRecord, ...]
    splits: Mapping[str, tuple[str, ...]]
    background_tags: tuple[str, ...] | None = None
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sub_classes", tuple(self.sub_classes))
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "splits", {k: tuple(v) for k, v in self.splits.items()})
        if self.background_tags is not None:
            object.__setattr__(self, "background_tags", tuple(self.background_tags))

    # -- lookups -------------------------------------------------------------

    @cached_property
    def by_id(self) -> dict[str, ImageRecord]:
        return {img.id: img for img in self.images}

    def split(self, name: str) -> tuple[str, ...]:
        return self.splits.get(name, ())

    @property
    def train(self) -> tuple[ImageRecord, ...]:
        index = self.by_id
        return tuple(index[i] for i in self.split("train"))

    def train_by_class(self) -> dict[int, list[str]]:
        groups: dict[int, list[str]] = defaultdict(list)
        for img in self.train:
            groups[img.sub_class].append(img.id)
        return dict(groups)

    def resolve_path(self, image: ImageRecord) -> Path:
        p = Path(image.path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    def split_sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.splits.items()}

    # -- validation ----------------------------------------------------------

    def validate(self) -> "DatasetDescriptor":
        if not self.name:
            raise DescriptorError("field 'name' must be non-empty")
        if not self.meta_class:
            raise DescriptorError("field 'meta_class' must be non-empty")
        if not self.sub_classes:
            raise DescriptorError("field 'sub_classes' must be non-empty")
        if len(set(self.sub_classes)) != len(self.sub_classes):
            raise DescriptorError("field 'sub_classes' contains duplicates")

        seen: set[str] = set()
        for img in self.images:
            if img.id in seen:
                raise DescriptorError(f"field 'images': duplicate id {img.id!r}")
            seen.add(img.id)
            if not 0 <= img.sub_class < len(self.sub_classes):
                raise DescriptorError(
                    f"field 'images[{img.id}].sub_class': index {img.sub_class} out of range"
                )
            if img.background_tag is not None:
                if self.background_tags is None:
                    raise DescriptorError(
                        f"field 'images[{img.id}].background_tag': dataset declares no background_tags"
                    )
                if img.background_tag not in self.background_tags:
                    raise DescriptorError(
                        f"field 'images[{img.id}].background_tag': unknown tag {img.background_tag!r}"
                    )

        members: dict[str, str] = {}
        for split_name, ids in self.splits.items():
            for image_id in ids:
                if image_id not in seen:
                    raise DescriptorError(
                        f"field 'splits.{split_name}': dangling image id {image_id!r}"
                    )
                if split_name in DISJOINT_SPLITS:
                    other = members.get(image_id)
                    if other is not None and other != split_name:
                        raise DescriptorError(
                            f"field 'splits': image {image_id!r} is in both {other} and {split_name}"
                        )
                    if other == split_name:
                        raise DescriptorError(
                            f"field 'splits.{split_name}': image {image_id!r} listed twice"
                        )
                    members[image_id] = split_name
        return self

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "meta_class": self.meta_class,
            "sub_classes": list(self.sub_classes),
            "images": [img.to_dict() for img in self.images],
            "splits": {k: list(v) for k, v in self.splits.items()},
        }
        if self.background_tags is not None:
            out["background_tags"] = list(self.background_tags)
        return out


def _require(doc: Mapping, key: str, where: str = ""):
    if key not in doc:
        raise DescriptorError(f"missing field {where}{key!r}")
    return doc[key]


def descriptor_from_dict(doc: Mapping, root: Path | None = None) -> DatasetDescriptor:
    if not isinstance(doc, Mapping):
        raise DescriptorError("descriptor must be a mapping at top level")
    raw_images = _require(doc, "images")
    if not isinstance(raw_images, list):
        raise DescriptorError("field 'images' must be a list")
    images = []
    for n, item in enumerate(raw_images):
        if not isinstance(item, Mapping):
            raise DescriptorError(f"field 'images[{n}]' must be a mapping")
        try:
            sub_class = int(_require(item, "sub_class", f"images[{n}]."))
        except (TypeError, ValueError):
            raise DescriptorError(f"field 'images[{n}].sub_class' must be an integer") from None
        images.append(
            ImageRecord(
                id=str(_require(item, "id", f"images[{n}].")),
                path=str(_require(item, "path", f"images[{n}].")),
                sub_class=sub_class,
                background_tag=item.get("background_tag"),
                caption=item.get("caption"),
            )
        )
    splits = _require(doc, "splits")
    if not isinstance(splits, Mapping):
        raise DescriptorError("field 'splits' must be a mapping")
    sub_classes = _require(doc, "sub_classes")
    if not isinstance(sub_classes, list):
        raise DescriptorError("field 'sub_classes' must be a list")
    tags = doc.get("background_tags")
    return DatasetDescriptor(
        name=str(_require(doc, "name")),
        meta_class=str(_require(doc, "meta_class")),
        sub_classes=tuple(str(s) for s in sub_classes),
        images=tuple(images),
        splits={str(k): tuple(str(i) for i in (v or ())) for k, v in splits.items()},
        background_tags=tuple(tags) if tags is not None else None,
        root=root,
    ).validate()


def load_dataset(descriptor_path) -> DatasetDescriptor:
    path = Path(descriptor_path)
    if not path.is_file():
        raise DescriptorError(f"descriptor not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise DescriptorError(f"cannot parse descriptor {path}: {exc}") from exc
    return descriptor_from_dict(doc, root=path.parent.resolve())


def save_dataset(d: DatasetDescriptor, path) -> None:
    Path(path).write_text(yaml.safe_dump(d.to_dict(), sort_keys=False), encoding="utf-8")


def _with_train(d: DatasetDescriptor, train: list[str], **extra_splits) -> DatasetDescriptor:
    splits = dict(d.splits)
    splits["train"] = tuple(train)
    splits.update({k: tuple(v) for k, v in extra_splits.items()})
    return replace(d, splits=splits).validate()


def carve_validation_split(d: DatasetDescriptor, fraction: float, seed: int) -> DatasetDescriptor:
    """Move ``floor(fraction * n_c)`` train images of every sub-class into a new val split.

    The carve is stratified per sub-class and a pure function of ``(d, fraction, seed)``.
    Images that stay in train keep their original order.
    """
    if "train" not in d.splits:
        raise DescriptorError("dataset has no train split")
    if d.split("val"):
        raise DescriptorError("dataset already has a val split")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    groups = d.train_by_class()
    for c, name in enumerate(d.sub_classes):
        if not groups.get(c):
            raise DescriptorError(f"sub-class {name!r} has zero train images")

    rng = random.Random(seed)
    moved: set[str] = set()
    for c in sorted(groups):
        ids = sorted(groups[c])
        # guard against 0.29 * 100 == 28.999...
        n_val = math.floor(fraction * len(ids) + 1e-9)
        moved.update(rng.sample(ids, n_val))
    train = [i for i in d.split("train") if i not in moved]
    val = [i for i in d.split("train") if i in moved]
    return _with_train(d, train, val=val)


def make_few_shot_subset(d: DatasetDescriptor, shots: int, seed: int) -> DatasetDescriptor:
    if shots < 1:
        raise ValueError("shots must be >= 1")
    groups = d.train_by_class()
    for c, name in enumerate(d.sub_classes):
        have = len(groups.get(c, ()))
        if have < shots:
            raise DescriptorError(
                f"sub-class {name!r} has {have} train images, {shots} shots requested"
            )
    rng = random.Random(seed)
    keep: set[str] = set()
    for c in sorted(groups):
        keep.update(rng.sample(sorted(groups[c]), shots))
    return _with_train(d, [i for i in d.split("train") if i in keep])


def make_contextual_bias_split(
    d: DatasetDescriptor, rules: Mapping[str, set[str] | list[str]]
) -> DatasetDescriptor:
    """Keep only train images whose background tag is allowed for their class.

    ``rules`` maps sub-class name to allowed tags; classes without a rule are untouched.
    Val and test are never modified.
    """
    for name in rules:
        if name not in d.sub_classes:
            raise DescriptorError(f"rule references unknown class {name!r}")
    allowed = {d.sub_classes.index(name): set(tags) for name, tags in rules.items()}
    train = []
    for img in d.train:
        if img.background_tag is None:
            raise DescriptorError(f"train image {img.id!r} has no background_tag")
        tags = allowed.get(img.sub_class)
        if tags is None or img.background_tag in tags:
            train.append(img.id)
    out = _with_train(d, train)
    remaining = out.train_by_class()
    for c in allowed:
        if not remaining.get(c):
            warnings.warn(
                f"class {d.sub_classes[c]!r} has zero train images after the bias split",
                stacklevel=2,
            )
    return out
