import sys
from pathlib import Path

import cv2
import numpy as np
import pytest
import yaml

from saspa.dataset import DatasetDescriptor, ImageRecord


def write_toy_dataset(root: Path, n: int = 10, classes=("Boeing 707-320", "Airbus A320"), name="aircraft",
                      size=(48, 64), captions=False) -> Path:
    """Tiny on-disk dataset of drawn rectangles; returns the descriptor path."""
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(1234)
    images = []
    for i in range(n):
        h, w = size
        img = np.full((h, w, 3), 40 + 10 * i, np.uint8)
        x0, y0 = int(rng.integers(4, w // 3)), int(rng.integers(4, h // 3))
        cv2.rectangle(img, (x0, y0), (x0 + w // 2, y0 + h // 2), (200, 180, 160), -1)
        path = root / "images" / f"img{i:02d}.png"
        path.parent.mkdir(exist_ok=True)
        cv2.imwrite(str(path), img)
        entry = {"id": f"img{i:02d}", "path": f"images/img{i:02d}.png", "sub_class": i % len(classes)}
        if captions:
            entry["caption"] = f"a plane on a runway number {i}"
        images.append(entry)
    doc = {
        "name": name,
        "meta_class": "Airplane",
        "sub_classes": list(classes),
        "images": images,
        "splits": {"train": [im["id"] for im in images]},
    }
    path = root / "dataset.yaml"
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


@pytest.fixture
def toy_dataset_path(tmp_path):
    return write_toy_dataset(tmp_path / "toy")


def make_descriptor(class_sizes, meta="Airplane", name="synthetic", split="train", **extra) -> DatasetDescriptor:
    """In-memory descriptor with ``class_sizes[c]`` train images of class c."""
    images, ids = [], []
    for c, size in enumerate(class_sizes):
        for j in range(size):
            image_id = f"c{c}_{j:05d}"
            images.append(ImageRecord(image_id, f"{image_id}.png", c, **extra))
            ids.append(image_id)
    return DatasetDescriptor(
        name=name,
        meta_class=meta,
        sub_classes=tuple(f"class {c}" for c in range(len(class_sizes))),
        images=tuple(images),
        splits={split: tuple(ids)},
    ).validate()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
