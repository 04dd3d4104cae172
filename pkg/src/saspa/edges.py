"""Structural conditioning maps extracted from real images."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import cv2
import numpy as np

SHORTEST_SIDE = 512


@dataclass(frozen=True)
class EdgeMap:
    data: np.ndarray = field(repr=False)
    source_image_id: str = ""
    detector: str = "canny"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"edge map must have one channel, got shape {self.data.shape}")
        if self.detector not in ("canny", "hed"):
            raise ValueError(f"unknown detector {self.detector!r}")

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])


def _check_image(image: np.ndarray) -> None:
    if image is None or image.ndim not in (2, 3) or image.shape[0] == 0 or image.shape[1] == 0:
        raise ValueError("image must be a non-empty 2-D or 3-D array")
    if image.ndim == 3 and image.shape[2] not in (1, 3):
        raise ValueError(f"unsupported channel count {image.shape[2]}")


def to_gray(image: np.ndarray) -> np.ndarray:
    _check_image(image)
    if image.ndim == 3:
        image = image[..., 0] if image.shape[2] == 1 else cv2.cvtColor(image, cv2.COLOR_BGR2GRAY)
    return np.ascontiguousarray(image, dtype=np.uint8)


def shortest_side_size(width: int, height: int, target: int = SHORTEST_SIDE) -> tuple[int, int]:
    if width <= 0 or height <= 0:
        raise ValueError("zero-dimension image")
    if width <= height:
        return target, int(round(height * target / width))
    return int(round(width * target / height)), target


def resize_shortest_side(image: np.ndarray, target: int = SHORTEST_SIDE) -> np.ndarray:
    """Bilinear resize so that ``min(width, height) == target``, keeping aspect ratio."""
    if image is None or image.size == 0 or 0 in image.shape[:2]:
        raise ValueError("zero-dimension image")
    h, w = image.shape[:2]
    new_w, new_h = shortest_side_size(w, h, target)
    if (new_w, new_h) == (w, h):
        return image
    return cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)


def auto_thresholds(image: np.ndarray) -> tuple[int, int]:
    """Median heuristic: ``(0.66 * median, 1.33 * median)`` clamped to [0, 255]."""
    median = float(np.median(to_gray(image)))
    low = int(max(0.0, 0.66 * median))
    high = int(min(255.0, 1.33 * median))
    return low, high


def extract_canny_edges(
    image: np.ndarray,
    low: float | None = None,
    high: float | None = None,
    source_image_id: str = "",
    blur_ksize: int = 5,
    blur_sigma: float = 1.4,
) -> EdgeMap:
    """Canny edges: grayscale, Gaussian smoothing, Sobel, non-max suppression, hysteresis.

    Thresholds default to :func:`auto_thresholds`.
    """
    if (low is None) != (high is None):
        raise ValueError("give both thresholds or neither")
    if low is None:
        low, high = auto_thresholds(image)
    if low < 0 or high < 0 or low > high:
        raise ValueError(f"invalid thresholds low={low} high={high}")
    gray = to_gray(image)
    if blur_ksize > 1:
        gray = cv2.GaussianBlur(gray, (blur_ksize, blur_ksize), blur_sigma)
    edges = cv2.Canny(gray, float(low), float(high), L2gradient=False)
    params = {"low": float(low), "high": float(high), "blur_ksize": blur_ksize, "blur_sigma": blur_sigma}
    return EdgeMap(edges, source_image_id, "canny", params)


class EdgeDetector(Protocol):
    name: str

    def __call__(self, image: np.ndarray, source_image_id: str = "") -> EdgeMap: ...


class CannyDetector:
    name = "canny"

    def __init__(self, low: float | None = None, high: float | None = None):
        self.low, self.high = low, high

    def __call__(self, image, source_image_id=""):
        return extract_canny_edges(image, self.low, self.high, source_image_id)


class HedDetector:
    """Adapter for a learned soft-edge model.

    ``model`` maps an image to a float map in [0, 1] of the same height and width.
    """

    name = "hed"

    def __init__(self, model: Callable[[np.ndarray], np.ndarray]):
        self.model = model

    def __call__(self, image, source_image_id=""):
        soft = np.asarray(self.model(image), dtype=np.float64)
        if soft.shape != image.shape[:2]:
            raise ValueError(f"HED model returned shape {soft.shape}, expected {image.shape[:2]}")
        data = np.clip(np.rint(soft * 255.0), 0, 255).astype(np.uint8)
        return EdgeMap(data, source_image_id, "hed", {})


def edge_map_path(directory, source_image_id: str) -> Path:
    return Path(directory) / f"{source_image_id}.edge.png"


def save_edge_map(edge: EdgeMap, directory) -> Path:
    path = edge_map_path(directory, edge.source_image_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), edge.data):
        raise OSError(f"failed to write {path}")
    return path


def load_edge_map(directory, source_image_id: str) -> EdgeMap:
    path = edge_map_path(directory, source_image_id)
    data = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if data is None:
        raise FileNotFoundError(path)
    return EdgeMap(data, source_image_id, "canny", {})


def read_image(path) -> np.ndarray:
    image = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if image is None:
        raise FileNotFoundError(f"cannot read image {path}")
    return image


def write_image(path, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), image):
        raise OSError(f"failed to write {path}")
