"""Fréchet distance, FID from feature sets, perceptual diversity and accuracy aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import cv2
import numpy as np

from .errors import ValidationError

EIG_CLAMP = 1e-10
PSD_TOL = 1e-6


@dataclass(frozen=True)
class FeatureSet:
    vectors: np.ndarray
    source: str = "real"

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError(f"features must be an N x D matrix, got shape {v.shape}")
        if v.shape[0] < 2:
            raise ValidationError("need at least two feature vectors for a covariance")
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vectors.mean(axis=0), np.atleast_2d(np.cov(self.vectors, rowvar=False, ddof=1))


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(cov)
    w = np.where(w < EIG_CLAMP, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def _check_cov(cov: np.ndarray, name: str, d: int) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if cov.shape != (d, d):
        raise ValidationError(f"{name} has shape {cov.shape}, expected {(d, d)}")
    scale = max(1.0, float(np.abs(cov).max()))
    if not np.allclose(cov, cov.T, atol=PSD_TOL * scale):
        raise ValidationError(f"{name} is not symmetric")
    cov = (cov + cov.T) / 2.0
    if np.linalg.eigvalsh(cov).min() < -PSD_TOL * scale:
        raise ValidationError(f"{name} is not positive semi-definite")
    return cov


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """Squared Fréchet distance between N(mu1, cov1) and N(mu2, cov2).

    ``Tr(sqrt(cov1 @ cov2))`` is computed as ``Tr(sqrt(s1 @ cov2 @ s1))`` with
    ``s1 = sqrt(cov1)``, which is symmetric PSD and has the same eigenvalues.
    Eigenvalues below 1e-10 are clamped to zero.
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    if mu1.shape != mu2.shape or mu1.ndim != 1:
        raise ValidationError(f"mean shapes differ: {mu1.shape} vs {mu2.shape}")
    d = mu1.size
    cov1 = _check_cov(cov1, "cov1", d)
    cov2 = _check_cov(cov2, "cov2", d)

    s1 = _psd_sqrt(cov1)
    middle = s1 @ cov2 @ s1
    middle = (middle + middle.T) / 2.0
    w = np.linalg.eigvalsh(middle)
    tr_sqrt = float(np.sqrt(np.where(w < EIG_CLAMP, 0.0, w)).sum())
    diff = mu1 - mu2
    dist = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_sqrt)
    return max(dist, 0.0)


def fid(real: FeatureSet, synth: FeatureSet) -> float:
    if real.dim != synth.dim:
        raise ValidationError(f"feature dimensions differ: {real.dim} vs {synth.dim}")
    mu1, cov1 = real.moments()
    mu2, cov2 = synth.moments()
    return frechet_distance(mu1, cov1, mu2, cov2)


@dataclass(frozen=True)
class DiversityPair:
    original_ref: str
    augmentation_ref: str
    distance: float

    def __post_init__(self):
        if self.distance < 0:
            raise ValidationError(f"negative distance for {self.augmentation_ref}")


def lpips_diversity(pairs: Sequence[DiversityPair]) -> float:
    if not pairs:
        raise ValidationError("empty pairing")
    return float(np.mean([p.distance for p in pairs]))


def aggregate_accuracy(runs: Sequence[float]) -> dict:
    if not runs:
        raise ValidationError("no runs to aggregate")
    arr = np.asarray(runs, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size >= 2 else 0.0
    return {"mean": float(arr.mean()), "std": std, "runs": [float(r) for r in runs]}


def metrics_cell(dataset: str, method: str, fid_value=None, diversity=None, runs=None, providers=None) -> dict:
    """One (dataset, method) row of the metrics report."""
    cell = {"dataset": dataset, "method": method}
    if fid_value is not None:
        cell["fid"] = float(fid_value)
    if diversity is not None:
        cell["diversity"] = float(diversity)
    if runs:
        cell["accuracy"] = aggregate_accuracy(runs)
    if providers:
        cell["providers"] = providers
    return cell


# -- injected providers ----------------------------------------------------------


class FeatureProvider(Protocol):
    def config(self) -> dict: ...

    def __call__(self, image: np.ndarray) -> np.ndarray: ...


class DistanceProvider(Protocol):
    def config(self) -> dict: ...

    def __call__(self, a: np.ndarray, b: np.ndarray) -> float: ...


class ColorHistogramFeatures:
    """Per-channel intensity histograms; a cheap stand-in for Inception features."""

    def __init__(self, bins: int = 8):
        self.bins = bins

    def config(self) -> dict:
        return {"name": "color_histogram", "bins": self.bins}

    def __call__(self, image):
        image = image if image.ndim == 3 else image[..., None]
        feats = [
            np.histogram(image[..., c], bins=self.bins, range=(0, 256))[0] / image[..., c].size
            for c in range(image.shape[2])
        ]
        return np.concatenate(feats)


class PixelDistance:
    """Mean absolute pixel difference in [0, 1] at a fixed size; a stand-in for LPIPS."""

    def __init__(self, size: int = 64):
        self.size = size

    def config(self) -> dict:
        return {"name": "pixel_l1", "size": self.size}

    def __call__(self, a, b):
        a = cv2.resize(a, (self.size, self.size), interpolation=cv2.INTER_AREA).astype(np.float64)
        b = cv2.resize(b, (self.size, self.size), interpolation=cv2.INTER_AREA).astype(np.float64)
        if a.shape != b.shape:
            raise ValidationError("images have different channel counts")
        return float(np.abs(a - b).mean() / 255.0)
