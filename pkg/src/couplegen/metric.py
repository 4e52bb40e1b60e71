"""Background-similarity and alignment metrics plus their weighted combination.

The background score masks out the union of all entity regions (the joint
entity region, "JER"), rescales by the fraction of surviving pixels, and
averages pairwise squared distances between the masked images.  Alignment
scoring is a pluggable interface; the bundled scorer is a deterministic
hash-embedding stand-in for an external embedding model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from .numerics import Rng, ShapeError

__all__ = [
    "DegenerateMaskError",
    "PromptKeyError",
    "Lambdas",
    "MetricReport",
    "AlignmentScorer",
    "HashAlignmentScorer",
    "as_image",
    "as_mask",
    "jer",
    "validity_ratio",
    "background_similarity",
    "combined_metric",
    "build_report",
]

DEFAULT_LAMBDA_BG = 300.0
DEFAULT_LAMBDA_TI = 1.0 / 30.0


class DegenerateMaskError(ValueError):
    """Raised when the joint entity region covers the whole frame (R = 0)."""


class PromptKeyError(KeyError):
    """Raised when a scorer is asked about an unregistered prompt key."""


@dataclass(frozen=True)
class Lambdas:
    lambda_bg: float = DEFAULT_LAMBDA_BG
    lambda_ti: float = DEFAULT_LAMBDA_TI

    def __post_init__(self):
        if self.lambda_bg < 0 or self.lambda_ti < 0:
            raise ValueError("lambda weights must be nonnegative")


def as_image(img) -> np.ndarray:
    """Normalize to H x W x C float64 with values in [0, 1]."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ShapeError(f"image must be HxW or HxWxC, got shape {a.shape}")
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ValueError("image values must lie in [0, 1]")
    return a


def as_mask(mask) -> np.ndarray:
    a = np.asarray(mask)
    if a.ndim != 2:
        raise ShapeError(f"mask must be HxW, got shape {a.shape}")
    return a.astype(bool)


def jer(masks: Sequence[np.ndarray]) -> np.ndarray:
    """Joint entity region: pixelwise union of all entity masks."""
    if len(masks) < 2:
        raise ValueError(f"need at least 2 masks, got {len(masks)}")
    masks = [as_mask(m) for m in masks]
    shape = masks[0].shape
    for i, m in enumerate(masks):
        if m.shape != shape:
            raise ShapeError(f"mask {i} has shape {m.shape}, expected {shape}")
    union = masks[0].copy()
    for m in masks[1:]:
        union |= m
    return union


def validity_ratio(mask) -> float:
    """Fraction of pixels outside the joint entity region."""
    m = as_mask(mask)
    return 1.0 - int(m.sum()) / (m.shape[0] * m.shape[1])


def background_similarity(images: Sequence[np.ndarray], joint_mask) -> float:
    """-(2 / (n (n-1) R)) * sum over pairs of masked mean squared distance.

    Entity pixels are zeroed (background retained); the squared distance is
    the mean over all H*W*C positions, and the validity ratio R compensates
    for the masked area.  Identical images score exactly 0; otherwise the
    score is negative.
    """
    if len(images) < 2:
        raise ValueError(f"need at least 2 images, got {len(images)}")
    imgs = [as_image(im) for im in images]
    mask = as_mask(joint_mask)
    shape = imgs[0].shape
    for i, im in enumerate(imgs):
        if im.shape != shape:
            raise ShapeError(f"image {i} has shape {im.shape}, expected {shape}")
    if mask.shape != shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} does not match image {shape[:2]}")
    ratio = validity_ratio(mask)
    if ratio == 0.0:
        raise DegenerateMaskError("joint entity region covers every pixel (R = 0)")

    keep = (~mask)[:, :, None]
    masked = [im * keep for im in imgs]
    n = len(imgs)
    total = 0.0
    for j in range(n):
        for k in range(j + 1, n):
            diff = masked[j] - masked[k]
            total += float(np.mean(diff * diff))
    return -(2.0 / (n * (n - 1) * ratio)) * total


class AlignmentScorer(Protocol):
    def score(self, prompt_key: str, image) -> float: ...


class HashAlignmentScorer:
    """Deterministic stand-in for an external text-image embedding scorer.

    Prompt texts are embedded by seeding the kernel PRNG from a keyed hash of
    the text; images are embedded by a fixed seeded random linear projection
    of their pixels.  The score is the cosine similarity between the two
    embeddings mapped affinely to [0, 100].
    """

    def __init__(self, prompts: Mapping[str, str] | None = None, seed: int = 0, dim: int = 32):
        self.seed = seed
        self.dim = dim
        self._embeddings: dict[str, np.ndarray] = {}
        self._projections: dict[tuple, np.ndarray] = {}
        for key, text in (prompts or {}).items():
            self.add_prompt(key, text)

    def add_prompt(self, key: str, text: str) -> None:
        self._embeddings[key] = self.text_embedding(text)

    def add_embedding(self, key: str, vector) -> None:
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ShapeError(f"embedding must have shape ({self.dim},), got {v.shape}")
        self._embeddings[key] = v.copy()

    def text_embedding(self, text: str) -> np.ndarray:
        digest = hashlib.blake2b(
            text.encode("utf-8"), digest_size=8, key=self.seed.to_bytes(8, "little")
        ).digest()
        rng = Rng(int.from_bytes(digest, "little"))
        return np.array([rng.uniform(-1.0, 1.0) for _ in range(self.dim)])

    def image_embedding(self, image) -> np.ndarray:
        img = as_image(image)
        flat = img.reshape(-1)
        key = (img.shape, self.seed)
        proj = self._projections.get(key)
        if proj is None:
            rng = Rng(self.seed ^ 0xA5A5A5A5A5A5A5A5)
            proj = rng.fill(self.dim, flat.size, -1.0, 1.0)
            self._projections[key] = proj
        return proj @ flat

    def score(self, prompt_key: str, image) -> float:
        if prompt_key not in self._embeddings:
            raise PromptKeyError(f"unknown prompt key {prompt_key!r}")
        a = self._embeddings[prompt_key]
        b = self.image_embedding(image)
        na = float(np.linalg.norm(a))
        nb = float(np.linalg.norm(b))
        if na == 0.0 or nb == 0.0:
            cos = 0.0
        elif np.array_equal(a, b):
            cos = 1.0  # avoid rounding drift in the identical-vector case
        else:
            cos = float(a @ b) / (na * nb)
        return 50.0 * (1.0 + cos)


def combined_metric(f_bg: float, f_ti: Sequence[float], lambdas: Lambdas) -> float:
    """lambda_bg * f_bg + (lambda_ti / n) * sum(f_ti)."""
    if len(f_ti) == 0:
        raise ValueError("f_ti must be non-empty")
    total = 0.0
    for x in f_ti:
        total += float(x)
    return lambdas.lambda_bg * float(f_bg) + (lambdas.lambda_ti / len(f_ti)) * total


@dataclass(frozen=True)
class MetricReport:
    f_bg: float
    f_ti: tuple[float, ...]
    validity_ratio: float
    f_c: float
    lambdas: Lambdas

    def to_dict(self) -> dict:
        return {
            "f_bg": self.f_bg,
            "f_ti": list(self.f_ti),
            "validity_ratio": self.validity_ratio,
            "f_c": self.f_c,
            "lambda_bg": self.lambdas.lambda_bg,
            "lambda_ti": self.lambdas.lambda_ti,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def build_report(f_bg: float, f_ti: Sequence[float], ratio: float, lambdas: Lambdas) -> MetricReport:
    return MetricReport(
        f_bg=float(f_bg),
        f_ti=tuple(float(x) for x in f_ti),
        validity_ratio=float(ratio),
        f_c=combined_metric(f_bg, f_ti, lambdas),
        lambdas=lambdas,
    )
