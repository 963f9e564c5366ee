"""Image-feature projection into the embedding cone and the feature file format.

Binary feature files are little-endian::

    b"OAF1" | u32 count | u32 dim (= 4096) |
    count x (u32 id_len | id bytes (UTF-8) | dim x float64)

Files without the magic are read as text, one record per line:
``<id> <4096 whitespace-separated floats>``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tensor import KernelTape, Tensor, abs_elementwise, linear, unit_normalize
from .text import DEFAULT_EMBED_DIM, uniform_fan_in

FEATURE_DIM = 4096
FEATURE_MAGIC = b"OAF1"


class FeatureFileError(ValueError):
    pass


@dataclass
class ImageFeatures:
    image_id: str
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (FEATURE_DIM,):
            raise ValueError(f"image {self.image_id!r}: expected {FEATURE_DIM} features, "
                             f"got shape {self.vector.shape}")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError(f"image {self.image_id!r}: non-finite feature values")


@dataclass
class ImageProjector:
    w_image: Tensor

    @property
    def d(self) -> int:
        return self.w_image.shape[0]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [("image.w_i", self.w_image)]

    def parameters(self) -> list[Tensor]:
        return [self.w_image]


def build_projector(d: int = DEFAULT_EMBED_DIM, seed: int = 0) -> ImageProjector:
    if d < 1:
        raise ValueError(f"embedding dimensionality must be positive, got {d}")
    rng = np.random.default_rng([seed, 1])
    w = Tensor(uniform_fan_in(rng, (d, FEATURE_DIM), FEATURE_DIM), name="image.w_i")
    return ImageProjector(w)


def embed_image(proj: ImageProjector, feat: ImageFeatures | np.ndarray,
                tape: KernelTape | None = None) -> Tensor:
    vec = feat.vector if isinstance(feat, ImageFeatures) else feat
    x = Tensor(vec)
    return unit_normalize(abs_elementwise(linear(x, proj.w_image, tape), tape), tape)


def embed_images(proj: ImageProjector, features: np.ndarray,
                 tape: KernelTape | None = None) -> Tensor:
    """Embed a [B, 4096] feature matrix; returns [B, d]."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != FEATURE_DIM:
        raise ValueError(f"expected features of shape [B, {FEATURE_DIM}], got {features.shape}")
    x = Tensor(features)
    return unit_normalize(abs_elementwise(linear(x, proj.w_image, tape), tape), tape)


def _check_unique(feats: Sequence[ImageFeatures]) -> None:
    seen: dict[str, int] = {}
    for i, f in enumerate(feats):
        if f.image_id in seen:
            raise FeatureFileError(f"record {i}: duplicate image id {f.image_id!r} "
                                   f"(first seen at record {seen[f.image_id]})")
        seen[f.image_id] = i


def save_features(path: str | Path, feats: Iterable[ImageFeatures]) -> None:
    feats = list(feats)
    _check_unique(feats)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", len(feats), FEATURE_DIM))
        for f in feats:
            raw_id = f.image_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_id)))
            fh.write(raw_id)
            fh.write(f.vector.astype("<f8").tobytes())


def load_features(path: str | Path) -> list[ImageFeatures]:
    raw = Path(path).read_bytes()
    if raw[:4] == FEATURE_MAGIC:
        feats = _parse_binary(raw)
    else:
        feats = _parse_text(raw)
    _check_unique(feats)
    return feats


def _parse_binary(raw: bytes) -> list[ImageFeatures]:
    if len(raw) < 12:
        raise FeatureFileError("truncated header")
    count, dim = struct.unpack_from("<II", raw, 4)
    if dim != FEATURE_DIM:
        raise FeatureFileError(f"header dimensionality is {dim}, expected {FEATURE_DIM}")
    pos = 12
    feats = []
    for i in range(count):
        if pos + 4 > len(raw):
            raise FeatureFileError(f"record {i}: truncated id length")
        (id_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        end = pos + id_len + 8 * dim
        if end > len(raw):
            raise FeatureFileError(f"record {i}: truncated record")
        try:
            image_id = raw[pos:pos + id_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FeatureFileError(f"record {i}: id is not valid UTF-8") from exc
        pos += id_len
        vec = np.frombuffer(raw, dtype="<f8", count=dim, offset=pos).astype(np.float64)
        pos = end
        try:
            feats.append(ImageFeatures(image_id, vec))
        except ValueError as exc:
            raise FeatureFileError(f"record {i}: {exc}") from exc
    if pos != len(raw):
        raise FeatureFileError(f"{len(raw) - pos} trailing bytes after {count} records")
    return feats


def _parse_text(raw: bytes) -> list[ImageFeatures]:
    feats = []
    lines = [ln for ln in raw.decode("utf-8").splitlines() if ln.strip()]
    for i, line in enumerate(lines):
        parts = line.split()
        values = parts[1:]
        if len(values) != FEATURE_DIM:
            raise FeatureFileError(f"record {i} ({parts[0]!r}): expected {FEATURE_DIM} floats, "
                                   f"got {len(values)}")
        try:
            vec = np.array([float(v) for v in values])
            feats.append(ImageFeatures(parts[0], vec))
        except ValueError as exc:
            raise FeatureFileError(f"record {i} ({parts[0]!r}): {exc}") from exc
    return feats


def save_features_text(path: str | Path, feats: Iterable[ImageFeatures]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in feats:
            fh.write(f.image_id + " " + " ".join(repr(float(v)) for v in f.vector) + "\n")
