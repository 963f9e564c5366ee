"""Paired image/caption datasets, batch sampling, and a synthetic corpus generator.

Caption file: one ``<image_id>\\t<caption>`` per line (UTF-8).
Split file: one ``<image_id>\\t<train|val|test>`` per line. Images absent
from the split file are not used by any split; when no split file is
given every image is in ``train``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .image import FEATURE_DIM, ImageFeatures, load_features, save_features

SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    pass


@dataclass
class PairedDataset:
    images: list[ImageFeatures]
    captions: list[tuple[str, str]]
    splits: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.id_to_index = {f.image_id: i for i, f in enumerate(self.images)}
        if len(self.id_to_index) != len(self.images):
            raise DatasetError("duplicate image ids")
        self.caption_image = np.empty(len(self.captions), dtype=np.int64)
        for j, (image_id, _) in enumerate(self.captions):
            if image_id not in self.id_to_index:
                raise DatasetError(f"caption {j} refers to unknown image id {image_id!r}")
            self.caption_image[j] = self.id_to_index[image_id]
        self.image_captions = [[] for _ in self.images]
        for j, i in enumerate(self.caption_image):
            self.image_captions[i].append(j)
        if not self.splits:
            self.splits = {"train": np.arange(len(self.images))}
        seen: dict[int, str] = {}
        for name, idx in self.splits.items():
            self.splits[name] = np.asarray(idx, dtype=np.int64)
            for i in self.splits[name]:
                if i in seen:
                    raise DatasetError(f"image {self.images[i].image_id!r} is in both "
                                       f"{seen[i]!r} and {name!r}")
                seen[int(i)] = name
                if not self.image_captions[i]:
                    raise DatasetError(f"image {self.images[i].image_id!r} in split {name!r} "
                                       f"has no captions")

    def split(self, name: str) -> np.ndarray:
        idx = self.splits.get(name)
        if idx is None or idx.size == 0:
            raise DatasetError(f"split {name!r} is empty")
        return idx

    def has_split(self, name: str) -> bool:
        return name in self.splits and self.splits[name].size > 0

    def features(self, image_indices: Sequence[int]) -> np.ndarray:
        return np.stack([self.images[i].vector for i in image_indices])

    def split_captions(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """All captions of a split's images, with each caption's image position in the split."""
        idx = self.split(name)
        caps, owner = [], []
        for pos, i in enumerate(idx):
            for j in self.image_captions[i]:
                caps.append(j)
                owner.append(pos)
        return np.array(caps, dtype=np.int64), np.array(owner, dtype=np.int64)


def read_captions(path: str | Path, id_to_index: dict[str, int] | None = None
                  ) -> list[tuple[str, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            image_id, sep, text = line.partition("\t")
            if not sep or not image_id:
                raise DatasetError(f"{path}:{lineno}: expected '<image_id>\\t<caption>'")
            if id_to_index is not None and image_id not in id_to_index:
                raise DatasetError(f"{path}:{lineno}: unknown image id {image_id!r}")
            out.append((image_id, text))
    return out


def read_splits(path: str | Path, id_to_index: dict[str, int]) -> dict[str, np.ndarray]:
    members: dict[str, list[int]] = {s: [] for s in SPLITS}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in members:
                raise DatasetError(f"{path}:{lineno}: expected '<image_id>\\t<train|val|test>'")
            image_id, name = parts
            if image_id not in id_to_index:
                raise DatasetError(f"{path}:{lineno}: unknown image id {image_id!r}")
            members[name].append(id_to_index[image_id])
    return {k: np.array(v, dtype=np.int64) for k, v in members.items() if v}


def load_dataset(features_path, captions_path, splits_path=None) -> PairedDataset:
    images = load_features(features_path)
    id_to_index = {f.image_id: i for i, f in enumerate(images)}
    captions = read_captions(captions_path, id_to_index)
    splits = read_splits(splits_path, id_to_index) if splits_path else {}
    return PairedDataset(images, captions, splits)


@dataclass
class Batch:
    image_indices: np.ndarray
    caption_indices: np.ndarray


def choose_captions(data: PairedDataset, image_indices: Sequence[int],
                    rng: np.random.Generator) -> np.ndarray:
    return np.array([data.image_captions[i][rng.integers(len(data.image_captions[i]))]
                     for i in image_indices], dtype=np.int64)


def sample_batch(data: PairedDataset, split: str, batch_size: int,
                 rng: np.random.Generator) -> Batch:
    """``batch_size`` distinct images from ``split``, one uniformly chosen caption each."""
    idx = data.split(split)
    if batch_size > idx.size:
        raise DatasetError(f"split {split!r} has {idx.size} images, fewer than batch size {batch_size}")
    chosen = rng.choice(idx, size=batch_size, replace=False)
    return Batch(chosen, choose_captions(data, chosen, rng))


def epoch_batches(data: PairedDataset, split: str, batch_size: int,
                  rng: np.random.Generator) -> list[Batch]:
    """floor(|split| / B) batches drawn without replacement over images."""
    idx = data.split(split)
    if batch_size > idx.size:
        raise DatasetError(f"split {split!r} has {idx.size} images, fewer than batch size {batch_size}")
    perm = rng.permutation(idx)
    batches = []
    for start in range(0, idx.size - batch_size + 1, batch_size):
        chosen = perm[start:start + batch_size]
        batches.append(Batch(chosen, choose_captions(data, chosen, rng)))
    return batches


# Synthetic corpus: each image carries one word per slot; its features are the
# sum of per-word prototype vectors plus noise, and its captions mention the
# same words, so text and image share a learnable signal.

_SLOTS = 4
_TEMPLATES = (
    "a {0} {1} {2} near the {3}",
    "the {1} is {0} and {2} by a {3}",
    "{0} {1}, {2}, {3}",
    "photo of a {0} {1} that {2} at the {3}.",
    "there is a {1} ({0}) {2} beside some {3}",
)


def _pseudo_words(rng: np.random.Generator, n: int, used: set[str]) -> list[str]:
    consonants = "bcdfghjklmnprstvwz"
    vowels = "aeiou"
    words = []
    while len(words) < n:
        syl = rng.integers(2, 4)
        w = "".join(consonants[rng.integers(len(consonants))] + vowels[rng.integers(len(vowels))]
                    for _ in range(syl))
        if w not in used:
            used.add(w)
            words.append(w)
    return words


@dataclass
class SyntheticCorpus:
    dataset: PairedDataset
    vocabulary: list[list[str]]
    attributes: np.ndarray

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"features": out / "features.oaf", "captions": out / "captions.tsv",
                 "splits": out / "splits.tsv"}
        save_features(paths["features"], self.dataset.images)
        with open(paths["captions"], "w", encoding="utf-8") as fh:
            for image_id, text in self.dataset.captions:
                fh.write(f"{image_id}\t{text}\n")
        with open(paths["splits"], "w", encoding="utf-8") as fh:
            for name in SPLITS:
                for i in self.dataset.splits.get(name, []):
                    fh.write(f"{self.dataset.images[i].image_id}\t{name}\n")
        return paths


def make_synthetic(n_train: int = 20, n_val: int = 0, n_test: int = 0,
                   captions_per_image: int = 1, vocab_size: int = 8,
                   noise: float = 0.1, seed: int = 0) -> SyntheticCorpus:
    """Seeded synthetic corpus with learnable text/feature correlation.

    Every image gets a distinct tuple of ``_SLOTS`` words, one drawn from
    each slot's ``vocab_size`` pseudo-words.
    """
    n = n_train + n_val + n_test
    if n < 1:
        raise ValueError("synthetic corpus needs at least one image")
    if vocab_size ** _SLOTS < n:
        raise ValueError(f"vocab_size={vocab_size} gives only {vocab_size ** _SLOTS} "
                         f"distinct images, need {n}")
    if captions_per_image < 1:
        raise ValueError("captions_per_image must be positive")
    rng = np.random.default_rng(seed)
    used: set[str] = set()
    vocab = [_pseudo_words(rng, vocab_size, used) for _ in range(_SLOTS)]

    # distinct attribute tuples, sampled without replacement
    total = vocab_size ** _SLOTS
    codes = rng.choice(total, size=n, replace=False)
    attrs = np.array([np.unravel_index(c, (vocab_size,) * _SLOTS) for c in codes], dtype=np.int64)

    prototypes = np.abs(rng.standard_normal((_SLOTS, vocab_size, FEATURE_DIM)))
    images, captions = [], []
    width = len(str(n - 1))
    for i in range(n):
        image_id = f"img{i:0{width}d}"
        vec = sum(prototypes[s, attrs[i, s]] for s in range(_SLOTS))
        vec = vec + noise * np.abs(rng.standard_normal(FEATURE_DIM))
        images.append(ImageFeatures(image_id, vec))
        words = [vocab[s][attrs[i, s]] for s in range(_SLOTS)]
        templates = rng.permutation(len(_TEMPLATES))
        for c in range(captions_per_image):
            captions.append((image_id, _TEMPLATES[templates[c % len(_TEMPLATES)]].format(*words)))

    order = np.arange(n)
    splits = {}
    for name, count, start in (("train", n_train, 0), ("val", n_val, n_train),
                               ("test", n_test, n_train + n_val)):
        if count:
            splits[name] = order[start:start + count]
    return SyntheticCorpus(PairedDataset(images, captions, splits), vocab, attrs)


def make_random_pairs(n: int, seed: int) -> PairedDataset:
    """Unrelated random features and random captions, one caption per image."""
    rng = np.random.default_rng(seed)
    images, captions = [], []
    letters = "abcdefghijklmnopqrstuvwxyz    "
    for i in range(n):
        images.append(ImageFeatures(f"r{i}", np.abs(rng.standard_normal(FEATURE_DIM))))
        length = int(rng.integers(10, 40))
        text = "".join(letters[k] for k in rng.integers(len(letters), size=length)).strip() or "x"
        captions.append((f"r{i}", text))
    return PairedDataset(images, captions)
