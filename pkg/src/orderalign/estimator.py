"""scikit-learn style wrapper around the training harness."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import PairedDataset
from .image import FEATURE_DIM, ImageFeatures, embed_images
from .retrieval import DIRECTIONS, KFoldReport, bidirectional_report, kfold_report, rank_matrix
from .text import DEFAULT_MAX_LENGTH, Alphabet, embed_texts, encode_chars
from .train import RunConfig, train


def _check_features(X) -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if X.shape[1] != FEATURE_DIM:
        raise ValueError(f"expected {FEATURE_DIM} features per image, got {X.shape[1]}")
    return X


def _caption_groups(y, n_images: int) -> list[list[str]]:
    """Accept one caption per image or a list of captions per image."""
    if isinstance(y, str) or len(y) != n_images:
        raise ValueError(f"need captions for each of the {n_images} images")
    groups = []
    for i, item in enumerate(y):
        caps = [item] if isinstance(item, str) else list(item)
        if not caps or not all(isinstance(c, str) for c in caps):
            raise ValueError(f"image {i}: captions must be a string or a non-empty list of strings")
        groups.append(caps)
    return groups


class OrderEmbeddingAligner(TransformerMixin, BaseEstimator):
    """Learns a shared order-embedding space for image features and captions.

    ``fit(X, y)`` takes image features ``X`` of shape [n, 4096] and, per
    image, either one caption or a list of captions. ``transform`` embeds
    images; ``embed_text`` embeds captions. ``score`` is the mean R@1
    (as a fraction) of image-to-text and text-to-image retrieval.
    """

    def __init__(self, arch_id="A", d=1024, margin=0.05, batch_size=100, epochs=30,
                 lr=1e-3, patience=3, min_lr=1e-7, max_length=DEFAULT_MAX_LENGTH,
                 symmetric_argument_order=False, seed=0):
        self.arch_id = arch_id
        self.d = d
        self.margin = margin
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.patience = patience
        self.min_lr = min_lr
        self.max_length = max_length
        self.symmetric_argument_order = symmetric_argument_order
        self.seed = seed

    def _config(self) -> RunConfig:
        return RunConfig(arch_id=self.arch_id, d=self.d, margin=self.margin,
                         batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
                         lr=self.lr, patience=self.patience, min_lr=self.min_lr,
                         max_length=self.max_length,
                         symmetric_argument_order=self.symmetric_argument_order)

    @staticmethod
    def _dataset(X: np.ndarray, groups: list[list[str]]) -> PairedDataset:
        images = [ImageFeatures(str(i), row) for i, row in enumerate(X)]
        captions = [(str(i), c) for i, caps in enumerate(groups) for c in caps]
        return PairedDataset(images, captions)

    def fit(self, X, y):
        X = _check_features(X)
        groups = _caption_groups(y, X.shape[0])
        result = train(self._config(), self._dataset(X, groups))
        self.checkpoint_ = result.best
        self.history_ = result.history
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "checkpoint_")
        X = _check_features(X)
        return embed_images(self.checkpoint_.projector, X).data

    def embed_text(self, captions: Sequence[str]) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        alphabet = Alphabet.default()
        chars = [encode_chars(c, alphabet, self.max_length) for c in captions]
        return embed_texts(self.checkpoint_.text_model, chars).data

    def retrieval_report(self, X, y) -> KFoldReport:
        X = _check_features(X)
        groups = _caption_groups(y, X.shape[0])
        flat = [c for caps in groups for c in caps]
        owner = np.repeat(np.arange(len(groups)), [len(g) for g in groups])
        sim = rank_matrix(self.embed_text(flat), self.transform(X), owner,
                          self.symmetric_argument_order)
        return kfold_report([bidirectional_report(sim)])

    def score(self, X, y):
        rep = self.retrieval_report(X, y).mean
        return float(np.mean([rep[d].r_at_1 for d in DIRECTIONS])) / 100.0
