"""Bidirectional retrieval metrics over order-penalty similarity matrices.

Candidates are ranked by descending similarity; equal scores are ordered
by ascending candidate index. A query's rank is the 1-based position of
its best-ranked ground-truth item, so an image with several captions
counts as a hit as soon as any one of them is retrieved.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .loss import pairwise_penalty

IMAGE_TO_TEXT = "i2t"
TEXT_TO_IMAGE = "t2i"
DIRECTIONS = (IMAGE_TO_TEXT, TEXT_TO_IMAGE)


@dataclass
class SimilarityMatrix:
    """Scores between ``num_images`` images and ``num_texts`` captions.

    ``scores[i, j]`` ranks images for caption queries (text to image).
    ``i2t_scores[i, j]`` ranks captions for image queries; it defaults to
    ``scores`` and differs only when the two directions use different
    argument orders of the penalty.
    """

    scores: np.ndarray
    caption_image: np.ndarray
    i2t_scores: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.caption_image = np.asarray(self.caption_image, dtype=np.int64)
        if self.i2t_scores is None:
            self.i2t_scores = self.scores
        else:
            self.i2t_scores = np.asarray(self.i2t_scores, dtype=np.float64)
        n_img, n_txt = self.scores.shape
        if self.i2t_scores.shape != self.scores.shape:
            raise ValueError("i2t_scores must match the shape of scores")
        if self.caption_image.shape != (n_txt,):
            raise ValueError(f"need one image index per caption ({n_txt}), "
                             f"got {self.caption_image.shape}")
        if n_txt and (self.caption_image.min() < 0 or self.caption_image.max() >= n_img):
            raise ValueError("caption_image refers to an image outside the matrix")
        counts = np.bincount(self.caption_image, minlength=n_img)
        if np.any(counts == 0):
            missing = np.flatnonzero(counts == 0).tolist()
            raise ValueError(f"images without a ground-truth caption: {missing}")

    @property
    def num_images(self) -> int:
        return self.scores.shape[0]

    @property
    def num_texts(self) -> int:
        return self.scores.shape[1]

    def img_to_texts(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.caption_image == i) for i in range(self.num_images)]


def rank_matrix(text_emb: np.ndarray, image_emb: np.ndarray, caption_image: Sequence[int],
                symmetric_argument_order: bool = False) -> SimilarityMatrix:
    """Build the similarity matrix from [num_texts, d] and [num_images, d] embeddings."""
    text_emb = np.atleast_2d(np.asarray(text_emb, dtype=np.float64))
    image_emb = np.atleast_2d(np.asarray(image_emb, dtype=np.float64))
    # s(text_j, image_i)
    t2i = pairwise_penalty(text_emb, image_emb).T
    if symmetric_argument_order:
        i2t = t2i
    else:
        # s(image_i, text_j)
        i2t = pairwise_penalty(image_emb, text_emb)
    return SimilarityMatrix(t2i, np.asarray(caption_image), i2t)


def _rank_in_row(row: np.ndarray, targets: np.ndarray) -> int:
    """Best 1-based rank among ``targets`` in ``row`` under the tie rule."""
    best = None
    idx = np.arange(row.size)
    for t in targets:
        r = 1 + int(np.sum(row > row[t])) + int(np.sum((row == row[t]) & (idx < t)))
        best = r if best is None else min(best, r)
    return best


def query_ranks(sim: SimilarityMatrix, direction: str) -> np.ndarray:
    if direction == IMAGE_TO_TEXT:
        groups = sim.img_to_texts()
        return np.array([_rank_in_row(sim.i2t_scores[i], groups[i])
                         for i in range(sim.num_images)])
    if direction == TEXT_TO_IMAGE:
        return np.array([_rank_in_row(sim.scores[:, j], sim.caption_image[j:j + 1])
                         for j in range(sim.num_texts)])
    raise ValueError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")


def num_candidates(sim: SimilarityMatrix, direction: str) -> int:
    return sim.num_texts if direction == IMAGE_TO_TEXT else sim.num_images


def recall_at_k(sim: SimilarityMatrix, k: int, direction: str) -> float:
    n = num_candidates(sim, direction)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} candidates")
    ranks = query_ranks(sim, direction)
    return 100.0 * float(np.mean(ranks <= k))


def rank_stats(sim: SimilarityMatrix, direction: str) -> tuple[float, float]:
    """(median rank, mean rank)."""
    ranks = query_ranks(sim, direction)
    return float(np.median(ranks)), float(np.mean(ranks))


@dataclass
class RetrievalReport:
    direction: str
    r_at_1: float
    r_at_10: float
    med_r: float
    mean_r: float


def report(sim: SimilarityMatrix, direction: str) -> RetrievalReport:
    """R@1, R@10, Med r, Mean r for one direction.

    With fewer than 10 candidates R@10 is evaluated at the candidate count.
    """
    n = num_candidates(sim, direction)
    ranks = query_ranks(sim, direction)
    return RetrievalReport(
        direction=direction,
        r_at_1=100.0 * float(np.mean(ranks <= 1)),
        r_at_10=100.0 * float(np.mean(ranks <= min(10, n))),
        med_r=float(np.median(ranks)),
        mean_r=float(np.mean(ranks)),
    )


def bidirectional_report(sim: SimilarityMatrix) -> dict[str, RetrievalReport]:
    return {d: report(sim, d) for d in DIRECTIONS}


@dataclass
class KFoldReport:
    folds: list[dict[str, RetrievalReport]]
    mean: dict[str, RetrievalReport] = field(init=False)

    def __post_init__(self):
        if not self.folds:
            raise ValueError("kfold report needs at least one fold")
        self.mean = {}
        for d in DIRECTIONS:
            reps = [f[d] for f in self.folds]
            self.mean[d] = RetrievalReport(
                direction=d,
                r_at_1=float(np.mean([r.r_at_1 for r in reps])),
                r_at_10=float(np.mean([r.r_at_10 for r in reps])),
                med_r=float(np.mean([r.med_r for r in reps])),
                mean_r=float(np.mean([r.mean_r for r in reps])),
            )

    def records(self) -> list[dict]:
        out = []
        for i, fold in enumerate(self.folds):
            for d in DIRECTIONS:
                out.append({"fold": i, **asdict(fold[d])})
        for d in DIRECTIONS:
            out.append({"fold": "mean", **asdict(self.mean[d])})
        return out

    def to_table(self) -> str:
        return format_table(self)

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.records(), indent=2) + "\n", encoding="utf-8")


def kfold_report(splits: Sequence[SimilarityMatrix | dict[str, RetrievalReport]]) -> KFoldReport:
    """Per-fold reports and their arithmetic mean; folds may be matrices or finished reports."""
    folds = [s if isinstance(s, dict) else bidirectional_report(s) for s in splits]
    return KFoldReport(folds)


def format_table(rep: KFoldReport) -> str:
    cols = ("R@1", "R@10", "Med r", "Mean r")
    header = (f"{'':<8}| {'Image to text':^31} | {'Text to image':^31}\n"
              f"{'fold':<8}| " + " ".join(f"{c:>7}" for c in cols) + " | "
              + " ".join(f"{c:>7}" for c in cols))
    lines = [header, "-" * len(header.splitlines()[1])]

    def row(label, fold):
        cells = []
        for d in DIRECTIONS:
            r = fold[d]
            cells.append(" ".join(f"{v:>7.1f}" for v in (r.r_at_1, r.r_at_10, r.med_r, r.mean_r)))
        return f"{label:<8}| " + " | ".join(cells)

    for i, fold in enumerate(rep.folds):
        lines.append(row(str(i), fold))
    lines.append(row("mean", rep.mean))
    return "\n".join(lines)
