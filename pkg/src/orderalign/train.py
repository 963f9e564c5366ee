"""Run configuration, the training loop, and split evaluation."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .checkpoint import Checkpoint
from .data import DatasetError, PairedDataset, epoch_batches, load_dataset
from .image import build_projector, embed_images
from .loss import LossConfig, contrastive_loss_kernel
from .optim import AdamState, PlateauSchedule, adam_step, plateau_update
from .retrieval import (KFoldReport, RetrievalReport, bidirectional_report, kfold_report,
                        rank_matrix)
from .tensor import KernelTape, backward
from .text import (DEFAULT_EMBED_DIM, DEFAULT_MAX_LENGTH, Alphabet, CharText, build_ctt,
                   embed_texts, encode_chars)

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    arch_id: str = "A"
    d: int = DEFAULT_EMBED_DIM
    margin: float = 0.05
    batch_size: int = 100
    epochs: int = 30
    seed: int = 0
    lr: float = 1e-3
    patience: int = 3
    min_lr: float = 1e-7
    max_length: int = DEFAULT_MAX_LENGTH
    symmetric_argument_order: bool = False
    alphabet_path: str | None = None
    features_path: str | None = None
    captions_path: str | None = None
    splits_path: str | None = None
    checkpoint_path: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError(f"batch size must be at least 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.margin, self.symmetric_argument_order)

    def alphabet(self) -> Alphabet:
        return Alphabet.from_file(self.alphabet_path) if self.alphabet_path else Alphabet.default()


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list[EpochLog] = field(default_factory=list)


def initial_checkpoint(config: RunConfig) -> Checkpoint:
    model = build_ctt(config.arch_id, config.d, config.seed)
    proj = build_projector(config.d, config.seed)
    params = model.parameters() + proj.parameters()
    return Checkpoint(model, proj, AdamState.for_params(params, lr=config.lr),
                      PlateauSchedule(patience=config.patience, min_lr=config.min_lr),
                      epoch=0, config=config.to_dict())


def encode_captions(data: PairedDataset, alphabet: Alphabet, max_length: int) -> list[CharText]:
    out = []
    for j, (image_id, text) in enumerate(data.captions):
        try:
            out.append(encode_chars(text, alphabet, max_length))
        except ValueError as exc:
            raise DatasetError(f"caption {j} (image {image_id!r}): {exc}") from exc
    return out


def batch_loss(ckpt: Checkpoint, data: PairedDataset, chars: Sequence[CharText],
               image_indices, caption_indices, cfg: LossConfig,
               tape: KernelTape | None = None):
    texts = embed_texts(ckpt.text_model, [chars[j] for j in caption_indices], tape)
    images = embed_images(ckpt.projector, data.features(image_indices), tape)
    return contrastive_loss_kernel(texts, images, cfg, tape)


def validation_loss(ckpt: Checkpoint, data: PairedDataset, chars: Sequence[CharText],
                    config: RunConfig, split: str = "val") -> float:
    """Mean loss over fixed, consecutive batches of ``split``, first caption per image."""
    idx = data.split(split)
    cfg = config.loss_config()
    losses = []
    for start in range(0, idx.size, config.batch_size):
        chunk = idx[start:start + config.batch_size]
        if chunk.size < 2:
            continue
        caps = [data.image_captions[i][0] for i in chunk]
        losses.append(batch_loss(ckpt, data, chars, chunk, caps, cfg).item())
    if not losses:
        raise DatasetError(f"split {split!r} needs at least 2 images for a validation loss")
    return float(np.mean(losses))


def _write_log(path: Path | None, entry: EpochLog, first: bool) -> None:
    if path is None:
        return
    with open(path, "w" if first else "a", encoding="utf-8") as fh:
        if first:
            fh.write("epoch\ttrain_loss\tval_loss\tlr\n")
        fh.write(f"{entry.epoch}\t{entry.train_loss!r}\t{entry.val_loss!r}\t{entry.lr!r}\n")


def _last_path(path: Path) -> Path:
    return path.with_name(path.name + ".last")


def _as_checkpoint(c: Checkpoint | str | Path) -> Checkpoint:
    return c.copy() if isinstance(c, Checkpoint) else ckpt_io.load(c)


def train(config: RunConfig, dataset: PairedDataset | None = None,
          resume: Checkpoint | str | Path | None = None,
          resume_best: Checkpoint | str | Path | None = None) -> TrainResult:
    """Train both encoders; returns the best-validation and the final checkpoints.

    Without a ``val`` split the mean training loss of each epoch stands in
    for the validation loss. When ``checkpoint_path`` is set, the best
    checkpoint is written there and the final one next to it with a
    ``.last`` suffix. ``resume`` continues from a final checkpoint;
    ``resume_best`` is the best checkpoint of the interrupted run.
    """
    data = dataset if dataset is not None else load_dataset(
        config.features_path, config.captions_path, config.splits_path)
    chars = encode_captions(data, config.alphabet(), config.max_length)
    loss_cfg = config.loss_config()
    has_val = data.has_split("val")

    if resume is None:
        state = initial_checkpoint(config)
    else:
        state = _as_checkpoint(resume)
        state.config = config.to_dict()
    params = state.parameters()
    best = _as_checkpoint(resume_best) if resume_best is not None else state.copy()
    history: list[EpochLog] = []
    ckpt_path = Path(config.checkpoint_path) if config.checkpoint_path else None
    log_path = Path(config.log_path) if config.log_path else (
        ckpt_path.with_name(ckpt_path.name + ".log") if ckpt_path else None)

    def persist(final: bool = True):
        if ckpt_path is not None:
            ckpt_io.save(best, ckpt_path)
            if final:
                ckpt_io.save(state, _last_path(ckpt_path))

    try:
        while state.epoch < config.epochs:
            epoch = state.epoch
            rng = np.random.default_rng([config.seed, 2, epoch])
            train_losses = []
            for batch in epoch_batches(data, "train", config.batch_size, rng):
                tape = KernelTape()
                loss = batch_loss(state, data, chars, batch.image_indices,
                                  batch.caption_indices, loss_cfg, tape)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch + 1}")
                backward(tape, loss)
                adam_step(state.adam, params)
                for p in params:
                    p.zero_grad()
                train_losses.append(value)

            train_loss = float(np.mean(train_losses))
            val_loss = validation_loss(state, data, chars, config) if has_val else train_loss
            if not math.isfinite(val_loss):
                raise TrainingDiverged(f"non-finite validation loss at epoch {epoch + 1}")
            improved = val_loss < state.plateau.best
            lr_before = state.adam.lr
            decayed = plateau_update(state.plateau, state.adam, val_loss)
            state.epoch = epoch + 1

            entry = EpochLog(state.epoch, train_loss, val_loss, state.adam.lr)
            history.append(entry)
            _write_log(log_path, entry, first=resume is None and len(history) == 1)
            log.info("epoch %d train %.6f val %.6f lr %.2e%s", entry.epoch, train_loss,
                     val_loss, entry.lr, " (decayed)" if decayed else "")
            if improved:
                best = state.copy()
            if (not improved and not decayed and state.plateau.stalled == 0
                    and lr_before <= state.plateau.min_lr):
                log.info("stopping: plateau at the minimum learning rate")
                break
    except TrainingDiverged:
        # the in-progress state is partially updated; keep only the best one
        persist(final=False)
        raise
    persist()
    return TrainResult(best, state, history)


def split_embeddings(ckpt: Checkpoint, data: PairedDataset, split: str,
                     alphabet: Alphabet | None = None, max_length: int | None = None):
    """Embed every image of ``split`` and all their captions."""
    cfg = ckpt.config or {}
    if alphabet is None:
        alphabet = Alphabet.from_file(cfg["alphabet_path"]) if cfg.get("alphabet_path") else Alphabet.default()
    max_length = max_length or cfg.get("max_length", DEFAULT_MAX_LENGTH)
    idx = data.split(split)
    caps, owner = data.split_captions(split)
    chars = []
    for j in caps:
        try:
            chars.append(encode_chars(data.captions[j][1], alphabet, max_length))
        except ValueError as exc:
            raise DatasetError(f"caption {j} (image {data.captions[j][0]!r}): {exc}") from exc
    text_emb = embed_texts(ckpt.text_model, chars).data
    image_emb = embed_images(ckpt.projector, data.features(idx)).data
    return text_emb, image_emb, owner


def evaluate(ckpt: Checkpoint, data: PairedDataset, split: str = "test",
             folds: int = 1) -> KFoldReport:
    """Retrieval reports for ``split``, optionally averaged over contiguous image folds."""
    text_emb, image_emb, owner = split_embeddings(ckpt, data, split)
    symmetric = bool((ckpt.config or {}).get("symmetric_argument_order", False))
    n_img = image_emb.shape[0]
    if not 1 <= folds <= n_img:
        raise ValueError(f"cannot split {n_img} images into {folds} folds")
    bounds = np.linspace(0, n_img, folds + 1).round().astype(int)
    reports = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        keep = (owner >= lo) & (owner < hi)
        sim = rank_matrix(text_emb[keep], image_emb[lo:hi], owner[keep] - lo, symmetric)
        reports.append(bidirectional_report(sim))
    return kfold_report(reports)


def evaluate_pair(ckpt: Checkpoint, data: PairedDataset, split: str = "test") -> dict[str, RetrievalReport]:
    return evaluate(ckpt, data, split).mean
