"""Order-violation similarity and the in-batch contrastive ranking loss.

``s(x, y) = -||max(0, y - x)||^2`` is zero exactly when ``y <= x``
elementwise. The loss has two hinge sums over a batch of aligned
(text ``m_i``, image ``v_i``) pairs, every other in-batch item acting as a
contrastive example:

* caption queries: ``max(0, alpha - s(m_i, v_i) + s(m_i, v_k))``
* image queries:   ``max(0, alpha - s(v_i, m_i) + s(v_i, m_k))``

The image-query sum above swaps the argument order. With
``symmetric_argument_order=True`` it keeps the text-first order instead:
``max(0, alpha - s(m_i, v_i) + s(m_k, v_i))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import KernelTape, ShapeError, Tensor, _wrap


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.05
    symmetric_argument_order: bool = False

    def __post_init__(self):
        if not self.margin >= 0:
            raise ValueError(f"margin must be non-negative, got {self.margin}")


def order_penalty(x, y) -> float:
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    y = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"order_penalty: dimension mismatch {x.shape} vs {y.shape}")
    r = np.maximum(0.0, y - x)
    return -float(np.sum(r * r))


def pairwise_penalty(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``S[i, k] = s(a_i, b_k)`` for row batches ``a`` [P, d] and ``b`` [Q, d]."""
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_penalty: dimension mismatch {a.shape} vs {b.shape}")
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        r = np.maximum(0.0, b - a[i])
        out[i] = -np.einsum("kj,kj->k", r, r)
    return out


def _pairwise_backward(a: np.ndarray, b: np.ndarray, g: np.ndarray):
    """Gradients of ``sum(g * pairwise_penalty(a, b))`` w.r.t. ``a`` and ``b``."""
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    for i in range(a.shape[0]):
        if not g[i].any():
            continue
        r = np.maximum(0.0, b - a[i])
        ga[i] = 2.0 * (g[i] @ r)
        gb -= 2.0 * g[i][:, None] * r
    return ga, gb


def _hinge_weights(scores: np.ndarray, margin: float):
    """Hinge value and d(loss)/d(scores) for one query direction.

    ``scores[q, k]`` is the similarity between query ``q`` and candidate
    ``k``; the diagonal holds aligned pairs.
    """
    n = scores.shape[0]
    pos = np.diag(scores)
    h = margin - pos[:, None] + scores
    off = ~np.eye(n, dtype=bool)
    active = (h > 0) & off
    # np.maximum keeps NaN, so a non-finite score surfaces in the value
    value = float(np.sum(np.where(off, np.maximum(h, 0.0), 0.0)))
    w = active.astype(np.float64)
    w[np.arange(n), np.arange(n)] = -active.sum(axis=1)
    return value, w


def _validate_batch(texts: np.ndarray, images: np.ndarray) -> None:
    if texts.ndim != 2 or texts.shape != images.shape:
        raise ShapeError(f"texts {texts.shape} and images {images.shape} must both be [B, d]")
    if texts.shape[0] < 2:
        raise ValueError(f"contrastive loss needs a batch of at least 2 pairs, got {texts.shape[0]}")


def _loss_and_grads(texts: np.ndarray, images: np.ndarray, cfg: LossConfig):
    s_tv = pairwise_penalty(texts, images)
    value_t, w_t = _hinge_weights(s_tv, cfg.margin)
    if cfg.symmetric_argument_order:
        value_v, w_v = _hinge_weights(s_tv.T, cfg.margin)
        gm, gv = _pairwise_backward(texts, images, w_t + w_v.T)
    else:
        s_vm = pairwise_penalty(images, texts)
        value_v, w_v = _hinge_weights(s_vm, cfg.margin)
        gm, gv = _pairwise_backward(texts, images, w_t)
        gv2, gm2 = _pairwise_backward(images, texts, w_v)
        gm += gm2
        gv += gv2
    return value_t + value_v, gm, gv


def contrastive_loss(texts, images, cfg: LossConfig = LossConfig()) -> float:
    """Loss value for aligned row batches ``texts`` and ``images`` ([B, d] each)."""
    texts = np.asarray(getattr(texts, "data", texts), dtype=np.float64)
    images = np.asarray(getattr(images, "data", images), dtype=np.float64)
    _validate_batch(texts, images)
    return _loss_and_grads(texts, images, cfg)[0]


def contrastive_loss_kernel(texts: Tensor, images: Tensor, cfg: LossConfig = LossConfig(),
                            tape: KernelTape | None = None) -> Tensor:
    """Differentiable form of ``contrastive_loss``; records its gradient on ``tape``."""
    _validate_batch(texts.data, images.data)
    value, gm, gv = _loss_and_grads(texts.data, images.data, cfg)
    out = _wrap(np.array([value]))

    if tape is not None:
        def _backward(g: np.ndarray) -> None:
            texts.grad += g[0] * gm
            images.grad += g[0] * gv

        tape.record("contrastive_loss", (texts, images), out, _backward)
    return out
