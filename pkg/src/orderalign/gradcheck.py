"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .image import FEATURE_DIM, build_projector, embed_images
from .loss import LossConfig, contrastive_loss_kernel
from .tensor import (KernelTape, Tensor, abs_elementwise, backward, conv1d_padded, linear,
                     maxout2, maxpool_over_time, unit_normalize)
from .text import build_ctt, embed_texts, encode_chars

STEP = 1e-5
TOLERANCE = 1e-4
# gradients smaller than this are compared in absolute terms
GRAD_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    name: str
    coords: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def relative_error(analytic: float, numeric: float, floor: float = GRAD_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(name: str, build: Callable[[KernelTape | None], Tensor],
                    wrt: Sequence[Tensor], n_coords: int, rng: np.random.Generator,
                    h: float = STEP) -> GradCheckResult:
    """Compare d(build())/d(wrt) against central differences.

    ``build`` must return a one-element tensor and read ``wrt`` afresh on
    every call. ``n_coords`` coordinates are sampled, spread over the
    tensors in proportion to their size but at least one per tensor.
    """
    for t in wrt:
        t.zero_grad()
    tape = KernelTape()
    backward(tape, build(tape))
    analytic = [t.grad.copy() for t in wrt]

    sizes = np.array([t.size for t in wrt])
    per = np.maximum(1, np.ceil(n_coords * sizes / sizes.sum()).astype(int))
    worst = 0.0
    count = 0
    for t, g, k in zip(wrt, analytic, per):
        flat = t.data.reshape(-1)
        for c in rng.choice(t.size, size=min(k, t.size), replace=False):
            orig = flat[c]
            flat[c] = orig + h
            up = build(None).item()
            flat[c] = orig - h
            down = build(None).item()
            flat[c] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, relative_error(g.reshape(-1)[c], numeric))
            count += 1
    for t in wrt:
        t.zero_grad()
    return GradCheckResult(name, count, worst)


def _weighted_sum(out: Tensor, weights: np.ndarray, tape: KernelTape | None) -> Tensor:
    # loss = sum(w * out), so d(loss)/d(out) = w
    value = Tensor([float(np.sum(weights * out.data))])
    if tape is not None:
        def _backward(g):
            out.grad += g[0] * weights

        tape.record("weighted_sum", (out,), value, _backward)
    return value


def kernel_suite(seed: int = 0, n_coords: int = 100) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    def probe(out_shape):
        return rng.standard_normal(out_shape)

    x = Tensor(rng.standard_normal((9, 4)))
    w = Tensor(rng.standard_normal((5, 4, 3)))
    b = Tensor(rng.standard_normal(5))
    wts = probe((9, 5))
    results.append(check_gradients(
        "conv1d_padded", lambda tp: _weighted_sum(conv1d_padded(x, w, b, tp), wts, tp),
        [x, w, b], n_coords, rng))

    a = Tensor(rng.standard_normal((10, 12)))
    c = Tensor(rng.standard_normal((10, 12)))
    wts2 = probe((10, 12))
    results.append(check_gradients(
        "maxout2", lambda tp: _weighted_sum(maxout2(a, c, tp), wts2, tp), [a, c], n_coords, rng))

    p = Tensor(rng.standard_normal((12, 10)))
    wts3 = probe(10)
    results.append(check_gradients(
        "maxpool_over_time", lambda tp: _weighted_sum(maxpool_over_time(p, tp), wts3, tp),
        [p], n_coords, rng))

    v = Tensor(rng.standard_normal(20))
    W = Tensor(rng.standard_normal((8, 20)))
    wts4 = probe(8)
    results.append(check_gradients(
        "linear", lambda tp: _weighted_sum(linear(v, W, tp), wts4, tp), [v, W], n_coords, rng))

    # keep points away from the kink at 0
    z = rng.uniform(0.1, 1.0, 150) * rng.choice([-1.0, 1.0], 150)
    q = Tensor(z)
    wts5 = probe(150)
    results.append(check_gradients(
        "abs_elementwise", lambda tp: _weighted_sum(abs_elementwise(q, tp), wts5, tp),
        [q], n_coords, rng))

    u = Tensor(rng.standard_normal((8, 16)))
    wts6 = probe((8, 16))
    results.append(check_gradients(
        "unit_normalize", lambda tp: _weighted_sum(unit_normalize(u, tp), wts6, tp),
        [u], n_coords, rng))

    texts = Tensor(np.abs(rng.standard_normal((4, 16))))
    images = Tensor(np.abs(rng.standard_normal((4, 16))))
    for symmetric in (False, True):
        cfg = LossConfig(margin=0.05, symmetric_argument_order=symmetric)
        label = "contrastive_loss" + (" (symmetric)" if symmetric else "")
        results.append(check_gradients(
            label, lambda tp, cfg=cfg: contrastive_loss_kernel(texts, images, cfg, tp),
            [texts, images], n_coords, rng))
    return results


CAPTIONS = ("a dog runs on the grass", "two cats sleep.", "red bus, city street")


def pipeline_check(arch_id: str = "A", d: int = 1024, seed: int = 0, n_coords: int = 100,
                   captions: Sequence[str] = CAPTIONS, symmetric: bool = False
                   ) -> list[GradCheckResult]:
    """Full text and image encoders plus the loss; one result per parameter tensor."""
    rng = np.random.default_rng([seed, 7])
    model = build_ctt(arch_id, d, seed)
    proj = build_projector(d, seed)
    chars = [encode_chars(c) for c in captions]
    feats = np.abs(rng.standard_normal((len(captions), FEATURE_DIM)))
    cfg = LossConfig(margin=0.05, symmetric_argument_order=symmetric)

    def build(tp):
        t = embed_texts(model, chars, tp)
        v = embed_images(proj, feats, tp)
        return contrastive_loss_kernel(t, v, cfg, tp)

    results = []
    for name, param in model.named_parameters() + proj.named_parameters():
        results.append(check_gradients(f"{arch_id}:{name}", build, [param], n_coords, rng))
    return results
