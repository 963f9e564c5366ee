"""Character one-hot encoding and the convolutions-through-time text encoder."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import (KernelTape, Tensor, abs_elementwise, conv1d_padded, linear,
                     maxout2, maxpool_over_time, stack, unit_normalize)

ALPHABET_SIZE = 72
POOLED_DIM = 512
DEFAULT_EMBED_DIM = 1024
DEFAULT_MAX_LENGTH = 256

# (filters, filter length) per maxout-conv layer
ARCHITECTURES: dict[str, tuple[tuple[int, int], ...]] = {
    "A": ((512, 7),),
    "B": ((256, 7), (512, 5)),
    "C": ((128, 7), (256, 5), (512, 3)),
    "D": ((512, 7), (512, 5), (512, 3)),
}


class Alphabet:
    """An ordered set of exactly 72 symbols."""

    def __init__(self, symbols: Sequence[str]):
        symbols = list(symbols)
        if len(symbols) != ALPHABET_SIZE:
            raise ValueError(f"alphabet must have {ALPHABET_SIZE} symbols, got {len(symbols)}")
        for s in symbols:
            if len(s) != 1:
                raise ValueError(f"alphabet symbols must be single characters, got {s!r}")
        if len(set(symbols)) != len(symbols):
            raise ValueError("alphabet symbols must be distinct")
        self.symbols = symbols
        self.index = {s: i for i, s in enumerate(symbols)}

    @classmethod
    def from_file(cls, path: str | Path) -> "Alphabet":
        """Read one symbol per line. Only the trailing newline is stripped, so
        a line holding a single space is the space symbol.
        """
        text = Path(path).read_text(encoding="utf-8")
        return cls(_parse_alphabet(text))

    @classmethod
    def default(cls) -> "Alphabet":
        text = resources.files("orderalign").joinpath("alphabet.txt").read_text(encoding="utf-8")
        return cls(_parse_alphabet(text))

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, ch: str) -> bool:
        return ch in self.index


def _parse_alphabet(text: str) -> list[str]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line[:-1] if line.endswith("\r") and len(line) > 1 else line for line in lines]


@dataclass
class CharText:
    onehot: Tensor
    text: str

    @property
    def length(self) -> int:
        return self.onehot.shape[0]


def filter_text(text: str, alphabet: Alphabet, max_length: int | None = DEFAULT_MAX_LENGTH) -> str:
    """Lowercase, drop out-of-alphabet characters, truncate."""
    kept = "".join(ch for ch in text.lower() if ch in alphabet.index)
    if max_length is not None:
        kept = kept[:max_length]
    return kept


def encode_chars(text: str, alphabet: Alphabet | None = None,
                 max_length: int | None = DEFAULT_MAX_LENGTH) -> CharText:
    alphabet = alphabet or Alphabet.default()
    kept = filter_text(text, alphabet, max_length)
    if not kept:
        raise ValueError(f"no in-alphabet characters in caption {text!r}")
    onehot = np.zeros((len(kept), len(alphabet)))
    onehot[np.arange(len(kept)), [alphabet.index[ch] for ch in kept]] = 1.0
    return CharText(Tensor(onehot), kept)


@dataclass
class MaxConvLayer:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def filters(self) -> int:
        return self.w1.shape[0]

    @property
    def length(self) -> int:
        return self.w1.shape[2]

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())


@dataclass
class CttModel:
    arch_id: str
    layers: list[MaxConvLayer]
    w_text: Tensor
    d: int = field(init=False)

    def __post_init__(self):
        self.d = self.w_text.shape[0]
        if self.w_text.shape[1] != POOLED_DIM:
            raise ValueError(f"text projection must be [d, {POOLED_DIM}], got {self.w_text.shape}")

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, layer in enumerate(self.layers, start=1):
            for key in ("w1", "b1", "w2", "b2"):
                named.append((f"text.conv{i}.{key}", getattr(layer, key)))
        named.append(("text.w_t", self.w_text))
        return named

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_ctt(arch_id: str, d: int = DEFAULT_EMBED_DIM, seed: int = 0) -> CttModel:
    if arch_id not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch_id!r}; expected one of {sorted(ARCHITECTURES)}")
    if d < 1:
        raise ValueError(f"embedding dimensionality must be positive, got {d}")
    rng = np.random.default_rng([seed, 0])
    layers = []
    c_in = ALPHABET_SIZE
    for filters, length in ARCHITECTURES[arch_id]:
        fan_in = c_in * length
        shape = (filters, c_in, length)
        w1 = Tensor(uniform_fan_in(rng, shape, fan_in))
        w2 = Tensor(uniform_fan_in(rng, shape, fan_in))
        layers.append(MaxConvLayer(w1, Tensor(np.zeros(filters)), w2, Tensor(np.zeros(filters))))
        c_in = filters
    w_text = Tensor(uniform_fan_in(rng, (d, POOLED_DIM), POOLED_DIM))
    model = CttModel(arch_id, layers, w_text)
    for name, p in model.named_parameters():
        p.name = name
    return model


def layer_param_counts(arch_id: str) -> list[int]:
    """Per-layer parameter counts of the maxout-conv stack: 2 * (f_prev * l * f + f)."""
    if arch_id not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch_id!r}")
    counts = []
    c_in = ALPHABET_SIZE
    for filters, length in ARCHITECTURES[arch_id]:
        counts.append(2 * (c_in * length * filters + filters))
        c_in = filters
    return counts


def count_params(model: CttModel, include_projection: bool = False) -> int:
    n = sum(layer.num_params() for layer in model.layers)
    if include_projection:
        n += model.w_text.size
    return n


def pooled_features(model: CttModel, text: CharText, tape: KernelTape | None = None) -> Tensor:
    """Run the maxout-conv stack and max-pool over time, giving a 512-d vector."""
    x = text.onehot
    for layer in model.layers:
        a = conv1d_padded(x, layer.w1, layer.b1, tape)
        b = conv1d_padded(x, layer.w2, layer.b2, tape)
        x = maxout2(a, b, tape)
    return maxpool_over_time(x, tape)


def embed_text(model: CttModel, text: CharText, tape: KernelTape | None = None) -> Tensor:
    """Unit-norm, non-negative d-dimensional embedding of one caption."""
    pooled = pooled_features(model, text, tape)
    return unit_normalize(abs_elementwise(linear(pooled, model.w_text, tape), tape), tape)


def embed_texts(model: CttModel, texts: Sequence[CharText], tape: KernelTape | None = None) -> Tensor:
    """Batched ``embed_text``: returns [B, d], projecting all pooled vectors at once."""
    pooled = stack([pooled_features(model, t, tape) for t in texts], tape)
    return unit_normalize(abs_elementwise(linear(pooled, model.w_text, tape), tape), tape)
