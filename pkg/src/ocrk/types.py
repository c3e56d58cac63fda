"""Domain types shared across the pipeline.

Everything here is immutable after construction.  Images and lattices hold
read-only numpy arrays so they can be handed to worker threads freely.
"""
from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyImage,
    IndexOutOfRange,
    InvalidLattice,
    UnknownSymbol,
)

DEFAULT_PUNCTUATION = ".,:/@-_?"
LATTICE_ATOL = 1e-6


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Alphabet:
    """Ordered symbol set; the blank (CTC) / NULL (CHAR) class sits at index len(symbols)."""

    symbols: tuple[str, ...]
    case_sensitive: bool = True
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        symbols = tuple(self.symbols)
        for s in symbols:
            if len(s) != 1:
                raise ValueError(f"symbols must be single characters, got {s!r}")
        if not self.case_sensitive and any(s != s.lower() for s in symbols):
            raise ValueError("a case-folded alphabet holds lowercase symbols only")
        if len(set(symbols)) != len(symbols):
            raise ValueError("alphabet symbols must be unique")
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(symbols)})

    @classmethod
    def case_sensitive_from(cls, chars: Iterable[str]) -> "Alphabet":
        return cls(tuple(dict.fromkeys(chars)), case_sensitive=True)

    @classmethod
    def case_folded_from(cls, chars: Iterable[str]) -> "Alphabet":
        return cls(tuple(dict.fromkeys(c.lower() for c in chars)), case_sensitive=False)

    @classmethod
    def default(cls, case_sensitive: bool = True) -> "Alphabet":
        chars = string.ascii_letters + string.digits + DEFAULT_PUNCTUATION
        if case_sensitive:
            return cls.case_sensitive_from(chars)
        return cls.case_folded_from(chars)

    def __len__(self):
        return len(self.symbols)

    @property
    def blank_index(self) -> int:
        return len(self.symbols)

    @property
    def null_index(self) -> int:
        return len(self.symbols)

    @property
    def num_classes(self) -> int:
        return len(self.symbols) + 1

    def fold(self, text: str) -> str:
        return text if self.case_sensitive else text.lower()

    def __contains__(self, char) -> bool:
        return self.fold(char) in self._index

    def can_encode(self, text: str) -> bool:
        return all(c in self._index for c in self.fold(text))

    def encode(self, text: str) -> "LabelSequence":
        return alphabet_encode(text, self)

    def decode(self, seq) -> str:
        return alphabet_decode(seq, self)

    def to_text(self) -> str:
        header = f"case_sensitive: {'true' if self.case_sensitive else 'false'}"
        return "\n".join([header, *self.symbols]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Alphabet":
        lines = text.split("\n")
        key, _, value = lines[0].partition(":")
        if key.strip() != "case_sensitive" or value.strip() not in ("true", "false"):
            raise ValueError("alphabet file must start with 'case_sensitive: true|false'")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        return cls(tuple(lines[1:]), case_sensitive=value.strip() == "true")

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Alphabet":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def digest(self) -> bytes:
        """8-byte fingerprint used to tie checkpoints to an alphabet."""
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()[:8]


@dataclass(frozen=True)
class LabelSequence:
    indices: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def text(self, alphabet: Alphabet) -> str:
        return alphabet_decode(self, alphabet)

    def repeat_count(self) -> int:
        """Number of adjacent equal pairs; each needs a separating blank under CTC."""
        idx = self.indices
        return sum(1 for a, b in zip(idx, idx[1:]) if a == b)

    def min_ctc_length(self) -> int:
        return len(self.indices) + self.repeat_count()


def alphabet_encode(text: str, alphabet: Alphabet) -> LabelSequence:
    out = []
    for ch in alphabet.fold(text):
        try:
            out.append(alphabet._index[ch])
        except KeyError:
            raise UnknownSymbol(ch) from None
    return LabelSequence(tuple(out))


def alphabet_decode(seq, alphabet: Alphabet) -> str:
    indices = seq.indices if isinstance(seq, LabelSequence) else tuple(seq)
    n = len(alphabet.symbols)
    chars = []
    for i in indices:
        if not 0 <= i < n:
            raise IndexOutOfRange(f"label index {i} outside [0, {n})")
        chars.append(alphabet.symbols[i])
    return "".join(chars)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box; x_max/y_max are exclusive pixel edges so area = w * h."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"inverted box {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def scaled(self, fx: float, fy: float) -> "BoundingBox":
        return BoundingBox(self.x_min * fx, self.y_min * fy, self.x_max * fx, self.y_max * fy)


@dataclass(frozen=True)
class ScoredBox:
    box: BoundingBox
    score: float

    def __post_init__(self):
        object.__setattr__(self, "score", float(self.score))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Grayscale image, intensities in [0, 1], stored as a (height, width) array."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D pixel array, got shape {arr.shape}")
        object.__setattr__(self, "pixels", _frozen_array(arr))

    @classmethod
    def blank(cls, width: int, height: int, value: float = 0.0) -> "GrayImage":
        return cls(np.full((height, width), value))

    @classmethod
    def from_rows(cls, width: int, height: int, values: Sequence[float]) -> "GrayImage":
        if len(values) != width * height:
            raise ValueError("pixel count must equal width * height")
        return cls(np.asarray(values, dtype=np.float64).reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def require_nonempty(self) -> None:
        if self.width == 0 or self.height == 0:
            raise EmptyImage(f"image has zero size ({self.width}x{self.height})")

    def to_bytes(self) -> bytes:
        return np.clip(np.floor(self.pixels * 255.0 + 0.5), 0, 255).astype(np.uint8).tobytes()

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ProbLattice:
    """Per-timestep class distributions, shape (T, num_symbols + 1); blank is last."""

    dist: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.dist, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidLattice(f"lattice must be 2-D, got shape {arr.shape}")
        if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0):
            raise InvalidLattice("lattice entries must be finite and non-negative")
        if arr.shape[0] and not np.allclose(arr.sum(axis=1), 1.0, rtol=0.0, atol=LATTICE_ATOL):
            raise InvalidLattice("every lattice row must sum to 1")
        object.__setattr__(self, "dist", _frozen_array(arr))

    @property
    def timesteps(self) -> int:
        return self.dist.shape[0]

    @property
    def num_classes(self) -> int:
        return self.dist.shape[1]

    @property
    def blank_index(self) -> int:
        return self.dist.shape[1] - 1
