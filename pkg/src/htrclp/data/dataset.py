"""Charsets, labeled lines, datasets and deterministic splits."""
from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from ..rng import substream


def nfkd(text: str) -> str:
    return unicodedata.normalize("NFKD", text)


@dataclass(frozen=True)
class Charset:
    """Ordered, duplicate-free characters; the CTC blank is not a member."""

    chars: tuple

    def __post_init__(self):
        chars = tuple(self.chars)
        object.__setattr__(self, "chars", chars)
        if len(set(chars)) != len(chars):
            raise ValueError("charset contains duplicate characters")
        members = set(chars)
        for c in chars:
            if len(c) != 1:
                raise ValueError(f"charset member {c!r} is not a single code point")
            if any(d not in members for d in nfkd(c)):
                raise ValueError(f"charset is not NFKD-closed: {c!r} decomposes to {nfkd(c)!r}")

    @cached_property
    def index(self) -> dict:
        return {c: i for i, c in enumerate(self.chars)}

    def __len__(self):
        return len(self.chars)

    def __contains__(self, c):
        return c in self.index

    def encode(self, text: str) -> list[int]:
        try:
            return [self.index[c] for c in text]
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} is not in the charset") from None

    def decode(self, indices: Iterable[int]) -> str:
        return "".join(self.chars[i] for i in indices)

    def missing(self, text: str) -> list[str]:
        return sorted({c for c in text if c not in self.index})


def build_charset(*sources) -> Charset:
    """Sorted union of NFKD-normalized characters.

    Each source may be a :class:`Dataset`, a string or an iterable of strings.
    """
    chars = set()
    for src in sources:
        if isinstance(src, Dataset):
            texts = src.texts
        elif isinstance(src, str):
            texts = [src]
        else:
            texts = src
        for t in texts:
            chars.update(nfkd(t))
    return Charset(tuple(sorted(chars)))


@dataclass(frozen=True)
class LabeledLine:
    id: str
    image: np.ndarray = field(repr=False)  # (H, W) float32, 1.0 = background
    text: str
    tags: frozenset = frozenset({"clean"})

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass(frozen=True)
class Dataset:
    lines: tuple
    charset: Charset
    height: int

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        for line in self.lines:
            if line.image.shape[0] != self.height:
                raise ValueError(f"line {line.id}: height {line.image.shape[0]} != dataset height {self.height}")
            bad = self.charset.missing(line.text)
            if bad:
                raise ValueError(f"line {line.id}: characters {bad} not in charset")

    def __len__(self):
        return len(self.lines)

    def __iter__(self):
        return iter(self.lines)

    def __getitem__(self, i):
        return self.lines[i]

    @property
    def ids(self) -> list[str]:
        return [line.id for line in self.lines]

    @property
    def texts(self) -> list[str]:
        return [line.text for line in self.lines]

    def with_lines(self, lines: Sequence[LabeledLine]) -> "Dataset":
        return replace(self, lines=tuple(lines))

    def subset(self, ids: Iterable[str]) -> "Dataset":
        """Lines whose id is in ``ids``, kept in dataset order."""
        wanted = set(ids)
        return self.with_lines([line for line in self.lines if line.id in wanted])

    def take(self, indices: Sequence[int]) -> "Dataset":
        return self.with_lines([self.lines[i] for i in indices])

    def with_charset(self, charset: Charset) -> "Dataset":
        return replace(self, charset=charset)


def split(dataset: Dataset, fractions: Sequence[float], seed: int,
          names: Sequence[str] | None = None) -> dict:
    """Shuffle deterministically, then cut into consecutive parts.

    Part sizes are ``round`` of the cumulative fractions, so they always
    cover the dataset exactly.  Each part keeps dataset order.
    """
    fractions = list(fractions)
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be nonnegative and sum to 1, got {fractions}")
    names = list(names) if names is not None else [f"part{i}" for i in range(len(fractions))]
    if len(names) != len(fractions):
        raise ValueError("one name per fraction is required")
    n = len(dataset)
    order = substream(seed, "split").permutation(n)
    bounds = np.round(np.cumsum([0.0] + fractions) * n).astype(int)
    bounds[-1] = n
    parts = {}
    for name, lo, hi in zip(names, bounds[:-1], bounds[1:]):
        if hi <= lo:
            raise ValueError(f"split part {name!r} would be empty ({n} lines, fractions {fractions})")
        parts[name] = dataset.take(sorted(order[lo:hi].tolist()))
    return parts
