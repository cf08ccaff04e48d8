"""Word vectors in the plain-text word2vec format, and cosine similarity."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np


class VectorFileError(ValueError):
    """The vector file is malformed."""


class UnknownTokenError(KeyError):
    def __init__(self, token: str):
        self.token = token
        super().__init__(token)

    def __str__(self) -> str:
        return f"token {self.token!r} is not in the vector store"


@dataclass(frozen=True, eq=False)
class WordVectorStore:
    dimension: int
    entries: Mapping[str, np.ndarray]

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        frozen = {}
        for tok, vec in self.entries.items():
            v = np.array(vec, dtype=np.float64)
            if v.shape != (self.dimension,):
                raise ValueError(f"vector for {tok!r} has {v.size} components, expected {self.dimension}")
            if not np.any(v):
                raise ValueError(f"vector for {tok!r} is all zeros")
            v.setflags(write=False)
            frozen[tok.lower()] = v
        object.__setattr__(self, "entries", MappingProxyType(frozen))

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def scaled(self, factor: float) -> "WordVectorStore":
        return WordVectorStore(self.dimension, {t: v * factor for t, v in self.entries.items()})

    def vector(self, token: str) -> np.ndarray:
        """Vector for a token or multi-word label.

        Exact (lowercased) lookup first; for a label with several words
        (split on whitespace, '-' or '_') the underscore-joined form, then
        the component-wise average of the word vectors.
        """
        key = token.strip().lower()
        if key in self.entries:
            return self.entries[key]
        parts = [p for p in re.split(r"[\s_\-]+", key) if p]
        if len(parts) > 1:
            joined = "_".join(parts)
            if joined in self.entries:
                return self.entries[joined]
            missing = [p for p in parts if p not in self.entries]
            if missing:
                raise UnknownTokenError(missing[0])
            avg = np.mean([self.entries[p] for p in parts], axis=0)
            if not np.any(avg):
                raise UnknownTokenError(token)
            return avg
        raise UnknownTokenError(token)


def load_vectors(path) -> WordVectorStore:
    """Read ``<count> <dimension>`` then one ``<token> <v1> ... <vd>`` per line."""
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise VectorFileError(f"{path}: header must be '<count> <dimension>'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise VectorFileError(f"{path}: header must be two integers") from None
        if count < 0 or dim < 1:
            raise VectorFileError(f"{path}: header declares count={count}, dimension={dim}")

        entries: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(f, start=2):
            fields = line.split()
            if not fields:
                continue
            token = fields[0].lower()
            if len(fields) - 1 != dim:
                raise VectorFileError(
                    f"{path}:{lineno}: token {token!r} has {len(fields) - 1} components, expected {dim}"
                )
            try:
                vec = np.array([float(x) for x in fields[1:]], dtype=np.float64)
            except ValueError:
                raise VectorFileError(f"{path}:{lineno}: token {token!r} has a non-numeric component") from None
            if not np.all(np.isfinite(vec)):
                raise VectorFileError(f"{path}:{lineno}: token {token!r} has a non-finite component")
            if not np.any(vec):
                raise VectorFileError(f"{path}:{lineno}: token {token!r} is the zero vector")
            if token in entries:
                raise VectorFileError(f"{path}:{lineno}: duplicate token {token!r}")
            entries[token] = vec

    if len(entries) != count:
        raise VectorFileError(f"{path}: header declares {count} words but the file has {len(entries)}")
    return WordVectorStore(dim, entries)


def cosine_vectors(a: np.ndarray, b: np.ndarray) -> float:
    # Products commute and the summation order is fixed, so the result is
    # symmetric; one sqrt of the product of squared norms makes cos(v, v)
    # exactly 1.
    dot = float(np.dot(a, b))
    norm2 = float(np.dot(a, a)) * float(np.dot(b, b))
    return max(-1.0, min(1.0, dot / math.sqrt(norm2)))


def cosine(store: WordVectorStore, a: str, b: str) -> float:
    return cosine_vectors(store.vector(a), store.vector(b))
