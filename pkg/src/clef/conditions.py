"""Condition token registry: maps tokens to frozen embedding vectors.

Two modes: "hashed" derives a deterministic unit-norm vector from a stable
hash of the identifier (any token resolves, enabling zero-shot conditions);
"file" serves only the vectors loaded from disk and rejects unknowns.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .errors import ClefError, DatasetFormatError, UnknownCondition

NULL_CONDITION = "none"
FILE_HEADER = "clef-cond v1"
DEFAULT_DIM = 64


def _hashed_vector(token: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.Generator(np.random.PCG64(seed))
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


class ConditionRegistry:
    """Frozen token -> vector table; immutable after construction."""

    def __init__(self, dim: int = DEFAULT_DIM, mode: str = "hashed",
                 vectors: dict[str, np.ndarray] | None = None):
        if mode not in ("hashed", "file"):
            raise ClefError(f"unknown registry mode {mode!r}")
        if dim < 1:
            raise ClefError("embedding dimension must be positive")
        self.dim = dim
        self.mode = mode
        self._vectors: dict[str, np.ndarray] = {}
        for token, vec in (vectors or {}).items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (dim,):
                raise ClefError(f"vector for {token!r} has dimension {arr.shape}, expected ({dim},)")
            self._vectors[token] = arr.copy()

    def get_embedding(self, token: str) -> np.ndarray:
        if not token:
            raise ClefError("condition token must be non-empty")
        if token == NULL_CONDITION:
            return np.zeros(self.dim)
        stored = self._vectors.get(token)
        if stored is not None:
            return stored.copy()
        if self.mode == "hashed":
            vec = _hashed_vector(token, self.dim)
            self._vectors[token] = vec
            return vec.copy()
        raise UnknownCondition(f"condition {token!r} not in file-loaded registry")

    def combine_step_conditions(self, tokens: list[str]) -> np.ndarray:
        """Mean of member embeddings; empty list maps to the null vector."""
        if not tokens:
            return np.zeros(self.dim)
        acc = np.zeros(self.dim)
        for token in tokens:
            acc += self.get_embedding(token)
        return acc / len(tokens)

    def known_tokens(self) -> list[str]:
        return sorted(self._vectors)

    def save(self, path: str | Path) -> None:
        lines = [f"{FILE_HEADER} {self.dim}"]
        for token in sorted(self._vectors):
            values = " ".join(repr(float(v)) for v in self._vectors[token])
            lines.append(f"{token}\t{values}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, mode: str = "file") -> "ConditionRegistry":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.splitlines()
        if not lines:
            raise DatasetFormatError("empty condition-embedding file", line=1)
        header = lines[0].split()
        if len(header) != 3 or " ".join(header[:2]) != FILE_HEADER:
            raise DatasetFormatError(f"bad header {lines[0]!r}", line=1)
        try:
            dim = int(header[2])
        except ValueError:
            raise DatasetFormatError(f"bad dimension in header {lines[0]!r}", line=1) from None
        vectors: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            if "\t" not in line:
                raise DatasetFormatError("expected <identifier>\\t<values>", line=lineno)
            token, _, rest = line.partition("\t")
            if not token:
                raise DatasetFormatError("empty identifier", line=lineno)
            try:
                vec = np.array([float(v) for v in rest.split()], dtype=np.float64)
            except ValueError:
                raise DatasetFormatError("non-numeric embedding value", line=lineno) from None
            if vec.shape != (dim,):
                raise DatasetFormatError(
                    f"vector for {token!r} has {vec.size} values, expected {dim}", line=lineno
                )
            vectors[token] = vec
        return cls(dim=dim, mode=mode, vectors=vectors)
