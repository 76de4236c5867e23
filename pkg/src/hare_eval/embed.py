"""Unit-norm entity embeddings: a deterministic hashed character n-gram
embedder and a file-backed store for externally produced vectors."""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass

import numpy as np


class EmbedError(ValueError):
    """Raised on vector store misses (error policy) and dimension mismatches."""


def normalize_key(text: str) -> str:
    """Lowercase, collapse internal whitespace, strip edge punctuation."""
    key = " ".join(text.lower().split())
    start, end = 0, len(key)
    while start < end and not (key[start].isalnum() or key[start].isspace()):
        start += 1
    while end > start and not (key[end - 1].isalnum() or key[end - 1].isspace()):
        end -= 1
    return key[start:end].strip()


@dataclass(frozen=True)
class HashedEmbedderConfig:
    ngram_sizes: tuple[int, ...] = (3, 4, 5)
    dim: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.dim < 8:
            raise ValueError("dim must be >= 8")
        if not self.ngram_sizes:
            raise ValueError("ngram_sizes must be non-empty")


class HashedEmbedder:
    """Signed feature hashing of character n-grams, L2-normalized.

    Pure function of (surface, config); empty surfaces map to the
    zero-vector sentinel.
    """

    def __init__(self, cfg: HashedEmbedderConfig = HashedEmbedderConfig()):
        self.cfg = cfg
        self._key = cfg.seed.to_bytes(8, "little", signed=True)

    @property
    def dim(self) -> int:
        return self.cfg.dim

    def contains(self, surface: str) -> bool:
        return True

    def embed(self, surface: str) -> np.ndarray:
        v = np.zeros(self.cfg.dim)
        key = normalize_key(surface)
        if not key:
            return v
        padded = "^" + key + "$"
        for n in self.cfg.ngram_sizes:
            for i in range(len(padded) - n + 1):
                gram = f"{n}|{padded[i:i + n]}"
                h = int.from_bytes(
                    hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=self._key).digest(),
                    "little",
                )
                v[(h >> 1) % self.cfg.dim] += 1.0 if h & 1 else -1.0
        norm = float(np.linalg.norm(v))
        if norm == 0.0:  # sign cancellation; keep the unit-norm invariant
            v[0] = 1.0
            return v
        return v / norm


class VectorStore:
    """Immutable map from normalized entity surface to a unit-norm vector.

    Misses either fall back to the hashed embedder (counted) or raise,
    per the fallback policy.
    """

    def __init__(self, dim: int, entries: dict[str, np.ndarray], fallback: str = "hashed_fallback"):
        if fallback not in ("hashed_fallback", "error"):
            raise ValueError(f"unknown fallback policy {fallback!r}")
        self.dim = dim
        self.fallback = fallback
        self.entries: dict[str, np.ndarray] = {}
        for key, vec in entries.items():
            vec = np.asarray(vec, dtype=float)
            if vec.shape != (dim,):
                raise EmbedError(f"vector for {key!r} has dimension {vec.shape[0]}, store is {dim}")
            self.entries[key] = vec
        self._hashed = HashedEmbedder(HashedEmbedderConfig(dim=max(dim, 8)))
        self._lock = threading.Lock()
        self.misses = 0

    @classmethod
    def load(cls, path, fallback: str = "hashed_fallback") -> "VectorStore":
        """Parse a store file: first line `dim=<d>`, then `key<TAB>v1 v2 ... vd`."""
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("dim="):
                raise EmbedError(f"{path}: expected 'dim=<d>' header, got {header!r}")
            try:
                dim = int(header[4:])
            except ValueError:
                raise EmbedError(f"{path}: bad dimension in header {header!r}")
            entries: dict[str, np.ndarray] = {}
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                key, _, rest = line.rstrip("\n").partition("\t")
                values = rest.split()
                if len(values) != dim:
                    raise EmbedError(
                        f"{path}: line {lineno}: {len(values)} values for key {key!r}, expected {dim}"
                    )
                entries[key] = np.array([float(x) for x in values])
        return cls(dim=dim, entries=entries, fallback=fallback)

    def dump(self) -> str:
        lines = [f"dim={self.dim}"]
        for key in sorted(self.entries):
            lines.append(key + "\t" + " ".join(repr(float(x)) for x in self.entries[key]))
        return "\n".join(lines) + "\n"

    def contains(self, surface: str) -> bool:
        return normalize_key(surface) in self.entries

    def lookup(self, surface: str) -> np.ndarray:
        key = normalize_key(surface)
        vec = self.entries.get(key)
        if vec is not None:
            return vec
        if self.fallback == "error":
            raise EmbedError(f"no vector for key {key!r}")
        with self._lock:
            self.misses += 1
        vec = self._hashed.embed(surface)
        if self._hashed.dim != self.dim:
            vec = vec[: self.dim]
            norm = float(np.linalg.norm(vec))
            if norm > 0.0:
                vec = vec / norm
            elif key:
                vec = np.zeros(self.dim)
                vec[0] = 1.0
        return vec

    embed = lookup


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; zero-vector sentinels score 0."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise EmbedError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def cosine_clamped(u: np.ndarray, v: np.ndarray) -> float:
    return max(0.0, cosine(u, v))
