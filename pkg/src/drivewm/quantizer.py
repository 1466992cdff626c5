"""Vector-quantization bottleneck for a factorized (semantic + detail) tokenizer.

Grids are plain arrays: latents are ``(H, W, d)`` floats, token grids are
``(H, W)`` integers.  Index ``K`` is reserved as the MASK sentinel for a
``K``-entry codebook.

Codes are unit-norm and latents are L2-normalized before lookup, so the
nearest code is also the one with the highest cosine similarity.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from scipy.special import softmax, xlogy

from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    MaskedTokenPresent,
    ParseError,
    PreconditionError,
    ShapeMismatch,
    ZeroVector,
)

NORM_EPS = 1e-12
DEFAULT_BETA = 0.25

CODEBOOK_MAGIC = b"DWMCODE\0"
CODEBOOK_VERSION = 1
_HEADER = struct.Struct("<8sIII")  # magic, version, K, d


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Normalize along the last axis; raise ZeroVector for near-zero rows."""
    x = np.asarray(x, dtype=float)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms < NORM_EPS):
        raise ZeroVector("cannot L2-normalize a vector with norm < 1e-12")
    return x / norms


@dataclass(frozen=True)
class Codebook:
    """``K`` unit-norm code vectors of dimension ``d`` (rows are normalized on construction)."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2:
            raise DimensionMismatch(f"codebook must be a K x d matrix, got shape {e.shape}")
        if e.shape[0] < 2 or e.shape[1] < 1:
            raise PreconditionError(f"codebook needs K >= 2 and d >= 1, got {e.shape}")
        if not np.all(np.isfinite(e)):
            raise PreconditionError("codebook entries must be finite")
        e = l2_normalize(e)
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def d(self) -> int:
        return self.entries.shape[1]

    @property
    def mask_token(self) -> int:
        return self.K

    @classmethod
    def random(cls, K: int, d: int, rng: np.random.Generator) -> "Codebook":
        return cls(rng.standard_normal((K, d)))


class CodecMode(str, enum.Enum):
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


@dataclass(frozen=True)
class FactorizedCodec:
    semantic: Codebook
    detail: Codebook
    mode: CodecMode = CodecMode.DISCRETE

    def __post_init__(self):
        if self.semantic.d != self.detail.d:
            raise DimensionMismatch(
                f"semantic and detail codebooks must share d, got {self.semantic.d} and {self.detail.d}"
            )
        object.__setattr__(self, "mode", CodecMode(self.mode))


class HybridEncoding(NamedTuple):
    latent: np.ndarray                    # (H, W, 2d), semantic channels first
    semantic_tokens: np.ndarray | None    # (H, W) in discrete mode
    detail_tokens: np.ndarray | None


class VQLosses(NamedTuple):
    codebook: float
    commitment: float


class CodebookUsage(NamedTuple):
    counts: np.ndarray
    utilization: float


def _check_grid(grid: np.ndarray, d: int) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim < 1 or grid.shape[-1] != d:
        raise DimensionMismatch(
            f"latent channel dimension {grid.shape[-1] if grid.ndim else None} != codebook d={d}"
        )
    if not np.all(np.isfinite(grid)):
        raise PreconditionError("latent grid contains non-finite values")
    return grid


def _sq_dists(unit: np.ndarray, cb: Codebook) -> np.ndarray:
    # direct differences rather than the dot-product expansion: no cancellation
    diff = unit[..., None, :] - cb.entries
    return np.einsum("...kd,...kd->...k", diff, diff)


def quantize(grid: np.ndarray, cb: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-code lookup.

    Returns ``(tokens, codes)`` where ``tokens`` has the grid's spatial shape
    and ``codes`` holds the selected unit-norm code vectors.  Ties go to the
    lowest code index.
    """
    grid = _check_grid(grid, cb.d)
    unit = l2_normalize(grid)
    tokens = np.argmin(_sq_dists(unit, cb), axis=-1)
    return tokens, cb.entries[tokens]


def dequantize(tokens: np.ndarray, cb: Codebook) -> np.ndarray:
    tokens = np.asarray(tokens)
    if not np.issubdtype(tokens.dtype, np.integer):
        raise PreconditionError(f"token grid must be integer typed, got {tokens.dtype}")
    if np.any(tokens == cb.mask_token):
        raise MaskedTokenPresent("cannot dequantize a grid containing MASK tokens")
    if np.any((tokens < 0) | (tokens >= cb.K)):
        raise IndexOutOfRange(f"token indices must lie in [0, {cb.K})")
    return cb.entries[tokens]


def hybrid_encode(x_s: np.ndarray, x_d: np.ndarray, codec: FactorizedCodec) -> HybridEncoding:
    """Joint representation of the two branches.

    Continuous mode concatenates the raw latents; discrete mode quantizes
    each branch against its own codebook first.  Semantic channels come first.
    """
    x_s = np.asarray(x_s, dtype=float)
    x_d = np.asarray(x_d, dtype=float)
    if x_s.shape[:-1] != x_d.shape[:-1]:
        raise DimensionMismatch(
            f"semantic and detail grids differ spatially: {x_s.shape} vs {x_d.shape}"
        )
    if codec.mode is CodecMode.CONTINUOUS:
        return HybridEncoding(np.concatenate([x_s, x_d], axis=-1), None, None)
    t_s, q_s = quantize(x_s, codec.semantic)
    t_d, q_d = quantize(x_d, codec.detail)
    return HybridEncoding(np.concatenate([q_s, q_d], axis=-1), t_s, t_d)


def similarity_matrix(cb: Codebook) -> np.ndarray:
    """Cosine similarity between all code pairs (symmetric, unit diagonal)."""
    S = cb.entries @ cb.entries.T
    S = 0.5 * (S + S.T)
    np.fill_diagonal(S, 1.0)
    return np.clip(S, -1.0, 1.0)


def _entropy(p: np.ndarray) -> np.ndarray:
    return -np.sum(xlogy(p, p), axis=-1)


def entropy_penalty(grid: np.ndarray, cb: Codebook, temperature: float = 0.01) -> float:
    """Mean per-position assignment entropy minus entropy of the mean assignment.

    Soft assignments are ``softmax(-||x_hat - c_k||^2 / temperature)``.
    Confident positions (low first term) that spread over many codes (high
    second term) drive the value down; the minimum is ``-ln K``.
    """
    if not temperature > 0:
        raise PreconditionError(f"temperature must be positive, got {temperature}")
    grid = _check_grid(grid, cb.d)
    unit = l2_normalize(grid).reshape(-1, cb.d)
    p = softmax(-_sq_dists(unit, cb) / temperature, axis=-1)
    return float(np.mean(_entropy(p)) - _entropy(p.mean(axis=0)))


def vq_losses(x: np.ndarray, q: np.ndarray, beta: float = DEFAULT_BETA) -> VQLosses:
    """VQGAN codebook and commitment terms as plain values.

    In a trainable port the codebook term stops gradients through ``x`` and
    the commitment term stops them through ``q``; numerically both are the
    mean over positions of the squared channel-norm gap.
    """
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    if x.shape != q.shape:
        raise DimensionMismatch(f"x and q shapes differ: {x.shape} vs {q.shape}")
    if beta < 0:
        raise PreconditionError(f"beta must be >= 0, got {beta}")
    gap = float(np.mean(np.sum((x - q) ** 2, axis=-1)))
    return VQLosses(gap, beta * gap)


def codebook_usage(tokens: Iterable[np.ndarray], K: int) -> CodebookUsage:
    counts = np.zeros(K, dtype=np.int64)
    for grid in tokens:
        g = np.asarray(grid).reshape(-1)
        if g.size and (g.min() < 0 or g.max() >= K):
            raise IndexOutOfRange(f"token indices must lie in [0, {K})")
        counts += np.bincount(g, minlength=K)
    return CodebookUsage(counts, float(np.count_nonzero(counts)) / K)


def token_copy_rate(last_context: np.ndarray, generated: np.ndarray) -> float:
    """Fraction of positions where the generated token equals the last context token."""
    a, b = np.asarray(last_context), np.asarray(generated)
    if a.shape != b.shape:
        raise ShapeMismatch(f"token grids differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeMismatch("token grids are empty")
    return float(np.mean(a == b))


# -- serialization --------------------------------------------------------------

def save_codebook(cb: Codebook, path: str | Path) -> None:
    """Write a codebook.  ``.json`` paths get JSON, anything else the binary layout.

    Binary layout (little endian): 8-byte magic ``DWMCODE\\0``, uint32
    version, uint32 K, uint32 d, then K*d float32 entries row-major.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = {
            "format": "drivewm-codebook",
            "version": CODEBOOK_VERSION,
            "K": cb.K,
            "d": cb.d,
            "entries": cb.entries.astype(np.float32).astype(float).ravel().tolist(),
        }
        path.write_text(json.dumps(doc) + "\n", encoding="utf-8")
        return
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CODEBOOK_MAGIC, CODEBOOK_VERSION, cb.K, cb.d))
        fh.write(cb.entries.astype("<f4").tobytes(order="C"))


def load_codebook(path: str | Path) -> Codebook:
    path = Path(path)
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            K, d = int(doc["K"]), int(doc["d"])
            entries = np.asarray(doc["entries"], dtype=np.float32)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(str(path), None, f"bad codebook JSON: {exc}") from None
        if doc.get("version") != CODEBOOK_VERSION:
            raise ParseError(str(path), None, f"unsupported codebook version {doc.get('version')!r}")
    else:
        raw = path.read_bytes()
        if len(raw) < _HEADER.size:
            raise ParseError(str(path), None, "truncated codebook header")
        magic, version, K, d = _HEADER.unpack_from(raw)
        if magic != CODEBOOK_MAGIC:
            raise ParseError(str(path), None, "not a codebook file (bad magic)")
        if version != CODEBOOK_VERSION:
            raise ParseError(str(path), None, f"unsupported codebook version {version}")
        entries = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if entries.size != K * d:
        raise ParseError(str(path), None, f"expected {K * d} entries, found {entries.size}")
    return Codebook(entries.astype(float).reshape(K, d))
