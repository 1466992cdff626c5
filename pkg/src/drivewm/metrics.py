"""Distances between planar trajectories and k-NN precision/recall over sets.

Precision and recall follow the improved precision/recall construction: each
element of a set gets a radius equal to the distance to its k-th nearest
neighbour inside its own set (itself excluded), and a sample from the other
set is covered when it lies *strictly* inside at least one radius.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import EmptyPath, LengthMismatch, PreconditionError, SetTooSmall
from .trajectory import PlanarPath

PathLike = Union[PlanarPath, np.ndarray, Sequence[Sequence[float]]]


class Metric(str, enum.Enum):
    ADE = "ade"
    FRECHET = "frechet"

    @classmethod
    def parse(cls, value: "Metric | str") -> "Metric":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown metric {value!r}; expected 'ade' or 'frechet'") from None


def as_points(path: PathLike) -> np.ndarray:
    """Return the (T, 2) float array behind a path-like value."""
    if isinstance(path, PlanarPath):
        return path.points
    pts = np.asarray(path, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        if pts.size == 0:
            raise EmptyPath("path has no points")
        raise PreconditionError(f"expected (T, 2) points, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class TrajectorySet:
    """A labelled collection of planar paths (e.g. ``"real"`` or ``"generated"``)."""

    label: str
    paths: tuple[PlanarPath, ...] = field(default_factory=tuple)

    def __post_init__(self):
        paths = tuple(p if isinstance(p, PlanarPath) else PlanarPath(p) for p in self.paths)
        object.__setattr__(self, "paths", paths)

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    def __getitem__(self, i: int) -> PlanarPath:
        return self.paths[i]

    @property
    def lengths(self) -> list[int]:
        return [len(p) for p in self.paths]


@dataclass(frozen=True)
class KnnThresholds:
    k: int
    thresholds: np.ndarray


@dataclass(frozen=True)
class PrecisionRecall:
    precision: float
    recall: float
    k: int
    metric: Metric


# -- scalar distances ---------------------------------------------------------

def ade(a: PathLike, b: PathLike) -> float:
    """Average displacement error: mean Euclidean distance of time-aligned points."""
    pa, pb = as_points(a), as_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptyPath("ADE needs at least one point per path")
    if pa.shape != pb.shape:
        raise LengthMismatch(f"ADE needs equal lengths, got {len(pa)} and {len(pb)}")
    return float(np.mean(np.hypot(pa[:, 0] - pb[:, 0], pa[:, 1] - pb[:, 1])))


def _frechet_batch(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Discrete Fréchet distance for P path pairs at once.

    A is (P, m, 2), B is (P, n, 2).  Runs the Eiter-Mannila recurrence one
    row at a time, vectorised over pairs; only two DP rows are kept.
    """
    P, m, _ = A.shape
    n = B.shape[1]
    prev = None
    for i in range(m):
        d = np.hypot(A[:, i, None, 0] - B[:, :, 0], A[:, i, None, 1] - B[:, :, 1])
        if prev is None:
            cur = np.maximum.accumulate(d, axis=1)
        else:
            cur = np.empty_like(d)
            cur[:, 0] = np.maximum(prev[:, 0], d[:, 0])
            diag_or_up = np.minimum(prev[:, 1:], prev[:, :-1])
            for j in range(1, n):
                cur[:, j] = np.maximum(d[:, j], np.minimum(diag_or_up[:, j - 1], cur[:, j - 1]))
        prev = cur
    return prev[:, -1]


def discrete_frechet(a: PathLike, b: PathLike) -> float:
    """Discrete Fréchet distance between two point sequences.

    Lengths may differ.  O(m*n) time, O(n) memory.

    >>> discrete_frechet([[0, 0], [2, 0]], [[0, 0], [1, 1], [2, 0]])  # doctest: +ELLIPSIS
    1.41421356...
    """
    pa, pb = as_points(a), as_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptyPath("discrete Fréchet distance needs at least one point per path")
    return float(_frechet_batch(pa[None], pb[None])[0])


def distance(a: PathLike, b: PathLike, metric: Metric | str) -> float:
    metric = Metric.parse(metric)
    return ade(a, b) if metric is Metric.ADE else discrete_frechet(a, b)


# -- set level ----------------------------------------------------------------

def _set_points(s: TrajectorySet | Iterable[PathLike]) -> list[np.ndarray]:
    return [as_points(p) for p in s]


def _fill_frechet(out: np.ndarray, S: list[np.ndarray], D: list[np.ndarray],
                  cells: list[tuple[int, int]], chunk: int = 4096) -> None:
    groups: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for i, j in cells:
        groups.setdefault((len(S[i]), len(D[j])), []).append((i, j))
    for group in groups.values():
        for lo in range(0, len(group), chunk):
            part = group[lo:lo + chunk]
            A = np.stack([S[i] for i, _ in part])
            B = np.stack([D[j] for _, j in part])
            for (i, j), v in zip(part, _frechet_batch(A, B)):
                out[i, j] = v


def pairwise_distances(src, dst, metric: Metric | str) -> np.ndarray:
    """Matrix with entry (i, j) = metric(src[i], dst[j]).

    Fréchet pairs are grouped by (len_i, len_j) and evaluated in batches;
    every entry is bit-identical to the scalar call.
    """
    metric = Metric.parse(metric)
    S, D = _set_points(src), _set_points(dst)
    out = np.zeros((len(S), len(D)))
    if not S or not D:
        return out
    if metric is Metric.ADE:
        lengths = {len(p) for p in S} | {len(p) for p in D}
        if len(lengths) > 1:
            raise LengthMismatch(
                f"ADE needs a common path length across both sets, got lengths {sorted(lengths)}"
            )
        for i, a in enumerate(S):
            for j, b in enumerate(D):
                out[i, j] = ade(a, b)
        return out

    _fill_frechet(out, S, D, [(i, j) for i in range(len(S)) for j in range(len(D))])
    return out


def self_distances(s, metric: Metric | str) -> np.ndarray:
    """Symmetric within-set distance matrix with an exact zero diagonal."""
    metric = Metric.parse(metric)
    P = _set_points(s)
    n = len(P)
    out = np.zeros((n, n))
    if metric is Metric.ADE:
        full = pairwise_distances(P, P, metric)
        iu = np.triu_indices(n, 1)
        out[iu] = full[iu]
    else:
        _fill_frechet(out, P, P, [(i, j) for i in range(n) for j in range(i + 1, n)])
    return out + out.T


def thresholds_from_matrix(d_self: np.ndarray, k: int, label: str | None = None) -> np.ndarray:
    """k-th smallest off-diagonal entry of each row (duplicates counted)."""
    n = d_self.shape[0]
    if k < 1:
        raise PreconditionError(f"k must be >= 1, got {k}")
    if n < k + 1:
        raise SetTooSmall(n, k, label)
    off = np.where(np.eye(n, dtype=bool), np.inf, d_self)
    return np.sort(off, axis=1)[:, k - 1]


def knn_thresholds(s: TrajectorySet, k: int, metric: Metric | str) -> KnnThresholds:
    """Distance from each element to its k-th nearest neighbour in its own set."""
    label = getattr(s, "label", None)
    if k < 1:
        raise PreconditionError(f"k must be >= 1, got {k}")
    if len(s) < k + 1:
        raise SetTooSmall(len(s), k, label)
    return KnnThresholds(k, thresholds_from_matrix(self_distances(s, metric), k, label))


def precision_recall(real: TrajectorySet, gen: TrajectorySet, k: int,
                     metric: Metric | str) -> PrecisionRecall:
    """k-NN precision (fidelity) and recall (coverage) of ``gen`` against ``real``.

    precision = share of generated paths strictly inside some real radius;
    recall = share of real paths strictly inside some generated radius.
    """
    metric = Metric.parse(metric)
    if k < 1:
        raise PreconditionError(f"k must be >= 1, got {k}")
    for s, name in ((real, "real"), (gen, "generated")):
        if len(s) < k + 1:
            raise SetTooSmall(len(s), k, getattr(s, "label", None) or name)
    real_radii = knn_thresholds(real, k, metric).thresholds
    gen_radii = knn_thresholds(gen, k, metric).thresholds
    cross = pairwise_distances(real, gen, metric)  # (N real, M gen)
    precision = float(np.mean(np.any(cross < real_radii[:, None], axis=0)))
    recall = float(np.mean(np.any(cross < gen_radii[None, :], axis=1)))
    return PrecisionRecall(precision, recall, k, metric)
