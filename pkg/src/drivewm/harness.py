"""Windowed evaluation protocols and trajectory precision/recall reports.

Two windowing schemes are supported:

* chunked: consecutive, non-overlapping windows of ``window_seconds``;
* cumulative: growing prefixes ``[0, k * window_seconds)``.

Trailing partial windows are dropped.  Scores are produced by any callable
``score(real, gen, (start_frame, end_frame)) -> float``; FVD-style feature
scores and the trajectory metrics in :mod:`drivewm.metrics` both fit.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import HorizonExceeded, InvalidSpec
from .metrics import Metric, TrajectorySet, ade, precision_recall
from .trajectory import PlanarPath, PoseSequence, canonicalize, planar_project

REPORT_VERSION = 1
DEFAULT_WINDOW_SECONDS = 4.0
DEFAULT_EVAL_RATE = 5.0
DEFAULT_K = 3

ScoreFunction = Callable[[Any, Any, tuple[int, int]], float]


class WindowMode(str, enum.Enum):
    CHUNKED = "chunked"
    CUMULATIVE = "cumulative"


@dataclass(frozen=True)
class WindowSpec:
    mode: WindowMode = WindowMode.CHUNKED
    window_seconds: float = DEFAULT_WINDOW_SECONDS
    rate: float = DEFAULT_EVAL_RATE
    horizon_seconds: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "mode", WindowMode(self.mode))
        if not (self.window_seconds > 0 and self.rate > 0):
            raise InvalidSpec("window length and rate must be positive")
        frames = self.window_seconds * self.rate
        if abs(frames - round(frames)) > 1e-9 or round(frames) < 1:
            raise InvalidSpec(
                f"window of {self.window_seconds} s at {self.rate} Hz is not a whole number of frames"
            )
        if self.horizon_seconds < self.window_seconds:
            raise InvalidSpec(
                f"horizon {self.horizon_seconds} s is shorter than one {self.window_seconds} s window"
            )

    @property
    def window_frames(self) -> int:
        return int(round(self.window_seconds * self.rate))

    @property
    def num_windows(self) -> int:
        return int(math.floor(self.horizon_seconds / self.window_seconds + 1e-9))


def chunked_windows(spec: WindowSpec) -> list[tuple[int, int]]:
    """Consecutive ``[start, end)`` frame ranges of one window each."""
    w = spec.window_frames
    return [(i * w, (i + 1) * w) for i in range(spec.num_windows)]


def cumulative_windows(spec: WindowSpec) -> list[tuple[int, int]]:
    """Growing prefixes ``[0, k * window)`` for k = 1 .. num_windows."""
    w = spec.window_frames
    return [(0, k * w) for k in range(1, spec.num_windows + 1)]


def windows(spec: WindowSpec) -> list[tuple[int, int]]:
    if spec.mode is WindowMode.CHUNKED:
        return chunked_windows(spec)
    return cumulative_windows(spec)


@dataclass(frozen=True)
class WindowScore:
    start_seconds: float
    end_seconds: float
    start_frame: int
    end_frame: int
    score: float

    def as_dict(self) -> dict[str, Any]:
        return {
            "start_seconds": self.start_seconds,
            "end_seconds": self.end_seconds,
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "score": self.score,
        }


def evaluate_windows(score: ScoreFunction, real: Sequence, gen: Sequence,
                     spec: WindowSpec) -> list[WindowScore]:
    """Score every window of ``spec``; the score sees the full sets plus the range.

    Every element of ``real`` and ``gen`` must be at least as long as the last
    window end.
    """
    wins = windows(spec)
    need = wins[-1][1]
    for name, items in (("real", real), ("generated", gen)):
        for i, item in enumerate(items):
            if len(item) < need:
                raise HorizonExceeded(
                    f"{name}[{i}] has {len(item)} frames; the last window needs {need}"
                )
    return [
        WindowScore(s / spec.rate, e / spec.rate, s, e, float(score(real, gen, (s, e))))
        for s, e in wins
    ]


def trajectory_window_score(metric: Metric | str = Metric.FRECHET, k: int = DEFAULT_K,
                            which: str = "precision", canonicalize_paths: bool = False) -> ScoreFunction:
    """Score function computing precision or recall on each window's slice of the paths."""
    if which not in ("precision", "recall"):
        raise ValueError(f"which must be 'precision' or 'recall', got {which!r}")

    def score(real, gen, window):
        s, e = window
        r = _slice_set(real, s, e, canonicalize_paths, "real")
        g = _slice_set(gen, s, e, canonicalize_paths, "generated")
        return getattr(precision_recall(r, g, k, metric), which)

    return score


def _slice_set(items, s: int, e: int, canon: bool, label: str) -> TrajectorySet:
    paths = []
    for item in items:
        pts = (item.points if isinstance(item, PlanarPath) else np.asarray(item, dtype=float))[s:e]
        p = PlanarPath(pts)
        paths.append(canonicalize(p) if canon else p)
    return TrajectorySet(label, paths)


# -- set preparation ------------------------------------------------------------------

def to_planar(item: PoseSequence | PlanarPath | np.ndarray) -> PlanarPath:
    if isinstance(item, PoseSequence):
        return planar_project(item)
    if isinstance(item, PlanarPath):
        return item
    return PlanarPath(item)


def resample_path(path: PlanarPath, count: int) -> PlanarPath:
    """Linear resampling over the frame index to exactly ``count`` points."""
    n = len(path)
    if n == count:
        return path
    src = np.arange(n, dtype=float)
    dst = np.linspace(0.0, n - 1, count)
    pts = np.stack([np.interp(dst, src, path.points[:, i]) for i in range(2)], axis=1)
    rate = None if path.sample_rate is None else path.sample_rate * (count - 1) / (n - 1)
    return PlanarPath(pts, rate)


def prepare_set(items: Iterable, label: str, canonicalize_paths: bool = True,
                common_length: int | None = None) -> TrajectorySet:
    paths = [to_planar(x) for x in items]
    if canonicalize_paths:
        paths = [canonicalize(p) for p in paths]
    if common_length is not None:
        paths = [resample_path(p, common_length) for p in paths]
    return TrajectorySet(label, paths)


# -- reports ------------------------------------------------------------------------------

@dataclass
class Report:
    """Structured evaluation output with a stable field order.

    ``config`` echoes every parameter that affects the numbers; ``provenance``
    holds input digests and, unless deterministic, a timestamp.
    """

    config: dict[str, Any]
    table: dict[str, dict[str, float]] = field(default_factory=dict)
    extras: dict[str, Any] = field(default_factory=dict)
    windows: list[WindowScore] = field(default_factory=list)
    provenance: dict[str, Any] = field(default_factory=dict)

    def columns(self) -> list[tuple[str, float]]:
        """Flat ``(name, value)`` cells: Fréchet Prec, Fréchet Rec, ADE Prec, ADE Rec."""
        out = []
        for metric, title in ((Metric.FRECHET.value, "Frechet"), (Metric.ADE.value, "ADE")):
            if metric in self.table:
                out.append((f"{title} Prec", self.table[metric]["precision"]))
                out.append((f"{title} Rec", self.table[metric]["recall"]))
        return out

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"report_version": REPORT_VERSION, "config": self.config}
        if self.table:
            doc["precision_recall"] = {m: self.table[m] for m in _metric_order(self.table)}
            doc["columns"] = [{"name": n, "value": v} for n, v in self.columns()]
        if self.extras:
            doc["extras"] = self.extras
        if self.windows:
            doc["windows"] = [w.as_dict() for w in self.windows]
        doc["provenance"] = self.provenance
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def windows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["start_seconds", "end_seconds", "start_frame", "end_frame", "score"])
        for ws in self.windows:
            w.writerow([ws.start_seconds, ws.end_seconds, ws.start_frame, ws.end_frame, repr(ws.score)])
        return buf.getvalue()

    def format_table(self) -> str:
        cols = self.columns()
        head = " | ".join(f"{n:>12}" for n, _ in cols)
        row = " | ".join(f"{v:>12.4f}" for _, v in cols)
        return f"{head}\n{row}\n"


def _metric_order(table: Mapping[str, Any]) -> list[str]:
    return [m for m in (Metric.FRECHET.value, Metric.ADE.value) if m in table]


def trajectory_report(real: Iterable, gen: Iterable, k: int = DEFAULT_K,
                      metrics: Sequence[Metric | str] = (Metric.FRECHET, Metric.ADE),
                      *, canonicalize_paths: bool = True, paired_ade: bool = False,
                      common_length: int | None = None,
                      config: Mapping[str, Any] | None = None,
                      provenance: Mapping[str, Any] | None = None) -> Report:
    """Precision/recall per metric over two trajectory collections.

    Inputs may be pose sequences, planar paths or ``(T, 2)`` arrays.  For
    ADE every path is resampled to ``common_length`` points (default: the
    shortest length present).  ``paired_ade`` adds the mean ADE between
    index-paired real and generated trajectories.
    """
    real = [to_planar(x) for x in real]
    gen = [to_planar(x) for x in gen]
    metric_list = [Metric.parse(m) for m in metrics]
    if not metric_list:
        raise ValueError("at least one metric is required")
    lengths = [len(p) for p in real + gen]
    needs_common = Metric.ADE in metric_list or paired_ade
    if needs_common and common_length is None and lengths:
        common_length = min(lengths)

    cfg: dict[str, Any] = {
        "k": k,
        "metrics": [m.value for m in (Metric.FRECHET, Metric.ADE) if m in metric_list],
        "canonicalize": canonicalize_paths,
        "ade_common_length": common_length if needs_common else None,
        "threshold_rule": "strict (d < kth-NN radius)",
        "paired_ade": paired_ade,
    }
    if config:
        cfg.update(config)
    report = Report(config=cfg, provenance=dict(provenance or {}))

    for m in (Metric.FRECHET, Metric.ADE):
        if m not in metric_list:
            continue
        length = common_length if m is Metric.ADE else None
        r = prepare_set(real, "real", canonicalize_paths, length)
        g = prepare_set(gen, "generated", canonicalize_paths, length)
        pr = precision_recall(r, g, k, m)
        report.table[m.value] = {"precision": pr.precision, "recall": pr.recall}

    if paired_ade:
        if len(real) != len(gen):
            raise ValueError(
                f"paired ADE needs equally sized sets, got {len(real)} and {len(gen)}"
            )
        r = prepare_set(real, "real", canonicalize_paths, common_length)
        g = prepare_set(gen, "generated", canonicalize_paths, common_length)
        vals = [ade(a, b) for a, b in zip(r, g)]
        report.extras["paired_ade_mean"] = float(np.mean(vals)) if vals else None
        report.extras["paired_ade_count"] = len(vals)
    report.extras["set_sizes"] = {"real": len(real), "generated": len(gen)}
    return report
