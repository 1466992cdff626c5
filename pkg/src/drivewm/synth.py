"""Seeded synthetic driving trajectories from a planar unicycle model.

Behaviour presets cover clean driving (straight, constant turn) and the
typical generated-video failure modes: stopping too early, sliding sideways
without turning, and frame-to-frame position jitter.

Integration is explicit Euler at the sample rate.  Per step of length dt
starting at time t_i::

    heading += yaw_rate * dt
    position += speed * dt * (cos heading, sin heading)
              + slide_rate * dt * (-sin heading, cos heading)

With a constant turn the samples are the vertices of a regular polygon, so
they lie exactly on a circle of radius ``v * dt / (2 * sin(omega * dt / 2))``.
That radius exceeds ``v / omega`` by a relative ``(omega * dt)**2 / 24`` and
the centre sits about ``v * dt / 2`` behind the continuous-time centre.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import InvalidPreset
from .metrics import TrajectorySet
from .trajectory import PoseSequence, planar_project, yaw_matrix


class BehaviorKind(str, enum.Enum):
    STRAIGHT = "straight"
    CONSTANT_TURN = "turn"
    PREMATURE_STOP = "stop"
    LATERAL_SLIDE = "slide"
    JITTER = "jitter"


@dataclass(frozen=True)
class BehaviorPreset:
    kind: BehaviorKind
    speed: float = 10.0         # m/s
    yaw_rate: float = 0.0       # rad/s
    stop_time: float | None = None  # s, premature stop only
    slide_rate: float = 0.0     # m/s, lateral slide only
    jitter_std: float = 0.0     # m, jitter only

    def validate(self) -> None:
        kind = BehaviorKind(self.kind)
        if not (math.isfinite(self.speed) and self.speed >= 0):
            raise InvalidPreset(f"speed must be finite and >= 0, got {self.speed}")
        if not (math.isfinite(self.jitter_std) and self.jitter_std >= 0):
            raise InvalidPreset(f"jitter_std must be finite and >= 0, got {self.jitter_std}")
        if not (math.isfinite(self.yaw_rate) and math.isfinite(self.slide_rate)):
            raise InvalidPreset("yaw_rate and slide_rate must be finite")
        if kind is BehaviorKind.PREMATURE_STOP and (self.stop_time is None or self.stop_time < 0):
            raise InvalidPreset("premature stop needs stop_time >= 0")
        if kind is BehaviorKind.STRAIGHT and self.yaw_rate != 0:
            raise InvalidPreset("straight preset must have yaw_rate 0")


# Demo defaults; the failure presets share the clean turn's speed and yaw rate
# so they differ from it only by the failure itself.
PRESETS: dict[str, BehaviorPreset] = {
    "straight": BehaviorPreset(BehaviorKind.STRAIGHT, speed=10.0),
    "turn": BehaviorPreset(BehaviorKind.CONSTANT_TURN, speed=8.0, yaw_rate=0.15),
    "stop": BehaviorPreset(BehaviorKind.PREMATURE_STOP, speed=8.0, yaw_rate=0.15, stop_time=4.0),
    "slide": BehaviorPreset(BehaviorKind.LATERAL_SLIDE, speed=8.0, yaw_rate=0.15, slide_rate=1.5),
    "jitter": BehaviorPreset(BehaviorKind.JITTER, speed=8.0, yaw_rate=0.15, jitter_std=0.5),
}

# default per-field half-widths for gen_set
DEFAULT_SPREAD: dict[str, float] = {"speed": 1.0, "yaw_rate": 0.03}


def frame_count(duration: float, rate: float) -> int:
    return int(math.floor(duration * rate + 1e-9)) + 1


def gen_trajectory(preset: BehaviorPreset, duration: float, rate: float,
                   rng: np.random.Generator | None = None) -> PoseSequence:
    """Integrate one trajectory starting at the origin heading +x.

    Frames are emitted at ``t = i / rate`` for ``i = 0 .. floor(duration * rate)``.
    Only the jitter preset consumes randomness; it adds i.i.d. Gaussian
    noise to the emitted planar positions, never to the integrated state.
    """
    preset.validate()
    if not (rate > 0 and duration * rate >= 2 - 1e-9):
        raise InvalidPreset(f"need duration * rate >= 2, got {duration} s at {rate} Hz")
    kind = BehaviorKind(preset.kind)
    n = frame_count(duration, rate)
    dt = 1.0 / rate

    xy = np.zeros((n, 2))
    heading = np.zeros(n)
    x = y = h = 0.0
    for i in range(1, n):
        t = (i - 1) * dt
        v, w = preset.speed, preset.yaw_rate
        if kind is BehaviorKind.PREMATURE_STOP and t >= preset.stop_time - 1e-9:
            v = w = 0.0
        h += w * dt
        x += v * dt * math.cos(h)
        y += v * dt * math.sin(h)
        if kind is BehaviorKind.LATERAL_SLIDE:
            x -= preset.slide_rate * dt * math.sin(h)
            y += preset.slide_rate * dt * math.cos(h)
        xy[i] = (x, y)
        heading[i] = h

    if kind is BehaviorKind.JITTER and preset.jitter_std > 0:
        if rng is None:
            raise InvalidPreset("jitter preset needs a random generator")
        xy = xy + rng.normal(0.0, preset.jitter_std, size=xy.shape)

    positions = np.column_stack([xy, np.zeros(n)])
    rotations = np.stack([yaw_matrix(a) for a in heading])
    return PoseSequence(rotations, positions, np.arange(n) * dt, float(rate))


_FIELDS = {
    BehaviorKind.STRAIGHT: ("speed",),
    BehaviorKind.CONSTANT_TURN: ("speed", "yaw_rate"),
    BehaviorKind.PREMATURE_STOP: ("speed", "yaw_rate", "stop_time"),
    BehaviorKind.LATERAL_SLIDE: ("speed", "yaw_rate", "slide_rate"),
    BehaviorKind.JITTER: ("speed", "yaw_rate", "jitter_std"),
}
_ALL_FIELDS = ("speed", "yaw_rate", "stop_time", "slide_rate", "jitter_std")


def _perturb(preset: BehaviorPreset, spread: Mapping[str, float], rng: np.random.Generator) -> BehaviorPreset:
    # fields a preset's kind does not use are left alone
    changes = {}
    used = _FIELDS[BehaviorKind(preset.kind)]
    for name in sorted(spread):
        width = spread[name]
        base = getattr(preset, name)
        if name not in used or base is None or width == 0:
            continue
        value = base + rng.uniform(-width, width)
        if name in ("speed", "jitter_std", "slide_rate", "stop_time"):
            value = max(value, 0.0)
        changes[name] = value
    return dataclasses.replace(preset, **changes)


def gen_sequences(preset: BehaviorPreset, n: int, duration: float, rate: float,
                  rng: np.random.Generator,
                  param_spread: Mapping[str, float] | float | None = None) -> list[PoseSequence]:
    """``n`` trajectories with parameters drawn within ``±param_spread`` of the preset.

    ``param_spread`` maps preset field names to half-widths; a bare number
    applies to every field the preset's kind uses, and ``None`` means
    :data:`DEFAULT_SPREAD`.  Parameters are drawn from ``rng`` first (fields
    in sorted order, one trajectory at a time); each trajectory then gets its
    own child generator from ``rng.spawn`` for any noise it needs.
    """
    if n < 1:
        raise InvalidPreset(f"n must be >= 1, got {n}")
    if param_spread is None:
        spread = dict(DEFAULT_SPREAD)
    elif isinstance(param_spread, (int, float)):
        spread = {name: float(param_spread) for name in _ALL_FIELDS}
    else:
        spread = dict(param_spread)
    for name, width in spread.items():
        if name not in _ALL_FIELDS:
            raise InvalidPreset(f"unknown preset field {name!r} in param_spread")
        if width < 0:
            raise InvalidPreset(f"spread for {name} must be >= 0, got {width}")
    presets = [_perturb(preset, spread, rng) for _ in range(n)]
    children = rng.spawn(n)
    return [gen_trajectory(p, duration, rate, c) for p, c in zip(presets, children)]


def gen_set(preset: BehaviorPreset, n: int, duration: float, rate: float,
            rng: np.random.Generator, param_spread: Mapping[str, float] | float | None = None,
            label: str | None = None) -> TrajectorySet:
    seqs = gen_sequences(preset, n, duration, rate, rng, param_spread)
    return TrajectorySet(label or BehaviorKind(preset.kind).value, [planar_project(s) for s in seqs])
