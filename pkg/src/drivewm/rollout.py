"""Next-frame samplers and sliding-window rollout.

Two paradigms share one rollout loop:

* continuous latents: linear flow-matching path ``x_tau = (1 - tau) x + tau eps``
  integrated from noise (tau=1) back to data (tau=0) with Euler steps;
* discrete tokens: start from an all-MASK grid and reveal the most confident
  sampled tokens on a cosine schedule.

Predictors are plain callables supplied by the host.  All randomness goes
through an explicitly passed ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .errors import (
    ContextUnderfilled,
    PreconditionError,
    PredictorShapeMismatch,
    ShapeMismatch,
    StateExhausted,
    TauOutOfRange,
)

DEFAULT_CONTEXT_FRAMES = 5
DEFAULT_CONTEXT_RATE = 5.0  # Hz
DEFAULT_FM_STEPS = 30
DEFAULT_MGM_STEPS = 12
DEFAULT_TAU_MAX = 0.3
DEFAULT_NOISE_PROB = 0.5
DEFAULT_DROP_PROB = 0.5
DEFAULT_FRAME_MASK_FRAC = 0.10
DEFAULT_TOKEN_MASK_FRAC = 0.10


class ContextWindow:
    """FIFO of at most ``capacity`` frames, oldest first.

    ``push`` appends a frame and silently evicts the oldest once full.  A
    window with no frames doubles as the "context dropped" signal for
    unconditional generation.
    """

    def __init__(self, capacity: int = DEFAULT_CONTEXT_FRAMES,
                 frames: Sequence[np.ndarray] = (), rate: float = DEFAULT_CONTEXT_RATE):
        if capacity < 1:
            raise PreconditionError(f"context capacity must be >= 1, got {capacity}")
        if len(frames) > capacity:
            raise PreconditionError(f"{len(frames)} frames exceed capacity {capacity}")
        self.capacity = capacity
        self.rate = rate
        self._frames: deque[np.ndarray] = deque(
            (np.asarray(f) for f in frames), maxlen=capacity
        )

    @property
    def frames(self) -> tuple[np.ndarray, ...]:
        return tuple(self._frames)

    @property
    def last(self) -> np.ndarray:
        if not self._frames:
            raise ContextUnderfilled("context window is empty")
        return self._frames[-1]

    @property
    def is_full(self) -> bool:
        return len(self._frames) == self.capacity

    @property
    def is_empty(self) -> bool:
        return not self._frames

    def push(self, frame: np.ndarray) -> None:
        self._frames.append(np.asarray(frame))

    def with_frames(self, frames: Sequence[np.ndarray]) -> "ContextWindow":
        return ContextWindow(self.capacity, frames, self.rate)

    def copy(self) -> "ContextWindow":
        return self.with_frames([f.copy() for f in self._frames])

    def __len__(self) -> int:
        return len(self._frames)

    def __repr__(self) -> str:
        return f"ContextWindow(capacity={self.capacity}, frames={len(self)}, rate={self.rate})"


class VelocityPredictor(Protocol):
    def __call__(self, x_tau: np.ndarray, tau: float, ctx: ContextWindow) -> np.ndarray: ...


class TokenPredictor(Protocol):
    def __call__(self, masked: np.ndarray, ctx: ContextWindow) -> np.ndarray: ...


# -- flow matching ------------------------------------------------------------

def fm_interpolate(x: np.ndarray, eps: np.ndarray, tau: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x.shape != eps.shape:
        raise ShapeMismatch(f"x and eps shapes differ: {x.shape} vs {eps.shape}")
    if not 0.0 <= tau <= 1.0:
        raise TauOutOfRange(f"tau must be in [0, 1], got {tau}")
    return (1.0 - tau) * x + tau * eps


def fm_euler_step(x_tau: np.ndarray, v: np.ndarray, delta: float) -> np.ndarray:
    """One Euler step toward the data end: ``x - delta * v``."""
    x_tau = np.asarray(x_tau, dtype=float)
    v = np.asarray(v, dtype=float)
    if x_tau.shape != v.shape:
        raise ShapeMismatch(f"x_tau and v shapes differ: {x_tau.shape} vs {v.shape}")
    if not delta > 0:
        raise PreconditionError(f"step size must be positive, got {delta}")
    return x_tau - delta * v


def uniform_schedule(steps: int) -> np.ndarray:
    """``steps + 1`` tau values from 1 down to 0 with equal spacing."""
    if steps < 1:
        raise PreconditionError(f"steps must be >= 1, got {steps}")
    return 1.0 - np.arange(steps + 1) / steps


def fm_sample_frame(pred: VelocityPredictor, ctx: ContextWindow,
                    steps: int = DEFAULT_FM_STEPS, rng: np.random.Generator | None = None,
                    *, shape: tuple[int, ...] | None = None,
                    schedule: Sequence[float] | None = None) -> np.ndarray:
    """Generate one latent frame by integrating the predicted velocity from noise.

    ``shape`` defaults to the shape of the newest context frame.  A custom
    ``schedule`` must be strictly decreasing from 1 to 0.
    """
    if rng is None:
        raise PreconditionError("fm_sample_frame needs an explicit random generator")
    if shape is None:
        shape = ctx.last.shape
    taus = uniform_schedule(steps) if schedule is None else np.asarray(schedule, dtype=float)
    if taus[0] != 1.0 or taus[-1] != 0.0 or np.any(np.diff(taus) >= 0):
        raise PreconditionError("schedule must decrease strictly from 1 to 0")
    x = rng.standard_normal(shape)
    for tau, tau_next in zip(taus[:-1], taus[1:]):
        v = np.asarray(pred(x, float(tau), ctx), dtype=float)
        if v.shape != x.shape:
            raise PredictorShapeMismatch(
                f"velocity predictor returned shape {v.shape}, expected {x.shape}"
            )
        x = fm_euler_step(x, v, float(tau - tau_next))
    return x


# -- masked generative modeling ---------------------------------------------------

def mask_ratio(u: float) -> float:
    """Cosine schedule: fraction of tokens still masked at progress ``u``."""
    if not 0.0 <= u <= 1.0:
        raise PreconditionError(f"u must be in [0, 1], got {u}")
    return math.cos(math.pi * u / 2.0)


def apply_mask(tokens: np.ndarray, mask: np.ndarray, mask_token: int) -> np.ndarray:
    """Keep tokens where ``mask == 1``; put ``mask_token`` where ``mask == 0``."""
    tokens = np.asarray(tokens)
    mask = np.asarray(mask)
    if tokens.shape != mask.shape:
        raise ShapeMismatch(f"tokens and mask shapes differ: {tokens.shape} vs {mask.shape}")
    return np.where(mask.astype(bool), tokens, mask_token)


@dataclass(frozen=True)
class MaskState:
    """Progress of one frame's iterative unmasking.

    ``revealed_at`` records the step that revealed each position: ``MASKED``
    (-1) while hidden, ``PREFILLED`` (-2) for positions known before sampling
    started.  ``tokens`` holds ``mask_token`` wherever nothing is revealed yet.
    """

    MASKED = -1
    PREFILLED = -2

    tokens: np.ndarray
    revealed_at: np.ndarray
    total_steps: int
    mask_token: int
    step: int = 0
    initially_masked: int = field(default=-1)

    def __post_init__(self):
        if self.total_steps < 1:
            raise PreconditionError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.initially_masked < 0:
            object.__setattr__(self, "initially_masked", self.num_masked)

    @classmethod
    def fully_masked(cls, shape: tuple[int, int], total_steps: int, mask_token: int) -> "MaskState":
        return cls(
            tokens=np.full(shape, mask_token, dtype=np.int64),
            revealed_at=np.full(shape, cls.MASKED, dtype=np.int64),
            total_steps=total_steps,
            mask_token=mask_token,
        )

    @classmethod
    def from_tokens(cls, masked_tokens: np.ndarray, total_steps: int, mask_token: int) -> "MaskState":
        """State for a partially masked grid; known positions are never resampled."""
        t = np.asarray(masked_tokens, dtype=np.int64)
        revealed_at = np.where(t == mask_token, cls.MASKED, cls.PREFILLED).astype(np.int64)
        return cls(t.copy(), revealed_at, total_steps, mask_token)

    @property
    def mask(self) -> np.ndarray:
        """Binary mask, 1 = revealed."""
        return (self.revealed_at != self.MASKED).astype(np.int8)

    @property
    def num_masked(self) -> int:
        return int(np.count_nonzero(self.revealed_at == self.MASKED))

    @property
    def done(self) -> bool:
        return self.step >= self.total_steps


def _sample_with_confidence(logits: np.ndarray, rng: np.random.Generator,
                            temperature: float) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(logits, dtype=float)
    if temperature == 0:
        choice = np.argmax(z, axis=-1)
    else:
        z = z / temperature
        choice = np.argmax(z + rng.gumbel(size=z.shape), axis=-1)
    z = z - z.max(axis=-1, keepdims=True)
    logp = z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    conf = np.exp(np.take_along_axis(logp, choice[..., None], axis=-1)[..., 0])
    return choice, conf


def mgm_unmask_step(logits: np.ndarray, state: MaskState, rng: np.random.Generator,
                    temperature: float = 1.0) -> tuple[np.ndarray, MaskState]:
    """Sample every masked position, then reveal the most confident ones.

    A candidate token is drawn from ``softmax(logits / temperature)`` at each
    masked position; its probability is the confidence.  After this step at
    most ``floor(n0 * cos(pi/2 * (step+1)/M))`` positions stay masked, where
    ``n0`` is the count masked at the start, so the last step reveals
    everything.  Equal confidences go to the lower flat index.
    ``temperature=0`` picks the argmax deterministically.
    """
    if state.done:
        raise StateExhausted(f"all {state.total_steps} unmasking steps already used")
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != state.tokens.ndim + 1 or logits.shape[:-1] != state.tokens.shape:
        raise ShapeMismatch(
            f"logits shape {logits.shape} does not match token grid {state.tokens.shape} x K"
        )
    if not np.all(np.isfinite(logits)):
        raise PreconditionError("logits must be finite")
    if temperature < 0:
        raise PreconditionError(f"temperature must be >= 0, got {temperature}")

    choice, conf = _sample_with_confidence(logits, rng, temperature)
    masked = state.revealed_at == MaskState.MASKED
    n_masked = int(masked.sum())
    keep_masked = int(math.floor(state.initially_masked * mask_ratio((state.step + 1) / state.total_steps)))
    if state.step + 1 == state.total_steps:
        keep_masked = 0
    n_reveal = max(0, n_masked - keep_masked)

    flat_conf = np.where(masked, conf, -np.inf).ravel()
    order = np.argsort(-flat_conf, kind="stable")[:n_reveal]
    tokens = state.tokens.copy().ravel()
    revealed_at = state.revealed_at.copy().ravel()
    tokens[order] = choice.ravel()[order]
    revealed_at[order] = state.step
    new = replace(
        state,
        tokens=tokens.reshape(state.tokens.shape),
        revealed_at=revealed_at.reshape(state.tokens.shape),
        step=state.step + 1,
    )
    return new.tokens, new


def mgm_sample_frame(pred: TokenPredictor, ctx: ContextWindow, steps: int = DEFAULT_MGM_STEPS,
                     rng: np.random.Generator | None = None, temperature: float = 1.0,
                     *, vocab_size: int, shape: tuple[int, int] | None = None,
                     return_state: bool = False):
    """Generate one token grid from a fully masked start in ``steps`` rounds.

    The predictor sees the current grid, with ``vocab_size`` as the MASK
    sentinel, and must return ``(H, W, vocab_size)`` logits.
    """
    if rng is None:
        raise PreconditionError("mgm_sample_frame needs an explicit random generator")
    if shape is None:
        shape = ctx.last.shape
    state = MaskState.fully_masked(tuple(shape), steps, vocab_size)
    while not state.done:
        logits = np.asarray(pred(state.tokens.copy(), ctx))
        if logits.shape != (*state.tokens.shape, vocab_size):
            raise PredictorShapeMismatch(
                f"token predictor returned {logits.shape}, expected {(*state.tokens.shape, vocab_size)}"
            )
        _, state = mgm_unmask_step(logits, state, rng, temperature)
    return (state.tokens, state) if return_state else state.tokens


# -- rollout ---------------------------------------------------------------------

Sampler = Callable[[ContextWindow], np.ndarray]


@dataclass
class Rollout:
    frames: list[np.ndarray]
    context: ContextWindow


def rollout(sampler: Sampler, initial_ctx: ContextWindow, num_frames: int) -> Rollout:
    """Autoregressive generation with a sliding context window.

    Each new frame is appended to the window and the oldest frame dropped.
    ``initial_ctx`` is left untouched; the returned ``context`` is the window
    after the last step.
    """
    if not initial_ctx.is_full:
        raise ContextUnderfilled(
            f"rollout needs a full context ({initial_ctx.capacity} frames), got {len(initial_ctx)}"
        )
    if num_frames < 1:
        raise PreconditionError(f"num_frames must be >= 1, got {num_frames}")
    ctx = initial_ctx.copy()
    frames = []
    for _ in range(num_frames):
        frame = np.asarray(sampler(ctx))
        frames.append(frame)
        ctx.push(frame)
    return Rollout(frames, ctx)


def fm_sampler(pred: VelocityPredictor, rng: np.random.Generator,
               steps: int = DEFAULT_FM_STEPS, **kwargs: Any) -> Sampler:
    return lambda ctx: fm_sample_frame(pred, ctx, steps, rng, **kwargs)


def mgm_sampler(pred: TokenPredictor, rng: np.random.Generator, vocab_size: int,
                steps: int = DEFAULT_MGM_STEPS, temperature: float = 1.0, **kwargs: Any) -> Sampler:
    return lambda ctx: mgm_sample_frame(pred, ctx, steps, rng, temperature,
                                        vocab_size=vocab_size, **kwargs)


# -- context corruption (training-time augmentation) -------------------------------

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def context_noise_fm(ctx: ContextWindow, rng: np.random.Generator,
                     tau_max: float = DEFAULT_TAU_MAX, p_apply: float = DEFAULT_NOISE_PROB) -> ContextWindow:
    """With probability ``p_apply``, noise every frame to its own tau ~ U(0, tau_max).

    Draw order: one uniform for the apply decision, then per frame (oldest
    first) the tau and a standard-normal noise grid.
    """
    if not 0.0 <= tau_max <= 1.0 or not 0.0 <= p_apply <= 1.0:
        raise PreconditionError("tau_max and p_apply must lie in [0, 1]")
    if rng.random() >= p_apply:
        return ctx.copy()
    noised = []
    for f in ctx.frames:
        tau = rng.uniform(0.0, tau_max)
        eps = rng.standard_normal(f.shape)
        noised.append(fm_interpolate(f, eps, tau))
    return ctx.with_frames(noised)


def context_augment_mgm(ctx: ContextWindow, rng: np.random.Generator, mask_token: int,
                        frame_frac: float = DEFAULT_FRAME_MASK_FRAC,
                        token_frac: float = DEFAULT_TOKEN_MASK_FRAC) -> ContextWindow:
    """Mask whole context frames, then scattered tokens in the remaining frames.

    ``round(frame_frac * N)`` frames become all-MASK, then
    ``round(token_frac * remaining tokens)`` positions are chosen uniformly
    without replacement among the untouched frames.  Rounding is half-up.
    """
    if not 0.0 <= frame_frac <= 1.0 or not 0.0 <= token_frac <= 1.0:
        raise PreconditionError("frame_frac and token_frac must lie in [0, 1]")
    frames = [np.array(f, copy=True) for f in ctx.frames]
    n = len(frames)
    n_frames = min(n, _round_half_up(frame_frac * n))
    dropped = set(rng.choice(n, size=n_frames, replace=False).tolist()) if n_frames else set()
    for i in dropped:
        frames[i][...] = mask_token
    kept = [i for i in range(n) if i not in dropped]
    sizes = [frames[i].size for i in kept]
    total = sum(sizes)
    n_tokens = min(total, _round_half_up(token_frac * total))
    if n_tokens:
        picks = rng.choice(total, size=n_tokens, replace=False)
        offsets = np.cumsum([0] + sizes)
        for p in np.sort(picks):
            slot = int(np.searchsorted(offsets, p, side="right") - 1)
            frames[kept[slot]].reshape(-1)[p - offsets[slot]] = mask_token
    return ctx.with_frames(frames)


def context_dropout(ctx: ContextWindow, rng: np.random.Generator,
                    p: float = DEFAULT_DROP_PROB) -> ContextWindow:
    """Return an empty window with probability ``p`` (unconditional generation)."""
    if not 0.0 <= p <= 1.0:
        raise PreconditionError(f"p must lie in [0, 1], got {p}")
    if rng.random() < p:
        return ContextWindow(ctx.capacity, (), ctx.rate)
    return ctx.copy()


# -- analytic predictors -------------------------------------------------------------

class OracleVelocity:
    """Exact conditional velocity toward a known data point ``x0``.

    On the straight path ``x_tau = (1 - tau) x0 + tau eps`` the velocity
    ``eps - x0`` equals ``(x_tau - x0) / tau``, which needs no access to eps.
    Euler integration along it is exact up to roundoff.
    """

    def __init__(self, x0: np.ndarray):
        self.x0 = np.asarray(x0, dtype=float)

    def target(self, ctx: ContextWindow) -> np.ndarray:
        return self.x0

    def __call__(self, x_tau: np.ndarray, tau: float, ctx: ContextWindow) -> np.ndarray:
        return (x_tau - self.target(ctx)) / tau


class CopyVelocity(OracleVelocity):
    """Oracle velocity toward the newest context frame."""

    def __init__(self):
        pass

    def target(self, ctx: ContextWindow) -> np.ndarray:
        return np.asarray(ctx.last, dtype=float)


class StampVelocity(OracleVelocity):
    """Oracle velocity toward the newest context frame plus one."""

    def __init__(self):
        pass

    def target(self, ctx: ContextWindow) -> np.ndarray:
        return np.asarray(ctx.last, dtype=float) + 1.0


class ConstantVelocity:
    def __init__(self, value: float = 0.0):
        self.value = value

    def __call__(self, x_tau: np.ndarray, tau: float, ctx: ContextWindow) -> np.ndarray:
        return np.full_like(x_tau, self.value, dtype=float)


ONE_HOT_GAP = 100.0


def one_hot_logits(tokens: np.ndarray, vocab_size: int, gap: float = ONE_HOT_GAP) -> np.ndarray:
    tokens = np.asarray(tokens)
    logits = np.zeros((*tokens.shape, vocab_size))
    np.put_along_axis(logits, tokens[..., None], gap, axis=-1)
    return logits


class OracleTokens:
    """One-hot logits at a fixed target grid."""

    def __init__(self, target: np.ndarray, vocab_size: int):
        self.target_grid = np.asarray(target, dtype=np.int64)
        self.vocab_size = vocab_size

    def target(self, ctx: ContextWindow) -> np.ndarray:
        return self.target_grid

    def __call__(self, masked: np.ndarray, ctx: ContextWindow) -> np.ndarray:
        return one_hot_logits(self.target(ctx), self.vocab_size)


class ConstantTokens(OracleTokens):
    def __init__(self, token: int, vocab_size: int):
        self.token = token
        self.vocab_size = vocab_size

    def target(self, ctx: ContextWindow) -> np.ndarray:
        return np.full(ctx.last.shape, self.token, dtype=np.int64)

    def __call__(self, masked: np.ndarray, ctx: ContextWindow) -> np.ndarray:
        return one_hot_logits(np.full(masked.shape, self.token, dtype=np.int64), self.vocab_size)


class CopyTokens(OracleTokens):
    """One-hot logits at the newest context frame: the pure copying model."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size

    def target(self, ctx: ContextWindow) -> np.ndarray:
        return np.asarray(ctx.last, dtype=np.int64)


class StampTokens(OracleTokens):
    """One-hot logits at ``(newest context token + 1) mod K``."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size

    def target(self, ctx: ContextWindow) -> np.ndarray:
        return (np.asarray(ctx.last, dtype=np.int64) + 1) % self.vocab_size
