import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivewm.errors import (
    ContextUnderfilled,
    PredictorShapeMismatch,
    PreconditionError,
    ShapeMismatch,
    StateExhausted,
    TauOutOfRange,
)
from drivewm.quantizer import token_copy_rate
from drivewm.rollout import (
    ConstantTokens,
    ConstantVelocity,
    ContextWindow,
    CopyTokens,
    MaskState,
    OracleTokens,
    OracleVelocity,
    StampTokens,
    StampVelocity,
    apply_mask,
    context_augment_mgm,
    context_dropout,
    context_noise_fm,
    fm_euler_step,
    fm_interpolate,
    fm_sample_frame,
    fm_sampler,
    mask_ratio,
    mgm_sample_frame,
    mgm_sampler,
    mgm_unmask_step,
    one_hot_logits,
    rollout,
    uniform_schedule,
)


def latent_ctx(rng, n=5, shape=(3, 3, 4)):
    return ContextWindow(n, [rng.normal(size=shape) for _ in range(n)])


def token_ctx(rng, n=5, shape=(4, 4), K=16):
    return ContextWindow(n, [rng.integers(0, K, size=shape) for _ in range(n)])


class TestContextWindow:
    def test_fifo(self):
        ctx = ContextWindow(3)
        assert ctx.is_empty
        for i in range(5):
            ctx.push(np.array(i))
        assert [int(f) for f in ctx.frames] == [2, 3, 4]
        assert ctx.is_full and int(ctx.last) == 4

    def test_capacity(self):
        with pytest.raises(PreconditionError):
            ContextWindow(2, [np.zeros(1)] * 3)
        with pytest.raises(ContextUnderfilled):
            ContextWindow(2).last

    def test_defaults(self):
        ctx = ContextWindow()
        assert ctx.capacity == 5 and ctx.rate == 5.0


class TestFlowMatching:
    def test_interpolate_endpoints(self, rng):
        x, eps = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        np.testing.assert_array_equal(fm_interpolate(x, eps, 0.0), x)
        np.testing.assert_array_equal(fm_interpolate(x, eps, 1.0), eps)
        np.testing.assert_array_equal(fm_interpolate(np.zeros(4), np.full(4, 2.0), 0.5), np.ones(4))

    def test_interpolate_errors(self):
        with pytest.raises(ShapeMismatch):
            fm_interpolate(np.zeros(3), np.zeros(4), 0.5)
        with pytest.raises(TauOutOfRange):
            fm_interpolate(np.zeros(3), np.zeros(3), 1.5)

    def test_euler_step(self, rng):
        x = rng.normal(size=(2, 2))
        np.testing.assert_array_equal(fm_euler_step(x, np.zeros_like(x), 0.3), x)
        np.testing.assert_allclose(fm_euler_step(x, np.ones_like(x), 0.1), x - 0.1, atol=1e-15)
        v = rng.normal(size=(2, 2))
        two = fm_euler_step(fm_euler_step(x, v, 0.5), v, 0.5)
        np.testing.assert_allclose(two, fm_euler_step(x, v, 1.0), atol=1e-14)
        with pytest.raises(ShapeMismatch):
            fm_euler_step(x, np.zeros(3), 0.1)

    def test_telescoping(self, rng):
        x = rng.normal(size=5)
        v = rng.normal(size=5)
        taus = uniform_schedule(7)
        out = x
        for a, b in zip(taus[:-1], taus[1:]):
            out = fm_euler_step(out, v, a - b)
        np.testing.assert_allclose(out, x - np.sum(taus[:-1] - taus[1:]) * v, atol=1e-12)

    def test_schedule(self):
        s = uniform_schedule(4)
        np.testing.assert_array_equal(s, [1.0, 0.75, 0.5, 0.25, 0.0])

    @pytest.mark.parametrize("steps", [1, 5, 30])
    def test_oracle_recovers_target(self, rng, steps):
        ctx = latent_ctx(rng)
        x0 = rng.normal(size=(3, 3, 4))
        out = fm_sample_frame(OracleVelocity(x0), ctx, steps, np.random.default_rng(7))
        assert np.max(np.abs(out - x0)) <= 1e-9

    def test_oracle_matches_literal_velocity(self, rng):
        # v = eps - x0 evaluated with the known noise draw
        x0 = rng.normal(size=(2, 2, 3))
        eps = np.random.default_rng(3).standard_normal((2, 2, 3))
        pred = lambda x, tau, ctx: eps - x0  # noqa: E731
        out = fm_sample_frame(pred, latent_ctx(rng, shape=(2, 2, 3)), 30, np.random.default_rng(3))
        assert np.max(np.abs(out - x0)) <= 1e-9

    def test_zero_velocity_returns_noise(self, rng):
        ctx = latent_ctx(rng)
        out = fm_sample_frame(ConstantVelocity(0.0), ctx, 10, np.random.default_rng(11))
        np.testing.assert_array_equal(out, np.random.default_rng(11).standard_normal((3, 3, 4)))

    def test_deterministic(self, rng):
        ctx = latent_ctx(rng)
        pred = lambda x, tau, c: np.sin(x) + tau  # noqa: E731
        a = fm_sample_frame(pred, ctx, 30, np.random.default_rng(5))
        b = fm_sample_frame(pred, ctx, 30, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_predictor_shape(self, rng):
        with pytest.raises(PredictorShapeMismatch):
            fm_sample_frame(lambda x, t, c: np.zeros(2), latent_ctx(rng), 3, rng)


class TestMasking:
    def test_mask_ratio(self):
        assert mask_ratio(0.0) == 1.0
        assert mask_ratio(1.0) == pytest.approx(0.0, abs=1e-15)
        assert mask_ratio(2 / 3) == pytest.approx(0.5, abs=1e-15)

    def test_apply_mask(self):
        t = np.arange(16).reshape(4, 4)
        np.testing.assert_array_equal(apply_mask(t, np.ones((4, 4)), 99), t)
        np.testing.assert_array_equal(apply_mask(t, np.zeros((4, 4)), 99), 99)
        checker = (np.indices((4, 4)).sum(axis=0) % 2 == 0).astype(int)
        out = apply_mask(t, checker, 99)
        for i, j in np.ndindex(4, 4):
            assert out[i, j] == (t[i, j] if (i + j) % 2 == 0 else 99)
        with pytest.raises(ShapeMismatch):
            apply_mask(t, np.ones((2, 2)), 99)

    def test_state_from_tokens(self):
        s = MaskState.from_tokens(np.array([[1, 5], [5, 2]]), 3, 5)
        assert s.num_masked == 2
        np.testing.assert_array_equal(s.mask, [[1, 0], [0, 1]])


class TestUnmask:
    def test_single_masked_last_step(self, rng):
        s = MaskState.from_tokens(np.array([[1, 4], [2, 3]]), 1, 4)
        logits = one_hot_logits(np.array([[0, 3], [0, 0]]), 4)
        tokens, new = mgm_unmask_step(logits, s, rng)
        np.testing.assert_array_equal(tokens, [[1, 3], [2, 3]])
        assert new.done and new.num_masked == 0

    def test_exhausted(self, rng):
        s = MaskState.fully_masked((2, 2), 1, 4)
        _, s = mgm_unmask_step(np.zeros((2, 2, 4)), s, rng)
        with pytest.raises(StateExhausted):
            mgm_unmask_step(np.zeros((2, 2, 4)), s, rng)

    def test_schedule_counts(self, rng):
        M, n = 8, 36
        s = MaskState.fully_masked((6, 6), M, 10)
        counts = []
        for step in range(M):
            _, s = mgm_unmask_step(rng.normal(size=(6, 6, 10)), s, rng)
            counts.append(s.num_masked)
            expected = 0 if step == M - 1 else math.floor(n * math.cos(math.pi / 2 * (step + 1) / M))
            assert s.num_masked == expected
        assert counts == sorted(counts, reverse=True)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 15), st.integers(0, 10_000),
           st.sampled_from([0.0, 0.5, 1.0, 3.0]))
    def test_each_position_revealed_once(self, H, W, M, seed, temp):
        rng = np.random.default_rng(seed)
        K = 5
        s = MaskState.fully_masked((H, W), M, K)
        for step in range(M):
            prev = s
            _, s = mgm_unmask_step(rng.normal(size=(H, W, K)) * 3, s, rng, temp)
            was = prev.revealed_at != MaskState.MASKED
            # earlier reveals are frozen, new reveals carry this step's label
            np.testing.assert_array_equal(s.tokens[was], prev.tokens[was])
            np.testing.assert_array_equal(s.revealed_at[was], prev.revealed_at[was])
            assert np.sum(s.revealed_at == step) == prev.num_masked - s.num_masked
        assert s.done and s.num_masked == 0
        assert np.all(s.tokens < K)
        assert np.all((s.revealed_at >= 0) & (s.revealed_at < M))

    def test_greedy_limit(self, rng):
        target = rng.integers(0, 7, size=(3, 5))
        logits = one_hot_logits(target, 7, gap=60.0) + rng.normal(size=(3, 5, 7)) * 0.1
        for temp in (0.0, 0.5, 1.0, 2.0):
            s = MaskState.fully_masked((3, 5), 6, 7)
            while not s.done:
                _, s = mgm_unmask_step(logits, s, rng, temp)
            np.testing.assert_array_equal(s.tokens, target)

    def test_confidence_order_and_ties(self):
        # two of four masked positions revealed in the first of two steps
        # (floor(4 * cos(pi/4)) = 2 stay masked); confidences 0.9, 0.5, 0.9, 0.5
        p_hi = np.log([0.9, 0.1])
        p_lo = np.log([0.5, 0.5])
        logits = np.stack([p_hi, p_lo, p_hi, p_lo]).reshape(2, 2, 2)
        s = MaskState.fully_masked((2, 2), 2, 2)
        _, s = mgm_unmask_step(logits, s, np.random.default_rng(0), temperature=0.0)
        np.testing.assert_array_equal(s.mask, [[1, 0], [1, 0]])
        # all-equal confidences fall back to flat index order
        s = MaskState.fully_masked((2, 2), 2, 2)
        _, s = mgm_unmask_step(np.zeros((2, 2, 2)), s, np.random.default_rng(0), temperature=0.0)
        np.testing.assert_array_equal(s.mask, [[1, 1], [0, 0]])


class TestMgmSample:
    def test_constant_predictor(self, rng):
        out = mgm_sample_frame(ConstantTokens(7, 16), token_ctx(rng), 12, rng, vocab_size=16)
        np.testing.assert_array_equal(out, 7)

    def test_copy_predictor(self, rng):
        ctx = token_ctx(rng)
        out = mgm_sample_frame(CopyTokens(16), ctx, 12, rng, vocab_size=16)
        np.testing.assert_array_equal(out, ctx.last)
        assert token_copy_rate(ctx.last, out) == 1.0

    def test_deterministic(self, rng):
        ctx = token_ctx(rng)
        noisy = lambda m, c: np.random.default_rng(1).normal(size=(4, 4, 16))  # noqa: E731
        a = mgm_sample_frame(noisy, ctx, 12, np.random.default_rng(9), vocab_size=16)
        b = mgm_sample_frame(noisy, ctx, 12, np.random.default_rng(9), vocab_size=16)
        np.testing.assert_array_equal(a, b)

    def test_predictor_sees_mask_sentinel(self, rng):
        seen = []

        def pred(masked, ctx):
            seen.append(masked.copy())
            return np.zeros((*masked.shape, 16))

        mgm_sample_frame(pred, token_ctx(rng), 4, rng, vocab_size=16)
        assert np.all(seen[0] == 16)
        assert len(seen) == 4

    def test_predictor_shape(self, rng):
        with pytest.raises(PredictorShapeMismatch):
            mgm_sample_frame(lambda m, c: np.zeros((4, 4, 3)), token_ctx(rng), 4, rng, vocab_size=16)


class TestRollout:
    def test_constant_frames(self, rng):
        ctx = latent_ctx(rng, shape=(2,))
        sampler = lambda c: np.full(2, 3.0)  # noqa: E731
        out = rollout(sampler, ctx, 7)
        assert len(out.frames) == 7
        assert all(np.all(f == 3.0) for f in out.context.frames)
        # the caller's window is untouched
        assert not np.all(ctx.last == 3.0)

    def test_stamps(self):
        N = 5
        ctx = ContextWindow(N, [np.array(float(i - N + 1)) for i in range(N)])
        counter = iter(range(1, 100))
        for k in range(1, 9):
            out = rollout(lambda c: np.array(float(next(counter))), ctx, 1)
            ctx = out.context
            assert [float(f) for f in ctx.frames] == list(map(float, range(k - N + 1, k + 1)))
            assert len(ctx) == N

    def test_stamp_predictors_fm_and_mgm(self, rng):
        N = 5
        ctx = ContextWindow(N, [np.full((2, 2, 1), float(i)) for i in range(N)])
        out = rollout(fm_sampler(StampVelocity(), rng, 5), ctx, 6)
        for k, f in enumerate(out.frames, start=1):
            np.testing.assert_allclose(f, N - 1 + k, atol=1e-9)
        tctx = ContextWindow(N, [np.full((2, 2), i) for i in range(N)])
        tout = rollout(mgm_sampler(StampTokens(16), rng, 16, 4), tctx, 6)
        assert [int(f[0, 0]) for f in tout.frames] == [5, 6, 7, 8, 9, 10]
        assert [int(f[0, 0]) for f in tout.context.frames] == [6, 7, 8, 9, 10]

    def test_single_frame(self, rng):
        ctx = latent_ctx(rng, shape=(1,))
        out = rollout(lambda c: np.zeros(1), ctx, 1)
        assert len(out.frames) == 1
        np.testing.assert_array_equal(out.context.frames[0], ctx.frames[1])

    def test_underfilled(self, rng):
        with pytest.raises(ContextUnderfilled):
            rollout(lambda c: np.zeros(1), ContextWindow(5, [np.zeros(1)] * 3), 2)

    def test_oracle_tokens(self, rng):
        target = rng.integers(0, 16, size=(4, 4))
        out = rollout(mgm_sampler(OracleTokens(target, 16), rng, 16), token_ctx(rng), 3)
        for f in out.frames:
            np.testing.assert_array_equal(f, target)


class TestContextCorruption:
    def test_noise_off(self, rng):
        ctx = latent_ctx(rng)
        for c in (context_noise_fm(ctx, rng, 0.3, 0.0), context_noise_fm(ctx, rng, 0.0, 1.0)):
            for a, b in zip(c.frames, ctx.frames):
                np.testing.assert_array_equal(a, b)

    def test_noise_replay(self, rng):
        ctx = latent_ctx(rng)
        out = context_noise_fm(ctx, np.random.default_rng(42), tau_max=1.0, p_apply=1.0)
        replay = np.random.default_rng(42)
        replay.random()
        for f, g in zip(ctx.frames, out.frames):
            tau = replay.uniform(0.0, 1.0)
            eps = replay.standard_normal(f.shape)
            np.testing.assert_array_equal(g, (1 - tau) * f + tau * eps)

    def test_augment_off(self, rng):
        ctx = token_ctx(rng)
        out = context_augment_mgm(ctx, rng, 16, 0.0, 0.0)
        for a, b in zip(out.frames, ctx.frames):
            np.testing.assert_array_equal(a, b)

    def test_augment_all_frames(self, rng):
        out = context_augment_mgm(token_ctx(rng), rng, 16, 1.0, 0.5)
        assert all(np.all(f == 16) for f in out.frames)

    def test_augment_counts(self):
        # contexts whose tokens never equal the sentinel, so MASK counts are exact
        rng = np.random.default_rng(2024)
        for seed in range(20):
            ctx = token_ctx(np.random.default_rng(seed))
            out = context_augment_mgm(ctx, rng, 16, 0.1, 0.1)
            full = [i for i, f in enumerate(out.frames) if np.all(f == 16)]
            assert len(full) == 1
            partial = sum(int(np.sum(f == 16)) for i, f in enumerate(out.frames) if i not in full)
            assert partial == 6
            # input untouched
            assert not any(np.any(f == 16) for f in ctx.frames)

    def test_dropout(self, rng):
        ctx = latent_ctx(rng)
        assert all(len(context_dropout(ctx, rng, 0.0)) == 5 for _ in range(50))
        assert all(context_dropout(ctx, rng, 1.0).is_empty for _ in range(50))
        g = np.random.default_rng(0)
        drops = sum(context_dropout(ctx, g, 0.5).is_empty for _ in range(10000))
        assert abs(drops / 10000 - 0.5) <= 0.02
