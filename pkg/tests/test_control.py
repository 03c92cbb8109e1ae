import numpy as np
import pytest

from mtok.control import (ControlGuidance, RefineCounter, control_loss,
                          control_loss_frames, control_loss_grad,
                          gradient_lipschitz, guided_decode, linear_ramp,
                          make_refine_fn, refine_frames_normalized, refine_step)
from mtok.data import (LocalCondition, MotionSequence, NormalizationStats,
                       SkeletonDescriptor, default_skeleton, normalize)
from mtok.errors import ConfigError

SKEL1 = SkeletonDescriptor(("j",), ((0, 1),))  # 1-D "position" for hand cases


def scalar_motion(values):
    frames = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    return MotionSequence(frames, 20.0, SKEL1)


def local_1d(targets, mask):
    t = len(targets)
    targ = np.zeros((t, 1, 3))
    targ[:, 0, 0] = targets
    m = np.asarray(mask, dtype=bool).reshape(t, 1)
    return LocalCondition(targets=targ, mask=m)


class TestControlLoss:
    def test_zero_when_matching(self):
        motion = scalar_motion([1.0, 2.0, 3.0])
        local = local_1d([1.0, 2.0, 3.0], [True, True, True])
        assert control_loss(motion, local) == 0.0

    def test_single_scalar_quadratic(self):
        motion = scalar_motion([1.0])
        local = local_1d([0.0], [True])
        assert control_loss(motion, local) == pytest.approx(1.0)
        _, grad = control_loss_grad(motion.frames, SKEL1, local)
        assert grad[0, 0] == pytest.approx(2.0)

    def test_two_keyframes_mean(self):
        motion = scalar_motion([0.1, 0.0, 0.3])
        local = local_1d([0.0, 9.9, 0.0], [True, False, True])
        assert control_loss(motion, local) == pytest.approx((0.01 + 0.09) / 2)

    def test_empty_mask_zero_with_warning(self, caplog):
        motion = scalar_motion([1.0])
        local = local_1d([0.0], [False])
        with caplog.at_level("WARNING"):
            assert control_loss(motion, local) == 0.0
        assert "empty mask" in caplog.text

    def test_3d_joints(self):
        skel = default_skeleton()
        frames = np.zeros((2, 12))
        frames[0, 0:3] = [1.0, 0.0, 0.0]
        motion = MotionSequence(frames, 20.0, skel)
        targets = np.zeros((2, 4, 3))
        mask = np.zeros((2, 4), dtype=bool)
        mask[0, 0] = True
        local = LocalCondition(targets=targets, mask=mask)
        assert control_loss(motion, local) == pytest.approx(1.0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    skel = default_skeleton()
    frames = rng.standard_normal((8, 12))
    targets = rng.standard_normal((8, 4, 3))
    mask = rng.random((8, 4)) < 0.4
    mask[0, 0] = True
    local = LocalCondition(targets=targets, mask=mask)
    loss, grad = control_loss_grad(frames, skel, local)
    h = 1e-6
    fd = np.zeros_like(frames)
    for i in range(frames.shape[0]):
        for j in range(frames.shape[1]):
            orig = frames[i, j]
            frames[i, j] = orig + h
            hi = control_loss_frames(frames, skel, local)
            frames[i, j] = orig - h
            lo = control_loss_frames(frames, skel, local)
            frames[i, j] = orig
            fd[i, j] = (hi - lo) / (2 * h)
    denom = max(np.abs(fd).max(), np.abs(grad).max())
    assert np.abs(fd - grad).max() / denom < 1e-6


class TestRefineStep:
    def test_closed_form(self):
        motion = scalar_motion([1.0])
        local = local_1d([0.0], [True])
        out = refine_step(motion, local, eta=0.25)
        assert out.frames[0, 0] == pytest.approx(0.5)  # x - 0.25 * 2x

    def test_eta_zero_identity(self):
        motion = scalar_motion([1.0, -2.0])
        local = local_1d([0.0, 0.0], [True, True])
        out = refine_step(motion, local, eta=0.0)
        assert out is motion

    def test_unconstrained_dims_bit_unchanged(self):
        rng = np.random.default_rng(1)
        skel = SkeletonDescriptor(("a", "b"), ((0, 3), (3, 6)))
        frames = rng.standard_normal((5, 8))  # dims 6,7 outside position slices
        targets = rng.standard_normal((5, 2, 3))
        mask = np.zeros((5, 2), dtype=bool)
        mask[:, 0] = True
        local = LocalCondition(targets=targets, mask=mask)
        motion = MotionSequence(frames.copy(), 20.0, skel)
        out = refine_step(motion, local, eta=0.1)
        assert np.array_equal(out.frames[:, 6:8], frames[:, 6:8])
        assert np.array_equal(out.frames[:, 3:6], frames[:, 3:6])  # unmasked joint
        assert not np.array_equal(out.frames[:, 0:3], frames[:, 0:3])

    def test_descent_over_random_instances(self):
        rng = np.random.default_rng(2)
        skel = default_skeleton()
        for _ in range(1000):
            t = int(rng.integers(2, 10))
            frames = rng.standard_normal((t, 12))
            targets = rng.standard_normal((t, 4, 3))
            mask = rng.random((t, 4)) < 0.5
            if not mask.any():
                mask[0, 0] = True
            local = LocalCondition(targets=targets, mask=mask)
            lipschitz = gradient_lipschitz(skel, local)
            eta = float(rng.uniform(0.05, 0.95)) / lipschitz
            motion = MotionSequence(frames, 20.0, skel)
            before = control_loss(motion, local)
            after = control_loss(refine_step(motion, local, eta), local)
            assert after <= before + 1e-12
            if before > 1e-12:
                assert after < before

    def test_normalized_space_chain_rule(self):
        rng = np.random.default_rng(3)
        skel = default_skeleton()
        stats = NormalizationStats(rng.standard_normal(12),
                                   np.abs(rng.standard_normal(12)) + 0.5)
        frames_m = rng.standard_normal((6, 12)) * stats.std + stats.mean
        motion = MotionSequence(frames_m, 20.0, skel)
        targets = rng.standard_normal((6, 4, 3))
        mask = np.ones((6, 4), dtype=bool)
        local = LocalCondition(targets=targets, mask=mask)
        normed = normalize(motion, stats).frames
        eta = 0.01
        out_norm = refine_frames_normalized(normed, skel, local, eta, stats)
        # descent in meters space through the chain rule
        before = control_loss_frames(normed * stats.std + stats.mean, skel, local)
        after = control_loss_frames(out_norm * stats.std + stats.mean, skel, local)
        assert after < before


def test_guidance_validation():
    local = local_1d([0.0], [True])
    with pytest.raises(ConfigError):
        ControlGuidance(local=local, eta=-1.0)
    with pytest.raises(ConfigError):
        ControlGuidance(local=local, eta=np.inf)
    with pytest.raises(ConfigError):
        ControlGuidance(local=local, eta=0.1, inner_steps=0)
    g = ControlGuidance(local=local, eta=0.2, schedule=linear_ramp(10, 0.5, 1.0))
    assert g.step_eta(0, 10) == pytest.approx(0.1)
    assert g.step_eta(9, 10) == pytest.approx(0.2)
    flat = ControlGuidance(local=local, eta=0.2)
    assert flat.step_eta(3, 10) == 0.2


def test_refine_fn_counts_calls():
    skel = default_skeleton()
    stats = NormalizationStats(np.zeros(12), np.ones(12))
    targets = np.zeros((4, 4, 3))
    mask = np.ones((4, 4), dtype=bool)
    guidance = ControlGuidance(local=LocalCondition(targets=targets, mask=mask),
                               eta=0.1, inner_steps=2)
    counter = RefineCounter()
    fn = make_refine_fn(skel, guidance, stats, total_steps=5, counter=counter)
    x = np.random.default_rng(0).standard_normal((1, 4, 12)).astype(np.float32)
    fn(x)
    fn(x)
    assert counter.calls == 4  # 2 sampler steps x 2 inner steps


class TestGuidedDecode:
    def test_eta_zero_matches_unguided_bitwise(self, tiny_tokenizer, small_dataset):
        item = small_dataset.items[0]
        from mtok.data import sample_control_spec

        _, local = sample_control_spec("pelvis", item.motion.skeleton, item.motion)
        tokens = tiny_tokenizer.tokenize(
            normalize(item.motion, small_dataset.normalization))
        guidance = ControlGuidance(local=local, eta=0.0)
        guided = guided_decode(tokens, local, tiny_tokenizer, guidance,
                               np.random.default_rng(5))
        plain_norm = tiny_tokenizer.decode_tokens(
            tokens.indices[None], tokens.source_length, np.random.default_rng(5))[0]
        from mtok.data import denormalize

        plain = denormalize(MotionSequence(plain_norm, tiny_tokenizer.fps,
                                           tiny_tokenizer.skeleton),
                            tiny_tokenizer.stats)
        assert np.array_equal(guided.frames, plain.frames)

    def test_all_false_mask_matches_unguided(self, tiny_tokenizer, small_dataset):
        item = small_dataset.items[1]
        t = item.motion.length
        local = LocalCondition(targets=np.zeros((t, 4, 3)),
                               mask=np.zeros((t, 4), dtype=bool))
        tokens = tiny_tokenizer.tokenize(
            normalize(item.motion, small_dataset.normalization))
        counter = RefineCounter()
        guidance = ControlGuidance(local=local, eta=0.5)
        guided = guided_decode(tokens, local, tiny_tokenizer, guidance,
                               np.random.default_rng(6), counter=counter)
        assert counter.calls == 0
        plain_norm = tiny_tokenizer.decode_tokens(
            tokens.indices[None], t, np.random.default_rng(6))[0]
        from mtok.data import denormalize

        plain = denormalize(MotionSequence(plain_norm, tiny_tokenizer.fps,
                                           tiny_tokenizer.skeleton),
                            tiny_tokenizer.stats)
        assert np.array_equal(guided.frames, plain.frames)

    def test_guidance_reduces_control_error(self, tiny_tokenizer, small_dataset):
        # even a barely-trained decoder must track targets better with refinement
        item = small_dataset.items[2]
        from mtok.data import sample_control_spec

        _, local = sample_control_spec("pelvis", item.motion.skeleton, item.motion)
        tokens = tiny_tokenizer.tokenize(
            normalize(item.motion, small_dataset.normalization))
        unguided = guided_decode(tokens, local, tiny_tokenizer,
                                 ControlGuidance(local=local, eta=0.0),
                                 np.random.default_rng(9))
        guided = guided_decode(tokens, local, tiny_tokenizer,
                               ControlGuidance(local=local, eta=0.2, inner_steps=2),
                               np.random.default_rng(9))
        assert control_loss(guided, local) < control_loss(unguided, local)
