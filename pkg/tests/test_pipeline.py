"""End-to-end tests for the miniature double/single-block denoising pipeline."""

import numpy as np
import pytest

from couplegen.attention import StreamState, joint_attention
from couplegen.metric import background_similarity, jer
from couplegen.numerics import Rng
from couplegen.pipeline import (
    LatentState,
    Pipeline,
    PipelineConfig,
    auto_masks,
    generate_and_score,
    init_pipeline,
    run_double_block,
    run_single_block,
    sample,
    sample_single_prompt,
)
from couplegen.prompt_io import PromptBundle
from couplegen.schedule import ScheduleFamily, ThetaSchedule, make_schedule

BUNDLE = PromptBundle(
    "a cozy room with wooden flooring",
    ("a cute pikachu sits", "a beautiful girl stands"),
)


def small_pipeline(**overrides) -> Pipeline:
    return init_pipeline(PipelineConfig(**overrides))


def constant_schedule(value: float, steps: int = 10) -> ThetaSchedule:
    return ThetaSchedule(np.full(steps, value))


class TestInit:
    def test_deterministic(self):
        a = small_pipeline()
        b = small_pipeline()
        assert np.array_equal(a.double_blocks[0].attn.w_q, b.double_blocks[0].attn.w_q)
        assert np.array_equal(a.single_blocks[-1].ff.w2, b.single_blocks[-1].ff.w2)

    def test_seed_changes_weights(self):
        a = small_pipeline(weight_seed=0)
        b = small_pipeline(weight_seed=1)
        assert not np.array_equal(a.double_blocks[0].attn.w_q, b.double_blocks[0].attn.w_q)

    def test_weight_range(self):
        p = small_pipeline()
        for blk in p.double_blocks:
            for w in (blk.attn.w_q, blk.attn.w_k, blk.attn.w_v, blk.attn.w_o):
                assert np.all(np.abs(w) <= 0.1)

    def test_block_counts_and_shapes(self):
        p = small_pipeline(double_blocks=3, single_blocks=1, d_model=4)
        assert len(p.double_blocks) == 3
        assert len(p.single_blocks) == 1
        assert p.double_blocks[0].attn.w_q.shape == (4, 4)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            PipelineConfig(d_model=0)
        with pytest.raises(ValueError):
            PipelineConfig(steps=0)


class TestBlocks:
    def _state(self, d=6, seed=3):
        rng = Rng(seed)
        return LatentState(
            background=rng.fill(4, d, -1, 1),
            entity=rng.fill(4, d, -1, 1),
            image=rng.fill(9, d, -1, 1),
        )

    def test_double_block_theta_zero_ignores_entity(self):
        p = small_pipeline(d_model=6)
        state = self._state()
        perturbed = LatentState(state.background, state.entity + 0.5, state.image)
        blk = p.double_blocks[0]
        out_a = run_double_block(state, blk, 0.0, p.norm_double)
        out_b = run_double_block(perturbed, blk, 0.0, p.norm_double)
        assert np.array_equal(out_a.image, out_b.image)
        assert np.array_equal(out_a.background, out_b.background)

    def test_double_block_theta_one_matches_reference(self):
        # at theta=1 the image/background outputs equal a plain two-stream
        # block run on (entity, image)
        p = small_pipeline(d_model=6)
        state = self._state()
        blk = p.double_blocks[0]
        out = run_double_block(state, blk, 1.0, p.norm_double)
        attn = joint_attention(StreamState(state.entity, state.image), blk.attn, p.norm_double)
        ent = state.entity + attn.text @ blk.attn.w_o
        img = state.image + attn.image @ blk.attn.w_o
        assert np.array_equal(out.entity, ent + blk.text_ff(ent))
        assert np.array_equal(out.image, img + blk.image_ff(img))

    def test_single_block_boundaries(self):
        p = small_pipeline(d_model=6)
        state = self._state()
        blk = p.single_blocks[0]
        at0 = run_single_block(state, blk, 0.0, p.norm_single)
        at1 = run_single_block(state, blk, 1.0, p.norm_single)
        mid = run_single_block(state, blk, 0.5, p.norm_single)
        # theta=0 keeps the background-branch image, theta=1 the entity-branch
        assert not np.array_equal(at0.image, at1.image)
        np.testing.assert_allclose(mid.image, 0.5 * (at0.image + at1.image), atol=1e-12)

    def test_residual_structure(self):
        # output stays near the input when attention/FF products are tiny
        p = small_pipeline(d_model=6)
        state = self._state()
        out = run_double_block(state, p.double_blocks[0], 0.5, p.norm_double)
        assert np.max(np.abs(out.image - state.image)) < 0.5


class TestSample:
    def test_output_shape_and_range(self):
        p = small_pipeline()
        imgs = sample(p, BUNDLE, constant_schedule(0.5))
        assert len(imgs) == 2
        for img in imgs:
            assert img.shape == (8, 8)
            assert np.all(img >= 0.0) and np.all(img <= 1.0)

    def test_deterministic(self):
        p = small_pipeline()
        sched = make_schedule(ScheduleFamily("arctan", center=5.0, scale=0.8), 10)
        a = sample(p, BUNDLE, sched)
        b = sample(p, BUNDLE, sched)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_frozen_golden(self):
        p = small_pipeline()
        sched = make_schedule(ScheduleFamily("arctan", center=5.0, scale=0.8), 10)
        imgs = sample(p, BUNDLE, sched)
        assert imgs[0].mean() == pytest.approx(0.49690096557992613, abs=1e-14)
        np.testing.assert_allclose(
            imgs[0][0, :4],
            [0.633843626223345, 0.5065909252160632, 0.34000053253979723, 0.47313090270206043],
            atol=1e-14,
        )
        assert imgs[1].mean() == pytest.approx(0.4967657945567293, abs=1e-14)

    def test_schedule_length_mismatch(self):
        p = small_pipeline()
        with pytest.raises(ValueError, match="schedule"):
            sample(p, BUNDLE, constant_schedule(0.5, steps=7))

    def test_theta_zero_entities_identical(self):
        p = small_pipeline()
        imgs = sample(p, BUNDLE, constant_schedule(0.0))
        assert np.array_equal(imgs[0], imgs[1])

    def test_theta_one_matches_single_prompt(self):
        p = small_pipeline()
        imgs = sample(p, BUNDLE, constant_schedule(1.0))
        for img, prompt in zip(imgs, BUNDLE.entities):
            assert np.array_equal(img, sample_single_prompt(p, prompt))

    def test_step_schedule_prefix_latents(self):
        # before a step schedule's crossing the latents are bit-identical to
        # an all-zero run
        p = small_pipeline()
        step = make_schedule(ScheduleFamily("step01", center=6.0), 10)
        log_step: list = []
        log_zero: list = []
        sample(p, BUNDLE, step, latent_log=log_step)
        sample(p, BUNDLE, constant_schedule(0.0), latent_log=log_zero)
        for ent in range(2):
            for i in range(5):  # steps 1..5 have theta = 0
                assert np.array_equal(log_step[ent][i], log_zero[ent][i])
            assert not np.array_equal(log_step[ent][5], log_zero[ent][5])

    def test_shared_vs_separate_noise(self):
        p = small_pipeline()
        shared = sample(p, BUNDLE, constant_schedule(0.0), shared_noise=True)
        separate = sample(p, BUNDLE, constant_schedule(0.0), shared_noise=False)
        assert np.array_equal(shared[0], shared[1])
        assert not np.array_equal(separate[0], separate[1])
        # entity 0 gets the base noise stream either way
        assert np.array_equal(shared[0], separate[0])

    def test_noise_seed_override(self):
        p = small_pipeline()
        a = sample(p, BUNDLE, constant_schedule(0.5), noise_seed=5)
        b = sample(p, BUNDLE, constant_schedule(0.5), noise_seed=6)
        assert not np.array_equal(a[0], b[0])

    def test_latent_log_shapes(self):
        p = small_pipeline()
        log: list = []
        sample(p, BUNDLE, constant_schedule(0.5), latent_log=log)
        assert len(log) == 2
        assert len(log[0]) == 10
        assert log[0][0].shape == (64, 16)


class TestAutoMasks:
    def test_thresholding(self):
        bg = np.zeros((4, 4))
        img = bg.copy()
        img[1, 2] = 0.3
        img[0, 0] = 0.05
        (mask,) = auto_masks([img], bg)
        assert mask[1, 2]
        assert not mask[0, 0]
        assert mask.sum() == 1


class TestGenerateAndScore:
    def test_frozen_report(self):
        p = small_pipeline()
        sched = make_schedule(ScheduleFamily("arctan", center=5.0, scale=0.8), 10)
        rep = generate_and_score(p, BUNDLE, sched)
        assert rep.f_bg == pytest.approx(-1.20146097654748e-06, abs=1e-18)
        assert rep.f_ti[0] == pytest.approx(45.0937486140487, abs=1e-10)
        assert rep.f_ti[1] == pytest.approx(62.20021904771755, abs=1e-10)
        assert rep.validity_ratio == 1.0
        assert rep.f_c == pytest.approx(1.7878723560698067, abs=1e-10)

    def test_theta_zero_gives_zero_background_cost(self):
        p = small_pipeline()
        rep = generate_and_score(p, BUNDLE, constant_schedule(0.0))
        assert rep.f_bg == 0.0

    def test_more_coupling_means_better_background(self):
        p = small_pipeline()
        coupled = generate_and_score(p, BUNDLE, constant_schedule(0.0))
        uncoupled = generate_and_score(p, BUNDLE, constant_schedule(1.0))
        assert coupled.f_bg >= uncoupled.f_bg

    def test_explicit_masks_used(self):
        p = small_pipeline()
        masks = [np.zeros((8, 8), dtype=bool) for _ in range(2)]
        masks[0][0, 0] = True
        rep = generate_and_score(p, BUNDLE, constant_schedule(0.5), masks=masks)
        assert rep.validity_ratio == 1.0 - 1.0 / 64.0

    def test_report_matches_hand_assembly(self):
        p = small_pipeline()
        sched = constant_schedule(0.5)
        rep = generate_and_score(p, BUNDLE, sched)
        from couplegen.pnm import quantize

        imgs = [quantize(i) for i in sample(p, BUNDLE, sched)]
        bg_img = quantize(sample_single_prompt(p, BUNDLE.background))
        masks = auto_masks(imgs, bg_img)
        assert rep.f_bg == background_similarity(imgs, jer(masks))

    def test_needs_two_entities(self):
        p = small_pipeline()
        single = PromptBundle("bg", ("only",))
        with pytest.raises(ValueError, match="2"):
            generate_and_score(p, single, constant_schedule(0.5))
