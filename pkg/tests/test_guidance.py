import numpy as np
import pytest

from bodyrestore import diffusion, models
from bodyrestore.diffusion import LatentState, build_schedule, estimate_x0, respace
from bodyrestore.guidance import (GuidanceConfig, guidance_gradient, guided_sample,
                                  part_loss, prepare_inputs)
from bodyrestore.models import ConditionBundle
from bodyrestore.rng import substream


@pytest.fixture(scope="module")
def small_probe(probe_params64):
    rng = substream(21, "gc")
    masks = np.zeros((5, 8, 4), bool)
    masks[0, :3, :] = True
    masks[1, 3:6, :2] = True
    masks[2, 3:6, 2:] = True
    masks[3, 6:, :2] = True
    return {
        "z0": rng.standard_normal((8, 4, 3)),
        "cond": ConditionBundle(
            reg_latent=rng.random((1, 8, 4, 3)),
            pose_latent=rng.random((1, 8, 4, 3)),
            attn_latent=rng.random((1, 8, 4, 1)),
            text_emb=rng.standard_normal((1, 16))),
        "I_reg": rng.random((8, 4, 3)),
        "masks": masks,
        "sched": build_schedule(50, 1e-4, 0.02, 50),
    }


class TestPartLoss:
    def test_identical_images_zero_both_variants(self, full_params, humanoid_batch):
        s = humanoid_batch[0]
        assert part_loss(s.image, s.image, s.part_masks, full_params) < 1e-9
        assert part_loss(s.image, s.image, s.part_masks, full_params,
                         "logit-CE") < 1e-6

    def test_noised_image_strictly_larger(self, full_params, humanoid_batch):
        s = humanoid_batch[1]
        noised = np.clip(
            s.image + substream(5, "n").standard_normal(s.image.shape) * 0.3,
            0, 1).astype(np.float32)
        for variant in ("normalized-L2", "logit-CE"):
            clean = part_loss(s.image, s.image, s.part_masks, full_params, variant)
            noisy = part_loss(noised, s.image, s.part_masks, full_params, variant)
            assert noisy > clean

    def test_mask_swap_changes_loss(self, full_params, humanoid_batch):
        # part-sensitivity: comparing head features against torso
        # reference features must cost something
        s = humanoid_batch[2]
        swapped = s.part_masks.copy()
        swapped[[0, 1]] = swapped[[1, 0]]
        aligned = part_loss(s.image, s.image, s.part_masks, full_params)
        misregistered = part_loss(s.image, s.image, swapped, full_params,
                                  ref_masks=s.part_masks)
        assert misregistered > aligned + 1e-4

    def test_all_invisible_raises(self, full_params, humanoid_batch):
        s = humanoid_batch[0]
        with pytest.raises(ValueError, match="no guidance signal"):
            part_loss(s.image, s.image, np.zeros_like(s.part_masks), full_params)

    def test_unknown_variant(self, full_params, humanoid_batch):
        s = humanoid_batch[0]
        with pytest.raises(ValueError):
            part_loss(s.image, s.image, s.part_masks, full_params, "hinge")


class TestGuidanceGradient:
    def test_s_independence(self, probe_params64, small_probe):
        p = small_probe
        grads = []
        for s in (0.5, 77.0):
            gcfg = GuidanceConfig(scale=s, seed=0, sched=p["sched"])
            grads.append(guidance_gradient(LatentState(z=p["z0"], t=25), p["cond"],
                                           probe_params64, p["I_reg"], gcfg,
                                           masks=p["masks"]))
        assert np.array_equal(grads[0], grads[1])

    def test_full_chain_matches_finite_differences(self, probe_params64, small_probe):
        p = small_probe
        gcfg = GuidanceConfig(scale=1.0, seed=0, sched=p["sched"], mode="full-chain")
        g = guidance_gradient(LatentState(z=p["z0"], t=25), p["cond"],
                              probe_params64, p["I_reg"], gcfg, masks=p["masks"])

        def loss_at(z):
            eps = models.denoise_predict(z, 25, p["cond"], probe_params64)
            x0 = estimate_x0(z, 25, eps, p["sched"])
            dec = models.decode(x0, probe_params64)
            return part_loss(dec, p["I_reg"], p["masks"], probe_params64)

        h = 1e-5
        rng = np.random.default_rng(0)
        coords = [(i, j, k) for i in range(8) for j in range(4) for k in range(3)]
        worst = 0.0
        for ix in (coords[i] for i in rng.choice(len(coords), 10, replace=False)):
            zp, zm = p["z0"].copy(), p["z0"].copy()
            zp[ix] += h
            zm[ix] -= h
            fd = (loss_at(zp) - loss_at(zm)) / (2 * h)
            worst = max(worst, abs(g[ix] - fd) / max(abs(fd), 1e-10))
        assert worst <= 1e-3

    def test_truncated_mode_matches_frozen_eps_differences(self, probe_params64,
                                                           small_probe):
        p = small_probe
        gcfg = GuidanceConfig(scale=1.0, seed=0, sched=p["sched"], mode="truncated")
        g = guidance_gradient(LatentState(z=p["z0"], t=25), p["cond"],
                              probe_params64, p["I_reg"], gcfg, masks=p["masks"])
        eps_frozen = models.denoise_predict(p["z0"], 25, p["cond"], probe_params64)

        def loss_at(z):
            x0 = estimate_x0(z, 25, eps_frozen, p["sched"])
            dec = models.decode(x0, probe_params64)
            return part_loss(dec, p["I_reg"], p["masks"], probe_params64)

        h = 1e-5
        for ix in [(0, 0, 0), (4, 2, 1), (7, 3, 2)]:
            zp, zm = p["z0"].copy(), p["z0"].copy()
            zp[ix] += h
            zm[ix] -= h
            fd = (loss_at(zp) - loss_at(zm)) / (2 * h)
            assert abs(g[ix] - fd) / max(abs(fd), 1e-10) <= 1e-3

    def test_stationary_at_exact_minimum(self, full_params, humanoid_batch):
        # the default variant's gradient w.r.t. the decoded image vanishes
        # when decoded equals I_reg (zero feature distance)
        from bodyrestore import autodiff as ad
        from bodyrestore.guidance import _part_terms_graph, _ref_part_data
        s = humanoid_batch[3]
        m = s.part_masks[None]
        ref_feats, ref_p, visible = _ref_part_data(s.image[None], m, full_params)
        P = models.as_tensors(full_params)
        img = ad.leaf(s.image[None])
        fmap = models.extractor_feature_map(img, P)
        total, _ = _part_terms_graph(fmap, m, ref_feats, ref_p, visible, P,
                                     "normalized-L2")
        total.backward()
        assert np.linalg.norm(img.grad) <= 1e-6

    def test_nonfinite_gradient_reported(self, probe_params64, small_probe):
        p = small_probe
        bad = models.ModelParams(arch=probe_params64.arch,
                                 arrays=dict(probe_params64.arrays))
        bad.arrays["ext.c1.w"] = bad.arrays["ext.c1.w"] * 1e300
        gcfg = GuidanceConfig(scale=1.0, seed=0, sched=p["sched"])
        with pytest.raises(ArithmeticError):
            guidance_gradient(LatentState(z=p["z0"] * 1e30, t=25), p["cond"],
                              bad, p["I_reg"], gcfg, masks=p["masks"])


class TestGuidedSample:
    def test_s_zero_matches_plain_chain(self, full_params, humanoid_batch):
        from bodyrestore.degradation import DegradationSpec, degrade
        sample = humanoid_batch[0]
        lq = degrade(sample.image, DegradationSpec(blur_sigma=1.0, noise_sigma=0.05),
                     seed=0)
        sched = build_schedule(200, 1e-4, 0.02, 8)
        gcfg = GuidanceConfig(scale=0.0, seed=123)
        out, trace = guided_sample(lq, "", full_params, sched, gcfg)

        # plain chain: same conditions, same noise stream
        I_reg, cond, masks, _ = prepare_inputs(lq, [""], full_params)
        rng = substream(123, "sampler")

        def predict(z, t):
            return models.denoise_predict(z, t, cond, full_params)

        _, x0 = diffusion.sample_loop((1, 128, 64, 3), predict, sched, rng)
        plain = models.decode(x0, full_params)[0]
        assert np.abs(out - plain).max() <= 1e-6
        assert all(np.isfinite(e["part_loss"]) for e in trace)

    def test_same_seed_identical_output(self, full_params, humanoid_batch):
        from bodyrestore.degradation import DegradationSpec, degrade
        sample = humanoid_batch[1]
        lq = degrade(sample.image, DegradationSpec(noise_sigma=0.05), seed=0)
        sched = build_schedule(100, 1e-4, 0.02, 5)
        gcfg = GuidanceConfig(scale=1.0, seed=7)
        a, _ = guided_sample(lq, "", full_params, sched, gcfg)
        b, _ = guided_sample(lq, "", full_params, sched, gcfg)
        assert a.tobytes() == b.tobytes()

    def test_blank_input_warns_and_falls_back(self, full_arch):
        # fresh params: the regressor is still the identity, so a blank
        # input stays blank and nothing is detected
        fresh = models.init_params(full_arch, substream(0, "init"))
        blank = np.full((128, 64, 3), 0.8, dtype=np.float32)
        sched = build_schedule(100, 1e-4, 0.02, 3)
        gcfg = GuidanceConfig(scale=1.0, seed=0)
        with pytest.warns(UserWarning, match="no pose detected"):
            out, trace = guided_sample(blank, "", fresh, sched, gcfg)
        assert out.shape == (128, 64, 3)
        assert all(e["part_loss"] == 0.0 for e in trace)

    def test_trace_timesteps_follow_schedule(self, full_params, humanoid_batch):
        from bodyrestore.degradation import DegradationSpec, degrade
        lq = degrade(humanoid_batch[2].image, DegradationSpec(noise_sigma=0.05), seed=1)
        sched = build_schedule(100, 1e-4, 0.02, 4)
        out, trace = guided_sample(lq, "", full_params, sched,
                                   GuidanceConfig(scale=0.0, seed=1))
        assert [e["t"] for e in trace] == sorted(respace(sched).orig_steps,
                                                 reverse=True)


class TestGuidanceConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            GuidanceConfig(scale=-1.0)
        with pytest.raises(ValueError):
            GuidanceConfig(mode="sideways")
        with pytest.raises(ValueError):
            GuidanceConfig(variant="hinge")
