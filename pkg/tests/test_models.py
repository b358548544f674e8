import numpy as np
import pytest

from bodyrestore import autodiff as ad
from bodyrestore import models
from bodyrestore.autodiff import Tensor
from bodyrestore.curation import CaptionRecord
from bodyrestore.errors import MissingArtifactError
from bodyrestore.models import ArchConfig, ConditionBundle
from bodyrestore.rng import substream


@pytest.fixture()
def fresh_params(probe_arch):
    return models.init_params(probe_arch, substream(0, "init"))


def _bundle(rng, hw, cl=3, n=1, text_dim=16):
    h, w = hw
    return ConditionBundle(
        reg_latent=rng.random((n, h, w, cl)).astype(np.float32),
        pose_latent=rng.random((n, h, w, cl)).astype(np.float32),
        attn_latent=rng.random((n, h, w, 1)).astype(np.float32),
        text_emb=rng.standard_normal((n, text_dim)).astype(np.float32))


class TestDenoiser:
    @pytest.mark.parametrize("hw", [(8, 4), (16, 8), (32, 16)])
    def test_output_shape_contract(self, fresh_params, hw):
        z = np.zeros((2,) + hw + (3,), np.float32)
        out = models.denoise_predict(z, 5, None, fresh_params)
        assert out.shape == z.shape

    def test_zero_fusion_identity_bitwise(self, fresh_params, probe_arch):
        rng = substream(1, "m")
        z = rng.standard_normal((2, 8, 4, 3)).astype(np.float32)
        cond = _bundle(rng, (8, 4))
        cond = ConditionBundle(
            reg_latent=np.repeat(cond.reg_latent, 2, axis=0),
            pose_latent=np.repeat(cond.pose_latent, 2, axis=0),
            attn_latent=np.repeat(cond.attn_latent, 2, axis=0),
            text_emb=np.repeat(np.asarray(cond.text_emb), 2, axis=0))
        with_cond = models.denoise_predict(z, 7, cond, fresh_params)
        without = models.denoise_predict(z, 7, None, fresh_params)
        assert with_cond.tobytes() == without.tobytes()

    def test_deterministic(self, probe_params):
        rng = substream(2, "m")
        z = rng.standard_normal((1, 8, 4, 3)).astype(np.float32)
        cond = _bundle(rng, (8, 4))
        a = models.denoise_predict(z, 3, cond, probe_params)
        b = models.denoise_predict(z, 3, cond, probe_params)
        assert a.tobytes() == b.tobytes()

    def test_input_gradient_matches_jvp_finite_difference(self, probe_params):
        # directional derivative of sum(c * eps_theta) wrt z at float32,
        # checked against a central difference
        rng = substream(3, "m")
        z0 = rng.standard_normal((1, 8, 4, 3)).astype(np.float32)
        cond = _bundle(rng, (8, 4))
        cvec = rng.standard_normal((1, 8, 4, 3)).astype(np.float32)
        v = rng.standard_normal((1, 8, 4, 3)).astype(np.float32)
        v /= np.linalg.norm(v)
        P = models.as_tensors(probe_params)
        z = Tensor(z0, requires=True)
        out = ad.tsum(ad.mul(models.denoiser_forward(z, np.array([4]), cond, P,
                                                     probe_params.arch), Tensor(cvec)))
        out.backward(np.asarray(1.0, dtype=np.float32))
        jvp = float((z.grad * v).sum())
        h = np.float32(5e-3)

        def f(zz):
            e = models.denoise_predict(zz, 4, cond, probe_params)
            return float((e * cvec).sum())

        fd = (f(z0 + h * v) - f(z0 - h * v)) / (2 * float(h))
        assert abs(jvp - fd) / max(abs(fd), 1e-8) <= 1e-3

    def test_rejects_nonfinite_params(self, probe_params):
        bad = models.ModelParams(arch=probe_params.arch,
                                 arrays=dict(probe_params.arrays))
        bad.arrays["den.out.b"] = np.array([np.nan, 0, 0], dtype=np.float32)
        with pytest.raises(ValueError):
            models.denoise_predict(np.zeros((1, 8, 4, 3), np.float32), 1, None, bad)

    def test_attention_range_validated(self, fresh_params):
        rng = substream(4, "m")
        with pytest.raises(ValueError):
            ConditionBundle(
                reg_latent=rng.random((1, 8, 4, 3)),
                pose_latent=rng.random((1, 8, 4, 3)),
                attn_latent=rng.random((1, 8, 4, 1)) + 1.0,
                text_emb=rng.standard_normal((1, 16)))


class TestCodec:
    def test_identity_codec_bitwise_roundtrip(self, fresh_params):
        img = substream(5, "m").random((8, 4, 3)).astype(np.float32)
        z = models.encode(img, fresh_params)
        rec = models.decode(z, fresh_params)
        assert rec.tobytes() == img.tobytes()

    def test_identity_decode_clamps(self, fresh_params):
        z = np.array([[[[-0.5, 0.5, 1.5]]]], dtype=np.float32)
        out = models.decode(z, fresh_params)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_conv2x_shapes(self):
        arch = ArchConfig(image_hw=(16, 8), codec_mode="conv2x", latent_channels=4)
        params = models.init_params(arch, substream(0, "init"))
        img = substream(6, "m").random((16, 8, 3)).astype(np.float32)
        z = models.encode(img, params)
        assert z.shape == (8, 4, 4)
        rec = models.decode(z, params)
        assert rec.shape == (16, 8, 3)
        assert rec.min() >= 0.0 and rec.max() <= 1.0

    def test_conv2x_rejects_indivisible(self):
        arch = ArchConfig(image_hw=(16, 8), codec_mode="conv2x", latent_channels=4)
        params = models.init_params(arch, substream(0, "init"))
        with pytest.raises(ValueError):
            models.encode(np.zeros((15, 8, 3), np.float32), params)

    def test_trained_codec_beats_recorded_baseline(self, humanoid_batch):
        # train-and-record oracle: brief training must bring held-out
        # reconstruction error under the recorded bound
        from bodyrestore.training import RestorationDataset, TrainConfig, _train_codec
        from bodyrestore.imageio import to_uint8
        arch = ArchConfig(codec_mode="conv2x", latent_channels=4)
        params = models.init_params(arch, substream(0, "init"))
        train = humanoid_batch[:32]
        held = humanoid_batch[32:40]
        ds = RestorationDataset(
            ids=[f"x{i}" for i in range(len(train))],
            hq=np.stack([to_uint8(s.image) for s in train]),
            lq=np.zeros((len(train), 1, 1, 3), np.uint8), captions=[""] * len(train))
        cfg = TrainConfig(iterations=300, batch_size=8, seed=3)
        _train_codec(cfg, ds, params, [])
        errs = []
        for s in held:
            rec = models.decode(models.encode(s.image, params), params)
            errs.append(float(np.mean((rec - s.image) ** 2)))
        # recorded baseline from the reference run of this probe
        assert np.mean(errs) < 5e-3


class TestRegressor:
    def test_identity_at_init(self, fresh_params):
        img = substream(7, "m").random((8, 4, 3)).astype(np.float32)
        out = models.regress_restore(img, fresh_params)
        assert out.tobytes() == img.tobytes()

    def test_output_clamped_for_extreme_inputs(self, probe_params):
        img = np.zeros((8, 4, 3), np.float32)
        img[0, 0] = 1.0
        out = models.regress_restore(img, probe_params)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_rejects_bad_channels(self, fresh_params):
        with pytest.raises(ValueError):
            models.regress_restore(np.zeros((8, 4, 1), np.float32), fresh_params)


class TestCaptionEmbedding:
    def test_empty_caption_zero_vector(self, fresh_params):
        emb = models.embed_caption(CaptionRecord(), fresh_params)
        assert np.all(emb == 0.0)
        assert emb.shape == (fresh_params.arch.text_dim,)

    def test_single_token_is_table_row(self, fresh_params):
        emb = models.embed_caption("sunglasses", fresh_params)
        row = fresh_params.arrays["text.table"][
            fresh_params.arch.vocab.index("sunglasses")]
        np.testing.assert_array_equal(emb, row)

    def test_permutation_invariant(self, fresh_params):
        a = models.embed_caption("blond hair sunglasses", fresh_params)
        b = models.embed_caption("sunglasses hair blond", fresh_params)
        np.testing.assert_allclose(a, b, atol=1e-7)

    def test_oov_token_named_in_error(self, fresh_params):
        with pytest.raises(ValueError, match="zzgremlin"):
            models.embed_caption("zzgremlin", fresh_params)


class TestPartFeatures:
    def test_all_zero_masks_invisible(self, probe_params):
        img = substream(8, "m").random((8, 4, 3)).astype(np.float32)
        masks = np.zeros((5, 8, 4), bool)
        out = models.extract_part_features(img, masks, probe_params)
        assert not out.visible.any()
        assert np.all(out.features == 0.0)

    def test_deterministic(self, probe_params):
        img = substream(9, "m").random((8, 4, 3)).astype(np.float32)
        masks = np.zeros((5, 8, 4), bool)
        masks[0, :3] = True
        masks[2, 5:] = True
        a = models.extract_part_features(img, masks, probe_params)
        b = models.extract_part_features(img, masks, probe_params)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.visible.tolist() == [True, False, True, False, False]

    def test_translation_tolerance(self, full_params, humanoid_batch):
        # whole-pixel translation of image+masks moves each pooled part
        # feature by at most the recorded tolerance (pooling locality)
        sample = humanoid_batch[0]
        img, masks = sample.image, sample.part_masks
        dy, dx = 3, 2
        img_t = np.roll(np.roll(img, dy, axis=0), dx, axis=1)
        masks_t = np.roll(np.roll(masks, dy, axis=1), dx, axis=2)
        a = models.extract_part_features(img, masks, full_params)
        b = models.extract_part_features(img_t, masks_t, full_params)
        diff = np.abs(a.features - b.features).max()
        assert diff <= 1e-4  # recorded from the reference probe

    def test_shape_mismatch(self, probe_params):
        with pytest.raises(ValueError):
            models.extract_part_features(np.zeros((8, 4, 3), np.float32),
                                         np.zeros((5, 4, 4), bool), probe_params)


class TestCheckpoints:
    def test_roundtrip_and_byte_determinism(self, probe_params, tmp_path):
        p1, p2 = tmp_path / "a.zip", tmp_path / "b.zip"
        models.save_checkpoint(p1, probe_params)
        models.save_checkpoint(p2, probe_params)
        assert p1.read_bytes() == p2.read_bytes()
        loaded = models.load_checkpoint(p1, expect_arch=probe_params.arch)
        assert set(loaded.arrays) == set(probe_params.arrays)
        for k in loaded.arrays:
            np.testing.assert_array_equal(loaded.arrays[k], probe_params.arrays[k])

    def test_arch_mismatch_rejected(self, probe_params, tmp_path):
        path = tmp_path / "c.zip"
        models.save_checkpoint(path, probe_params)
        with pytest.raises(MissingArtifactError):
            models.load_checkpoint(path, expect_arch=ArchConfig(image_hw=(128, 64)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            models.load_checkpoint(tmp_path / "nope.zip")

    def test_version_mismatch(self, probe_params, tmp_path):
        import json
        import zipfile
        path = tmp_path / "old.zip"
        models.save_checkpoint(path, probe_params)
        raw = zipfile.ZipFile(path)
        meta = json.loads(raw.read("meta.json"))
        meta["format_version"] = "0"
        with zipfile.ZipFile(path, "w") as zf:
            zf.writestr("meta.json", json.dumps(meta))
        with pytest.raises(MissingArtifactError):
            models.load_checkpoint(path)
