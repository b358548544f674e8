import numpy as np
import pytest

from bodyrestore.degradation import DegradationSpec, degrade, jpeg_like
from bodyrestore.metrics import psnr
from bodyrestore.rng import substream


@pytest.fixture(scope="module")
def test_image():
    from bodyrestore import humanoid
    return humanoid.generate_sample(123).image.astype(np.float64)


class TestSpecValidation:
    def test_defaults_valid(self):
        DegradationSpec()

    @pytest.mark.parametrize("kwargs", [
        {"blur_sigma": -1.0},
        {"down_factor": 0},
        {"noise_sigma": 1.5},
        {"jpeg_quality": 0},
        {"jpeg_quality": 101},
        {"order": "noise-blur"},
    ])
    def test_rejects_out_of_range(self, kwargs):
        with pytest.raises(ValueError):
            DegradationSpec(**kwargs)


class TestDegrade:
    def test_all_off_is_identity(self, test_image):
        spec = DegradationSpec(blur_sigma=0.0, down_factor=1, noise_sigma=0.0,
                               jpeg_quality=None)
        out = degrade(test_image, spec, seed=0)
        np.testing.assert_array_equal(out, test_image)

    def test_deterministic(self, test_image):
        spec = DegradationSpec(blur_sigma=1.0, noise_sigma=0.05, jpeg_quality=40)
        a = degrade(test_image, spec, seed=5)
        b = degrade(test_image, spec, seed=5)
        assert a.tobytes() == b.tobytes()

    def test_noise_variance_monte_carlo(self):
        # mid-gray input so the clamp never binds; per-pixel variance over
        # many draws within 5% of sigma^2
        sigma = 0.05
        spec = DegradationSpec(noise_sigma=sigma)
        img = np.full((10, 10, 3), 0.5)
        samples = np.stack([degrade(img, spec, seed=s) - 0.5 for s in range(10_000)])
        var = samples.var(axis=0).mean()
        assert abs(var - sigma**2) < 0.05 * sigma**2

    def test_output_range_and_shape(self, test_image):
        spec = DegradationSpec(blur_sigma=2.0, down_factor=2, noise_sigma=0.2,
                               jpeg_quality=10)
        out = degrade(test_image, spec, seed=1)
        assert out.shape == test_image.shape
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_downsample_requires_divisibility(self):
        spec = DegradationSpec(down_factor=3)
        with pytest.raises(ValueError):
            degrade(np.zeros((10, 10, 3)), spec, seed=0)


class TestJpegLike:
    def test_quality_100_smooth_gradient(self):
        # measured bound: max abs error <= 2/255 on a smooth ramp
        ys, xs = np.mgrid[0:32, 0:32]
        img = ((xs + ys) / 62.0).astype(np.float64)
        out = jpeg_like(img, 100)
        assert np.abs(out - img).max() <= 2.0 / 255.0

    def test_constant_image_dc_only(self):
        img = np.full((16, 16, 3), 0.4)
        out = jpeg_like(img, 75)
        assert np.abs(out - img).max() <= 1.0 / 255.0

    def test_quality_sweep_monotone_psnr(self, test_image):
        values = [psnr(jpeg_like(test_image, q), test_image)
                  for q in (95, 75, 50, 25, 10)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_pads_non_multiple_of_8(self):
        img = substream(0, "j").random((13, 11, 3))
        out = jpeg_like(img, 50)
        assert out.shape == img.shape

    def test_quality_range(self):
        with pytest.raises(ValueError):
            jpeg_like(np.zeros((8, 8)), 0)
