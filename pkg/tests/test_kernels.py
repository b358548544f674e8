import numpy as np
import pytest

from bodyrestore import kernels as K
from bodyrestore.degradation import _DCT8, quant_table
from bodyrestore.metrics import gaussian_kernel1d
from bodyrestore.rng import substream


def backends():
    impls = [("numpy", K.get_impl("numpy"))]
    try:
        impls.append(("numba", K.get_impl("numba")))
    except ImportError:
        pass
    return impls


@pytest.mark.parametrize("name,impl", backends())
class TestBackend:
    def test_filter2_same_normalized_kernel_preserves_constant(self, name, impl):
        k = gaussian_kernel1d(1.5, 4)
        img = np.full((12, 9, 3), 0.6)
        out = impl.filter2_same(img, k)
        np.testing.assert_allclose(out, 0.6, rtol=1e-12)

    def test_filter2_valid_box(self, name, impl):
        img = np.arange(25, dtype=np.float64).reshape(5, 5)
        out = impl.filter2_valid(img, np.ones(3) / 3.0)
        # the valid center equals the 3x3 box mean
        assert out.shape == (3, 3)
        assert out[1, 1] == pytest.approx(img[1:4, 1:4].mean(), rel=1e-12)

    def test_block_dct_identity_without_quantization(self, name, impl):
        rng = substream(0, "k")
        chan = rng.random((16, 24)) * 255.0
        out = impl.block_dct_quant(chan, _DCT8, np.full((8, 8), 1e-9))
        np.testing.assert_allclose(out, chan, atol=1e-8)

    def test_deterministic(self, name, impl):
        rng = substream(1, "k")
        img = rng.random((10, 8))
        k = gaussian_kernel1d(1.0, 3)
        assert impl.filter2_same(img, k).tobytes() == impl.filter2_same(img, k).tobytes()


class TestCrossBackend:
    def test_backends_agree(self):
        impls = dict(backends())
        if "numba" not in impls:
            pytest.skip("numba unavailable")
        rng = substream(2, "k")
        img = rng.random((14, 10, 3))
        k = gaussian_kernel1d(1.5, 4)
        a = impls["numpy"].filter2_same(img, k)
        b = impls["numba"].filter2_same(img, k)
        np.testing.assert_array_equal(a, b)
        g = rng.random((16, 16))
        a = impls["numpy"].filter2_valid(g, k)
        b = impls["numba"].filter2_valid(g, k)
        np.testing.assert_array_equal(a, b)
        chan = rng.random((16, 16)) * 255
        q = quant_table(50)
        a = impls["numpy"].block_dct_quant(chan, _DCT8, q)
        b = impls["numba"].block_dct_quant(chan, _DCT8, q)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_env_flag_selects_backend(self):
        import subprocess
        import sys
        for want in ("numpy", "numba"):
            out = subprocess.run(
                [sys.executable, "-c",
                 "from bodyrestore import kernels; print(kernels.BACKEND)"],
                capture_output=True, text=True,
                env={"BODYRESTORE_BACKEND": want, "PATH": "/usr/bin:/bin",
                     "HOME": "/root"})
            assert out.stdout.strip() == want, out.stderr
