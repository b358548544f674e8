import numpy as np
import pytest

from bodyrestore import models
from bodyrestore.models import ArchConfig
from bodyrestore.rng import substream


def randomized_params(arch: ArchConfig, seed: int = 11) -> models.ModelParams:
    """Init params with the deliberately-zero layers randomized.

    Zero-fusion layers and zero output convs make many gradients vanish
    by construction; probes that measure gradient correctness need a
    generic point in parameter space.
    """
    params = models.init_params(arch, substream(0, "init"))
    rnd = substream(seed, "probe-rand")
    for name, arr in params.arrays.items():
        if np.all(arr == 0):
            params.arrays[name] = (rnd.standard_normal(arr.shape) * 0.1).astype(np.float32)
    return params


@pytest.fixture(scope="session")
def probe_arch() -> ArchConfig:
    return ArchConfig(image_hw=(8, 4))


@pytest.fixture(scope="session")
def probe_params(probe_arch):
    return randomized_params(probe_arch)


@pytest.fixture(scope="session")
def probe_params64(probe_arch, probe_params):
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in probe_params.arrays.items()}
    return models.ModelParams(arch=probe_arch, arrays=arrays)


@pytest.fixture(scope="session")
def full_arch() -> ArchConfig:
    return ArchConfig()


@pytest.fixture(scope="session")
def full_params(full_arch):
    return randomized_params(full_arch)


@pytest.fixture(scope="session")
def humanoid_batch():
    from bodyrestore import humanoid
    return [humanoid.generate_sample(seed) for seed in range(40)]
