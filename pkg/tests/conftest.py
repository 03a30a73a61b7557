import numpy as np
import pytest

from foresteyes.raster import BandStack


def make_stack(bands, pixel_size=30.0, origin=(500000.0, 9000000.0), names=None):
    bands = np.asarray(bands, dtype=np.float32)
    if names is None:
        names = [f"B{i + 1}" for i in range(bands.shape[0])]
    return BandStack(
        bands=bands,
        band_names=names,
        pixel_size=pixel_size,
        origin=origin,
        crs="EPSG:32720",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20250808)


@pytest.fixture
def random_stack(rng):
    """7-band 16x16 stack with independent noise per band."""
    return make_stack(rng.uniform(0.0, 0.6, size=(7, 16, 16)))


@pytest.fixture
def two_region_composite():
    """64x64 3-band composite: dark left half, bright right half."""
    bands = np.zeros((3, 64, 64), dtype=np.float32)
    bands[:, :, 32:] = 200.0
    return make_stack(bands, pixel_size=30.0)


@pytest.fixture
def constant_composite():
    return make_stack(np.full((3, 20, 20), 80.0, dtype=np.float32))
