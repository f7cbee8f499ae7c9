import numpy as np
import pytest

from sdpc.image_io import Image

# 512x512 natural images shipped with PyWavelets, ordered from busy to smooth;
# stand-ins for the classic grayscale test set.
NATURAL = ("ascent", "camera", "aero")


@pytest.fixture(scope="session")
def natural_images():
    pywt_data = pytest.importorskip("pywt.data")
    return {name: Image(getattr(pywt_data, name)()) for name in NATURAL}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_image(rng, h, w):
    return Image(rng.integers(0, 256, size=(h, w), dtype=np.uint8))


def smooth_image(rng, h, w):
    """Random image with spatial correlation, closer to natural statistics than white noise."""
    yy, xx = np.mgrid[0:h, 0:w]
    base = 128 + 60 * np.sin(xx / 17.0 + rng.uniform(0, 6)) * np.cos(yy / 23.0 + rng.uniform(0, 6))
    base += rng.normal(0, 6, size=(h, w))
    return Image(np.clip(base, 0, 255).round().astype(np.uint8))
