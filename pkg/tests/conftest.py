import numpy as np
import pytest
from hypothesis import settings

from dexp.embedders import PatchMeanEmbedder

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


def make_planted(rng, dims=(16, 16), grid=(2, 2)):
    """One planted-feature instance.

    The image is blockwise constant over a (grid_h, grid_w) patch layout
    with one clearly brightest patch. The returned reference image keeps
    only that patch (rest zero), so its patch-mean embedding points at
    the planted patch alone and the ideal attribution is fully known.

    Returns (image, reference_image, planted_patch_coords, patch_dims).
    """
    grid_h, grid_w = grid
    patch_h, patch_w = dims[0] // grid_h, dims[1] // grid_w
    values = rng.uniform(10.0, 120.0, size=(grid_h, grid_w))
    planted = (int(rng.integers(grid_h)), int(rng.integers(grid_w)))
    values[planted] = rng.uniform(200.0, 250.0)

    image = np.kron(values, np.ones((patch_h, patch_w)))[:, :, None]
    reference_image = np.zeros_like(image)
    rows = slice(planted[0] * patch_h, (planted[0] + 1) * patch_h)
    cols = slice(planted[1] * patch_w, (planted[1] + 1) * patch_w)
    reference_image[rows, cols, 0] = values[planted]
    return image, reference_image, planted, (patch_h, patch_w)


@pytest.fixture
def rng():
    return np.random.default_rng(20260817)


@pytest.fixture
def patch_embedder():
    return PatchMeanEmbedder(grid=(2, 2))


@pytest.fixture
def planted(rng):
    return make_planted(rng)
