import numpy as np
import pytest
from hypothesis import settings

from hierrec.data import SynthConfig, generate_synthetic
from hierrec.taxonomy import default_taxonomy

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def taxonomy():
    return default_taxonomy()


@pytest.fixture(scope="session")
def small_ds(taxonomy):
    return generate_synthetic(SynthConfig(n=120, seed=3), taxonomy)


def unit_rows(rng, shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)
