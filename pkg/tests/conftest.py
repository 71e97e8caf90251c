import numpy as np
import pytest

from rem3dr import datagen
from rem3dr.model import ArchSpec, init
from rem3dr.sgm import Batch


TINY_DIMS = (3, 2)


def tiny_arch(seed: int = 0) -> ArchSpec:
    return ArchSpec(modality_dims=TINY_DIMS, encoder_hidden=(4,), embed_dim=3, fusion_hidden=(3,), seed=seed)


def tiny_batch(seed: int = 0, n: int = 4) -> Batch:
    rng = np.random.default_rng(seed)
    feats = [rng.normal(size=(n, d)) for d in TINY_DIMS]
    y = rng.uniform(-18.0, 1.0, size=n)
    return Batch(feats, y, datagen.normalize_targets(y))


@pytest.fixture
def tiny_net():
    return init(tiny_arch())


@pytest.fixture
def batch():
    return tiny_batch()
