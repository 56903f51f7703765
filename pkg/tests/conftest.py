import numpy as np
import pytest

from cav import compute_cav_batch
from dataset import PartFeatureDataset, SyntheticSpec, generate_synthetic
from head import HeadTrainConfig, train_head
from mining import mine_concepts


PLANTED = SyntheticSpec(
    n_classes=5, n_parts=4, feat_dim=32, samples_per_class=40,
    concepts_per_cell=3, noise_sigma=0.02, min_separation=1.0, seed=0,
)


@pytest.fixture(scope="session")
def planted():
    """(dataset, ground truth) with three planted concepts per cell"""
    return generate_synthetic(PLANTED)


@pytest.fixture(scope="session")
def planted_book(planted):
    ds, _ = planted
    return mine_concepts(ds)


@pytest.fixture(scope="session")
def planted_cavs(planted, planted_book):
    ds, _ = planted
    return compute_cav_batch(ds, planted_book)


@pytest.fixture(scope="session")
def planted_head(planted, planted_cavs):
    ds, _ = planted
    cavs, gs = planted_cavs
    return train_head(cavs, gs, ds.labels, HeadTrainConfig(), n_classes=ds.n_classes)


@pytest.fixture
def tiny_dataset():
    """Two classes, two parts, d_f = 3, hand-written values"""
    rng = np.random.default_rng(3)
    part_features = rng.standard_normal((6, 2, 3)).astype(np.float32)
    g = rng.standard_normal((6, 3)).astype(np.float32)
    return PartFeatureDataset(part_features, g, np.array([0, 0, 0, 1, 1, 1]), 2)
