import numpy as np
import pytest

from cav import compute_cav_batch
from dataset import SyntheticSpec, generate_synthetic
from head import HeadTrainConfig, train_head
from mining import mine_concepts
from occlusion import OcclusionConfig, occlude_dataset, occlude_sample, occlusion_eval, parts_to_occlude
from utils import ValidationError
from xaimetrics import faithfulness


def concept_only_setup(n_parts, seed=0):
    """Planted data with uninformative g, and a head evaluated on its W1 block only"""
    spec = SyntheticSpec(n_classes=5, n_parts=n_parts, feat_dim=32, samples_per_class=40,
                         concepts_per_cell=2, noise_sigma=0.02, g_noise_sigma=2.0, seed=seed)
    ds, _ = generate_synthetic(spec)
    book = mine_concepts(ds)
    cavs, gs = compute_cav_batch(ds, book)
    head = train_head(cavs, gs, ds.labels, HeadTrainConfig(seed=seed), n_classes=ds.n_classes)
    return ds, book, head.masked("prototypical")


@pytest.mark.parametrize("n_parts, fraction, expected", [
    (8, 0.3, 3),
    (1, 0.1, 1),
    (10, 0.3, 3),
    (4, 0.0, 0),
    (4, 1.0, 4),
    (4, 0.5, 2),
])
def test_parts_to_occlude(n_parts, fraction, expected):
    assert parts_to_occlude(n_parts, fraction) == expected


def test_fraction_out_of_range():
    with pytest.raises(ValidationError):
        parts_to_occlude(4, 1.5)


def test_zero_fraction_is_identity(planted, planted_book, planted_head):
    ds, _ = planted
    occluded, g = occlude_sample(ds.part_features[0], ds.nonproto_features[0], planted_head, planted_book, 0.0)
    assert np.array_equal(occluded, ds.part_features[0])
    assert np.array_equal(g, ds.nonproto_features[0])


def test_exact_number_of_parts_zeroed():
    ds, book, head = concept_only_setup(8)
    occluded = occlude_dataset(ds, head, book, 0.3)
    zeroed = np.all(occluded.part_features == 0, axis=-1).sum(axis=1)
    assert np.all(zeroed == 3)
    assert np.array_equal(occluded.nonproto_features, ds.nonproto_features)


def test_zeroed_part_carries_the_top_concept(planted, planted_book, planted_head):
    ds, _ = planted
    sample, g = ds.part_features[7], ds.nonproto_features[7]
    occluded, _ = occlude_sample(sample, g, planted_head, planted_book, 0.25)
    cavs, gs = compute_cav_batch(ds.subset([7]), planted_book)
    predicted = planted_head.predict(cavs, gs)[0]
    top = int(np.argmax(cavs[0] * planted_head.W1[:, predicted]))
    assert np.all(occluded[planted_book.entries[top].part] == 0)


def test_zero_only_curve_equals_clean_evaluation(planted, planted_book, planted_head, planted_cavs):
    ds, _ = planted
    cavs, gs = planted_cavs
    curve = occlusion_eval(ds, planted_head, planted_book, OcclusionConfig(fractions=[0.0]))
    assert len(curve) == 1
    assert curve.loc[0, "accuracy"] == pytest.approx(planted_head.accuracy(cavs, gs, ds.labels))
    assert curve.loc[0, "F3"] == pytest.approx(faithfulness(cavs, gs, ds.labels, planted_head, planted_book, [3])[3])


def test_curve_includes_baseline(planted, planted_book, planted_head):
    ds, _ = planted
    curve = occlusion_eval(ds, planted_head, planted_book, OcclusionConfig())
    assert curve["fraction"].tolist() == [0.0, 0.1, 0.2, 0.3]
    assert list(curve.columns) == ["fraction", "accuracy", "F3"]


def test_accuracy_non_increasing_over_seeds():
    monotone = 0
    for seed in range(10):
        ds, book, head = concept_only_setup(4, seed=seed)
        accuracy = occlusion_eval(ds, head, book, OcclusionConfig(fractions=[0.1, 0.2, 0.3]))["accuracy"].tolist()
        monotone += all(b <= a for a, b in zip(accuracy, accuracy[1:]))
    assert monotone >= 9


def test_many_parts_degrade_more_gradually():
    drops = {}
    for n_parts in (8, 1):
        ds, book, head = concept_only_setup(n_parts)
        curve = occlusion_eval(ds, head, book, OcclusionConfig(fractions=[0.3]))
        drops[n_parts] = curve.loc[0, "accuracy"] - curve.loc[1, "accuracy"]
    assert drops[8] < drops[1]


def test_unsorted_fractions_rejected(planted, planted_book, planted_head):
    ds, _ = planted
    with pytest.raises(ValidationError):
        occlusion_eval(ds, planted_head, planted_book, OcclusionConfig(fractions=[0.3, 0.1]))
