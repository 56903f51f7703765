import itertools

import numpy as np
import pytest

from dataset import PartFeatureDataset, SyntheticSpec, generate_synthetic
from mining import (
    NOISE,
    ConceptBook,
    ConceptEntry,
    DbscanParams,
    MergeConfig,
    MiningConfig,
    assign_to_concepts,
    dbscan,
    default_min_pts,
    load_book,
    merge_centroids,
    mine_concepts,
    save_book,
)
from utils import ValidationError


def reference_dbscan(points, eps, min_pts):
    """Full distance matrix and breadth-first expansion from each unvisited core point"""
    n = len(points)
    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    neighbours = [np.flatnonzero(row <= eps) for row in dist]
    core = [len(nb) >= min_pts for nb in neighbours]
    labels = np.full(n, NOISE)
    cluster = 0
    for seed in range(n):
        if labels[seed] != NOISE or not core[seed]:
            continue
        labels[seed] = cluster
        queue = [seed]
        while queue:
            j = queue.pop(0)
            if not core[j]:
                continue
            for k in neighbours[j]:
                if labels[k] == NOISE:
                    labels[k] = cluster
                    queue.append(k)
        cluster += 1
    return labels


def canonical(labels):
    mapping = {}
    out = []
    for label in labels:
        if label == NOISE:
            out.append(NOISE)
            continue
        mapping.setdefault(label, len(mapping))
        out.append(mapping[label])
    return out


class TestDbscan:
    def test_identical_points_form_one_cluster(self):
        labels = dbscan(np.ones((5, 3)), DbscanParams(eps=0.01, min_pts=1))
        assert labels.tolist() == [0] * 5

    def test_separated_groups(self):
        a = np.array([[0.0, 0.0], [0.05, 0.0], [0.0, 0.05]])
        points = np.concatenate([a, a + 10.0])
        labels = dbscan(points, DbscanParams(eps=0.5, min_pts=2))
        assert labels.tolist() == [0, 0, 0, 1, 1, 1]

    def test_clusters_numbered_by_first_core_point(self):
        # point 0 is a border point of the cluster whose cores come last
        points = np.array([[0.0], [5.0], [5.1], [5.2], [0.4], [0.5], [0.6]])
        labels = dbscan(points, DbscanParams(eps=0.45, min_pts=3))
        assert labels.tolist() == [1, 0, 0, 0, 1, 1, 1]

    def test_empty_input(self):
        assert dbscan(np.zeros((0, 4)), DbscanParams(eps=1.0, min_pts=2)).shape == (0,)

    def test_matches_reference_on_2d_points(self):
        points = np.random.default_rng(0).random((200, 2))
        labels = dbscan(points, DbscanParams(eps=0.15, min_pts=4))
        assert canonical(labels) == canonical(reference_dbscan(points, 0.15, 4))

    def test_matches_reference_on_random_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(1, 201))
            d = int(rng.integers(1, 9))
            points = rng.standard_normal((n, d))
            if n > 1:
                pairwise = np.linalg.norm(points[:, None] - points[None], axis=-1)
                q = float(np.quantile(pairwise[np.triu_indices(n, 1)], rng.uniform(0.02, 0.3)))
                # keep eps off any exact pairwise distance
                eps = q * (1 + 1e-6)
            else:
                eps = 1.0
            eps = max(eps, 1e-6)
            min_pts = int(rng.integers(1, 7))
            labels = dbscan(points, DbscanParams(eps=eps, min_pts=min_pts))
            assert canonical(labels) == canonical(reference_dbscan(points, eps, min_pts))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        points = rng.random((80, 2))
        params = DbscanParams(eps=0.12, min_pts=3)
        base = dbscan(points, params)
        order = rng.permutation(80)
        shuffled = dbscan(points[order], params)
        # same partition of the core points: compare co-membership
        restored = np.empty_like(shuffled)
        restored[order] = shuffled
        same_base = base[:, None] == base[None, :]
        same_shuffled = restored[:, None] == restored[None, :]
        core = (np.linalg.norm(points[:, None] - points[None], axis=-1) <= 0.12).sum(axis=1) >= 3
        assert np.array_equal(same_base[np.ix_(core, core)], same_shuffled[np.ix_(core, core)])
        assert np.array_equal(base == NOISE, restored == NOISE)

    def test_invalid_params(self):
        with pytest.raises(ValidationError):
            DbscanParams(eps=0.0, min_pts=3)
        with pytest.raises(ValidationError):
            DbscanParams(eps=0.1, min_pts=0)


def test_default_min_pts():
    assert default_min_pts(10) == 3
    assert default_min_pts(200) == 10


class TestMineConcepts:
    def test_recovers_two_planted_concepts(self):
        spec = SyntheticSpec(n_classes=3, n_parts=2, feat_dim=16, samples_per_class=30,
                             concepts_per_cell=2, noise_sigma=0.01, seed=6)
        ds, truth = generate_synthetic(spec)
        book = mine_concepts(ds, DbscanParams(eps=0.1, min_pts=3))
        for j, p in itertools.product(range(3), range(2)):
            cell = book.cell(j, p)
            assert len(cell) == 2
            centroids = book.centroids()[cell]
            planted = truth.planted_means[j, p]
            errors = np.linalg.norm(centroids[:, None] - planted[None], axis=-1)
            matched = errors.argmin(axis=1)
            assert sorted(matched.tolist()) == [0, 1]
            assert errors.min(axis=1).max() <= 0.05

    def test_heuristic_recovery_and_purity(self, planted, planted_book):
        ds, truth = planted
        assigned = assign_to_concepts(ds, planted_book)
        agree = 0
        for j, p in itertools.product(range(ds.n_classes), range(ds.n_parts)):
            cell = planted_book.cell(j, p)
            assert len(cell) == 3
            centroids = planted_book.centroids()[cell]
            errors = np.linalg.norm(centroids[:, None] - truth.planted_means[j, p][None], axis=-1)
            assert errors.min(axis=1).max() <= 0.05
            to_planted = errors.argmin(axis=1)
            rows = ds.class_indices(j)
            local_ids = [planted_book.entries[i].local_id for i in cell]
            lookup = dict(zip(local_ids, to_planted))
            predicted = np.array([lookup[a] for a in assigned[rows, p]])
            agree += int(np.sum(predicted == truth.assignment[rows, p]))
        assert agree / (ds.n_samples * ds.n_parts) >= 0.99

    def test_all_noise_cell_falls_back_to_mean(self):
        points = np.arange(4, dtype=np.float32)[:, None, None] * 10.0 * np.ones((1, 1, 2), dtype=np.float32)
        ds = PartFeatureDataset(points, np.zeros((4, 2)), np.zeros(4, dtype=int), 1)
        book = mine_concepts(ds, DbscanParams(eps=0.1, min_pts=2))
        assert book.d_c == 1
        assert np.allclose(book.entries[0].centroid, points[:, 0].mean(axis=0))
        assert book.entries[0].member_count == 4

    def test_single_planted_concept(self):
        spec = SyntheticSpec(n_classes=1, n_parts=1, feat_dim=8, samples_per_class=20,
                             concepts_per_cell=1, noise_sigma=0.01, seed=0)
        ds, _ = generate_synthetic(spec)
        assert mine_concepts(ds).d_c == 1

    def test_member_counts_bounded_by_cell(self, planted, planted_book):
        ds, _ = planted
        for j, p in itertools.product(range(ds.n_classes), range(ds.n_parts)):
            total = planted_book.member_counts()[planted_book.cell(j, p)].sum()
            assert total <= len(ds.class_indices(j))

    def test_entries_ordered_by_cell(self, planted_book):
        keys = [(e.class_id, e.part, e.local_id) for e in planted_book.entries]
        assert keys == sorted(keys)

    def test_mining_config_overrides(self, planted):
        ds, _ = planted
        explicit = mine_concepts(ds, MiningConfig(eps=0.3, min_pts=3))
        assert explicit.d_c == ds.n_classes * ds.n_parts * 3


def _hand_book(low=1, high=3):
    top = np.sqrt(1.0 - 0.05 ** 2)
    return ConceptBook(2, [
        ConceptEntry(0, 0, 0, np.array([0.0, 0.0]), low),
        ConceptEntry(0, 0, 1, np.array([0.1, 0.0]), high),
        ConceptEntry(0, 1, 0, np.array([0.05, top]), 1),
    ])


class TestMergeCentroids:
    def test_zero_threshold_is_identity(self, planted_book):
        for level in (1, 2, 3):
            assert merge_centroids(planted_book, MergeConfig(threshold_pct=0, level=level)).same_as(planted_book)

    def test_hand_ward_merge(self):
        merged = merge_centroids(_hand_book(), MergeConfig(threshold_pct=20, level=1))
        assert merged.d_c == 2
        first = merged.entries[0]
        assert (first.class_id, first.part, first.local_id, first.member_count) == (0, 0, 0, 4)
        assert np.allclose(first.centroid, [0.075, 0.0])

    @pytest.mark.parametrize("low, high", [(5, 5), (20, 20), (13, 14), (1, 40)])
    def test_member_counts_only_weight_the_mean(self, low, high):
        merged = merge_centroids(_hand_book(low, high), MergeConfig(threshold_pct=20, level=1))
        assert merged.d_c == 2
        assert merged.entries[0].member_count == low + high
        assert np.allclose(merged.entries[0].centroid, [0.1 * high / (low + high), 0.0])

    def test_cut_below_distance_keeps_both(self):
        assert merge_centroids(_hand_book(), MergeConfig(threshold_pct=9, level=1)).d_c == 3

    def test_level_two_reaches_across_parts(self):
        book = ConceptBook(2, [
            ConceptEntry(0, 0, 0, np.array([0.0, 0.0]), 4),
            ConceptEntry(0, 1, 0, np.array([0.1, 0.0]), 2),
            ConceptEntry(1, 0, 0, np.array([1.0, 0.0]), 1),
        ])
        assert merge_centroids(book, MergeConfig(threshold_pct=20, level=1)).d_c == 3
        merged = merge_centroids(book, MergeConfig(threshold_pct=20, level=2))
        assert merged.d_c == 2
        # the larger contributor decides the cell
        assert (merged.entries[0].class_id, merged.entries[0].part) == (0, 0)

    def test_single_entry_unchanged(self):
        book = ConceptBook(2, [ConceptEntry(1, 0, 0, np.array([1.0, 2.0]), 5)])
        assert merge_centroids(book, MergeConfig(threshold_pct=100, level=3)).same_as(book)

    def test_mined_book_actually_merges(self, planted_book):
        merged = merge_centroids(planted_book, MergeConfig(threshold_pct=80, level=3))
        assert merged.d_c < planted_book.d_c
        assert merged.member_counts().sum() == planted_book.member_counts().sum()

    def test_monotone_in_threshold(self, planted_book):
        for level in (1, 2, 3):
            series = [merge_centroids(planted_book, MergeConfig(threshold_pct=pct, level=level)).d_c
                      for pct in (0, 5, 10, 30, 60, 80, 100)]
            assert series == sorted(series, reverse=True)

    def test_monotone_in_level(self, planted_book):
        for pct in (0, 5, 10, 60):
            series = [merge_centroids(planted_book, MergeConfig(threshold_pct=pct, level=level)).d_c
                      for level in (1, 2, 3)]
            assert series == sorted(series, reverse=True)

    @pytest.mark.parametrize("level", [1, 2, 3])
    def test_idempotent(self, planted_book, level):
        cfg = MergeConfig(threshold_pct=80, level=level)
        once = merge_centroids(planted_book, cfg)
        assert merge_centroids(once, cfg).same_as(once)

    def test_invalid_config(self, planted_book):
        with pytest.raises(ValidationError):
            merge_centroids(planted_book, MergeConfig(threshold_pct=120))
        with pytest.raises(ValidationError):
            merge_centroids(planted_book, MergeConfig(level=4))


class TestConceptBook:
    def test_duplicate_triple_rejected(self):
        with pytest.raises(ValidationError):
            ConceptBook(2, [
                ConceptEntry(0, 0, 0, np.zeros(2), 1),
                ConceptEntry(0, 0, 0, np.ones(2), 1),
            ])

    @pytest.mark.parametrize("name", ["book.json", "book.pcmb"])
    def test_round_trip(self, tmp_path, planted_book, name):
        book = ConceptBook(planted_book.feat_dim, planted_book.entries, "0123456789abcdef")
        save_book(book, tmp_path / name)
        loaded = load_book(tmp_path / name)
        assert loaded.same_as(book)
        assert loaded.config_hash == "0123456789abcdef"
