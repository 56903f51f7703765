"""Part-level occlusion: zero the parts behind the strongest concepts and re-evaluate."""

import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from cav import compute_cav_batch, concept_activations
from dataset import PartFeatureDataset
from head import SparseHead
from mining import ConceptBook
from utils import ValidationError
from xaimetrics import faithfulness

logger = logging.getLogger(__name__)


@dataclass
class OcclusionConfig:
    fractions: List[float] = field(default_factory=lambda: [0.1, 0.2, 0.3])

    def validate(self):
        if any(not 0 <= f <= 1 for f in self.fractions):
            raise ValidationError(f"occlusion fractions must lie in [0, 1], got {self.fractions}")
        if list(self.fractions) != sorted(self.fractions):
            raise ValidationError("occlusion fractions must be sorted ascending")


def parts_to_occlude(n_parts: int, fraction: float) -> int:
    """ceil(fraction * K), at least one part for any positive fraction."""
    if not 0 <= fraction <= 1:
        raise ValidationError(f"fraction must lie in [0, 1], got {fraction}")
    if fraction == 0:
        return 0
    # round first so 0.3 * 10 does not become 4
    return min(n_parts, max(1, math.ceil(round(fraction * n_parts, 9))))


def _occlude(part_features: np.ndarray, gs: np.ndarray, head: SparseHead, book: ConceptBook, fraction: float):
    n, K, _ = part_features.shape
    count = parts_to_occlude(K, fraction)
    occluded = part_features.copy()
    if count == 0:
        return occluded
    cavs = concept_activations(part_features.astype(np.float64), book)
    predicted = head.predict(cavs, gs)
    contributions = cavs * head.W1[:, predicted].T

    parts = book.parts()
    scores = np.full((n, K), -np.inf)
    for part in np.unique(parts):
        scores[:, part] = contributions[:, parts == part].max(axis=1)
    ranked = np.argsort(-scores, axis=1, kind="stable")[:, :count]
    occluded[np.arange(n)[:, None], ranked, :] = 0.0
    return occluded


def occlude_sample(part_features, g, head: SparseHead, book: ConceptBook, fraction: float):
    """Zero the part vectors whose best predicted-class contribution ranks highest.

    Returns
    -------
    (occluded part features [K x d_f], g unchanged)
    """
    part_features = np.asarray(part_features, dtype=np.float32)
    g = np.asarray(g, dtype=np.float32)
    occluded = _occlude(part_features[None], g[None], head, book, fraction)[0]
    return occluded, g.copy()


def occlude_dataset(ds: PartFeatureDataset, head: SparseHead, book: ConceptBook, fraction: float) -> PartFeatureDataset:
    occluded = _occlude(ds.part_features, ds.nonproto_features, head, book, fraction)
    return PartFeatureDataset(occluded, ds.nonproto_features.copy(), ds.labels.copy(), ds.n_classes)


def occlusion_eval(ds: PartFeatureDataset, head: SparseHead, book: ConceptBook, cfg: OcclusionConfig) -> pd.DataFrame:
    """Accuracy and F(3) for the clean data and each occlusion fraction."""
    cfg.validate()
    fractions = list(cfg.fractions)
    if not fractions or fractions[0] != 0:
        fractions = [0.0] + fractions
    rows = []
    for fraction in fractions:
        occluded = occlude_dataset(ds, head, book, fraction)
        cavs, gs = compute_cav_batch(occluded, book)
        accuracy = head.accuracy(cavs, gs, occluded.labels)
        f3 = faithfulness(cavs, gs, occluded.labels, head, book, n_list=[3])[3]
        logger.info("occlusion %.2f: accuracy %.2f, F(3) %.2f", fraction, accuracy, f3)
        rows.append({"fraction": float(fraction), "accuracy": accuracy, "F3": f3})
    return pd.DataFrame(rows, columns=["fraction", "accuracy", "F3"])
