"""Concept activation vectors: clamped cosine similarity of part features to every centroid."""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd

from dataset import PartFeatureDataset
from mining import ConceptBook
from utils import ValidationError, unit_rows

logger = logging.getLogger(__name__)


@dataclass
class ConceptActivationVector:
    z: np.ndarray
    g: np.ndarray


def concept_activations(part_features: np.ndarray, book: ConceptBook) -> np.ndarray:
    """[N x K x d_f] features -> [N x d_c] clamped cosine similarities."""
    if part_features.shape[-1] != book.feat_dim:
        raise ValidationError(
            f"feature dimension {part_features.shape[-1]} does not match concept book d_f={book.feat_dim}"
        )
    parts = book.parts()
    if book.d_c and parts.max() >= part_features.shape[1]:
        raise ValidationError(
            f"concept book references part {int(parts.max())} but samples have {part_features.shape[1]} parts"
        )
    features = unit_rows(part_features)
    centroids = unit_rows(book.centroids())
    z = np.zeros((part_features.shape[0], book.d_c))
    for part in np.unique(parts):
        columns = np.flatnonzero(parts == part)
        z[:, columns] = features[:, part, :] @ centroids[columns].T
    return np.clip(z, 0.0, 1.0)


def compute_cav(part_features, g, book: ConceptBook) -> ConceptActivationVector:
    """CAV of one sample ([K x d_f] part features plus its g vector)"""
    part_features = np.asarray(part_features, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if part_features.ndim != 2 or g.shape != (part_features.shape[1],):
        raise ValidationError(f"sample shapes {part_features.shape} / {g.shape} are inconsistent")
    z = concept_activations(part_features[None], book)[0]
    return ConceptActivationVector(z, g.copy())


def compute_cav_batch(ds: PartFeatureDataset, book: ConceptBook) -> Tuple[np.ndarray, np.ndarray]:
    """CAV matrix [n_samples x d_c] and g matrix [n_samples x d_f]"""
    z = concept_activations(ds.part_features.astype(np.float64), book)
    return z, ds.nonproto_features.astype(np.float64)


def cav_table(cavs: np.ndarray, gs: np.ndarray, labels: np.ndarray) -> pd.DataFrame:
    """One row per sample: z_0..z_{d_c-1}, g_0..g_{d_f-1}, label."""
    frame = pd.DataFrame(
        np.concatenate([cavs, gs], axis=1),
        columns=[f"z_{i}" for i in range(cavs.shape[1])] + [f"g_{i}" for i in range(gs.shape[1])],
    )
    frame["label"] = np.asarray(labels, dtype=np.int64)
    return frame
