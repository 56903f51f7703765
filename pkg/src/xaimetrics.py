"""Explainability metrics: faithfulness, stability, consistency, sparseness."""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from scipy.special import softmax

from dataset import PartFeatureDataset, split_kfold
from head import SparseHead
from mining import ConceptBook, mine_concepts
from utils import ValidationError, calculate_percentage, unit_rows

logger = logging.getLogger(__name__)

UNMATCHED_COST = 1.0


@dataclass
class MetricReport:
    faithfulness: Dict[int, float]
    consistency_intra: float
    consistency_inter: float
    sparseness: float
    stability: Optional[float] = None
    confidence_drop: Dict[int, float] = field(default_factory=dict)
    faithfulness_by_block: Dict[str, Dict[int, float]] = field(default_factory=dict)
    accuracy: Dict[str, float] = field(default_factory=dict)
    d_c: int = 0
    mcc_loss: Optional[float] = None
    mining_passes: int = 0
    config: Dict[str, Any] = field(default_factory=dict)
    config_hash: str = ""
    seed: int = 0

    def to_dict(self):
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "d_c": self.d_c,
            "accuracy": self.accuracy,
            "faithfulness": {str(n): v for n, v in self.faithfulness.items()},
            "confidence_drop": {str(n): v for n, v in self.confidence_drop.items()},
            "faithfulness_by_block": {
                block: {str(n): v for n, v in values.items()} for block, values in self.faithfulness_by_block.items()
            },
            "stability": self.stability,
            "consistency_intra": self.consistency_intra,
            "consistency_inter": self.consistency_inter,
            "sparseness": self.sparseness,
            "mcc_loss": self.mcc_loss,
            "mining_passes": self.mining_passes,
            "config": self.config,
        }

    def to_row(self) -> pd.DataFrame:
        """Single CSV row keyed by config hash, shaped like a results table."""
        row: Dict[str, Any] = {"config_hash": self.config_hash, "seed": self.seed, "d_c": self.d_c}
        for block, value in self.accuracy.items():
            row[f"acc_{block}"] = value
        for n, value in self.faithfulness.items():
            row[f"F{n}"] = value
        row["stability"] = self.stability
        row["consistency_intra"] = self.consistency_intra
        row["consistency_inter"] = self.consistency_inter
        row["sparseness"] = self.sparseness
        return pd.DataFrame([row])


REPORT_REQUIRED = {
    "config_hash": str,
    "seed": int,
    "d_c": int,
    "accuracy": dict,
    "faithfulness": dict,
    "confidence_drop": dict,
    "consistency_intra": float,
    "consistency_inter": float,
    "sparseness": float,
    "config": dict,
}


def validate_report_dict(data: Dict[str, Any]) -> List[str]:
    """Schema check for a serialized MetricReport; returns a list of problems."""
    problems = []
    for key, kind in REPORT_REQUIRED.items():
        if key not in data:
            problems.append(f"missing {key}")
        elif kind is float and not isinstance(data[key], (int, float)):
            problems.append(f"{key} must be a number")
        elif kind is not float and not isinstance(data[key], kind):
            problems.append(f"{key} must be {kind.__name__}")
    for n, value in data.get("faithfulness", {}).items():
        if not n.isdigit() or not isinstance(value, (int, float)) or not np.isfinite(value):
            problems.append(f"faithfulness[{n}] is not a finite number")
    stab = data.get("stability")
    if stab is not None and not 0 <= stab <= 100:
        problems.append("stability outside [0, 100]")
    if "sparseness" in data and isinstance(data["sparseness"], (int, float)) and not 0 <= data["sparseness"] <= 100:
        problems.append("sparseness outside [0, 100]")
    return problems


def hungarian(cost) -> np.ndarray:
    """Minimum-cost assignment of a square matrix; perm[i] is the column of row i.

    Among optimal assignments the lexicographically smallest permutation is
    returned: rows are fixed in order to the lowest column that still admits
    an optimal completion.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValidationError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValidationError("cost matrix contains non-finite entries")
    m = cost.shape[0]
    if m == 0:
        return np.zeros(0, dtype=np.int64)

    def optimum(sub: np.ndarray) -> float:
        if sub.size == 0:
            return 0.0
        rows, cols = linear_sum_assignment(sub)
        return float(sub[rows, cols].sum())

    best = optimum(cost)
    tol = 1e-9 * max(1.0, float(np.abs(cost).max()) * m)
    perm = np.empty(m, dtype=np.int64)
    free = list(range(m))
    for row in range(m):
        rest_rows = list(range(row + 1, m))
        for col in free:
            others = [c for c in free if c != col]
            total = cost[row, col] + optimum(cost[np.ix_(rest_rows, others)])
            if total <= best + tol:
                perm[row] = col
                best -= cost[row, col]
                free = others
                break
        else:
            # rounding pushed every candidate past the tolerance; keep the solver's completion
            rows, cols = linear_sum_assignment(cost[np.ix_(list(range(row, m)), free)])
            perm[row:] = np.array(free)[cols[np.argsort(rows)]]
            break
    return perm


def _contribution_order(cavs: np.ndarray, head: SparseHead, predicted: np.ndarray) -> np.ndarray:
    contributions = cavs * head.W1[:, predicted].T
    return np.argsort(-contributions, axis=1, kind="stable")


def _delete_top(cavs: np.ndarray, order: np.ndarray, n: int) -> np.ndarray:
    perturbed = cavs.copy()
    if n > 0:
        np.put_along_axis(perturbed, order[:, :n], 0.0, axis=1)
    return perturbed


def _clamp_counts(n_list: Iterable[int], d_c: int) -> List[int]:
    counts = []
    for n in n_list:
        if n < 0:
            raise ValidationError(f"deletion count must be non-negative, got {n}")
        if n > d_c:
            logger.warning("deletion count %d exceeds d_c=%d; clamping", n, d_c)
        counts.append(int(n))
    return counts


def faithfulness(cavs, gs, labels, head: SparseHead, book: Optional[ConceptBook] = None,
                 n_list: Iterable[int] = (1, 2, 3, 4, 5)) -> Dict[int, float]:
    """Accuracy drop (percentage points) after zeroing each sample's top-n concepts.

    Concepts are ranked per sample by z_k * W1[k, predicted class].
    """
    cavs = np.asarray(cavs, dtype=np.float64)
    gs = np.asarray(gs, dtype=np.float64)
    labels = np.asarray(labels)
    if book is not None and book.d_c != head.d_c:
        raise ValidationError(f"concept book d_c={book.d_c} does not match head d_c={head.d_c}")
    d_c = cavs.shape[1]
    predicted = head.predict(cavs, gs)
    baseline = calculate_percentage(np.sum(predicted == labels), len(labels))
    order = _contribution_order(cavs, head, predicted)
    drops = {}
    for n in _clamp_counts(n_list, d_c):
        k = min(n, d_c)
        if k == 0:
            drops[n] = 0.0
            continue
        perturbed = head.predict(_delete_top(cavs, order, k), gs)
        drops[n] = baseline - calculate_percentage(np.sum(perturbed == labels), len(labels))
    return drops


def confidence_drop(cavs, gs, head: SparseHead, n_list: Iterable[int] = (1, 2, 3, 4, 5)) -> Dict[int, float]:
    """Mean drop (percentage points) of the clean prediction's softmax probability."""
    cavs = np.asarray(cavs, dtype=np.float64)
    gs = np.asarray(gs, dtype=np.float64)
    d_c = cavs.shape[1]
    logits = head.logits(cavs, gs)
    predicted = np.argmax(logits, axis=1)
    rows = np.arange(len(cavs))
    clean = softmax(logits, axis=1)[rows, predicted]
    order = _contribution_order(cavs, head, predicted)
    drops = {}
    for n in _clamp_counts(n_list, d_c):
        k = min(n, d_c)
        perturbed = softmax(head.logits(_delete_top(cavs, order, k), gs), axis=1)[rows, predicted]
        drops[n] = float(np.mean(clean - perturbed) * 100.0)
    return drops


def _cell_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Mean Hungarian-matched cosine between two centroid sets, padding with zero similarity."""
    m = max(len(a), len(b))
    similarity = np.zeros((m, m))
    similarity[: len(a), : len(b)] = np.clip(unit_rows(a) @ unit_rows(b).T, 0.0, 1.0)
    cost = 1.0 - similarity
    cost[len(a):, :] = UNMATCHED_COST
    cost[:, len(b):] = UNMATCHED_COST
    perm = hungarian(cost)
    return float(similarity[np.arange(m), perm].mean())


def stability(ds: PartFeatureDataset, k: int = 10, params=None, seed: int = 0) -> float:
    """Agreement of concept books mined on different folds, in [0, 100].

    For every fold pair and (class, part) cell, centroids are aligned by the
    Hungarian solver on 1 - cosine; unmatched concepts score 0.
    """
    folds = split_kfold(ds, k, seed)
    books = [mine_concepts(ds.subset(fold), params) for fold in folds]
    cells = [
        {(j, p): book.centroids()[book.cell(j, p)] for j in range(ds.n_classes) for p in range(ds.n_parts)}
        for book in books
    ]
    scores = []
    for f in range(k):
        for h in range(f + 1, k):
            for key in sorted(cells[f]):
                scores.append(_cell_similarity(cells[f][key], cells[h][key]))
    value = float(np.mean(scores) * 100.0)
    logger.info("stability over %d folds: %.2f", k, value)
    return value


def consistency(cavs, labels):
    """Mean pairwise CAV cosine within classes and across classes, times 100.

    Returns
    -------
    (intra, inter)
    """
    cavs = np.asarray(cavs, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValidationError("consistency needs at least two classes")
    cos = unit_rows(cavs) @ unit_rows(cavs).T

    per_class = []
    for label in classes:
        rows = np.flatnonzero(labels == label)
        if len(rows) < 2:
            continue
        block = cos[np.ix_(rows, rows)]
        per_class.append((block.sum() - np.trace(block)) / (len(rows) * (len(rows) - 1)))
    if not per_class:
        raise ValidationError("intra-class consistency undefined: every class has a single sample")
    across = labels[:, None] != labels[None, :]
    intra = float(np.mean(per_class) * 100.0)
    inter = float(cos[across].mean() * 100.0)
    return intra, inter


def sparseness(cavs) -> float:
    """Mean Hoyer sparseness of the CAV rows, times 100; all-zero rows score 100."""
    cavs = np.asarray(cavs, dtype=np.float64)
    d_c = cavs.shape[1]
    if d_c < 2:
        raise ValidationError(f"sparseness needs d_c >= 2, got {d_c}")
    l1 = np.abs(cavs).sum(axis=1)
    l2 = np.linalg.norm(cavs, axis=1)
    root = np.sqrt(d_c)
    ratio = np.divide(l1, l2, out=np.ones_like(l1), where=l2 > 0)
    hoyer = np.clip((root - ratio) / (root - 1), 0.0, 1.0)
    return float(hoyer.mean() * 100.0)
