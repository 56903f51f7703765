"""Per-class concept mining: DBSCAN over part-feature bags, centroid books, Ward merging."""

import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist
from sklearn.cluster import DBSCAN
from sklearn.neighbors import NearestNeighbors

from dataset import PartFeatureDataset
from utils import (
    ConceptMinerError,
    ValidationError,
    load_json,
    pack_artifact_header,
    read_bytes,
    read_f8,
    save_json,
    unpack_artifact_header,
    write_bytes,
)

logger = logging.getLogger(__name__)

NOISE = -1
BOOK_MAGIC = b"PCMB"
MIN_EPS = 1e-8


@dataclass
class DbscanParams:
    eps: float
    min_pts: int

    def __post_init__(self):
        if not self.eps > 0:
            raise ValidationError(f"eps must be positive, got {self.eps}")
        if self.min_pts < 1:
            raise ValidationError(f"min_pts must be >= 1, got {self.min_pts}")


@dataclass
class MiningConfig:
    """Pipeline-level mining settings; unset fields fall back to the per-cell heuristic."""

    eps: Optional[float] = None
    min_pts: Optional[int] = None
    eps_scale: float = 2.0

    def validate(self):
        if self.eps is not None and not self.eps > 0:
            raise ValidationError(f"eps must be positive, got {self.eps}")
        if self.min_pts is not None and self.min_pts < 1:
            raise ValidationError(f"min_pts must be >= 1, got {self.min_pts}")
        if not self.eps_scale > 0:
            raise ValidationError("eps_scale must be positive")

    def params_for(self, points: np.ndarray) -> DbscanParams:
        min_pts = self.min_pts if self.min_pts is not None else default_min_pts(len(points))
        eps = self.eps if self.eps is not None else heuristic_eps(points, min_pts, self.eps_scale)
        return DbscanParams(eps, min_pts)


@dataclass
class ConceptEntry:
    class_id: int
    part: int
    local_id: int
    centroid: np.ndarray
    member_count: int

    def to_dict(self):
        return {
            "class": self.class_id,
            "part": self.part,
            "local_id": self.local_id,
            "member_count": self.member_count,
            "centroid": self.centroid.tolist(),
        }


@dataclass
class ConceptBook:
    feat_dim: int
    entries: List[ConceptEntry] = field(default_factory=list)
    config_hash: str = ""

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            key = (entry.class_id, entry.part, entry.local_id)
            if key in seen:
                raise ValidationError(f"duplicate concept (class, part, local id) {key}")
            seen.add(key)
            entry.centroid = np.asarray(entry.centroid, dtype=np.float64)
            if entry.centroid.shape != (self.feat_dim,):
                raise ValidationError(f"centroid {key} has shape {entry.centroid.shape}, expected ({self.feat_dim},)")
            if entry.member_count < 1:
                raise ValidationError(f"concept {key} has member_count {entry.member_count}")
            if not np.isfinite(entry.centroid).all():
                raise ValidationError(f"concept {key} has a non-finite centroid")

    @property
    def d_c(self) -> int:
        return len(self.entries)

    def centroids(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, self.feat_dim))
        return np.stack([e.centroid for e in self.entries])

    def parts(self) -> np.ndarray:
        return np.array([e.part for e in self.entries], dtype=np.int64)

    def classes(self) -> np.ndarray:
        return np.array([e.class_id for e in self.entries], dtype=np.int64)

    def member_counts(self) -> np.ndarray:
        return np.array([e.member_count for e in self.entries], dtype=np.float64)

    def cell(self, class_id: int, part: int) -> List[int]:
        """Flat indices of the concepts mined for one (class, part) cell."""
        return [i for i, e in enumerate(self.entries) if e.class_id == class_id and e.part == part]

    def same_as(self, other: "ConceptBook") -> bool:
        if self.feat_dim != other.feat_dim or self.d_c != other.d_c:
            return False
        return all(
            (a.class_id, a.part, a.local_id, a.member_count) == (b.class_id, b.part, b.local_id, b.member_count)
            and np.array_equal(a.centroid, b.centroid)
            for a, b in zip(self.entries, other.entries)
        )

    def to_dict(self):
        return {
            "config_hash": self.config_hash,
            "d_f": self.feat_dim,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data) -> "ConceptBook":
        entries = [
            ConceptEntry(
                int(e["class"]), int(e["part"]), int(e["local_id"]),
                np.array(e["centroid"], dtype=np.float64), int(e["member_count"]),
            )
            for e in data["entries"]
        ]
        return cls(int(data["d_f"]), entries, data.get("config_hash", ""))


@dataclass
class MergeConfig:
    threshold_pct: float = 10.0
    level: int = 1

    def validate(self):
        if not 0 <= self.threshold_pct <= 100:
            raise ValidationError(f"threshold_pct must lie in [0, 100], got {self.threshold_pct}")
        if self.level not in (1, 2, 3):
            raise ValidationError(f"level must be 1, 2 or 3, got {self.level}")


def default_min_pts(cell_size: int) -> int:
    return max(3, cell_size // 20)


def heuristic_eps(points: np.ndarray, min_pts: int, scale: float = 2.0) -> float:
    """scale x median distance to the min_pts-th nearest neighbour (self included)."""
    n = len(points)
    if n < 2:
        return 1.0
    k = min(min_pts, n)
    nn = NearestNeighbors(n_neighbors=k).fit(points)
    dist, _ = nn.kneighbors(points)
    return max(scale * float(np.median(dist[:, -1])), MIN_EPS)


def dbscan(points, params: DbscanParams) -> np.ndarray:
    """Density-based clustering; returns cluster ids (NOISE = -1).

    Clusters are numbered by their lowest-index core point: the cluster
    holding the first core point is 0, and so on.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    if points.ndim == 1:
        points = points[:, None]
    fitted = DBSCAN(eps=params.eps, min_samples=params.min_pts, metric="euclidean").fit(points)
    labels = fitted.labels_
    remap: Dict[int, int] = {}
    for core in np.sort(fitted.core_sample_indices_):
        remap.setdefault(int(labels[core]), len(remap))
    out = np.full(len(points), NOISE, dtype=np.int64)
    clustered = labels != NOISE
    out[clustered] = [remap[int(label)] for label in labels[clustered]]
    return out


def _cell_concepts(points: np.ndarray, labels: np.ndarray, class_id: int, part: int) -> List[ConceptEntry]:
    entries = []
    for local_id in range(int(labels.max()) + 1 if (labels >= 0).any() else 0):
        members = points[labels == local_id]
        entries.append(ConceptEntry(class_id, part, local_id, members.mean(axis=0), len(members)))
    if not entries:
        logger.warning("cell (class %d, part %d) is all noise; using the cell mean", class_id, part)
        entries.append(ConceptEntry(class_id, part, 0, points.mean(axis=0), len(points)))
    return entries


def mine_concepts(ds: PartFeatureDataset, params=None) -> ConceptBook:
    """Cluster every (class, part) bag and emit one centroid per cluster.

    `params` may be DbscanParams (used for every cell), a MiningConfig, or
    None for the per-cell heuristic.
    """
    config = params if isinstance(params, MiningConfig) else MiningConfig()
    entries: List[ConceptEntry] = []
    for class_id in range(ds.n_classes):
        members = ds.class_indices(class_id)
        if len(members) == 0:
            raise ConceptMinerError(f"class {class_id} has no samples")
        for part in range(ds.n_parts):
            points = ds.part_features[members, part, :].astype(np.float64)
            cell_params = params if isinstance(params, DbscanParams) else config.params_for(points)
            labels = dbscan(points, cell_params)
            entries.extend(_cell_concepts(points, labels, class_id, part))
    book = ConceptBook(ds.feat_dim, entries)
    logger.info("mined %d concepts over %d classes x %d parts", book.d_c, ds.n_classes, ds.n_parts)
    return book


def assign_to_concepts(ds: PartFeatureDataset, book: ConceptBook) -> np.ndarray:
    """Local id of the nearest centroid in each sample's own (class, part) cell."""
    out = np.empty((ds.n_samples, ds.n_parts), dtype=np.int64)
    centroids = book.centroids()
    for class_id in range(ds.n_classes):
        rows = ds.class_indices(class_id)
        for part in range(ds.n_parts):
            cell = book.cell(class_id, part)
            if not cell:
                raise ValidationError(f"book has no concept for class {class_id}, part {part}")
            dist = np.linalg.norm(
                ds.part_features[rows, part, None, :].astype(np.float64) - centroids[cell][None], axis=-1
            )
            local = np.array([book.entries[i].local_id for i in cell])
            out[rows, part] = local[np.argmin(dist, axis=1)]
    return out


def _ward_labels(points: np.ndarray, cut: float) -> np.ndarray:
    """Flat clusters of a Ward dendrogram over `points` cut at height `cut`."""
    if len(points) < 2:
        return np.ones(len(points), dtype=np.int64)
    return fcluster(linkage(points, method="ward"), t=cut, criterion="distance")


def _scope_key(entry: ConceptEntry, level: int) -> Tuple:
    if level == 1:
        return (entry.class_id, entry.part)
    if level == 2:
        return (entry.class_id,)
    return ()


def _merge_round(book: ConceptBook, groups: List[List[int]], level: int, cut: float) -> List[List[int]]:
    centroids = book.centroids()
    weights = book.member_counts()
    scopes: Dict[Tuple, List[int]] = {}
    for g, members in enumerate(groups):
        scopes.setdefault(_scope_key(book.entries[_lead(members, weights)], level), []).append(g)

    out: List[List[int]] = []
    for key in sorted(scopes):
        inside = scopes[key]
        points = np.stack([_weighted_mean(groups[g], centroids, weights) for g in inside])
        joined: Dict[int, List[int]] = {}
        for g, label in zip(inside, _ward_labels(points, cut)):
            joined.setdefault(int(label), []).extend(groups[g])
        out.extend(sorted(members) for members in joined.values())
    return sorted(out)


def _lead(members: List[int], weights: np.ndarray) -> int:
    # largest member count, lowest index on ties
    return min(members, key=lambda i: (-weights[i], i))


def _weighted_mean(members: List[int], centroids: np.ndarray, weights: np.ndarray) -> np.ndarray:
    w = weights[members].astype(np.float64)
    return (w[:, None] * centroids[members]).sum(axis=0) / w.sum()


def merge_centroids(book: ConceptBook, cfg: MergeConfig) -> ConceptBook:
    """Compress a book by Ward merging inside scopes set by the level.

    Level 1 merges within a (class, part) cell, level 2 within a class and
    level 3 across the whole book. The dendrogram is built on the centroids
    themselves, so two single centroids join at their Euclidean distance; the
    cut height is threshold_pct percent of the largest pairwise centroid
    distance in the book. Merged centroids are member-count weighted means and
    the cut is repeated on them until no pair in a scope lies within it.
    """
    cfg.validate()
    if book.d_c < 2 or cfg.threshold_pct == 0:
        return book
    centroids = book.centroids()
    weights = book.member_counts()
    cut = cfg.threshold_pct / 100.0 * float(pdist(centroids).max())

    groups = [[i] for i in range(book.d_c)]
    while True:
        merged = _merge_round(book, groups, cfg.level, cut)
        if len(merged) == len(groups):
            break
        groups = merged
    if len(groups) == book.d_c:
        return book

    rows = []
    for members in groups:
        lead = book.entries[_lead(members, weights)]
        rows.append((lead.class_id, lead.part, members[0],
                     _weighted_mean(members, centroids, weights), int(weights[members].sum())))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    entries: List[ConceptEntry] = []
    next_local: Dict[Tuple[int, int], int] = {}
    for class_id, part, _, centroid, count in rows:
        local = next_local.get((class_id, part), 0)
        next_local[(class_id, part)] = local + 1
        entries.append(ConceptEntry(class_id, part, local, centroid, count))

    logger.info("merged concepts at level %d, threshold %.1f%%: d_c %d -> %d",
                cfg.level, cfg.threshold_pct, book.d_c, len(entries))
    return ConceptBook(book.feat_dim, entries, book.config_hash)


def save_book(book: ConceptBook, path):
    """Write a book as JSON or, for *.pcmb paths, as PCMB binary"""
    path = str(path)
    if not path.endswith(".pcmb"):
        save_json(book.to_dict(), path)
        return
    chunks = [pack_artifact_header(BOOK_MAGIC, 1, book.config_hash, (book.feat_dim, book.d_c))]
    for e in book.entries:
        chunks.append(struct.pack("<4I", e.class_id, e.part, e.local_id, e.member_count))
        chunks.append(e.centroid.astype("<f8").tobytes())
    write_bytes(path, chunks)


def load_book(path) -> ConceptBook:
    path = str(path)
    if not path.endswith(".pcmb"):
        data = load_json(path)
        if data is None:
            raise ConceptMinerError(f"concept book {path} does not exist")
        return ConceptBook.from_dict(data)
    blob = read_bytes(path)
    _, tag, (d_f, d_c), offset = unpack_artifact_header(blob, BOOK_MAGIC, 2)
    entries = []
    for _ in range(d_c):
        if len(blob) < offset + 16:
            raise ConceptMinerError("truncated concept book")
        class_id, part, local_id, count = struct.unpack_from("<4I", blob, offset)
        centroid, offset = read_f8(blob, offset + 16, d_f)
        entries.append(ConceptEntry(class_id, part, local_id, centroid, count))
    return ConceptBook(d_f, entries, tag)
