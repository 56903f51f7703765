"""Part-feature datasets: validation, PFD/CSV I/O, planted synthetic data, k-fold splits."""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from utils import ConceptMinerError, ValidationError

logger = logging.getLogger(__name__)

PFD_MAGIC = b"PCMF"
PFD_VERSION = 1
PFD_HEADER = struct.Struct("<4sIIIII")
MAX_PLACEMENT_ATTEMPTS = 10_000


class DatasetFormatError(ConceptMinerError):
    """Raised when a dataset file does not parse under its declared format."""


class GenerationError(ConceptMinerError):
    """Raised when planted concept means cannot be placed."""


class StratificationError(ValidationError):
    """Raised when a class is too small for the requested number of folds."""


@dataclass
class PartFeatureDataset:
    part_features: np.ndarray
    nonproto_features: np.ndarray
    labels: np.ndarray
    n_classes: int
    # subsets may leave classes out; loaded and generated datasets may not
    require_all_classes: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        self.part_features = np.asarray(self.part_features, dtype=np.float32)
        self.nonproto_features = np.asarray(self.nonproto_features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.n_classes = int(self.n_classes)
        self.validate()

    @property
    def n_samples(self) -> int:
        return self.part_features.shape[0]

    @property
    def n_parts(self) -> int:
        return self.part_features.shape[1]

    @property
    def feat_dim(self) -> int:
        return self.part_features.shape[2]

    def validate(self):
        if self.part_features.ndim != 3:
            raise ValidationError(f"part_features must be 3-D, got shape {self.part_features.shape}")
        n, _, d = self.part_features.shape
        if self.nonproto_features.shape != (n, d):
            raise ValidationError(
                f"nonproto_features shape {self.nonproto_features.shape} does not match ({n}, {d})"
            )
        if self.labels.shape != (n,):
            raise ValidationError(f"labels shape {self.labels.shape} does not match ({n},)")
        if self.n_classes < 1:
            raise ValidationError("n_classes must be >= 1")

        finite = np.isfinite(self.part_features).all(axis=(1, 2)) & np.isfinite(self.nonproto_features).all(axis=1)
        if not finite.all():
            bad = int(np.flatnonzero(~finite)[0])
            raise ValidationError(f"non-finite feature value in sample {bad}")

        out_of_range = (self.labels < 0) | (self.labels >= self.n_classes)
        if out_of_range.any():
            row = int(np.flatnonzero(out_of_range)[0])
            raise ValidationError(
                f"label {int(self.labels[row])} in row {row} outside [0, {self.n_classes})"
            )
        counts = np.bincount(self.labels, minlength=self.n_classes)
        if self.require_all_classes and (counts == 0).any():
            missing = int(np.flatnonzero(counts == 0)[0])
            raise ValidationError(f"class {missing} has no samples")

    def subset(self, indices) -> "PartFeatureDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return PartFeatureDataset(
            self.part_features[indices],
            self.nonproto_features[indices],
            self.labels[indices],
            self.n_classes,
            require_all_classes=False,
        )

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


@dataclass
class SyntheticSpec:
    n_classes: int = 5
    n_parts: int = 4
    feat_dim: int = 32
    samples_per_class: int = 40
    concepts_per_cell: int = 2
    noise_sigma: float = 0.02
    min_separation: float = 1.0
    seed: int = 0
    g_noise_sigma: Optional[float] = None

    def validate(self):
        for name in ("n_classes", "n_parts", "feat_dim", "samples_per_class", "concepts_per_cell"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.noise_sigma < 0 or (self.g_noise_sigma is not None and self.g_noise_sigma < 0):
            raise ValidationError("noise levels must be non-negative")
        if self.min_separation < 0:
            raise ValidationError("min_separation must be non-negative")
        if self.min_separation <= 2 * self.noise_sigma:
            logger.warning(
                "min_separation %.3g <= 2*noise_sigma; planted concepts may not be recoverable",
                self.min_separation,
            )


@dataclass
class GroundTruth:
    planted_means: np.ndarray  # [L, K, G, d_f]
    assignment: np.ndarray  # [n_samples, K]
    class_means: np.ndarray  # [L, d_f], the per-class g means

    def to_dict(self):
        return {
            "planted_means": self.planted_means.tolist(),
            "assignment": self.assignment.tolist(),
            "class_means": self.class_means.tolist(),
        }


def _unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    while norm == 0:
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
    return v / norm


def _place_means(rng: np.random.Generator, count: int, dim: int, min_separation: float) -> np.ndarray:
    placed: List[np.ndarray] = []
    for _ in range(count):
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            candidate = _unit_vector(rng, dim)
            if all(np.linalg.norm(candidate - m) >= min_separation for m in placed):
                placed.append(candidate)
                break
        else:
            raise GenerationError(
                f"could not place {count} means at separation {min_separation} in {dim} dimensions "
                f"after {MAX_PLACEMENT_ATTEMPTS} attempts; use fewer concepts per cell or a smaller separation"
            )
    return np.stack(placed)


def generate_synthetic(spec: SyntheticSpec) -> Tuple[PartFeatureDataset, GroundTruth]:
    """Generate a dataset with planted concepts on the unit sphere.

    Samples are ordered class-major. Concept choices are balanced inside each
    (class, part) cell so every planted concept receives samples.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    L, K, D, G = spec.n_classes, spec.n_parts, spec.feat_dim, spec.concepts_per_cell
    n_per = spec.samples_per_class
    g_sigma = spec.noise_sigma if spec.g_noise_sigma is None else spec.g_noise_sigma

    means = np.empty((L, K, G, D))
    for j in range(L):
        for p in range(K):
            means[j, p] = _place_means(rng, G, D, spec.min_separation)
    class_means = np.stack([_unit_vector(rng, D) for _ in range(L)])
    means32 = means.astype(np.float32)
    class_means32 = class_means.astype(np.float32)

    labels = np.repeat(np.arange(L), n_per)
    assignment = np.empty((L * n_per, K), dtype=np.int64)
    for j in range(L):
        rows = slice(j * n_per, (j + 1) * n_per)
        for p in range(K):
            assignment[rows, p] = rng.permutation(np.arange(n_per) % G)

    chosen = means32[labels[:, None], np.arange(K)[None, :], assignment].astype(np.float64)
    noise = rng.standard_normal(chosen.shape) * spec.noise_sigma
    part_features = (chosen + noise).astype(np.float32)
    g_noise = rng.standard_normal((L * n_per, D)) * g_sigma
    g = (class_means32[labels].astype(np.float64) + g_noise).astype(np.float32)

    logger.info("generated %d samples (L=%d, K=%d, G=%d, d_f=%d)", L * n_per, L, K, G, D)
    ds = PartFeatureDataset(part_features, g, labels, L)
    return ds, GroundTruth(means32, assignment, class_means32)


def save_dataset(ds: PartFeatureDataset, path, format: str = "binary-pfd"):
    """Write a dataset as PFD binary or CSV"""
    ds.validate()
    path = Path(path)
    try:
        if format == "csv":
            _frame_from_dataset(ds).to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
            return
        if format not in ("binary-pfd", "pfd"):
            raise ValidationError(f"unknown dataset format {format!r}")
        header = PFD_HEADER.pack(PFD_MAGIC, PFD_VERSION, ds.n_samples, ds.n_parts, ds.n_classes, ds.feat_dim)
        slots = np.concatenate([ds.part_features, ds.nonproto_features[:, None, :]], axis=1)
        with path.open("wb") as f:
            f.write(header)
            f.write(slots.astype("<f4").tobytes())
            f.write(ds.labels.astype("<u4").tobytes())
    except OSError as e:
        raise ConceptMinerError(f"cannot write dataset to {path}: {e}") from e


def load_dataset(path, format: Optional[str] = None, n_classes: Optional[int] = None) -> PartFeatureDataset:
    """Read a dataset; format defaults to CSV for *.csv paths and PFD otherwise"""
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "binary-pfd"
    if not path.exists():
        raise ConceptMinerError(f"dataset file {path} does not exist")
    if format == "csv":
        return _load_csv(path, n_classes)
    if format not in ("binary-pfd", "pfd"):
        raise ValidationError(f"unknown dataset format {format!r}")
    return _load_pfd(path.read_bytes())


def _load_pfd(blob: bytes) -> PartFeatureDataset:
    if len(blob) < PFD_HEADER.size:
        raise DatasetFormatError(f"file too short for PFD header ({len(blob)} bytes)")
    magic, version, n, k, n_classes, d = PFD_HEADER.unpack_from(blob, 0)
    if magic != PFD_MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}, expected {PFD_MAGIC!r}")
    if version != PFD_VERSION:
        raise DatasetFormatError(f"unsupported PFD version {version}")
    n_floats = n * (k + 1) * d
    expected = PFD_HEADER.size + 4 * n_floats + 4 * n
    if len(blob) != expected:
        raise DatasetFormatError(f"payload size {len(blob)} does not match header (expected {expected})")
    slots = np.frombuffer(blob, dtype="<f4", count=n_floats, offset=PFD_HEADER.size).reshape(n, k + 1, d)
    labels = np.frombuffer(blob, dtype="<u4", count=n, offset=PFD_HEADER.size + 4 * n_floats)
    return PartFeatureDataset(slots[:, :k, :].copy(), slots[:, k, :].copy(), labels.astype(np.int64), n_classes)


def _feature_columns(n_parts: int, feat_dim: int) -> List[str]:
    cols = [f"part{p}_{i}" for p in range(n_parts) for i in range(feat_dim)]
    return cols + [f"g_{i}" for i in range(feat_dim)]


def _frame_from_dataset(ds: PartFeatureDataset) -> pd.DataFrame:
    values = np.concatenate(
        [ds.part_features.reshape(ds.n_samples, -1), ds.nonproto_features], axis=1
    )
    frame = pd.DataFrame(values, columns=_feature_columns(ds.n_parts, ds.feat_dim))
    frame["label"] = ds.labels
    return frame


def _load_csv(path: Path, n_classes: Optional[int]) -> PartFeatureDataset:
    try:
        frame = pd.read_csv(path, dtype=np.float64)
    except (ValueError, pd.errors.ParserError) as e:
        raise DatasetFormatError(f"cannot parse CSV {path}: {e}") from e
    columns = list(frame.columns)
    if not columns or columns[-1] != "label":
        raise DatasetFormatError("CSV header must end with a 'label' column")
    g_cols = [c for c in columns if c.startswith("g_")]
    feat_dim = len(g_cols)
    part_cols = [c for c in columns if c.startswith("part")]
    if feat_dim == 0 or len(part_cols) % feat_dim:
        raise DatasetFormatError("CSV columns do not describe K part blocks of d_f values plus g_0..g_{d_f-1}")
    n_parts = len(part_cols) // feat_dim
    if columns[:-1] != _feature_columns(n_parts, feat_dim):
        raise DatasetFormatError("CSV feature columns out of the expected partP_I, g_I order")

    raw_labels = frame["label"].to_numpy()
    if np.isnan(raw_labels).any() or (raw_labels != np.round(raw_labels)).any():
        row = int(np.flatnonzero(np.isnan(raw_labels) | (raw_labels != np.round(raw_labels)))[0])
        raise ValidationError(f"label in row {row} is not an integer")
    labels = raw_labels.astype(np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if len(labels) else 0

    values = frame[columns[:-1]].to_numpy(dtype=np.float32)
    n = len(frame)
    part_features = values[:, : n_parts * feat_dim].reshape(n, n_parts, feat_dim)
    g = values[:, n_parts * feat_dim:]
    return PartFeatureDataset(part_features, g, labels, n_classes)


def split_kfold(ds: PartFeatureDataset, k: int, seed: int = 0) -> List[np.ndarray]:
    """Stratified k-fold partition of sample indices.

    Each class is shuffled with the seeded generator and dealt round-robin,
    starting where the previous class stopped so fold sizes stay level overall.
    """
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    folds: List[List[int]] = [[] for _ in range(k)]
    offset = 0
    for label in range(ds.n_classes):
        members = ds.class_indices(label)
        if len(members) < k:
            raise StratificationError(f"class {label} has {len(members)} samples, fewer than k={k}")
        for position, index in enumerate(rng.permutation(members)):
            folds[(offset + position) % k].append(int(index))
        offset = (offset + len(members)) % k
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]
