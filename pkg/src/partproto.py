"""Prototype centers learned with the marginal cluster-center loss."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dataset import PartFeatureDataset
from utils import (
    ConceptMinerError,
    DivergenceError,
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

CENTERS_MAGIC = b"PCMC"


class EmptyBatchError(ValidationError):
    """Raised when a loss is requested over zero samples."""


@dataclass
class McmConfig:
    m1: float = 0.3
    m2: float = 1.5
    alpha: float = 1.5
    lr: float = 0.05
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    jitter: float = 1e-3

    def validate(self):
        if self.m1 < 0 or self.m2 < 0 or self.alpha < 0:
            raise ValidationError("m1, m2 and alpha must be non-negative")
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("epochs must be >= 0 and batch_size >= 1")
        if self.m2 <= self.m1:
            logger.warning("m2=%.3g <= m1=%.3g: prototype margins are in the collapsed regime", self.m2, self.m1)


@dataclass
class PrototypeCenters:
    centers: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.centers.ndim != 2:
            raise ValidationError(f"centers must be [K x d_f], got shape {self.centers.shape}")
        if not np.isfinite(self.centers).all():
            raise ValidationError("centers contain non-finite values")

    @property
    def n_parts(self) -> int:
        return self.centers.shape[0]


def _check_shapes(batch: np.ndarray, centers: PrototypeCenters) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3:
        raise ValidationError(f"batch must be [B x K x d_f], got shape {batch.shape}")
    if batch.shape[0] == 0:
        raise EmptyBatchError("mcc loss over an empty batch")
    if batch.shape[1:] != centers.centers.shape:
        raise ValidationError(f"batch parts {batch.shape[1:]} do not match centers {centers.centers.shape}")
    return batch


def _center_distances(c: np.ndarray):
    diff = c[:, None, :] - c[None, :, :]
    return diff, np.linalg.norm(diff, axis=-1)


def mcc_loss(batch, centers: PrototypeCenters, m1: float, m2: float) -> float:
    """Marginal cluster-center loss, averaged over the batch.

    mean_b sum_p ( [|f_p - c_p| - m1]+ + 1/K sum_{q != p} [m2 - |c_p - c_q|]+ )
    """
    batch = _check_shapes(batch, centers)
    c = centers.centers
    K = c.shape[0]
    intra = np.maximum(np.linalg.norm(batch - c[None], axis=-1) - m1, 0.0)
    _, dist = _center_distances(c)
    pair = np.maximum(m2 - dist, 0.0)
    np.fill_diagonal(pair, 0.0)
    return float(intra.sum(axis=1).mean() + pair.sum() / K)


def mcc_gradients(batch, centers: PrototypeCenters, m1: float, m2: float) -> np.ndarray:
    """Subgradient of mcc_loss with respect to the centers.

    Hinges exactly at their kink count as inactive; coincident centers use a
    zero unit direction.
    """
    batch = _check_shapes(batch, centers)
    c = centers.centers
    B, K = batch.shape[0], c.shape[0]

    offset = batch - c[None]
    dist = np.linalg.norm(offset, axis=-1)
    active = dist > m1
    unit = offset / np.where(dist > 0, dist, 1.0)[..., None]
    grad = -(unit * active[..., None]).sum(axis=0) / B

    diff, cdist = _center_distances(c)
    pair_active = cdist < m2
    np.fill_diagonal(pair_active, False)
    direction = diff / np.where(cdist > 0, cdist, 1.0)[..., None]
    # each unordered pair appears twice in the double sum
    grad -= (2.0 / K) * (direction * pair_active[..., None]).sum(axis=1)
    return grad


def fit_prototype_centers(
    ds: PartFeatureDataset, cfg: McmConfig, init: Optional[np.ndarray] = None
) -> PrototypeCenters:
    """Mini-batch gradient descent on the MCC loss.

    Centers start at the per-part feature means plus seeded jitter unless
    `init` is given. The returned centers have the lowest full-data loss seen.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    features = ds.part_features.astype(np.float64)
    if init is None:
        c = features.mean(axis=0) + cfg.jitter * rng.standard_normal((ds.n_parts, ds.feat_dim))
    else:
        c = np.array(init, dtype=np.float64)
    centers = PrototypeCenters(c)

    best_loss = mcc_loss(features, centers, cfg.m1, cfg.m2)
    initial_loss = best_loss
    best = centers.centers.copy()
    logger.info("fitting %d prototype centers, initial loss %.6f", ds.n_parts, cfg.alpha * initial_loss)

    for epoch in range(cfg.epochs):
        order = rng.permutation(ds.n_samples)
        for start in range(0, ds.n_samples, cfg.batch_size):
            batch = features[order[start:start + cfg.batch_size]]
            grad = mcc_gradients(batch, PrototypeCenters(c), cfg.m1, cfg.m2)
            c = c - cfg.lr * grad
            if not np.isfinite(c).all():
                raise DivergenceError(f"prototype centers diverged in epoch {epoch} (lr={cfg.lr})")
        loss = mcc_loss(features, PrototypeCenters(c), cfg.m1, cfg.m2)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite MCC loss in epoch {epoch} (lr={cfg.lr})")
        logger.debug("epoch %d mcc loss %.6f", epoch, cfg.alpha * loss)
        if loss < best_loss:
            best_loss, best = loss, c.copy()

    logger.info("prototype centers fitted, loss %.6f -> %.6f", cfg.alpha * initial_loss, cfg.alpha * best_loss)
    return PrototypeCenters(best)


def save_centers(centers: PrototypeCenters, path, cfg_hash: str = ""):
    """Write centers as JSON or, for *.pcmc paths, as PCMC binary"""
    path = str(path)
    if path.endswith(".pcmc"):
        K, d = centers.centers.shape
        header = pack_artifact_header(CENTERS_MAGIC, 1, cfg_hash, (K, d))
        write_bytes(path, [header, centers.centers.astype("<f8").tobytes()])
        return
    save_json({"config_hash": cfg_hash, "centers": centers.centers.tolist()}, path)


def load_centers(path):
    """Read centers; returns (PrototypeCenters, config hash)"""
    path = str(path)
    if path.endswith(".pcmc"):
        blob = read_bytes(path)
        _, tag, (K, d), offset = unpack_artifact_header(blob, CENTERS_MAGIC, 2)
        values, _ = read_f8(blob, offset, K * d)
        return PrototypeCenters(values.reshape(K, d)), tag
    data = load_json(path)
    if data is None:
        raise ConceptMinerError(f"centers file {path} does not exist")
    return PrototypeCenters(np.array(data["centers"], dtype=np.float64)), data.get("config_hash", "")
