"""Sparse linear head over (z, g) trained with an elastic-net penalty on W1."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

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

HEAD_MAGIC = b"PCMH"
MAX_HALVINGS = 30


@dataclass
class HeadTrainConfig:
    lam: float = 0.007
    gamma: float = 0.5
    beta: float = 2.0
    lr: float = 0.25
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0

    def validate(self):
        if self.lam < 0:
            raise ValidationError(f"lambda must be non-negative, got {self.lam}")
        if not 0 <= self.gamma <= 1:
            raise ValidationError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.beta < 0:
            raise ValidationError(f"beta must be non-negative, got {self.beta}")
        if self.lr <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("lr must be positive, epochs >= 0 and batch_size >= 1")

    @property
    def step_size(self) -> float:
        """Initial step of every proximal update: beta scales the base rate"""
        return self.beta * self.lr


@dataclass
class SparseHead:
    W1: np.ndarray
    W2: np.ndarray
    b: np.ndarray
    lam: float = 0.0
    gamma: float = 0.0
    config_hash: str = ""
    history: List[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W1.ndim != 2 or self.W2.ndim != 2 or self.b.ndim != 1:
            raise ValidationError("W1, W2 must be matrices and b a vector")
        if self.W1.shape[1] != self.n_classes or self.W2.shape[1] != self.n_classes:
            raise ValidationError(
                f"weight shapes {self.W1.shape}, {self.W2.shape} disagree with {self.n_classes} classes"
            )
        if not (np.isfinite(self.W1).all() and np.isfinite(self.W2).all() and np.isfinite(self.b).all()):
            raise ValidationError("head weights contain non-finite values")

    @property
    def n_classes(self) -> int:
        return self.b.shape[0]

    @property
    def d_c(self) -> int:
        return self.W1.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.W2.shape[0]

    def logits(self, cavs: np.ndarray, gs: np.ndarray) -> np.ndarray:
        """Batched o = Z W1 + G W2 + b."""
        cavs = np.atleast_2d(np.asarray(cavs, dtype=np.float64))
        gs = np.atleast_2d(np.asarray(gs, dtype=np.float64))
        if cavs.shape[1] != self.d_c or gs.shape[1] != self.feat_dim or len(cavs) != len(gs):
            raise ValidationError(
                f"inputs {cavs.shape}/{gs.shape} do not match head d_c={self.d_c}, d_f={self.feat_dim}"
            )
        return cavs @ self.W1 + gs @ self.W2 + self.b

    def predict(self, cavs: np.ndarray, gs: np.ndarray) -> np.ndarray:
        # np.argmax keeps the lowest index on ties
        return np.argmax(self.logits(cavs, gs), axis=1)

    def accuracy(self, cavs: np.ndarray, gs: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(cavs, gs) == np.asarray(labels)) * 100.0)

    def masked(self, block: str) -> "SparseHead":
        """Copy with one weight block zeroed: 'prototypical' keeps W1 only, 'nonprototypical' keeps W2 only."""
        if block == "prototypical":
            return SparseHead(self.W1.copy(), np.zeros_like(self.W2), self.b.copy(), self.lam, self.gamma, self.config_hash)
        if block == "nonprototypical":
            return SparseHead(np.zeros_like(self.W1), self.W2.copy(), self.b.copy(), self.lam, self.gamma, self.config_hash)
        if block == "full":
            return self
        raise ValidationError(f"unknown weight block {block!r}")

    def to_dict(self):
        return {
            "config_hash": self.config_hash,
            "lambda": self.lam,
            "gamma": self.gamma,
            "W1": self.W1.tolist(),
            "W2": self.W2.tolist(),
            "b": self.b.tolist(),
        }


def head_forward(z, g, head: SparseHead) -> Tuple[np.ndarray, int]:
    """Logits and predicted class of a single sample"""
    z = np.asarray(z, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if z.shape != (head.d_c,) or g.shape != (head.feat_dim,):
        raise ValidationError(f"z {z.shape} / g {g.shape} do not match head d_c={head.d_c}, d_f={head.feat_dim}")
    logits = head.W1.T @ z + head.W2.T @ g + head.b
    return logits, int(np.argmax(logits))


def elastic_net_penalty(W1, lam: float, gamma: float) -> float:
    """lam * ((1 - gamma) / 2 * ||W1||_F^2 + gamma * ||W1||_1)"""
    if lam < 0 or not 0 <= gamma <= 1:
        raise ValidationError("lambda must be >= 0 and gamma in [0, 1]")
    W1 = np.asarray(W1, dtype=np.float64)
    return float(lam * ((1 - gamma) * 0.5 * np.sum(W1 ** 2) + gamma * np.sum(np.abs(W1))))


def soft_threshold(values: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(values) * np.maximum(np.abs(values) - tau, 0.0)


def concept_contributions(z, head: SparseHead, class_index: int) -> np.ndarray:
    """Per-concept evidence z_k * W1[k, c] for one class."""
    if not 0 <= class_index < head.n_classes:
        raise IndexError(f"class {class_index} outside [0, {head.n_classes})")
    return np.asarray(z, dtype=np.float64) * head.W1[:, class_index]


def smooth_objective(W1, W2, b, cavs, gs, onehot, lam, gamma):
    """Mean cross-entropy + the L2 part of the penalty, with gradients.

    Returns
    -------
    (value, (dW1, dW2, db))
    """
    logits = cavs @ W1 + gs @ W2 + b
    n = len(cavs)
    ce = -float(np.sum(onehot * log_softmax(logits, axis=1))) / n
    residual = (softmax(logits, axis=1) - onehot) / n
    l2 = lam * (1 - gamma)
    value = ce + 0.5 * l2 * float(np.sum(W1 ** 2))
    return value, (cavs.T @ residual + l2 * W1, gs.T @ residual, residual.sum(axis=0))


def head_objective(head: SparseHead, cavs, gs, labels, lam: float, gamma: float) -> float:
    onehot = np.eye(head.n_classes)[np.asarray(labels)]
    value, _ = smooth_objective(head.W1, head.W2, head.b, cavs, gs, onehot, lam, gamma)
    return value + lam * gamma * float(np.sum(np.abs(head.W1)))


def train_head(
    cavs,
    gs,
    labels,
    cfg: HeadTrainConfig,
    n_classes: Optional[int] = None,
    init: Optional[SparseHead] = None,
) -> SparseHead:
    """Proximal mini-batch gradient descent on cross-entropy + lam * R(W1).

    A step is accepted only if the full objective does not increase; otherwise
    the step size is halved, and after MAX_HALVINGS failures the step is
    skipped. Every update starts from `cfg.step_size` (beta * lr); beta = 0
    leaves the head where it started. The objective after each epoch is kept
    in `head.history`.
    """
    cfg.validate()
    cavs = np.asarray(cavs, dtype=np.float64)
    gs = np.asarray(gs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    L = int(n_classes) if n_classes is not None else int(labels.max()) + 1
    if cavs.ndim != 2 or gs.ndim != 2 or len(cavs) != n or len(gs) != n:
        raise ValidationError(f"shapes {cavs.shape}, {gs.shape}, {labels.shape} are inconsistent")
    if n < L:
        raise ValidationError(f"need at least {L} samples to train a {L}-class head, got {n}")
    if labels.min() < 0 or labels.max() >= L:
        raise ValidationError("labels outside [0, n_classes)")

    if init is not None and init.W1.shape == (cavs.shape[1], L) and init.W2.shape == (gs.shape[1], L):
        W1, W2, b = init.W1.copy(), init.W2.copy(), init.b.copy()
        history = list(init.history)
    else:
        W1, W2, b = np.zeros((cavs.shape[1], L)), np.zeros((gs.shape[1], L)), np.zeros(L)
        history = []
    onehot = np.eye(L)[labels]
    l1 = cfg.lam * cfg.gamma

    def full_objective(w1, w2, bias):
        value, _ = smooth_objective(w1, w2, bias, cavs, gs, onehot, cfg.lam, cfg.gamma)
        return value + l1 * float(np.sum(np.abs(w1)))

    current = full_objective(W1, W2, b)
    if not np.isfinite(current):
        raise DivergenceError("non-finite initial head objective")
    logger.debug("head step %g (beta %g, lr %g)", cfg.step_size, cfg.beta, cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            _, (g1, g2, gb) = smooth_objective(W1, W2, b, cavs[rows], gs[rows], onehot[rows], cfg.lam, cfg.gamma)
            step = cfg.step_size
            for _ in range(MAX_HALVINGS):
                cand1 = soft_threshold(W1 - step * g1, step * l1)
                cand2, candb = W2 - step * g2, b - step * gb
                value = full_objective(cand1, cand2, candb)
                if value <= current:
                    W1, W2, b, current = cand1, cand2, candb, value
                    break
                step *= 0.5
            else:
                logger.debug("epoch %d: step skipped after %d halvings", epoch, MAX_HALVINGS)
        if not np.isfinite(current):
            raise DivergenceError(f"non-finite head objective in epoch {epoch} (step={cfg.step_size})")
        history.append(current)
        logger.debug("epoch %d objective %.6f", epoch, current)

    logger.info("head trained: objective %.6f, %d/%d W1 entries zero",
                current, int(np.sum(W1 == 0)), W1.size)
    head = SparseHead(W1, W2, b, cfg.lam, cfg.gamma)
    head.history = history
    return head


def save_head(head: SparseHead, path):
    """Write a head as JSON or, for *.pcmh paths, as PCMH binary"""
    path = str(path)
    if not path.endswith(".pcmh"):
        save_json(head.to_dict(), path)
        return
    header = pack_artifact_header(HEAD_MAGIC, 1, head.config_hash, (head.d_c, head.feat_dim, head.n_classes))
    payload = np.concatenate([[head.lam, head.gamma], head.W1.ravel(), head.W2.ravel(), head.b])
    write_bytes(path, [header, payload.astype("<f8").tobytes()])


def load_head(path) -> SparseHead:
    path = str(path)
    if not path.endswith(".pcmh"):
        data = load_json(path)
        if data is None:
            raise ConceptMinerError(f"head file {path} does not exist")
        L = len(data["b"])
        return SparseHead(
            np.array(data["W1"], dtype=np.float64).reshape(-1, L),
            np.array(data["W2"], dtype=np.float64).reshape(-1, L),
            np.array(data["b"], dtype=np.float64),
            float(data.get("lambda", 0.0)),
            float(data.get("gamma", 0.0)),
            data.get("config_hash", ""),
        )
    blob = read_bytes(path)
    _, tag, (d_c, d_f, L), offset = unpack_artifact_header(blob, HEAD_MAGIC, 3)
    values, _ = read_f8(blob, offset, 2 + d_c * L + d_f * L + L)
    lam, gamma = values[:2]
    W1 = values[2:2 + d_c * L].reshape(d_c, L)
    W2 = values[2 + d_c * L:2 + d_c * L + d_f * L].reshape(d_f, L)
    return SparseHead(W1, W2, values[-L:], float(lam), float(gamma), tag)
