"""End-to-end run: prototype centers, periodic re-mining with head training, metrics."""

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from app_config import PipelineConfig
from cav import compute_cav_batch
from commands.common import EXIT_OK, StageError, common_parent, require_output, resolve_config
from commands.evaluate import build_report, write_report
from dataset import PartFeatureDataset, load_dataset
from head import SparseHead, save_head, train_head
from mining import ConceptBook, merge_centroids, mine_concepts, save_book
from partproto import PrototypeCenters, fit_prototype_centers, mcc_loss, save_centers
from utils import ConceptMinerError
from xaimetrics import MetricReport

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    centers: PrototypeCenters
    book: ConceptBook
    head: SparseHead
    report: MetricReport


def mining_passes(cfg: PipelineConfig) -> int:
    return max(1, math.ceil(cfg.head_epochs / cfg.remine_interval))


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConceptMinerError as e:
        raise StageError(name, e) from e


def run_pipeline(ds: PartFeatureDataset, cfg: PipelineConfig) -> PipelineResult:
    cfg.validate()
    tag = cfg.hash()
    logger.info("pipeline %s: %d samples, %d classes, %d parts, seed %d",
                tag, ds.n_samples, ds.n_classes, ds.n_parts, cfg.seed)

    logger.info("part stage: fitting prototype centers")
    centers = _stage("centers", fit_prototype_centers, ds, cfg.mcm)
    loss = cfg.mcm.alpha * mcc_loss(ds.part_features, centers, cfg.mcm.m1, cfg.mcm.m2)

    logger.info("concept stage (beta=%g, step %g): %d mining passes",
                cfg.head.beta, cfg.head.step_size, mining_passes(cfg))
    book: Optional[ConceptBook] = None
    head: Optional[SparseHead] = None
    remaining = cfg.head_epochs
    for index in range(mining_passes(cfg)):
        mined = _stage("mining", mine_concepts, ds, cfg.mining)
        if cfg.merge_enabled:
            mined = _stage("merge", merge_centroids, mined, cfg.merge)
        # the head only carries over while the book keeps its concept layout
        warm = head if book is not None and mined.same_as(book) else None
        book = mined
        cavs, gs = compute_cav_batch(ds, book)
        epochs = min(cfg.remine_interval, remaining)
        remaining -= epochs
        head_cfg = replace(cfg.head, epochs=epochs, seed=cfg.head.seed + index)
        head = _stage("head", train_head, cavs, gs, ds.labels, head_cfg, ds.n_classes, warm)
        logger.info("pass %d: d_c=%d, %d head epochs, accuracy %.2f",
                    index, book.d_c, epochs, head.accuracy(cavs, gs, ds.labels))

    book.config_hash = tag
    head.config_hash = tag
    report = _stage("metrics", build_report, ds, book, head, cfg, loss, mining_passes(cfg))
    return PipelineResult(centers, book, head, report)


def write_outputs(result: PipelineResult, cfg: PipelineConfig, out_dir: Path):
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConceptMinerError(f"cannot create output directory {out_dir}: {e}") from e
    save_centers(result.centers, out_dir / "centers.json", cfg.hash())
    save_book(result.book, out_dir / "book.json")
    save_head(result.head, out_dir / "head.json")
    write_report(result.report, out_dir / "report.json", out_dir / "report.csv")
    logger.info("artifacts written to %s", out_dir)


def register(subparsers):
    parser = subparsers.add_parser("pipeline", parents=[common_parent()],
                                   help="Fit centers, mine concepts, train the head and report metrics")
    parser.add_argument("--data", required=True, help="Dataset file (PFD or CSV)")
    parser.set_defaults(run=run)
    return parser


def run(args) -> int:
    out_dir = require_output(args, "output directory")
    cfg = resolve_config(args)
    ds = _stage("load", load_dataset, args.data)
    result = run_pipeline(ds, cfg)
    write_outputs(result, cfg, out_dir)
    return EXIT_OK
