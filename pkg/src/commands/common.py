"""Shared argparse parents, artifact loading and compatibility checks for subcommands."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Tuple

from app_config import PipelineConfig, apply_overrides, load_config
from dataset import PartFeatureDataset, load_dataset
from head import SparseHead, load_head
from mining import ConceptBook, load_book
from utils import ConceptMinerError, ValidationError, export_data_to_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(ConceptMinerError):
    """Raised for flag combinations argparse cannot reject on its own."""


class CompatibilityError(ConceptMinerError):
    """Raised when artifacts were not produced for each other."""


class StageError(ConceptMinerError):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def common_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, default=None, help="Seed for every stochastic stage")
    parent.add_argument("--config", default=None, help="YAML pipeline config")
    parent.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config field, e.g. head.lam=0.01 (repeatable)")
    parent.add_argument("-o", "--output", default=None, help="Output path")
    parent.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    return parent


def resolve_config(args) -> PipelineConfig:
    """Config file, then `--set` overrides, then `--seed`; a bad config is a usage error"""
    try:
        cfg = apply_overrides(load_config(args.config), args.overrides)
        if args.seed is not None:
            cfg.set_seed(args.seed)
    except ValidationError as e:
        raise UsageError(str(e)) from e
    return cfg


def require_output(args, what: str) -> Path:
    if not args.output:
        raise UsageError(f"-o/--output is required ({what})")
    return Path(args.output)


def load_inputs(args, need_head: bool = True) -> Tuple[PartFeatureDataset, ConceptBook, Optional[SparseHead]]:
    ds = load_dataset(args.data)
    book = load_book(args.book)
    head = load_head(args.head) if need_head else None
    if book.feat_dim != ds.feat_dim:
        raise CompatibilityError(f"concept book d_f={book.feat_dim} does not match dataset d_f={ds.feat_dim}")
    if head is not None:
        check_compatible(book, head, force=getattr(args, "force", False))
        if head.n_classes != ds.n_classes:
            raise CompatibilityError(f"head has {head.n_classes} classes, dataset has {ds.n_classes}")
    return ds, book, head


def check_compatible(book: ConceptBook, head: SparseHead, force: bool = False):
    if book.d_c != head.d_c:
        raise CompatibilityError(f"concept book has d_c={book.d_c} but head expects d_c={head.d_c}")
    if book.feat_dim != head.feat_dim:
        raise CompatibilityError(f"concept book d_f={book.feat_dim} but head expects d_f={head.feat_dim}")
    if book.config_hash and head.config_hash and book.config_hash != head.config_hash:
        if not force:
            raise CompatibilityError(
                f"config hash mismatch: book {book.config_hash} vs head {head.config_hash} (use --force)"
            )
        logger.warning("config hash mismatch ignored: book %s vs head %s", book.config_hash, head.config_hash)


def parse_float_list(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def parse_int_list(text: str):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def emit_table(frame, output: Optional[str] = None):
    """CSV to the output file when given, otherwise to stdout"""
    text = export_data_to_csv(frame, output)
    if output is None:
        sys.stdout.write(text)
    else:
        logger.info("table written to %s", output)
    return text
