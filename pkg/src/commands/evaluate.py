import logging
from typing import Optional

from app_config import PipelineConfig
from cav import compute_cav_batch
from commands.common import EXIT_OK, common_parent, load_inputs, require_output, resolve_config
from dataset import PartFeatureDataset
from head import SparseHead
from mining import ConceptBook
from utils import export_data_to_csv, save_json
from xaimetrics import (
    MetricReport,
    confidence_drop,
    consistency,
    faithfulness,
    sparseness,
    stability,
)

logger = logging.getLogger(__name__)

BLOCKS = ("full", "prototypical", "nonprototypical")


def build_report(
    ds: PartFeatureDataset,
    book: ConceptBook,
    head: SparseHead,
    cfg: PipelineConfig,
    mcc_loss: Optional[float] = None,
    mining_passes: int = 0,
) -> MetricReport:
    """Evaluate the full metric suite for one (dataset, book, head) triple"""
    cavs, gs = compute_cav_batch(ds, book)
    n_list = cfg.metrics.faithfulness_n
    accuracy = {block: head.masked(block).accuracy(cavs, gs, ds.labels) for block in BLOCKS}
    intra, inter = consistency(cavs, ds.labels)
    stab = None
    if cfg.metrics.stability_folds >= 2:
        stab = stability(ds, cfg.metrics.stability_folds, cfg.mining, cfg.seed)
    report = MetricReport(
        faithfulness=faithfulness(cavs, gs, ds.labels, head, book, n_list),
        consistency_intra=intra,
        consistency_inter=inter,
        sparseness=sparseness(cavs) if book.d_c >= 2 else 100.0,
        stability=stab,
        confidence_drop=confidence_drop(cavs, gs, head, n_list),
        faithfulness_by_block={
            "prototypical": faithfulness(cavs, gs, ds.labels, head.masked("prototypical"), book, n_list)
        },
        accuracy=accuracy,
        d_c=book.d_c,
        mcc_loss=mcc_loss,
        mining_passes=mining_passes,
        config=cfg.to_dict(),
        config_hash=cfg.hash(),
        seed=cfg.seed,
    )
    logger.info(
        "accuracy %.2f (W1 only %.2f, W2 only %.2f), F(n) %s, intra %.1f, inter %.1f, sparseness %.1f",
        accuracy["full"], accuracy["prototypical"], accuracy["nonprototypical"],
        {n: round(v, 2) for n, v in report.faithfulness.items()}, intra, inter, report.sparseness,
    )
    return report


def write_report(report: MetricReport, json_path, csv_path=None):
    save_json(report.to_dict(), json_path)
    if csv_path is not None:
        export_data_to_csv(report.to_row(), csv_path)


def register(subparsers):
    parser = subparsers.add_parser("eval", parents=[common_parent()], help="Evaluate the metric suite")
    parser.add_argument("--data", required=True)
    parser.add_argument("--book", required=True)
    parser.add_argument("--head", required=True)
    parser.add_argument("--csv", default=None, help="Also write the report as a CSV row")
    parser.add_argument("--force", action="store_true", help="Accept artifacts with different config hashes")
    parser.set_defaults(run=run)
    return parser


def run(args) -> int:
    output = require_output(args, "report JSON")
    cfg = resolve_config(args)
    ds, book, head = load_inputs(args)
    report = build_report(ds, book, head, cfg)
    write_report(report, output, args.csv)
    return EXIT_OK
