"""Hierarchical merge sweep: concept count, accuracy and F(3) per (level, threshold)."""

import logging

import pandas as pd

from cav import compute_cav_batch
from charts import merge_figure, save_figure
from commands.common import (
    EXIT_OK,
    common_parent,
    emit_table,
    load_inputs,
    parse_float_list,
    parse_int_list,
    resolve_config,
)
from head import train_head
from mining import MergeConfig, merge_centroids, save_book
from xaimetrics import faithfulness

logger = logging.getLogger(__name__)

COLUMNS = ["level", "threshold_pct", "d_c_before", "d_c", "accuracy", "F3"]


def merge_sweep(ds, book, head_cfg, levels, thresholds) -> pd.DataFrame:
    rows = []
    for level in levels:
        for threshold in thresholds:
            merged = merge_centroids(book, MergeConfig(threshold_pct=threshold, level=level))
            cavs, gs = compute_cav_batch(ds, merged)
            head = train_head(cavs, gs, ds.labels, head_cfg, n_classes=ds.n_classes)
            f3 = faithfulness(cavs, gs, ds.labels, head, merged, n_list=[3])[3]
            rows.append({
                "level": level,
                "threshold_pct": threshold,
                "d_c_before": book.d_c,
                "d_c": merged.d_c,
                "accuracy": head.accuracy(cavs, gs, ds.labels),
                "F3": f3,
            })
    return pd.DataFrame(rows, columns=COLUMNS)


def register(subparsers):
    parser = subparsers.add_parser("merge", parents=[common_parent()],
                                   help="Sweep hierarchical merging over levels and thresholds")
    parser.add_argument("--data", required=True)
    parser.add_argument("--book", required=True)
    parser.add_argument("--levels", type=parse_int_list, default=[1, 2, 3])
    parser.add_argument("--thresholds", type=parse_float_list, default=[0.0, 5.0, 10.0],
                        help="Percent of the largest centroid distance")
    parser.add_argument("--book-out", default=None, help="Write the book merged with the configured level/threshold")
    parser.add_argument("--chart", default=None, help="Concept-count chart (.svg or .html)")
    parser.set_defaults(run=run)
    return parser


def run(args) -> int:
    cfg = resolve_config(args)
    ds, book, _ = load_inputs(args, need_head=False)
    table = merge_sweep(ds, book, cfg.head, args.levels, args.thresholds)
    emit_table(table, args.output)
    if args.book_out:
        merged = merge_centroids(book, cfg.merge)
        merged.config_hash = cfg.hash()
        save_book(merged, args.book_out)
    if args.chart:
        save_figure(merge_figure(table), args.chart)
    return EXIT_OK
