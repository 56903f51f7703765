"""Part-count ablation: keep the first K' part slots, re-mine and retrain."""

import logging

import pandas as pd

from cav import compute_cav_batch
from commands.common import EXIT_OK, common_parent, emit_table, parse_int_list, resolve_config
from dataset import PartFeatureDataset, load_dataset
from head import train_head
from mining import mine_concepts
from utils import ValidationError
from xaimetrics import faithfulness

logger = logging.getLogger(__name__)

F_COUNTS = (1, 2, 3, 4, 5)


def keep_parts(ds: PartFeatureDataset, n_parts: int) -> PartFeatureDataset:
    if not 1 <= n_parts <= ds.n_parts:
        raise ValidationError(f"part count must lie in [1, {ds.n_parts}], got {n_parts}")
    return PartFeatureDataset(
        ds.part_features[:, :n_parts].copy(), ds.nonproto_features.copy(), ds.labels.copy(), ds.n_classes
    )


def part_ablation(ds: PartFeatureDataset, part_counts, mining_cfg, head_cfg) -> pd.DataFrame:
    rows = []
    for n_parts in part_counts:
        reduced = keep_parts(ds, n_parts)
        book = mine_concepts(reduced, mining_cfg)
        cavs, gs = compute_cav_batch(reduced, book)
        head = train_head(cavs, gs, reduced.labels, head_cfg, n_classes=reduced.n_classes)
        row = {"parts": n_parts, "d_c": book.d_c, "accuracy": head.accuracy(cavs, gs, reduced.labels)}
        for n, drop in faithfulness(cavs, gs, reduced.labels, head, book, F_COUNTS).items():
            row[f"F{n}"] = drop
        logger.info("K'=%d: d_c=%d, accuracy %.2f", n_parts, book.d_c, row["accuracy"])
        rows.append(row)
    return pd.DataFrame(rows, columns=["parts", "d_c", "accuracy"] + [f"F{n}" for n in F_COUNTS])


def register(subparsers):
    parser = subparsers.add_parser("ablate", parents=[common_parent()], help="Sweep the number of parts used")
    parser.add_argument("--data", required=True)
    parser.add_argument("--parts", type=parse_int_list, default=None, help="Part counts, default 1..K")
    parser.set_defaults(run=run)
    return parser


def run(args) -> int:
    cfg = resolve_config(args)
    ds = load_dataset(args.data)
    counts = args.parts or list(range(1, ds.n_parts + 1))
    emit_table(part_ablation(ds, counts, cfg.mining, cfg.head), args.output)
    return EXIT_OK
