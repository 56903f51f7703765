import logging

from cav import cav_table, compute_cav_batch
from commands.common import EXIT_OK, common_parent, emit_table, load_inputs

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("export", parents=[common_parent()], help="Export per-sample CAVs as CSV")
    parser.add_argument("--data", required=True)
    parser.add_argument("--book", required=True)
    parser.set_defaults(run=run)
    return parser


def run(args) -> int:
    ds, book, _ = load_inputs(args, need_head=False)
    cavs, gs = compute_cav_batch(ds, book)
    emit_table(cav_table(cavs, gs, ds.labels), args.output)
    return EXIT_OK
