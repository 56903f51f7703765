import logging

from cav import compute_cav_batch
from commands.common import EXIT_OK, common_parent, load_inputs, require_output, resolve_config
from head import save_head, train_head

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("train", parents=[common_parent()], help="Train the sparse head on a concept book")
    parser.add_argument("--data", required=True)
    parser.add_argument("--book", required=True)
    parser.set_defaults(run=run)
    return parser


def run(args) -> int:
    output = require_output(args, "head file (.json or .pcmh)")
    cfg = resolve_config(args)
    ds, book, _ = load_inputs(args, need_head=False)
    tag = cfg.hash()
    if book.config_hash and book.config_hash != tag:
        logger.warning("concept book was mined under config %s, training under %s", book.config_hash, tag)
    cavs, gs = compute_cav_batch(ds, book)
    head = train_head(cavs, gs, ds.labels, cfg.head, n_classes=ds.n_classes)
    head.config_hash = tag
    save_head(head, output)
    logger.info("head trained to %.2f%% accuracy, written to %s", head.accuracy(cavs, gs, ds.labels), output)
    return EXIT_OK
